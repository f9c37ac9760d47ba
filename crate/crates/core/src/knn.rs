//! k-nearest-neighbor classification with a range-normalized mixed distance.
//!
//! Numeric features contribute `|norm(a) - norm(b)|` with min-max ranges
//! taken from the training set; location contributes 0 on an exact text
//! match and 1 otherwise. The distance is the weight-averaged contribution,
//! so it always lies in `[0, 1]`.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{fit_normalizer, Feature, FeatureError, Features, LabeledInstance, Normalizer, PriceClass};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KnnError {
    #[error("need at least k = {k} training instances, got {got}")]
    InsufficientData { k: usize, got: usize },
    #[error("invalid k-NN parameters: {0}")]
    InvalidParams(String),
    #[error("malformed k-NN model: {0}")]
    Malformed(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Per-feature distance weights, in [`Feature::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<Feature, f64>", into = "BTreeMap<Feature, f64>")]
pub struct FeatureWeights(pub [f64; 5]);

impl Default for FeatureWeights {
    fn default() -> Self {
        FeatureWeights([1.0; 5])
    }
}

impl FeatureWeights {
    pub fn get(&self, feature: Feature) -> f64 {
        self.0[feature.index()]
    }

    pub fn set(&mut self, feature: Feature, weight: f64) {
        self.0[feature.index()] = weight;
    }
}

impl From<FeatureWeights> for BTreeMap<Feature, f64> {
    fn from(w: FeatureWeights) -> Self {
        Feature::ALL.into_iter().map(|f| (f, w.get(f))).collect()
    }
}

impl TryFrom<BTreeMap<Feature, f64>> for FeatureWeights {
    type Error = String;

    fn try_from(map: BTreeMap<Feature, f64>) -> Result<Self, Self::Error> {
        let mut w = FeatureWeights([0.0; 5]);
        for f in Feature::ALL {
            let v = map.get(&f).ok_or_else(|| format!("missing weight for `{f}`"))?;
            w.set(f, *v);
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k: usize,
    pub weights: FeatureWeights,
    pub use_location: bool,
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams {
            k: 5,
            weights: FeatureWeights::default(),
            use_location: true,
        }
    }
}

impl KnnParams {
    /// Weight actually applied to a feature; location is zeroed when disabled.
    pub fn effective_weight(&self, feature: Feature) -> f64 {
        if feature == Feature::Location && !self.use_location {
            0.0
        } else {
            self.weights.get(feature)
        }
    }

    pub fn enabled_features(&self) -> impl Iterator<Item = Feature> + '_ {
        Feature::ALL
            .into_iter()
            .filter(move |&f| self.effective_weight(f) > 0.0)
    }

    pub fn validate(&self) -> Result<(), KnnError> {
        if self.k == 0 {
            return Err(KnnError::InvalidParams("k must be at least 1".into()));
        }
        if let Some(f) = Feature::ALL
            .into_iter()
            .find(|&f| !(self.weights.get(f).is_finite() && self.weights.get(f) >= 0.0))
        {
            return Err(KnnError::InvalidParams(format!(
                "weight for `{f}` must be a non-negative number"
            )));
        }
        if self.enabled_features().next().is_none() {
            return Err(KnnError::InvalidParams(
                "at least one feature needs a positive weight".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    instances: Vec<LabeledInstance>,
    normalizer: Normalizer,
    params: KnnParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Position in the stored training list.
    pub index: usize,
    pub distance: f64,
    pub label: PriceClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnPrediction {
    pub class: PriceClass,
    /// Ascending by `(distance, index)`.
    pub neighbors: Vec<Neighbor>,
}

/// Mixed-type distance between two instances under a normalizer and weights.
pub fn distance<A, B>(a: &A, b: &B, normalizer: &Normalizer, params: &KnnParams) -> Result<f64, FeatureError>
where
    A: Features + ?Sized,
    B: Features + ?Sized,
{
    let mut weighted = 0.0;
    let mut total = 0.0;
    for feature in Feature::ALL {
        let w = params.effective_weight(feature);
        if w <= 0.0 {
            continue;
        }
        let d = if feature.is_numeric() {
            let range = normalizer.range(feature).expect("numeric feature");
            let xa = crate::features::normalize(a.require_numeric(feature)?, range);
            let xb = crate::features::normalize(b.require_numeric(feature)?, range);
            (xa - xb).abs()
        } else if a.require_location()? == b.require_location()? {
            0.0
        } else {
            1.0
        };
        weighted += w * d;
        total += w;
    }
    Ok(weighted / total)
}

fn by_distance_then_index(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then(a.index.cmp(&b.index))
}

/// Majority vote; ties go to the smallest summed distance, then the lower class.
pub(crate) fn vote(neighbors: &[Neighbor]) -> PriceClass {
    let mut count = [0usize; PriceClass::COUNT];
    let mut dist = [0.0f64; PriceClass::COUNT];
    for n in neighbors {
        count[n.label.index()] += 1;
        dist[n.label.index()] += n.distance;
    }
    let mut best = 0;
    for c in 1..PriceClass::COUNT {
        let better = count[c] > count[best] || (count[c] == count[best] && dist[c] < dist[best]);
        if better {
            best = c;
        }
    }
    PriceClass::ALL[best]
}

/// Stores the training set and fits the normalizer on it.
pub fn fit_knn(train: &[LabeledInstance], params: &KnnParams) -> Result<KnnModel, KnnError> {
    params.validate()?;
    if train.len() < params.k {
        return Err(KnnError::InsufficientData {
            k: params.k,
            got: train.len(),
        });
    }
    Ok(KnnModel {
        instances: train.to_vec(),
        normalizer: fit_normalizer(train)?,
        params: *params,
    })
}

impl KnnModel {
    pub fn instances(&self) -> &[LabeledInstance] {
        &self.instances
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn params(&self) -> &KnnParams {
        &self.params
    }

    pub fn distance<A: Features + ?Sized, B: Features + ?Sized>(&self, a: &A, b: &B) -> Result<f64, KnnError> {
        Ok(distance(a, b, &self.normalizer, &self.params)?)
    }

    /// Checks the invariants a deserialized model must satisfy.
    pub fn check(&self) -> Result<(), KnnError> {
        self.params.validate()?;
        if self.instances.len() < self.params.k {
            return Err(KnnError::Malformed(format!(
                "k = {} exceeds {} stored instances",
                self.params.k,
                self.instances.len()
            )));
        }
        if fit_normalizer(&self.instances)? != self.normalizer {
            return Err(KnnError::Malformed(
                "normalizer does not match the stored instances".into(),
            ));
        }
        Ok(())
    }

    /// Classifies `x` from its `k` nearest stored instances. Equal distances
    /// at the cut-off are resolved in favor of the lower stored index.
    pub fn predict<F: Features + ?Sized>(&self, x: &F) -> Result<KnnPrediction, KnnError> {
        let mut all = Vec::with_capacity(self.instances.len());
        for (index, inst) in self.instances.iter().enumerate() {
            all.push(Neighbor {
                index,
                distance: distance(x, inst, &self.normalizer, &self.params)?,
                label: inst.label,
            });
        }
        let k = self.params.k.min(all.len());
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, by_distance_then_index);
            all.truncate(k);
        }
        all.sort_by(by_distance_then_index);
        Ok(KnnPrediction {
            class: vote(&all),
            neighbors: all,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;
    use proptest::prelude::*;

    fn inst(building: f64, land: f64, location: &str, label: PriceClass) -> LabeledInstance {
        LabeledInstance {
            location: location.into(),
            building_size: building,
            land_size: land,
            bedroom: 2,
            bathroom: 1,
            label,
        }
    }

    fn building_only(k: usize) -> KnnParams {
        let mut weights = FeatureWeights([0.0; 5]);
        weights.set(Feature::BuildingSize, 1.0);
        KnnParams {
            k,
            weights,
            use_location: false,
        }
    }

    #[test]
    fn distance_examples() {
        let train = vec![
            LabeledInstance { bedroom: 1, bathroom: 1, ..inst(0.0, 0.0, "a", PriceClass::A) },
            LabeledInstance { bedroom: 5, bathroom: 4, ..inst(10.0, 20.0, "b", PriceClass::B) },
        ];
        let model = fit_knn(&train, &KnnParams { k: 1, ..KnnParams::default() }).unwrap();
        assert_eq!(model.distance(&train[0], &train[0]).unwrap(), 0.0);
        assert_eq!(model.distance(&train[0], &train[1]).unwrap(), 1.0);

        // building normalized 0.3 vs 0.5, same location, equal weights on two features
        let mut weights = FeatureWeights([0.0; 5]);
        weights.set(Feature::BuildingSize, 1.0);
        weights.set(Feature::Location, 1.0);
        let params = KnnParams { k: 1, weights, use_location: true };
        let model = fit_knn(&train, &params).unwrap();
        let a = FeatureVector { building_size: Some(3.0), location: Some("a".into()), ..Default::default() };
        let b = FeatureVector { building_size: Some(5.0), location: Some("a".into()), ..Default::default() };
        assert!((model.distance(&a, &b).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn missing_enabled_feature_is_an_error() {
        let train = vec![inst(1.0, 1.0, "a", PriceClass::A)];
        let model = fit_knn(&train, &KnnParams { k: 1, ..KnnParams::default() }).unwrap();
        let q = FeatureVector { building_size: Some(1.0), ..Default::default() };
        assert_eq!(
            model.predict(&q).unwrap_err(),
            KnnError::Feature(FeatureError::MissingFeature(Feature::LandSize))
        );
        // disabled features may be absent
        let model = fit_knn(&train, &building_only(1)).unwrap();
        assert_eq!(model.predict(&q).unwrap().class, PriceClass::A);
    }

    #[test]
    fn fit_examples() {
        let five: Vec<_> = (0..5).map(|i| inst(f64::from(i), 1.0, "a", PriceClass::A)).collect();
        let model = fit_knn(&five, &KnnParams::default()).unwrap();
        assert_eq!(model.instances(), five.as_slice());
        assert_eq!(
            fit_knn(&five[..4], &KnnParams::default()),
            Err(KnnError::InsufficientData { k: 5, got: 4 })
        );
    }

    #[test]
    fn invalid_params() {
        let data = vec![inst(1.0, 1.0, "a", PriceClass::A)];
        let zero_k = KnnParams { k: 0, ..KnnParams::default() };
        assert!(matches!(fit_knn(&data, &zero_k), Err(KnnError::InvalidParams(_))));
        let mut only_loc = FeatureWeights([0.0; 5]);
        only_loc.set(Feature::Location, 1.0);
        let off = KnnParams { k: 1, weights: only_loc, use_location: false };
        assert!(matches!(fit_knn(&data, &off), Err(KnnError::InvalidParams(_))));
        let mut neg = FeatureWeights::default();
        neg.set(Feature::Bedroom, -1.0);
        let neg = KnnParams { k: 1, weights: neg, use_location: true };
        assert!(matches!(fit_knn(&data, &neg), Err(KnnError::InvalidParams(_))));
    }

    #[test]
    fn self_query_with_k1() {
        let train = vec![
            inst(36.0, 72.0, "a", PriceClass::A),
            inst(100.0, 136.0, "b", PriceClass::B),
            inst(258.0, 280.0, "c", PriceClass::C),
        ];
        let model = fit_knn(&train, &KnnParams { k: 1, ..KnnParams::default() }).unwrap();
        for x in &train {
            let p = model.predict(x).unwrap();
            assert_eq!(p.class, x.label);
            assert_eq!(p.neighbors[0].distance, 0.0);
        }
    }

    #[test]
    fn majority_vote_example() {
        // normalized building distances 0.1:A, 0.2:A, 0.3:B, 0.05:B from a query at 0
        let train = vec![
            inst(10.0, 1.0, "a", PriceClass::A),
            inst(20.0, 1.0, "a", PriceClass::A),
            inst(30.0, 1.0, "a", PriceClass::B),
            inst(5.0, 1.0, "a", PriceClass::B),
            inst(100.0, 1.0, "a", PriceClass::C),
        ];
        let model = fit_knn(&train, &building_only(3)).unwrap();
        let q = FeatureVector { building_size: Some(0.0), ..Default::default() };
        let p = model.predict(&q).unwrap();
        let idx: Vec<usize> = p.neighbors.iter().map(|n| n.index).collect();
        assert_eq!(idx, vec![3, 0, 1]);
        assert_eq!(p.class, PriceClass::A);
    }

    #[test]
    fn kth_distance_tie_prefers_lower_index() {
        let train = vec![
            inst(0.0, 1.0, "a", PriceClass::A),
            inst(2.0, 1.0, "a", PriceClass::B),
            inst(2.0, 1.0, "a", PriceClass::C),
            inst(10.0, 1.0, "a", PriceClass::C),
        ];
        let model = fit_knn(&train, &building_only(2)).unwrap();
        let q = FeatureVector { building_size: Some(1.0), ..Default::default() };
        let p = model.predict(&q).unwrap();
        let idx: Vec<usize> = p.neighbors.iter().map(|n| n.index).collect();
        // indices 0, 1, 2 all sit at distance 0.1; 0 and 1 win
        assert_eq!(idx, vec![0, 1]);
        // vote tie 1-1 with equal summed distance -> lower class
        assert_eq!(p.class, PriceClass::A);
    }

    #[test]
    fn vote_tie_prefers_closer_class() {
        let n = |index, distance, label| Neighbor { index, distance, label };
        let neighbors = [
            n(0, 0.1, PriceClass::C),
            n(1, 0.2, PriceClass::A),
            n(2, 0.3, PriceClass::C),
            n(3, 0.3, PriceClass::A),
        ];
        assert_eq!(vote(&neighbors), PriceClass::C);
    }

    #[test]
    fn model_serialization_round_trips() {
        let train: Vec<_> = (0..12)
            .map(|i| inst(30.0 + f64::from(i) * 1.1, 40.0 + f64::from(i) / 3.0, ["a", "b"][i as usize % 2], PriceClass::ALL[i as usize % 3]))
            .collect();
        let model = fit_knn(&train, &KnnParams::default()).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: KnnModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, model);
        back.check().unwrap();
    }

    fn arb_instance() -> impl Strategy<Value = LabeledInstance> {
        (30f64..400.0, 40f64..500.0, 1u32..6, 1u32..4, prop::sample::select(vec!["a", "b", "c"]), 0usize..3)
            .prop_map(|(b, l, bed, bath, loc, c)| LabeledInstance {
                location: loc.into(),
                building_size: b,
                land_size: l,
                bedroom: bed,
                bathroom: bath,
                label: PriceClass::ALL[c],
            })
    }

    proptest! {
        #[test]
        fn distance_axioms(train in prop::collection::vec(arb_instance(), 1..20), a in arb_instance(), b in arb_instance()) {
            let model = fit_knn(&train, &KnnParams { k: 1, ..KnnParams::default() }).unwrap();
            let ab = model.distance(&a, &b).unwrap();
            let ba = model.distance(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(model.distance(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn prediction_invariant_under_weight_scaling(
            train in prop::collection::vec(arb_instance(), 5..30),
            q in arb_instance(),
            raw in prop::array::uniform5(0.0f64..4.0),
            exp in -8i32..8,
        ) {
            let mut weights = FeatureWeights(raw);
            weights.set(Feature::BuildingSize, raw[0] + 0.5);
            let params = KnnParams { k: 3, weights, use_location: true };
            let scale = 2f64.powi(exp);
            let scaled = KnnParams { weights: FeatureWeights(weights.0.map(|w| w * scale)), ..params };
            let a = fit_knn(&train, &params).unwrap().predict(&q).unwrap();
            let b = fit_knn(&train, &scaled).unwrap().predict(&q).unwrap();
            prop_assert_eq!(a.class, b.class);
            let ia: Vec<usize> = a.neighbors.iter().map(|n| n.index).collect();
            let ib: Vec<usize> = b.neighbors.iter().map(|n| n.index).collect();
            prop_assert_eq!(ia, ib);
        }
    }
}

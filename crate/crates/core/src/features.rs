//! Price labels, size bins, and feature access for the classifiers.
//!
//! Prices are discretized into three ordered classes using a [`BinTable`]. The
//! middle class is half-open: `lower <= price < upper`. Building and land
//! sizes can be binned with the same rule through [`size_bin`], but the
//! classifiers consume the continuous sizes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Dataset, ListingRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("instance is missing feature `{0}`")]
    MissingFeature(Feature),
    #[error("invalid bin table: {0}")]
    InvalidBins(String),
    #[error("unknown price class `{0}`")]
    UnknownClass(String),
}

/// Three-way price label. The derived ordering is `A < B < C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PriceClass {
    #[serde(rename = "Price_A")]
    A,
    #[serde(rename = "Price_B")]
    B,
    #[serde(rename = "Price_C")]
    C,
}

impl PriceClass {
    pub const ALL: [PriceClass; 3] = [PriceClass::A, PriceClass::B, PriceClass::C];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Option<PriceClass> {
        Self::ALL.get(idx).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PriceClass::A => "Price_A",
            PriceClass::B => "Price_B",
            PriceClass::C => "Price_C",
        }
    }
}

impl fmt::Display for PriceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PriceClass {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "Price_A" | "A" => Ok(PriceClass::A),
            "Price_B" | "B" => Ok(PriceClass::B),
            "Price_C" | "C" => Ok(PriceClass::C),
            other => Err(FeatureError::UnknownClass(other.to_string())),
        }
    }
}

/// Bin of a size variable under the same three-way rule as prices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SizeBin {
    A,
    B,
    C,
}

impl SizeBin {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeVariable {
    Land,
    Building,
}

/// Interval boundaries for price, land size and building size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinTable {
    pub price_lower: u64,
    pub price_upper: u64,
    pub land_lower: f64,
    pub land_upper: f64,
    pub building_lower: f64,
    pub building_upper: f64,
}

impl Default for BinTable {
    fn default() -> Self {
        BinTable {
            price_lower: 603_500_000,
            price_upper: 1_487_500_000,
            land_lower: 107.0,
            land_upper: 175.5,
            building_lower: 89.0,
            building_upper: 171.0,
        }
    }
}

impl BinTable {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.price_lower >= self.price_upper {
            return Err(FeatureError::InvalidBins(format!(
                "price_lower {} must be below price_upper {}",
                self.price_lower, self.price_upper
            )));
        }
        for (name, lo, hi) in [
            ("land", self.land_lower, self.land_upper),
            ("building", self.building_lower, self.building_upper),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(FeatureError::InvalidBins(format!(
                    "{name}_lower {lo} must be below {name}_upper {hi}"
                )));
            }
        }
        Ok(())
    }

    /// Representative price interval `[lo, hi)` of a class. The top class is
    /// open-ended; `ceiling` caps it.
    pub fn price_interval(&self, class: PriceClass, ceiling: u64) -> (u64, u64) {
        match class {
            PriceClass::A => (0, self.price_lower),
            PriceClass::B => (self.price_lower, self.price_upper),
            PriceClass::C => (self.price_upper, ceiling.max(self.price_upper + 1)),
        }
    }
}

/// Maps a price onto its class. `B` covers `[lower, upper)`.
pub fn price_class(price: u64, bins: &BinTable) -> PriceClass {
    if price < bins.price_lower {
        PriceClass::A
    } else if price < bins.price_upper {
        PriceClass::B
    } else {
        PriceClass::C
    }
}

pub fn size_bin(value: f64, variable: SizeVariable, bins: &BinTable) -> SizeBin {
    let (lo, hi) = match variable {
        SizeVariable::Land => (bins.land_lower, bins.land_upper),
        SizeVariable::Building => (bins.building_lower, bins.building_upper),
    };
    if value < lo {
        SizeBin::A
    } else if value < hi {
        SizeBin::B
    } else {
        SizeBin::C
    }
}

/// Input feature of the classifiers, in canonical order. The order doubles
/// as the tie-break order for tree splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    BuildingSize,
    LandSize,
    Bedroom,
    Bathroom,
    Location,
}

impl Feature {
    pub const ALL: [Feature; 5] = [
        Feature::BuildingSize,
        Feature::LandSize,
        Feature::Bedroom,
        Feature::Bathroom,
        Feature::Location,
    ];
    pub const NUMERIC: [Feature; 4] = [
        Feature::BuildingSize,
        Feature::LandSize,
        Feature::Bedroom,
        Feature::Bathroom,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_numeric(self) -> bool {
        self != Feature::Location
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::BuildingSize => "building_size",
            Feature::LandSize => "land_size",
            Feature::Bedroom => "bedroom",
            Feature::Bathroom => "bathroom",
            Feature::Location => "location",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Read access to the classifier features of an instance.
pub trait Features {
    /// Value of a numeric feature; `None` for `Location` or when absent.
    fn numeric(&self, feature: Feature) -> Option<f64>;
    fn location(&self) -> Option<&str>;

    fn require_numeric(&self, feature: Feature) -> Result<f64, FeatureError> {
        self.numeric(feature)
            .ok_or(FeatureError::MissingFeature(feature))
    }

    fn require_location(&self) -> Result<&str, FeatureError> {
        self.location()
            .ok_or(FeatureError::MissingFeature(Feature::Location))
    }
}

/// A cleaned listing with its price replaced by the price class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub location: String,
    pub building_size: f64,
    pub land_size: f64,
    pub bedroom: u32,
    pub bathroom: u32,
    pub label: PriceClass,
}

impl LabeledInstance {
    pub fn from_record(record: &ListingRecord, bins: &BinTable) -> LabeledInstance {
        LabeledInstance {
            location: record.location.clone(),
            building_size: record.building_size,
            land_size: record.land_size,
            bedroom: record.bedroom,
            bathroom: record.bathroom,
            label: price_class(record.price, bins),
        }
    }

    pub fn features(&self) -> FeatureVector {
        FeatureVector {
            location: Some(self.location.clone()),
            building_size: Some(self.building_size),
            land_size: Some(self.land_size),
            bedroom: Some(self.bedroom as f64),
            bathroom: Some(self.bathroom as f64),
        }
    }

    /// Table bins of the two size variables (optional derived features).
    pub fn size_bins(&self, bins: &BinTable) -> (SizeBin, SizeBin) {
        (
            size_bin(self.building_size, SizeVariable::Building, bins),
            size_bin(self.land_size, SizeVariable::Land, bins),
        )
    }
}

impl Features for LabeledInstance {
    fn numeric(&self, feature: Feature) -> Option<f64> {
        match feature {
            Feature::BuildingSize => Some(self.building_size),
            Feature::LandSize => Some(self.land_size),
            Feature::Bedroom => Some(self.bedroom as f64),
            Feature::Bathroom => Some(self.bathroom as f64),
            Feature::Location => None,
        }
    }

    fn location(&self) -> Option<&str> {
        Some(&self.location)
    }
}

/// Unlabeled query with possibly missing features.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub location: Option<String>,
    pub building_size: Option<f64>,
    pub land_size: Option<f64>,
    pub bedroom: Option<f64>,
    pub bathroom: Option<f64>,
}

impl Features for FeatureVector {
    fn numeric(&self, feature: Feature) -> Option<f64> {
        match feature {
            Feature::BuildingSize => self.building_size,
            Feature::LandSize => self.land_size,
            Feature::Bedroom => self.bedroom,
            Feature::Bathroom => self.bathroom,
            Feature::Location => None,
        }
    }

    fn location(&self) -> Option<&str> {
        self.location.as_deref()
    }
}

/// Labels every record of a cleaned dataset, preserving order.
pub fn label_dataset(data: &Dataset, bins: &BinTable) -> (Vec<LabeledInstance>, [usize; 3]) {
    let instances: Vec<LabeledInstance> = data
        .records
        .iter()
        .map(|r| LabeledInstance::from_record(r, bins))
        .collect();
    let counts = class_counts(&instances);
    (instances, counts)
}

pub fn class_counts(instances: &[LabeledInstance]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for inst in instances {
        counts[inst.label.index()] += 1;
    }
    counts
}

/// Observed `(min, max)` of each numeric feature over a training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub building_size: (f64, f64),
    pub land_size: (f64, f64),
    pub bedroom: (f64, f64),
    pub bathroom: (f64, f64),
}

impl Normalizer {
    pub fn range(&self, feature: Feature) -> Option<(f64, f64)> {
        match feature {
            Feature::BuildingSize => Some(self.building_size),
            Feature::LandSize => Some(self.land_size),
            Feature::Bedroom => Some(self.bedroom),
            Feature::Bathroom => Some(self.bathroom),
            Feature::Location => None,
        }
    }

    /// Normalized value of a numeric feature; `None` for `Location`.
    pub fn scale(&self, feature: Feature, x: f64) -> Option<f64> {
        self.range(feature).map(|range| normalize(x, range))
    }
}

pub fn fit_normalizer(train: &[LabeledInstance]) -> Result<Normalizer, FeatureError> {
    if train.is_empty() {
        return Err(FeatureError::EmptyTrainingSet);
    }
    let mut ranges = [(f64::INFINITY, f64::NEG_INFINITY); 4];
    for inst in train {
        for (slot, feature) in ranges.iter_mut().zip(Feature::NUMERIC) {
            let v = inst.numeric(feature).expect("numeric feature");
            slot.0 = slot.0.min(v);
            slot.1 = slot.1.max(v);
        }
    }
    Ok(Normalizer {
        building_size: ranges[0],
        land_size: ranges[1],
        bedroom: ranges[2],
        bathroom: ranges[3],
    })
}

/// Min-max scaling clamped to `[0, 1]`. A degenerate range maps to 0.
pub fn normalize(x: f64, (min, max): (f64, f64)) -> f64 {
    if max <= min {
        return 0.0;
    }
    ((x - min) / (max - min)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inst(building: f64, land: f64, label: PriceClass) -> LabeledInstance {
        LabeledInstance {
            location: "Antapani, Bandung".into(),
            building_size: building,
            land_size: land,
            bedroom: 2,
            bathroom: 1,
            label,
        }
    }

    #[test]
    fn price_class_examples() {
        let bins = BinTable::default();
        assert_eq!(price_class(250_000_000, &bins), PriceClass::A);
        assert_eq!(price_class(603_500_000, &bins), PriceClass::B);
        assert_eq!(price_class(1_487_500_000, &bins), PriceClass::C);
        assert_eq!(price_class(603_499_999, &bins), PriceClass::A);
        assert_eq!(price_class(1_487_499_999, &bins), PriceClass::B);
        assert_eq!(price_class(0, &bins), PriceClass::A);
    }

    #[test]
    fn size_bin_examples() {
        let bins = BinTable::default();
        assert_eq!(size_bin(60.0, SizeVariable::Land, &bins), SizeBin::A);
        assert_eq!(size_bin(89.0, SizeVariable::Building, &bins), SizeBin::B);
        assert_eq!(size_bin(175.5, SizeVariable::Land, &bins), SizeBin::C);
        assert_eq!(size_bin(175.4, SizeVariable::Land, &bins), SizeBin::B);
        assert_eq!(size_bin(171.0, SizeVariable::Building, &bins), SizeBin::C);
    }

    #[test]
    fn bin_table_validation() {
        assert!(BinTable::default().validate().is_ok());
        let bad = BinTable {
            land_lower: 200.0,
            ..BinTable::default()
        };
        assert!(matches!(bad.validate(), Err(FeatureError::InvalidBins(_))));
        let bad = BinTable {
            price_upper: 1,
            ..BinTable::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn normalizer_examples() {
        let one = vec![inst(90.0, 60.0, PriceClass::A)];
        let n = fit_normalizer(&one).unwrap();
        assert_eq!(n.building_size, (90.0, 90.0));
        assert_eq!(n.bedroom, (2.0, 2.0));

        let pair = vec![inst(36.0, 72.0, PriceClass::A), inst(258.0, 280.0, PriceClass::C)];
        let n = fit_normalizer(&pair).unwrap();
        assert_eq!(n.building_size, (36.0, 258.0));

        let twice = vec![one[0].clone(), one[0].clone()];
        assert_eq!(fit_normalizer(&twice).unwrap(), fit_normalizer(&one).unwrap());

        assert_eq!(fit_normalizer(&[]), Err(FeatureError::EmptyTrainingSet));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(36.0, (36.0, 258.0)), 0.0);
        assert_eq!(normalize(258.0, (36.0, 258.0)), 1.0);
        assert_eq!(normalize(147.0, (36.0, 258.0)), 0.5);
        assert_eq!(normalize(5.0, (3.0, 3.0)), 0.0);
        assert_eq!(normalize(1000.0, (36.0, 258.0)), 1.0);
        assert_eq!(normalize(-4.0, (36.0, 258.0)), 0.0);
    }

    #[test]
    fn class_names_round_trip() {
        for c in PriceClass::ALL {
            assert_eq!(c.name().parse::<PriceClass>().unwrap(), c);
            assert_eq!(PriceClass::from_index(c.index()), Some(c));
        }
        assert!("Price_D".parse::<PriceClass>().is_err());
    }

    proptest! {
        #[test]
        fn price_class_is_monotone(a in 0u64..5_000_000_000, b in 0u64..5_000_000_000) {
            let bins = BinTable::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(price_class(lo, &bins) <= price_class(hi, &bins));
        }

        #[test]
        fn normalize_stays_in_unit_interval(x in -1e6f64..1e6, a in -1e3f64..1e3, w in 0f64..1e3) {
            let v = normalize(x, (a, a + w));
            prop_assert!((0.0..=1.0).contains(&v));
            if w > 0.0 {
                prop_assert_eq!(normalize(a, (a, a + w)), 0.0);
                prop_assert_eq!(normalize(a + w, (a, a + w)), 1.0);
            }
        }
    }
}

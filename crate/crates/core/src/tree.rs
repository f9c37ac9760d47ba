//! Binary classification tree grown by greedy impurity reduction.
//!
//! Numeric features are split with `value < threshold`, thresholds being
//! midpoints between consecutive distinct training values. The location
//! feature is split one-vs-rest. Leaves keep the full class counts of the
//! training instances that reach them, so predictions come with class
//! frequencies.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Feature, FeatureError, Features, LabeledInstance, PriceClass};

/// Gains closer than this are treated as equal; the earlier candidate in
/// canonical order wins.
pub const GAIN_TIE_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("class counts are all zero")]
    AllZeroCounts,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid tree parameters: {0}")]
    InvalidParams(String),
    #[error("malformed tree document: {0}")]
    Malformed(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Gini,
    Entropy,
}

impl std::str::FromStr for Criterion {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gini" => Ok(Criterion::Gini),
            "entropy" => Ok(Criterion::Entropy),
            other => Err(TreeError::InvalidParams(format!("unknown criterion `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub min_gain: f64,
    pub criterion: Criterion,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 8,
            min_leaf: 5,
            min_gain: 1e-7,
            criterion: Criterion::Gini,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.max_depth == 0 {
            return Err(TreeError::InvalidParams("max_depth must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(TreeError::InvalidParams("min_leaf must be at least 1".into()));
        }
        if !(self.min_gain >= 0.0 && self.min_gain.is_finite()) {
            return Err(TreeError::InvalidParams(format!(
                "min_gain {} must be a non-negative number",
                self.min_gain
            )));
        }
        Ok(())
    }
}

pub type ClassCounts = [usize; PriceClass::COUNT];

/// Gini (`1 - sum p^2`) or entropy (`-sum p log2 p`) of a class distribution.
pub fn impurity(counts: &ClassCounts, criterion: Criterion) -> Result<f64, TreeError> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(TreeError::AllZeroCounts);
    }
    let total = total as f64;
    let value = match criterion {
        Criterion::Gini => 1.0 - counts.iter().map(|&c| (c as f64 / total).powi(2)).sum::<f64>(),
        Criterion::Entropy => -counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total;
                p * p.log2()
            })
            .sum::<f64>(),
    };
    Ok(value.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitTest {
    /// Passes when `value < threshold`.
    Numeric { feature: Feature, threshold: f64 },
    /// Passes when the value is one of `categories`.
    Categorical {
        feature: Feature,
        categories: BTreeSet<String>,
    },
}

impl SplitTest {
    pub fn feature(&self) -> Feature {
        match self {
            SplitTest::Numeric { feature, .. } | SplitTest::Categorical { feature, .. } => *feature,
        }
    }

    /// `true` routes left. Unseen categories fail the membership test.
    pub fn passes<F: Features + ?Sized>(&self, x: &F) -> Result<bool, FeatureError> {
        match self {
            SplitTest::Numeric { feature, threshold } => {
                Ok(x.require_numeric(*feature)? < *threshold)
            }
            SplitTest::Categorical { categories, .. } => {
                Ok(categories.contains(x.require_location()?))
            }
        }
    }
}

impl std::fmt::Display for SplitTest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitTest::Numeric { feature, threshold } => write!(f, "{feature} < {threshold}"),
            SplitTest::Categorical {
                feature,
                categories,
            } => {
                let cats: Vec<&str> = categories.iter().map(String::as_str).collect();
                write!(f, "{feature} in {{{}}}", cats.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        counts: ClassCounts,
    },
    Split {
        test: SplitTest,
        counts: ClassCounts,
        left: usize,
        right: usize,
    },
}

impl Node {
    pub fn counts(&self) -> &ClassCounts {
        match self {
            Node::Leaf { counts } | Node::Split { counts, .. } => counts,
        }
    }

    pub fn support(&self) -> usize {
        self.counts().iter().sum()
    }
}

/// A fitted tree. Nodes are stored in pre-order; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeDocument", into = "TreeDocument")]
pub struct DecisionTree {
    nodes: Vec<Node>,
    params: TreeParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreePrediction {
    pub class: PriceClass,
    pub probabilities: [f64; PriceClass::COUNT],
    pub leaf: usize,
}

fn counts_of<'a, I: IntoIterator<Item = &'a LabeledInstance>>(rows: I) -> ClassCounts {
    let mut counts = [0usize; PriceClass::COUNT];
    for r in rows {
        counts[r.label.index()] += 1;
    }
    counts
}

fn sub(a: &ClassCounts, b: &ClassCounts) -> ClassCounts {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn weighted_child_impurity(
    left: &ClassCounts,
    right: &ClassCounts,
    criterion: Criterion,
) -> f64 {
    let nl: usize = left.iter().sum();
    let nr: usize = right.iter().sum();
    let n = (nl + nr) as f64;
    let il = impurity(left, criterion).expect("non-empty child");
    let ir = impurity(right, criterion).expect("non-empty child");
    (nl as f64 * il + nr as f64 * ir) / n
}

struct Best {
    test: SplitTest,
    gain: f64,
}

fn offer(best: &mut Option<Best>, gain: f64, make: impl FnOnce() -> SplitTest) {
    let better = match best {
        None => true,
        Some(b) => gain > b.gain + GAIN_TIE_EPSILON,
    };
    if better {
        *best = Some(Best { test: make(), gain });
    }
}

fn find_split(rows: &[&LabeledInstance], params: &TreeParams) -> Option<(SplitTest, f64)> {
    let n = rows.len();
    if n == 0 || n < 2 * params.min_leaf {
        return None;
    }
    let parent = counts_of(rows.iter().copied());
    let parent_impurity = impurity(&parent, params.criterion).ok()?;
    let mut best: Option<Best> = None;

    for feature in Feature::NUMERIC {
        let mut sorted: Vec<(f64, PriceClass)> = rows
            .iter()
            .map(|r| (r.numeric(feature).expect("numeric"), r.label))
            .collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = [0usize; PriceClass::COUNT];
        for i in 0..n - 1 {
            left[sorted[i].1.index()] += 1;
            let (lo, hi) = (sorted[i].0, sorted[i + 1].0);
            if lo >= hi {
                continue;
            }
            let nl = i + 1;
            if nl < params.min_leaf || n - nl < params.min_leaf {
                continue;
            }
            let right = sub(&parent, &left);
            let gain =
                parent_impurity - weighted_child_impurity(&left, &right, params.criterion);
            offer(&mut best, gain, || {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold <= lo {
                    // adjacent floats: no value strictly between
                    threshold = hi;
                }
                SplitTest::Numeric { feature, threshold }
            });
        }
    }

    let categories: BTreeSet<&str> = rows.iter().map(|r| r.location.as_str()).collect();
    if categories.len() >= 2 {
        for cat in &categories {
            let left = counts_of(rows.iter().copied().filter(|r| r.location == *cat));
            let nl: usize = left.iter().sum();
            if nl < params.min_leaf || n - nl < params.min_leaf {
                continue;
            }
            let right = sub(&parent, &left);
            let gain =
                parent_impurity - weighted_child_impurity(&left, &right, params.criterion);
            offer(&mut best, gain, || SplitTest::Categorical {
                feature: Feature::Location,
                categories: BTreeSet::from([cat.to_string()]),
            });
        }
    }

    best.filter(|b| b.gain >= params.min_gain)
        .map(|b| (b.test, b.gain))
}

/// Highest-gain admissible split, or `None` when no candidate leaves both
/// children with at least `min_leaf` instances and gains at least
/// `min_gain`. Ties go to the lower feature index, then the lower threshold
/// or the lexicographically first category.
pub fn best_split(instances: &[LabeledInstance], params: &TreeParams) -> Option<(SplitTest, f64)> {
    let rows: Vec<&LabeledInstance> = instances.iter().collect();
    find_split(&rows, params)
}

fn grow(
    nodes: &mut Vec<Node>,
    rows: Vec<&LabeledInstance>,
    depth: usize,
    params: &TreeParams,
) -> usize {
    let counts = counts_of(rows.iter().copied());
    let id = nodes.len();
    nodes.push(Node::Leaf { counts });

    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    if depth >= params.max_depth || rows.len() < 2 * params.min_leaf || pure {
        return id;
    }
    let Some((test, _)) = find_split(&rows, params) else {
        return id;
    };
    let (go_left, go_right): (Vec<_>, Vec<_>) = rows
        .into_iter()
        .partition(|r| test.passes(*r).expect("training rows carry every feature"));
    let left = grow(nodes, go_left, depth + 1, params);
    let right = grow(nodes, go_right, depth + 1, params);
    nodes[id] = Node::Split {
        test,
        counts,
        left,
        right,
    };
    id
}

pub fn fit_tree(train: &[LabeledInstance], params: &TreeParams) -> Result<DecisionTree, TreeError> {
    params.validate()?;
    if train.is_empty() {
        return Err(TreeError::EmptyTrainingSet);
    }
    let mut nodes = Vec::new();
    grow(&mut nodes, train.iter().collect(), 0, params);
    Ok(DecisionTree {
        nodes,
        params: *params,
    })
}

/// Index of the largest count; ties go to the lower class.
pub(crate) fn argmax_class(values: &[f64; PriceClass::COUNT]) -> PriceClass {
    let mut best = 0;
    for i in 1..PriceClass::COUNT {
        if values[i] > values[best] {
            best = i;
        }
    }
    PriceClass::ALL[best]
}

impl DecisionTree {
    /// Builds a tree from explicit nodes, checking the structural invariants.
    pub fn from_nodes(nodes: Vec<Node>, params: TreeParams) -> Result<DecisionTree, TreeError> {
        let tree = DecisionTree { nodes, params };
        tree.check()?;
        Ok(tree)
    }

    fn check(&self) -> Result<(), TreeError> {
        let bad = |m: String| Err(TreeError::Malformed(m));
        if self.nodes.is_empty() {
            return bad("tree has no nodes".into());
        }
        if self.nodes[0].support() == 0 {
            return bad("root has zero support".into());
        }
        let mut parent_of = vec![None; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            if let Node::Split {
                test,
                counts,
                left,
                right,
            } = node
            {
                for &child in [left, right] {
                    if child <= id || child >= self.nodes.len() {
                        return bad(format!("node {id} has invalid child {child}"));
                    }
                    if parent_of[child].replace(id).is_some() {
                        return bad(format!("node {child} has two parents"));
                    }
                }
                let l = self.nodes[*left].counts();
                let r = self.nodes[*right].counts();
                if (0..PriceClass::COUNT).any(|c| l[c] + r[c] != counts[c]) {
                    return bad(format!("children of node {id} do not sum to its counts"));
                }
                match test {
                    SplitTest::Numeric { feature, threshold } => {
                        if !feature.is_numeric() || !threshold.is_finite() {
                            return bad(format!("node {id} has an invalid numeric test"));
                        }
                    }
                    SplitTest::Categorical {
                        feature,
                        categories,
                    } => {
                        if feature.is_numeric() || categories.is_empty() {
                            return bad(format!("node {id} has an invalid categorical test"));
                        }
                    }
                }
            }
        }
        if let Some(orphan) = (1..self.nodes.len()).find(|&i| parent_of[i].is_none()) {
            return bad(format!("node {orphan} is unreachable"));
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn params(&self) -> &TreeParams {
        &self.params
    }

    pub fn support(&self) -> usize {
        self.nodes[0].support()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Routes `x` to a leaf and reports the leaf's class frequencies.
    pub fn predict<F: Features + ?Sized>(&self, x: &F) -> Result<TreePrediction, TreeError> {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { counts } => {
                    let support: usize = counts.iter().sum();
                    let probabilities = counts.map(|c| c as f64 / support as f64);
                    return Ok(TreePrediction {
                        class: argmax_class(&probabilities),
                        probabilities,
                        leaf: id,
                    });
                }
                Node::Split {
                    test, left, right, ..
                } => {
                    id = if test.passes(x)? { *left } else { *right };
                }
            }
        }
    }

    /// Share of the total weighted impurity decrease attributed to each
    /// feature, in [`Feature::ALL`] order. All zeros for a single leaf.
    pub fn feature_importance(&self) -> [f64; 5] {
        let mut acc = [0.0; 5];
        for node in &self.nodes {
            if let Node::Split {
                test,
                counts,
                left,
                right,
            } = node
            {
                let n = node.support() as f64;
                let parent = impurity(counts, self.params.criterion).unwrap_or(0.0);
                let child = weighted_child_impurity(
                    self.nodes[*left].counts(),
                    self.nodes[*right].counts(),
                    self.params.criterion,
                );
                acc[test.feature().index()] += n * (parent - child).max(0.0);
            }
        }
        let total: f64 = acc.iter().sum();
        if total > 0.0 {
            acc.iter_mut().for_each(|v| *v /= total);
        }
        acc
    }

    /// Indented listing of the tree, one node per line.
    pub fn render(&self) -> String {
        fn walk(tree: &DecisionTree, id: usize, depth: usize, out: &mut String) {
            let pad = "  ".repeat(depth);
            let node = &tree.nodes[id];
            let c = node.counts();
            match node {
                Node::Leaf { .. } => {
                    let support = node.support() as f64;
                    let _ = writeln!(
                        out,
                        "{pad}Node {id}: leaf n={} counts=[{}, {}, {}] -> {} ({:.1}%)",
                        node.support(),
                        c[0],
                        c[1],
                        c[2],
                        argmax_class(&c.map(|v| v as f64)),
                        100.0 * *c.iter().max().unwrap_or(&0) as f64 / support
                    );
                }
                Node::Split {
                    test, left, right, ..
                } => {
                    let _ = writeln!(
                        out,
                        "{pad}Node {id}: {test} n={} counts=[{}, {}, {}]",
                        node.support(),
                        c[0],
                        c[1],
                        c[2]
                    );
                    walk(tree, *left, depth + 1, out);
                    walk(tree, *right, depth + 1, out);
                }
            }
        }
        let mut out = String::new();
        walk(self, 0, 0, &mut out);
        out
    }
}

/// Flat node record of the serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NodeRecord {
    kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<Feature>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    categories: Option<BTreeSet<String>>,
    counts: ClassCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    children: Option<[usize; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum NodeKind {
    Leaf,
    Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TreeDocument {
    params: TreeParams,
    nodes: Vec<NodeRecord>,
}

impl From<DecisionTree> for TreeDocument {
    fn from(tree: DecisionTree) -> Self {
        let nodes = tree
            .nodes
            .into_iter()
            .map(|node| match node {
                Node::Leaf { counts } => NodeRecord {
                    kind: NodeKind::Leaf,
                    feature: None,
                    threshold: None,
                    categories: None,
                    counts,
                    children: None,
                },
                Node::Split {
                    test,
                    counts,
                    left,
                    right,
                } => {
                    let (feature, threshold, categories) = match test {
                        SplitTest::Numeric { feature, threshold } => {
                            (feature, Some(threshold), None)
                        }
                        SplitTest::Categorical {
                            feature,
                            categories,
                        } => (feature, None, Some(categories)),
                    };
                    NodeRecord {
                        kind: NodeKind::Split,
                        feature: Some(feature),
                        threshold,
                        categories,
                        counts,
                        children: Some([left, right]),
                    }
                }
            })
            .collect();
        TreeDocument {
            params: tree.params,
            nodes,
        }
    }
}

impl TryFrom<TreeDocument> for DecisionTree {
    type Error = TreeError;

    fn try_from(doc: TreeDocument) -> Result<Self, Self::Error> {
        let nodes = doc
            .nodes
            .into_iter()
            .enumerate()
            .map(|(id, r)| match r.kind {
                NodeKind::Leaf => Ok(Node::Leaf { counts: r.counts }),
                NodeKind::Split => {
                    let feature = r
                        .feature
                        .ok_or_else(|| TreeError::Malformed(format!("node {id} lacks a feature")))?;
                    let [left, right] = r
                        .children
                        .ok_or_else(|| TreeError::Malformed(format!("node {id} lacks children")))?;
                    let test = match (r.threshold, r.categories) {
                        (Some(threshold), None) => SplitTest::Numeric { feature, threshold },
                        (None, Some(categories)) => SplitTest::Categorical {
                            feature,
                            categories,
                        },
                        _ => {
                            return Err(TreeError::Malformed(format!(
                                "node {id} needs exactly one of threshold or categories"
                            )))
                        }
                    };
                    Ok(Node::Split {
                        test,
                        counts: r.counts,
                        left,
                        right,
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        doc.params.validate()?;
        DecisionTree::from_nodes(nodes, doc.params)
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

    fn loose() -> TreeParams {
        TreeParams {
            min_leaf: 1,
            ..TreeParams::default()
        }
    }

    #[test]
    fn impurity_examples() {
        assert_eq!(impurity(&[10, 0, 0], Criterion::Gini).unwrap(), 0.0);
        assert!((impurity(&[5, 5, 0], Criterion::Gini).unwrap() - 0.5).abs() < 1e-15);
        assert!(
            (impurity(&[1, 1, 1], Criterion::Entropy).unwrap() - 3f64.log2()).abs() < 1e-12
        );
        assert!((impurity(&[1, 1, 1], Criterion::Entropy).unwrap() - 1.58496).abs() < 1e-5);
        assert_eq!(impurity(&[4, 0, 0], Criterion::Entropy).unwrap(), 0.0);
        assert_eq!(impurity(&[0, 0, 0], Criterion::Gini), Err(TreeError::AllZeroCounts));
    }

    #[test]
    fn best_split_single_feature() {
        use PriceClass::*;
        let data = vec![
            inst(1.0, 50.0, "x", A),
            inst(2.0, 50.0, "x", A),
            inst(3.0, 50.0, "x", B),
            inst(4.0, 50.0, "x", B),
        ];
        let (test, gain) = best_split(&data, &loose()).unwrap();
        assert_eq!(
            test,
            SplitTest::Numeric {
                feature: Feature::BuildingSize,
                threshold: 2.5
            }
        );
        assert!((gain - 0.5).abs() < 1e-15);
    }

    #[test]
    fn best_split_pure_node_has_none() {
        let data: Vec<_> = (0..10)
            .map(|i| inst(30.0 + f64::from(i), 60.0, "x", PriceClass::A))
            .collect();
        assert!(best_split(&data, &loose()).is_none());
    }

    #[test]
    fn best_split_respects_min_leaf() {
        use PriceClass::*;
        let data = vec![
            inst(1.0, 50.0, "x", A),
            inst(2.0, 50.0, "x", B),
            inst(3.0, 50.0, "x", B),
            inst(4.0, 50.0, "x", B),
        ];
        let params = TreeParams {
            min_leaf: 2,
            ..TreeParams::default()
        };
        let (test, _) = best_split(&data, &params).unwrap();
        assert_eq!(
            test,
            SplitTest::Numeric {
                feature: Feature::BuildingSize,
                threshold: 2.5
            }
        );
        let params = TreeParams {
            min_leaf: 3,
            ..TreeParams::default()
        };
        assert!(best_split(&data, &params).is_none());
    }

    #[test]
    fn categorical_split_and_tie_break() {
        use PriceClass::*;
        // only location separates the classes; the two singleton sets tie
        let data = vec![
            inst(50.0, 50.0, "b", A),
            inst(50.0, 50.0, "b", A),
            inst(50.0, 50.0, "a", B),
            inst(50.0, 50.0, "a", B),
        ];
        let (test, gain) = best_split(&data, &loose()).unwrap();
        assert_eq!(
            test,
            SplitTest::Categorical {
                feature: Feature::Location,
                categories: BTreeSet::from(["a".to_string()])
            }
        );
        assert!((gain - 0.5).abs() < 1e-15);
    }

    #[test]
    fn numeric_beats_categorical_on_tie() {
        use PriceClass::*;
        let data = vec![
            inst(1.0, 50.0, "a", A),
            inst(1.0, 50.0, "a", A),
            inst(2.0, 50.0, "b", B),
            inst(2.0, 50.0, "b", B),
        ];
        let (test, _) = best_split(&data, &loose()).unwrap();
        assert_eq!(test.feature(), Feature::BuildingSize);
    }

    #[test]
    fn pure_training_set_gives_single_leaf() {
        let data: Vec<_> = (0..10)
            .map(|i| inst(30.0 + f64::from(i), 60.0, "x", PriceClass::A))
            .collect();
        let tree = fit_tree(&data, &TreeParams::default()).unwrap();
        assert_eq!(tree.nodes().len(), 1);
        let p = tree.predict(&data[0]).unwrap();
        assert_eq!(p.class, PriceClass::A);
        assert_eq!(p.probabilities, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn planted_building_threshold_is_recovered() {
        // class A iff building_size < 89, sizes on both sides of the edge
        let data: Vec<_> = (0..40)
            .map(|i| {
                let b = if i % 2 == 0 { 40.0 + f64::from(i) } else { 100.0 + f64::from(i) };
                let label = if b < 89.0 { PriceClass::A } else { PriceClass::B };
                inst(b, 60.0 + f64::from(i % 7), "x", label)
            })
            .collect();
        let tree = fit_tree(&data, &TreeParams::default()).unwrap();
        assert_eq!(tree.depth(), 1);
        match &tree.nodes()[0] {
            Node::Split {
                test: SplitTest::Numeric { feature, threshold },
                ..
            } => {
                assert_eq!(*feature, Feature::BuildingSize);
                assert!(*threshold > 78.0 && *threshold < 101.0);
            }
            other => panic!("expected numeric root split, got {other:?}"),
        }
        for leaf in tree.nodes().iter().filter(|n| matches!(n, Node::Leaf { .. })) {
            assert_eq!(leaf.counts().iter().filter(|&&c| c > 0).count(), 1);
        }
    }

    #[test]
    fn max_depth_one_bounds_node_count() {
        let data: Vec<_> = (0..60)
            .map(|i| inst(f64::from(i), f64::from(i * 7 % 13), "x", PriceClass::ALL[i as usize % 3]))
            .collect();
        let params = TreeParams {
            max_depth: 1,
            ..TreeParams::default()
        };
        let tree = fit_tree(&data, &params).unwrap();
        assert!(tree.nodes().len() <= 3);
    }

    #[test]
    fn predict_examples() {
        let leaf = DecisionTree::from_nodes(
            vec![Node::Leaf { counts: [7, 2, 1] }],
            TreeParams::default(),
        )
        .unwrap();
        let p = leaf.predict(&FeatureVector::default()).unwrap();
        assert_eq!(p.class, PriceClass::A);
        assert_eq!(p.probabilities, [0.7, 0.2, 0.1]);

        let tie = DecisionTree::from_nodes(vec![Node::Leaf { counts: [5, 5, 0] }], TreeParams::default())
            .unwrap();
        assert_eq!(tie.predict(&FeatureVector::default()).unwrap().class, PriceClass::A);

        let stump = hand_built_stump();
        let q = FeatureVector {
            building_size: Some(80.0),
            ..Default::default()
        };
        let p = stump.predict(&q).unwrap();
        assert_eq!(p.class, PriceClass::A);
        assert_eq!(p.probabilities[0], 1.0);

        assert_eq!(
            stump.predict(&FeatureVector::default()),
            Err(TreeError::Feature(FeatureError::MissingFeature(Feature::BuildingSize)))
        );
    }

    pub(crate) fn hand_built_stump() -> DecisionTree {
        DecisionTree::from_nodes(
            vec![
                Node::Split {
                    test: SplitTest::Numeric {
                        feature: Feature::BuildingSize,
                        threshold: 89.0,
                    },
                    counts: [10, 0, 10],
                    left: 1,
                    right: 2,
                },
                Node::Leaf { counts: [10, 0, 0] },
                Node::Leaf { counts: [0, 0, 10] },
            ],
            TreeParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn unseen_category_goes_right() {
        let tree = DecisionTree::from_nodes(
            vec![
                Node::Split {
                    test: SplitTest::Categorical {
                        feature: Feature::Location,
                        categories: BTreeSet::from(["Kopo".to_string()]),
                    },
                    counts: [3, 0, 3],
                    left: 1,
                    right: 2,
                },
                Node::Leaf { counts: [3, 0, 0] },
                Node::Leaf { counts: [0, 0, 3] },
            ],
            TreeParams::default(),
        )
        .unwrap();
        let q = FeatureVector {
            location: Some("Nowhere".into()),
            ..Default::default()
        };
        assert_eq!(tree.predict(&q).unwrap().class, PriceClass::C);
    }

    #[test]
    fn malformed_trees_are_rejected() {
        let p = TreeParams::default();
        assert!(DecisionTree::from_nodes(vec![], p).is_err());
        let bad_sum = vec![
            Node::Split {
                test: SplitTest::Numeric {
                    feature: Feature::LandSize,
                    threshold: 1.0,
                },
                counts: [2, 0, 0],
                left: 1,
                right: 2,
            },
            Node::Leaf { counts: [1, 0, 0] },
            Node::Leaf { counts: [0, 1, 0] },
        ];
        assert!(DecisionTree::from_nodes(bad_sum, p).is_err());
        let cycle = vec![
            Node::Split {
                test: SplitTest::Numeric {
                    feature: Feature::LandSize,
                    threshold: 1.0,
                },
                counts: [2, 0, 0],
                left: 0,
                right: 1,
            },
            Node::Leaf { counts: [1, 0, 0] },
        ];
        assert!(DecisionTree::from_nodes(cycle, p).is_err());
    }

    #[test]
    fn serialization_round_trips_exactly() {
        let data: Vec<_> = (0..80)
            .map(|i| {
                let b = 30.0 + f64::from(i) * 3.7;
                let label = if b < 89.0 {
                    PriceClass::A
                } else if b < 171.0 {
                    PriceClass::B
                } else {
                    PriceClass::C
                };
                inst(b, 0.1 + f64::from(i % 11) / 3.0, ["p", "q", "r"][i as usize % 3], label)
            })
            .collect();
        let tree = fit_tree(&data, &loose()).unwrap();
        let text = serde_json::to_string_pretty(&tree).unwrap();
        assert!(text.contains("\"kind\": \"split\""));
        let back: DecisionTree = serde_json::from_str(&text).unwrap();
        assert_eq!(back, tree);
        assert_eq!(serde_json::to_string_pretty(&back).unwrap(), text);
    }

    #[test]
    fn invalid_params() {
        let data = vec![inst(1.0, 1.0, "x", PriceClass::A)];
        for p in [
            TreeParams { max_depth: 0, ..TreeParams::default() },
            TreeParams { min_leaf: 0, ..TreeParams::default() },
            TreeParams { min_gain: -1.0, ..TreeParams::default() },
        ] {
            assert!(matches!(fit_tree(&data, &p), Err(TreeError::InvalidParams(_))));
        }
        assert_eq!(fit_tree(&[], &TreeParams::default()), Err(TreeError::EmptyTrainingSet));
    }

    fn arb_data() -> impl Strategy<Value = Vec<LabeledInstance>> {
        prop::collection::vec(
            (0u8..8, 0u8..6, 0u32..4, prop::sample::select(vec!["a", "b", "c"]), 0usize..3),
            1..60,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .map(|(b, l, bed, loc, c)| LabeledInstance {
                    location: loc.into(),
                    building_size: 30.0 + f64::from(b) * 10.0,
                    land_size: 40.0 + f64::from(l) * 15.0,
                    bedroom: bed,
                    bathroom: 1,
                    label: PriceClass::ALL[c],
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn fitted_tree_invariants(data in arb_data(), min_leaf in 1usize..4, depth in 1usize..6) {
            let params = TreeParams { min_leaf, max_depth: depth, ..TreeParams::default() };
            let tree = fit_tree(&data, &params).unwrap();
            prop_assert_eq!(tree.support(), data.len());
            let mut leaf_hits = vec![0usize; tree.nodes().len()];
            for x in &data {
                let p = tree.predict(x).unwrap();
                let sum: f64 = p.probabilities.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                prop_assert!(p.probabilities.iter().all(|&v| v >= 0.0));
                leaf_hits[p.leaf] += 1;
            }
            for (id, node) in tree.nodes().iter().enumerate() {
                if let Node::Leaf { .. } = node {
                    prop_assert_eq!(leaf_hits[id], node.support());
                }
            }
            prop_assert!(tree.depth() <= depth);
            prop_assert_eq!(fit_tree(&data, &params).unwrap(), tree);
        }

        #[test]
        fn deeper_trees_never_fit_worse(data in arb_data()) {
            let mut prev = 0usize;
            for depth in 1..7 {
                let params = TreeParams { max_depth: depth, min_leaf: 1, ..TreeParams::default() };
                let tree = fit_tree(&data, &params).unwrap();
                let correct = data.iter().filter(|x| tree.predict(*x).unwrap().class == x.label).count();
                prop_assert!(correct >= prev, "depth {} fits {} < {}", depth, correct, prev);
                prev = correct;
            }
        }
    }
}

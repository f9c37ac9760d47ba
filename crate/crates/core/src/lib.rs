//! Price-class modelling for property listings.
//!
//! The crate covers the whole batch workflow: parse and clean listing rows,
//! label them with a three-way price class, split them into stratified
//! train/test partitions, fit a binary decision tree and a k-nearest-neighbor
//! classifier, and evaluate both against the same test set with confusion
//! matrices.
//!
//! ```
//! use propclass_core::features::{price_class, BinTable, PriceClass};
//!
//! let bins = BinTable::default();
//! assert_eq!(price_class(250_000_000, &bins), PriceClass::A);
//! assert_eq!(price_class(1_487_500_000, &bins), PriceClass::C);
//! ```

pub mod eval;
pub mod features;
pub mod ingest;
pub mod knn;
pub mod model;
pub mod pipeline;
pub mod split;
pub mod tree;

pub use eval::{ComparisonReport, ConfusionMatrix, EvalReport};
pub use features::{BinTable, Feature, FeatureVector, Features, LabeledInstance, PriceClass};
pub use ingest::{Dataset, ListingRecord, SynthConfig};
pub use knn::{KnnModel, KnnParams};
pub use split::{SplitPair, SplitParams};
pub use tree::{DecisionTree, TreeParams};

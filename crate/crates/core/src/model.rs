//! Model files: either classifier plus the training metadata needed to reuse it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{percent, ModelInfo};
use crate::features::{BinTable, Feature, Features, PriceClass};
use crate::knn::{KnnError, KnnModel};
use crate::tree::{DecisionTree, TreeError};

pub const MODEL_FORMAT: &str = "propclass-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model format `{format}` version {version}")]
    Unsupported { format: String, version: u32 },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Knn(#[from] KnnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub data_source: String,
    pub train_size: usize,
    pub train_fingerprint: String,
    pub split_seed: Option<u64>,
    pub bins: BinTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classifier {
    DecisionTree(DecisionTree),
    Knn(KnnModel),
}

/// Outcome of classifying one query.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Tree {
        class: PriceClass,
        probabilities: [f64; 3],
    },
    Knn {
        class: PriceClass,
        neighbors: Vec<crate::knn::Neighbor>,
    },
}

impl Prediction {
    pub fn class(&self) -> PriceClass {
        match self {
            Prediction::Tree { class, .. } | Prediction::Knn { class, .. } => *class,
        }
    }

    /// One-line explanation: leaf probability for trees, neighbor list for k-NN.
    pub fn explain(&self) -> String {
        match self {
            Prediction::Tree {
                class,
                probabilities,
            } => format!(
                "{class} with probability {}",
                percent(probabilities[class.index()])
            ),
            Prediction::Knn { class, neighbors } => {
                let list: Vec<String> = neighbors
                    .iter()
                    .map(|n| format!("#{}:{}@{:.4}", n.index, n.label, n.distance))
                    .collect();
                format!("{class} from neighbors [{}]", list.join(" "))
            }
        }
    }
}

impl Classifier {
    pub fn predict<F: Features + ?Sized>(&self, x: &F) -> Result<Prediction, ModelError> {
        Ok(match self {
            Classifier::DecisionTree(tree) => {
                let p = tree.predict(x)?;
                Prediction::Tree {
                    class: p.class,
                    probabilities: p.probabilities,
                }
            }
            Classifier::Knn(model) => {
                let p = model.predict(x)?;
                Prediction::Knn {
                    class: p.class,
                    neighbors: p.neighbors,
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub metadata: ModelMetadata,
    pub classifier: Classifier,
}

impl ModelFile {
    pub fn new(metadata: ModelMetadata, classifier: Classifier) -> ModelFile {
        ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            metadata,
            classifier,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<ModelFile, ModelError> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(ModelError::Unsupported {
                format: file.format,
                version: file.version,
            });
        }
        if let Classifier::Knn(m) = &file.classifier {
            m.check()?;
        }
        Ok(file)
    }

    pub fn info(&self) -> ModelInfo {
        let seed = self
            .metadata
            .split_seed
            .map_or_else(|| "none".to_string(), |s| s.to_string());
        match &self.classifier {
            Classifier::DecisionTree(tree) => {
                let p = tree.params();
                let importance = tree.feature_importance();
                let mut ranked: Vec<(Feature, f64)> = Feature::ALL
                    .into_iter()
                    .map(|f| (f, importance[f.index()]))
                    .filter(|(_, v)| *v > 0.0)
                    .collect();
                ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                let influential = if ranked.is_empty() {
                    "none (single leaf)".to_string()
                } else {
                    ranked
                        .iter()
                        .take(3)
                        .map(|(f, v)| format!("{f} {}", percent(*v)))
                        .collect::<Vec<_>>()
                        .join(", ")
                };
                ModelInfo {
                    name: "Decision Tree".into(),
                    descriptor: format!(
                        "decision_tree(criterion={:?}, max_depth={}, min_leaf={}, min_gain={}) split_seed={seed}",
                        p.criterion, p.max_depth, p.min_leaf, p.min_gain
                    )
                    .to_lowercase(),
                    data_source: self.metadata.data_source.clone(),
                    measurement_indicator: format!(
                        "target price_class; most influential: {influential}"
                    ),
                    analysis: format!(
                        "prediction model ({} leaves, depth {})",
                        tree.leaf_count(),
                        tree.depth()
                    ),
                }
            }
            Classifier::Knn(model) => {
                let p = model.params();
                let weights: Vec<String> = Feature::ALL
                    .into_iter()
                    .map(|f| format!("{f}={}", p.effective_weight(f)))
                    .collect();
                let enabled: Vec<&str> = p.enabled_features().map(Feature::name).collect();
                ModelInfo {
                    name: "k-NN".into(),
                    descriptor: format!(
                        "knn(k={}, weights[{}], use_location={}) split_seed={seed}",
                        p.k,
                        weights.join(", "),
                        p.use_location
                    ),
                    data_source: self.metadata.data_source.clone(),
                    measurement_indicator: format!(
                        "similarity over all enabled features: {}",
                        enabled.join(", ")
                    ),
                    analysis: format!(
                        "exploration model ({} stored instances, k={})",
                        model.instances().len(),
                        p.k
                    ),
                }
            }
        }
    }
}

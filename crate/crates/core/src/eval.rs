//! Confusion matrices, per-class recall, overall accuracy, and the side-by-side
//! model comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::{LabeledInstance, PriceClass};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{truths} truths but {preds} predictions")]
    LengthMismatch { truths: usize, preds: usize },
    #[error("no (truth, prediction) pairs")]
    EmptyInput,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("reports were computed on different test sets ({0} vs {1})")]
    TestSetMismatch(String, String),
    #[error("model descriptor is empty")]
    EmptyDescriptor,
}

/// Rows are observed classes, columns predicted classes, both in A, B, C order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 3]; 3]) -> ConfusionMatrix {
        ConfusionMatrix { counts }
    }

    pub fn record(&mut self, observed: PriceClass, predicted: PriceClass) {
        self.counts[observed.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, observed: PriceClass) -> u64 {
        self.counts[observed.index()].iter().sum()
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(mut self, rhs: ConfusionMatrix) -> ConfusionMatrix {
        self += rhs;
        self
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, rhs: ConfusionMatrix) {
        for (row, other) in self.counts.iter_mut().zip(rhs.counts.iter()) {
            for (a, b) in row.iter_mut().zip(other.iter()) {
                *a += b;
            }
        }
    }
}

pub fn accumulate(truths: &[PriceClass], preds: &[PriceClass]) -> Result<ConfusionMatrix, EvalError> {
    if truths.len() != preds.len() {
        return Err(EvalError::LengthMismatch {
            truths: truths.len(),
            preds: preds.len(),
        });
    }
    if truths.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truths.iter().zip(preds) {
        cm.record(t, p);
    }
    Ok(cm)
}

/// Diagonal over row sum per observed class; `None` for a class with no
/// observations.
pub fn per_class_recall(cm: &ConfusionMatrix) -> [Option<f64>; 3] {
    PriceClass::ALL.map(|c| {
        let row = cm.row_sum(c);
        (row > 0).then(|| cm.counts[c.index()][c.index()] as f64 / row as f64)
    })
}

pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    match cm.total() {
        0 => Err(EvalError::EmptyMatrix),
        total => Ok(cm.correct() as f64 / total as f64),
    }
}

/// `0.7510` -> `"75.1%"`.
pub fn percent(value: f64) -> String {
    format!("{:.1}%", value * 100.0)
}

fn percent_or_na(value: Option<f64>) -> String {
    value.map_or_else(|| "n/a".to_string(), percent)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Order-independent digest of a test set: the SHA-256 of the sorted
/// per-instance digests.
pub fn test_set_fingerprint(instances: &[LabeledInstance]) -> String {
    let mut digests: Vec<[u8; 32]> = instances
        .iter()
        .map(|i| {
            let line = format!(
                "{}\t{}\t{}\t{}\t{}\t{}",
                i.location, i.building_size, i.land_size, i.bedroom, i.bathroom, i.label
            );
            Sha256::digest(line.as_bytes()).into()
        })
        .collect();
    digests.sort_unstable();
    let mut hasher = Sha256::new();
    for d in &digests {
        hasher.update(d);
    }
    hex(&hasher.finalize())
}

/// Human-facing description of a fitted model, used to fill the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    /// Short classifier name, e.g. `"Decision Tree"`.
    pub name: String,
    /// Classifier name plus hyperparameters and seed.
    pub descriptor: String,
    pub data_source: String,
    pub measurement_indicator: String,
    pub analysis: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelInfo,
    pub matrix: ConfusionMatrix,
    pub per_class_recall: [Option<f64>; 3],
    pub overall_accuracy: f64,
    pub test_size: u64,
    pub test_fingerprint: String,
    pub provenance: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn new(
        model: ModelInfo,
        matrix: ConfusionMatrix,
        test_fingerprint: String,
        provenance: BTreeMap<String, String>,
    ) -> Result<EvalReport, EvalError> {
        if model.descriptor.trim().is_empty() {
            return Err(EvalError::EmptyDescriptor);
        }
        Ok(EvalReport {
            per_class_recall: per_class_recall(&matrix),
            overall_accuracy: overall_accuracy(&matrix)?,
            test_size: matrix.total(),
            model,
            matrix,
            test_fingerprint,
            provenance,
        })
    }

    /// Observed-by-predicted table with a per-class correct percentage column.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Accuracy table: {}", self.model.descriptor);
        let _ = writeln!(out, "{:<10}{:>10}{:>10}{:>10}{:>20}", "Observed", "Price_A", "Price_B", "Price_C", "Correct Percentage");
        for c in PriceClass::ALL {
            let row = self.matrix.counts[c.index()];
            let _ = writeln!(
                out,
                "{:<10}{:>10}{:>10}{:>10}{:>20}",
                c.name(),
                row[0],
                row[1],
                row[2],
                percent_or_na(self.per_class_recall[c.index()])
            );
        }
        let _ = writeln!(out, "{:<40}{:>20}", "Overall", percent(self.overall_accuracy));
        let _ = writeln!(out);
        let _ = writeln!(out, "test_size: {}", self.test_size);
        let _ = writeln!(out, "test_fingerprint: {}", self.test_fingerprint);
        for (k, v) in &self.provenance {
            let _ = writeln!(out, "{k}: {v}");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    First,
    Second,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub values: [String; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub models: [String; 2],
    pub rows: Vec<ComparisonRow>,
    pub accuracies: [f64; 2],
    pub better: Verdict,
    pub test_fingerprint: String,
    pub descriptors: [String; 2],
}

impl ComparisonReport {
    pub const ROW_LABELS: [&'static str; 4] = [
        "Data Source",
        "Measurement Indicator",
        "Analysis",
        "Result of Accuracy",
    ];

    pub fn render_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .flat_map(|r| r.values.iter())
            .chain(self.models.iter())
            .map(|s| s.chars().count())
            .max()
            .unwrap_or(0)
            .clamp(12, 60);
        let mut out = String::new();
        let _ = writeln!(out, "{:<24}{:<w$}  {:<w$}", "Model", self.models[0], self.models[1], w = width);
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{:<24}{:<w$}  {:<w$}",
                row.label,
                row.values[0],
                row.values[1],
                w = width
            );
        }
        let verdict = match self.better {
            Verdict::First => format!("{} is more accurate", self.models[0]),
            Verdict::Second => format!("{} is more accurate", self.models[1]),
            Verdict::Tie => "tie: equal accuracy".to_string(),
        };
        let _ = writeln!(out);
        let _ = writeln!(out, "Verdict: {verdict}");
        let _ = writeln!(out, "test_fingerprint: {}", self.test_fingerprint);
        for (name, d) in self.models.iter().zip(&self.descriptors) {
            let _ = writeln!(out, "{name}: {d}");
        }
        out
    }
}

/// Side-by-side summary of two reports computed on the same test set.
pub fn compare(a: &EvalReport, b: &EvalReport) -> Result<ComparisonReport, EvalError> {
    if a.test_fingerprint != b.test_fingerprint {
        return Err(EvalError::TestSetMismatch(
            a.test_fingerprint.clone(),
            b.test_fingerprint.clone(),
        ));
    }
    let row = |label: &str, f: fn(&EvalReport) -> String| ComparisonRow {
        label: label.to_string(),
        values: [f(a), f(b)],
    };
    let rows = vec![
        row(ComparisonReport::ROW_LABELS[0], |r| r.model.data_source.clone()),
        row(ComparisonReport::ROW_LABELS[1], |r| r.model.measurement_indicator.clone()),
        row(ComparisonReport::ROW_LABELS[2], |r| r.model.analysis.clone()),
        row(ComparisonReport::ROW_LABELS[3], |r| percent(r.overall_accuracy)),
    ];
    let better = match a.overall_accuracy.partial_cmp(&b.overall_accuracy) {
        Some(std::cmp::Ordering::Greater) => Verdict::First,
        Some(std::cmp::Ordering::Less) => Verdict::Second,
        _ => Verdict::Tie,
    };
    Ok(ComparisonReport {
        models: [a.model.name.clone(), b.model.name.clone()],
        rows,
        accuracies: [a.overall_accuracy, b.overall_accuracy],
        better,
        test_fingerprint: a.test_fingerprint.clone(),
        descriptors: [a.model.descriptor.clone(), b.model.descriptor.clone()],
    })
}

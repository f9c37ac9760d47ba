//! Seeded stratified train/test partitioning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{LabeledInstance, PriceClass};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("cannot split an empty dataset")]
    EmptyDataset,
    #[error("class {0} is too small to appear in both train and test")]
    ClassTooSmall(PriceClass),
    #[error("train ratio {0} must lie strictly between 0 and 1")]
    InvalidRatio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub train_ratio: f64,
    pub seed: u64,
}

impl SplitParams {
    pub const DEFAULT_TRAIN_RATIO: f64 = 0.7;

    pub fn new(seed: u64) -> SplitParams {
        SplitParams {
            train_ratio: Self::DEFAULT_TRAIN_RATIO,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SplitError> {
        if self.train_ratio > 0.0 && self.train_ratio < 1.0 {
            Ok(())
        } else {
            Err(SplitError::InvalidRatio(self.train_ratio))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPair {
    pub train: Vec<LabeledInstance>,
    pub test: Vec<LabeledInstance>,
}

/// Positions into the input list, in output order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Number of training instances for a class of size `n`: `ratio * n`
/// rounded half-up. Products within 1e-9 below a half count as the half,
/// so `0.7 * 5` yields 4 despite binary rounding.
pub fn train_count(n: usize, ratio: f64) -> usize {
    (ratio * n as f64 + 0.5 + 1e-9).floor() as usize
}

pub fn stratified_split_indices(
    labels: &[PriceClass],
    params: &SplitParams,
) -> Result<SplitIndices, SplitError> {
    params.validate()?;
    if labels.is_empty() {
        return Err(SplitError::EmptyDataset);
    }
    let mut out = SplitIndices {
        train: Vec::with_capacity(train_count(labels.len(), params.train_ratio)),
        test: Vec::new(),
    };
    for class in PriceClass::ALL {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        let n_train = train_count(members.len(), params.train_ratio);
        if members.len() < 2 || n_train == 0 || n_train >= members.len() {
            return Err(SplitError::ClassTooSmall(class));
        }
        // One independent stream per class: adding or removing a class never
        // changes another class's shuffle.
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(class.index() as u64);
        members.shuffle(&mut rng);
        out.train.extend_from_slice(&members[..n_train]);
        out.test.extend_from_slice(&members[n_train..]);
    }
    Ok(out)
}

/// Splits per class: train gets `round(ratio * n_c)` of each class and the
/// rest goes to test. Both halves list classes in order A, B, C.
pub fn stratified_split(
    data: &[LabeledInstance],
    params: &SplitParams,
) -> Result<SplitPair, SplitError> {
    let labels: Vec<PriceClass> = data.iter().map(|d| d.label).collect();
    let idx = stratified_split_indices(&labels, params)?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| data[i].clone()).collect();
    Ok(SplitPair {
        train: pick(&idx.train),
        test: pick(&idx.test),
    })
}

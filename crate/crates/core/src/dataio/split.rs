use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::clip::HrLabel;
use crate::error::{Error, Result};

/// Subject-level train/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_subjects: BTreeSet<String>,
    pub test_subjects: BTreeSet<String>,
}

impl SplitSpec {
    pub fn new(train_subjects: BTreeSet<String>, test_subjects: BTreeSet<String>) -> Result<Self> {
        let split = Self {
            train_subjects,
            test_subjects,
        };
        split.validate()?;
        Ok(split)
    }

    /// Fails unless the two subject sets are disjoint.
    pub fn validate(&self) -> Result<()> {
        let shared: Vec<String> = self
            .train_subjects
            .intersection(&self.test_subjects)
            .cloned()
            .collect();
        if shared.is_empty() {
            Ok(())
        } else {
            Err(Error::SplitOverlap(shared))
        }
    }

    pub fn is_train(&self, subject: &str) -> bool {
        self.train_subjects.contains(subject)
    }

    pub fn is_test(&self, subject: &str) -> bool {
        self.test_subjects.contains(subject)
    }
}

/// Partitions the subjects (never individual clips) of `labels` into train
/// and test sets with `round(test_fraction * subjects)` test subjects.
pub fn subject_exclusive_split(labels: &[HrLabel], test_fraction: f64, seed: u64) -> Result<SplitSpec> {
    let subjects: BTreeSet<&str> = labels.iter().map(|l| l.subject_id.as_str()).collect();
    let total = subjects.len();
    if total < 2 {
        return Err(Error::InvalidSplit(format!("need at least 2 subjects, found {total}")));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidSplit(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let n_test = ((test_fraction * total as f64).round() as usize).max(1);
    if n_test >= total {
        return Err(Error::InvalidSplit(format!(
            "test fraction {test_fraction} leaves no training subjects out of {total}"
        )));
    }
    let mut order: Vec<&str> = subjects.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order[..n_test].iter().map(|s| s.to_string()).collect();
    let train = order[n_test..].iter().map(|s| s.to_string()).collect();
    SplitSpec::new(train, test)
}

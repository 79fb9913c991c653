use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::augment::Split;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

const RATIO_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config(format!("split ratios must lie in [0, 1], got {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > RATIO_TOL {
            return Err(Error::Config(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// Apportions `n` items by `ratios` with the largest-remainder rule. Ties
/// between equal remainders go to the earlier ratio.
pub fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + RATIO_TOL).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    let rem = |i: usize| quotas[i] - counts[i] as f64;
    order.sort_by(|&a, &b| {
        let (ra, rb) = (rem(a), rem(b));
        if (ra - rb).abs() <= RATIO_TOL {
            a.cmp(&b)
        } else {
            rb.partial_cmp(&ra).expect("finite remainders")
        }
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Per-sample split assignment, stratified by class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: SplitRatios,
    pub seed: u64,
    pub class_names: Vec<String>,
    pub labels: Vec<usize>,
    pub assignment: Vec<Split>,
}

impl SplitSpec {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == split).collect()
    }

    pub fn class_indices(&self, split: Split, class: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == split && self.labels[i] == class)
            .collect()
    }

    pub fn counts(&self, split: Split) -> usize {
        self.assignment.iter().filter(|&&s| s == split).count()
    }
}

/// Stratified split over arbitrary per-sample class labels.
pub fn stratified_split_labels(labels: &[usize], class_names: &[String], ratios: SplitRatios, seed: u64) -> Result<SplitSpec> {
    ratios.validate()?;
    let mut assignment = vec![Split::Train; labels.len()];
    for (class, name) in class_names.iter().enumerate() {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < 3 {
            return Err(Error::Validation(format!(
                "class `{name}` has {} samples; a three-way split needs at least 3",
                members.len()
            )));
        }
        let counts = largest_remainder(members.len(), &[ratios.train, ratios.val, ratios.test]);
        members.shuffle(&mut rng::stream(seed, &[tag::SPLIT, class as u64]));
        let (train, rest) = members.split_at(counts[0]);
        let (val, test) = rest.split_at(counts[1]);
        for (group, split) in [(train, Split::Train), (val, Split::Val), (test, Split::Test)] {
            for &i in group {
                assignment[i] = split;
            }
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
        return Err(Error::Validation(format!("label {bad} has no class name")));
    }
    Ok(SplitSpec {
        ratios,
        seed,
        class_names: class_names.to_vec(),
        labels: labels.to_vec(),
        assignment,
    })
}

/// Stratified train/val/test split of a manifest's samples.
pub fn stratified_split(manifest: &DatasetManifest, ratios: SplitRatios, seed: u64) -> Result<SplitSpec> {
    stratified_split_labels(&manifest.labels(), &manifest.classes.names(), ratios, seed)
}

/// `n` training samples per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewShotSpec {
    pub shots_per_class: usize,
    pub seed: u64,
    /// Sample indices, class by class.
    pub indices: Vec<usize>,
}

/// Uniform draw without replacement of `n` samples per class from the
/// training partition.
pub fn few_shot_sample(split: &SplitSpec, n: usize, seed: u64) -> Result<FewShotSpec> {
    if n == 0 {
        return Err(Error::Config("shots per class must be positive".into()));
    }
    let mut indices = Vec::with_capacity(n * split.num_classes());
    for (class, name) in split.class_names.iter().enumerate() {
        let mut pool = split.class_indices(Split::Train, class);
        if pool.len() < n {
            return Err(Error::Validation(format!(
                "class `{name}` has only {} training samples, fewer than {n} shots",
                pool.len()
            )));
        }
        let mut r = rng::stream(seed, &[tag::FEW_SHOT, class as u64]);
        let (chosen, _) = pool.partial_shuffle(&mut r, n);
        let mut chosen = chosen.to_vec();
        chosen.sort_unstable();
        indices.extend(chosen);
    }
    Ok(FewShotSpec {
        shots_per_class: n,
        seed,
        indices,
    })
}

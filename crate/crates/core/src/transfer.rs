//! Downstream evaluation: full fine-tuning, frozen-backbone linear
//! evaluation, accuracy metrics and multi-run aggregation.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{eval_transform, EvalRecipe, Split};
use crate::checkpoint::Checkpoint;
use crate::data::{few_shot_sample, LabeledImages, SplitSpec};
use crate::error::{Error, Result};
use crate::model::SimSiam;
use crate::nn::{Backbone, Buffer, FeatureMap, Linear, Mode, Module, Param};
use crate::optim::{Adam, AdamConfig, PlateauConfig, ReduceOnPlateau};
use crate::rng::{self, tag};

/// Backbone followed by a single linear layer.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub backbone: Backbone,
    pub head: Linear,
    frozen: bool,
}

impl Classifier {
    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn num_classes(&self) -> usize {
        self.head.out_dim()
    }

    pub fn trainable_params_mut(&mut self) -> Vec<&mut Param> {
        if self.frozen {
            self.head.params_mut()
        } else {
            self.params_mut()
        }
    }

    pub fn num_trainable(&self) -> usize {
        if self.frozen {
            self.head.num_params()
        } else {
            self.num_params()
        }
    }

    fn backbone_mode(&self, training: bool) -> Mode {
        if training && !self.frozen {
            Mode::Train
        } else {
            Mode::Eval
        }
    }

    pub fn features(&mut self, x: &FeatureMap) -> Result<Array2<f64>> {
        Ok(self.backbone.forward(x, Mode::Eval)?.0)
    }

    pub fn predict(&mut self, x: &FeatureMap) -> Result<Vec<usize>> {
        let feats = self.features(x)?;
        Ok(argmax_rows(&self.head.forward(&feats)?))
    }

    /// One training step's forward and backward pass; returns the mean
    /// cross-entropy. Gradients accumulate into the trainable parameters.
    pub fn train_step(&mut self, x: &FeatureMap, labels: &[usize]) -> Result<f64> {
        let mode = self.backbone_mode(true);
        let (feats, cache) = self.backbone.forward(x, mode)?;
        self.head_step(&feats, labels, |me, dfeat| me.backbone.backward(&cache, dfeat))
    }

    fn head_step(
        &mut self,
        feats: &Array2<f64>,
        labels: &[usize],
        backbone_backward: impl FnOnce(&mut Self, &Array2<f64>),
    ) -> Result<f64> {
        let logits = self.head.forward(feats)?;
        let (loss, dlogits) = cross_entropy(&logits, labels)?;
        let dfeat = self.head.backward(feats, &dlogits);
        if !self.frozen {
            backbone_backward(self, &dfeat);
        }
        Ok(loss)
    }
}

impl Module for Classifier {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.backbone.collect_params(out);
        self.head.collect_params(out);
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.backbone.collect_params_mut(out);
        self.head.collect_params_mut(out);
    }
    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Buffer>) {
        self.backbone.collect_buffers(out);
    }
    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer>) {
        self.backbone.collect_buffers_mut(out);
    }
}

/// Backbone from a pre-training checkpoint plus a fresh linear head drawn
/// from `seed`.
pub fn build_classifier(checkpoint: &Checkpoint, num_classes: usize, freeze_backbone: bool, seed: u64) -> Result<Classifier> {
    if num_classes < 2 {
        return Err(Error::Config(format!("a classifier needs at least 2 classes, got {num_classes}")));
    }
    let model: SimSiam = checkpoint.to_model()?;
    let backbone = model.encoder.backbone;
    let mut r = rng::stream(seed, &[tag::HEAD_INIT]);
    let head = Linear::new("head", backbone.feature_dim(), num_classes, true, &mut r);
    Ok(Classifier {
        backbone,
        head,
        frozen: freeze_backbone,
    })
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (n, c) = logits.dim();
    if n != labels.len() || n == 0 {
        return Err(Error::Dimension(format!("{n} logit rows for {} labels", labels.len())));
    }
    let mut grad = Array2::zeros((n, c));
    let mut loss = 0.0;
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let y = labels[i];
        if y >= c {
            return Err(Error::Validation(format!("label {y} out of range for {c} classes")));
        }
        loss -= row[y] - max - denom.ln();
        for j in 0..c {
            let p = (row[j] - max).exp() / denom;
            grad[[i, j]] = (p - if j == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.axis_iter(Axis(0))
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect()
}

/// Fraction of correct predictions over all samples.
pub fn global_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("accuracy of an empty prediction set".into()));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Accuracy per class; `None` for classes with no samples.
pub fn per_class_accuracy(predictions: &[usize], labels: &[usize], num_classes: usize) -> Vec<Option<f64>> {
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (p, &l) in predictions.iter().zip(labels) {
        totals[l] += 1;
        if *p == l {
            hits[l] += 1;
        }
    }
    hits.iter()
        .zip(&totals)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect()
}

fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    100
}

/// Optimizer and schedule settings shared by both transfer protocols.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub plateau: PlateauConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
}

impl TransferConfig {
    pub fn finetune() -> Self {
        TransferConfig {
            batch_size: default_batch(),
            optimizer: AdamConfig::with_lr(1e-4),
            plateau: PlateauConfig::default(),
            epochs: default_epochs(),
        }
    }

    pub fn linear() -> Self {
        TransferConfig {
            optimizer: AdamConfig::with_lr(1e-2),
            ..TransferConfig::finetune()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        self.optimizer.validate()?;
        self.plateau.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub seed: u64,
    pub global_accuracy: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub config_hash: String,
    pub checkpoint_hash: String,
    pub train_samples: usize,
    pub best_val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub mean_accuracy: f64,
    /// Sample standard deviation; 0 when only one run exists.
    pub std_accuracy: f64,
    /// False when `n_runs == 1` and the deviation is undefined.
    pub std_defined: bool,
    pub n_runs: usize,
    pub run_ids: Vec<String>,
}

/// Mean and sample standard deviation of global accuracy over runs that
/// share one configuration.
pub fn aggregate_runs(results: &[RunResult]) -> Result<AggregateResult> {
    let first = results.first().ok_or_else(|| Error::Empty("no runs to aggregate".into()))?;
    if let Some(other) = results.iter().find(|r| r.config_hash != first.config_hash) {
        return Err(Error::Validation(format!(
            "run `{}` has config hash {} but `{}` has {}",
            other.run_id, other.config_hash, first.run_id, first.config_hash
        )));
    }
    let n = results.len() as f64;
    let mean = results.iter().map(|r| r.global_accuracy).sum::<f64>() / n;
    let (std, defined) = if results.len() > 1 {
        let ss: f64 = results.iter().map(|r| (r.global_accuracy - mean).powi(2)).sum();
        ((ss / (n - 1.0)).sqrt(), true)
    } else {
        (0.0, false)
    };
    Ok(AggregateResult {
        mean_accuracy: mean,
        std_accuracy: std,
        std_defined: defined,
        n_runs: results.len(),
        run_ids: results.iter().map(|r| r.run_id.clone()).collect(),
    })
}

/// Identifies a protocol configuration; the run seed is deliberately left
/// out so that repeats of one experiment share a hash.
pub fn config_hash<T: Serialize>(protocol: &str, config: &T) -> Result<String> {
    let mut h = Sha256::new();
    h.update(protocol.as_bytes());
    h.update(serde_json::to_vec(config)?);
    Ok(hex::encode(h.finalize()))
}

/// Everything a transfer run reads.
pub struct TransferData<'a> {
    pub images: &'a LabeledImages,
    pub split: &'a SplitSpec,
    pub recipe: &'a EvalRecipe,
}

fn batch_tensor(data: &TransferData<'_>, ids: &[usize], split: Split, seed: u64, epoch: u64) -> Result<FeatureMap> {
    let views = ids
        .par_iter()
        .map(|&i| {
            let mut r = rng::stream(seed, &[tag::AUGMENT, epoch, i as u64]);
            eval_transform(&data.images.images[i], data.recipe, split, &data.images.name, &mut r)
        })
        .collect::<Vec<_>>();
    FeatureMap::stack(&views)
}

fn predict_split(clf: &mut Classifier, data: &TransferData<'_>, ids: &[usize], batch: usize) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(batch.max(1)) {
        let x = batch_tensor(data, chunk, Split::Test, 0, 0)?;
        preds.extend(clf.predict(&x)?);
    }
    Ok(preds)
}

fn snapshot(clf: &Classifier) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    (
        clf.params().iter().map(|p| p.value.clone()).collect(),
        clf.buffers().iter().map(|b| b.value.clone()).collect(),
    )
}

fn restore(clf: &mut Classifier, snap: &(Vec<Vec<f64>>, Vec<Vec<f64>>)) {
    for (p, v) in clf.params_mut().into_iter().zip(&snap.0) {
        p.value.copy_from_slice(v);
    }
    for (b, v) in clf.buffers_mut().into_iter().zip(&snap.1) {
        b.value.copy_from_slice(v);
    }
}

/// Trains on `train_ids`, selects the epoch with the best validation
/// accuracy, and scores it on the test split.
fn train_and_evaluate(
    clf: &mut Classifier,
    data: &TransferData<'_>,
    train_ids: &[usize],
    config: &TransferConfig,
    seed: u64,
) -> Result<(f64, Vec<Option<f64>>, f64)> {
    config.validate()?;
    let val_ids = data.split.indices(Split::Val);
    let test_ids = data.split.indices(Split::Test);
    for (name, ids) in [("train", train_ids), ("validation", &val_ids[..]), ("test", &test_ids[..])] {
        if ids.is_empty() {
            return Err(Error::Empty(format!("{name} split is empty")));
        }
    }
    let labels = &data.split.labels;
    let mut opt = Adam::new(&config.optimizer);
    let mut plateau = ReduceOnPlateau::new(config.plateau, config.optimizer.lr);
    let mut order = train_ids.to_vec();
    let mut best: Option<(f64, (Vec<Vec<f64>>, Vec<Vec<f64>>))> = None;
    let min_batch = if clf.is_frozen() { 1 } else { 2 };

    for epoch in 0..config.epochs as u64 {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(seed, &[tag::SHUFFLE, epoch]));
        let lr = plateau.lr();
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < min_batch {
                continue;
            }
            let x = batch_tensor(data, chunk, Split::Train, seed, epoch)?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            clf.zero_grad();
            let loss = clf.train_step(&x, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss {loss} at epoch {epoch}")));
            }
            opt.step(&mut clf.trainable_params_mut(), lr)?;
        }
        let val_labels: Vec<usize> = val_ids.iter().map(|&i| labels[i]).collect();
        let val_acc = global_accuracy(&predict_split(clf, data, &val_ids, config.batch_size)?, &val_labels)?;
        plateau.observe(val_acc);
        if best.as_ref().is_none_or(|(b, _)| val_acc > *b) {
            best = Some((val_acc, snapshot(clf)));
        }
    }
    let (best_val, snap) = best.expect("at least one epoch");
    restore(clf, &snap);
    let test_labels: Vec<usize> = test_ids.iter().map(|&i| labels[i]).collect();
    let preds = predict_split(clf, data, &test_ids, config.batch_size)?;
    let acc = global_accuracy(&preds, &test_labels)?;
    Ok((acc, per_class_accuracy(&preds, &test_labels, data.split.num_classes()), best_val))
}

fn check_data(data: &TransferData<'_>) -> Result<()> {
    if data.images.len() != data.split.labels.len() || data.images.labels != data.split.labels {
        return Err(Error::Validation("split labels do not match the image set".into()));
    }
    data.recipe.validate()
}

/// Full fine-tuning: every parameter trains.
pub fn finetune(checkpoint: &Checkpoint, data: &TransferData<'_>, config: &TransferConfig, seed: u64) -> Result<RunResult> {
    check_data(data)?;
    let mut clf = build_classifier(checkpoint, data.split.num_classes(), false, seed)?;
    let train_ids = data.split.indices(Split::Train);
    let (acc, per_class, best_val) = train_and_evaluate(&mut clf, data, &train_ids, config, seed)?;
    let hash = config_hash("finetune", &(config, &data.images.name, data.recipe))?;
    Ok(RunResult {
        run_id: format!("finetune-{}-seed{seed}", &hash[..12]),
        seed,
        global_accuracy: acc,
        per_class_accuracy: per_class,
        config_hash: hash,
        checkpoint_hash: checkpoint.content_hash(),
        train_samples: train_ids.len(),
        best_val_accuracy: best_val,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearEvalConfig {
    pub shots: usize,
    pub train: TransferConfig,
}

/// Linear evaluation with a frozen backbone on `shots` training samples per
/// class, re-drawn from the training split for every seed.
pub fn linear_eval(checkpoint: &Checkpoint, data: &TransferData<'_>, config: &LinearEvalConfig, seed: u64) -> Result<RunResult> {
    check_data(data)?;
    let mut clf = build_classifier(checkpoint, data.split.num_classes(), true, seed)?;
    linear_eval_with(&mut clf, checkpoint.content_hash(), data, config, seed)
}

/// As [`linear_eval`], on a classifier the caller owns, so that its backbone
/// can be inspected afterwards.
pub fn linear_eval_with(
    clf: &mut Classifier,
    checkpoint_hash: String,
    data: &TransferData<'_>,
    config: &LinearEvalConfig,
    seed: u64,
) -> Result<RunResult> {
    if !clf.is_frozen() {
        return Err(Error::Config("linear evaluation requires a frozen backbone".into()));
    }
    let shots = few_shot_sample(data.split, config.shots, seed)?;
    let (acc, per_class, best_val) = train_and_evaluate(clf, data, &shots.indices, &config.train, seed)?;
    let hash = config_hash("linear_eval", &(config, &data.images.name, data.recipe))?;
    Ok(RunResult {
        run_id: format!("lineval-{}-seed{seed}", &hash[..12]),
        seed,
        global_accuracy: acc,
        per_class_accuracy: per_class,
        config_hash: hash,
        checkpoint_hash,
        train_samples: shots.indices.len(),
        best_val_accuracy: best_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn accuracy_examples() {
        assert_eq!(global_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(global_accuracy(&[0, 1, 1, 1], &[0, 0, 0, 0]).unwrap(), 0.25);
        assert!(global_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = array![[0.2, -1.0, 0.5], [1.5, 0.3, -0.2]];
        let labels = [2, 0];
        let (_, g) = cross_entropy(&logits, &labels).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut up = logits.clone();
                up[[i, j]] += h;
                let mut down = logits.clone();
                down[[i, j]] -= h;
                let fd = (cross_entropy(&up, &labels).unwrap().0 - cross_entropy(&down, &labels).unwrap().0) / (2.0 * h);
                assert!((fd - g[[i, j]]).abs() < 1e-8);
            }
        }
    }

    fn run(acc: f64, hash: &str, id: &str) -> RunResult {
        RunResult {
            run_id: id.into(),
            seed: 0,
            global_accuracy: acc,
            per_class_accuracy: vec![],
            config_hash: hash.into(),
            checkpoint_hash: String::new(),
            train_samples: 0,
            best_val_accuracy: 0.0,
        }
    }

    #[test]
    fn aggregation() {
        let runs: Vec<_> = (1..=5).map(|i| run(i as f64, "h", &format!("r{i}"))).collect();
        let agg = aggregate_runs(&runs).unwrap();
        assert_eq!(agg.mean_accuracy, 3.0);
        assert!((agg.std_accuracy - 2.5f64.sqrt()).abs() < 1e-12);
        let single = aggregate_runs(&runs[..1]).unwrap();
        assert_eq!((single.mean_accuracy, single.std_accuracy, single.std_defined), (1.0, 0.0, false));
        let mixed = [run(1.0, "a", "x"), run(2.0, "b", "y")];
        assert!(aggregate_runs(&mixed).is_err());
    }
}

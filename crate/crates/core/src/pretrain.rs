//! The self-supervised pre-training loop.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{make_ssl_views, SslRecipe};
use crate::checkpoint::Checkpoint;
use crate::data::LabeledImages;
use crate::error::{Error, Result};
use crate::loss::{collapse_statistic, LossValue, StopGradient};
use crate::model::{EncoderSpec, PredictorSpec, SimSiam, ViewPair};
use crate::nn::{FeatureMap, Mode, Module};
use crate::optim::{MomentumSgd, MultiStepSchedule};
use crate::rng::{self, tag};

/// Where the backbone weights come from before training starts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Init {
    #[default]
    Random,
    ExternalWeights { path: PathBuf },
}

fn default_batch() -> usize {
    128
}
fn default_base_lr() -> f64 {
    0.05
}
fn default_momentum() -> f64 {
    0.9
}
fn default_wd() -> f64 {
    1e-5
}
fn default_total() -> u64 {
    100_000
}
fn default_checkpoint_every() -> u64 {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_total")]
    pub total_iterations: u64,
    /// Defaults to drops of 10x at 60% and 80% of training.
    #[serde(default)]
    pub schedule: Option<MultiStepSchedule>,
    #[serde(default)]
    pub init: Init,
    #[serde(default)]
    pub seed: u64,
    /// Zero disables periodic checkpoints; the final one is always written.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    /// Substrings of parameter names exempt from weight decay.
    #[serde(default)]
    pub no_decay: Vec<String>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            batch_size: default_batch(),
            base_lr: default_base_lr(),
            momentum: default_momentum(),
            weight_decay: default_wd(),
            total_iterations: default_total(),
            schedule: None,
            init: Init::Random,
            seed: 0,
            checkpoint_every: default_checkpoint_every(),
            no_decay: Vec::new(),
        }
    }
}

impl PretrainConfig {
    pub fn schedule(&self) -> MultiStepSchedule {
        self.schedule
            .clone()
            .unwrap_or_else(|| MultiStepSchedule::two_drop(self.total_iterations))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size {} is too small; batch statistics need at least 2",
                self.batch_size
            )));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if self.total_iterations == 0 {
            return Err(Error::Config("total_iterations must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "momentum {} must lie in [0, 1) and weight_decay {} must be non-negative",
                self.momentum, self.weight_decay
            )));
        }
        self.schedule().validate(self.total_iterations)
    }
}

pub fn lr_at(config: &PretrainConfig, iteration: u64) -> f64 {
    config.schedule().lr_at(config.base_lr, iteration)
}

/// Builds a model. Heads are always freshly initialized from `seed`; with
/// external weights the backbone is then overwritten from the checkpoint.
pub fn init_model(encoder: &EncoderSpec, predictor: &PredictorSpec, init: &Init, seed: u64) -> Result<SimSiam> {
    let mut model = SimSiam::new(encoder.clone(), predictor.clone(), seed)?;
    if let Init::ExternalWeights { path } = init {
        if !path.is_file() {
            return Err(Error::Config(format!("external weights {} do not exist", path.display())));
        }
        Checkpoint::load(path)?.load_backbone_into(&mut model.encoder)?;
    }
    Ok(model)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub iteration: u64,
    pub current_lr: f64,
    pub last_loss: LossValue,
    pub collapse_stat: f64,
}

/// One line of the loss trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
    pub collapse_stat: f64,
    pub wall_ms: u64,
}

impl TraceRecord {
    /// Everything except the wall-clock time.
    pub fn same_values(&self, other: &TraceRecord) -> bool {
        self.iteration == other.iteration
            && self.lr.to_bits() == other.lr.to_bits()
            && self.loss.to_bits() == other.loss.to_bits()
            && self.collapse_stat.to_bits() == other.collapse_stat.to_bits()
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOptions {
    pub stop_gradient: StopGradient,
    /// Directory for checkpoints and `trace.jsonl`; nothing is written when
    /// absent.
    pub output_dir: Option<PathBuf>,
    pub dataset_name: String,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        PretrainOptions {
            stop_gradient: StopGradient::Enabled,
            output_dir: None,
            dataset_name: "unnamed".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SavedCheckpoint {
    pub iteration: u64,
    pub path: PathBuf,
    pub hash: String,
}

#[derive(Debug)]
pub struct PretrainOutcome {
    pub trace: Vec<TraceRecord>,
    pub state: TrainState,
    pub checkpoints: Vec<SavedCheckpoint>,
    pub final_checkpoint: Checkpoint,
}

/// Sample order for one iteration: epochs are fresh seeded permutations,
/// consumed `batch_size` at a time with the incomplete tail dropped.
fn batch_indices(n: usize, batch: usize, seed: u64, iteration: u64) -> Vec<usize> {
    let per_epoch = (n / batch) as u64;
    let (epoch, slot) = (iteration / per_epoch, (iteration % per_epoch) as usize);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::BATCH, epoch]));
    order[slot * batch..(slot + 1) * batch].to_vec()
}

fn build_views(data: &LabeledImages, ids: &[usize], recipe: &SslRecipe, seed: u64, iteration: u64) -> Result<ViewPair> {
    let views = ids
        .par_iter()
        .enumerate()
        .map(|(pos, &i)| {
            let mut r = rng::stream(seed, &[tag::AUGMENT, iteration, pos as u64]);
            make_ssl_views(&data.images[i], recipe, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    let (a, b): (Vec<_>, Vec<_>) = views.into_iter().unzip();
    ViewPair::new(FeatureMap::stack(&a)?, FeatureMap::stack(&b)?)
}

fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("checkpoint_{iteration:08}.gssl"))
}

/// Runs `config.total_iterations` momentum-SGD steps on the symmetric loss.
pub fn pretrain(
    model: &mut SimSiam,
    data: &LabeledImages,
    recipe: &SslRecipe,
    config: &PretrainConfig,
    options: &PretrainOptions,
) -> Result<PretrainOutcome> {
    config.validate()?;
    recipe.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("pre-training dataset has no images".into()));
    }
    if data.len() < config.batch_size {
        return Err(Error::Config(format!(
            "dataset has {} images, fewer than batch_size {}",
            data.len(),
            config.batch_size
        )));
    }
    let mut trace_out = match &options.output_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("trace.jsonl");
            Some(BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?))
        }
        None => None,
    };

    let mut opt = MomentumSgd::new(config.momentum, config.weight_decay, config.no_decay.clone());
    let mut trace = Vec::with_capacity(config.total_iterations as usize);
    let mut checkpoints = Vec::new();
    let mut state = TrainState {
        iteration: 0,
        current_lr: config.base_lr,
        last_loss: LossValue(0.0),
        collapse_stat: 0.0,
    };
    let start = Instant::now();

    for it in 0..config.total_iterations {
        let lr = lr_at(config, it);
        let ids = batch_indices(data.len(), config.batch_size, config.seed, it);
        let views = build_views(data, &ids, recipe, config.seed, it)?;
        model.zero_grad();
        let out = model.forward_backward(&views, Mode::Train, options.stop_gradient)?;
        let collapse = collapse_statistic(&out.forward.z1)?;
        let loss = out.loss.value();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss {loss} at iteration {it}; batch ids {ids:?}; collapse statistic {collapse}"
            )));
        }
        opt.step(&mut model.params_mut(), lr).map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!(
                "{msg} at iteration {it}; batch ids {ids:?}; collapse statistic {collapse}"
            )),
            other => other,
        })?;

        state = TrainState {
            iteration: it + 1,
            current_lr: lr,
            last_loss: out.loss,
            collapse_stat: collapse,
        };
        let record = TraceRecord {
            iteration: it,
            lr,
            loss,
            collapse_stat: collapse,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        if let Some(w) = trace_out.as_mut() {
            let line = serde_json::to_string(&record)?;
            writeln!(w, "{line}").map_err(|e| Error::io("trace.jsonl", e))?;
        }
        trace.push(record);

        let done = it + 1;
        if let Some(dir) = &options.output_dir {
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.total_iterations {
                let path = checkpoint_path(dir, done);
                let hash = Checkpoint::from_model(model, done, &options.dataset_name).save(&path)?;
                log::info!("iteration {done}: loss {loss:.4}, checkpoint {}", path.display());
                checkpoints.push(SavedCheckpoint {
                    iteration: done,
                    path,
                    hash,
                });
            }
        }
    }

    let final_checkpoint = Checkpoint::from_model(model, config.total_iterations, &options.dataset_name);
    if let Some(dir) = &options.output_dir {
        let path = dir.join("final.gssl");
        let hash = final_checkpoint.save(&path)?;
        checkpoints.push(SavedCheckpoint {
            iteration: config.total_iterations,
            path,
            hash,
        });
    }
    if let Some(mut w) = trace_out {
        w.flush().map_err(|e| Error::io("trace.jsonl", e))?;
    }
    Ok(PretrainOutcome {
        trace,
        state,
        checkpoints,
        final_checkpoint,
    })
}

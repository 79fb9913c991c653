//! Experiment configuration file.
//!
//! One TOML file describes a whole experiment. Every section is optional and
//! falls back to the reference settings; the resolved file written next to
//! the outputs spells out every value. Relative paths are taken relative to
//! the config file, and a leading `$VAR` or `${VAR}` in a path is expanded
//! from the environment.

use std::fs;
use std::path::{Path, PathBuf};

use geossl_core::augment::{EvalRecipe, SslRecipe};
use geossl_core::data::synthetic::SyntheticSpec;
use geossl_core::data::SplitRatios;
use geossl_core::model::{EncoderSpec, PredictorSpec};
use geossl_core::pretrain::{Init, PretrainConfig};
use geossl_core::transfer::TransferConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SYNTHETIC: &str = "synthetic";

fn default_id() -> String {
    "experiment".into()
}
fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}
fn default_shots() -> Vec<usize> {
    vec![5, 10, 20, 50]
}
fn default_out() -> PathBuf {
    PathBuf::from("runs")
}
fn default_synthetic() -> SyntheticSpec {
    SyntheticSpec::two_cluster(150, 24)
}
fn default_finetune() -> TransferConfig {
    TransferConfig::finetune()
}
fn default_linear() -> TransferConfig {
    TransferConfig::linear()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_id")]
    pub experiment_id: String,
    /// Seeds of the repeated transfer runs.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub ssl_recipe: SslRecipe,
    #[serde(default)]
    pub eval_recipe: EvalRecipe,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default = "default_finetune")]
    pub finetune: TransferConfig,
    #[serde(default)]
    pub lineval: LinevalSection,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Manifest path, or `"synthetic"`.
    #[serde(default)]
    pub pretrain: Option<String>,
    #[serde(default)]
    pub downstream: Option<String>,
    #[serde(default)]
    pub split: SplitRatios,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_synthetic")]
    pub synthetic: SyntheticSpec,
    /// Image seed of the synthetic pre-training set; the downstream set uses
    /// the next seed so that the two never share images.
    #[serde(default)]
    pub synthetic_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            pretrain: None,
            downstream: None,
            split: SplitRatios::default(),
            split_seed: 0,
            synthetic: default_synthetic(),
            synthetic_seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub encoder: EncoderSpec,
    #[serde(default)]
    pub predictor: PredictorSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinevalSection {
    #[serde(default = "default_shots")]
    pub shots: Vec<usize>,
    #[serde(default = "default_linear")]
    pub train: TransferConfig,
}

impl Default for LinevalSection {
    fn default() -> Self {
        LinevalSection {
            shots: default_shots(),
            train: default_linear(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    /// Defaults to `metrics.jsonl` inside `dir`.
    #[serde(default)]
    pub store: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_out(),
            store: None,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

/// Expands a leading `$VAR/` or `${VAR}/` and anchors relative paths at `base`.
pub fn resolve_path(path: &Path, base: &Path) -> Result<PathBuf, CliError> {
    let text = path.to_string_lossy();
    let expanded = match text.strip_prefix('$') {
        Some(rest) => {
            let (name, tail) = match rest.strip_prefix('{') {
                Some(r) => {
                    let end = r.find('}').ok_or_else(|| CliError::usage(format!("unterminated `${{` in path `{text}`")))?;
                    (&r[..end], &r[end + 1..])
                }
                None => {
                    let end = rest.find(['/', '\\']).unwrap_or(rest.len());
                    (&rest[..end], &rest[end..])
                }
            };
            let value = std::env::var(name)
                .map_err(|_| CliError::usage(format!("environment variable `{name}` used in path `{text}` is not set")))?;
            PathBuf::from(format!("{value}{tail}"))
        }
        None => path.to_path_buf(),
    };
    Ok(if expanded.is_absolute() { expanded } else { base.join(expanded) })
}

fn field(name: &'static str) -> impl Fn(geossl_core::Error) -> CliError {
    move |e| CliError::usage(format!("[{name}] {e}"))
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::usage(format!("{}: {e}", origin.display())))
    }

    /// Reads a config file and anchors its paths at the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = ExperimentConfig::parse(&text, path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.anchor_paths(&base)?;
        Ok(cfg)
    }

    pub fn anchor_paths(&mut self, base: &Path) -> Result<(), CliError> {
        for source in [&mut self.data.pretrain, &mut self.data.downstream].into_iter().flatten() {
            if source != SYNTHETIC {
                *source = resolve_path(Path::new(source), base)?.to_string_lossy().into_owned();
            }
        }
        self.output.dir = resolve_path(&self.output.dir, base)?;
        if let Some(s) = &mut self.output.store {
            *s = resolve_path(s, base)?;
        }
        if let Init::ExternalWeights { path } = &mut self.pretrain.init {
            *path = resolve_path(path, base)?;
        }
        Ok(())
    }

    /// Fills values that are otherwise derived at run time, so that the
    /// dumped file reproduces the run by itself.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.pretrain.schedule = Some(self.pretrain.schedule());
        out.output.store = Some(self.store_path());
        out
    }

    pub fn store_path(&self) -> PathBuf {
        self.output.store.clone().unwrap_or_else(|| self.output.dir.join("metrics.jsonl"))
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.output.dir.join(&self.experiment_id)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every section; the error names the offending field.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.experiment_id.is_empty()
            || !self.experiment_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return Err(CliError::usage(format!(
                "experiment_id `{}` must be non-empty and use only letters, digits, `-`, `_` and `.`",
                self.experiment_id
            )));
        }
        if self.seeds.is_empty() {
            return Err(CliError::usage("seeds must list at least one seed"));
        }
        self.model.encoder.validate().map_err(field("model.encoder"))?;
        self.model.predictor.validate().map_err(field("model.predictor"))?;
        if self.model.predictor.in_dim != self.model.encoder.proj_out_dim {
            return Err(CliError::usage(format!(
                "[model] predictor.in_dim {} must equal encoder.proj_out_dim {}",
                self.model.predictor.in_dim, self.model.encoder.proj_out_dim
            )));
        }
        if self.ssl_recipe.crop_size as usize != self.model.encoder.backbone.input_size {
            return Err(CliError::usage(format!(
                "[ssl_recipe] crop_size {} must equal model.encoder.backbone.input_size {}",
                self.ssl_recipe.crop_size, self.model.encoder.backbone.input_size
            )));
        }
        if self.eval_recipe.center_crop as usize != self.model.encoder.backbone.input_size {
            return Err(CliError::usage(format!(
                "[eval_recipe] center_crop {} must equal model.encoder.backbone.input_size {}",
                self.eval_recipe.center_crop, self.model.encoder.backbone.input_size
            )));
        }
        self.ssl_recipe.validate().map_err(field("ssl_recipe"))?;
        self.eval_recipe.validate().map_err(field("eval_recipe"))?;
        self.pretrain.validate().map_err(field("pretrain"))?;
        self.finetune.validate().map_err(field("finetune"))?;
        self.lineval.train.validate().map_err(field("lineval.train"))?;
        if self.lineval.shots.is_empty() || self.lineval.shots.contains(&0) {
            return Err(CliError::usage("[lineval] shots must be a non-empty list of positive counts"));
        }
        self.data.split.validate().map_err(field("data.split"))?;
        self.data.synthetic.validate().map_err(field("data.synthetic"))?;
        Ok(())
    }
}

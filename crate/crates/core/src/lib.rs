//! Self-supervised in-domain pre-training for remote-sensing scene
//! classification with SimSiam, plus the downstream transfer protocols
//! (full fine-tuning and few-shot linear evaluation), dataset class-overlap
//! analysis, and result reporting.
//!
//! Everything runs on the CPU in `f64` with hand-written backward passes.
//! A ResNet-50 backbone is available for reference-scale runs; the toy CNN
//! backbone is what the tests and desk-scale experiments use.

pub mod augment;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod loss;
pub mod model;
pub mod nn;
pub mod optim;
pub mod presets;
pub mod pretrain;
pub mod report;
pub mod rng;
pub mod transfer;

pub use error::{Error, Result};
pub use loss::{collapse_statistic, negative_cosine, stop_gradient, symmetric_loss, LossValue, StopGradient};
pub use model::{build_encoder, build_predictor, EncoderSpec, PredictorSpec, SimSiam, SimSiamForward, ViewPair};
pub use nn::{BackboneKind, BackboneSpec, FeatureMap, Mode, Module};
pub use augment::{EvalRecipe, SslRecipe, Split};
pub use checkpoint::Checkpoint;
pub use data::{ClassCatalog, DatasetManifest, LabeledImages, SplitSpec};
pub use pretrain::{pretrain, PretrainConfig, PretrainOptions};
pub use report::{MetricsRecord, MetricsStore};
pub use transfer::{aggregate_runs, finetune, linear_eval, AggregateResult, RunResult, TransferConfig};

//! Desk-scale settings: a small CNN on 16×16 crops of synthetic 24×24
//! scenes. Used by the tests, the benches and the example configs.

use crate::augment::{EvalRecipe, Normalization, SslRecipe};
use crate::data::synthetic::SyntheticSpec;
use crate::model::{EncoderSpec, PredictorSpec};
use crate::nn::BackboneSpec;
use crate::optim::MultiStepSchedule;
use crate::pretrain::PretrainConfig;
use crate::transfer::TransferConfig;

pub const TOY_IMAGE: u32 = 24;
pub const TOY_CROP: u32 = 16;
pub const TOY_EMBEDDING: usize = 16;

pub fn toy_encoder() -> EncoderSpec {
    EncoderSpec {
        backbone: BackboneSpec::toy(TOY_CROP as usize, vec![8, 16]),
        proj_hidden: vec![TOY_EMBEDDING, TOY_EMBEDDING],
        proj_out_dim: TOY_EMBEDDING,
        batchnorm_on_output: true,
    }
}

pub fn toy_predictor() -> PredictorSpec {
    PredictorSpec::for_embedding(TOY_EMBEDDING, TOY_EMBEDDING / 2)
}

/// Inputs are synthetic, so normalization is a fixed affine map rather
/// than dataset statistics.
pub fn toy_normalization() -> Normalization {
    Normalization {
        mean: [0.5; 3],
        std: [0.25; 3],
    }
}

/// The default recipe at 16-pixel crops. Blur is off: its sigma range is
/// meant for 224-pixel crops and at this size it erases the textures.
pub fn toy_ssl_recipe() -> SslRecipe {
    SslRecipe {
        crop_size: TOY_CROP,
        blur_prob: 0.0,
        normalization: toy_normalization(),
        ..SslRecipe::default()
    }
}

pub fn toy_eval_recipe() -> EvalRecipe {
    EvalRecipe {
        resize_to: TOY_IMAGE,
        center_crop: TOY_CROP,
        normalization: toy_normalization(),
        ..EvalRecipe::default()
    }
}

/// Constant learning rate 0.1, batch 32.
pub fn toy_pretrain(total_iterations: u64, seed: u64) -> PretrainConfig {
    PretrainConfig {
        batch_size: 32,
        base_lr: 0.1,
        total_iterations,
        schedule: Some(MultiStepSchedule {
            milestones: Vec::new(),
            gamma: 0.1,
        }),
        seed,
        checkpoint_every: 0,
        ..PretrainConfig::default()
    }
}

pub fn toy_linear(epochs: usize) -> TransferConfig {
    TransferConfig {
        batch_size: 32,
        epochs,
        optimizer: crate::optim::AdamConfig::with_lr(0.05),
        ..TransferConfig::linear()
    }
}

/// Horizontal versus vertical stripes under half-strength colour clutter.
pub fn toy_synthetic(per_class: usize) -> SyntheticSpec {
    SyntheticSpec {
        nuisance: 0.5,
        ..SyntheticSpec::two_cluster(per_class, TOY_IMAGE)
    }
}

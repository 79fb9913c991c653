//! Minimal neural-network building blocks with hand-written backward passes.
//!
//! Layers return an explicit cache from `forward` and consume it in
//! `backward`, so one parameter set can be run on several inputs (the two
//! siamese branches) before gradients are propagated.

pub mod backbone;
pub mod layers;
pub mod param;
pub mod tensor;

pub use backbone::{Backbone, BackboneCache, BackboneKind, BackboneSpec, ResNetLayout};
pub use layers::{BatchNorm, Conv2d, Linear, Mode};
pub use param::{Buffer, Module, Param, TensorMeta};
pub use tensor::{FeatureMap, ImageTensor};

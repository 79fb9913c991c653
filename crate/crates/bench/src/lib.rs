//! Shared fixtures for the criterion benchmarks.

use geossl_core::augment::make_ssl_views;
use geossl_core::data::synthetic::generate;
use geossl_core::data::LabeledImages;
use geossl_core::model::{SimSiam, ViewPair};
use geossl_core::nn::FeatureMap;
use geossl_core::presets::{toy_encoder, toy_predictor, toy_ssl_recipe, toy_synthetic};
use geossl_core::pretrain::{init_model, Init};
use geossl_core::rng;

pub fn toy_model(seed: u64) -> SimSiam {
    init_model(&toy_encoder(), &toy_predictor(), &Init::Random, seed).expect("toy model")
}

pub fn toy_images(per_class: usize) -> LabeledImages {
    generate(&toy_synthetic(per_class), 0).expect("synthetic images")
}

/// Augmented view pairs for the first `batch` images.
pub fn toy_views(images: &LabeledImages, batch: usize, seed: u64) -> ViewPair {
    let recipe = toy_ssl_recipe();
    let (a, b): (Vec<_>, Vec<_>) = images.images[..batch]
        .iter()
        .enumerate()
        .map(|(i, img)| make_ssl_views(img, &recipe, &mut rng::stream(seed, &[i as u64])).expect("views"))
        .unzip();
    ViewPair::new(FeatureMap::stack(&a).unwrap(), FeatureMap::stack(&b).unwrap()).unwrap()
}

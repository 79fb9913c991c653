//! Procedurally generated scenes for tests and desk-scale experiments.
//!
//! Each class is a stripe texture at a fixed orientation. Every image also
//! carries strong class-independent nuisance: a slightly tinted base colour
//! under several large coloured blobs at random places. Local colour thus
//! changes from crop to crop and says nothing about the class, while
//! orientation, which survives cropping, jitter and horizontal flips, says
//! everything.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::Rgb;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::images::LabeledImages;
use crate::augment::RgbImage;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

const BLOBS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub image_size: u32,
    /// Stripe contrast relative to the nuisance terms.
    #[serde(default = "default_amplitude")]
    pub stripe_amplitude: f64,
    /// Stripe period range in pixels.
    #[serde(default = "default_period")]
    pub period: (f64, f64),
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Scale of the colour, illumination and blob nuisance terms.
    #[serde(default = "default_nuisance")]
    pub nuisance: f64,
}

fn default_amplitude() -> f64 {
    0.12
}
fn default_period() -> (f64, f64) {
    (3.0, 6.0)
}
fn default_noise() -> f64 {
    0.05
}
fn default_nuisance() -> f64 {
    1.0
}

impl SyntheticSpec {
    /// Horizontal versus vertical stripes.
    pub fn two_cluster(per_class: usize, image_size: u32) -> Self {
        SyntheticSpec {
            classes: 2,
            per_class,
            image_size,
            stripe_amplitude: default_amplitude(),
            period: default_period(),
            noise: default_noise(),
            nuisance: default_nuisance(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("synthetic data needs at least 2 classes".into()));
        }
        if self.per_class == 0 || self.image_size < 8 {
            return Err(Error::Config("synthetic per_class must be positive and image_size >= 8".into()));
        }
        if !(self.period.0 > 1.0 && self.period.0 <= self.period.1) {
            return Err(Error::Config(format!("synthetic period range {:?} is invalid", self.period)));
        }
        Ok(())
    }

    /// Stripe orientation of class `k`, spread over `[0, π/2]` so that a
    /// horizontal flip never maps one class onto another.
    pub fn orientation(&self, k: usize) -> f64 {
        k as f64 * (PI / 2.0) / (self.classes - 1) as f64
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes)
            .map(|k| format!("orientation_{:02}", (self.orientation(k).to_degrees()).round() as u32))
            .collect()
    }
}

fn render(spec: &SyntheticSpec, class: usize, rng: &mut rng::Rng) -> RgbImage {
    let size = spec.image_size as f64;
    let theta = spec.orientation(class);
    let (dx, dy) = (theta.sin(), theta.cos());
    let period = rng.random_range(spec.period.0..=spec.period.1);
    let phase = rng.random_range(0.0..2.0 * PI);
    let s = spec.nuisance;
    let base: [f64; 3] = std::array::from_fn(|_| 0.5 + s * rng.random_range(-0.1..0.1));
    let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..BLOBS)
        .map(|_| {
            let centre = [rng.random_range(0.0..size), rng.random_range(0.0..size)];
            let radius = rng.random_range(0.1..0.25) * size;
            let tint = std::array::from_fn(|_| s * rng.random_range(-0.4..0.4));
            (centre, radius, tint)
        })
        .collect();
    let mut img = RgbImage::new(spec.image_size, spec.image_size);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (xf, yf) = (x as f64, y as f64);
        let stripe = spec.stripe_amplitude * (2.0 * PI * (xf * dx + yf * dy) / period + phase).sin();
        let mut colour = base;
        for (centre, radius, tint) in &blobs {
            let d2 = (xf - centre[0]).powi(2) + (yf - centre[1]).powi(2);
            let w = (-d2 / (2.0 * radius * radius)).exp();
            for c in 0..3 {
                colour[c] += w * tint[c];
            }
        }
        let values: [f32; 3] = std::array::from_fn(|c| {
            let noise = spec.noise * rng.random_range(-1.0..1.0);
            (colour[c] + stripe + noise).clamp(0.0, 1.0) as f32
        });
        *px = Rgb(values);
    }
    img
}

/// Generates `classes × per_class` images, class-major. Images are a pure
/// function of `(spec, seed)`.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<LabeledImages> {
    spec.validate()?;
    let mut images = Vec::with_capacity(spec.classes * spec.per_class);
    let mut labels = Vec::with_capacity(images.capacity());
    for class in 0..spec.classes {
        for i in 0..spec.per_class {
            let mut r = rng::stream(seed, &[tag::SYNTHETIC, class as u64, i as u64]);
            images.push(render(spec, class, &mut r));
            labels.push(class);
        }
    }
    LabeledImages::new("synthetic", spec.class_names(), images, labels)
}

/// Writes a generated dataset as PNG files in a directory-per-class layout
/// under `dir`, with a `manifest.toml` next to them. Returns the manifest path.
pub fn write_dataset(spec: &SyntheticSpec, seed: u64, dir: &Path) -> Result<std::path::PathBuf> {
    let data = generate(spec, seed)?;
    let mut manifest = String::new();
    writeln!(manifest, "name = \"synthetic\"").unwrap();
    writeln!(manifest, "image_size = {}", spec.image_size).unwrap();
    writeln!(manifest, "resolution_min_m = 1.0\nresolution_max_m = 1.0").unwrap();
    for (k, name) in data.class_names.iter().enumerate() {
        let class_dir = dir.join(name);
        fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        let mut n = 0;
        for (img, _) in data.images.iter().zip(&data.labels).filter(|(_, &l)| l == k) {
            let path = class_dir.join(format!("{n:05}.png"));
            let rgb8 = image::DynamicImage::ImageRgb32F(img.clone()).into_rgb8();
            rgb8.save(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
            n += 1;
        }
        writeln!(manifest, "\n[[classes]]\nname = \"{name}\"\ncount = {n}").unwrap();
    }
    let path = dir.join("manifest.toml");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

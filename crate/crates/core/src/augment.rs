//! Two-view SSL augmentation and the downstream evaluation transform.
//!
//! Images are `Rgb32FImage`s with intensities in `[0, 1]`. Every stochastic
//! decision is drawn from the generator passed in, so outputs are a pure
//! function of `(image, recipe, generator state)`.

use std::collections::BTreeSet;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{Rgb, Rgb32FImage};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::canonical_name;
use crate::error::{Error, Result};
use crate::nn::ImageTensor;
use crate::rng::Rng;

pub type RgbImage = Rgb32FImage;

/// Per-channel mean and standard deviation used to normalize inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    /// ImageNet statistics.
    fn default() -> Self {
        Normalization {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl Normalization {
    /// Converts to an HWC tensor with `(x − mean) / std` per channel. A zero
    /// standard deviation is replaced by 1.
    pub fn apply(&self, img: &RgbImage) -> ImageTensor {
        let mut std = self.std;
        for (c, s) in std.iter_mut().enumerate() {
            if *s == 0.0 {
                log::warn!("channel {c} has zero standard deviation; normalizing with 1");
                *s = 1.0;
            }
        }
        let data = img
            .pixels()
            .flat_map(|p| (0..3).map(move |c| (p[c] as f64 - self.mean[c]) / std[c]))
            .collect();
        ImageTensor {
            height: img.height() as usize,
            width: img.width() as usize,
            channels: 3,
            data,
        }
    }
}

fn default_crop_size() -> u32 {
    224
}
fn default_scale() -> (f64, f64) {
    (0.2, 1.0)
}
fn default_flip() -> f64 {
    0.5
}
fn default_rotations() -> Vec<u32> {
    vec![0]
}
fn default_jitter_strength() -> f64 {
    0.4
}
fn default_jitter_prob() -> f64 {
    0.8
}
fn default_gray() -> f64 {
    0.2
}
fn default_blur() -> f64 {
    0.5
}
fn default_blur_sigma() -> (f64, f64) {
    (0.1, 2.0)
}

/// Two-view augmentation recipe for self-supervised pre-training.
///
/// Colour jitter uses brightness, contrast and saturation factors of
/// `color_jitter_strength` and a hue shift of a quarter of it, applied with
/// probability `color_jitter_prob`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SslRecipe {
    #[serde(default = "default_crop_size")]
    pub crop_size: u32,
    #[serde(default = "default_scale")]
    pub crop_scale_range: (f64, f64),
    #[serde(default = "default_flip")]
    pub flip_prob: f64,
    /// Rotation angles in degrees, multiples of 90; one is drawn uniformly.
    #[serde(default = "default_rotations")]
    pub rotation_choices: Vec<u32>,
    #[serde(default = "default_jitter_strength")]
    pub color_jitter_strength: f64,
    #[serde(default = "default_jitter_prob")]
    pub color_jitter_prob: f64,
    #[serde(default = "default_gray")]
    pub grayscale_prob: f64,
    #[serde(default = "default_blur")]
    pub blur_prob: f64,
    #[serde(default = "default_blur_sigma")]
    pub blur_sigma: (f64, f64),
    #[serde(default)]
    pub normalization: Normalization,
}

impl Default for SslRecipe {
    fn default() -> Self {
        SslRecipe {
            crop_size: default_crop_size(),
            crop_scale_range: default_scale(),
            flip_prob: default_flip(),
            rotation_choices: default_rotations(),
            color_jitter_strength: default_jitter_strength(),
            color_jitter_prob: default_jitter_prob(),
            grayscale_prob: default_gray(),
            blur_prob: default_blur(),
            blur_sigma: default_blur_sigma(),
            normalization: Normalization::default(),
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")))
    }
}

impl SslRecipe {
    pub fn validate(&self) -> Result<()> {
        check_prob("ssl_recipe.flip_prob", self.flip_prob)?;
        check_prob("ssl_recipe.color_jitter_prob", self.color_jitter_prob)?;
        check_prob("ssl_recipe.grayscale_prob", self.grayscale_prob)?;
        check_prob("ssl_recipe.blur_prob", self.blur_prob)?;
        let (lo, hi) = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!(
                "ssl_recipe.crop_scale_range must satisfy 0 < min <= max <= 1, got ({lo}, {hi})"
            )));
        }
        if self.crop_size == 0 {
            return Err(Error::Config("ssl_recipe.crop_size must be positive".into()));
        }
        if self.color_jitter_strength < 0.0 {
            return Err(Error::Config("ssl_recipe.color_jitter_strength must be >= 0".into()));
        }
        if self.rotation_choices.is_empty() || self.rotation_choices.iter().any(|r| r % 90 != 0) {
            return Err(Error::Config(
                "ssl_recipe.rotation_choices must be a non-empty set of multiples of 90".into(),
            ));
        }
        let (s0, s1) = self.blur_sigma;
        if !(s0 > 0.0 && s0 <= s1) {
            return Err(Error::Config("ssl_recipe.blur_sigma must satisfy 0 < min <= max".into()));
        }
        Ok(())
    }
}

fn default_resize() -> u32 {
    256
}
fn default_skip() -> BTreeSet<String> {
    ["EuroSAT".to_string()].into_iter().collect()
}

/// Downstream transform: resize, (training only) random flips, centre crop,
/// normalize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecipe {
    #[serde(default = "default_resize")]
    pub resize_to: u32,
    #[serde(default = "default_crop_size")]
    pub center_crop: u32,
    #[serde(default = "default_true")]
    pub train_flip: bool,
    #[serde(default)]
    pub normalization: Normalization,
    /// Datasets resized straight to `center_crop` without the intermediate
    /// resize and crop.
    #[serde(default = "default_skip")]
    pub skip_resize_for: BTreeSet<String>,
}

fn default_true() -> bool {
    true
}

impl Default for EvalRecipe {
    fn default() -> Self {
        EvalRecipe {
            resize_to: default_resize(),
            center_crop: default_crop_size(),
            train_flip: true,
            normalization: Normalization::default(),
            skip_resize_for: default_skip(),
        }
    }
}

impl EvalRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.center_crop == 0 || self.center_crop > self.resize_to {
            return Err(Error::Config(format!(
                "eval_recipe.center_crop {} must be positive and <= resize_to {}",
                self.center_crop, self.resize_to
            )));
        }
        Ok(())
    }

    fn skips_resize(&self, dataset: &str) -> bool {
        let name = canonical_name(dataset);
        self.skip_resize_for.iter().any(|d| canonical_name(d) == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|img| img.into_rgb32f())
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

fn resize(img: &RgbImage, w: u32, h: u32) -> RgbImage {
    if img.width() == w && img.height() == h {
        return img.clone();
    }
    imageops::resize(img, w, h, FilterType::Triangle)
}

fn center_crop(img: &RgbImage, size: u32) -> RgbImage {
    let x = (img.width() - size) / 2;
    let y = (img.height() - size) / 2;
    imageops::crop_imm(img, x, y, size, size).to_image()
}

/// Random crop covering a `scale` fraction of the area with aspect ratio in
/// `[3/4, 4/3]`, resized to `size × size`. Falls back to a centre crop after
/// ten rejected draws.
pub fn random_resized_crop(img: &RgbImage, size: u32, scale: (f64, f64), rng: &mut Rng) -> RgbImage {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let area = w * h;
    let (lr0, lr1) = ((3.0f64 / 4.0).ln(), (4.0f64 / 3.0).ln());
    for _ in 0..10 {
        let target = area * rng.random_range(scale.0..=scale.1);
        let ratio = rng.random_range(lr0..=lr1).exp();
        let cw = (target * ratio).sqrt().round() as u32;
        let ch = (target / ratio).sqrt().round() as u32;
        if cw > 0 && ch > 0 && cw <= img.width() && ch <= img.height() {
            let x = rng.random_range(0..=img.width() - cw);
            let y = rng.random_range(0..=img.height() - ch);
            let crop = imageops::crop_imm(img, x, y, cw, ch).to_image();
            return resize(&crop, size, size);
        }
    }
    let side = img.width().min(img.height());
    resize(&center_crop(img, side), size, size)
}

fn luma(p: &Rgb<f32>) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn blend(img: &mut RgbImage, factor: f32, other: impl Fn(&Rgb<f32>) -> [f32; 3]) {
    for p in img.pixels_mut() {
        let o = other(p);
        for c in 0..3 {
            p[c] = (factor * p[c] + (1.0 - factor) * o[c]).clamp(0.0, 1.0);
        }
    }
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Brightness, contrast, saturation and hue perturbations in random order.
pub fn color_jitter(img: &mut RgbImage, strength: f64, rng: &mut Rng) {
    let s = strength as f32;
    let hue = s / 4.0;
    let mut order = [0u8, 1, 2, 3];
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    for op in order {
        match op {
            0 if s > 0.0 => {
                let f = rng.random_range((1.0 - s).max(0.0)..=1.0 + s);
                blend(img, f, |_| [0.0; 3]);
            }
            1 if s > 0.0 => {
                let f = rng.random_range((1.0 - s).max(0.0)..=1.0 + s);
                let n = (img.width() * img.height()) as f32;
                let mean = img.pixels().map(luma).sum::<f32>() / n;
                blend(img, f, |_| [mean; 3]);
            }
            2 if s > 0.0 => {
                let f = rng.random_range((1.0 - s).max(0.0)..=1.0 + s);
                blend(img, f, |p| [luma(p); 3]);
            }
            3 if hue > 0.0 => {
                let shift = rng.random_range(-hue..=hue);
                for p in img.pixels_mut() {
                    let [h, sat, v] = rgb_to_hsv([p[0], p[1], p[2]]);
                    let [r, g, b] = hsv_to_rgb([h + shift, sat, v]);
                    *p = Rgb([r, g, b]);
                }
            }
            _ => {}
        }
    }
}

pub fn grayscale(img: &mut RgbImage) {
    for p in img.pixels_mut() {
        let l = luma(p);
        *p = Rgb([l, l, l]);
    }
}

fn rotate(img: RgbImage, degrees: u32) -> RgbImage {
    match degrees % 360 {
        90 => imageops::rotate90(&img),
        180 => imageops::rotate180(&img),
        270 => imageops::rotate270(&img),
        _ => img,
    }
}

fn ssl_view(img: &RgbImage, recipe: &SslRecipe, rng: &mut Rng) -> ImageTensor {
    let mut v = random_resized_crop(img, recipe.crop_size, recipe.crop_scale_range, rng);
    if rng.random_bool(recipe.color_jitter_prob) {
        color_jitter(&mut v, recipe.color_jitter_strength, rng);
    }
    if rng.random_bool(recipe.grayscale_prob) {
        grayscale(&mut v);
    }
    if rng.random_bool(recipe.blur_prob) {
        let sigma = rng.random_range(recipe.blur_sigma.0..=recipe.blur_sigma.1);
        v = imageops::blur(&v, sigma as f32);
    }
    if rng.random_bool(recipe.flip_prob) {
        imageops::flip_horizontal_in_place(&mut v);
    }
    let angle = recipe.rotation_choices[rng.random_range(0..recipe.rotation_choices.len())];
    let v = rotate(v, angle);
    recipe.normalization.apply(&v)
}

/// Two independently augmented views of `img`.
pub fn make_ssl_views(img: &RgbImage, recipe: &SslRecipe, rng: &mut Rng) -> Result<(ImageTensor, ImageTensor)> {
    if img.width().min(img.height()) < recipe.crop_size {
        return Err(Error::Validation(format!(
            "image {}x{} is smaller than the crop size {}",
            img.width(),
            img.height(),
            recipe.crop_size
        )));
    }
    let a = ssl_view(img, recipe, rng);
    let b = ssl_view(img, recipe, rng);
    Ok((a, b))
}

/// Downstream transform. Randomness (flips) is used only for the training
/// split, so validation and test outputs depend on the image alone.
pub fn eval_transform(img: &RgbImage, recipe: &EvalRecipe, split: Split, dataset: &str, rng: &mut Rng) -> ImageTensor {
    let mut v = if recipe.skips_resize(dataset) {
        resize(img, recipe.center_crop, recipe.center_crop)
    } else {
        resize(img, recipe.resize_to, recipe.resize_to)
    };
    if split == Split::Train && recipe.train_flip {
        if rng.random_bool(0.5) {
            imageops::flip_horizontal_in_place(&mut v);
        }
        if rng.random_bool(0.5) {
            imageops::flip_vertical_in_place(&mut v);
        }
    }
    if v.width() != recipe.center_crop {
        v = center_crop(&v, recipe.center_crop);
    }
    recipe.normalization.apply(&v)
}

/// Streaming per-channel mean and population standard deviation over every
/// pixel of every image.
pub fn channel_stats<'a, I>(images: I) -> Result<Normalization>
where
    I: IntoIterator<Item = &'a RgbImage>,
{
    let mut count = 0u64;
    let mut mean = [0.0f64; 3];
    let mut m2 = [0.0f64; 3];
    for img in images {
        for p in img.pixels() {
            count += 1;
            for c in 0..3 {
                let x = p[c] as f64;
                let delta = x - mean[c];
                mean[c] += delta / count as f64;
                m2[c] += delta * (x - mean[c]);
            }
        }
    }
    if count == 0 {
        return Err(Error::Empty("channel statistics of an empty image set".into()));
    }
    let std = m2.map(|v| (v / count as f64).sqrt());
    Ok(Normalization { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn gradient_image(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            Rgb([x as f32 / w as f32, y as f32 / h as f32, ((x + y) % 7) as f32 / 7.0])
        })
    }

    #[test]
    fn ssl_views_are_deterministic_under_seed() {
        let img = gradient_image(40, 32);
        let recipe = SslRecipe {
            crop_size: 16,
            ..SslRecipe::default()
        };
        let a = make_ssl_views(&img, &recipe, &mut rng::stream(3, &[])).unwrap();
        let b = make_ssl_views(&img, &recipe, &mut rng::stream(3, &[])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn default_recipe_shapes() {
        let img = gradient_image(256, 256);
        let (a, b) = make_ssl_views(&img, &SslRecipe::default(), &mut rng::stream(0, &[])).unwrap();
        for v in [a, b] {
            assert_eq!((v.height, v.width, v.channels), (224, 224, 3));
        }
    }

    #[test]
    fn too_small_image_is_rejected() {
        let img = gradient_image(10, 30);
        let recipe = SslRecipe {
            crop_size: 16,
            ..SslRecipe::default()
        };
        assert!(make_ssl_views(&img, &recipe, &mut rng::stream(0, &[])).is_err());
    }

    #[test]
    fn views_differ_almost_always() {
        let img = gradient_image(48, 48);
        let recipe = SslRecipe {
            crop_size: 16,
            ..SslRecipe::default()
        };
        let differing = (0..100)
            .filter(|&i| {
                let (a, b) = make_ssl_views(&img, &recipe, &mut rng::stream(11, &[i])).unwrap();
                a != b
            })
            .count();
        assert!(differing >= 95, "only {differing}/100 view pairs differ");
    }

    #[test]
    fn aid_test_split_is_center_cropped_without_flip() {
        let img = gradient_image(600, 600);
        let recipe = EvalRecipe::default();
        let a = eval_transform(&img, &recipe, Split::Test, "AID", &mut rng::stream(1, &[]));
        let b = eval_transform(&img, &recipe, Split::Test, "AID", &mut rng::stream(2, &[]));
        assert_eq!((a.height, a.width, a.channels), (224, 224, 3));
        assert_eq!(a, b);
        // The red channel grows left to right; a horizontal flip would invert it.
        assert!(a.at(100, 200, 0) > a.at(100, 20, 0));
        let v = eval_transform(&img, &recipe, Split::Val, "AID", &mut rng::stream(5, &[]));
        assert_eq!(a, v);
    }

    #[test]
    fn eurosat_is_resized_directly() {
        let img = gradient_image(64, 64);
        let recipe = EvalRecipe::default();
        let t = eval_transform(&img, &recipe, Split::Test, "EuroSAT", &mut rng::stream(0, &[]));
        assert_eq!((t.height, t.width), (224, 224));
        // No crop: the full horizontal ramp survives, so the left edge stays dark.
        let norm = recipe.normalization;
        let left = t.at(112, 0, 0) * norm.std[0] + norm.mean[0];
        assert!(left < 0.02, "left edge red {left}");
    }

    #[test]
    fn channel_stats_constant_and_empty() {
        let img = RgbImage::from_pixel(5, 4, Rgb([0.5, 0.5, 0.5]));
        let s = channel_stats([&img]).unwrap();
        for c in 0..3 {
            assert!((s.mean[c] - 0.5).abs() < 1e-7);
            assert!(s.std[c].abs() < 1e-7);
        }
        assert!(channel_stats(std::iter::empty()).is_err());
    }

    #[test]
    fn hsv_round_trip() {
        for rgb in [[0.2f32, 0.5, 0.9], [0.9, 0.1, 0.1], [0.3, 0.3, 0.3], [0.0, 1.0, 0.5]] {
            let back = hsv_to_rgb(rgb_to_hsv(rgb));
            for c in 0..3 {
                assert!((back[c] - rgb[c]).abs() < 1e-5, "{rgb:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn recipe_validation() {
        let mut r = SslRecipe::default();
        r.flip_prob = 1.5;
        assert!(r.validate().is_err());
        let mut r = SslRecipe::default();
        r.crop_scale_range = (0.0, 1.0);
        assert!(r.validate().is_err());
        let e = EvalRecipe {
            center_crop: 300,
            ..EvalRecipe::default()
        };
        assert!(e.validate().is_err());
    }
}

use geossl_core::augment::{
    color_jitter, eval_transform, grayscale, make_ssl_views, random_resized_crop, EvalRecipe, Normalization, RgbImage,
    SslRecipe, Split,
};
use geossl_core::rng;
use image::Rgb;

fn pattern(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| Rgb([x as f32 / w as f32, y as f32 / h as f32, ((x * 3 + y) % 11) as f32 / 11.0]))
}

#[test]
fn eval_transform_is_deterministic_outside_training() {
    let img = pattern(300, 300);
    let recipe = EvalRecipe::default();
    for split in [Split::Val, Split::Test] {
        let a = eval_transform(&img, &recipe, split, "UCM", &mut rng::stream(1, &[]));
        let b = eval_transform(&img, &recipe, split, "UCM", &mut rng::stream(2, &[]));
        assert_eq!(a, b);
        assert_eq!((a.height, a.width, a.channels), (224, 224, 3));
    }
    let flips: std::collections::BTreeSet<Vec<u64>> = (0..20)
        .map(|s| {
            let t = eval_transform(&img, &recipe, Split::Train, "UCM", &mut rng::stream(s, &[]));
            t.data.iter().map(|v| v.to_bits()).collect()
        })
        .collect();
    assert!(flips.len() > 1);
}

#[test]
fn eurosat_is_resized_directly() {
    let img = pattern(64, 64);
    let recipe = EvalRecipe::default();
    let direct = eval_transform(&img, &recipe, Split::Test, "EuroSAT", &mut rng::stream(0, &[]));
    let cropped = eval_transform(&img, &recipe, Split::Test, "UCM", &mut rng::stream(0, &[]));
    assert_eq!((direct.height, direct.width), (224, 224));
    assert_ne!(direct, cropped);
    // The corner pixel of a direct resize keeps the source corner colour.
    let n = Normalization::default();
    let r0 = direct.data[0] * n.std[0] + n.mean[0];
    assert!(r0 < 0.02, "{r0}");
}

#[test]
fn random_crop_has_requested_size() {
    let img = pattern(80, 60);
    let mut r = rng::stream(4, &[]);
    for _ in 0..50 {
        let c = random_resized_crop(&img, 32, (0.2, 1.0), &mut r);
        assert_eq!(c.dimensions(), (32, 32));
    }
}

#[test]
fn grayscale_equalizes_channels_and_jitter_stays_in_range() {
    let mut img = pattern(20, 20);
    grayscale(&mut img);
    assert!(img.pixels().all(|p| p[0] == p[1] && p[1] == p[2]));
    let mut img = pattern(20, 20);
    let mut r = rng::stream(5, &[]);
    for _ in 0..20 {
        color_jitter(&mut img, 0.8, &mut r);
        assert!(img.pixels().all(|p| p.0.iter().all(|v| (0.0..=1.0).contains(v))));
    }
}

#[test]
fn rotated_views_keep_square_shape() {
    let recipe = SslRecipe {
        crop_size: 24,
        rotation_choices: vec![0, 90, 180, 270],
        ..SslRecipe::default()
    };
    recipe.validate().unwrap();
    let (a, b) = make_ssl_views(&pattern(40, 30), &recipe, &mut rng::stream(0, &[])).unwrap();
    assert_eq!((a.height, a.width, b.height, b.width), (24, 24, 24, 24));
}

#[test]
fn invalid_recipes_are_rejected() {
    let bad = [
        SslRecipe { flip_prob: 1.5, ..SslRecipe::default() },
        SslRecipe { crop_scale_range: (0.0, 1.0), ..SslRecipe::default() },
        SslRecipe { rotation_choices: vec![45], ..SslRecipe::default() },
        SslRecipe { rotation_choices: vec![], ..SslRecipe::default() },
        SslRecipe { blur_sigma: (2.0, 1.0), ..SslRecipe::default() },
    ];
    for r in bad {
        assert!(r.validate().is_err(), "{r:?}");
    }
    let eval = EvalRecipe { resize_to: 200, ..EvalRecipe::default() };
    assert!(eval.validate().is_err());
}

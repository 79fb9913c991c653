use geossl_core::checkpoint::Checkpoint;
use geossl_core::data::synthetic::generate;
use geossl_core::loss::StopGradient;
use geossl_core::model::state_hash;
use geossl_core::optim::{momentum_sgd_step, MultiStepSchedule};
use geossl_core::presets::{toy_encoder, toy_predictor, toy_pretrain, toy_ssl_recipe, toy_synthetic};
use geossl_core::pretrain::{init_model, lr_at, pretrain, Init, PretrainConfig, PretrainOptions};
use geossl_core::{EncoderSpec, Module, PredictorSpec};

#[test]
fn default_schedule_drops_twice() {
    let cfg = PretrainConfig::default();
    assert_eq!(cfg.schedule(), MultiStepSchedule { milestones: vec![60_000, 80_000], gamma: 0.1 });
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-15;
    assert!(close(lr_at(&cfg, 0), 0.05));
    assert!(close(lr_at(&cfg, 59_999), 0.05));
    assert!(close(lr_at(&cfg, 60_000), 0.005));
    assert!(close(lr_at(&cfg, 80_000), 0.0005));
    assert!(close(lr_at(&cfg, 99_999), 0.0005));
    for t in [1, 2, 3, 10] {
        MultiStepSchedule::two_drop(t).validate(t).unwrap();
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let base = toy_pretrain(10, 0);
    for bad in [
        PretrainConfig { batch_size: 1, ..base.clone() },
        PretrainConfig { momentum: 1.0, ..base.clone() },
        PretrainConfig { weight_decay: -1.0, ..base.clone() },
        PretrainConfig { schedule: Some(MultiStepSchedule { milestones: vec![5, 3], gamma: 0.1 }), ..base.clone() },
        PretrainConfig { schedule: Some(MultiStepSchedule { milestones: vec![10], gamma: 0.1 }), ..base },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}

#[test]
fn momentum_sgd_matches_hand_computation() {
    let mut value = vec![1.0, -2.0];
    let mut velocity = vec![0.0, 0.0];
    momentum_sgd_step(&mut value, &[0.5, 0.5], &mut velocity, 0.1, 0.9, 0.01).unwrap();
    // v = g + λθ = (0.51, 0.48); θ −= 0.1·v
    assert!((velocity[0] - 0.51).abs() < 1e-15 && (velocity[1] - 0.48).abs() < 1e-15);
    assert!((value[0] - 0.949).abs() < 1e-15 && (value[1] + 2.048).abs() < 1e-15);
    momentum_sgd_step(&mut value, &[0.0, 0.0], &mut velocity, 0.1, 0.9, 0.0).unwrap();
    assert!((velocity[0] - 0.459).abs() < 1e-15);
    assert!((value[0] - (0.949 - 0.0459)).abs() < 1e-15);
    assert!(momentum_sgd_step(&mut value, &[f64::INFINITY, 0.0], &mut velocity, 0.1, 0.9, 0.0).is_err());
}

#[test]
fn init_is_seeded_and_external_weights_replace_the_backbone() {
    let (enc, pred) = (toy_encoder(), toy_predictor());
    let a = init_model(&enc, &pred, &Init::Random, 5).unwrap();
    let b = init_model(&enc, &pred, &Init::Random, 5).unwrap();
    let c = init_model(&enc, &pred, &Init::Random, 6).unwrap();
    assert_eq!(state_hash(&a), state_hash(&b));
    assert_ne!(state_hash(&a), state_hash(&c));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("weights.gssl");
    Checkpoint::from_model(&a, 0, "elsewhere").save(&path).unwrap();
    let loaded = init_model(&enc, &pred, &Init::ExternalWeights { path: path.clone() }, 6).unwrap();
    assert_eq!(state_hash(&loaded.encoder.backbone), state_hash(&a.encoder.backbone));
    assert_eq!(state_hash(&loaded.encoder.projector), state_hash(&c.encoder.projector));
    assert_eq!(state_hash(&loaded.predictor), state_hash(&c.predictor));

    let wider = EncoderSpec {
        backbone: geossl_core::BackboneSpec::toy(16, vec![8, 24]),
        proj_hidden: vec![16, 16],
        ..enc
    };
    assert!(init_model(&wider, &PredictorSpec::for_embedding(16, 8), &Init::ExternalWeights { path }, 0).is_err());
    let missing = Init::ExternalWeights { path: dir.path().join("absent.gssl") };
    assert!(init_model(&toy_encoder(), &pred, &missing, 0).is_err());
}

fn run(seed: u64, iterations: u64, out: Option<std::path::PathBuf>) -> geossl_core::pretrain::PretrainOutcome {
    let data = generate(&toy_synthetic(64), 100 + seed).unwrap();
    let mut model = init_model(&toy_encoder(), &toy_predictor(), &Init::Random, seed).unwrap();
    let options = PretrainOptions { output_dir: out, dataset_name: "synthetic".into(), ..PretrainOptions::default() };
    let config = PretrainConfig { checkpoint_every: 5, ..toy_pretrain(iterations, seed) };
    pretrain(&mut model, &data, &toy_ssl_recipe(), &config, &options).unwrap()
}

#[test]
fn pretraining_is_deterministic_under_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(3, 10, Some(dir.path().join("a")));
    let b = run(3, 10, Some(dir.path().join("b")));
    assert_eq!(a.trace.len(), 10);
    assert!(a.trace.iter().zip(&b.trace).all(|(x, y)| x.same_values(y)));
    assert_eq!(a.final_checkpoint.content_hash(), b.final_checkpoint.content_hash());
    assert_eq!(a.checkpoints.iter().map(|c| c.iteration).collect::<Vec<_>>(), vec![5, 10]);
    for (x, y) in a.checkpoints.iter().zip(&b.checkpoints) {
        assert_eq!(x.hash, y.hash);
        assert_eq!(Checkpoint::load(&x.path).unwrap().content_hash(), x.hash);
    }
    assert!(a.trace.iter().all(|r| (-1.0..=1.0).contains(&r.loss)));
    let lines = std::fs::read_to_string(dir.path().join("a/trace.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 10);
    assert!(dir.path().join("a/final.gssl").is_file());

    let c = run(4, 10, None);
    assert_ne!(c.final_checkpoint.content_hash(), a.final_checkpoint.content_hash());
}

#[test]
fn loss_decreases_over_training() {
    for seed in 0..3 {
        let out = run(seed, 500, None);
        let mean = |r: &[geossl_core::pretrain::TraceRecord]| r.iter().map(|t| t.loss).sum::<f64>() / r.len() as f64;
        let (first, last) = (mean(&out.trace[..50]), mean(&out.trace[450..]));
        assert!(last < first, "seed {seed}: {first} -> {last}");
        assert_eq!(out.state.iteration, 500);
        assert_eq!(out.final_checkpoint.header.iteration, 500);
    }
}

#[test]
fn stop_gradient_flag_changes_the_run() {
    let data = generate(&toy_synthetic(32), 1).unwrap();
    let config = toy_pretrain(5, 1);
    let mut hashes = Vec::new();
    for sg in [StopGradient::Enabled, StopGradient::Disabled] {
        let mut model = init_model(&toy_encoder(), &toy_predictor(), &Init::Random, 1).unwrap();
        let options = PretrainOptions { stop_gradient: sg, ..PretrainOptions::default() };
        pretrain(&mut model, &data, &toy_ssl_recipe(), &config, &options).unwrap();
        hashes.push(state_hash(&model));
        assert!(model.num_params() > 0);
    }
    assert_ne!(hashes[0], hashes[1]);
}

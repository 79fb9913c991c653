use geossl_core::data::synthetic::{generate, SyntheticSpec};
use geossl_core::data::{stratified_split_labels, LabeledImages, SplitRatios, SplitSpec};
use geossl_core::model::state_hash;
use geossl_core::optim::{AdamConfig, PlateauConfig, ReduceOnPlateau};
use geossl_core::presets::{toy_encoder, toy_eval_recipe, toy_linear, toy_predictor, TOY_IMAGE};
use geossl_core::pretrain::{init_model, Init};
use geossl_core::transfer::{
    aggregate_runs, build_classifier, finetune, global_accuracy, linear_eval, linear_eval_with, per_class_accuracy,
    LinearEvalConfig, RunResult, TransferConfig, TransferData,
};
use geossl_core::{Checkpoint, EvalRecipe, Module};

fn random_checkpoint(seed: u64) -> Checkpoint {
    Checkpoint::from_model(&init_model(&toy_encoder(), &toy_predictor(), &Init::Random, seed).unwrap(), 0, "none")
}

struct Fixture {
    images: LabeledImages,
    split: SplitSpec,
    recipe: EvalRecipe,
}

impl Fixture {
    fn new(spec: &SyntheticSpec, seed: u64) -> Self {
        let images = generate(spec, seed).unwrap();
        let split = stratified_split_labels(&images.labels, &images.class_names, SplitRatios::default(), seed).unwrap();
        Fixture { images, split, recipe: toy_eval_recipe() }
    }

    fn data(&self) -> TransferData<'_> {
        TransferData { images: &self.images, split: &self.split, recipe: &self.recipe }
    }
}

#[test]
fn head_matches_class_count() {
    let ckpt = random_checkpoint(0);
    let clf = build_classifier(&ckpt, 21, true, 0).unwrap();
    assert_eq!(clf.num_classes(), 21);
    let features = clf.backbone.feature_dim();
    assert_eq!(clf.num_trainable(), (features + 1) * 21);
    let open = build_classifier(&ckpt, 21, false, 0).unwrap();
    assert_eq!(open.num_trainable(), clf.backbone.num_params() + (features + 1) * 21);
    assert!(build_classifier(&ckpt, 1, true, 0).is_err());
}

#[test]
fn linear_eval_never_touches_the_backbone() {
    let fx = Fixture::new(&SyntheticSpec::two_cluster(20, TOY_IMAGE), 1);
    let ckpt = random_checkpoint(2);
    let mut clf = build_classifier(&ckpt, 2, true, 0).unwrap();
    let before = state_hash(&clf.backbone);
    let head_before = state_hash(&clf.head);
    let cfg = LinearEvalConfig { shots: 5, train: toy_linear(3) };
    linear_eval_with(&mut clf, ckpt.content_hash(), &fx.data(), &cfg, 0).unwrap();
    assert_eq!(state_hash(&clf.backbone), before);
    assert_ne!(state_hash(&clf.head), head_before);

    let mut open = build_classifier(&ckpt, 2, false, 0).unwrap();
    assert!(linear_eval_with(&mut open, ckpt.content_hash(), &fx.data(), &cfg, 0).is_err());
}

#[test]
fn transfer_runs_are_deterministic() {
    let fx = Fixture::new(&SyntheticSpec::two_cluster(20, TOY_IMAGE), 3);
    let ckpt = random_checkpoint(4);
    let cfg = LinearEvalConfig { shots: 5, train: toy_linear(3) };
    let a = linear_eval(&ckpt, &fx.data(), &cfg, 7).unwrap();
    assert_eq!(a, linear_eval(&ckpt, &fx.data(), &cfg, 7).unwrap());
    let b = linear_eval(&ckpt, &fx.data(), &cfg, 8).unwrap();
    assert_eq!(a.config_hash, b.config_hash);
    assert_ne!(a.run_id, b.run_id);
    assert_eq!(a.train_samples, 10);

    let ft = TransferConfig { epochs: 2, batch_size: 8, ..TransferConfig::finetune() };
    let x = finetune(&ckpt, &fx.data(), &ft, 1).unwrap();
    assert_eq!(x, finetune(&ckpt, &fx.data(), &ft, 1).unwrap());
    assert_eq!(x.train_samples, 24);
    assert_ne!(x.config_hash, a.config_hash);
}

#[test]
fn finetuning_learns_a_separable_task() {
    let spec = SyntheticSpec {
        stripe_amplitude: 0.3,
        nuisance: 0.2,
        ..SyntheticSpec::two_cluster(60, TOY_IMAGE)
    };
    let fx = Fixture::new(&spec, 5);
    let cfg = TransferConfig {
        batch_size: 16,
        epochs: 15,
        optimizer: AdamConfig::with_lr(1e-2),
        ..TransferConfig::finetune()
    };
    for seed in 0..3 {
        let r = finetune(&random_checkpoint(seed), &fx.data(), &cfg, seed).unwrap();
        assert!(r.global_accuracy >= 0.9, "seed {seed}: {}", r.global_accuracy);
        assert_eq!(r.per_class_accuracy.len(), 2);
    }
}

#[test]
fn mean_accuracy_grows_with_shots() {
    let fx = Fixture::new(&SyntheticSpec { nuisance: 0.5, ..SyntheticSpec::two_cluster(200, TOY_IMAGE) }, 2);
    let ckpt = random_checkpoint(0);
    let mut train = toy_linear(60);
    train.optimizer.lr = 0.01;
    let means: Vec<f64> = [5, 10, 20, 50]
        .into_iter()
        .map(|shots| {
            let cfg = LinearEvalConfig { shots, train: train.clone() };
            let runs: Vec<RunResult> = (0..5).map(|s| linear_eval(&ckpt, &fx.data(), &cfg, s).unwrap()).collect();
            let agg = aggregate_runs(&runs).unwrap();
            let lo = runs.iter().map(|r| r.global_accuracy).fold(f64::INFINITY, f64::min);
            let hi = runs.iter().map(|r| r.global_accuracy).fold(f64::NEG_INFINITY, f64::max);
            assert!(lo <= agg.mean_accuracy && agg.mean_accuracy <= hi);
            agg.mean_accuracy
        })
        .collect();
    assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
}

#[test]
fn per_class_accuracy_matches_confusion_matrix() {
    let labels = [0, 0, 0, 1, 1, 2, 2, 2, 2];
    let preds = [0, 1, 0, 1, 1, 0, 2, 1, 2];
    let mut confusion = [[0usize; 4]; 4];
    for (&l, &p) in labels.iter().zip(&preds) {
        confusion[l][p] += 1;
    }
    let per = per_class_accuracy(&preds, &labels, 4);
    for k in 0..3 {
        let row: usize = confusion[k].iter().sum();
        assert_eq!(per[k], Some(confusion[k][k] as f64 / row as f64));
    }
    assert_eq!(per[3], None);
    let diag: usize = (0..4).map(|k| confusion[k][k]).sum();
    assert_eq!(global_accuracy(&preds, &labels).unwrap(), diag as f64 / labels.len() as f64);
}

fn result(id: &str, acc: f64, hash: &str) -> RunResult {
    RunResult {
        run_id: id.into(),
        seed: 0,
        global_accuracy: acc,
        per_class_accuracy: vec![],
        config_hash: hash.into(),
        checkpoint_hash: String::new(),
        train_samples: 0,
        best_val_accuracy: 0.0,
    }
}

#[test]
fn aggregation_matches_two_pass_formula() {
    let accs = [0.91, 0.93, 0.88, 0.95, 0.90];
    let runs: Vec<RunResult> = accs.iter().enumerate().map(|(i, &a)| result(&format!("r{i}"), a, "h")).collect();
    let agg = aggregate_runs(&runs).unwrap();
    let mean = accs.iter().sum::<f64>() / 5.0;
    let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 4.0;
    assert!((agg.mean_accuracy - mean).abs() < 1e-15);
    assert!((agg.std_accuracy - var.sqrt()).abs() < 1e-15);
    assert!(agg.std_defined);
    assert_eq!(agg.n_runs, 5);

    let single = aggregate_runs(&runs[..1]).unwrap();
    assert_eq!((single.std_accuracy, single.std_defined), (0.0, false));
    assert!(aggregate_runs(&[]).is_err());
    assert!(aggregate_runs(&[result("a", 0.5, "x"), result("b", 0.5, "y")]).is_err());
}

#[test]
fn plateau_schedule_follows_script() {
    let cfg = PlateauConfig { patience: 2, factor: 0.5, min_lr: 0.03 };
    let mut s = ReduceOnPlateau::new(cfg, 0.1);
    let trace = [0.5, 0.6, 0.6, 0.6, 0.6, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7];
    let lrs: Vec<f64> = trace.iter().map(|&m| s.observe(m)).collect();
    assert_eq!(lrs, vec![0.1, 0.1, 0.1, 0.1, 0.05, 0.05, 0.05, 0.05, 0.03, 0.03, 0.03, 0.03]);
    assert_eq!(s.reductions(), 2);
}

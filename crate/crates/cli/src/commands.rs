use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context as _;
use geossl_core::data::synthetic::{generate, write_dataset, SyntheticSpec};
use geossl_core::data::{class_similarity, load_manifest, parse_manifest, stratified_split_labels, AliasMap, LabeledImages, SimilarityReport};
use geossl_core::pretrain::{init_model, pretrain, PretrainOptions, PretrainOutcome};
use geossl_core::report::{emit_plot, reference_records, render_table, Layout, MetricsRecord, MetricsStore, Protocol, Provenance, SCHEMA_VERSION};
use geossl_core::transfer::{aggregate_runs, finetune, linear_eval, LinearEvalConfig, RunResult, TransferConfig, TransferData};
use geossl_core::Checkpoint;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{resolve_path, ExperimentConfig, SYNTHETIC};
use crate::{CliError, CliResult, CommonArgs, LinevalArgs, PretrainArgs, ReportArgs, SimilarityArgs, SyntheticArgs, TransferArgs};

#[derive(Clone, Copy, PartialEq)]
enum Role {
    Pretrain,
    Downstream,
}

fn cwd() -> PathBuf {
    std::env::current_dir().unwrap_or_default()
}

/// Config file plus command-line overrides, validated.
fn load_config(args: &CommonArgs, role: Role) -> CliResult<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let mut c = ExperimentConfig::default();
            c.anchor_paths(&cwd())?;
            c
        }
    };
    if let Some(d) = &args.dataset {
        let source = if d == SYNTHETIC {
            d.clone()
        } else {
            resolve_path(Path::new(d), &cwd())?.to_string_lossy().into_owned()
        };
        match role {
            Role::Pretrain => cfg.data.pretrain = Some(source),
            Role::Downstream => cfg.data.downstream = Some(source),
        }
    }
    if let Some(out) = &args.out {
        cfg.output.dir = resolve_path(out, &cwd())?;
    }
    if let Some(seeds) = &args.seeds {
        cfg.seeds = seeds.clone();
        if role == Role::Pretrain {
            if let Some(&s) = seeds.first() {
                cfg.pretrain.seed = s;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(cfg: &ExperimentConfig, role: Role) -> CliResult<LabeledImages> {
    let (source, what) = match role {
        Role::Pretrain => (&cfg.data.pretrain, "pre-training"),
        Role::Downstream => (&cfg.data.downstream, "downstream"),
    };
    let source = source
        .as_deref()
        .ok_or_else(|| CliError::usage(format!("no {what} dataset: pass --dataset or set it in [data]")))?;
    if source == SYNTHETIC {
        let seed = cfg.data.synthetic_seed + u64::from(role == Role::Downstream);
        return Ok(generate(&cfg.data.synthetic, seed)?);
    }
    let path = Path::new(source);
    if !path.is_file() {
        return Err(CliError::usage(format!("{what} manifest {} does not exist", path.display())));
    }
    let manifest = load_manifest(path)?;
    log::info!("decoding {} images of {}", manifest.samples.len(), manifest.name);
    Ok(LabeledImages::from_manifest(&manifest)?)
}

/// Writes the resolved config next to a command's outputs.
fn write_resolved(cfg: &ExperimentConfig, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("resolved_config.toml");
    fs::write(&path, cfg.resolved().to_toml()).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn print_dry_run(cfg: &ExperimentConfig) {
    println!("{}", cfg.resolved().to_toml());
}

/// Runs pre-training; returns the outcome and the final checkpoint path
/// (`None` for a dry run).
pub fn cmd_pretrain(args: &PretrainArgs) -> CliResult<Option<(PretrainOutcome, PathBuf)>> {
    let cfg = load_config(&args.common, Role::Pretrain)?;
    if args.common.dry_run {
        print_dry_run(&cfg);
        return Ok(None);
    }
    let data = load_dataset(&cfg, Role::Pretrain)?;
    let dir = cfg.experiment_dir().join("pretrain");
    write_resolved(&cfg, &dir)?;
    let mut model = init_model(&cfg.model.encoder, &cfg.model.predictor, &cfg.pretrain.init, cfg.pretrain.seed)?;
    let options = PretrainOptions {
        output_dir: Some(dir.clone()),
        dataset_name: data.name.clone(),
        ..PretrainOptions::default()
    };
    let outcome = pretrain(&mut model, &data, &cfg.ssl_recipe, &cfg.pretrain, &options)?;
    let path = dir.join("final.gssl");
    println!("final loss {:.6}", outcome.state.last_loss.value());
    println!("checkpoint {} sha256 {}", path.display(), outcome.final_checkpoint.content_hash());
    Ok(Some((outcome, path)))
}

fn load_checkpoint(path: &Path, cfg: &ExperimentConfig) -> CliResult<Checkpoint> {
    if !path.is_file() {
        return Err(CliError::usage(format!("checkpoint {} does not exist", path.display())));
    }
    let ckpt = Checkpoint::load(path)?;
    let input = ckpt.header.encoder.backbone.input_size;
    if input != cfg.eval_recipe.center_crop as usize {
        return Err(CliError::usage(format!(
            "[eval_recipe] center_crop {} does not match the checkpoint's input size {input}",
            cfg.eval_recipe.center_crop
        )));
    }
    Ok(ckpt)
}

fn run_seeds<F>(seeds: &[u64], jobs: usize, run: F) -> CliResult<Vec<RunResult>>
where
    F: Fn(u64) -> geossl_core::Result<RunResult> + Sync,
{
    if jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building the worker pool")?;
    let results = pool.install(|| seeds.par_iter().map(|&s| run(s)).collect::<geossl_core::Result<Vec<_>>>())?;
    Ok(results)
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn record(
    cfg: &ExperimentConfig,
    ckpt: &Checkpoint,
    downstream: &str,
    protocol: Protocol,
    shots: Option<usize>,
    runs: &[RunResult],
) -> CliResult<MetricsRecord> {
    let pretrain = &ckpt.header.source_dataset;
    let tag = match protocol {
        Protocol::Finetune => "finetune",
        Protocol::LinearEval => "lineval",
    };
    let shot_tag = shots.map_or(String::new(), |s| format!(":{s}"));
    Ok(MetricsRecord {
        schema_version: SCHEMA_VERSION,
        experiment_id: format!("{}:{tag}:{pretrain}:{downstream}{shot_tag}", cfg.experiment_id),
        pretrain_dataset: pretrain.clone(),
        downstream_dataset: downstream.to_string(),
        protocol,
        shots,
        aggregate: aggregate_runs(runs)?,
        timestamp: now(),
        provenance: Provenance::Measured,
        citation: None,
    })
}

fn write_runs(dir: &Path, runs: &[RunResult]) -> CliResult<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut text = String::new();
    for r in runs {
        text.push_str(&serde_json::to_string(r).context("serializing a run")?);
        text.push('\n');
    }
    let path = dir.join("runs.jsonl");
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn persist(cfg: &ExperimentConfig, records: &[MetricsRecord]) -> CliResult<()> {
    let store = MetricsStore::open(cfg.store_path());
    store.persist_all(records).map_err(|e| match e {
        geossl_core::Error::Duplicate(id) => CliError::Runtime(anyhow::anyhow!(
            "record `{id}` is already in {}; choose a new experiment_id",
            store.path().display()
        )),
        other => other.into(),
    })
}

fn print_record(r: &MetricsRecord) {
    let a = &r.aggregate;
    let spread = if a.std_defined { format!(" ± {:.2}", a.std_accuracy * 100.0) } else { String::new() };
    println!("{}: {:.2}%{spread} over {} runs", r.experiment_id, a.mean_accuracy * 100.0, a.n_runs);
}

struct Downstream {
    cfg: ExperimentConfig,
    ckpt: Checkpoint,
    images: LabeledImages,
    split: geossl_core::SplitSpec,
}

fn prepare_transfer(args: &TransferArgs) -> CliResult<Downstream> {
    let cfg = load_config(&args.common, Role::Downstream)?;
    let ckpt = load_checkpoint(&resolve_path(&args.checkpoint, &cwd())?, &cfg)?;
    let images = load_dataset(&cfg, Role::Downstream)?;
    let split = stratified_split_labels(&images.labels, &images.class_names, cfg.data.split, cfg.data.split_seed)?;
    Ok(Downstream { cfg, ckpt, images, split })
}

/// Fine-tunes over every seed, persists one aggregated record and returns it.
pub fn cmd_finetune(args: &TransferArgs) -> CliResult<Option<MetricsRecord>> {
    if args.common.dry_run {
        print_dry_run(&load_config(&args.common, Role::Downstream)?);
        return Ok(None);
    }
    let d = prepare_transfer(args)?;
    let data = TransferData { images: &d.images, split: &d.split, recipe: &d.cfg.eval_recipe };
    let cfg: &TransferConfig = &d.cfg.finetune;
    let runs = run_seeds(&d.cfg.seeds, args.jobs, |s| finetune(&d.ckpt, &data, cfg, s))?;
    let dir = d.cfg.experiment_dir().join("finetune").join(&d.images.name);
    write_resolved(&d.cfg, &dir)?;
    write_runs(&dir, &runs)?;
    let rec = record(&d.cfg, &d.ckpt, &d.images.name, Protocol::Finetune, None, &runs)?;
    persist(&d.cfg, std::slice::from_ref(&rec))?;
    print_record(&rec);
    Ok(Some(rec))
}

/// Linear evaluation for each shot count over every seed; persists one
/// aggregated record per shot count.
pub fn cmd_lineval(args: &LinevalArgs) -> CliResult<Vec<MetricsRecord>> {
    let common = &args.transfer.common;
    if common.dry_run {
        let mut cfg = load_config(common, Role::Downstream)?;
        if let Some(s) = &args.shots {
            cfg.lineval.shots = s.clone();
        }
        print_dry_run(&cfg);
        return Ok(Vec::new());
    }
    let mut d = prepare_transfer(&args.transfer)?;
    if let Some(s) = &args.shots {
        if s.is_empty() || s.contains(&0) {
            return Err(CliError::usage("--shots must be positive"));
        }
        d.cfg.lineval.shots = s.clone();
    }
    let data = TransferData { images: &d.images, split: &d.split, recipe: &d.cfg.eval_recipe };
    let mut records = Vec::new();
    for &shots in &d.cfg.lineval.shots {
        let lc = LinearEvalConfig { shots, train: d.cfg.lineval.train.clone() };
        let runs = run_seeds(&d.cfg.seeds, args.transfer.jobs, |s| linear_eval(&d.ckpt, &data, &lc, s))?;
        let dir = d.cfg.experiment_dir().join("lineval").join(&d.images.name).join(format!("shots_{shots}"));
        write_runs(&dir, &runs)?;
        let rec = record(&d.cfg, &d.ckpt, &d.images.name, Protocol::LinearEval, Some(shots), &runs)?;
        print_record(&rec);
        records.push(rec);
    }
    write_resolved(&d.cfg, &d.cfg.experiment_dir().join("lineval").join(&d.images.name))?;
    persist(&d.cfg, &records)?;
    Ok(records)
}

#[derive(Serialize)]
struct SimilarityOutput<'a> {
    pretrain: &'a str,
    downstream: &'a str,
    percent: f64,
    #[serde(flatten)]
    report: &'a SimilarityReport,
}

/// Prints the class similarity of two manifests.
pub fn cmd_similarity(args: &SimilarityArgs) -> CliResult<SimilarityReport> {
    let read = |p: &Path| -> CliResult<_> {
        let p = resolve_path(p, &cwd())?;
        if !p.is_file() {
            return Err(CliError::usage(format!("manifest {} does not exist", p.display())));
        }
        Ok(parse_manifest(&p)?)
    };
    let (pre, down) = (read(&args.pretrain)?, read(&args.downstream)?);
    let aliases = match &args.aliases {
        Some(path) if path.is_file() => AliasMap::load(path)?,
        Some(path) => {
            let msg = format!("alias file {} not found; matching class names exactly", path.display());
            log::warn!("{msg}");
            eprintln!("warning: {msg}");
            AliasMap::new()
        }
        None => AliasMap::new(),
    };
    let report = class_similarity(&pre.classes, &down.classes, &aliases)?;
    println!(
        "{} -> {}: {:.2}% ({}/{} downstream classes)",
        pre.name,
        down.name,
        report.percent(),
        report.matched.len(),
        report.downstream_classes
    );
    if let Some(out) = &args.out {
        let body = SimilarityOutput { pretrain: &pre.name, downstream: &down.name, percent: report.percent(), report: &report };
        let json = serde_json::to_string_pretty(&body).context("serializing the similarity report")?;
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        fs::write(out, json + "\n").with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(report)
}

/// Renders a table (and, for linear evaluation, a plot). Returns the text.
pub fn cmd_report(args: &ReportArgs) -> CliResult<String> {
    let layout = Layout::parse(&args.layout).map_err(|e| CliError::usage(e.to_string()))?;
    let mut records = MetricsStore::open(&args.store).load()?;
    if args.with_reference {
        records.extend(reference_records());
    }
    let text = render_table(&records, layout).to_text();
    print!("{text}");
    if let Some(out) = &args.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let path = out.join(format!("{}.txt", layout.key()));
        fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
        if layout == Layout::TableVI {
            if records.iter().any(|r| r.protocol == Protocol::LinearEval) {
                let (svg, tsv) = emit_plot(&records, &out.join(format!("{}-shots", layout.key())))?;
                println!("plot {} (data {})", svg.display(), tsv.display());
            } else {
                eprintln!("warning: no linear-evaluation records; skipping the plot");
            }
        }
    }
    Ok(text)
}

/// Writes a synthetic dataset; returns the manifest path.
pub fn cmd_make_synthetic(args: &SyntheticArgs) -> CliResult<PathBuf> {
    let spec = SyntheticSpec {
        classes: args.classes,
        ..SyntheticSpec::two_cluster(args.per_class, args.image_size)
    };
    spec.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let path = write_dataset(&spec, args.seed, &args.out)?;
    println!("manifest {}", path.display());
    Ok(path)
}

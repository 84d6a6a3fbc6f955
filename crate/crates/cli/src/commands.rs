use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use anyhow::{bail, ensure, Context, Result};
use packtherm::autodiff::{read_params, write_params, ModelParams};
use packtherm::error::Error;
use packtherm::fields::{read_field_raw, read_manifest, write_field, write_layout, write_manifest, CaseEntry, DatasetManifest, ScalarField, Split};
use packtherm::layout::{generate_layout, rasterize_conductivity};
use packtherm::metrics::{evaluate, relative_improvement, EvalReport};
use packtherm::nets::{build_backbone, build_head, build_supervised_baseline, Backbone, Head};
use packtherm::solver::{solve_system, Method, SolveOptions, System};
use packtherm::training::{load_split, posttrain, pretrain, train_supervised, Case, TrainLog};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{
    card_path, log_path, read_json, write_json, ModelCard, ModelKind, RunConfig, SplitCounts, SEED_BACKBONE, SEED_DATASET, SEED_HEAD,
    SEED_SUPERVISED,
};
use crate::render::to_pgm;

/// Layout seeds tried per case before giving up.
const SUBSEED_ATTEMPTS: usize = 20;

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub struct GenArgs {
    pub counts: SplitCounts,
    pub seed: u64,
    pub cells: usize,
    pub grid: usize,
    pub out: PathBuf,
}

/// Writes layouts, conductivity fields and `manifest.json` under `out`.
pub fn gen_layouts(args: &GenArgs, cfg: &RunConfig) -> Result<PathBuf> {
    let grid = RunConfig { grid: args.grid, ..cfg.clone() }.grid_spec()?;
    for sub in ["layouts", "conductivity"] {
        create_dir(&args.out.join(sub))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let splits = Split::ALL.iter().zip(args.counts.as_array()).flat_map(|(&s, n)| std::iter::repeat(s).take(n));
    let mut cases = Vec::new();
    for (i, split) in splits.enumerate() {
        let id = format!("case_{i:04}");
        let mut attempt = 0;
        let layout = loop {
            match generate_layout(rng.next_u64(), args.cells, &cfg.geometry) {
                Ok(l) => break l,
                Err(e @ Error::PlacementBudget { .. }) => {
                    attempt += 1;
                    if attempt >= SUBSEED_ATTEMPTS {
                        return Err(e).with_context(|| format!("{id}: no layout after {SUBSEED_ATTEMPTS} seeds"));
                    }
                }
                Err(e) => return Err(e.into()),
            }
        };
        let lambda = rasterize_conductivity(&layout, &grid, &cfg.pack)?;
        let entry = CaseEntry {
            id: id.clone(),
            layout: PathBuf::from("layouts").join(format!("{id}.json")),
            conductivity: PathBuf::from("conductivity").join(format!("{id}.tfld")),
            temperature: None,
            split,
        };
        write_layout(&layout, args.out.join(&entry.layout))?;
        write_field(&lambda, args.out.join(&entry.conductivity))?;
        cases.push(entry);
    }
    let path = args.out.join("manifest.json");
    write_manifest(&DatasetManifest { cases }, &path)?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SolverChoice {
    Reference,
    Lowfi,
    Dense,
}

pub struct SolveArgs {
    pub manifest: PathBuf,
    pub solver: SolverChoice,
    pub options: SolveOptions,
    pub out: PathBuf,
    pub force: bool,
    pub workers: usize,
    pub splits: Vec<Split>,
}

/// Solves every selected case and records the temperature paths in the
/// manifest. Returns the number of cases solved.
pub fn solve(args: &SolveArgs, cfg: &RunConfig) -> Result<usize> {
    let mut manifest = read_manifest(&args.manifest)?;
    let base = base_dir(&args.manifest);
    create_dir(&base.join(&args.out))?;
    let (system, method) = match args.solver {
        SolverChoice::Reference => (System::Reference, Method::Iterative),
        SolverChoice::Lowfi => (System::LowFidelity, Method::Iterative),
        SolverChoice::Dense => (System::Reference, Method::Dense),
    };
    let opts = SolveOptions { method, ..args.options };
    let todo: Vec<usize> = (0..manifest.cases.len())
        .filter(|&i| {
            let c = &manifest.cases[i];
            args.splits.contains(&c.split) && (args.force || c.temperature.as_ref().map_or(true, |p| !base.join(p).is_file()))
        })
        .collect();
    let workers = args.workers.max(1).min(todo.len().max(1));
    let entries = &manifest.cases;
    let results: Vec<Result<(usize, PathBuf)>> = thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let todo = &todo;
                let base = &base;
                s.spawn(move || {
                    todo.iter()
                        .skip(w)
                        .step_by(workers)
                        .map(|&i| {
                            let entry = &entries[i];
                            let case = Case::load(entry, base)?;
                            let t = solve_system(system, &case.lambda, &case.mask, &cfg.pack, &opts)
                                .with_context(|| format!("solving {}", entry.id))?;
                            let rel = args.out.join(format!("{}.tfld", entry.id));
                            write_field(&t, base.join(&rel))?;
                            Ok((i, rel))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("solver worker panicked")).collect()
    });
    let mut solved = 0;
    for r in results {
        let (i, rel) = r?;
        manifest.cases[i].temperature = Some(rel);
        solved += 1;
    }
    write_manifest(&manifest, &args.manifest)?;
    Ok(solved)
}

fn load_cases(manifest: &Path, split: Split) -> Result<Vec<Case>> {
    let m = read_manifest(manifest)?;
    Ok(load_split(&m, &base_dir(manifest), split)?)
}

fn save_model(weights: &Path, params: &ModelParams<f32>, card: &ModelCard, log: &TrainLog) -> Result<()> {
    if let Some(dir) = weights.parent() {
        create_dir(dir)?;
    }
    write_params(weights, params)?;
    write_json(&card_path(weights), card)?;
    log.write_jsonl(&log_path(weights))?;
    Ok(())
}

fn print_epochs(what: &str, log: &TrainLog) {
    for (e, (loss, lr)) in log.epoch_mean_loss.iter().zip(&log.lr_trace).enumerate() {
        let val = log.val_mae.get(e).map(|v| format!("  val_mae {v:.5}")).unwrap_or_default();
        println!("{what} epoch {:>2}  lr {lr:.3e}  mean_loss {loss:.6e}{val}", e + 1);
    }
    if let Some(e) = log.selected_epoch {
        println!("{what} kept epoch {}", e + 1);
    }
    println!("{what} wall time {:.1}s", log.wall_seconds);
}

pub fn cmd_pretrain(manifest: &Path, cfg: &RunConfig, out: &Path) -> Result<TrainLog> {
    let cases = load_cases(manifest, Split::Pretrain)?;
    let seed = cfg.derived_seed(SEED_BACKBONE);
    let mut net = build_backbone::<f32>(&cfg.backbone, seed)?;
    let log = pretrain(&mut net, &cases, &cfg.train, &cfg.pack)?;
    print_epochs("pretrain", &log);
    let card = ModelCard {
        kind: ModelKind::Backbone,
        seed,
        backbone: cfg.backbone.clone(),
        head: None,
        train: cfg.train.clone(),
        backbone_weights: None,
    };
    save_model(out, net.params(), &card, &log)?;
    Ok(log)
}

/// Path of `target` as stored in a card living in `card_dir`.
fn relative_to(target: &Path, card_dir: &Path) -> PathBuf {
    match (target.parent(), target.file_name()) {
        (Some(p), Some(name)) if p == card_dir => PathBuf::from(name),
        _ => fs::canonicalize(target).unwrap_or_else(|_| target.to_path_buf()),
    }
}

pub fn cmd_posttrain(manifest: &Path, cfg: &RunConfig, backbone_path: &Path, out: &Path) -> Result<TrainLog> {
    let backbone = match load_model(backbone_path, cfg.pack.t0)? {
        Model::Backbone(b) => b,
        _ => bail!("{} is not a physics-informed backbone", backbone_path.display()),
    };
    let cases = load_cases(manifest, Split::Labeled)?;
    let seed = cfg.derived_seed(SEED_HEAD);
    let mut head = build_head::<f32>(&cfg.head, seed)?;
    let log = posttrain(&backbone, &mut head, &cases, &cfg.train)?;
    print_epochs("posttrain", &log);
    let card_dir = out.parent().unwrap_or(Path::new(""));
    let card = ModelCard {
        kind: ModelKind::Pipeline,
        seed,
        backbone: backbone.config().clone(),
        head: Some(cfg.head.clone()),
        train: cfg.train.clone(),
        backbone_weights: Some(relative_to(backbone_path, card_dir)),
    };
    save_model(out, head.params(), &card, &log)?;
    Ok(log)
}

pub fn cmd_train_supervised(manifest: &Path, cfg: &RunConfig, out: &Path) -> Result<TrainLog> {
    let labeled = load_cases(manifest, Split::Labeled)?;
    let val = load_cases(manifest, Split::Val)?;
    let seed = cfg.derived_seed(SEED_SUPERVISED);
    let mut net = build_supervised_baseline::<f32>(&cfg.backbone, seed)?;
    let log = train_supervised(&mut net, &labeled, &val, &cfg.train)?;
    print_epochs("supervised", &log);
    let card = ModelCard {
        kind: ModelKind::Supervised,
        seed,
        backbone: cfg.backbone.clone(),
        head: None,
        train: cfg.train.clone(),
        backbone_weights: None,
    };
    save_model(out, net.params(), &card, &log)?;
    Ok(log)
}

pub enum Model {
    Constant(f64),
    Truth,
    Backbone(Backbone<f32>),
    Pipeline(Backbone<f32>, Box<Head<f32>>),
    Supervised(Backbone<f32>),
}

fn load_weights(target: &mut ModelParams<f32>, path: &Path) -> Result<()> {
    let stored = read_params::<f32>(path)?;
    target.load_values(&stored).with_context(|| format!("loading {}", path.display()))
}

/// Loads weights plus sidecar, or one of the keywords `constant` (T0
/// everywhere) and `truth` (the ground truth itself).
pub fn load_model(spec: &Path, t0: f64) -> Result<Model> {
    match spec.to_str() {
        Some("constant") => return Ok(Model::Constant(t0)),
        Some("truth") => return Ok(Model::Truth),
        _ => {}
    }
    let card: ModelCard = read_json(&card_path(spec))?;
    let mut net = build_backbone::<f32>(&card.backbone, card.seed)?;
    match card.kind {
        ModelKind::Backbone | ModelKind::Supervised => {
            load_weights(net.params_mut(), spec)?;
            Ok(if card.kind == ModelKind::Backbone { Model::Backbone(net) } else { Model::Supervised(net) })
        }
        ModelKind::Pipeline => {
            let head_cfg = card.head.context("pipeline card without head config")?;
            let rel = card.backbone_weights.context("pipeline card without backbone path")?;
            let backbone_path = spec.parent().unwrap_or(Path::new("")).join(rel);
            let backbone = match load_model(&backbone_path, t0)? {
                Model::Backbone(b) => b,
                _ => bail!("{} is not a backbone", backbone_path.display()),
            };
            let mut head = build_head::<f32>(&head_cfg, card.seed)?;
            load_weights(head.params_mut(), spec)?;
            Ok(Model::Pipeline(backbone, Box::new(head)))
        }
    }
}

impl Model {
    pub fn predict(&self, case: &Case) -> packtherm::Result<ScalarField> {
        Ok(match self {
            Model::Constant(t0) => ScalarField::constant(*case.grid(), *t0),
            Model::Truth => case.require_truth()?.clone(),
            Model::Backbone(b) | Model::Supervised(b) => b.predict(&case.lambda)?,
            Model::Pipeline(b, h) => h.predict(&b.predict(&case.lambda)?, b.config(), &case.lambda)?,
        })
    }
}

fn model_name(spec: &Path) -> String {
    spec.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.display().to_string())
}

pub fn eval_model(spec: &Path, manifest: &Path, split: Split, t0: f64) -> Result<EvalReport> {
    let model = load_model(spec, t0)?;
    let cases = load_cases(manifest, split)?;
    ensure!(!cases.is_empty(), "split {split} has no cases");
    Ok(evaluate(&model_name(spec), split.name(), &cases, |c| model.predict(c))?)
}

pub fn print_report(r: &EvalReport) {
    let m = &r.mean;
    println!(
        "{:<12} {:<6} cases {:>4}  MAE {:.5}  BMAE {:.5}  Max-AE {:.5}  MT-AE {:.5}",
        r.model,
        r.split,
        r.cases.len(),
        m.mae,
        m.bmae,
        m.max_ae,
        m.mt_ae
    );
}

pub fn print_comparison(a: &EvalReport, b: &EvalReport) {
    println!("{:<8} {:>12} {:>12} {:>12}", "index", a.model, b.model, "improvement");
    let rows = [
        ("MAE", a.mean.mae, b.mean.mae),
        ("BMAE", a.mean.bmae, b.mean.bmae),
        ("Max-AE", a.mean.max_ae, b.mean.max_ae),
        ("MT-AE", a.mean.mt_ae, b.mean.mt_ae),
    ];
    for (name, x, y) in rows {
        println!("{name:<8} {x:>12.5} {y:>12.5} {:>11.1}%", 100.0 * relative_improvement(x, y));
    }
}

pub fn render(field: &Path, out: &Path, min: Option<f64>, max: Option<f64>) -> Result<()> {
    let (rows, cols, values) = read_field_raw(field)?;
    let lo = min.unwrap_or_else(|| values.iter().copied().fold(f64::INFINITY, f64::min));
    let hi = max.unwrap_or_else(|| values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let img = to_pgm(&values, rows, cols, lo, hi)?;
    fs::write(out, img).with_context(|| format!("writing {}", out.display()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub pipeline: EvalReport,
    pub backbone: EvalReport,
    pub supervised: EvalReport,
    pub constant: EvalReport,
    /// Relative improvement of the pipeline over the supervised baseline.
    pub mae_improvement: f64,
    pub bmae_improvement: f64,
    /// Relative improvement of the backbone alone over the constant predictor.
    pub backbone_vs_constant: f64,
    pub pretrain_epoch_loss: Vec<f64>,
    pub posttrain_epoch_loss: Vec<f64>,
    pub supervised_epoch_loss: Vec<f64>,
    pub supervised_val_mae: Vec<f64>,
}

/// The whole pipeline from one configuration, written under `out`.
pub fn run(cfg: &RunConfig, out: &Path, workers: usize) -> Result<RunSummary> {
    create_dir(out)?;
    write_json(&out.join("config.resolved.json"), cfg)?;
    let data = out.join("data");
    let gen = GenArgs { counts: cfg.splits, seed: cfg.derived_seed(SEED_DATASET), cells: cfg.cells, grid: cfg.grid, out: data.clone() };
    let manifest = gen_layouts(&gen, cfg)?;
    println!("generated {} cases in {}", cfg.splits.total(), data.display());
    let solve_args = SolveArgs {
        manifest: manifest.clone(),
        solver: SolverChoice::Reference,
        options: cfg.solver,
        out: PathBuf::from("temperature"),
        force: false,
        workers,
        splits: vec![Split::Labeled, Split::Val, Split::Test],
    };
    println!("solved {} cases", solve(&solve_args, cfg)?);

    let models = out.join("models");
    let backbone = models.join("backbone.ptmw");
    let head = models.join("pipeline.ptmw");
    let supervised = models.join("supervised.ptmw");
    let pre_log = cmd_pretrain(&manifest, cfg, &backbone)?;
    let post_log = cmd_posttrain(&manifest, cfg, &backbone, &head)?;
    let sup_log = cmd_train_supervised(&manifest, cfg, &supervised)?;

    let reports = out.join("reports");
    create_dir(&reports)?;
    let eval = |spec: &Path, name: &str| -> Result<EvalReport> {
        let r = eval_model(spec, &manifest, Split::Test, cfg.pack.t0)?;
        r.write_json(&reports.join(format!("{name}.json")))?;
        fs::write(reports.join(format!("{name}.csv")), r.to_csv())?;
        print_report(&r);
        Ok(r)
    };
    let pipeline_r = eval(&head, "pipeline")?;
    let backbone_r = eval(&backbone, "backbone")?;
    let supervised_r = eval(&supervised, "supervised")?;
    let constant_r = eval(Path::new("constant"), "constant")?;
    print_comparison(&pipeline_r, &supervised_r);

    let renders = out.join("render");
    create_dir(&renders)?;
    let m = read_manifest(&manifest)?;
    if let Some(entry) = m.split(Split::Test).next() {
        let case = Case::load(entry, &base_dir(&manifest))?;
        let truth = case.require_truth()?;
        let (lo, hi) = (truth.stats().min, truth.stats().max);
        render(&data.join(entry.temperature.as_ref().expect("test cases are solved")), &renders.join("truth.pgm"), Some(lo), Some(hi))?;
        let pred = load_model(&head, cfg.pack.t0)?.predict(&case)?;
        let pred_path = renders.join("pipeline.tfld");
        write_field(&pred, &pred_path)?;
        render(&pred_path, &renders.join("pipeline.pgm"), Some(lo), Some(hi))?;
        render(&data.join(&entry.conductivity), &renders.join("conductivity.pgm"), None, None)?;
    }

    let summary = RunSummary {
        seed: cfg.seed,
        mae_improvement: relative_improvement(pipeline_r.mean.mae, supervised_r.mean.mae),
        bmae_improvement: relative_improvement(pipeline_r.mean.bmae, supervised_r.mean.bmae),
        backbone_vs_constant: relative_improvement(backbone_r.mean.mae, constant_r.mean.mae),
        pipeline: pipeline_r,
        backbone: backbone_r,
        supervised: supervised_r,
        constant: constant_r,
        pretrain_epoch_loss: pre_log.epoch_mean_loss,
        posttrain_epoch_loss: post_log.epoch_mean_loss,
        supervised_epoch_loss: sup_log.epoch_mean_loss,
        supervised_val_mae: sup_log.val_mae,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

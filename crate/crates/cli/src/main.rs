//! `packtherm`: dataset generation, solving, training, evaluation and rendering.

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use packtherm::fields::Split;

use packtherm_cli::commands::{self, GenArgs, SolveArgs, SolverChoice};
use packtherm_cli::config::{self, write_json, RunConfig};

#[derive(Parser)]
#[command(name = "packtherm", version, about = "Battery-pack temperature surrogate pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref())?.resolve(self.seed)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    manifest: PathBuf,
    /// Weight file to write; the card and log go next to it.
    #[arg(long)]
    out_model: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Random layouts, conductivity fields and a split manifest.
    GenLayouts {
        #[command(flatten)]
        common: Common,
        /// Total cases, split in the configured proportions.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        cells: Option<usize>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Temperature fields for the cases of a manifest.
    Solve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = SolverChoice::Reference)]
        solver: SolverChoice,
        #[arg(long)]
        tol: Option<f64>,
        /// Output directory, relative to the manifest.
        #[arg(long, default_value = "temperature")]
        out: PathBuf,
        /// Re-solve cases that already have a temperature field.
        #[arg(long)]
        force: bool,
        /// Worker threads; defaults to the available cores.
        #[arg(long)]
        workers: Option<usize>,
        /// Restrict to these splits (repeatable); all by default.
        #[arg(long = "split")]
        splits: Vec<Split>,
    },
    /// Physics-informed pre-training of the backbone on the pretrain split.
    Pretrain(TrainArgs),
    /// Trains the projection head on the labeled split with the backbone frozen.
    Posttrain {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        backbone: PathBuf,
    },
    /// Purely supervised baseline on the labeled split, selected on val.
    TrainSupervised(TrainArgs),
    /// Error indices of a model on one split.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Weight file, or `constant` / `truth`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Second model; prints a side-by-side table.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long)]
        compare_report: Option<PathBuf>,
        /// Per-case rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Grayscale PGM of a field.
    Render {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        min: Option<f64>,
        #[arg(long)]
        max: Option<f64>,
    },
    /// Everything from one configuration: generate, solve, train, evaluate, render.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenLayouts { common, count, cells, grid, out } => {
            let mut cfg = common.resolve()?;
            cfg.cells = cells.unwrap_or(cfg.cells);
            cfg.grid = grid.unwrap_or(cfg.grid);
            if let Some(n) = count {
                cfg.splits = cfg.splits.scaled(n);
            }
            let cfg = cfg.resolve(None)?;
            let args = GenArgs {
                counts: cfg.splits,
                seed: cfg.derived_seed(config::SEED_DATASET),
                cells: cfg.cells,
                grid: cfg.grid,
                out: out.clone(),
            };
            let manifest = commands::gen_layouts(&args, &cfg)?;
            write_json(&out.join("config.resolved.json"), &cfg)?;
            println!("wrote {} cases to {}", cfg.splits.total(), manifest.display());
        }
        Command::Solve { config, manifest, solver, tol, out, force, workers, splits } => {
            let mut cfg = RunConfig::load(config.as_deref())?.resolve(None)?;
            if let Some(t) = tol {
                cfg.solver.tolerance = t;
            }
            cfg.solver.validate()?;
            let args = SolveArgs {
                manifest,
                solver,
                options: cfg.solver,
                out,
                force,
                workers: workers.unwrap_or_else(default_workers),
                splits: if splits.is_empty() { Split::ALL.to_vec() } else { splits },
            };
            println!("solved {} cases", commands::solve(&args, &cfg)?);
        }
        Command::Pretrain(t) => {
            commands::cmd_pretrain(&t.manifest, &t.common.resolve()?, &t.out_model)?;
        }
        Command::Posttrain { train: t, backbone } => {
            commands::cmd_posttrain(&t.manifest, &t.common.resolve()?, &backbone, &t.out_model)?;
        }
        Command::TrainSupervised(t) => {
            commands::cmd_train_supervised(&t.manifest, &t.common.resolve()?, &t.out_model)?;
        }
        Command::Eval { config, model, manifest, split, report, compare, compare_report, csv } => {
            let cfg = RunConfig::load(config.as_deref())?.resolve(None)?;
            let r = commands::eval_model(&model, &manifest, split, cfg.pack.t0)?;
            commands::print_report(&r);
            if let Some(p) = &report {
                r.write_json(p)?;
            }
            if let Some(p) = &csv {
                std::fs::write(p, r.to_csv())?;
            }
            if let Some(other) = compare {
                let b = commands::eval_model(&other, &manifest, split, cfg.pack.t0)?;
                commands::print_report(&b);
                if let Some(p) = &compare_report {
                    b.write_json(p)?;
                }
                commands::print_comparison(&r, &b);
            }
        }
        Command::Render { field, out, min, max } => commands::render(&field, &out, min, max)?,
        Command::Run { common, out, workers } => {
            let cfg = common.resolve()?;
            let s = commands::run(&cfg, &out, workers.unwrap_or_else(default_workers))?;
            println!(
                "pipeline vs supervised: MAE {:+.1}%  BMAE {:+.1}%; backbone vs constant: MAE {:+.1}%",
                100.0 * s.mae_improvement,
                100.0 * s.bmae_improvement,
                100.0 * s.backbone_vs_constant
            );
            println!("summary written to {}", Path::new(&out).join("summary.json").display());
        }
    }
    Ok(())
}

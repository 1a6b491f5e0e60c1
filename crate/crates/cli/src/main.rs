use std::path::PathBuf;
use std::process::ExitCode;

use advloss::commands;
use advloss::config::load;
use advloss::sweep::{run_sweep, RunStatus};
use advloss::{experiment, CliError, Scale, SweepSpec, EXPERIMENTS};
use advloss_core::landscape::LANDSCAPE_LOSSES;
use advloss_core::CATALOG;
use advloss_dantest::data::{data_dir, load_mnist, DATA_DIR_ENV};
use advloss_dantest::{DanConfig, Dataset};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "advloss", version, about = "Adversarial loss landscapes, validity checks and discriminative adversarial training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Export Ψ grids and ψ curves for a set of losses.
    Landscape {
        #[arg(long, default_value = "out/landscape")]
        out: PathBuf,
        /// Comma-separated loss names (default: the six landscape losses).
        #[arg(long, value_delimiter = ',')]
        losses: Vec<String>,
        /// γ grid intervals (even).
        #[arg(long, default_value_t = 100)]
        gamma_intervals: usize,
        /// Samples of y per γ in the exported Ψ grid.
        #[arg(long, default_value_t = 201)]
        y_points: usize,
    },
    /// Classify losses as valid adversarial objectives.
    Validity {
        #[arg(long, default_value = "out/validity")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        losses: Vec<String>,
        /// Critic weights ε (comma-separated).
        #[arg(long, value_delimiter = ',', default_value = "1")]
        epsilons: Vec<f64>,
    },
    /// Train one classifier/critic pair and record its test error.
    Train {
        #[command(flatten)]
        common: RunArgs,
        #[arg(long, default_value = "out/train")]
        out: PathBuf,
        /// Override the number of training steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run a grid of configurations; completed runs are skipped on rerun.
    Sweep {
        #[command(flatten)]
        common: RunArgs,
        /// A named grid instead of --config (see --list).
        #[arg(long, conflicts_with = "config")]
        experiment: Option<String>,
        #[arg(long, default_value = "out/sweep")]
        out: PathBuf,
        /// Worker threads; each runs one cell at a time.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// List the named grids and exit.
        #[arg(long)]
        list: bool,
    },
    /// Tabulate a finished sweep as mean±std with lowest / lowest-three flags.
    Report {
        #[arg(long, default_value = "out/sweep")]
        out: PathBuf,
        #[arg(long, default_value = "loss")]
        rows: String,
        #[arg(long, default_value = "regularizer")]
        cols: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// desk: 5000 steps on 10k images, 3 runs per cell; paper: 100k steps, full data, 10 runs.
    #[arg(long)]
    preset: Option<Scale>,
    /// MNIST directory (default: $ADVLOSS_DATA_DIR, else the nearest data/mnist).
    #[arg(long)]
    data: Option<PathBuf>,
}

impl RunArgs {
    fn load_data(&self) -> Result<(Dataset, Dataset), CliError> {
        let dir = self.data.clone().unwrap_or_else(data_dir);
        eprintln!("loading MNIST from {} (override with --data or {DATA_DIR_ENV})", dir.display());
        Ok(load_mnist(&dir)?)
    }
}

fn names_or(given: Vec<String>, default: &[&str]) -> Vec<String> {
    if given.is_empty() {
        default.iter().map(|s| s.to_string()).collect()
    } else {
        given
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Landscape { out, losses, gamma_intervals, y_points } => {
            let losses = names_or(losses, &LANDSCAPE_LOSSES);
            let summaries = commands::landscape(&out, &losses, gamma_intervals, y_points)?;
            println!("{:<22} {:>12} {:>12} {:>12} {:>10}", "loss", "symmetry", "refinement", "dominance", "psi(1/2)");
            for s in summaries {
                println!("{:<22} {:>12.3e} {:>12.3e} {:>12.3e} {:>10.6}", s.loss, s.symmetry_defect, s.refinement_defect, s.dominance_defect, s.psi_half);
            }
            println!("wrote {}", out.display());
        }
        Command::Validity { out, losses, epsilons } => {
            let losses = names_or(losses, &CATALOG);
            let results = commands::validity(&losses, &epsilons);
            println!("{:<22} {:>6}  {:<16} {:>8}", "loss", "eps", "verdict", "y*");
            for (name, eps, r) in &results {
                match r {
                    Ok(rep) => {
                        let y = rep.crossing.y_star.map_or("-".to_string(), |y| format!("{y:.6}"));
                        println!("{name:<22} {eps:>6}  {:<16} {y:>8}", format!("{:?}", rep.verdict));
                    }
                    Err(e) => println!("{name:<22} {eps:>6}  n/a ({e})"),
                }
            }
            commands::write_validity(&out, &results)?;
        }
        Command::Train { common, out, steps } => {
            let mut config: DanConfig = match &common.config {
                Some(p) => load(p)?,
                None => DanConfig::default(),
            };
            if let Some(scale) = common.preset {
                scale.apply(&mut config);
            }
            if let Some(s) = steps {
                config.steps = s;
            }
            if let Some(seed) = common.seed {
                config.seed = seed;
            }
            config.validate()?;
            let (standard, test) = common.load_data()?;
            let record = commands::train_run(&config, &standard, &test, &out, |p| {
                eprintln!("step {:>6}  error {:.4}  critic {:.4}  penalty {:.4}  generator {:.4}", p.eval.step, p.eval.error, p.losses.critic, p.losses.penalty, p.losses.generator);
            })?;
            if let Some(f) = &record.fault {
                println!("stopped at step {} ({:?} phase): non-finite value from {}", f.step, f.phase, f.op);
            }
            println!("final error {:.4}  ({:.0} s)  -> {}", record.final_error, record.wall_time_secs, out.join(format!("{}.json", record.config_hash)).display());
        }
        Command::Sweep { common, experiment: name, out, jobs, list } => {
            if list {
                for (n, what) in EXPERIMENTS {
                    println!("{n:<16} {what}");
                }
                return Ok(());
            }
            let scale = common.preset.unwrap_or(Scale::Desk);
            let mut spec: SweepSpec = match (&name, &common.config) {
                (Some(n), _) => experiment(n, scale).ok_or_else(|| CliError::Sweep(format!("unknown experiment {n:?} (see --list)")))?,
                (None, Some(p)) => {
                    let mut s: SweepSpec = load(p)?;
                    if let Some(scale) = common.preset {
                        scale.apply_sweep(&mut s);
                    }
                    s
                }
                (None, None) => return Err(CliError::Sweep("give --config or --experiment".into())),
            };
            if let Some(seed) = common.seed {
                spec.base.seed = seed;
            }
            spec.validate()?;
            let (standard, test) = common.load_data()?;
            let cells = spec.cells().len();
            eprintln!("{cells} cells x {} runs -> {}", spec.runs_per_cell, out.display());
            let log = |key: &advloss::CellKey, seed: u64, status: &RunStatus| {
                let what = match status {
                    RunStatus::Trained { final_error, fault } => format!("error {final_error:.4}{}", if *fault { " (fault)" } else { "" }),
                    RunStatus::Reused { final_error, .. } => format!("error {final_error:.4} (already done)"),
                    RunStatus::Failed(e) => format!("failed: {e}"),
                };
                eprintln!("{} seed {seed}: {what}", key.values().join(" "));
            };
            let aggs = run_sweep(&spec, &standard, &test, &out, jobs, &log)?;
            let failed: usize = aggs.iter().map(|a| a.failed).sum();
            println!("{} cells aggregated in {}{}", aggs.len(), out.join("aggregate.csv").display(), if failed > 0 { format!(", {failed} runs failed") } else { String::new() });
        }
        Command::Report { out, rows, cols } => {
            print!("{}", commands::report(&out, &rows, &cols)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}


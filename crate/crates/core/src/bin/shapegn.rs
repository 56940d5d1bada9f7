use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shapegn::runner::{
    build_task, compare_optimizers, prepare_field, run_experiment, sweep_eikonal, write_surface_ply, CompareLeg,
    ExperimentConfig, OptimizerConfig, RunStatus, SweepLeg,
};
use shapegn::{Result, ShapeError};

#[derive(Parser)]
#[command(name = "shapegn", version, about = "Gauss-Newton shape learning with implicit neural surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long = "time-budget-s")]
    time_budget_s: Option<f64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Clear LBFGS history whenever the batch is resampled.
    #[arg(long = "lbfgs-reset-on-resample")]
    lbfgs_reset: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain and optimize one experiment.
    Run(Common),
    /// Run the experiment once per eikonal weight.
    SweepEikonal {
        #[command(flatten)]
        common: Common,
        /// Comma-separated weights, for example `1,0.1,0.01`.
        #[arg(long, value_delimiter = ',', required = true)]
        weights: Vec<f64>,
    },
    /// Run several optimizers from a shared pretrained initialization.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated optimizers: gn, adam, lbfgs, lbfgs-reset.
        #[arg(long, value_delimiter = ',', default_value = "gn,adam,lbfgs")]
        optimizers: Vec<String>,
        /// Per-optimizer iteration overrides, for example `adam=3000`.
        #[arg(long = "leg-iters", value_delimiter = ',')]
        leg_iters: Vec<String>,
    },
    /// Pretrain only; writes `pretrain.csv` and `surface_pretrained.ply`.
    Pretrain(Common),
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(n) = c.iters {
        cfg.iters = n;
    }
    if c.time_budget_s.is_some() {
        cfg.time_budget_s = c.time_budget_s;
    }
    if c.out.is_some() {
        cfg.output_dir = c.out.clone();
    }
    if c.lbfgs_reset {
        if let Some(OptimizerConfig::Lbfgs { reset_on_resample, .. }) = &mut cfg.optimizer {
            *reset_on_resample = Some(true);
        }
    }
    Ok(cfg)
}

fn report(status: &RunStatus, records: usize, dir: &std::path::Path) -> bool {
    match status {
        RunStatus::Completed | RunStatus::TimeBudget => {
            println!("{}: {} records in {}", status.label(), records, dir.display());
            true
        }
        RunStatus::Diverged { iteration } => {
            eprintln!("diverged at iteration {iteration}; partial logs in {}", dir.display());
            false
        }
        RunStatus::Failed { iteration, message } => {
            eprintln!("failed at iteration {iteration}: {message}; partial logs in {}", dir.display());
            false
        }
    }
}

fn report_legs(legs: &[SweepLeg]) -> bool {
    for leg in legs {
        let status = match &leg.outcome {
            Ok(o) => format!("{} final_loss={:e}", o.status.label(), o.final_loss()),
            Err(e) => format!("error: {e}"),
        };
        println!("{}: {} ({})", leg.label, status, leg.output_dir.display());
    }
    true
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(c) => {
            let o = run_experiment(&load(&c)?)?;
            Ok(report(&o.status, o.records.len(), &o.output_dir))
        }
        Command::SweepEikonal { common, weights } => {
            let legs = sweep_eikonal(&load(&common)?, &weights)?;
            Ok(report_legs(&legs))
        }
        Command::Compare {
            common,
            optimizers,
            leg_iters,
        } => {
            let cfg = load(&common)?;
            if optimizers.len() < 2 {
                return Err(ShapeError::Config("compare needs at least two optimizers".into()));
            }
            let mut overrides = Vec::new();
            for s in &leg_iters {
                let (name, n) = s
                    .split_once('=')
                    .ok_or_else(|| ShapeError::Config(format!("bad --leg-iters entry '{s}'")))?;
                let n: usize = n
                    .parse()
                    .map_err(|_| ShapeError::Config(format!("bad iteration count in '{s}'")))?;
                overrides.push((name.trim().to_string(), n));
            }
            let mut legs = Vec::new();
            for name in &optimizers {
                let mut optimizer = OptimizerConfig::from_name(name)?;
                if let Some(OptimizerConfig::Lbfgs { history, .. }) = cfg.optimizer {
                    if let OptimizerConfig::Lbfgs { history: h, .. } = &mut optimizer {
                        *h = history;
                    }
                }
                let iters = overrides
                    .iter()
                    .find(|(n, _)| n == optimizer.short_name())
                    .map(|(_, n)| *n);
                legs.push(CompareLeg { optimizer, iters });
            }
            let legs = compare_optimizers(&cfg, &legs)?;
            Ok(report_legs(&legs))
        }
        Command::Pretrain(c) => {
            let cfg = load(&c)?.resolve()?;
            let setup = build_task(&cfg)?;
            let out = cfg.output_path();
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("config_resolved.toml"), cfg.to_toml_string()?)?;
            let (field, rep) = prepare_field(&cfg, &setup)?;
            let mut csv = String::from("iter,loss\n");
            if let Some(r) = &rep {
                for (k, l) in r.losses.iter().enumerate() {
                    csv.push_str(&format!("{k},{}\n", shapegn::metrics::fmt_f64(*l)));
                }
                println!(
                    "pretrain: {} iterations, final loss {:e}",
                    r.iterations, r.final_loss
                );
            }
            std::fs::write(out.join("pretrain.csv"), csv)?;
            let proj = cfg.projection.unwrap_or_default();
            let n = cfg.metrics.ply_samples.unwrap_or(2048);
            write_surface_ply(&out.join("surface_pretrained.ply"), &field, &setup.bounds, n, &proj, cfg.seed)?;
            println!("wrote {}", out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

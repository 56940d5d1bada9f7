use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use super::config::{ExperimentConfig, OptimizerConfig};
use super::experiment::{prepare_field, run_experiment, run_with_field, write_pretrain_log, RunOutcome, RunStatus};
use super::tasks::build_task;
use crate::error::Result;
use crate::metrics::fmt_f64;

/// One leg of a sweep or comparison; `outcome` is `Err` when the leg could not start.
#[derive(Debug)]
pub struct SweepLeg {
    pub label: String,
    pub output_dir: PathBuf,
    pub outcome: std::result::Result<RunOutcome, String>,
}

impl SweepLeg {
    pub fn status_label(&self) -> String {
        match &self.outcome {
            Ok(o) => o.status.label().to_string(),
            Err(_) => "error".to_string(),
        }
    }

    /// True when the leg diverged, failed or errored.
    pub fn flagged(&self) -> bool {
        !matches!(&self.outcome, Ok(o) if o.status.is_ok())
    }
}

fn summary_fields(leg: &SweepLeg) -> String {
    let (n, last, best, cd, msg) = match &leg.outcome {
        Ok(o) => (
            o.records.len(),
            o.final_loss(),
            o.best_loss,
            o.final_chamfer().unwrap_or(f64::NAN),
            match &o.status {
                RunStatus::Failed { message, .. } => message.clone(),
                RunStatus::Diverged { iteration } => format!("non-finite loss at iteration {iteration}"),
                _ => String::new(),
            },
        ),
        Err(e) => (0, f64::NAN, f64::NAN, f64::NAN, e.clone()),
    };
    let msg = msg.replace([',', '\n'], ";");
    format!(
        "{},{},{},{},{},{},{}",
        leg.status_label(),
        leg.flagged(),
        n,
        fmt_f64(last),
        fmt_f64(best),
        fmt_f64(cd),
        msg
    )
}

/// Run the base config once per eikonal weight; writes `sweep.csv` in the base output directory.
///
/// A failing weight is recorded and the sweep continues.
pub fn sweep_eikonal(base: &ExperimentConfig, weights: &[f64]) -> Result<Vec<SweepLeg>> {
    let root = base.resolve()?.output_path();
    std::fs::create_dir_all(&root)?;
    let mut legs = Vec::new();
    for (i, &w) in weights.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.eikonal_weight = Some(w);
        let dir = base
            .resolve()?
            .output_dir
            .unwrap()
            .join(format!("eikonal_{i:02}_{w:e}"));
        cfg.output_dir = Some(dir);
        let out = cfg.clone();
        let outcome = run_experiment(&cfg).map_err(|e| e.to_string());
        legs.push(SweepLeg {
            label: format!("{w:e}"),
            output_dir: out.output_path(),
            outcome,
        });
    }
    let mut w = BufWriter::new(File::create(root.join("sweep.csv"))?);
    writeln!(w, "eikonal_weight,status,flagged,records,final_loss,best_loss,final_chamfer,message")?;
    for (leg, weight) in legs.iter().zip(weights) {
        writeln!(w, "{},{}", fmt_f64(*weight), summary_fields(leg))?;
    }
    w.flush()?;
    Ok(legs)
}

/// Per-leg settings of an optimizer comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareLeg {
    pub optimizer: OptimizerConfig,
    /// Overrides the base iteration count (for example to match wall time).
    pub iters: Option<usize>,
}

/// Run several optimizers from one shared pretrained initialization.
///
/// Writes `compare.csv` (long format keyed by optimizer, iteration and wall time)
/// and `compare_summary.csv` in the base output directory; each leg writes its own
/// run artifacts into a subdirectory named after the optimizer.
pub fn compare_optimizers(base: &ExperimentConfig, legs: &[CompareLeg]) -> Result<Vec<SweepLeg>> {
    let resolved = base.resolve()?;
    let root = resolved.output_path();
    std::fs::create_dir_all(&root)?;
    std::fs::write(root.join("config_resolved.toml"), resolved.to_toml_string()?)?;
    let setup = build_task(&resolved)?;
    let (field, report) = prepare_field(&resolved, &setup)?;
    if let Some(r) = &report {
        write_pretrain_log(&root.join("pretrain.csv"), r)?;
    }
    let mut names: Vec<String> = Vec::new();
    let mut out = Vec::new();
    for leg in legs {
        let mut name = leg.optimizer.short_name().to_string();
        let dup = names.iter().filter(|n| n.starts_with(&name)).count();
        if dup > 0 {
            name = format!("{name}_{dup}");
        }
        names.push(name.clone());
        let mut cfg = base.clone();
        cfg.optimizer = Some(leg.optimizer);
        if let Some(n) = leg.iters {
            cfg.iters = n;
        }
        let dir = root.join(&name);
        let outcome = cfg
            .resolve()
            .and_then(|c| {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("config_resolved.toml"), c.to_toml_string()?)?;
                run_with_field(&c, &setup, field.clone(), report.clone(), &dir)
            })
            .map_err(|e| e.to_string());
        out.push(SweepLeg {
            label: name,
            output_dir: dir,
            outcome,
        });
    }

    let kinds = setup.kinds();
    let mut w = BufWriter::new(File::create(root.join("compare.csv"))?);
    let mut header = String::from("optimizer,iter,wall_time_s,total_loss");
    for k in &kinds {
        header.push(',');
        header.push_str(k.name());
    }
    writeln!(w, "{header}")?;
    for leg in &out {
        if let Ok(o) = &leg.outcome {
            for r in &o.records {
                let mut line = format!(
                    "{},{},{},{}",
                    leg.label,
                    r.iteration,
                    fmt_f64(r.wall_time_s),
                    fmt_f64(r.total_loss)
                );
                for k in &kinds {
                    let v: f64 = r.per_term_losses.iter().filter(|(kk, _)| kk == k).map(|(_, v)| v).sum();
                    line.push(',');
                    line.push_str(&fmt_f64(v));
                }
                writeln!(w, "{line}")?;
            }
        }
    }
    w.flush()?;
    let mut s = BufWriter::new(File::create(root.join("compare_summary.csv"))?);
    writeln!(s, "optimizer,status,flagged,records,final_loss,best_loss,final_chamfer,message")?;
    for leg in &out {
        writeln!(s, "{},{}", leg.label, summary_fields(leg))?;
    }
    s.flush()?;
    Ok(out)
}

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, OptimizerConfig};
use super::tasks::{build_task, GroundTruth, TaskSetup};
use crate::error::{Result, ShapeError};
use crate::field::{NeuralField, ParamVector, ScalarField};
use crate::metrics::{chamfer_one_sided, chamfer_projected, fmt_f64, CsvSink, LossRecord};
use crate::optim::{
    adam_step, batch_loss, gn_step_on_batch, pretrain, AdamParams, AdamState, GnConfig, Lbfgs, LrSchedule,
    PretrainConfig, PretrainReport,
};
use crate::residuals::{
    eval_loss, eval_loss_gradient, residual_at, term_loss_by_kind, ResidualEval, ResidualKind, ResidualOptions,
};
use crate::sampling::{resample_iteration, sample_level_set, ProjectionConfig, SurfaceDiagnostics};
use crate::geomio::write_point_cloud;

/// How a run ended.
#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Completed,
    /// Stopped by the wall-clock budget after `iterations` logged records.
    TimeBudget,
    /// The logged loss became non-finite.
    Diverged { iteration: usize },
    /// An error (empty surface, degenerate gradient, ...) stopped the loop.
    Failed { iteration: usize, message: String },
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Completed | RunStatus::TimeBudget)
    }

    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::TimeBudget => "time_budget",
            RunStatus::Diverged { .. } => "diverged",
            RunStatus::Failed { .. } => "failed",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub status: RunStatus,
    pub records: Vec<LossRecord>,
    /// `(iteration, chamfer)`; NaN when the surface could not be sampled.
    pub chamfer: Vec<(usize, f64)>,
    pub surface: Vec<(usize, SurfaceDiagnostics)>,
    pub best_iteration: usize,
    pub best_loss: f64,
    pub final_params: ParamVector,
    pub best_params: ParamVector,
    pub pretrain: Option<PretrainReport>,
}

impl RunOutcome {
    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.total_loss)
    }

    pub fn loss_at(&self, iteration: usize) -> Option<f64> {
        self.records.iter().find(|r| r.iteration == iteration).map(|r| r.total_loss)
    }

    pub fn term_loss(&self, iteration: usize, kind: ResidualKind) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.iteration == iteration)
            .map(|r| r.per_term_losses.iter().filter(|(k, _)| *k == kind).map(|(_, v)| v).sum())
    }

    pub fn final_chamfer(&self) -> Option<f64> {
        self.chamfer.last().map(|c| c.1)
    }
}

/// Initial network for a resolved config: deterministic init, then optional pretraining.
pub fn prepare_field(cfg: &ExperimentConfig, setup: &TaskSetup) -> Result<(NeuralField, Option<PretrainReport>)> {
    let spec = cfg
        .field
        .clone()
        .ok_or_else(|| ShapeError::Config("field unresolved".into()))?;
    let field = NeuralField::initialized(spec)?;
    let p = &cfg.pretrain;
    let iters = p.iters.unwrap_or(0);
    if !p.enabled.unwrap_or(true) || iters == 0 {
        return Ok((field, None));
    }
    let mut pc = PretrainConfig::new(setup.pretrain_target, setup.bounds, iters);
    pc.n_samples = p.n_samples.unwrap_or(pc.n_samples);
    pc.threshold = p.threshold.unwrap_or(pc.threshold);
    pc.seed = cfg.seed;
    let (theta, report) = pretrain(&field, &pc)?;
    Ok((field.with_params(theta)?, Some(report)))
}

/// Resolve, pretrain and run one experiment, writing artifacts to its output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let cfg = cfg.resolve()?;
    let setup = build_task(&cfg)?;
    let out = cfg.output_path();
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config_resolved.toml"), cfg.to_toml_string()?)?;
    let (field, report) = prepare_field(&cfg, &setup)?;
    if let Some(r) = &report {
        write_pretrain_log(&out.join("pretrain.csv"), r)?;
    }
    run_with_field(&cfg, &setup, field, report, &out)
}

pub(crate) fn write_pretrain_log(path: &Path, r: &PretrainReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "iter,loss")?;
    for (k, l) in r.losses.iter().enumerate() {
        writeln!(w, "{k},{}", fmt_f64(*l))?;
    }
    w.flush()?;
    Ok(())
}

enum OptState {
    Gn(GnConfig),
    Adam {
        state: AdamState,
        lr: f64,
        schedule: LrSchedule,
    },
    Lbfgs(Lbfgs),
}

fn opt_state(cfg: &ExperimentConfig, p: usize) -> Result<OptState> {
    match cfg.optimizer {
        Some(o @ OptimizerConfig::GaussNewton { .. }) => Ok(OptState::Gn(o.gn().unwrap())),
        Some(OptimizerConfig::Adam { lr, schedule }) => Ok(OptState::Adam {
            state: AdamState::new(p),
            lr: lr.unwrap_or(1e-3),
            schedule: schedule.unwrap_or(LrSchedule::Constant),
        }),
        Some(OptimizerConfig::Lbfgs {
            history,
            reset_on_resample,
        }) => Ok(OptState::Lbfgs(Lbfgs::new(
            history.unwrap_or(10),
            reset_on_resample.unwrap_or(false),
        ))),
        None => Err(ShapeError::Config("optimizer unresolved".into())),
    }
}

struct StepOutput {
    eval: ResidualEval,
    next: Option<ParamVector>,
    eta: f64,
    solver_iters: usize,
}

fn step(
    opt: &mut OptState,
    setup: &TaskSetup,
    field: &NeuralField,
    batches: &[crate::residuals::TermBatch],
    take_step: bool,
    k: usize,
    total: usize,
    opts: &ResidualOptions,
) -> Result<StepOutput> {
    let terms = &setup.terms;
    match opt {
        OptState::Gn(gn) => {
            if !take_step {
                return Ok(StepOutput {
                    eval: eval_loss(terms, field, batches, opts)?,
                    next: None,
                    eta: 0.0,
                    solver_iters: 0,
                });
            }
            let (theta, rep) = gn_step_on_batch(terms, field, batches, gn, opts)?;
            Ok(StepOutput {
                eval: rep.eval,
                next: Some(theta),
                eta: rep.eta_used,
                solver_iters: rep.solver_iterations,
            })
        }
        OptState::Adam { state, lr, schedule } => {
            let (eval, g) = eval_loss_gradient(terms, field, batches, opts)?;
            if !take_step {
                return Ok(StepOutput {
                    eval,
                    next: None,
                    eta: 0.0,
                    solver_iters: 0,
                });
            }
            let rate = schedule.lr_at(*lr, k, total);
            let mut theta = field.params().clone();
            adam_step(&mut theta.0, g.as_slice(), state, rate, &AdamParams::default());
            Ok(StepOutput {
                eval,
                next: Some(theta),
                eta: rate,
                solver_iters: 1,
            })
        }
        OptState::Lbfgs(lb) => {
            let (eval, g) = eval_loss_gradient(terms, field, batches, opts)?;
            if !take_step {
                return Ok(StepOutput {
                    eval,
                    next: None,
                    eta: 0.0,
                    solver_iters: 0,
                });
            }
            let mut theta = field.params().0.clone();
            let loss0 = eval.loss();
            let rep = lb.step(&mut theta, g.as_slice(), loss0, |t| {
                batch_loss(terms, field, ParamVector(t.to_vec()), batches, opts).unwrap_or(f64::NAN)
            })?;
            Ok(StepOutput {
                eval,
                next: Some(ParamVector(theta)),
                eta: rep.step,
                solver_iters: rep.evaluations,
            })
        }
    }
}

fn chamfer_at(
    field: &NeuralField,
    gt: &GroundTruth,
    n: usize,
    seed: u64,
    bounds: &crate::sampling::Bounds,
    proj: &ProjectionConfig,
) -> f64 {
    let res = match gt {
        GroundTruth::Analytic { reference, bounds } => chamfer_projected(field, reference, n, seed, bounds, proj),
        GroundTruth::Cloud(cloud) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_level_set(field, bounds, n, proj, None, &mut rng)
                .and_then(|s| chamfer_one_sided(&s.points, &cloud.points))
        }
    };
    res.unwrap_or(f64::NAN)
}

/// Seed of the chamfer sampling stream; fixed across iterations.
const CHAMFER_STREAM: u64 = 0xC4A3_F3E7;

/// Write surface samples with `|div(∇f/‖∇f‖)|` as the `quality` channel.
pub fn write_surface_ply(
    path: &Path,
    field: &NeuralField,
    bounds: &crate::sampling::Bounds,
    n: usize,
    proj: &ProjectionConfig,
    seed: u64,
) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = match sample_level_set(field, bounds, n, proj, None, &mut rng) {
        Ok(s) => s.points,
        Err(_) => Vec::new(),
    };
    let opts = ResidualOptions::default();
    let meta = Default::default();
    let mut keep = Vec::with_capacity(pts.len());
    let mut quality = Vec::with_capacity(pts.len());
    for x in pts {
        let jet = field.jet2(&x);
        if let Ok(v) = residual_at(ResidualKind::MeanCurvature, &jet, &x, &meta, &opts) {
            let (a, _) = v.as_array();
            if a[0].is_finite() {
                keep.push(x);
                quality.push(a[0].abs());
            }
        }
    }
    write_point_cloud(path, &keep, Some(("quality", &quality)))?;
    Ok(keep.len())
}

/// Optimization loop from a prepared field; writes all run artifacts to `out`.
pub fn run_with_field(
    cfg: &ExperimentConfig,
    setup: &TaskSetup,
    field0: NeuralField,
    pretrain_report: Option<PretrainReport>,
    out: &Path,
) -> Result<RunOutcome> {
    std::fs::create_dir_all(out)?;
    let kinds = setup.kinds();
    let mut loss_csv = CsvSink::create(&out.join("loss.csv"), &kinds)?;
    let mut chamfer_csv = BufWriter::new(File::create(out.join("chamfer.csv"))?);
    writeln!(chamfer_csv, "iter,wall_time_s,chamfer")?;
    let mut diag_csv = BufWriter::new(File::create(out.join("diagnostics.csv"))?);
    writeln!(diag_csv, "iter,term,requested,seeded,converged,mean_sq_residual")?;

    let opts = cfg.residual;
    let proj = cfg.projection.unwrap_or_default();
    let chamfer_every = cfg.metrics.chamfer_every.unwrap_or(25);
    let chamfer_n = cfg.metrics.chamfer_samples.unwrap_or(512);
    let mut opt = opt_state(cfg, field0.num_params())?;

    let mut field = field0;
    let mut outcome = RunOutcome {
        output_dir: out.to_path_buf(),
        status: RunStatus::Completed,
        records: Vec::new(),
        chamfer: Vec::new(),
        surface: Vec::new(),
        best_iteration: 0,
        best_loss: f64::INFINITY,
        final_params: field.params().clone(),
        best_params: field.params().clone(),
        pretrain: pretrain_report,
    };
    let mut opt_time = 0.0;
    for k in 0..=cfg.iters {
        if let Some(budget) = cfg.time_budget_s {
            if k > 0 && opt_time >= budget {
                outcome.status = RunStatus::TimeBudget;
                break;
            }
        }
        if let Some(gt) = &setup.ground_truth {
            if k % chamfer_every == 0 || k == cfg.iters {
                let cd = chamfer_at(&field, gt, chamfer_n, cfg.seed ^ CHAMFER_STREAM, &setup.bounds, &proj);
                outcome.chamfer.push((k, cd));
                writeln!(chamfer_csv, "{k},{},{}", fmt_f64(opt_time), fmt_f64(cd))?;
                chamfer_csv.flush()?;
            }
        }
        let t0 = Instant::now();
        let result = resample_iteration(&setup.terms, &field, cfg.seed, k, &opts).and_then(|b| {
            let s = step(&mut opt, setup, &field, &b.batches, k < cfg.iters, k, cfg.iters, &opts)?;
            Ok((b, s))
        });
        opt_time += t0.elapsed().as_secs_f64();
        let (batches, s) = match result {
            Ok(v) => v,
            Err(e) => {
                outcome.status = RunStatus::Failed {
                    iteration: k,
                    message: e.to_string(),
                };
                break;
            }
        };
        for d in &batches.surface {
            writeln!(
                diag_csv,
                "{k},{},{},{},{},{}",
                d.term,
                d.requested,
                d.seeded,
                d.converged,
                fmt_f64(d.mean_sq_residual)
            )?;
            outcome.surface.push((k, d.clone()));
        }
        diag_csv.flush()?;
        let total = s.eval.loss();
        let rec = LossRecord {
            iteration: k,
            wall_time_s: opt_time,
            total_loss: total,
            per_term_losses: term_loss_by_kind(&setup.terms, &s.eval),
            eta: s.eta,
            solver_iters: s.solver_iters,
        };
        loss_csv.log_record(&rec)?;
        outcome.records.push(rec);
        if !total.is_finite() {
            outcome.status = RunStatus::Diverged { iteration: k };
            break;
        }
        if total < outcome.best_loss {
            outcome.best_loss = total;
            outcome.best_iteration = k;
            outcome.best_params = field.params().clone();
        }
        if let Some(next) = s.next {
            if next.0.iter().any(|v| !v.is_finite()) {
                outcome.status = RunStatus::Diverged { iteration: k + 1 };
                break;
            }
            field = field.with_params(next)?;
        }
    }
    outcome.final_params = field.params().clone();

    let n_ply = cfg.metrics.ply_samples.unwrap_or(2048);
    let ply_seed = cfg.seed ^ 0x504C_5953;
    write_surface_ply(&out.join("surface_final.ply"), &field, &setup.bounds, n_ply, &proj, ply_seed)?;
    let best = field.with_params(outcome.best_params.clone())?;
    write_surface_ply(&out.join("surface_best.ply"), &best, &setup.bounds, n_ply, &proj, ply_seed)?;
    Ok(outcome)
}

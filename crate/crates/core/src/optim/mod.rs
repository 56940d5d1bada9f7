//! Regularized Gauss-Newton steps and first-order / quasi-Newton baselines.

mod adam;
mod lbfgs;
mod pretrain;
mod solvers;

use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapeError};
use crate::field::{NeuralField, ParamVector};
use crate::residuals::{eval_loss, eval_residuals, LossTerm, ResidualEval, ResidualOptions, TermBatch};
use crate::sampling::{resample_iteration, IterationBatches};

pub use adam::{adam_step, AdamParams, AdamState, LrSchedule};
pub use lbfgs::{Lbfgs, LbfgsReport};
pub use pretrain::{pretrain, PretrainConfig, PretrainReport};
pub use solvers::{
    gn_direction_cg, gn_direction_dense, gn_direction_woodbury, gramian, CgConfig, CgResult, DenseOperator,
    GramianOperator, LinearOperator, Preconditioner,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GnSolver {
    /// Cholesky of the damped Gramian.
    Dense,
    /// Matrix-free conjugate gradients.
    ConjugateGradient(CgConfig),
    /// Push-through identity; solves an `N x N` system.
    Woodbury,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    Fixed { eta: f64 },
    /// `count` step sizes spaced evenly in `log η` over `[eta_min, eta_max]`.
    LogLineSearch { eta_min: f64, eta_max: f64, count: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnConfig {
    pub epsilon: f64,
    pub solver: GnSolver,
    pub step: StepRule,
}

impl Default for GnConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            solver: GnSolver::Dense,
            step: StepRule::Fixed { eta: 0.1 },
        }
    }
}

impl GnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(ShapeError::InvalidArgument(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if matches!(self.solver, GnSolver::Woodbury) && self.epsilon == 0.0 {
            return Err(ShapeError::InvalidArgument("Woodbury solver needs epsilon > 0".into()));
        }
        match self.step {
            StepRule::Fixed { eta } if !(eta > 0.0 && eta.is_finite()) => {
                Err(ShapeError::InvalidArgument(format!("step size must be positive, got {eta}")))
            }
            StepRule::LogLineSearch {
                eta_min,
                eta_max,
                count,
            } if !(eta_min > 0.0 && eta_min < eta_max && eta_max.is_finite() && count >= 2) => {
                Err(ShapeError::InvalidArgument(format!(
                    "line search needs 0 < eta_min < eta_max and count >= 2, got {eta_min}, {eta_max}, {count}"
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepReport {
    /// Loss at θ on the step's batch.
    pub loss_before: f64,
    /// Loss at θ' on the same batch.
    pub loss_after: f64,
    pub eta_used: f64,
    pub solver_iterations: usize,
    pub direction_norm: f64,
    pub wall_time: Duration,
    /// Residual evaluation at θ on the step's batch.
    pub eval: ResidualEval,
}

/// Step sizes `η_j = η_min (η_max/η_min)^(j/(count-1))`.
pub fn log_grid(eta_min: f64, eta_max: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|j| {
            if j + 1 == count {
                eta_max
            } else {
                eta_min * (eta_max / eta_min).powf(j as f64 / (count - 1) as f64)
            }
        })
        .collect()
}

/// Minimize `loss` over the log-spaced grid; ties go to the larger η.
///
/// Non-finite candidates are ignored. Returns `(η*, loss(η*))`.
pub fn line_search_log<L: FnMut(f64) -> f64>(
    mut loss: L,
    eta_min: f64,
    eta_max: f64,
    count: usize,
) -> Result<(f64, f64)> {
    if count < 2 || !(eta_min > 0.0 && eta_min < eta_max) {
        return Err(ShapeError::InvalidArgument(format!(
            "line search needs 0 < eta_min < eta_max and count >= 2, got {eta_min}, {eta_max}, {count}"
        )));
    }
    let mut best: Option<(f64, f64)> = None;
    for eta in log_grid(eta_min, eta_max, count) {
        let l = loss(eta);
        if !l.is_finite() {
            continue;
        }
        if best.map_or(true, |(_, b)| l <= b) {
            best = Some((eta, l));
        }
    }
    best.ok_or(ShapeError::LineSearchFailed)
}

/// Loss of `terms` at parameters `theta` on fixed batches.
pub fn batch_loss(
    terms: &[LossTerm],
    field: &NeuralField,
    theta: ParamVector,
    batches: &[TermBatch],
    opts: &ResidualOptions,
) -> Result<f64> {
    let f = field.with_params(theta)?;
    Ok(eval_loss(terms, &f, batches, opts)?.loss())
}

/// GN direction for an assembled residual evaluation.
///
/// Returns `(δ, solver iterations)`.
pub fn gn_direction(eval: &ResidualEval, field: &NeuralField, cfg: &GnConfig) -> Result<(DVector<f64>, usize)> {
    let j = eval
        .jacobian
        .as_ref()
        .ok_or_else(|| ShapeError::InvalidArgument("GN direction needs the Jacobian".into()))?;
    match cfg.solver {
        GnSolver::Dense => {
            let g = j.tr_mul(&eval.r);
            Ok((gn_direction_dense(j, &g, cfg.epsilon)?, 1))
        }
        GnSolver::ConjugateGradient(cg) => {
            let g = j.tr_mul(&eval.r);
            let res = gn_direction_cg(&GramianOperator { j, eps: cfg.epsilon }, &g, &cg)?;
            Ok((res.x, res.iterations))
        }
        GnSolver::Woodbury => {
            let blocks = field.spec().layer_ranges();
            Ok((gn_direction_woodbury(j, &eval.r, cfg.epsilon, Some(&blocks))?, 1))
        }
    }
}

/// One GN step on batches that are already drawn.
pub fn gn_step_on_batch(
    terms: &[LossTerm],
    field: &NeuralField,
    batches: &[TermBatch],
    cfg: &GnConfig,
    opts: &ResidualOptions,
) -> Result<(ParamVector, StepReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let eval = eval_residuals(terms, field, batches, true, opts)?;
    let loss_before = eval.loss();
    if !loss_before.is_finite() {
        return Err(ShapeError::NonFinite {
            what: "loss before GN step",
            x: [f64::NAN; 3],
        });
    }
    let (delta, iters) = gn_direction(&eval, field, cfg)?;
    let theta = field.params();
    let d = delta.as_slice();
    let loss_at = |eta: f64| batch_loss(terms, field, theta.stepped(eta, d), batches, opts).unwrap_or(f64::NAN);
    let (eta, loss_after) = match cfg.step {
        StepRule::Fixed { eta } => (eta, loss_at(eta)),
        StepRule::LogLineSearch {
            eta_min,
            eta_max,
            count,
        } => line_search_log(loss_at, eta_min, eta_max, count)?,
    };
    let next = theta.stepped(eta, d);
    Ok((
        next,
        StepReport {
            loss_before,
            loss_after,
            eta_used: eta,
            solver_iterations: iters,
            direction_norm: delta.norm(),
            wall_time: start.elapsed(),
            eval,
        },
    ))
}

/// Resample at the current field, then take one GN step on that batch.
pub fn gn_step(
    terms: &[LossTerm],
    field: &NeuralField,
    cfg: &GnConfig,
    seed: u64,
    iteration: usize,
    opts: &ResidualOptions,
) -> Result<(ParamVector, StepReport, IterationBatches)> {
    let batches = resample_iteration(terms, field, seed, iteration, opts)?;
    let (theta, report) = gn_step_on_batch(terms, field, &batches.batches, cfg, opts)?;
    Ok((theta, report, batches))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_search_examples() {
        let (eta, _) = line_search_log(|e| (e - 1.0).powi(2), 0.01, 100.0, 9).unwrap();
        assert!((eta - 1.0).abs() < 1e-12);
        let (eta, _) = line_search_log(|e| -e, 0.01, 100.0, 9).unwrap();
        assert_eq!(eta, 100.0);
        let mut seen = Vec::new();
        line_search_log(
            |e| {
                seen.push(e);
                1.0
            },
            0.1,
            2.0,
            2,
        )
        .unwrap();
        assert_eq!(seen, vec![0.1, 2.0]);
    }

    #[test]
    fn line_search_ties_and_nan() {
        let (eta, _) = line_search_log(|_| 3.0, 0.1, 1.0, 5).unwrap();
        assert_eq!(eta, 1.0);
        let (eta, _) = line_search_log(|e| if e > 0.5 { f64::NAN } else { -e }, 0.1, 1.0, 5).unwrap();
        assert!(eta < 0.5);
        assert!(matches!(line_search_log(|_| f64::INFINITY, 0.1, 1.0, 3), Err(ShapeError::LineSearchFailed)));
    }

    #[test]
    fn config_validation() {
        assert!(GnConfig::default().validate().is_ok());
        let bad = GnConfig { epsilon: 0.0, solver: GnSolver::Woodbury, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = GnConfig {
            step: StepRule::LogLineSearch { eta_min: 1.0, eta_max: 0.1, count: 4 },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}

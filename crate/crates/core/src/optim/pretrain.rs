use serde::{Deserialize, Serialize};

use super::{gn_step_on_batch, GnConfig, GnSolver, StepRule};
use crate::error::{Result, ShapeError};
use crate::field::{NeuralField, ParamVector};
use crate::geomio::AnalyticSurface;
use crate::residuals::{LossTerm, ResidualKind, ResidualOptions};
use crate::sampling::{resample_iteration, Bounds, SamplerHandle};

/// Supervised fit of the network to an analytic SDF on box samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub target: AnalyticSurface,
    pub bounds: Bounds,
    pub iters: usize,
    pub n_samples: usize,
    /// Stop once the batch loss `½ mean (f - sdf)²` is at or below this.
    pub threshold: f64,
    pub gn: GnConfig,
    pub seed: u64,
}

impl PretrainConfig {
    pub fn new(target: AnalyticSurface, bounds: Bounds, iters: usize) -> Self {
        Self {
            target,
            bounds,
            iters,
            n_samples: 1024,
            threshold: 1e-8,
            gn: GnConfig {
                epsilon: 1e-6,
                solver: GnSolver::Dense,
                step: StepRule::LogLineSearch {
                    eta_min: 1e-3,
                    eta_max: 1.0,
                    count: 10,
                },
            },
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    pub iterations: usize,
    /// Batch loss before every step.
    pub losses: Vec<f64>,
    pub final_loss: f64,
    pub reached_threshold: bool,
}

/// Loss values above this multiple of the initial loss count as divergence.
const BLOWUP: f64 = 1e8;

/// Fit `field` to the target SDF; returns the fitted parameters.
pub fn pretrain(field: &NeuralField, cfg: &PretrainConfig) -> Result<(ParamVector, PretrainReport)> {
    cfg.bounds.validate()?;
    cfg.target.sdf(&[0.0; 3])?;
    let term = LossTerm::new(
        ResidualKind::Supervised,
        1.0,
        SamplerHandle::boxed(cfg.bounds, cfg.seed ^ 0x5052_4554),
        cfg.n_samples,
    )?
    .with_target(cfg.target);
    let terms = [term];
    let opts = ResidualOptions::default();
    let mut cur = field.clone();
    let mut losses = Vec::new();
    let mut reached = false;
    for k in 0..cfg.iters {
        let batches = resample_iteration(&terms, &cur, cfg.seed, k, &opts)?;
        let (theta, rep) = gn_step_on_batch(&terms, &cur, &batches.batches, &cfg.gn, &opts)?;
        losses.push(rep.loss_before);
        if !rep.loss_before.is_finite() || rep.loss_before > BLOWUP * losses[0].max(1e-300) {
            return Err(ShapeError::Divergence {
                iteration: k,
                loss: rep.loss_before,
            });
        }
        if rep.loss_before <= cfg.threshold {
            reached = true;
            break;
        }
        cur = cur.with_params(theta)?;
    }
    let final_loss = if cfg.iters == 0 {
        f64::NAN
    } else {
        let batches = resample_iteration(&terms, &cur, cfg.seed, cfg.iters, &opts)?;
        crate::residuals::eval_loss(&terms, &cur, &batches.batches, &opts)?.loss()
    };
    Ok((
        cur.params().clone(),
        PretrainReport {
            iterations: losses.len(),
            losses,
            final_loss,
            reached_threshold: reached || final_loss <= cfg.threshold,
        },
    ))
}

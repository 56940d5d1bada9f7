use std::collections::VecDeque;

use crate::error::{Result, ShapeError};

/// Armijo sufficient-decrease constant.
const C1: f64 = 1e-4;
const MAX_BACKTRACK: usize = 40;

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsReport {
    pub loss_before: f64,
    pub loss_after: f64,
    pub step: f64,
    /// The two-loop direction was not a descent direction.
    pub fell_back: bool,
    /// Loss evaluations spent in the backtracking search.
    pub evaluations: usize,
    pub history_len: usize,
}

/// Limited-memory BFGS with an Armijo backtracking search.
///
/// Curvature pairs are formed between consecutive iterates; when batches are
/// resampled between iterations, `y` mixes gradients of different batches
/// unless `reset_on_resample` clears the history each step.
#[derive(Clone, Debug)]
pub struct Lbfgs {
    pub m: usize,
    pub reset_on_resample: bool,
    history: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    prev: Option<(Vec<f64>, Vec<f64>)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Lbfgs {
    pub fn new(m: usize, reset_on_resample: bool) -> Self {
        Self {
            m: m.max(1),
            reset_on_resample,
            history: VecDeque::new(),
            prev: None,
        }
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Record the pair `(θ - θ_prev, g - g_prev)` if its curvature is positive.
    fn update_history(&mut self, theta: &[f64], g: &[f64]) {
        if let Some((tp, gp)) = self.prev.take() {
            let s: Vec<f64> = theta.iter().zip(&tp).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g.iter().zip(&gp).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 0.0 && sy.is_finite() {
                if self.history.len() == self.m {
                    self.history.pop_front();
                }
                self.history.push_back((s, y, 1.0 / sy));
            }
        }
        self.prev = Some((theta.to_vec(), g.to_vec()));
    }

    /// Two-loop recursion `H g` with `H₀ = γI`, `γ = sᵀy / yᵀy` of the newest pair.
    pub fn two_loop(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.history.len());
        for (s, y, rho) in self.history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qk, yk) in q.iter_mut().zip(y) {
                *qk -= a * yk;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.history.back() {
            let gamma = dot(s, y) / dot(y, y);
            for v in &mut q {
                *v *= gamma;
            }
        }
        for ((s, y, rho), a) in self.history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qk, sk) in q.iter_mut().zip(s) {
                *qk += (a - b) * sk;
            }
        }
        q
    }

    /// One step from `theta` with gradient `g` and loss `loss0` on the
    /// current batch; `loss` evaluates candidates on the same batch.
    pub fn step<L: FnMut(&[f64]) -> f64>(
        &mut self,
        theta: &mut Vec<f64>,
        g: &[f64],
        loss0: f64,
        mut loss: L,
    ) -> Result<LbfgsReport> {
        if g.len() != theta.len() {
            return Err(ShapeError::InvalidArgument("gradient length mismatch".into()));
        }
        if self.reset_on_resample {
            self.history.clear();
            self.prev = None;
        }
        self.update_history(theta, g);
        let mut d: Vec<f64> = self.two_loop(g).into_iter().map(|v| -v).collect();
        let mut slope = dot(g, &d);
        let mut fell_back = false;
        if !(slope < 0.0) {
            d = g.iter().map(|v| -v).collect();
            slope = -dot(g, g);
            fell_back = true;
        }
        let gnorm = dot(g, g).sqrt();
        if gnorm == 0.0 {
            return Ok(LbfgsReport {
                loss_before: loss0,
                loss_after: loss0,
                step: 0.0,
                fell_back,
                evaluations: 0,
                history_len: self.history.len(),
            });
        }
        let mut alpha = if self.history.is_empty() || fell_back {
            (1.0 / gnorm).min(1.0)
        } else {
            1.0
        };
        let mut evaluations = 0;
        let mut cand = theta.clone();
        for _ in 0..MAX_BACKTRACK {
            for k in 0..cand.len() {
                cand[k] = theta[k] + alpha * d[k];
            }
            let l = loss(&cand);
            evaluations += 1;
            if l.is_finite() && l <= loss0 + C1 * alpha * slope {
                *theta = cand;
                return Ok(LbfgsReport {
                    loss_before: loss0,
                    loss_after: l,
                    step: alpha,
                    fell_back,
                    evaluations,
                    history_len: self.history.len(),
                });
            }
            alpha *= 0.5;
        }
        Err(ShapeError::LineSearchFailed)
    }
}

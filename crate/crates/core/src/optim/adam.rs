use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(p: usize) -> Self {
        Self {
            m: vec![0.0; p],
            v: vec![0.0; p],
            t: 0,
        }
    }
}

/// Learning-rate schedule over a run of `total` iterations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `lr_min + (lr - lr_min)(1 + cos(π k / total)) / 2`.
    Cosine { lr_min: f64 },
}

impl LrSchedule {
    pub fn lr_at(&self, lr: f64, k: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::Constant => lr,
            LrSchedule::Cosine { lr_min } => {
                let frac = if total == 0 { 0.0 } else { (k as f64 / total as f64).min(1.0) };
                lr_min + (lr - lr_min) * 0.5 * (1.0 + (PI * frac).cos())
            }
        }
    }
}

/// Bias-corrected Adam update applied in place to `theta`.
pub fn adam_step(theta: &mut [f64], g: &[f64], state: &mut AdamState, lr: f64, hp: &AdamParams) {
    state.t += 1;
    let b1t = 1.0 - hp.beta1.powi(state.t as i32);
    let b2t = 1.0 - hp.beta2.powi(state.t as i32);
    for k in 0..theta.len() {
        state.m[k] = hp.beta1 * state.m[k] + (1.0 - hp.beta1) * g[k];
        state.v[k] = hp.beta2 * state.v[k] + (1.0 - hp.beta2) * g[k] * g[k];
        let mh = state.m[k] / b1t;
        let vh = state.v[k] / b2t;
        theta[k] -= lr * mh / (vh.sqrt() + hp.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_sign_step() {
        let mut th = vec![0.0, 0.0];
        let mut st = AdamState::new(2);
        let lr = 0.01;
        adam_step(&mut th, &[1.0, -3.0], &mut st, lr, &AdamParams::default());
        assert!((th[0] + lr).abs() < 1e-6 * lr);
        assert!((th[1] - lr).abs() < 1e-6 * lr);
    }

    #[test]
    fn zero_gradient_no_move() {
        let mut th = vec![0.3, -0.7];
        let mut st = AdamState::new(2);
        adam_step(&mut th, &[0.0, 0.0], &mut st, 0.1, &AdamParams::default());
        assert_eq!(th, vec![0.3, -0.7]);
    }

    #[test]
    fn quadratic_converges() {
        let target = 0.8;
        let mut th = vec![0.0];
        let mut st = AdamState::new(1);
        for _ in 0..500 {
            let g = [th[0] - target];
            adam_step(&mut th, &g, &mut st, 1e-2, &AdamParams::default());
        }
        assert!((th[0] - target).abs() < 1e-2);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = LrSchedule::Cosine { lr_min: 0.0 };
        assert_eq!(s.lr_at(1e-3, 0, 100), 1e-3);
        assert!(s.lr_at(1e-3, 100, 100).abs() < 1e-18);
        assert_eq!(LrSchedule::Constant.lr_at(0.5, 77, 100), 0.5);
    }
}

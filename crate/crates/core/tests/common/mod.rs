#![allow(dead_code)]

use std::path::Path;

use shapegn::field::{Activation, FieldSpec, Jet2, NeuralField, ScalarField};
use shapegn::runner::{ExperimentConfig, TaskKind};

pub fn net(widths: &[usize], act: Activation, seed: u64) -> NeuralField {
    NeuralField::initialized(FieldSpec::new(widths.to_vec(), act, seed).unwrap()).unwrap()
}

pub fn sine() -> Activation {
    Activation::Sine { omega: 3.0 }
}

/// Central differences of the value (gradient) and of the analytic gradient (Hessian).
pub fn fd_jet<F: ScalarField>(f: &F, x: &[f64; 3], h: f64) -> Jet2 {
    let mut grad = [0.0; 3];
    let mut hess = [[0.0; 3]; 3];
    for k in 0..3 {
        let (mut a, mut b) = (*x, *x);
        a[k] += h;
        b[k] -= h;
        grad[k] = (f.eval(&a) - f.eval(&b)) / (2.0 * h);
        let (ga, gb) = (f.jet1(&a).1, f.jet1(&b).1);
        for r in 0..3 {
            hess[r][k] = (ga[r] - gb[r]) / (2.0 * h);
        }
    }
    Jet2 {
        value: f.eval(x),
        grad,
        hess,
    }
}

/// `‖a - b‖ / max(‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(floor)
}

/// Brute-force one-sided chamfer, written independently of the library.
pub fn brute_chamfer(p: &[[f64; 3]], q: &[[f64; 3]]) -> f64 {
    let mut total = 0.0;
    for x in q {
        let mut best = f64::INFINITY;
        for y in p {
            let d = (x[0] - y[0]) * (x[0] - y[0]) + (x[1] - y[1]) * (x[1] - y[1]) + (x[2] - y[2]) * (x[2] - y[2]);
            if d < best {
                best = d;
            }
        }
        total += best;
    }
    (total / q.len() as f64).sqrt()
}

/// Quick config: few samples and iterations, small PLY output.
pub fn tiny_config(task: TaskKind, out: &Path, iters: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(task);
    c.iters = iters;
    c.output_dir = Some(out.to_path_buf());
    c.pretrain.iters = Some(5);
    c.pretrain.n_samples = Some(128);
    c.samples.surface = Some(48);
    c.samples.interface = Some(48);
    c.samples.volume = Some(64);
    c.metrics.chamfer_samples = Some(48);
    c.metrics.chamfer_every = Some(1);
    c.metrics.ply_samples = Some(64);
    c
}

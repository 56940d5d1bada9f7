//! Fully connected network with exact second-order spatial jets.
//!
//! The forward pass propagates, for every neuron, its value, spatial
//! gradient and the six unique Hessian entries. The backward pass is the
//! reverse-mode derivative of that jet propagation with respect to θ, so
//! any differentiable function of `(f, ∇f, Hf)` gets an exact parameter
//! gradient, including the third-order mixed terms `∂θ ∂²x f`.

use super::dual::{Dual, JetAdjoint};
use super::{Activation, FieldSpec, Jet2, ParamVector, ScalarField};
use crate::error::{Result, ShapeError};

/// Jet components per neuron: value, 3 gradient, 6 Hessian (xx xy xz yy yz zz).
const NC: usize = 10;
/// `(component index, k, l)` of the unique Hessian entries.
const HPAIRS: [(usize, usize, usize); 6] = [
    (4, 0, 0),
    (5, 0, 1),
    (6, 0, 2),
    (7, 1, 1),
    (8, 1, 2),
    (9, 2, 2),
];
const HIDX: [[usize; 3]; 3] = [[4, 5, 6], [5, 7, 8], [6, 8, 9]];

/// A neural field `f_θ` with fixed parameters. Immutable; safe to share across threads.
#[derive(Clone, Debug)]
pub struct NeuralField {
    spec: FieldSpec,
    params: ParamVector,
    /// Parameter offset of each layer's weights.
    offsets: Vec<usize>,
}

/// Per-evaluation scratch storage of the forward jets.
#[derive(Clone, Debug)]
pub struct Tape {
    /// `acts[l]` is the input jet of layer `l` (`acts[0]` = the point itself).
    acts: Vec<Vec<f64>>,
    /// Pre-activation jets of the hidden layers.
    pre: Vec<Vec<f64>>,
    out: [f64; NC],
}

impl Tape {
    pub fn new(spec: &FieldSpec) -> Self {
        let w = &spec.layer_widths;
        Self {
            acts: w[..w.len() - 1].iter().map(|&n| vec![0.0; NC * n]).collect(),
            pre: w[1..w.len() - 1].iter().map(|&n| vec![0.0; NC * n]).collect(),
            out: [0.0; NC],
        }
    }

    pub fn jet(&self) -> Jet2 {
        let o = &self.out;
        let mut hess = [[0.0; 3]; 3];
        for (k, row) in hess.iter_mut().enumerate() {
            for (l, h) in row.iter_mut().enumerate() {
                *h = o[HIDX[k][l]];
            }
        }
        Jet2 {
            value: o[0],
            grad: [o[1], o[2], o[3]],
            hess,
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

impl Activation {
    #[inline]
    fn value(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sine { omega } => (omega * z).sin(),
        }
    }

    /// `(σ, σ', σ'', σ''')` at `z`.
    #[inline]
    fn derivs(self, z: f64) -> [f64; 4] {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                let d1 = 1.0 - t * t;
                let d2 = -2.0 * t * d1;
                let d3 = -2.0 * d1 * d1 + 4.0 * t * t * d1;
                [t, d1, d2, d3]
            }
            Activation::Sine { omega } => {
                let s = (omega * z).sin();
                let c = (omega * z).cos();
                [s, omega * c, -omega * omega * s, -omega * omega * omega * c]
            }
        }
    }
}

impl NeuralField {
    pub fn new(spec: FieldSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(ShapeError::InvalidArgument(format!(
                "parameter vector has length {}, spec expects {}",
                params.len(),
                spec.param_count()
            )));
        }
        let offsets = spec.layer_ranges().into_iter().map(|r| r.start).collect();
        Ok(Self {
            spec,
            params,
            offsets,
        })
    }

    /// Network initialized from `spec.init_seed`.
    pub fn initialized(spec: FieldSpec) -> Result<Self> {
        let theta = super::init_params(&spec, spec.init_seed);
        Self::new(spec, theta)
    }

    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Same architecture, new parameters.
    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        Self::new(self.spec.clone(), params)
    }

    fn layer(&self, l: usize) -> (&[f64], &[f64], usize, usize) {
        let fan_in = self.spec.layer_widths[l];
        let fan_out = self.spec.layer_widths[l + 1];
        let off = self.offsets[l];
        let th = self.params.as_slice();
        (
            &th[off..off + fan_in * fan_out],
            &th[off + fan_in * fan_out..off + fan_in * fan_out + fan_out],
            fan_in,
            fan_out,
        )
    }

    /// Propagate `nc` jet components (1 = value, 4 = value+grad, 10 = full).
    ///
    /// The value component follows the same operation order for every `nc`,
    /// so all paths agree bitwise on the value.
    fn forward(&self, x: &[f64; 3], nc: usize, tape: &mut Tape) {
        let input = &mut tape.acts[0];
        input[..NC * 3].fill(0.0);
        input[..3].copy_from_slice(x);
        if nc > 1 {
            for k in 0..3 {
                input[(1 + k) * 3 + k] = 1.0;
            }
        }
        let nl = self.spec.num_layers();
        let act = self.spec.activation;
        for l in 0..nl {
            let (w, b, fan_in, fan_out) = self.layer(l);
            let last = l + 1 == nl;
            let (head, tail) = tape.acts.split_at_mut(l + 1);
            let input = &head[l];
            let z: &mut [f64] = if last {
                &mut tape.out[..]
            } else {
                &mut tape.pre[l]
            };
            for i in 0..fan_out {
                let row = &w[i * fan_in..(i + 1) * fan_in];
                for c in 0..nc {
                    let mut s = dot(row, &input[c * fan_in..(c + 1) * fan_in]);
                    if c == 0 {
                        s += b[i];
                    }
                    z[c * fan_out + i] = s;
                }
            }
            if last {
                break;
            }
            let a = &mut tail[0];
            let n = fan_out;
            for i in 0..n {
                let z0 = z[i];
                if nc == 1 {
                    a[i] = act.value(z0);
                    continue;
                }
                let [s0, s1, s2, _] = act.derivs(z0);
                a[i] = s0;
                for k in 0..3 {
                    a[(1 + k) * n + i] = s1 * z[(1 + k) * n + i];
                }
                if nc == NC {
                    for &(idx, k, l2) in &HPAIRS {
                        let gk = z[(1 + k) * n + i];
                        let gl = z[(1 + l2) * n + i];
                        a[idx * n + i] = s2 * gk * gl + s1 * z[idx * n + i];
                    }
                }
            }
        }
    }

    /// Full forward pass recording everything the backward pass needs.
    pub fn forward_tape(&self, x: &[f64; 3], tape: &mut Tape) -> Jet2 {
        self.forward(x, NC, tape);
        tape.jet()
    }

    pub fn new_tape(&self) -> Tape {
        Tape::new(&self.spec)
    }

    /// Accumulate `scale * ∇θ ⟨adj, jet⟩` into `grad` using a tape filled by
    /// [`Self::forward_tape`] at the same parameters.
    pub fn backward(&self, tape: &Tape, adj: &JetAdjoint, scale: f64, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.num_params());
        let mut zbar = vec![0.0; NC];
        zbar[0] = adj.value * scale;
        for k in 0..3 {
            zbar[1 + k] = adj.grad[k] * scale;
        }
        for &(idx, k, l) in &HPAIRS {
            let h = if k == l {
                adj.hess[k][k]
            } else {
                adj.hess[k][l] + adj.hess[l][k]
            };
            zbar[idx] = h * scale;
        }
        let act = self.spec.activation;
        for l in (0..self.spec.num_layers()).rev() {
            let (w, _, fan_in, fan_out) = self.layer(l);
            let off = self.offsets[l];
            let input = &tape.acts[l];
            {
                let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for i in 0..fan_out {
                    let grow = &mut gw[i * fan_in..(i + 1) * fan_in];
                    for c in 0..NC {
                        let zb = zbar[c * fan_out + i];
                        if zb == 0.0 {
                            continue;
                        }
                        for (g, a) in grow.iter_mut().zip(&input[c * fan_in..(c + 1) * fan_in]) {
                            *g += zb * a;
                        }
                    }
                    gb[i] += zbar[i];
                }
            }
            if l == 0 {
                break;
            }
            // adjoint of this layer's input activations
            let mut abar = vec![0.0; NC * fan_in];
            for i in 0..fan_out {
                let row = &w[i * fan_in..(i + 1) * fan_in];
                for c in 0..NC {
                    let zb = zbar[c * fan_out + i];
                    if zb == 0.0 {
                        continue;
                    }
                    for (ab, wij) in abar[c * fan_in..(c + 1) * fan_in].iter_mut().zip(row) {
                        *ab += zb * wij;
                    }
                }
            }
            // through the activation of hidden layer l-1
            let z = &tape.pre[l - 1];
            let n = fan_in;
            let mut zb_prev = vec![0.0; NC * n];
            for i in 0..n {
                let [_, s1, s2, s3] = act.derivs(z[i]);
                let g = [z[n + i], z[2 * n + i], z[3 * n + i]];
                let mut vbar = abar[i] * s1;
                let mut gbar = [0.0; 3];
                for k in 0..3 {
                    let ab = abar[(1 + k) * n + i];
                    gbar[k] += ab * s1;
                    vbar += ab * s2 * g[k];
                }
                for &(idx, k, l2) in &HPAIRS {
                    let hb = abar[idx * n + i];
                    if hb == 0.0 {
                        continue;
                    }
                    zb_prev[idx * n + i] = hb * s1;
                    gbar[k] += hb * s2 * g[l2];
                    gbar[l2] += hb * s2 * g[k];
                    vbar += hb * (s3 * g[k] * g[l2] + s2 * z[idx * n + i]);
                }
                zb_prev[i] = vbar;
                for k in 0..3 {
                    zb_prev[(1 + k) * n + i] = gbar[k];
                }
            }
            zbar = zb_prev;
        }
    }

    /// `∇θ seed(jet2(f_θ, x))` for a seed written over dual-number jets.
    ///
    /// Returns the seed value and its parameter gradient.
    pub fn param_gradient<S>(&self, x: &[f64; 3], seed: S) -> Result<(f64, Vec<f64>)>
    where
        S: Fn(&Jet2<Dual>) -> Result<Dual>,
    {
        let mut tape = self.new_tape();
        let jet = self.forward_tape(x, &mut tape);
        if !jet.is_finite() {
            return Err(ShapeError::NonFinite {
                what: "field jet",
                x: *x,
            });
        }
        let s = seed(&jet.lift())?;
        if !s.re.is_finite() || s.eps.iter().any(|e| !e.is_finite()) {
            return Err(ShapeError::DegenerateGradient {
                point: *x,
                norm: jet.grad_norm(),
                term: None,
                sample: None,
            });
        }
        let mut grad = vec![0.0; self.num_params()];
        self.backward(&tape, &JetAdjoint::from_dual(&s), 1.0, &mut grad);
        Ok((s.re, grad))
    }
}

impl ScalarField for NeuralField {
    fn eval(&self, x: &[f64; 3]) -> f64 {
        let mut tape = self.new_tape();
        self.forward(x, 1, &mut tape);
        tape.out[0]
    }

    fn jet2(&self, x: &[f64; 3]) -> Jet2 {
        let mut tape = self.new_tape();
        self.forward_tape(x, &mut tape)
    }

    fn jet1(&self, x: &[f64; 3]) -> (f64, [f64; 3]) {
        let mut tape = self.new_tape();
        self.forward(x, 4, &mut tape);
        (tape.out[0], [tape.out[1], tape.out[2], tape.out[3]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{init_params, Real};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn net(widths: Vec<usize>, act: Activation, seed: u64) -> NeuralField {
        let spec = FieldSpec::new(widths, act, seed).unwrap();
        let theta = init_params(&spec, seed);
        NeuralField::new(spec, theta).unwrap()
    }

    #[test]
    fn zero_parameters_give_zero_field() {
        let spec = FieldSpec::new(vec![3, 6, 6, 1], Activation::Tanh, 0).unwrap();
        let f = NeuralField::new(spec.clone(), ParamVector::zeros(&spec)).unwrap();
        for x in [[0.3, -1.0, 2.0], [0.0, 0.0, 0.0], [5.0, 5.0, -5.0]] {
            assert_eq!(f.eval(&x), 0.0);
        }
    }

    #[test]
    fn single_hidden_unit_matches_hand_computation() {
        // f(x) = v * tanh(w·x + b) + c
        let spec = FieldSpec::new(vec![3, 1, 1], Activation::Tanh, 0).unwrap();
        let (w, b, v, c) = ([0.5, -1.0, 2.0], 0.25, 1.5, -0.3);
        let theta = ParamVector(vec![w[0], w[1], w[2], b, v, c]);
        let f = NeuralField::new(spec, theta).unwrap();
        let x = [0.2, 0.1, -0.4];
        let z: f64 = w[0] * x[0] + w[1] * x[1] + w[2] * x[2] + b;
        let expected = v * z.tanh() + c;
        assert!((f.eval(&x) - expected).abs() < 1e-15);
        let jet = f.jet2(&x);
        let d1 = 1.0 - z.tanh().powi(2);
        let d2 = -2.0 * z.tanh() * d1;
        for k in 0..3 {
            assert!((jet.grad[k] - v * d1 * w[k]).abs() < 1e-15);
            for l in 0..3 {
                assert!((jet.hess[k][l] - v * d2 * w[k] * w[l]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn value_paths_agree_bitwise() {
        let f = net(vec![3, 8, 8, 1], Activation::Sine { omega: 3.0 }, 4);
        let x = [0.1, -0.7, 0.33];
        let v = f.eval(&x);
        assert_eq!(v.to_bits(), f.jet2(&x).value.to_bits());
        assert_eq!(v.to_bits(), f.jet1(&x).0.to_bits());
        assert_eq!(f.jet1(&x).1, f.jet2(&x).grad);
    }

    #[test]
    fn linear_seed_gradient_is_input_and_one() {
        // output weights see the last hidden activations, output bias sees 1
        let f = net(vec![3, 4, 1], Activation::Tanh, 2);
        let x = [0.5, 0.2, -0.1];
        let (val, g) = f.param_gradient(&x, |j| Ok(j.value)).unwrap();
        assert_eq!(val, f.eval(&x));
        let p = f.num_params();
        assert_eq!(g[p - 1], 1.0);
        let mut tape = f.new_tape();
        f.forward_tape(&x, &mut tape);
        for j in 0..4 {
            assert!((g[16 + j] - tape.acts[1][j]).abs() < 1e-15);
        }
    }

    #[test]
    fn param_gradient_matches_finite_differences_for_eikonal_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for act in [Activation::Tanh, Activation::Sine { omega: 2.0 }] {
            let f = net(vec![3, 5, 4, 1], act, 5);
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let seed = |j: &Jet2<Dual>| {
                let n2 = j.grad[0] * j.grad[0] + j.grad[1] * j.grad[1] + j.grad[2] * j.grad[2];
                Ok(n2.sqrt() - Dual::cst(1.0) + j.hess[0][1] * j.value)
            };
            let (_, g) = f.param_gradient(&x, seed).unwrap();
            let plain = |field: &NeuralField| {
                let j = field.jet2(&x);
                j.grad_norm() - 1.0 + j.hess[0][1] * j.value
            };
            let h = 1e-6;
            for i in 0..f.num_params() {
                let mut tp = f.params().clone();
                tp.0[i] += h;
                let mut tm = f.params().clone();
                tm.0[i] -= h;
                let fd = (plain(&f.with_params(tp).unwrap()) - plain(&f.with_params(tm).unwrap())) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: fd {fd} vs {}", g[i]);
            }
        }
    }
}

//! Scalar fields `f: R^3 -> R` and their spatial/parameter derivatives.

pub mod analytic;
pub mod dual;
mod mlp;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapeError};

pub use analytic::{AffineField, QuadraticField};
pub use dual::{Dual, JetAdjoint, Real};
pub use mlp::{NeuralField, Tape};

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// `sin(omega * z)`.
    Sine { omega: f64 },
}

/// Architecture of a fully connected network `R^3 -> R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub init_seed: u64,
}

impl FieldSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, init_seed: u64) -> Result<Self> {
        let spec = Self {
            layer_widths,
            activation,
            init_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.layer_widths;
        if w.len() < 3 {
            return Err(ShapeError::InvalidSpec(
                "need at least one hidden layer".into(),
            ));
        }
        if w[0] != 3 || w[w.len() - 1] != 1 {
            return Err(ShapeError::InvalidSpec(format!(
                "widths must start with 3 and end with 1, got {w:?}"
            )));
        }
        if w.iter().any(|&n| n == 0) {
            return Err(ShapeError::InvalidSpec("layer widths must be >= 1".into()));
        }
        if let Activation::Sine { omega } = self.activation {
            if !(omega > 0.0 && omega.is_finite()) {
                return Err(ShapeError::InvalidSpec(format!(
                    "sine frequency must be positive, got {omega}"
                )));
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    /// `(fan_in, fan_out)` of every affine layer.
    pub fn layer_shapes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layer_widths.windows(2).map(|w| (w[0], w[1]))
    }

    /// Parameter index range `[start, end)` of each layer (weights then bias).
    pub fn layer_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.layer_shapes()
            .map(|(i, o)| {
                let r = start..start + o * i + o;
                start = r.end;
                r
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().map(|(i, o)| o * i + o).sum()
    }
}

/// One affine layer: row-major weights (`fan_out x fan_in`) and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Flat parameter vector θ.
///
/// Layout: for each layer in input-to-output order, the row-major weight
/// matrix `W[out][in]` followed by the bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(spec: &FieldSpec) -> Self {
        Self(vec![0.0; spec.param_count()])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn unflatten(&self, spec: &FieldSpec) -> Result<Vec<LayerParams>> {
        if self.len() != spec.param_count() {
            return Err(ShapeError::InvalidArgument(format!(
                "parameter vector has length {}, spec expects {}",
                self.len(),
                spec.param_count()
            )));
        }
        Ok(spec
            .layer_shapes()
            .zip(spec.layer_ranges())
            .map(|((fan_in, fan_out), r)| {
                let block = &self.0[r];
                let (w, b) = block.split_at(fan_in * fan_out);
                LayerParams {
                    fan_in,
                    fan_out,
                    weights: w.to_vec(),
                    bias: b.to_vec(),
                }
            })
            .collect())
    }

    pub fn flatten(layers: &[LayerParams]) -> Self {
        let mut v = Vec::new();
        for l in layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        Self(v)
    }

    /// `self - eta * dir`.
    pub fn stepped(&self, eta: f64, dir: &[f64]) -> Self {
        Self(self.0.iter().zip(dir).map(|(t, d)| t - eta * d).collect())
    }
}

/// Deterministic initialization.
///
/// Tanh: Glorot-uniform weights `U(±sqrt(6/(fan_in+fan_out)))`, zero bias.
/// Sine: first layer `U(±1/fan_in)`, later layers `U(±sqrt(6/fan_in)/omega)`,
/// bias `U(±1/sqrt(fan_in))`.
pub fn init_params(spec: &FieldSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = Vec::with_capacity(spec.param_count());
    for (layer, (fan_in, fan_out)) in spec.layer_shapes().enumerate() {
        let (w_bound, b_bound) = match spec.activation {
            Activation::Tanh => (((6.0 / (fan_in + fan_out) as f64).sqrt()), 0.0),
            Activation::Sine { omega } => {
                let w = if layer == 0 {
                    1.0 / fan_in as f64
                } else {
                    (6.0 / fan_in as f64).sqrt() / omega
                };
                (w, 1.0 / (fan_in as f64).sqrt())
            }
        };
        for _ in 0..fan_in * fan_out {
            theta.push(rng.gen_range(-w_bound..=w_bound));
        }
        for _ in 0..fan_out {
            theta.push(if b_bound > 0.0 {
                rng.gen_range(-b_bound..=b_bound)
            } else {
                0.0
            });
        }
    }
    ParamVector(theta)
}

/// Second-order spatial jet: value, gradient and Hessian at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2<T = f64> {
    pub value: T,
    pub grad: [T; 3],
    pub hess: [[T; 3]; 3],
}

impl Jet2<f64> {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad.iter().all(|g| g.is_finite())
            && self.hess.iter().flatten().all(|h| h.is_finite())
    }

    pub fn grad_norm(&self) -> f64 {
        norm3(&self.grad)
    }
}

/// A scalar field on R^3 that can report its value and second-order jet.
pub trait ScalarField: Sync {
    fn eval(&self, x: &[f64; 3]) -> f64;

    fn jet2(&self, x: &[f64; 3]) -> Jet2;

    /// Value and gradient; fields may override with a cheaper path.
    fn jet1(&self, x: &[f64; 3]) -> (f64, [f64; 3]) {
        let j = self.jet2(x);
        (j.value, j.grad)
    }

    fn try_eval(&self, x: &[f64; 3]) -> Result<f64> {
        let v = self.eval(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ShapeError::NonFinite {
                what: "field value",
                x: *x,
            })
        }
    }

    fn try_jet2(&self, x: &[f64; 3]) -> Result<Jet2> {
        let j = self.jet2(x);
        if j.is_finite() {
            Ok(j)
        } else {
            Err(ShapeError::NonFinite {
                what: "field jet",
                x: *x,
            })
        }
    }
}

impl<F: ScalarField + ?Sized> ScalarField for &F {
    fn eval(&self, x: &[f64; 3]) -> f64 {
        (**self).eval(x)
    }
    fn jet2(&self, x: &[f64; 3]) -> Jet2 {
        (**self).jet2(x)
    }
    fn jet1(&self, x: &[f64; 3]) -> (f64, [f64; 3]) {
        (**self).jet1(x)
    }
}

pub(crate) fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_small_net() {
        let spec = FieldSpec::new(vec![3, 2, 1], Activation::Tanh, 0).unwrap();
        assert_eq!(spec.param_count(), 3 * 2 + 2 + 2 + 1);
        assert_eq!(spec.layer_ranges(), vec![0..8, 8..11]);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let spec = FieldSpec::new(vec![3, 8, 8, 1], Activation::Tanh, 0).unwrap();
        let a = init_params(&spec, 7);
        let b = init_params(&spec, 7);
        assert_eq!(a, b);
        assert!(a.0.iter().zip(&b.0).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = init_params(&spec, 8);
        assert!(a.0.iter().zip(&c.0).any(|(x, y)| x != y));
    }

    #[test]
    fn sine_init_respects_bounds() {
        let omega = 30.0;
        let spec = FieldSpec::new(vec![3, 16, 16, 1], Activation::Sine { omega }, 0).unwrap();
        let theta = init_params(&spec, 1);
        let layers = theta.unflatten(&spec).unwrap();
        assert!(layers[0].weights.iter().all(|w| w.abs() <= 1.0 / 3.0));
        let b1 = (6.0f64 / 16.0).sqrt() / omega;
        assert!(layers[1].weights.iter().all(|w| w.abs() <= b1));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(FieldSpec::new(vec![3, 1], Activation::Tanh, 0).is_err());
        assert!(FieldSpec::new(vec![2, 4, 1], Activation::Tanh, 0).is_err());
        assert!(FieldSpec::new(vec![3, 0, 1], Activation::Tanh, 0).is_err());
        assert!(FieldSpec::new(vec![3, 4, 1], Activation::Sine { omega: 0.0 }, 0).is_err());
    }

    #[test]
    fn flatten_unflatten_roundtrip() {
        let spec = FieldSpec::new(vec![3, 5, 4, 1], Activation::Tanh, 0).unwrap();
        let theta = init_params(&spec, 3);
        let back = ParamVector::flatten(&theta.unflatten(&spec).unwrap());
        assert_eq!(theta, back);
        assert!(ParamVector(vec![0.0; 3]).unflatten(&spec).is_err());
    }
}

//! Pointwise geometric residuals and their Monte Carlo assembly.

mod assemble;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapeError};
use crate::field::{Dual, Jet2, JetAdjoint, Real};

pub use assemble::{
    eval_loss, eval_loss_gradient, eval_residuals, term_loss_by_kind, LossTerm, ResidualEval,
    Sample, TermBatch,
};

/// Residual functionals `R_i`.
///
/// Per-point data (target normals, target values, design-region membership)
/// travels in [`PointMeta`] so the kind stays a plain tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    /// `min{0, f}` outside the design region.
    DesignRegion,
    /// `f` on the interface.
    Interface,
    /// `⟨∇f/‖∇f‖, n⟩ - 1`.
    Normal,
    /// `‖∇f‖ - 1`.
    Eikonal,
    /// `div(∇f/‖∇f‖)`, the sum of principal curvatures.
    MeanCurvature,
    /// Gauss curvature `κ_G`.
    GaussCurvature,
    /// The pair of principal curvatures `(κ1, κ2)`.
    SurfaceStrain,
    /// `f - y`.
    Supervised,
}

impl ResidualKind {
    pub const ALL: [ResidualKind; 8] = [
        ResidualKind::DesignRegion,
        ResidualKind::Interface,
        ResidualKind::Normal,
        ResidualKind::Eikonal,
        ResidualKind::MeanCurvature,
        ResidualKind::GaussCurvature,
        ResidualKind::SurfaceStrain,
        ResidualKind::Supervised,
    ];

    /// Column name used in loss logs.
    pub fn name(self) -> &'static str {
        match self {
            ResidualKind::DesignRegion => "design_region",
            ResidualKind::Interface => "interface",
            ResidualKind::Normal => "normal",
            ResidualKind::Eikonal => "eikonal",
            ResidualKind::MeanCurvature => "mean_curvature",
            ResidualKind::GaussCurvature => "gauss_curvature",
            ResidualKind::SurfaceStrain => "surface_strain",
            ResidualKind::Supervised => "supervised",
        }
    }

    /// Residual entries produced per sample point.
    pub fn outputs(self) -> usize {
        match self {
            ResidualKind::SurfaceStrain => 2,
            _ => 1,
        }
    }

    /// Whether the residual is only meaningful on the zero level set.
    pub fn is_surface_kind(self) -> bool {
        matches!(
            self,
            ResidualKind::MeanCurvature | ResidualKind::GaussCurvature | ResidualKind::SurfaceStrain
        )
    }
}

/// Per-point data some residual kinds need.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMeta {
    pub normal: Option<[f64; 3]>,
    pub target: Option<f64>,
    /// Point lies outside the design region.
    pub outside: bool,
}

impl Default for PointMeta {
    fn default() -> Self {
        Self {
            normal: None,
            target: None,
            outside: true,
        }
    }
}

/// Numerical guards for the pointwise residuals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResidualOptions {
    /// Minimum ‖∇f‖ for kinds that divide by it.
    pub gradient_floor: f64,
    /// Most negative principal-curvature discriminant tolerated as round-off.
    pub discriminant_tol: f64,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        Self {
            gradient_floor: 1e-8,
            discriminant_tol: 1e-9,
        }
    }
}

/// One or two residual entries at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ResidualValue<T = f64> {
    One(T),
    Two(T, T),
}

impl<T: Copy> ResidualValue<T> {
    pub fn as_array(&self) -> ([T; 2], usize) {
        match *self {
            ResidualValue::One(a) => ([a, a], 1),
            ResidualValue::Two(a, b) => ([a, b], 2),
        }
    }
}

fn grad_norm<T: Real>(g: &[T; 3]) -> T {
    (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt()
}

fn checked_norm<T: Real>(jet: &Jet2<T>, opts: &ResidualOptions) -> Result<T> {
    let n = grad_norm(&jet.grad);
    if !(n.re() >= opts.gradient_floor) {
        return Err(ShapeError::DegenerateGradient {
            point: [0.0; 3],
            norm: n.re(),
            term: None,
            sample: None,
        });
    }
    Ok(n)
}

fn trace<T: Real>(h: &[[T; 3]; 3]) -> T {
    h[0][0] + h[1][1] + h[2][2]
}

fn quad_form<T: Real>(g: &[T; 3], h: &[[T; 3]; 3]) -> T {
    let mut s = T::cst(0.0);
    for k in 0..3 {
        for l in 0..3 {
            s = s + g[k] * h[k][l] * g[l];
        }
    }
    s
}

/// Adjugate (transposed cofactor matrix) of a 3x3 matrix.
fn adjugate<T: Real>(h: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    [
        [
            h[1][1] * h[2][2] - h[1][2] * h[2][1],
            h[0][2] * h[2][1] - h[0][1] * h[2][2],
            h[0][1] * h[1][2] - h[0][2] * h[1][1],
        ],
        [
            h[1][2] * h[2][0] - h[1][0] * h[2][2],
            h[0][0] * h[2][2] - h[0][2] * h[2][0],
            h[0][2] * h[1][0] - h[0][0] * h[1][2],
        ],
        [
            h[1][0] * h[2][1] - h[1][1] * h[2][0],
            h[0][1] * h[2][0] - h[0][0] * h[2][1],
            h[0][0] * h[1][1] - h[0][1] * h[1][0],
        ],
    ]
}

/// `div(∇f/‖∇f‖) = (tr(H)‖g‖² - gᵀHg) / ‖g‖³`.
fn mean_curvature_term<T: Real>(jet: &Jet2<T>, norm: T) -> T {
    let n2 = norm * norm;
    (trace(&jet.hess) * n2 - quad_form(&jet.grad, &jet.hess)) / (n2 * norm)
}

/// `κ_G = gᵀ adj(H) g / ‖g‖⁴`.
fn gauss_curvature_term<T: Real>(jet: &Jet2<T>, norm: T) -> T {
    let n2 = norm * norm;
    quad_form(&jet.grad, &adjugate(&jet.hess)) / (n2 * n2)
}

/// Principal curvatures `κ_M ± sqrt(max{0, κ_M² - κ_G})` with `κ_M = div/2`.
pub fn principal_curvatures<T: Real>(jet: &Jet2<T>, opts: &ResidualOptions) -> Result<(T, T)> {
    let norm = checked_norm(jet, opts)?;
    let km = mean_curvature_term(jet, norm).scale(0.5);
    let kg = gauss_curvature_term(jet, norm);
    let disc = km * km - kg;
    let scale = 1.0 + km.re() * km.re();
    if disc.re() < -opts.discriminant_tol * scale {
        return Err(ShapeError::NegativeDiscriminant {
            point: [0.0; 3],
            value: disc.re(),
        });
    }
    // At (near-)umbilic points the root is not differentiable; hold it constant there.
    let root = if disc.re() <= 1e-14 * scale {
        T::cst(disc.re().max(0.0).sqrt())
    } else {
        disc.sqrt()
    };
    Ok((km + root, km - root))
}

/// Evaluate residual `kind` on a jet of any scalar type.
pub fn residual_generic<T: Real>(
    kind: ResidualKind,
    jet: &Jet2<T>,
    meta: &PointMeta,
    opts: &ResidualOptions,
) -> Result<ResidualValue<T>> {
    let one = T::cst(1.0);
    Ok(match kind {
        ResidualKind::DesignRegion => {
            if meta.outside && jet.value.re() < 0.0 {
                ResidualValue::One(jet.value)
            } else {
                ResidualValue::One(T::cst(0.0))
            }
        }
        ResidualKind::Interface => ResidualValue::One(jet.value),
        ResidualKind::Supervised => {
            let y = meta.target.ok_or_else(|| {
                ShapeError::InvalidArgument("supervised residual needs a target value".into())
            })?;
            ResidualValue::One(jet.value - T::cst(y))
        }
        ResidualKind::Normal => {
            let n = meta.normal.ok_or_else(|| {
                ShapeError::InvalidArgument("normal residual needs a target normal".into())
            })?;
            let norm = checked_norm(jet, opts)?;
            let dot = jet.grad[0].scale(n[0]) + jet.grad[1].scale(n[1]) + jet.grad[2].scale(n[2]);
            ResidualValue::One(dot / norm - one)
        }
        ResidualKind::Eikonal => ResidualValue::One(grad_norm(&jet.grad) - one),
        ResidualKind::MeanCurvature => {
            let norm = checked_norm(jet, opts)?;
            ResidualValue::One(mean_curvature_term(jet, norm))
        }
        ResidualKind::GaussCurvature => {
            let norm = checked_norm(jet, opts)?;
            ResidualValue::One(gauss_curvature_term(jet, norm))
        }
        ResidualKind::SurfaceStrain => {
            let (k1, k2) = principal_curvatures(jet, opts)?;
            ResidualValue::Two(k1, k2)
        }
    })
}

fn attach_point(err: ShapeError, x: &[f64; 3]) -> ShapeError {
    match err {
        ShapeError::DegenerateGradient {
            norm, term, sample, ..
        } => ShapeError::DegenerateGradient {
            point: *x,
            norm,
            term,
            sample,
        },
        ShapeError::NegativeDiscriminant { value, .. } => {
            ShapeError::NegativeDiscriminant { point: *x, value }
        }
        e => e,
    }
}

/// Residual value(s) of `kind` for the jet of a field at `x`.
pub fn residual_at(
    kind: ResidualKind,
    jet: &Jet2,
    x: &[f64; 3],
    meta: &PointMeta,
    opts: &ResidualOptions,
) -> Result<ResidualValue> {
    residual_generic(kind, jet, meta, opts).map_err(|e| attach_point(e, x))
}

/// Residual value(s) together with their derivatives with respect to the jet.
pub fn residual_with_adjoint(
    kind: ResidualKind,
    jet: &Jet2,
    x: &[f64; 3],
    meta: &PointMeta,
    opts: &ResidualOptions,
) -> Result<ResidualValue<(f64, JetAdjoint)>> {
    let lifted = jet.lift();
    let r = residual_generic::<Dual>(kind, &lifted, meta, opts).map_err(|e| attach_point(e, x))?;
    let conv = |d: Dual| (d.re, JetAdjoint::from_dual(&d));
    Ok(match r {
        ResidualValue::One(a) => ResidualValue::One(conv(a)),
        ResidualValue::Two(a, b) => ResidualValue::Two(conv(a), conv(b)),
    })
}

/// Clip a residual so its energy contribution `value²` does not exceed `cap`.
///
/// Returns the clipped value and whether clipping happened. A clipped
/// residual is constant in θ (flat beyond the cap).
pub fn clip_residual(value: f64, cap: f64) -> (f64, bool) {
    if value * value > cap {
        (value.signum() * cap.sqrt(), true)
    } else {
        (value, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{AffineField, QuadraticField, ScalarField};

    fn opts() -> ResidualOptions {
        ResidualOptions::default()
    }

    fn sphere_jet(x: [f64; 3], r: f64) -> Jet2 {
        let n = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let u = [x[0] / n, x[1] / n, x[2] / n];
        let mut hess = [[0.0; 3]; 3];
        for k in 0..3 {
            for l in 0..3 {
                hess[k][l] = (if k == l { 1.0 } else { 0.0 } - u[k] * u[l]) / n;
            }
        }
        Jet2 {
            value: n - r,
            grad: u,
            hess,
        }
    }

    fn one(v: ResidualValue) -> f64 {
        match v {
            ResidualValue::One(a) => a,
            _ => panic!("expected one entry"),
        }
    }

    #[test]
    fn unit_sphere_curvatures() {
        let x = [1.0, 0.0, 0.0];
        let j = sphere_jet(x, 1.0);
        let m = PointMeta::default();
        assert!((one(residual_at(ResidualKind::MeanCurvature, &j, &x, &m, &opts()).unwrap()) - 2.0).abs() < 1e-14);
        assert!((one(residual_at(ResidualKind::GaussCurvature, &j, &x, &m, &opts()).unwrap()) - 1.0).abs() < 1e-14);
        match residual_at(ResidualKind::SurfaceStrain, &j, &x, &m, &opts()).unwrap() {
            ResidualValue::Two(a, b) => {
                assert!((a - 1.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn plane_and_scaled_plane() {
        let x = [0.1, 0.2, 0.0];
        let j = AffineField::plane_z().jet2(&x);
        let m = PointMeta::default();
        for k in [ResidualKind::Eikonal, ResidualKind::MeanCurvature, ResidualKind::GaussCurvature] {
            assert_eq!(one(residual_at(k, &j, &x, &m, &opts()).unwrap()), 0.0);
        }
        let f = AffineField { a: [2.0, 0.0, 0.0], c: 0.0 };
        let j = f.jet2(&x);
        assert_eq!(one(residual_at(ResidualKind::Eikonal, &j, &x, &m, &opts()).unwrap()), 1.0);
        let mut jneg = j;
        jneg.value = -0.5;
        assert_eq!(one(residual_at(ResidualKind::DesignRegion, &jneg, &x, &m, &opts()).unwrap()), -0.5);
        let inside = PointMeta { outside: false, ..m };
        assert_eq!(one(residual_at(ResidualKind::DesignRegion, &jneg, &x, &inside, &opts()).unwrap()), 0.0);
        let with_n = PointMeta { normal: Some([1.0, 0.0, 0.0]), ..m };
        assert_eq!(one(residual_at(ResidualKind::Normal, &j, &x, &with_n, &opts()).unwrap()), 0.0);
    }

    #[test]
    fn degenerate_gradient_is_reported_with_point() {
        let x = [0.5, 0.5, 0.5];
        let f = AffineField { a: [0.0; 3], c: 1.0 };
        let err = residual_at(ResidualKind::MeanCurvature, &f.jet2(&x), &x, &PointMeta::default(), &opts()).unwrap_err();
        match err {
            ShapeError::DegenerateGradient { point, .. } => assert_eq!(point, x),
            e => panic!("{e}"),
        }
        // eikonal does not divide by the norm
        assert!(residual_at(ResidualKind::Eikonal, &f.jet2(&x), &x, &PointMeta::default(), &opts()).is_ok());
    }

    #[test]
    fn clipping() {
        assert_eq!(clip_residual(10f64.sqrt(), 1000.0), (10f64.sqrt(), false));
        let (v, clipped) = clip_residual(-1000.0, 1000.0);
        assert!(clipped);
        assert!((v * v - 1000.0).abs() < 1e-9 && v < 0.0);
        assert_eq!(clip_residual(1e200, f64::INFINITY), (1e200, false));
    }

    #[test]
    fn adjoint_matches_finite_difference_in_jet_space() {
        let q = QuadraticField::new(0.3, [0.2, -0.5, 0.9], [[1.0, 0.3, -0.2], [0.3, -0.7, 0.4], [-0.2, 0.4, 0.5]]);
        let x = [0.3, -0.2, 0.6];
        let jet = q.jet2(&x);
        let m = PointMeta { normal: Some([0.0, 0.6, 0.8]), ..Default::default() };
        for kind in [ResidualKind::Normal, ResidualKind::Eikonal, ResidualKind::MeanCurvature, ResidualKind::GaussCurvature] {
            let (r, adj) = match residual_with_adjoint(kind, &jet, &x, &m, &opts()).unwrap() {
                ResidualValue::One(v) => v,
                _ => unreachable!(),
            };
            assert_eq!(r, one(residual_at(kind, &jet, &x, &m, &opts()).unwrap()));
            let h = 1e-6;
            for k in 0..3 {
                let mut jp = jet;
                jp.grad[k] += h;
                let mut jm = jet;
                jm.grad[k] -= h;
                let fd = (one(residual_at(kind, &jp, &x, &m, &opts()).unwrap()) - one(residual_at(kind, &jm, &x, &m, &opts()).unwrap())) / (2.0 * h);
                assert!((fd - adj.grad[k]).abs() < 1e-7, "{kind:?} grad {k}");
                for l in 0..3 {
                    let mut jp = jet;
                    jp.hess[k][l] += h;
                    let mut jm = jet;
                    jm.hess[k][l] -= h;
                    let fd = (one(residual_at(kind, &jp, &x, &m, &opts()).unwrap()) - one(residual_at(kind, &jm, &x, &m, &opts()).unwrap())) / (2.0 * h);
                    assert!((fd - adj.hess[k][l]).abs() < 1e-7, "{kind:?} hess {k}{l}");
                }
            }
        }
    }
}

//! Analytic reference geometry and point-cloud files.

mod pointcloud;

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapeError};
use crate::field::{Jet2, ScalarField};

pub use pointcloud::{
    load_point_cloud, read_points, write_point_cloud, OrientedPointCloud, PointCloudTransform, RawPoints,
};

/// Classical test surfaces.
///
/// Every surface is centered on the z axis; the frustum spans
/// `z in [-height/2, height/2]` with radius `r_bottom` at the bottom.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticSurface {
    Catenoid { c: f64 },
    Enneper { r0: f64 },
    ConeFrustum { r_bottom: f64, r_top: f64, height: f64 },
    Sphere { r: f64 },
    Cylinder { r: f64 },
    /// The xy-plane.
    Plane,
}

fn rho(x: &[f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1]).sqrt()
}

/// Jet of `ρ = sqrt(x² + y²)`.
fn rho_jet(x: &[f64; 3]) -> Jet2 {
    let r = rho(x).max(1e-300);
    let (nx, ny) = (x[0] / r, x[1] / r);
    let mut hess = [[0.0; 3]; 3];
    hess[0][0] = (1.0 - nx * nx) / r;
    hess[1][1] = (1.0 - ny * ny) / r;
    hess[0][1] = -nx * ny / r;
    hess[1][0] = hess[0][1];
    Jet2 {
        value: rho(x),
        grad: [nx, ny, 0.0],
        hess,
    }
}

/// Jet of `|x - p|`.
fn point_distance_jet(x: &[f64; 3], p: &[f64; 3]) -> Jet2 {
    let d = [x[0] - p[0], x[1] - p[1], x[2] - p[2]];
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let rs = r.max(1e-300);
    let n = [d[0] / rs, d[1] / rs, d[2] / rs];
    let mut hess = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            hess[i][j] = ((i == j) as u8 as f64 - n[i] * n[j]) / rs;
        }
    }
    Jet2 {
        value: r,
        grad: n,
        hess,
    }
}

impl AnalyticSurface {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            AnalyticSurface::Catenoid { c } => c > 0.0 && c.is_finite(),
            AnalyticSurface::Enneper { r0 } => r0 > 0.0 && r0.is_finite(),
            AnalyticSurface::ConeFrustum {
                r_bottom,
                r_top,
                height,
            } => r_bottom > 0.0 && r_top > 0.0 && height > 0.0,
            AnalyticSurface::Sphere { r } | AnalyticSurface::Cylinder { r } => r > 0.0 && r.is_finite(),
            AnalyticSurface::Plane => true,
        };
        if ok {
            Ok(())
        } else {
            Err(ShapeError::InvalidArgument(format!("invalid surface {self:?}")))
        }
    }

    /// Cone mantle as `ρ = a - b z`.
    fn cone_line(r_bottom: f64, r_top: f64, height: f64) -> (f64, f64) {
        ((r_bottom + r_top) / 2.0, (r_bottom - r_top) / height)
    }

    /// Second-order jet of the implicit form.
    ///
    /// Catenoid: `ρ - c cosh(z/c)`. Surfaces with a closed-form SDF use it.
    pub fn implicit_jet(&self, x: &[f64; 3]) -> Result<Jet2> {
        match *self {
            AnalyticSurface::Catenoid { c } => {
                let mut j = rho_jet(x);
                let (ch, sh) = ((x[2] / c).cosh(), (x[2] / c).sinh());
                j.value -= c * ch;
                j.grad[2] = -sh;
                j.hess[2][2] = -ch / c;
                Ok(j)
            }
            AnalyticSurface::Enneper { .. } => Err(ShapeError::UnsupportedSurface("Enneper has no implicit form here")),
            _ => self.sdf_jet(x),
        }
    }

    pub fn implicit(&self, x: &[f64; 3]) -> Result<f64> {
        match *self {
            AnalyticSurface::Catenoid { c } => Ok(rho(x) - c * (x[2] / c).cosh()),
            _ => self.sdf(x),
        }
    }

    /// Closed-form signed distance, negative inside (or below the plane).
    ///
    /// The frustum uses the signed distance to the infinite cone nappe
    /// through its mantle, which is exact near the mantle.
    pub fn sdf(&self, x: &[f64; 3]) -> Result<f64> {
        match *self {
            AnalyticSurface::Sphere { r } => Ok((x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() - r),
            AnalyticSurface::Cylinder { r } => Ok(rho(x) - r),
            AnalyticSurface::Plane => Ok(x[2]),
            AnalyticSurface::ConeFrustum { .. } => Ok(self.sdf_jet(x)?.value),
            AnalyticSurface::Catenoid { .. } => Err(ShapeError::UnsupportedSurface("catenoid has no closed-form SDF")),
            AnalyticSurface::Enneper { .. } => Err(ShapeError::UnsupportedSurface("Enneper has no closed-form SDF")),
        }
    }

    pub fn sdf_jet(&self, x: &[f64; 3]) -> Result<Jet2> {
        match *self {
            AnalyticSurface::Sphere { r } => {
                let mut j = point_distance_jet(x, &[0.0; 3]);
                j.value -= r;
                Ok(j)
            }
            AnalyticSurface::Cylinder { r } => {
                let mut j = rho_jet(x);
                j.value -= r;
                Ok(j)
            }
            AnalyticSurface::Plane => Ok(Jet2 {
                value: x[2],
                grad: [0.0, 0.0, 1.0],
                hess: [[0.0; 3]; 3],
            }),
            AnalyticSurface::ConeFrustum {
                r_bottom,
                r_top,
                height,
            } => {
                let (a, b) = Self::cone_line(r_bottom, r_top, height);
                let s = (1.0 + b * b).sqrt();
                if b != 0.0 {
                    // beyond the apex the nearest point of the nappe is the apex
                    let za = a / b;
                    let t = rho(x) - (x[2] - za) / b;
                    if t < 0.0 {
                        return Ok(point_distance_jet(x, &[0.0, 0.0, za]));
                    }
                }
                let mut j = rho_jet(x);
                j.value = (j.value - a + b * x[2]) / s;
                j.grad = [j.grad[0] / s, j.grad[1] / s, b / s];
                for row in &mut j.hess {
                    for h in row.iter_mut() {
                        *h /= s;
                    }
                }
                Ok(j)
            }
            AnalyticSurface::Catenoid { .. } | AnalyticSurface::Enneper { .. } => {
                Err(self.sdf(x).unwrap_err())
            }
        }
    }

    /// Point of the parametric form.
    ///
    /// `t in [0, 1)` is the angular fraction. `s` is the height `z` for the
    /// catenoid, cylinder and frustum, the polar angle for the sphere, the
    /// polar parameter radius for Enneper and the radius for the plane.
    pub fn param_point(&self, t: f64, s: f64) -> [f64; 3] {
        let (sn, cs) = (TAU * t).sin_cos();
        match *self {
            AnalyticSurface::Catenoid { c } => {
                let r = c * (s / c).cosh();
                [r * cs, r * sn, s]
            }
            AnalyticSurface::Cylinder { r } => [r * cs, r * sn, s],
            AnalyticSurface::ConeFrustum {
                r_bottom,
                r_top,
                height,
            } => {
                let (a, b) = Self::cone_line(r_bottom, r_top, height);
                let r = a - b * s;
                [r * cs, r * sn, s]
            }
            AnalyticSurface::Sphere { r } => {
                let (ps, pc) = s.sin_cos();
                [r * ps * cs, r * ps * sn, r * pc]
            }
            AnalyticSurface::Plane => [s * cs, s * sn, 0.0],
            AnalyticSurface::Enneper { .. } => enneper_point(s * cs, s * sn),
        }
    }
}

/// Enneper surface `(u - u³/3 + u v², v - v³/3 + u² v, u² - v²)`.
pub fn enneper_point(u: f64, v: f64) -> [f64; 3] {
    [
        u - u * u * u / 3.0 + u * v * v,
        v - v * v * v / 3.0 + u * u * v,
        u * u - v * v,
    ]
}

fn enneper_tangents(u: f64, v: f64) -> ([f64; 3], [f64; 3]) {
    (
        [1.0 - u * u + v * v, 2.0 * u * v, 2.0 * u],
        [2.0 * u * v, 1.0 - v * v + u * u, -2.0 * v],
    )
}

/// Closed curve used as a prescribed interface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InterfaceCurve {
    /// Horizontal circle around an axis parallel to z.
    Circle { center: [f64; 3], radius: f64 },
    /// Image of the parameter circle of radius `r0` on the Enneper surface.
    EnneperBoundary { r0: f64 },
}

impl InterfaceCurve {
    /// Point at curve parameter `t in [0, 1)`.
    pub fn point(&self, t: f64) -> [f64; 3] {
        let (sn, cs) = (TAU * t).sin_cos();
        match *self {
            InterfaceCurve::Circle { center, radius } => {
                [center[0] + radius * cs, center[1] + radius * sn, center[2]]
            }
            InterfaceCurve::EnneperBoundary { r0 } => enneper_point(r0 * cs, r0 * sn),
        }
    }

    /// Euclidean distance from `x` to the curve.
    pub fn distance(&self, x: &[f64; 3]) -> f64 {
        match *self {
            InterfaceCurve::Circle { center, radius } => {
                let p = rho(&[x[0] - center[0], x[1] - center[1], 0.0]);
                ((p - radius).powi(2) + (x[2] - center[2]).powi(2)).sqrt()
            }
            InterfaceCurve::EnneperBoundary { .. } => {
                const M: usize = 4096;
                let mut best = f64::INFINITY;
                for k in 0..M {
                    let p = self.point(k as f64 / M as f64);
                    let d = (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2) + (p[2] - x[2]).powi(2);
                    best = best.min(d);
                }
                best.sqrt()
            }
        }
    }
}

/// Which scalar form of a surface a field exposes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurfaceForm {
    Sdf,
    Implicit,
}

/// An analytic surface seen as a `ScalarField`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceField {
    surface: AnalyticSurface,
    form: SurfaceForm,
}

impl SurfaceField {
    pub fn new(surface: AnalyticSurface, form: SurfaceForm) -> Result<Self> {
        surface.validate()?;
        let probe = [0.1, 0.2, 0.3];
        match form {
            SurfaceForm::Sdf => surface.sdf(&probe)?,
            SurfaceForm::Implicit => surface.implicit(&probe)?,
        };
        Ok(Self { surface, form })
    }

    pub fn sdf(surface: AnalyticSurface) -> Result<Self> {
        Self::new(surface, SurfaceForm::Sdf)
    }

    pub fn implicit(surface: AnalyticSurface) -> Result<Self> {
        Self::new(surface, SurfaceForm::Implicit)
    }
}

impl ScalarField for SurfaceField {
    fn eval(&self, x: &[f64; 3]) -> f64 {
        let v = match self.form {
            SurfaceForm::Sdf => self.surface.sdf(x),
            SurfaceForm::Implicit => self.surface.implicit(x),
        };
        v.unwrap_or(f64::NAN)
    }

    fn jet2(&self, x: &[f64; 3]) -> Jet2 {
        let j = match self.form {
            SurfaceForm::Sdf => self.surface.sdf_jet(x),
            SurfaceForm::Implicit => self.surface.implicit_jet(x),
        };
        j.unwrap_or(Jet2 {
            value: f64::NAN,
            grad: [f64::NAN; 3],
            hess: [[f64::NAN; 3]; 3],
        })
    }
}

/// Ground truth for point-to-surface distances.
#[derive(Clone, Debug)]
pub struct ReferenceSurface {
    pub surface: AnalyticSurface,
    /// Enneper only: dense parameter samples `(u, v, point)`.
    grid: Vec<(f64, f64, [f64; 3])>,
}

/// Default resolution of the Enneper parameter grid per direction.
pub const ENNEPER_GRID: usize = 512;

impl ReferenceSurface {
    pub fn new(surface: AnalyticSurface) -> Result<Self> {
        Self::with_grid(surface, ENNEPER_GRID)
    }

    pub fn with_grid(surface: AnalyticSurface, n: usize) -> Result<Self> {
        surface.validate()?;
        let mut grid = Vec::new();
        if let AnalyticSurface::Enneper { r0 } = surface {
            let n = n.max(2);
            for i in 0..n {
                let r = r0 * i as f64 / (n - 1) as f64;
                for k in 0..n {
                    let (sn, cs) = (TAU * k as f64 / n as f64).sin_cos();
                    let (u, v) = (r * cs, r * sn);
                    grid.push((u, v, enneper_point(u, v)));
                    if i == 0 {
                        break;
                    }
                }
            }
        }
        Ok(Self { surface, grid })
    }

    /// Unsigned distance from `x` to the surface.
    ///
    /// Sphere, cylinder, plane and frustum are closed form; the catenoid
    /// reduces to a 1-D search along its meridian; Enneper uses the dense
    /// parameter grid of the patch `u² + v² <= r0²` refined by Gauss-Newton.
    pub fn distance(&self, x: &[f64; 3]) -> f64 {
        match self.surface {
            AnalyticSurface::Catenoid { c } => catenoid_distance(rho(x), x[2], c),
            AnalyticSurface::Enneper { r0 } => self.enneper_distance(x, r0),
            s => s.sdf(x).map(f64::abs).unwrap_or(f64::NAN),
        }
    }

    fn enneper_distance(&self, x: &[f64; 3], r0: f64) -> f64 {
        let d2 = |p: &[f64; 3]| (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2) + (p[2] - x[2]).powi(2);
        let mut best = (0.0, 0.0, f64::INFINITY);
        for (u, v, p) in &self.grid {
            let d = d2(p);
            if d < best.2 {
                best = (*u, *v, d);
            }
        }
        let (mut u, mut v, mut cur) = best;
        for _ in 0..30 {
            let p = enneper_point(u, v);
            let (tu, tv) = enneper_tangents(u, v);
            let e = [p[0] - x[0], p[1] - x[1], p[2] - x[2]];
            let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            let (a11, a12, a22) = (dot(&tu, &tu), dot(&tu, &tv), dot(&tv, &tv));
            let (b1, b2) = (dot(&tu, &e), dot(&tv, &e));
            let det = a11 * a22 - a12 * a12;
            if det.abs() < 1e-300 {
                break;
            }
            let du = (a22 * b1 - a12 * b2) / det;
            let dv = (a11 * b2 - a12 * b1) / det;
            let mut step = 1.0;
            let mut improved = false;
            while step > 1e-6 {
                let (mut nu, mut nv) = (u - step * du, v - step * dv);
                let r = (nu * nu + nv * nv).sqrt();
                if r > r0 {
                    nu *= r0 / r;
                    nv *= r0 / r;
                }
                let nd = d2(&enneper_point(nu, nv));
                if nd < cur {
                    u = nu;
                    v = nv;
                    improved = cur - nd > 1e-30;
                    cur = nd;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        cur.sqrt()
    }
}

/// Distance in the meridian half-plane from `(ρ0, z0)` to `ρ = c cosh(z/c)`.
fn catenoid_distance(rho0: f64, z0: f64, c: f64) -> f64 {
    let phi = |z: f64| (c * (z / c).cosh() - rho0).powi(2) + (z - z0).powi(2);
    // the horizontal gap bounds the distance, so the foot lies within it in z
    let bound = (rho0 - c * (z0 / c).cosh()).abs();
    if bound == 0.0 {
        return 0.0;
    }
    const M: usize = 256;
    let (lo, hi) = (z0 - bound, z0 + bound);
    let h = (hi - lo) / M as f64;
    let mut best = (z0, phi(z0));
    for k in 0..=M {
        let z = lo + h * k as f64;
        let p = phi(z);
        if p < best.1 {
            best = (z, p);
        }
    }
    // golden-section refinement on the bracketing cell pair
    let (mut a, mut b) = ((best.0 - h).max(lo), (best.0 + h).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (phi(x1), phi(x2));
    for _ in 0..80 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = phi(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = phi(x2);
        }
    }
    best.1.min(f1).min(f2).sqrt()
}

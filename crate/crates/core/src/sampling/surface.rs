use rand::Rng;
use rayon::prelude::*;

use super::{Bounds, ProjectionConfig, SurfaceExclusion};
use crate::error::{Result, ShapeError};
use crate::field::{norm3, ScalarField};

#[derive(Clone, Debug, PartialEq)]
pub struct BinaryResult {
    pub points: Vec<[f64; 3]>,
    /// Pairs skipped because they did not satisfy `f(low) < 0 < f(high)`.
    pub rejected: usize,
}

/// Bisect each `(low, high)` segment `depth` times and return the midpoints.
///
/// Value-only: never asks the field for derivatives.
pub fn sample_surface_binary<F: ScalarField>(
    field: &F,
    pairs: &[([f64; 3], [f64; 3])],
    depth: usize,
) -> Result<BinaryResult> {
    let res: Vec<Option<[f64; 3]>> = pairs
        .par_iter()
        .map(|(lo, hi)| -> Result<Option<[f64; 3]>> {
            let flo = field.try_eval(lo)?;
            let fhi = field.try_eval(hi)?;
            if !(flo < 0.0 && fhi > 0.0) {
                return Ok(None);
            }
            Ok(Some(bisect(field, *lo, *hi, depth)?))
        })
        .collect::<Result<_>>()?;
    let rejected = res.iter().filter(|p| p.is_none()).count();
    Ok(BinaryResult {
        points: res.into_iter().flatten().collect(),
        rejected,
    })
}

fn lerp(a: &[f64; 3], b: &[f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + t * (b[0] - a[0]),
        a[1] + t * (b[1] - a[1]),
        a[2] + t * (b[2] - a[2]),
    ]
}

fn bisect<F: ScalarField>(field: &F, mut lo: [f64; 3], mut hi: [f64; 3], depth: usize) -> Result<[f64; 3]> {
    for _ in 0..depth {
        let mid = lerp(&lo, &hi, 0.5);
        let fm = field.try_eval(&mid)?;
        if fm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lerp(&lo, &hi, 0.5))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonResult {
    /// Final iterate of every input point (converged or not).
    pub points: Vec<[f64; 3]>,
    pub converged: Vec<bool>,
    /// Newton steps taken per point.
    pub iterations: Vec<usize>,
}

impl NewtonResult {
    pub fn converged_points(&self) -> Vec<[f64; 3]> {
        self.points
            .iter()
            .zip(&self.converged)
            .filter(|(_, &c)| c)
            .map(|(p, _)| *p)
            .collect()
    }
}

/// Orthogonal Newton projection `x <- x - f ∇f / ‖∇f‖²` with a step cap.
pub fn sample_surface_newton<F: ScalarField>(
    field: &F,
    init: &[[f64; 3]],
    cfg: &ProjectionConfig,
) -> Result<NewtonResult> {
    cfg.validate()?;
    if let Some(bad) = init.iter().find(|x| x.iter().any(|c| !c.is_finite())) {
        return Err(ShapeError::NonFinite {
            what: "initial point",
            x: *bad,
        });
    }
    let out: Vec<([f64; 3], bool, usize)> = init.par_iter().map(|x| newton_one(field, *x, cfg)).collect();
    let mut res = NewtonResult {
        points: Vec::with_capacity(out.len()),
        converged: Vec::with_capacity(out.len()),
        iterations: Vec::with_capacity(out.len()),
    };
    for (p, c, it) in out {
        res.points.push(p);
        res.converged.push(c);
        res.iterations.push(it);
    }
    Ok(res)
}

fn newton_one<F: ScalarField>(field: &F, mut x: [f64; 3], cfg: &ProjectionConfig) -> ([f64; 3], bool, usize) {
    for it in 0..=cfg.max_iter {
        let (f, g) = field.jet1(&x);
        if !f.is_finite() {
            return (x, false, it);
        }
        if f.abs() <= cfg.tol {
            return (x, true, it);
        }
        if it == cfg.max_iter {
            break;
        }
        let gn = norm3(&g);
        if !(gn >= cfg.gradient_floor) {
            return (x, false, it);
        }
        let s = f / (gn * gn);
        let mut d = [s * g[0], s * g[1], s * g[2]];
        let len = norm3(&d);
        if len > cfg.step_cap {
            let c = cfg.step_cap / len;
            d = [d[0] * c, d[1] * c, d[2] * c];
        }
        x = [x[0] - d[0], x[1] - d[1], x[2] - d[2]];
    }
    (x, false, cfg.max_iter)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelSetResult {
    /// Converged points inside the box and outside any exclusion.
    pub points: Vec<[f64; 3]>,
    pub seeded: usize,
}

/// Up to `n` points on the zero level set inside `bounds`.
///
/// Random segments between uniform point pairs are kept when `f` changes
/// sign along them, bisected `seed_depth` times and refined by Newton.
pub fn sample_level_set<F: ScalarField, R: Rng>(
    field: &F,
    bounds: &Bounds,
    n: usize,
    cfg: &ProjectionConfig,
    exclusion: Option<&SurfaceExclusion>,
    rng: &mut R,
) -> Result<LevelSetResult> {
    let max_pairs = 64 * n.max(1);
    let mut pairs = Vec::with_capacity(n);
    let mut drawn = 0;
    while pairs.len() < n && drawn < max_pairs {
        let batch = (n - pairs.len()).max(16);
        let cand: Vec<([f64; 3], [f64; 3])> = (0..batch).map(|_| (bounds.draw(rng), bounds.draw(rng))).collect();
        drawn += batch;
        let vals: Vec<(f64, f64)> = cand
            .par_iter()
            .map(|(a, b)| Ok((field.try_eval(a)?, field.try_eval(b)?)))
            .collect::<Result<_>>()?;
        for ((a, b), (fa, fb)) in cand.into_iter().zip(vals) {
            if pairs.len() == n {
                break;
            }
            if fa < 0.0 && fb > 0.0 {
                pairs.push((a, b));
            } else if fb < 0.0 && fa > 0.0 {
                pairs.push((b, a));
            }
        }
    }
    let seeds = sample_surface_binary(field, &pairs, cfg.seed_depth)?.points;
    let refined = sample_surface_newton(field, &seeds, cfg)?;
    let points = refined
        .converged_points()
        .into_iter()
        .filter(|x| bounds.contains(x))
        .filter(|x| match exclusion {
            Some(ex) => ex.curves.iter().all(|c| c.distance(x) >= ex.radius),
            None => true,
        })
        .collect();
    Ok(LevelSetResult {
        points,
        seeded: seeds.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{AffineField, QuadraticField};

    fn sphere_sdf() -> crate::geomio::SurfaceField {
        crate::geomio::SurfaceField::sdf(crate::geomio::AnalyticSurface::Sphere { r: 1.0 }).unwrap()
    }

    #[test]
    fn binary_search_on_plane() {
        let f = AffineField { a: [1.0, 0.0, 0.0], c: 0.0 };
        let r = sample_surface_binary(&f, &[([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0])], 20).unwrap();
        assert_eq!(r.points.len(), 1);
        assert!(r.points[0][0].abs() <= 2.0 * 2f64.powi(-20));
    }

    #[test]
    fn binary_search_on_sphere_and_rejection() {
        let f = sphere_sdf();
        let pairs = [
            ([0.0, 0.0, 0.0], [2.0, 0.0, 0.0]),
            ([2.0, 0.0, 0.0], [3.0, 0.0, 0.0]),
        ];
        let r = sample_surface_binary(&f, &pairs, 20).unwrap();
        assert_eq!(r.points.len(), 1);
        assert_eq!(r.rejected, 1);
        assert!((r.points[0][0] - 1.0).abs() <= 2f64.powi(-19));
    }

    #[test]
    fn newton_on_sdf_and_plane() {
        let mut cfg = ProjectionConfig::default();
        cfg.step_cap = f64::INFINITY;
        let r = sample_surface_newton(&sphere_sdf(), &[[2.0, 0.0, 0.0]], &cfg).unwrap();
        assert!(r.converged[0]);
        assert_eq!(r.iterations[0], 1);
        assert!((r.points[0][0] - 1.0).abs() < 1e-12);
        let plane = AffineField::plane_z();
        let r = sample_surface_newton(&plane, &[[0.3, -0.2, 5.0]], &cfg).unwrap();
        assert_eq!(r.points[0], [0.3, -0.2, 0.0]);
    }

    #[test]
    fn newton_on_quadratic_cylinder() {
        let f = QuadraticField::new(-1.0, [0.0; 3], [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 0.0]]);
        let cfg = ProjectionConfig { step_cap: f64::INFINITY, ..Default::default() };
        let r = sample_surface_newton(&f, &[[2.0, 0.0, 0.0]], &cfg).unwrap();
        assert!(r.converged[0]);
        assert!(r.iterations[0] <= 8);
        assert!((r.points[0][0] - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn step_cap_limits_displacement() {
        let plane = AffineField::plane_z();
        let cfg = ProjectionConfig { step_cap: 0.1, max_iter: 3, ..Default::default() };
        let r = sample_surface_newton(&plane, &[[0.0, 0.0, 5.0]], &cfg).unwrap();
        assert!(!r.converged[0]);
        assert!((r.points[0][2] - 4.7).abs() < 1e-12);
    }

    #[test]
    fn flat_gradient_is_flagged() {
        let f = AffineField { a: [0.0; 3], c: 1.0 };
        let r = sample_surface_newton(&f, &[[0.0; 3]], &ProjectionConfig::default()).unwrap();
        assert!(!r.converged[0]);
        assert!(sample_surface_newton(&f, &[[f64::NAN, 0.0, 0.0]], &ProjectionConfig::default()).is_err());
    }
}

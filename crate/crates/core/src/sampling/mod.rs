//! Evaluation points on fixed domains and on the moving level set `Γ(θ)`.

mod surface;

use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapeError};
use crate::field::ScalarField;
use crate::geomio::{InterfaceCurve, OrientedPointCloud};
use crate::residuals::{residual_at, LossTerm, PointMeta, ResidualOptions, Sample, TermBatch};

pub use surface::{
    sample_level_set, sample_surface_binary, sample_surface_newton, BinaryResult, LevelSetResult,
    NewtonResult,
};

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if (0..3).all(|k| self.min[k] < self.max[k]) {
            Ok(())
        } else {
            Err(ShapeError::InvalidArgument(format!(
                "empty box {:?}..{:?}",
                self.min, self.max
            )))
        }
    }

    pub fn unit() -> Self {
        Self {
            min: [0.0; 3],
            max: [1.0; 3],
        }
    }

    /// `[-h, h]^3`.
    pub fn cube(h: f64) -> Self {
        Self {
            min: [-h; 3],
            max: [h; 3],
        }
    }

    pub fn diagonal(&self) -> f64 {
        let mut s = 0.0;
        for k in 0..3 {
            s += (self.max[k] - self.min[k]).powi(2);
        }
        s.sqrt()
    }

    pub fn contains(&self, x: &[f64; 3]) -> bool {
        (0..3).all(|k| x[k] >= self.min[k] && x[k] <= self.max[k])
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> [f64; 3] {
        let mut x = [0.0; 3];
        for k in 0..3 {
            x[k] = self.min[k] + (self.max[k] - self.min[k]) * rng.gen::<f64>();
        }
        x
    }
}

/// Analytic solid used as a design region or exclusion set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticRegion {
    Box { bounds: Bounds },
    Ball { center: [f64; 3], radius: f64 },
    /// Spherical shell `r_inner <= |x - center| <= r_outer`.
    Shell { center: [f64; 3], r_inner: f64, r_outer: f64 },
    /// Solid truncated cone around the z axis, `z in [-height/2, height/2]`.
    Frustum { r_bottom: f64, r_top: f64, height: f64 },
}

impl AnalyticRegion {
    pub fn contains(&self, x: &[f64; 3]) -> bool {
        match *self {
            AnalyticRegion::Box { bounds } => bounds.contains(x),
            AnalyticRegion::Ball { center, radius } => dist(x, &center) <= radius,
            AnalyticRegion::Shell {
                center,
                r_inner,
                r_outer,
            } => {
                let d = dist(x, &center);
                d >= r_inner && d <= r_outer
            }
            AnalyticRegion::Frustum {
                r_bottom,
                r_top,
                height,
            } => {
                let h = 0.5 * height;
                if x[2] < -h || x[2] > h {
                    return false;
                }
                let t = (x[2] + h) / height;
                let r = r_bottom + t * (r_top - r_bottom);
                (x[0] * x[0] + x[1] * x[1]).sqrt() <= r
            }
        }
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Orthogonal Newton projection settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    /// Convergence threshold on `|f|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Maximum displacement of a single Newton step.
    pub step_cap: f64,
    /// Depth of standalone binary-search sampling.
    pub bisection_depth: usize,
    /// Depth of the binary search that seeds Newton refinement during resampling.
    pub seed_depth: usize,
    /// Points with `‖∇f‖` below this are flagged non-converged.
    pub gradient_floor: f64,
}

impl ProjectionConfig {
    /// Defaults with the step cap set to a tenth of half the box diagonal.
    pub fn for_bounds(bounds: &Bounds) -> Self {
        Self {
            step_cap: 0.05 * bounds.diagonal(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.step_cap > 0.0) {
            return Err(ShapeError::InvalidArgument(format!(
                "invalid projection config {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 50,
            step_cap: 0.05 * Bounds::cube(1.0).diagonal(),
            bisection_depth: 20,
            seed_depth: 12,
            gradient_floor: 1e-8,
        }
    }
}

/// Surface samples closer than `radius` to any of `curves` are dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceExclusion {
    pub curves: Vec<InterfaceCurve>,
    pub radius: f64,
}

/// Where a loss term's points come from.
#[derive(Clone, Debug)]
pub enum Domain {
    /// Uniform in a box.
    Box(Bounds),
    /// Uniform in a box minus an analytic region (design-region complement).
    Rejection { bounds: Bounds, exclude: AnalyticRegion },
    /// Uniform in curve parameter, cycling over the curves.
    Interface(Vec<InterfaceCurve>),
    /// Zero level set of the current field inside a box.
    LevelSet {
        bounds: Bounds,
        projection: ProjectionConfig,
        exclusion: Option<SurfaceExclusion>,
    },
    /// Points and normals of a loaded cloud.
    PointCloud(Arc<OrientedPointCloud>),
}

#[derive(Clone, Debug)]
pub struct SamplerHandle {
    pub domain: Domain,
    /// Mixed into every random stream this sampler draws.
    pub rng_seed: u64,
}

impl SamplerHandle {
    pub fn new(domain: Domain, rng_seed: u64) -> Self {
        Self { domain, rng_seed }
    }

    pub fn boxed(bounds: Bounds, rng_seed: u64) -> Self {
        Self::new(Domain::Box(bounds), rng_seed)
    }

    pub fn is_level_set(&self) -> bool {
        matches!(self.domain, Domain::LevelSet { .. })
    }
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, iteration, term, sampler seed)`.
pub fn stream_rng(seed: u64, iteration: usize, term: usize, sampler_seed: u64) -> ChaCha8Rng {
    let s = mix(mix(mix(seed) ^ iteration as u64) ^ (term as u64).wrapping_mul(0x1000_0001) ^ mix(sampler_seed));
    ChaCha8Rng::seed_from_u64(s)
}

/// `n` i.i.d. uniform points in `bounds`.
pub fn sample_box(bounds: &Bounds, n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| bounds.draw(&mut rng)).collect()
}

fn sample_rejection<R: Rng>(
    bounds: &Bounds,
    exclude: &AnalyticRegion,
    n: usize,
    rng: &mut R,
) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::with_capacity(n);
    let max_draws = 1000 * n.max(1);
    let mut draws = 0;
    while out.len() < n {
        if draws >= max_draws {
            return Err(ShapeError::InvalidArgument(
                "rejection region covers (almost) the whole box".into(),
            ));
        }
        draws += 1;
        let x = bounds.draw(rng);
        if !exclude.contains(&x) {
            out.push(x);
        }
    }
    Ok(out)
}

/// Level-set sampling statistics of one term at one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceDiagnostics {
    pub term: usize,
    pub requested: usize,
    /// Seeds handed to Newton refinement.
    pub seeded: usize,
    /// Seeds that converged to `|f| <= tol` inside the box.
    pub converged: usize,
    /// Mean of the unscaled squared residual over the surface samples.
    pub mean_sq_residual: f64,
}

/// All batches drawn for one iteration.
#[derive(Clone, Debug)]
pub struct IterationBatches {
    pub iteration: usize,
    pub batches: Vec<TermBatch>,
    pub surface: Vec<SurfaceDiagnostics>,
}

/// Draw fresh batches for every term at the current field.
///
/// Fixed domains get new uniform draws; level-set terms are re-projected
/// onto the current zero level set and treated as fixed for the step.
pub fn resample_iteration<F: ScalarField>(
    terms: &[LossTerm],
    field: &F,
    seed: u64,
    iteration: usize,
    opts: &ResidualOptions,
) -> Result<IterationBatches> {
    let mut batches = Vec::with_capacity(terms.len());
    let mut surface = Vec::new();
    for (ti, term) in terms.iter().enumerate() {
        let mut rng = stream_rng(seed, iteration, ti, term.domain.rng_seed);
        let n = term.n_samples;
        let mut points: Vec<Sample> = match &term.domain.domain {
            Domain::Box(b) => (0..n).map(|_| Sample::at(b.draw(&mut rng))).collect(),
            Domain::Rejection { bounds, exclude } => sample_rejection(bounds, exclude, n, &mut rng)?
                .into_iter()
                .map(Sample::at)
                .collect(),
            Domain::Interface(curves) => {
                if curves.is_empty() {
                    return Err(ShapeError::InvalidArgument("interface without curves".into()));
                }
                (0..n)
                    .map(|j| {
                        let c = &curves[j % curves.len()];
                        Sample::at(c.point(rng.gen::<f64>()))
                    })
                    .collect()
            }
            Domain::PointCloud(cloud) => {
                let m = cloud.points.len();
                if m == 0 {
                    return Err(ShapeError::EmptySet);
                }
                let idx: Vec<usize> = if n >= m {
                    (0..m).collect()
                } else {
                    let mut v = index::sample(&mut rng, m, n).into_vec();
                    v.sort_unstable();
                    v
                };
                idx.into_iter()
                    .map(|i| Sample {
                        x: cloud.points[i],
                        meta: PointMeta {
                            normal: Some(cloud.normals[i]),
                            ..Default::default()
                        },
                    })
                    .collect()
            }
            Domain::LevelSet {
                bounds,
                projection,
                exclusion,
            } => {
                let res = sample_level_set(field, bounds, n, projection, exclusion.as_ref(), &mut rng)?;
                if res.points.is_empty() {
                    return Err(ShapeError::EmptySurface { term: ti });
                }
                let pts: Vec<Sample> = res.points.iter().map(|&x| Sample::at(x)).collect();
                let mut sum = 0.0;
                for s in &pts {
                    let jet = field.try_jet2(&s.x)?;
                    let (v, m) = residual_at(term.kind, &jet, &s.x, &s.meta, opts)?.as_array();
                    sum += v[..m].iter().map(|a| a * a).sum::<f64>();
                }
                surface.push(SurfaceDiagnostics {
                    term: ti,
                    requested: n,
                    seeded: res.seeded,
                    converged: pts.len(),
                    mean_sq_residual: sum / pts.len() as f64,
                });
                pts
            }
        };
        if let Some(target) = &term.target {
            for s in &mut points {
                s.meta.target = Some(target.sdf(&s.x)?);
            }
        }
        batches.push(TermBatch {
            term: ti,
            iteration,
            points,
        });
    }
    Ok(IterationBatches {
        iteration,
        batches,
        surface,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::AffineField;
    use crate::residuals::ResidualKind;

    #[test]
    fn box_samples_inside_and_reproducible() {
        let b = Bounds::unit();
        let a = sample_box(&b, 500, 3);
        assert!(a.iter().all(|x| b.contains(x)));
        assert_eq!(a, sample_box(&b, 500, 3));
        assert_ne!(a, sample_box(&b, 500, 4));
    }

    #[test]
    fn box_sample_mean_within_clt_bound() {
        // sd of a U(0,1) mean over 1e4 draws is 0.2887/100; 3 sigma < 0.01
        let pts = sample_box(&Bounds::unit(), 10_000, 17);
        for k in 0..3 {
            let m: f64 = pts.iter().map(|x| x[k]).sum::<f64>() / pts.len() as f64;
            assert!((m - 0.5).abs() < 0.02, "axis {k}: {m}");
        }
    }

    #[test]
    fn rejection_points_avoid_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let region = AnalyticRegion::Ball { center: [0.0; 3], radius: 0.8 };
        let pts = sample_rejection(&Bounds::cube(1.0), &region, 200, &mut rng).unwrap();
        assert!(pts.iter().all(|x| !region.contains(x)));
        let all = AnalyticRegion::Box { bounds: Bounds::cube(2.0) };
        assert!(sample_rejection(&Bounds::cube(1.0), &all, 5, &mut rng).is_err());
    }

    #[test]
    fn fixed_box_batches_change_with_iteration() {
        let term = LossTerm::new(ResidualKind::Eikonal, 1.0, SamplerHandle::boxed(Bounds::cube(1.0), 0), 16).unwrap();
        let f = AffineField::plane_z();
        let o = ResidualOptions::default();
        let a = resample_iteration(std::slice::from_ref(&term), &f, 1, 0, &o).unwrap();
        let b = resample_iteration(std::slice::from_ref(&term), &f, 1, 1, &o).unwrap();
        let a2 = resample_iteration(std::slice::from_ref(&term), &f, 1, 0, &o).unwrap();
        assert_ne!(a.batches[0].points, b.batches[0].points);
        assert_eq!(a.batches[0].points, a2.batches[0].points);
        assert_eq!(b.batches[0].iteration, 1);
    }

    #[test]
    fn constant_field_has_empty_surface() {
        let bounds = Bounds::cube(1.0);
        let term = LossTerm::new(
            ResidualKind::MeanCurvature,
            1.0,
            SamplerHandle::new(
                Domain::LevelSet { bounds, projection: ProjectionConfig::for_bounds(&bounds), exclusion: None },
                0,
            ),
            32,
        )
        .unwrap();
        let f = AffineField { a: [0.0; 3], c: 1.0 };
        let err = resample_iteration(&[term], &f, 0, 0, &ResidualOptions::default()).unwrap_err();
        assert!(matches!(err, ShapeError::EmptySurface { term: 0 }));
    }
}

use std::sync::Arc;

use super::config::{ExperimentConfig, TaskKind};
use crate::error::{Result, ShapeError};
use crate::geomio::{load_point_cloud, AnalyticSurface, InterfaceCurve, OrientedPointCloud, ReferenceSurface};
use crate::residuals::{LossTerm, ResidualKind};
use crate::sampling::{AnalyticRegion, Bounds, Domain, SamplerHandle, SurfaceExclusion};

/// Ground truth used for `chamfer.csv`.
#[derive(Clone, Debug)]
pub enum GroundTruth {
    /// Distance from projected surface samples inside `bounds` to an analytic surface.
    Analytic { reference: Arc<ReferenceSurface>, bounds: Bounds },
    /// One-sided chamfer from the surface samples to the cloud points.
    Cloud(Arc<OrientedPointCloud>),
}

/// Loss terms and geometry of a resolved experiment.
#[derive(Clone, Debug)]
pub struct TaskSetup {
    pub bounds: Bounds,
    pub terms: Vec<LossTerm>,
    pub curves: Vec<InterfaceCurve>,
    pub pretrain_target: AnalyticSurface,
    pub ground_truth: Option<GroundTruth>,
}

impl TaskSetup {
    /// Residual kinds present, in canonical order (one CSV column each).
    pub fn kinds(&self) -> Vec<ResidualKind> {
        ResidualKind::ALL
            .iter()
            .copied()
            .filter(|k| self.terms.iter().any(|t| t.kind == *k))
            .collect()
    }

    /// Index of the first level-set term, if any.
    pub fn surface_term(&self) -> Option<usize> {
        self.terms.iter().position(|t| t.domain.is_level_set())
    }
}

fn circle(z: f64, r: f64) -> InterfaceCurve {
    InterfaceCurve::Circle {
        center: [0.0, 0.0, z],
        radius: r,
    }
}

/// Build the loss terms of a resolved config.
pub fn build_task(cfg: &ExperimentConfig) -> Result<TaskSetup> {
    let g = &cfg.geometry;
    let get = |v: Option<f64>, name: &str| {
        v.ok_or_else(|| ShapeError::Config(format!("geometry.{name} unresolved; call resolve() first")))
    };
    let h = get(g.box_half_width, "box_half_width")?;
    let bounds = Bounds::cube(h);
    let proj = cfg
        .projection
        .ok_or_else(|| ShapeError::Config("projection unresolved".into()))?;
    let n_surface = cfg.samples.surface.unwrap_or(512);
    let n_interface = cfg.samples.interface.unwrap_or(512);
    let n_volume = cfg.samples.volume.unwrap_or(1024);
    let pretrain_target = cfg
        .pretrain
        .target
        .ok_or_else(|| ShapeError::Config("pretrain.target unresolved".into()))?;
    let seed = cfg.seed;
    let level_set = |exclusion: Option<SurfaceExclusion>, stream: u64| {
        SamplerHandle::new(
            Domain::LevelSet {
                bounds,
                projection: proj,
                exclusion,
            },
            seed ^ stream,
        )
    };
    let term = |kind: ResidualKind, domain: SamplerHandle, n: usize| LossTerm::new(kind, cfg.weight(kind), domain, n);
    let eikonal = |terms: &mut Vec<LossTerm>| -> Result<()> {
        if cfg.eikonal_weight.unwrap_or(0.0) > 0.0 || cfg.weights.contains_key(&ResidualKind::Eikonal) {
            terms.push(term(ResidualKind::Eikonal, SamplerHandle::boxed(bounds, seed ^ 3), n_volume)?);
        }
        Ok(())
    };
    let mut terms = Vec::new();
    let (curves, ground_truth) = match cfg.task {
        TaskKind::Catenoid => {
            let c = get(g.catenoid_c, "catenoid_c")?;
            let zh = get(g.catenoid_h, "catenoid_h")?;
            let r = c * (zh / c).cosh();
            let curves = vec![circle(-zh, r), circle(zh, r)];
            terms.push(term(
                ResidualKind::Interface,
                SamplerHandle::new(Domain::Interface(curves.clone()), seed ^ 1),
                n_interface,
            )?);
            terms.push(term(ResidualKind::MeanCurvature, level_set(None, 2), n_surface)?);
            eikonal(&mut terms)?;
            let reference = ReferenceSurface::new(AnalyticSurface::Catenoid { c })?;
            let slab = Bounds::new([-h, -h, -zh], [h, h, zh])?;
            (
                curves,
                Some(GroundTruth::Analytic {
                    reference: Arc::new(reference),
                    bounds: slab,
                }),
            )
        }
        TaskKind::Enneper => {
            let r0 = get(g.enneper_r0, "enneper_r0")?;
            let curves = vec![InterfaceCurve::EnneperBoundary { r0 }];
            terms.push(term(
                ResidualKind::Interface,
                SamplerHandle::new(Domain::Interface(curves.clone()), seed ^ 1),
                n_interface,
            )?);
            terms.push(term(ResidualKind::MeanCurvature, level_set(None, 2), n_surface)?);
            eikonal(&mut terms)?;
            let rr = get(g.enneper_reference_r, "enneper_reference_r")?;
            let reference = ReferenceSurface::new(AnalyticSurface::Enneper { r0: rr })?;
            (
                curves,
                Some(GroundTruth::Analytic {
                    reference: Arc::new(reference),
                    bounds,
                }),
            )
        }
        TaskKind::Cone => {
            let (rb, rt, ht) = (
                get(g.cone_r_bottom, "cone_r_bottom")?,
                get(g.cone_r_top, "cone_r_top")?,
                get(g.cone_height, "cone_height")?,
            );
            let curves = vec![circle(-0.5 * ht, rb), circle(0.5 * ht, rt)];
            terms.push(term(
                ResidualKind::Interface,
                SamplerHandle::new(Domain::Interface(curves.clone()), seed ^ 1),
                n_interface,
            )?);
            terms.push(term(ResidualKind::GaussCurvature, level_set(None, 2), n_surface)?);
            eikonal(&mut terms)?;
            let surface = AnalyticSurface::ConeFrustum {
                r_bottom: rb,
                r_top: rt,
                height: ht,
            };
            let slab = Bounds::new([-h, -h, -0.5 * ht], [h, h, 0.5 * ht])?;
            (
                curves,
                Some(GroundTruth::Analytic {
                    reference: Arc::new(ReferenceSurface::new(surface)?),
                    bounds: slab,
                }),
            )
        }
        TaskKind::PointCloudFit => {
            let path = g
                .point_cloud
                .as_ref()
                .ok_or_else(|| ShapeError::Config("geometry.point_cloud is required".into()))?;
            let cloud = Arc::new(load_point_cloud(path)?);
            let handle = SamplerHandle::new(Domain::PointCloud(cloud.clone()), seed ^ 1);
            terms.push(term(ResidualKind::Interface, handle.clone(), n_surface)?);
            terms.push(term(ResidualKind::Normal, handle, n_surface)?);
            eikonal(&mut terms)?;
            (Vec::new(), Some(GroundTruth::Cloud(cloud)))
        }
        TaskKind::StrainDemo => {
            let (zr, rr, er) = (
                get(g.strain_ring_z, "strain_ring_z")?,
                get(g.strain_ring_radius, "strain_ring_radius")?,
                get(g.strain_region_radius, "strain_region_radius")?,
            );
            let curves = vec![circle(-zr, rr), circle(zr, rr)];
            let region = AnalyticRegion::Ball {
                center: [0.0; 3],
                radius: er,
            };
            terms.push(term(
                ResidualKind::DesignRegion,
                SamplerHandle::new(
                    Domain::Rejection {
                        bounds,
                        exclude: region,
                    },
                    seed ^ 4,
                ),
                n_volume,
            )?);
            terms.push(term(
                ResidualKind::Interface,
                SamplerHandle::new(Domain::Interface(curves.clone()), seed ^ 1),
                n_interface,
            )?);
            eikonal(&mut terms)?;
            let ex = get(g.strain_exclusion_radius, "strain_exclusion_radius")?;
            let exclusion = (ex > 0.0).then(|| SurfaceExclusion {
                curves: curves.clone(),
                radius: ex,
            });
            terms.push(term(ResidualKind::SurfaceStrain, level_set(exclusion, 2), n_surface)?.with_clip(g.strain_cap));
            (curves, None)
        }
    };
    Ok(TaskSetup {
        bounds,
        terms,
        curves,
        pretrain_target,
        ground_truth,
    })
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapeError};
use crate::field::{Activation, FieldSpec};
use crate::geomio::AnalyticSurface;
use crate::optim::{GnConfig, GnSolver, LrSchedule, StepRule};
use crate::residuals::{ResidualKind, ResidualOptions};
use crate::sampling::ProjectionConfig;

/// Environment variable that, when set, prefixes relative output directories.
pub const OUT_ROOT_ENV: &str = "SHAPEGN_OUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Catenoid,
    Enneper,
    Cone,
    PointCloudFit,
    StrainDemo,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Catenoid => "catenoid",
            TaskKind::Enneper => "enneper",
            TaskKind::Cone => "cone",
            TaskKind::PointCloudFit => "point_cloud_fit",
            TaskKind::StrainDemo => "strain_demo",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    GaussNewton {
        epsilon: Option<f64>,
        solver: Option<GnSolver>,
        step: Option<StepRule>,
    },
    Adam {
        lr: Option<f64>,
        schedule: Option<LrSchedule>,
    },
    Lbfgs {
        history: Option<usize>,
        reset_on_resample: Option<bool>,
    },
}

impl OptimizerConfig {
    /// Parse `gn`, `adam`, `lbfgs` or `lbfgs-reset` into a config with task defaults pending.
    pub fn from_name(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "gn" | "gauss_newton" | "gauss-newton" => Ok(OptimizerConfig::GaussNewton {
                epsilon: None,
                solver: None,
                step: None,
            }),
            "adam" => Ok(OptimizerConfig::Adam { lr: None, schedule: None }),
            "lbfgs" => Ok(OptimizerConfig::Lbfgs {
                history: None,
                reset_on_resample: None,
            }),
            "lbfgs-reset" | "lbfgs_reset" => Ok(OptimizerConfig::Lbfgs {
                history: None,
                reset_on_resample: Some(true),
            }),
            other => Err(ShapeError::Config(format!("unknown optimizer '{other}'"))),
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            OptimizerConfig::GaussNewton { .. } => "gn",
            OptimizerConfig::Adam { .. } => "adam",
            OptimizerConfig::Lbfgs {
                reset_on_resample: Some(true),
                ..
            } => "lbfgs-reset",
            OptimizerConfig::Lbfgs { .. } => "lbfgs",
        }
    }

    /// `GnConfig` of a resolved Gauss-Newton config.
    pub fn gn(&self) -> Option<GnConfig> {
        match *self {
            OptimizerConfig::GaussNewton { epsilon, solver, step } => {
                let d = GnConfig::default();
                Some(GnConfig {
                    epsilon: epsilon.unwrap_or(d.epsilon),
                    solver: solver.unwrap_or(d.solver),
                    step: step.unwrap_or(d.step),
                })
            }
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    pub enabled: Option<bool>,
    pub target: Option<AnalyticSurface>,
    pub iters: Option<usize>,
    pub n_samples: Option<usize>,
    pub threshold: Option<f64>,
}

/// Points drawn per term per iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleCounts {
    pub surface: Option<usize>,
    pub interface: Option<usize>,
    pub volume: Option<usize>,
}

/// Task geometry parameters; unset values take task defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// Half-width `h` of the sampling box `[-h, h]^3`.
    pub box_half_width: Option<f64>,
    pub catenoid_c: Option<f64>,
    /// Height of the catenoid boundary circles at `z = ±catenoid_h`.
    pub catenoid_h: Option<f64>,
    pub enneper_r0: Option<f64>,
    /// Parameter radius of the Enneper patch used as chamfer ground truth.
    pub enneper_reference_r: Option<f64>,
    pub cone_r_bottom: Option<f64>,
    pub cone_r_top: Option<f64>,
    pub cone_height: Option<f64>,
    pub point_cloud: Option<PathBuf>,
    /// Design-region ball radius of the strain demo.
    pub strain_region_radius: Option<f64>,
    /// Interface ring height and radius of the strain demo.
    pub strain_ring_z: Option<f64>,
    pub strain_ring_radius: Option<f64>,
    /// Cap on the per-point strain energy; absent means no clipping.
    pub strain_cap: Option<f64>,
    /// Strain samples closer than this to an interface ring are dropped.
    pub strain_exclusion_radius: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub chamfer_every: Option<usize>,
    pub chamfer_samples: Option<usize>,
    /// Points written to the surface PLY files.
    pub ply_samples: Option<usize>,
}

/// Everything needed to run one experiment.
///
/// Optional fields are filled with task defaults by [`ExperimentConfig::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_iters")]
    pub iters: usize,
    pub time_budget_s: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub eikonal_weight: Option<f64>,
    pub field: Option<FieldSpec>,
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub samples: SampleCounts,
    #[serde(default)]
    pub geometry: GeometryConfig,
    /// Per-kind weight overrides (`λ̃`, domain measure folded in).
    #[serde(default)]
    pub weights: BTreeMap<ResidualKind, f64>,
    #[serde(default)]
    pub residual: ResidualOptions,
    pub projection: Option<ProjectionConfig>,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

fn default_iters() -> usize {
    300
}

impl ExperimentConfig {
    pub fn new(task: TaskKind) -> Self {
        Self {
            task,
            seed: 0,
            iters: default_iters(),
            time_budget_s: None,
            output_dir: None,
            eikonal_weight: None,
            field: None,
            optimizer: None,
            pretrain: PretrainSection::default(),
            samples: SampleCounts::default(),
            geometry: GeometryConfig::default(),
            weights: BTreeMap::new(),
            residual: ResidualOptions::default(),
            projection: None,
            metrics: MetricsConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ShapeError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        // relative point-cloud paths are relative to the config file
        if let (Some(p), Some(dir)) = (&cfg.geometry.point_cloud, path.parent()) {
            if p.is_relative() {
                cfg.geometry.point_cloud = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ShapeError::Config(e.to_string()))
    }

    /// Fill all task-dependent defaults and validate.
    pub fn resolve(&self) -> Result<Self> {
        let mut c = self.clone();
        let t = c.task;
        if c.iters == 0 {
            return Err(ShapeError::Config("iters must be >= 1".into()));
        }
        if let Some(b) = c.time_budget_s {
            if !(b > 0.0) {
                return Err(ShapeError::Config("time_budget_s must be positive".into()));
            }
        }
        c.output_dir.get_or_insert_with(|| PathBuf::from("runs").join(t.name()));
        c.eikonal_weight.get_or_insert(match t {
            TaskKind::PointCloudFit => 0.1,
            TaskKind::StrainDemo => 1.0,
            _ => 0.01,
        });
        if t == TaskKind::StrainDemo {
            // bracket weighting: constraints dominate, strain is a small objective
            for (k, w) in [
                (ResidualKind::SurfaceStrain, 1e-4),
                (ResidualKind::Interface, 10.0),
                (ResidualKind::DesignRegion, 1e3),
            ] {
                c.weights.entry(k).or_insert(w);
            }
        }
        if !(c.eikonal_weight.unwrap() >= 0.0) {
            return Err(ShapeError::Config("eikonal_weight must be >= 0".into()));
        }
        let field = c.field.take().unwrap_or_else(|| match t {
            TaskKind::PointCloudFit => FieldSpec {
                layer_widths: vec![3, 32, 32, 32, 1],
                activation: Activation::Sine { omega: 30.0 },
                init_seed: 0,
            },
            _ => FieldSpec {
                layer_widths: vec![3, 32, 32, 1],
                activation: Activation::Tanh,
                init_seed: 0,
            },
        });
        field.validate()?;
        c.field = Some(field);

        let g = &mut c.geometry;
        let h = *g.box_half_width.get_or_insert(match t {
            TaskKind::Enneper => 1.25,
            _ => 1.0,
        });
        if !(h > 0.0) {
            return Err(ShapeError::Config("box_half_width must be positive".into()));
        }
        match t {
            TaskKind::Catenoid => {
                g.catenoid_c.get_or_insert(0.5);
                g.catenoid_h.get_or_insert(0.5);
            }
            TaskKind::Enneper => {
                g.enneper_r0.get_or_insert(0.9);
                g.enneper_reference_r.get_or_insert(1.5);
            }
            TaskKind::Cone => {
                g.cone_r_bottom.get_or_insert(0.8);
                g.cone_r_top.get_or_insert(0.4);
                g.cone_height.get_or_insert(1.2);
            }
            TaskKind::PointCloudFit => {
                if g.point_cloud.is_none() {
                    return Err(ShapeError::Config("point_cloud_fit needs geometry.point_cloud".into()));
                }
            }
            TaskKind::StrainDemo => {
                g.strain_region_radius.get_or_insert(0.8);
                g.strain_ring_z.get_or_insert(0.3);
                g.strain_ring_radius.get_or_insert(0.4);
                g.strain_exclusion_radius.get_or_insert(0.0);
            }
        }

        let opt = c.optimizer.take().unwrap_or(OptimizerConfig::GaussNewton {
            epsilon: None,
            solver: None,
            step: None,
        });
        c.optimizer = Some(match opt {
            OptimizerConfig::GaussNewton { epsilon, solver, step } => {
                let step = step.unwrap_or(match t {
                    TaskKind::PointCloudFit | TaskKind::StrainDemo => StepRule::LogLineSearch {
                        eta_min: 1e-3,
                        eta_max: 1.0,
                        count: 10,
                    },
                    _ => StepRule::Fixed { eta: 0.1 },
                });
                let gn = GnConfig {
                    epsilon: epsilon.unwrap_or(if t == TaskKind::StrainDemo { 1e-7 } else { 1e-6 }),
                    solver: solver.unwrap_or(GnSolver::Dense),
                    step,
                };
                gn.validate()?;
                OptimizerConfig::GaussNewton {
                    epsilon: Some(gn.epsilon),
                    solver: Some(gn.solver),
                    step: Some(gn.step),
                }
            }
            OptimizerConfig::Adam { lr, schedule } => {
                let lr = lr.unwrap_or(match t {
                    TaskKind::Cone => 1e-4,
                    _ => 1e-3,
                });
                if !(lr > 0.0) {
                    return Err(ShapeError::Config("Adam lr must be positive".into()));
                }
                OptimizerConfig::Adam {
                    lr: Some(lr),
                    schedule: Some(schedule.unwrap_or(match t {
                        TaskKind::PointCloudFit => LrSchedule::Cosine { lr_min: 0.0 },
                        _ => LrSchedule::Constant,
                    })),
                }
            }
            OptimizerConfig::Lbfgs {
                history,
                reset_on_resample,
            } => OptimizerConfig::Lbfgs {
                history: Some(history.unwrap_or(10).max(1)),
                reset_on_resample: Some(reset_on_resample.unwrap_or(false)),
            },
        });

        let p = &mut c.pretrain;
        p.enabled.get_or_insert(true);
        p.iters.get_or_insert(100);
        p.n_samples.get_or_insert(1024);
        p.threshold.get_or_insert(1e-7);
        let g = &c.geometry;
        p.target.get_or_insert(match t {
            TaskKind::Catenoid => {
                let (cc, hh) = (g.catenoid_c.unwrap(), g.catenoid_h.unwrap());
                AnalyticSurface::Cylinder {
                    r: 0.5 * (cc + cc * (hh / cc).cosh()),
                }
            }
            TaskKind::Enneper => AnalyticSurface::Plane,
            TaskKind::Cone => AnalyticSurface::Cylinder {
                r: 0.5 * (g.cone_r_bottom.unwrap() + g.cone_r_top.unwrap()),
            },
            TaskKind::PointCloudFit => AnalyticSurface::Sphere { r: 0.6 },
            // the cylinder through the rings leaves the design region, so the
            // constraints have to close it off
            TaskKind::StrainDemo => AnalyticSurface::Cylinder {
                r: g.strain_ring_radius.unwrap(),
            },
        });

        let s = &mut c.samples;
        s.surface.get_or_insert(512);
        s.interface.get_or_insert(512);
        s.volume.get_or_insert(1024);
        if s.surface == Some(0) || s.interface == Some(0) || s.volume == Some(0) {
            return Err(ShapeError::Config("sample counts must be >= 1".into()));
        }

        for (k, w) in &c.weights {
            if !(*w > 0.0 && w.is_finite()) {
                return Err(ShapeError::Config(format!("weight for {} must be positive", k.name())));
            }
        }
        let proj = c
            .projection
            .unwrap_or_else(|| ProjectionConfig::for_bounds(&crate::sampling::Bounds::cube(h)));
        proj.validate()?;
        c.projection = Some(proj);

        let m = &mut c.metrics;
        m.chamfer_every.get_or_insert(25);
        m.chamfer_samples.get_or_insert(512);
        m.ply_samples.get_or_insert(2048);
        if m.chamfer_every == Some(0) {
            return Err(ShapeError::Config("chamfer_every must be >= 1".into()));
        }
        Ok(c)
    }

    /// Output directory with the root override applied.
    pub fn output_path(&self) -> PathBuf {
        let dir = self
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(self.task.name()));
        match std::env::var_os(OUT_ROOT_ENV) {
            Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
            _ => dir,
        }
    }

    pub fn weight(&self, kind: ResidualKind) -> f64 {
        if let Some(w) = self.weights.get(&kind) {
            return *w;
        }
        if kind == ResidualKind::Eikonal {
            self.eikonal_weight.unwrap_or(0.01)
        } else {
            1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_resolves() {
        let c = ExperimentConfig::from_toml_str("task = \"catenoid\"").unwrap();
        let r = c.resolve().unwrap();
        assert_eq!(r.iters, 300);
        assert_eq!(r.field.as_ref().unwrap().layer_widths, vec![3, 32, 32, 1]);
        let gn = r.optimizer.unwrap().gn().unwrap();
        assert_eq!(gn.epsilon, 1e-6);
        assert_eq!(gn.step, StepRule::Fixed { eta: 0.1 });
        // resolved config parses back to itself
        let text = r.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), r);
        assert_eq!(r.resolve().unwrap(), r);
    }

    #[test]
    fn dotted_keys_and_task_defaults() {
        let text = "task = \"cone\"\niters = 5\noptimizer.kind = \"adam\"\nsamples.surface = 64\nweights.interface = 2.0\n";
        let r = ExperimentConfig::from_toml_str(text).unwrap().resolve().unwrap();
        assert_eq!(r.optimizer, Some(OptimizerConfig::Adam { lr: Some(1e-4), schedule: Some(LrSchedule::Constant) }));
        assert_eq!(r.samples.surface, Some(64));
        assert_eq!(r.weight(ResidualKind::Interface), 2.0);
        assert_eq!(r.weight(ResidualKind::GaussCurvature), 1.0);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml_str("task = \"torus\"").is_err());
        assert!(ExperimentConfig::from_toml_str("task = \"cone\"\nbogus = 1").is_err());
        let c = ExperimentConfig::from_toml_str("task = \"cone\"\niters = 0").unwrap();
        assert!(c.resolve().is_err());
        let c = ExperimentConfig::from_toml_str("task = \"point_cloud_fit\"").unwrap();
        assert!(c.resolve().is_err());
    }
}

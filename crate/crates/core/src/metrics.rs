//! Chamfer divergence against ground truth and CSV loss logging.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, ShapeError};
use crate::field::ScalarField;
use crate::geomio::ReferenceSurface;
use crate::residuals::ResidualKind;
use crate::sampling::{sample_level_set, Bounds, ProjectionConfig};

fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// `CD₁(P, Q) = sqrt(mean over x in Q of min over y in P of ‖x - y‖²)`.
pub fn chamfer_one_sided(p: &[[f64; 3]], q: &[[f64; 3]]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(ShapeError::EmptySet);
    }
    let mins: Vec<f64> = q
        .par_iter()
        .map(|x| p.iter().map(|y| sq_dist(x, y)).fold(f64::INFINITY, f64::min))
        .collect();
    Ok((mins.iter().sum::<f64>() / q.len() as f64).sqrt())
}

/// RMS distance from `n` projected samples of `Γ(θ)` inside `bounds` to the reference.
pub fn chamfer_projected<F: ScalarField>(
    field: &F,
    reference: &ReferenceSurface,
    n: usize,
    seed: u64,
    bounds: &Bounds,
    projection: &ProjectionConfig,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = sample_level_set(field, bounds, n, projection, None, &mut rng)?.points;
    if pts.is_empty() {
        return Err(ShapeError::EmptySurface { term: 0 });
    }
    let d2: Vec<f64> = pts.par_iter().map(|x| reference.distance(x).powi(2)).collect();
    Ok((d2.iter().sum::<f64>() / d2.len() as f64).sqrt())
}

/// One row of `loss.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub wall_time_s: f64,
    pub total_loss: f64,
    pub per_term_losses: Vec<(ResidualKind, f64)>,
    pub eta: f64,
    pub solver_iters: usize,
}

/// Format a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Header `iter,wall_time_s,total_loss,<kinds>,eta,solver_iters`.
pub fn loss_header(kinds: &[ResidualKind]) -> String {
    let mut h = String::from("iter,wall_time_s,total_loss");
    for k in kinds {
        h.push(',');
        h.push_str(k.name());
    }
    h.push_str(",eta,solver_iters");
    h
}

/// Append-only CSV writer flushed after every row.
pub struct CsvSink {
    out: BufWriter<File>,
    kinds: Vec<ResidualKind>,
}

impl CsvSink {
    pub fn create(path: &Path, kinds: &[ResidualKind]) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", loss_header(kinds))?;
        out.flush()?;
        Ok(Self {
            out,
            kinds: kinds.to_vec(),
        })
    }

    pub fn log_record(&mut self, rec: &LossRecord) -> Result<()> {
        let mut line = format!("{},{},{}", rec.iteration, fmt_f64(rec.wall_time_s), fmt_f64(rec.total_loss));
        for k in &self.kinds {
            let v = rec
                .per_term_losses
                .iter()
                .filter(|(kk, _)| kk == k)
                .map(|(_, v)| *v)
                .sum::<f64>();
            line.push(',');
            line.push_str(&fmt_f64(v));
        }
        line.push(',');
        line.push_str(&fmt_f64(rec.eta));
        line.push(',');
        line.push_str(&rec.solver_iters.to_string());
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Parsed CSV table: header plus rows of raw fields.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut lines = BufReader::new(File::open(path)?).lines();
        let header = match lines.next() {
            Some(h) => h?.split(',').map(str::to_string).collect(),
            None => {
                return Err(ShapeError::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: "empty CSV".into(),
                })
            }
        };
        let mut rows = Vec::new();
        for l in lines {
            let l = l?;
            if !l.is_empty() {
                rows.push(l.split(',').map(str::to_string).collect());
            }
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric values of a column; unparsable fields become NaN.
    pub fn values(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column(name)?;
        Some(
            self.rows
                .iter()
                .map(|r| r.get(c).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomio::{AnalyticSurface, SurfaceField};

    #[test]
    fn chamfer_trivial_cases() {
        let p = [[0.0, 0.0, 0.0]];
        assert_eq!(chamfer_one_sided(&p, &[[1.0, 0.0, 0.0]]).unwrap(), 1.0);
        let q = [[0.1, 0.2, 0.3], [1.0, 2.0, 3.0]];
        assert_eq!(chamfer_one_sided(&q, &q).unwrap(), 0.0);
        assert!(chamfer_one_sided(&[], &q).is_err());
        assert!(chamfer_one_sided(&q, &[]).is_err());
    }

    #[test]
    fn projected_chamfer_of_spheres() {
        let b = Bounds::cube(1.5);
        let cfg = ProjectionConfig::for_bounds(&b);
        let reference = ReferenceSurface::new(AnalyticSurface::Sphere { r: 1.0 }).unwrap();
        let same = SurfaceField::sdf(AnalyticSurface::Sphere { r: 1.0 }).unwrap();
        assert!(chamfer_projected(&same, &reference, 200, 1, &b, &cfg).unwrap() < 1e-9);
        let bigger = SurfaceField::sdf(AnalyticSurface::Sphere { r: 1.1 }).unwrap();
        let cd = chamfer_projected(&bigger, &reference, 200, 1, &b, &cfg).unwrap();
        assert!((cd - 0.1).abs() < 1e-6);
    }

    #[test]
    fn csv_rows_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let kinds = [ResidualKind::Interface, ResidualKind::MeanCurvature];
        let mut sink = CsvSink::create(&path, &kinds).unwrap();
        let mut totals = Vec::new();
        for i in 0..10 {
            let a = 1.0 / (i as f64 + 3.0);
            let b = (i as f64).sqrt() * 1e-7;
            totals.push(a + b);
            sink.log_record(&LossRecord {
                iteration: i,
                wall_time_s: 0.1 * i as f64,
                total_loss: a + b,
                per_term_losses: vec![(ResidualKind::Interface, a), (ResidualKind::MeanCurvature, b)],
                eta: 0.1,
                solver_iters: 1,
            })
            .unwrap();
        }
        drop(sink);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 11);
        assert_eq!(
            text.lines().next().unwrap(),
            "iter,wall_time_s,total_loss,interface,mean_curvature,eta,solver_iters"
        );
        let t = CsvTable::read(&path).unwrap();
        for (v, e) in t.values("total_loss").unwrap().iter().zip(&totals) {
            assert!((v - e).abs() <= 1e-12 * e.abs());
        }
    }
}

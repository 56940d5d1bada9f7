use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Result, ShapeError};
use crate::sampling::Bounds;

/// Map from source coordinates to the normalized frame:
/// `x_norm = (x_src - center) * scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointCloudTransform {
    pub center: [f64; 3],
    pub scale: f64,
}

impl PointCloudTransform {
    pub fn to_source(&self, x: &[f64; 3]) -> [f64; 3] {
        [
            x[0] / self.scale + self.center[0],
            x[1] / self.scale + self.center[1],
            x[2] / self.scale + self.center[2],
        ]
    }
}

/// Oriented points normalized into `[-0.95, 0.95]^3`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientedPointCloud {
    pub points: Vec<[f64; 3]>,
    /// Unit normals.
    pub normals: Vec<[f64; 3]>,
    pub source: PathBuf,
    /// Bounding box of the normalized points.
    pub bounds: Bounds,
    pub transform: PointCloudTransform,
}

/// Half-width of the normalized frame.
const NORMALIZED_EXTENT: f64 = 0.95;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> ShapeError {
    ShapeError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Raw vertex data read from a file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawPoints {
    pub points: Vec<[f64; 3]>,
    pub normals: Option<Vec<[f64; 3]>>,
    /// The `quality` channel of a PLY file, if present.
    pub scalars: Option<Vec<f64>>,
}

/// Read vertices of an ASCII PLY or OBJ file without normalizing them.
pub fn read_points(path: &Path) -> Result<RawPoints> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    for l in reader.lines() {
        lines.push(l?);
    }
    let is_ply = lines.first().map(|l| l.trim() == "ply").unwrap_or(false);
    if is_ply {
        parse_ply(path, &lines)
    } else if path.extension().and_then(|e| e.to_str()).map(|e| e.eq_ignore_ascii_case("obj")) == Some(true) {
        parse_obj(path, &lines)
    } else {
        Err(parse_err(path, 1, "expected a PLY header or an .obj file"))
    }
}

fn parse_ply(path: &Path, lines: &[String]) -> Result<RawPoints> {
    struct Element {
        name: String,
        count: usize,
        props: Vec<String>,
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut body = None;
    for (i, raw) in lines.iter().enumerate().skip(1) {
        let ln = i + 1;
        let tok: Vec<&str> = raw.split_whitespace().collect();
        match tok.first().copied() {
            Some("format") => {
                if tok.get(1) != Some(&"ascii") {
                    return Err(parse_err(path, ln, "only 'format ascii 1.0' is supported"));
                }
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                if tok.len() != 3 {
                    return Err(parse_err(path, ln, "expected 'element <name> <count>'"));
                }
                let count = tok[2]
                    .parse()
                    .map_err(|_| parse_err(path, ln, format!("bad element count '{}'", tok[2])))?;
                elements.push(Element {
                    name: tok[1].to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, ln, "property before any element"))?;
                let name = if tok.get(1) == Some(&"list") {
                    tok.get(4)
                } else {
                    tok.get(2)
                };
                let name = name.ok_or_else(|| parse_err(path, ln, "incomplete property line"))?;
                el.props.push(name.to_string());
            }
            Some("end_header") => {
                body = Some(i + 1);
                break;
            }
            Some(other) => return Err(parse_err(path, ln, format!("unexpected header token '{other}'"))),
        }
    }
    let mut cursor = body.ok_or_else(|| parse_err(path, lines.len(), "missing end_header"))?;
    let mut out = RawPoints::default();
    for el in &elements {
        if el.name != "vertex" {
            cursor += el.count;
            continue;
        }
        let col = |n: &str| el.props.iter().position(|p| p == n);
        let (cx, cy, cz) = match (col("x"), col("y"), col("z")) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(parse_err(path, 1, "vertex element lacks x, y, z")),
        };
        let ncols = match (col("nx"), col("ny"), col("nz")) {
            (Some(a), Some(b), Some(c)) => Some((a, b, c)),
            _ => None,
        };
        let qcol = col("quality");
        let mut normals = Vec::new();
        let mut scalars = Vec::new();
        for k in 0..el.count {
            let ln = cursor + k + 1;
            let raw = lines
                .get(cursor + k)
                .ok_or_else(|| parse_err(path, ln, "file ends before all vertices were read"))?;
            let vals: Vec<f64> = raw
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| parse_err(path, ln, format!("bad number '{t}'"))))
                .collect::<Result<_>>()?;
            if vals.len() != el.props.len() {
                return Err(parse_err(
                    path,
                    ln,
                    format!("expected {} values, found {}", el.props.len(), vals.len()),
                ));
            }
            out.points.push([vals[cx], vals[cy], vals[cz]]);
            if let Some((a, b, c)) = ncols {
                normals.push([vals[a], vals[b], vals[c]]);
            }
            if let Some(q) = qcol {
                scalars.push(vals[q]);
            }
        }
        if ncols.is_some() {
            out.normals = Some(normals);
        }
        if qcol.is_some() {
            out.scalars = Some(scalars);
        }
        return Ok(out);
    }
    Err(parse_err(path, 1, "no vertex element"))
}

fn parse_obj(path: &Path, lines: &[String]) -> Result<RawPoints> {
    let mut out = RawPoints::default();
    let mut normals = Vec::new();
    for (i, raw) in lines.iter().enumerate() {
        let ln = i + 1;
        let mut tok = raw.split_whitespace();
        let kind = tok.next();
        if kind != Some("v") && kind != Some("vn") {
            continue;
        }
        let vals: Vec<f64> = tok
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(path, ln, format!("bad number '{t}'"))))
            .collect::<Result<_>>()?;
        if vals.len() < 3 {
            return Err(parse_err(path, ln, "expected three coordinates"));
        }
        let p = [vals[0], vals[1], vals[2]];
        if kind == Some("v") {
            out.points.push(p);
        } else {
            normals.push(p);
        }
    }
    if !normals.is_empty() {
        if normals.len() != out.points.len() {
            return Err(parse_err(
                path,
                lines.len(),
                format!("{} 'v' lines but {} 'vn' lines", out.points.len(), normals.len()),
            ));
        }
        out.normals = Some(normals);
    }
    Ok(out)
}

/// Load an oriented point cloud and normalize it into `[-0.95, 0.95]^3`.
pub fn load_point_cloud(path: &Path) -> Result<OrientedPointCloud> {
    let raw = read_points(path)?;
    if raw.points.is_empty() {
        return Err(ShapeError::EmptySet);
    }
    let normals = raw
        .normals
        .ok_or_else(|| parse_err(path, 1, "normals are required (nx ny nz or vn)"))?;
    let mut unit = Vec::with_capacity(normals.len());
    for (k, n) in normals.iter().enumerate() {
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if !(len > 0.0 && len.is_finite()) {
            return Err(parse_err(path, 1, format!("vertex {k} has a zero or non-finite normal")));
        }
        unit.push([n[0] / len, n[1] / len, n[2] / len]);
    }
    if raw.points.iter().flatten().any(|c| !c.is_finite()) {
        return Err(parse_err(path, 1, "non-finite coordinate"));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &raw.points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])];
    let half = (0..3).map(|k| 0.5 * (hi[k] - lo[k])).fold(0.0, f64::max);
    let scale = if half > 0.0 { NORMALIZED_EXTENT / half } else { 1.0 };
    let points: Vec<[f64; 3]> = raw
        .points
        .iter()
        .map(|p| {
            [
                (p[0] - center[0]) * scale,
                (p[1] - center[1]) * scale,
                (p[2] - center[2]) * scale,
            ]
        })
        .collect();
    let mut blo = [f64::INFINITY; 3];
    let mut bhi = [f64::NEG_INFINITY; 3];
    for p in &points {
        for k in 0..3 {
            blo[k] = blo[k].min(p[k]);
            bhi[k] = bhi[k].max(p[k]);
        }
    }
    Ok(OrientedPointCloud {
        points,
        normals: unit,
        source: path.to_path_buf(),
        bounds: Bounds { min: blo, max: bhi },
        transform: PointCloudTransform { center, scale },
    })
}

/// Write an ASCII PLY with `x y z` and an optional scalar channel.
pub fn write_point_cloud(path: &Path, points: &[[f64; 3]], scalars: Option<(&str, &[f64])>) -> Result<()> {
    if let Some((name, s)) = scalars {
        if s.len() != points.len() {
            return Err(ShapeError::InvalidArgument(format!(
                "scalar channel '{name}' has {} values for {} points",
                s.len(),
                points.len()
            )));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(ShapeError::InvalidArgument(format!("bad property name '{name}'")));
        }
    }
    if let Some(p) = points.iter().find(|p| p.iter().any(|c| !c.is_finite())) {
        return Err(ShapeError::NonFinite {
            what: "point written to PLY",
            x: *p,
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    if let Some((name, _)) = scalars {
        writeln!(w, "property double {name}")?;
    }
    writeln!(w, "end_header")?;
    for (k, p) in points.iter().enumerate() {
        match scalars {
            Some((_, s)) => writeln!(w, "{} {} {} {}", p[0], p[1], p[2], s[k])?,
            None => writeln!(w, "{} {} {}", p[0], p[1], p[2])?,
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn three_point_ply_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.ply",
            "ply\nformat ascii 1.0\ncomment hand made\nelement vertex 3\nproperty float nx\nproperty float ny\nproperty float nz\nproperty float x\nproperty float y\nproperty float z\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n0 0 2 1 0 0\n0 3 0 0 1 0\n1 0 0 0 0 1\n",
        );
        let raw = read_points(&p).unwrap();
        assert_eq!(raw.points, vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let cloud = load_point_cloud(&p).unwrap();
        assert_eq!(cloud.normals[0], [0.0, 0.0, 1.0]);
        assert_eq!(cloud.normals[1], [0.0, 1.0, 0.0]);
        for (q, src) in cloud.points.iter().zip(&raw.points) {
            let back = cloud.transform.to_source(q);
            for k in 0..3 {
                assert!((back[k] - src[k]).abs() < 1e-15);
            }
        }
        assert!(cloud.points.iter().flatten().all(|c| c.abs() <= 0.95 + 1e-15));
    }

    #[test]
    fn obj_count_mismatch_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.obj", "v 0 0 0\nv 1 0 0\nvn 0 0 1\n");
        assert!(matches!(load_point_cloud(&p), Err(ShapeError::Parse { .. })));
        let q = write(dir.path(), "b.obj", "# c\nv 0 0 0\nvn 0 0 2\nv 1 0 0\nvn 0 1 0\nf 1 2\n");
        let c = load_point_cloud(&q).unwrap();
        assert_eq!(c.normals[0], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn missing_normals_and_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.ply", "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n");
        assert!(load_point_cloud(&p).is_err());
        let q = write(dir.path(), "b.ply", "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 zz\n");
        match read_points(&q) {
            Err(ShapeError::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.ply");
        let pts = vec![[0.1, -0.2, 1.0 / 3.0], [1e-7, 2.5, -3.25]];
        write_point_cloud(&p, &pts, Some(("quality", &[0.5, 2.0]))).unwrap();
        let raw = read_points(&p).unwrap();
        assert_eq!(raw.points, pts);
        assert_eq!(raw.scalars, Some(vec![0.5, 2.0]));
        write_point_cloud(&p, &[], None).unwrap();
        assert!(read_points(&p).unwrap().points.is_empty());
        assert!(write_point_cloud(&p, &pts, Some(("quality", &[1.0]))).is_err());
    }
}

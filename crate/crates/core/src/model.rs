//! Object models: 3D point sets in the object frame.
//!
//! Two text formats are accepted by [`ObjectModel::parse`]:
//!
//! * a bare point list, one `x y z` triple per line (meters);
//! * the vertex section of a Wavefront OBJ mesh (`v x y z` lines). Faces,
//!   normals and texture coordinates are ignored.
//!
//! Blank lines and lines starting with `#` are skipped in both formats.

use std::path::Path;

use nalgebra::Matrix3;

use crate::error::ModelError;
use crate::lie::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    points: Vec<Vec3>,
    diameter: f64,
}

impl ObjectModel {
    pub fn new(points: Vec<Vec3>) -> Result<Self, ModelError> {
        if points.len() < 4 || points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(ModelError::Degenerate);
        }
        let diameter = max_pairwise_distance(&points);
        if diameter <= 0.0 || !spans_three_dimensions(&points) {
            return Err(ModelError::Degenerate);
        }
        Ok(ObjectModel { points, diameter })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Largest distance between two model points (m).
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut points = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace().peekable();
            match fields.peek() {
                Some(&"v") => {
                    fields.next();
                }
                Some(tok) if tok.parse::<f64>().is_err() => continue, // other OBJ records
                _ => {}
            }
            let coords: Vec<f64> = fields
                .take(3)
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| ModelError::Parse { line: idx + 1, message: e.to_string() })?;
            if coords.len() != 3 {
                return Err(ModelError::Parse {
                    line: idx + 1,
                    message: format!("expected 3 coordinates, found {}", coords.len()),
                });
            }
            points.push(Vec3::new(coords[0], coords[1], coords[2]));
        }
        ObjectModel::new(points)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
        ObjectModel::parse(&text)
    }

    /// Writes the model as a bare point list.
    pub fn to_xyz(&self) -> String {
        let mut out = String::from("# x y z (m)\n");
        for p in &self.points {
            out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
        }
        out
    }

    /// Built-in asymmetric bracket (about 8.5 cm across): an L-shaped body
    /// with a raised tab, sampled on its box faces at 5 mm spacing.
    pub fn bracket() -> Self {
        let boxes = [
            // (min corner, max corner)
            (Vec3::new(-0.035, -0.010, 0.000), Vec3::new(0.025, 0.010, 0.015)),
            (Vec3::new(0.005, 0.010, 0.000), Vec3::new(0.025, 0.035, 0.015)),
            (Vec3::new(-0.035, -0.010, 0.015), Vec3::new(-0.020, 0.005, 0.040)),
        ];
        let mut points: Vec<Vec3> = Vec::new();
        for (lo, hi) in boxes {
            sample_box_surface(&lo, &hi, 0.005, &mut points);
        }
        // shift so the bounding box is centred on the origin
        let (lo, hi) = bounds(&points);
        let centre = (lo + hi) * 0.5;
        for p in &mut points {
            *p -= centre;
            // keep printed coordinates short and exact-ish
            *p = p.map(|v| (v * 1e6).round() / 1e6);
        }
        points.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z)));
        points.dedup_by(|a, b| (*a - *b).norm() < 1e-9);
        ObjectModel::new(points).expect("built-in model is valid")
    }
}

fn sample_box_surface(lo: &Vec3, hi: &Vec3, step: f64, out: &mut Vec<Vec3>) {
    let steps = |a: f64, b: f64| ((b - a) / step).round().max(1.0) as usize;
    let (nx, ny, nz) = (steps(lo.x, hi.x), steps(lo.y, hi.y), steps(lo.z, hi.z));
    for i in 0..=nx {
        for j in 0..=ny {
            for k in 0..=nz {
                let on_face = i == 0 || i == nx || j == 0 || j == ny || k == 0 || k == nz;
                if on_face {
                    out.push(Vec3::new(
                        lo.x + (hi.x - lo.x) * i as f64 / nx as f64,
                        lo.y + (hi.y - lo.y) * j as f64 / ny as f64,
                        lo.z + (hi.z - lo.z) * k as f64 / nz as f64,
                    ));
                }
            }
        }
    }
}

fn bounds(points: &[Vec3]) -> (Vec3, Vec3) {
    points
        .iter()
        .fold((Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)), |(lo, hi), p| (lo.inf(p), hi.sup(p)))
}

fn max_pairwise_distance(points: &[Vec3]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max((a - b).norm());
        }
    }
    best
}

fn spans_three_dimensions(points: &[Vec3]) -> bool {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vec3>() / n;
    let scatter: Matrix3<f64> = points.iter().map(|p| (p - mean) * (p - mean).transpose()).sum();
    let eig = scatter.symmetric_eigen().eigenvalues;
    eig.min() > 1e-12 * eig.max().max(f64::MIN_POSITIVE)
}

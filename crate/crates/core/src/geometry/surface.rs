//! Rigid-object surface discretization.
//!
//! Primitives are sampled on deterministic lattices whose cell areas sum to
//! the analytic surface area exactly. Triangle meshes use area-weighted
//! stratified sampling driven by a seeded RNG.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// One discretized surface element of the rigid object, in the object frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceSample {
    pub position: Vector3<f64>,
    pub area: f64,
    /// Outward unit normal.
    pub normal: Vector3<f64>,
}

/// Closed, outward-oriented triangle mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
}

/// Rigid object geometry. Cylinders have their axis along the object y axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectShape {
    Box { half_extents: [f64; 3] },
    Sphere { radius: f64 },
    Cylinder { radius: f64, half_length: f64 },
    /// ASCII OBJ file (`v` and `f` records).
    Mesh { path: String },
}

impl TriMesh {
    /// Builds a mesh, checking that it is closed and non-degenerate, and
    /// flipping the winding if it encloses negative volume.
    pub fn new(vertices: Vec<Vector3<f64>>, mut faces: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        if faces.len() < 4 {
            return Err(GeometryError::Degenerate(format!(
                "{} faces cannot enclose a volume",
                faces.len()
            )));
        }
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= vertices.len()) {
                return Err(GeometryError::Degenerate(format!("face {fi} references a missing vertex")));
            }
        }
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &faces {
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut bad: Vec<_> = edges.iter().filter(|(_, &c)| c != 2).collect();
        bad.sort();
        if let Some((&(a, b), &c)) = bad.first() {
            return Err(GeometryError::OpenMesh(a, b, c));
        }
        let extent = vertices
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.amax()))
            .max(f64::MIN_POSITIVE);
        let mut volume = 0.0;
        for (fi, f) in faces.iter().enumerate() {
            let [a, b, c] = f.map(|i| vertices[i]);
            if (b - a).cross(&(c - a)).norm() <= 1e-14 * extent * extent {
                return Err(GeometryError::Degenerate(format!("face {fi} has zero area")));
            }
            volume += a.dot(&b.cross(&c)) / 6.0;
        }
        if volume.abs() <= 1e-14 * extent.powi(3) {
            return Err(GeometryError::Degenerate("mesh encloses no volume".into()));
        }
        if volume < 0.0 {
            for f in &mut faces {
                f.swap(1, 2);
            }
        }
        Ok(Self { vertices, faces })
    }

    /// Parses the `v`/`f` subset of Wavefront OBJ. Polygons are fan
    /// triangulated; `v/vt/vn` index forms and negative indices are accepted.
    pub fn parse_obj(text: &str) -> Result<Self, GeometryError> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            let mut tok = body.split_whitespace();
            match tok.next() {
                Some("v") => {
                    let c: Vec<f64> = tok
                        .map(|t| t.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| GeometryError::Parse {
                            line,
                            message: e.to_string(),
                        })?;
                    if c.len() < 3 || c.iter().take(3).any(|x| !x.is_finite()) {
                        return Err(GeometryError::Parse {
                            line,
                            message: "vertex needs three finite coordinates".into(),
                        });
                    }
                    vertices.push(Vector3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = tok
                        .map(|t| parse_index(t, vertices.len(), line))
                        .collect::<Result<_, _>>()?;
                    if idx.len() < 3 {
                        return Err(GeometryError::Parse {
                            line,
                            message: "face needs at least three vertices".into(),
                        });
                    }
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Self::new(vertices, faces)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| GeometryError::Parse {
            line: 0,
            message: format!("{}: {e}", path.as_ref().display()),
        })?;
        Self::parse_obj(&text)
    }

    pub fn surface_area(&self) -> f64 {
        self.faces.iter().map(|f| self.face_area(f)).sum()
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    fn face_area(&self, f: &[usize; 3]) -> f64 {
        let [a, b, c] = f.map(|i| self.vertices[i]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Area-weighted stratified sampling: the cumulative face area is cut
    /// into `n` equal strata and one point is drawn uniformly from each.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<SurfaceSample>, GeometryError> {
        if n == 0 {
            return Err(GeometryError::NoSamples);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cumulative = Vec::with_capacity(self.faces.len());
        let mut total = 0.0;
        for f in &self.faces {
            total += self.face_area(f);
            cumulative.push(total);
        }
        let area = total / n as f64;
        let samples = (0..n)
            .map(|j| {
                let target = (j as f64 + rng.gen::<f64>()) * area;
                let fi = cumulative
                    .partition_point(|&c| c < target)
                    .min(self.faces.len() - 1);
                let [a, b, c] = self.faces[fi].map(|i| self.vertices[i]);
                let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
                let s = r1.sqrt();
                let position = a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2);
                SurfaceSample {
                    position,
                    area,
                    normal: (b - a).cross(&(c - a)).normalize(),
                }
            })
            .collect();
        Ok(samples)
    }
}

fn parse_index(tok: &str, count: usize, line: usize) -> Result<usize, GeometryError> {
    let head = tok.split('/').next().unwrap_or("");
    let i: i64 = head.parse().map_err(|_| GeometryError::Parse {
        line,
        message: format!("bad face index `{tok}`"),
    })?;
    let resolved = if i > 0 {
        i - 1
    } else if i < 0 {
        count as i64 + i
    } else {
        -1
    };
    if resolved < 0 || resolved as usize >= count {
        return Err(GeometryError::Parse {
            line,
            message: format!("face index `{tok}` out of range"),
        });
    }
    Ok(resolved as usize)
}

impl ObjectShape {
    pub fn surface_area(&self) -> Result<f64, GeometryError> {
        Ok(match self {
            ObjectShape::Box { half_extents: h } => {
                8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2])
            }
            ObjectShape::Sphere { radius } => 4.0 * PI * radius * radius,
            ObjectShape::Cylinder {
                radius,
                half_length,
            } => 2.0 * PI * radius * (2.0 * half_length) + 2.0 * PI * radius * radius,
            ObjectShape::Mesh { path } => TriMesh::load(path)?.surface_area(),
        })
    }

    /// Outermost extent from the object origin.
    pub fn bounding_radius(&self) -> Result<f64, GeometryError> {
        Ok(match self {
            ObjectShape::Box { half_extents: h } => Vector3::from(*h).norm(),
            ObjectShape::Sphere { radius } => *radius,
            ObjectShape::Cylinder {
                radius,
                half_length,
            } => radius.hypot(*half_length),
            ObjectShape::Mesh { path } => TriMesh::load(path)?
                .vertices()
                .iter()
                .map(|v| v.norm())
                .fold(0.0, f64::max),
        })
    }
}

/// Discretizes the object surface into roughly `target` samples.
///
/// Lattice primitives ignore `seed`; meshes use it for the stratified draw.
pub fn sample_surface(shape: &ObjectShape, target: usize, seed: u64) -> Result<Vec<SurfaceSample>, GeometryError> {
    if target == 0 {
        return Err(GeometryError::NoSamples);
    }
    match shape {
        ObjectShape::Box { half_extents } => Ok(sample_box(half_extents, target)),
        ObjectShape::Sphere { radius } => Ok(sample_sphere(*radius, target)),
        ObjectShape::Cylinder {
            radius,
            half_length,
        } => Ok(sample_cylinder(*radius, *half_length, target)),
        ObjectShape::Mesh { path } => TriMesh::load(path)?.sample(target, seed),
    }
}

fn cells(length: f64, spacing: f64) -> usize {
    ((length / spacing).round() as usize).max(1)
}

fn sample_box(h: &[f64; 3], target: usize) -> Vec<SurfaceSample> {
    let total = 8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2]);
    let spacing = (total / target as f64).sqrt();
    let mut out = Vec::with_capacity(target + 16);
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let (nu, nv) = (cells(2.0 * h[u], spacing), cells(2.0 * h[v], spacing));
        let area = 4.0 * h[u] * h[v] / (nu * nv) as f64;
        for sign in [1.0, -1.0] {
            let mut normal = Vector3::zeros();
            normal[axis] = sign;
            for iu in 0..nu {
                for iv in 0..nv {
                    let mut p = Vector3::zeros();
                    p[axis] = sign * h[axis];
                    p[u] = -h[u] + (iu as f64 + 0.5) * 2.0 * h[u] / nu as f64;
                    p[v] = -h[v] + (iv as f64 + 0.5) * 2.0 * h[v] / nv as f64;
                    out.push(SurfaceSample {
                        position: p,
                        area,
                        normal,
                    });
                }
            }
        }
    }
    out
}

/// Fibonacci lattice; every sample carries an equal share of the area.
fn sample_sphere(radius: f64, n: usize) -> Vec<SurfaceSample> {
    let golden = PI * (3.0 - 5.0_f64.sqrt());
    let area = 4.0 * PI * radius * radius / n as f64;
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            let normal = Vector3::new(r * t.cos(), r * t.sin(), z);
            SurfaceSample {
                position: normal * radius,
                area,
                normal,
            }
        })
        .collect()
}

fn sample_cylinder(radius: f64, half_length: f64, target: usize) -> Vec<SurfaceSample> {
    let side = 2.0 * PI * radius * 2.0 * half_length;
    let cap = PI * radius * radius;
    let spacing = ((side + 2.0 * cap) / target as f64).sqrt();
    let mut out = Vec::with_capacity(target + 16);

    let n_theta = cells(2.0 * PI * radius, spacing).max(3);
    let n_len = cells(2.0 * half_length, spacing);
    let side_area = side / (n_theta * n_len) as f64;
    for it in 0..n_theta {
        let t = 2.0 * PI * (it as f64 + 0.5) / n_theta as f64;
        let normal = Vector3::new(t.cos(), 0.0, t.sin());
        for il in 0..n_len {
            let y = -half_length + (il as f64 + 0.5) * 2.0 * half_length / n_len as f64;
            out.push(SurfaceSample {
                position: Vector3::new(radius * t.cos(), y, radius * t.sin()),
                area: side_area,
                normal,
            });
        }
    }

    let n_rings = cells(radius, spacing);
    for sign in [1.0, -1.0] {
        let normal = Vector3::new(0.0, sign, 0.0);
        for j in 0..n_rings {
            let (r0, r1) = (
                radius * j as f64 / n_rings as f64,
                radius * (j + 1) as f64 / n_rings as f64,
            );
            let annulus = PI * (r1 * r1 - r0 * r0);
            let mid = 0.5 * (r0 + r1);
            let count = if j == 0 { cells(annulus, spacing * spacing) } else { cells(2.0 * PI * mid, spacing) };
            for k in 0..count {
                let (px, pz) = if count == 1 && j == 0 {
                    (0.0, 0.0)
                } else {
                    let t = 2.0 * PI * (k as f64 + 0.5) / count as f64;
                    (mid * t.cos(), mid * t.sin())
                };
                out.push(SurfaceSample {
                    position: Vector3::new(px, sign * half_length, pz),
                    area: annulus / count as f64,
                    normal,
                });
            }
        }
    }
    out
}

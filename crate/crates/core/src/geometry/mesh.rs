use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Vec3;
use crate::error::{DnfError, Result};

/// Indexed triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

/// Affine map applied by [`TriMesh::normalize_to_box`]: `p' = (p - center) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: [f64; 3],
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self { center: [0.0; 3], scale: 1.0 }
    }
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self { vertices, triangles };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some((i, t)) = self
            .triangles
            .iter()
            .enumerate()
            .find(|(_, t)| t.iter().any(|&v| v as usize >= n))
        {
            return Err(DnfError::InvalidMesh(format!(
                "triangle {i} references vertex {:?} but the mesh has {n} vertices",
                t
            )));
        }
        if let Some(i) = self.vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(DnfError::InvalidMesh(format!("vertex {i} is not finite")));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Unit face normal, `None` for degenerate triangles.
    pub fn face_normal(&self, t: usize) -> Option<Vec3> {
        let [a, b, c] = self.corners(t);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        (len > 1e-300).then(|| n / len)
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Number of undirected edges not shared by exactly two triangles.
    pub fn open_edge_count(&self) -> usize {
        let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        edges.values().filter(|&&c| c != 2).count()
    }

    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.open_edge_count() == 0
    }

    /// Same triangle list (topology) as `other`.
    pub fn same_topology(&self, other: &TriMesh) -> bool {
        self.vertices.len() == other.vertices.len() && self.triangles == other.triangles
    }

    /// Centers the mesh and scales it uniformly so that it fits in `[-1, 1]^3`
    /// with the given relative margin (0.05 leaves 5% of the half-extent free).
    pub fn normalize_to_box(&mut self, margin: f64) -> Normalization {
        let (lo, hi) = self.bounds();
        let center = (lo + hi) * 0.5;
        let half = ((hi - lo) * 0.5).max().max(1e-12);
        let scale = (1.0 - margin) / half;
        for v in &mut self.vertices {
            *v = (*v - center) * scale;
        }
        Normalization { center: [center.x, center.y, center.z], scale }
    }

    pub fn apply_normalization(&mut self, norm: &Normalization) {
        let c = Vec3::from(norm.center);
        for v in &mut self.vertices {
            *v = (*v - c) * norm.scale;
        }
    }

    pub fn read_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_obj(&text).map_err(|e| match e {
            DnfError::InvalidMesh(m) => DnfError::InvalidMesh(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parses the `v` and `f` records of a Wavefront OBJ file. Faces must be
    /// triangles; texture and normal indices (`f 1/2/3 ...`) are ignored.
    pub fn parse_obj(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    let coords: Vec<f64> = parts
                        .take(3)
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| DnfError::InvalidMesh(format!("line {}: {e}", lineno + 1)))?;
                    if coords.len() != 3 {
                        return Err(DnfError::InvalidMesh(format!(
                            "line {}: vertex needs 3 coordinates",
                            lineno + 1
                        )));
                    }
                    vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let idx: Vec<&str> = parts.collect();
                    if idx.len() != 3 {
                        return Err(DnfError::InvalidMesh(format!(
                            "line {}: only triangular faces are supported, got {} corners",
                            lineno + 1,
                            idx.len()
                        )));
                    }
                    let mut tri = [0u32; 3];
                    for (slot, tok) in tri.iter_mut().zip(idx) {
                        let first = tok.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| {
                            DnfError::InvalidMesh(format!("line {}: bad index `{tok}`", lineno + 1))
                        })?;
                        let resolved = if i > 0 { i - 1 } else { vertices.len() as i64 + i };
                        if resolved < 0 {
                            return Err(DnfError::InvalidMesh(format!(
                                "line {}: index {i} out of range",
                                lineno + 1
                            )));
                        }
                        *slot = resolved as u32;
                    }
                    triangles.push(tri);
                }
                _ => {}
            }
        }
        Self::new(vertices, triangles)
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::with_capacity(self.vertices.len() * 40 + self.triangles.len() * 20);
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        out
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        crate::checkpoint::write_atomic(path, self.to_obj().as_bytes())
    }

    /// Displaces every vertex by `flow(v)`, evaluated as a single batch.
    pub fn warp<F>(&self, flow: F) -> Result<TriMesh>
    where
        F: FnOnce(&[Vec3]) -> Result<Vec<Vec3>>,
    {
        let offsets = flow(&self.vertices)?;
        if offsets.len() != self.vertices.len() {
            return Err(DnfError::shape(format!(
                "flow returned {} vectors for {} vertices",
                offsets.len(),
                self.vertices.len()
            )));
        }
        if let Some(i) = offsets.iter().position(|d| !d.iter().all(|c| c.is_finite())) {
            return Err(DnfError::numerical(format!("flow at vertex {i} is not finite")));
        }
        let vertices = self.vertices.iter().zip(&offsets).map(|(v, d)| v + d).collect();
        Ok(TriMesh { vertices, triangles: self.triangles.clone() })
    }

    /// UV-sphere-free icosphere of the given radius; `subdivisions` loop
    /// subdivision steps of the icosahedron, projected back onto the sphere.
    pub fn icosphere(radius: f64, subdivisions: usize) -> TriMesh {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<Vec3> = [
            [-1.0, phi, 0.0],
            [1.0, phi, 0.0],
            [-1.0, -phi, 0.0],
            [1.0, -phi, 0.0],
            [0.0, -1.0, phi],
            [0.0, 1.0, phi],
            [0.0, -1.0, -phi],
            [0.0, 1.0, -phi],
            [phi, 0.0, -1.0],
            [phi, 0.0, 1.0],
            [-phi, 0.0, -1.0],
            [-phi, 0.0, 1.0],
        ]
        .iter()
        .map(|p| Vec3::from(*p).normalize())
        .collect();
        let mut triangles: Vec<[u32; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
            let mut next = Vec::with_capacity(triangles.len() * 4);
            let mut mid = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
                *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    let m = ((verts[a as usize] + verts[b as usize]) * 0.5).normalize();
                    verts.push(m);
                    (verts.len() - 1) as u32
                })
            };
            for [a, b, c] in triangles {
                let ab = mid(a, b, &mut vertices);
                let bc = mid(b, c, &mut vertices);
                let ca = mid(c, a, &mut vertices);
                next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            triangles = next;
        }
        for v in &mut vertices {
            *v *= radius;
        }
        TriMesh { vertices, triangles }
    }
}

/// Area-weighted random sampling of surface points.
#[derive(Debug, Clone)]
pub struct SurfaceSampler {
    cumulative: Vec<f64>,
    total: f64,
}

/// A sampled surface point: triangle index and barycentric weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub triangle: u32,
    pub bary: [f64; 3],
}

impl SurfaceSampler {
    pub fn new(mesh: &TriMesh) -> Result<Self> {
        let mut cumulative = Vec::with_capacity(mesh.triangles.len());
        let mut total = 0.0;
        for t in 0..mesh.triangles.len() {
            total += mesh.triangle_area(t);
            cumulative.push(total);
        }
        if !(total > 0.0) {
            return Err(DnfError::InvalidMesh("all triangles are degenerate (zero area)".into()));
        }
        Ok(Self { cumulative, total })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SurfacePoint {
        let target = rng.random::<f64>() * self.total;
        let t = self.cumulative.partition_point(|&c| c <= target).min(self.cumulative.len() - 1);
        let (mut r1, mut r2): (f64, f64) = (rng.random(), rng.random());
        if r1 + r2 > 1.0 {
            r1 = 1.0 - r1;
            r2 = 1.0 - r2;
        }
        SurfacePoint { triangle: t as u32, bary: [1.0 - r1 - r2, r1, r2] }
    }

    /// `n` surface positions.
    pub fn sample_points<R: Rng + ?Sized>(&self, mesh: &TriMesh, n: usize, rng: &mut R) -> Vec<Vec3> {
        (0..n).map(|_| barycentric_point(mesh, &self.sample(rng))).collect()
    }
}

pub fn barycentric_point(mesh: &TriMesh, p: &SurfacePoint) -> Vec3 {
    let [a, b, c] = mesh.corners(p.triangle as usize);
    a * p.bary[0] + b * p.bary[1] + c * p.bary[2]
}

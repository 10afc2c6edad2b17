//! Zero-level-set extraction on a regular grid.
//!
//! Each grid cube is split into the six Kuhn tetrahedra that share its main
//! diagonal. The split is the same in every cube, so neighbouring cells agree
//! on their shared faces and the extracted surface has no cracks or ambiguous
//! cases. Vertices on shared grid edges are welded.

use std::collections::HashMap;

use super::{TriMesh, Vec3};
use crate::error::{DnfError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub lo: Vec3,
    pub hi: Vec3,
}

impl Aabb {
    pub fn new(lo: Vec3, hi: Vec3) -> Self {
        Self { lo, hi }
    }

    /// The `[-1, 1]^3` domain box.
    pub fn domain() -> Self {
        Self::cube(super::DOMAIN_HALF_EXTENT)
    }

    pub fn cube(half: f64) -> Self {
        Self { lo: Vec3::repeat(-half), hi: Vec3::repeat(half) }
    }
}

const FIELD_CHUNK: usize = 32_768;

/// Corner offsets, bit 0 = x, bit 1 = y, bit 2 = z.
const KUHN_TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Triangulates `{p : field(p) = 0}` with `resolution` cells per axis.
/// Points where the field is negative are inside; triangles face outward.
pub fn marching_cubes<F>(mut field: F, resolution: usize, bounds: &Aabb) -> Result<TriMesh>
where
    F: FnMut(&[Vec3]) -> Result<Vec<f64>>,
{
    if resolution < 8 {
        return Err(DnfError::invalid(format!("resolution must be at least 8, got {resolution}")));
    }
    let n = resolution + 1;
    let step = (bounds.hi - bounds.lo) / resolution as f64;
    let pos = |i: usize, j: usize, k: usize| {
        bounds.lo + Vec3::new(i as f64 * step.x, j as f64 * step.y, k as f64 * step.z)
    };
    let grid_index = |i: usize, j: usize, k: usize| (k * n + j) * n + i;

    let mut values = Vec::with_capacity(n * n * n);
    let mut chunk = Vec::with_capacity(FIELD_CHUNK);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                chunk.push(pos(i, j, k));
                if chunk.len() == FIELD_CHUNK {
                    values.extend(eval_chunk(&mut field, &chunk)?);
                    chunk.clear();
                }
            }
        }
    }
    if !chunk.is_empty() {
        values.extend(eval_chunk(&mut field, &chunk)?);
    }

    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let mut welded: HashMap<(usize, usize), u32> = HashMap::new();
    let mut any_sign_change = false;

    for k in 0..resolution {
        for j in 0..resolution {
            for i in 0..resolution {
                let corner_ids: [usize; 8] = std::array::from_fn(|c| {
                    grid_index(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1))
                });
                let inside: [bool; 8] = std::array::from_fn(|c| values[corner_ids[c]] < 0.0);
                let n_inside = inside.iter().filter(|&&b| b).count();
                if n_inside == 0 || n_inside == 8 {
                    continue;
                }
                any_sign_change = true;
                for tet in KUHN_TETS {
                    let ids = tet.map(|c| corner_ids[c]);
                    polygonize_tet(&ids, &values, n, &pos, &mut welded, &mut vertices, &mut triangles);
                }
            }
        }
    }
    if !any_sign_change || triangles.is_empty() {
        return Err(DnfError::EmptyMesh { resolution });
    }
    Ok(TriMesh { vertices, triangles })
}

fn eval_chunk<F>(field: &mut F, pts: &[Vec3]) -> Result<Vec<f64>>
where
    F: FnMut(&[Vec3]) -> Result<Vec<f64>>,
{
    let v = field(pts)?;
    if v.len() != pts.len() {
        return Err(DnfError::shape(format!("field returned {} values for {} points", v.len(), pts.len())));
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(DnfError::numerical("field returned NaN"));
    }
    Ok(v)
}

fn polygonize_tet(
    ids: &[usize; 4],
    values: &[f64],
    n: usize,
    pos: &impl Fn(usize, usize, usize) -> Vec3,
    welded: &mut HashMap<(usize, usize), u32>,
    vertices: &mut Vec<Vec3>,
    triangles: &mut Vec<[u32; 3]>,
) {
    let unpack = |g: usize| pos(g % n, (g / n) % n, g / (n * n));
    let mut inner = [0usize; 4];
    let mut outer = [0usize; 4];
    let (mut ni, mut no) = (0, 0);
    for &g in ids {
        if values[g] < 0.0 {
            inner[ni] = g;
            ni += 1;
        } else {
            outer[no] = g;
            no += 1;
        }
    }
    if ni == 0 || no == 0 {
        return;
    }
    let mut edge_vertex = |a: usize, b: usize| -> u32 {
        let key = (a.min(b), a.max(b));
        *welded.entry(key).or_insert_with(|| {
            let (va, vb) = (values[a], values[b]);
            let t = va / (va - vb);
            let p = unpack(a) + (unpack(b) - unpack(a)) * t;
            vertices.push(p);
            (vertices.len() - 1) as u32
        })
    };
    let centroid = |gs: &[usize]| gs.iter().map(|&g| unpack(g)).sum::<Vec3>() / gs.len() as f64;
    let outward = centroid(&outer[..no]) - centroid(&inner[..ni]);

    let mut emit = |tri: [u32; 3], vertices: &Vec<Vec3>| {
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return;
        }
        let [a, b, c] = tri.map(|v| vertices[v as usize]);
        let nrm = (b - a).cross(&(c - a));
        if nrm.dot(&outward) < 0.0 {
            triangles.push([tri[0], tri[2], tri[1]]);
        } else {
            triangles.push(tri);
        }
    };

    match (ni, no) {
        (1, 3) => {
            let tri = [
                edge_vertex(inner[0], outer[0]),
                edge_vertex(inner[0], outer[1]),
                edge_vertex(inner[0], outer[2]),
            ];
            emit(tri, vertices);
        }
        (3, 1) => {
            let tri = [
                edge_vertex(inner[0], outer[0]),
                edge_vertex(inner[1], outer[0]),
                edge_vertex(inner[2], outer[0]),
            ];
            emit(tri, vertices);
        }
        (2, 2) => {
            let ac = edge_vertex(inner[0], outer[0]);
            let ad = edge_vertex(inner[0], outer[1]);
            let bd = edge_vertex(inner[1], outer[1]);
            let bc = edge_vertex(inner[1], outer[0]);
            emit([ac, ad, bd], vertices);
            emit([ac, bd, bc], vertices);
        }
        _ => unreachable!("tetrahedron has four corners"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(r: f64) -> impl FnMut(&[Vec3]) -> Result<Vec<f64>> {
        move |pts: &[Vec3]| Ok(pts.iter().map(|p| p.norm() - r).collect())
    }

    #[test]
    fn sphere_vertices_near_radius() {
        let res = 64;
        let m = marching_cubes(sphere(0.5), res, &Aabb::domain()).unwrap();
        let cell = 2.0 / res as f64;
        for v in &m.vertices {
            assert!((v.norm() - 0.5).abs() <= 2.0 * cell);
        }
        assert!(m.is_watertight(), "open edges: {}", m.open_edge_count());
    }

    #[test]
    fn triangles_face_outward() {
        let m = marching_cubes(sphere(0.6), 24, &Aabb::domain()).unwrap();
        let vol: f64 = (0..m.triangles.len())
            .map(|t| {
                let [a, b, c] = m.corners(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.6f64.powi(3);
        assert!((vol - exact).abs() / exact < 0.05, "{vol} vs {exact}");
    }

    #[test]
    fn constant_field_is_an_empty_mesh_error() {
        let err = marching_cubes(|p: &[Vec3]| Ok(vec![1.0; p.len()]), 16, &Aabb::domain()).unwrap_err();
        assert!(matches!(err, DnfError::EmptyMesh { .. }));
    }

    #[test]
    fn low_resolution_rejected() {
        assert!(marching_cubes(sphere(0.5), 4, &Aabb::domain()).is_err());
    }

    #[test]
    fn deterministic() {
        let a = marching_cubes(sphere(0.45), 20, &Aabb::domain()).unwrap();
        let b = marching_cubes(sphere(0.45), 20, &Aabb::domain()).unwrap();
        assert_eq!(a, b);
    }
}

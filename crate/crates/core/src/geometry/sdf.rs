//! Signed-distance sampling around triangle meshes.
//!
//! Unsigned distance comes from a triangle BVH. The sign is decided by ray
//! parity along three near-axis directions with a majority vote; the rays are
//! tilted by small irrational offsets so they do not graze mesh vertices or
//! edges that lie exactly on a coordinate axis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bvh::TriangleBvh;
use super::mesh::{barycentric_point, SurfaceSampler};
use super::{TriMesh, Vec3, DOMAIN_HALF_EXTENT};
use crate::error::{DnfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Uniform,
    NearSurface,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdfSampleSet {
    pub points: Vec<Vec3>,
    pub distances: Vec<f64>,
    pub kinds: Vec<SampleKind>,
}

impl SdfSampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.distances.len() || self.points.len() != self.kinds.len() {
            return Err(DnfError::shape(format!(
                "sdf sample set has {} points, {} distances and {} tags",
                self.points.len(),
                self.distances.len(),
                self.kinds.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdfSampling {
    pub n_uniform: usize,
    pub n_near: usize,
    /// Maximum unsigned distance of near-surface samples.
    pub band: f64,
}

impl SdfSampling {
    pub fn paper() -> Self {
        Self { n_uniform: 50_000, n_near: 150_000, band: 0.02 }
    }

    pub fn desk() -> Self {
        Self { n_uniform: 5_000, n_near: 15_000, band: 0.02 }
    }
}

impl Default for SdfSampling {
    fn default() -> Self {
        Self::paper()
    }
}

/// Signed distance queries against a closed mesh (negative inside).
#[derive(Debug, Clone)]
pub struct MeshDistance {
    bvh: TriangleBvh,
}

const RAY_DIRS: [[f64; 3]; 3] = [
    [1.0, 1.414_213_562e-3, 2.236_067_977e-3],
    [1.732_050_808e-3, 1.0, 2.645_751_311e-3],
    [3.162_277_660e-3, 3.605_551_275e-3, 1.0],
];

impl MeshDistance {
    /// Fails with [`DnfError::NotWatertight`] when the sign is not computable.
    pub fn new(mesh: &TriMesh, mesh_id: &str) -> Result<Self> {
        mesh.validate()?;
        let open = mesh.open_edge_count();
        if mesh.triangles.is_empty() || open > 0 {
            return Err(DnfError::NotWatertight { mesh: mesh_id.to_string(), open_edges: open });
        }
        Ok(Self { bvh: TriangleBvh::new(mesh) })
    }

    pub fn unsigned(&self, p: &Vec3) -> f64 {
        self.bvh.closest_point(p).map(|(_, d2)| d2.sqrt()).unwrap_or(f64::INFINITY)
    }

    pub fn is_inside(&self, p: &Vec3) -> bool {
        let votes = RAY_DIRS
            .iter()
            .filter(|d| self.bvh.count_crossings(p, &Vec3::from(**d)) % 2 == 1)
            .count();
        votes >= 2
    }

    pub fn signed(&self, p: &Vec3) -> f64 {
        let d = self.unsigned(p);
        if d == 0.0 {
            return 0.0;
        }
        if self.is_inside(p) {
            -d
        } else {
            d
        }
    }

    pub fn signed_batch(&self, points: &[Vec3]) -> Vec<f64> {
        points.iter().map(|p| self.signed(p)).collect()
    }
}

/// Samples `n_uniform` points uniformly in the domain box and `n_near` points
/// within `band` of the surface, with exact signed distances.
pub fn sample_sdf(mesh: &TriMesh, mesh_id: &str, params: &SdfSampling, seed: u64) -> Result<SdfSampleSet> {
    if !(params.band > 0.0) {
        return Err(DnfError::invalid(format!("band must be positive, got {}", params.band)));
    }
    let dist = MeshDistance::new(mesh, mesh_id)?;
    let sampler = SurfaceSampler::new(mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.n_uniform + params.n_near;
    let mut points = Vec::with_capacity(n);
    let mut kinds = Vec::with_capacity(n);
    let h = DOMAIN_HALF_EXTENT;
    for _ in 0..params.n_uniform {
        points.push(Vec3::new(rng.random_range(-h..h), rng.random_range(-h..h), rng.random_range(-h..h)));
        kinds.push(SampleKind::Uniform);
    }
    for _ in 0..params.n_near {
        let base = barycentric_point(mesh, &sampler.sample(&mut rng));
        // uniform direction, radius uniform in [0, band]: the surface point
        // itself bounds the distance to the mesh by the offset length
        let dir = loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let n2 = v.norm_squared();
            if n2 > 1e-6 && n2 <= 1.0 {
                break v / n2.sqrt();
            }
        };
        let r: f64 = rng.random::<f64>() * params.band;
        points.push(base + dir * r);
        kinds.push(SampleKind::NearSurface);
    }
    let distances = dist.signed_batch(&points);
    Ok(SdfSampleSet { points, distances, kinds })
}

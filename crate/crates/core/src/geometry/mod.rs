//! Meshes, SDF and correspondence sampling, level-set extraction and
//! Chamfer distances.

mod bvh;
mod chamfer;
mod correspondence;
mod marching;
mod mesh;
mod sdf;

pub use bvh::{closest_point_on_triangle, TriangleBvh};
pub use chamfer::{chamfer_distance, chamfer_distance_with, one_sided, sequence_chamfer, sequence_chamfer_with, NnBackend};
pub use correspondence::{
    evaluate_correspondences, sample_correspondences, topology_fingerprint, CorrespondenceSampling,
    CorrespondenceSet,
};
pub use marching::{marching_cubes, Aabb};
pub use mesh::{barycentric_point, Normalization, SurfacePoint, SurfaceSampler, TriMesh};
pub use sdf::{sample_sdf, MeshDistance, SampleKind, SdfSampleSet, SdfSampling};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Half extent of the `[-1, 1]^3` working domain.
pub const DOMAIN_HALF_EXTENT: f64 = 1.0;

/// Deterministic surface point samples, used for Chamfer evaluation.
pub fn surface_points(mesh: &TriMesh, n: usize, seed: u64) -> crate::Result<Vec<Vec3>> {
    use rand::SeedableRng;
    let sampler = SurfaceSampler::new(mesh)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Ok(sampler.sample_points(mesh, n, &mut rng))
}

//! Decoding features into meshes and mesh sequences.

use crate::dictionary::{DictionaryDecoder, Feature};
use crate::error::Result;
use crate::fields::{motion_forward, shape_forward, MlpSpec, MlpWeights};
use crate::geometry::{marching_cubes, Aabb, TriMesh, Vec3};

/// Points per network evaluation while decoding.
pub const DECODE_CHUNK: usize = 16_384;

fn chunked<T, F>(points: &[Vec3], mut f: F) -> Result<Vec<T>>
where
    F: FnMut(&[Vec3]) -> Result<Vec<T>>,
{
    let mut out = Vec::with_capacity(points.len());
    for c in points.chunks(DECODE_CHUNK) {
        out.extend(f(c)?);
    }
    Ok(out)
}

/// Zero level set of a dense shape network over the `[-1, 1]^3` domain.
pub fn dense_shape_mesh(spec: &MlpSpec, weights: &MlpWeights, s: &[f64], resolution: usize) -> Result<TriMesh> {
    marching_cubes(|p| chunked(p, |c| shape_forward(spec, weights, s, c)), resolution, &Aabb::domain())
}

pub fn decode_shape_mesh(decoder: &DictionaryDecoder, feature: &Feature, resolution: usize) -> Result<TriMesh> {
    let w = decoder.reconstruct(&feature.coeffs)?;
    dense_shape_mesh(&decoder.spec, &w, &feature.latent, resolution)
}

/// Canonical mesh displaced by a dense motion network.
pub fn dense_warp(spec: &MlpSpec, weights: &MlpWeights, s: &[f64], m: &[f64], mesh: &TriMesh) -> Result<TriMesh> {
    mesh.warp(|v| chunked(v, |c| motion_forward(spec, weights, s, m, c)))
}

/// Canonical mesh displaced by the flow of a motion feature.
pub fn warp_with_motion(decoder: &DictionaryDecoder, s: &[f64], feature: &Feature, mesh: &TriMesh) -> Result<TriMesh> {
    let w = decoder.reconstruct(&feature.coeffs)?;
    dense_warp(&decoder.spec, &w, s, &feature.latent, mesh)
}

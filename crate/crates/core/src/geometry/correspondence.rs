//! Barycentric surface correspondences used as flow supervision.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::mesh::{barycentric_point, SurfacePoint, SurfaceSampler};
use super::{TriMesh, Vec3};
use crate::error::{DnfError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub triangles: Vec<u32>,
    pub barycentric: Vec<[f64; 3]>,
    /// Offset along the triangle normal, in box units.
    pub normal_noise: Vec<f64>,
    pub canonical_positions: Vec<Vec3>,
    /// Fingerprint of the triangle list the set was sampled on.
    pub topology: u64,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorrespondenceSampling {
    pub n: usize,
    pub noise_sigma: f64,
    pub noise_fraction: f64,
}

impl CorrespondenceSampling {
    pub fn paper() -> Self {
        Self { n: 200_000, noise_sigma: 0.002, noise_fraction: 0.5 }
    }

    pub fn desk() -> Self {
        Self { n: 20_000, noise_sigma: 0.002, noise_fraction: 0.5 }
    }
}

pub fn topology_fingerprint(mesh: &TriMesh) -> u64 {
    let mut h = Sha256::new();
    h.update((mesh.vertices.len() as u64).to_le_bytes());
    for t in &mesh.triangles {
        for i in t {
            h.update(i.to_le_bytes());
        }
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Samples `n` surface points; the first `round(noise_fraction * n)` are
/// displaced along their triangle normal by `N(0, noise_sigma^2)`.
pub fn sample_correspondences(
    canonical: &TriMesh,
    params: &CorrespondenceSampling,
    seed: u64,
) -> Result<CorrespondenceSet> {
    let CorrespondenceSampling { n, noise_sigma, noise_fraction } = *params;
    if n == 0 {
        return Err(DnfError::invalid("correspondence count must be positive"));
    }
    if !(0.0..=1.0).contains(&noise_fraction) {
        return Err(DnfError::invalid(format!("noise fraction {noise_fraction} outside [0, 1]")));
    }
    if !(noise_sigma >= 0.0) {
        return Err(DnfError::invalid(format!("noise sigma {noise_sigma} must be non-negative")));
    }
    canonical.validate()?;
    let sampler = SurfaceSampler::new(canonical)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("sigma is finite");
    let n_noisy = (noise_fraction * n as f64).round() as usize;

    let mut set = CorrespondenceSet {
        triangles: Vec::with_capacity(n),
        barycentric: Vec::with_capacity(n),
        normal_noise: Vec::with_capacity(n),
        canonical_positions: Vec::with_capacity(n),
        topology: topology_fingerprint(canonical),
    };
    for i in 0..n {
        let (sp, nrm) = loop {
            let sp = sampler.sample(&mut rng);
            if let Some(nrm) = canonical.face_normal(sp.triangle as usize) {
                break (sp, nrm);
            }
        };
        let noise = if i < n_noisy && noise_sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
        set.canonical_positions.push(barycentric_point(canonical, &sp) + nrm * noise);
        set.triangles.push(sp.triangle);
        set.barycentric.push(sp.bary);
        set.normal_noise.push(noise);
    }
    Ok(set)
}

/// Positions of the stored correspondences on `deformed`, which must share the
/// canonical mesh's triangle list.
pub fn evaluate_correspondences(corr: &CorrespondenceSet, deformed: &TriMesh) -> Result<Vec<Vec3>> {
    if topology_fingerprint(deformed) != corr.topology {
        return Err(DnfError::shape(
            "deformed mesh does not share the canonical triangle topology",
        ));
    }
    corr.triangles
        .iter()
        .zip(&corr.barycentric)
        .zip(&corr.normal_noise)
        .map(|((&t, &bary), &noise)| {
            let p = barycentric_point(deformed, &SurfacePoint { triangle: t, bary });
            if noise == 0.0 {
                return Ok(p);
            }
            let nrm = deformed.face_normal(t as usize).ok_or_else(|| {
                DnfError::InvalidMesh(format!("triangle {t} collapsed in the deformed mesh"))
            })?;
            Ok(p + nrm * noise)
        })
        .collect()
}

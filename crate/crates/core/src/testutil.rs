use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

use crate::geometry::{SampleKind, SdfSampleSet, Vec3};

/// Analytic sphere SDF samples with the same uniform / near-surface mix as
/// the mesh sampler (one quarter uniform, band 0.02).
pub fn sphere_samples(n: usize, r: f64, center: Vec3, seed: u64) -> SdfSampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_uniform = n / 4;
    let mut points = Vec::with_capacity(n);
    let mut kinds = Vec::with_capacity(n);
    for i in 0..n {
        if i < n_uniform {
            points.push(Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            kinds.push(SampleKind::Uniform);
        } else {
            let s: [f64; 3] = UnitSphere.sample(&mut rng);
            let d: [f64; 3] = UnitSphere.sample(&mut rng);
            let p = center + Vec3::from(s) * r + Vec3::from(d) * rng.random_range(0.0..0.02);
            points.push(p);
            kinds.push(SampleKind::NearSurface);
        }
    }
    let distances = points.iter().map(|p| (p - center).norm() - r).collect();
    SdfSampleSet { points, distances, kinds }
}

pub fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

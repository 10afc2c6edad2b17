//! Two-sided squared Chamfer distance.
//!
//! `CD(A, B) = mean_a min_b |a - b|^2 + mean_b min_a |a - b|^2`, the single
//! definition used by every metric in the crate.

use rstar::primitives::GeomWithData;
use rstar::RTree;

use super::Vec3;
use crate::error::{DnfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NnBackend {
    #[default]
    RTree,
    BruteForce,
}

pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    chamfer_distance_with(a, b, NnBackend::RTree)
}

pub fn chamfer_distance_with(a: &[Vec3], b: &[Vec3], backend: NnBackend) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(DnfError::invalid("chamfer distance needs two non-empty point sets"));
    }
    Ok(one_sided(a, b, backend) + one_sided(b, a, backend))
}

/// Mean squared distance from each point of `from` to its nearest point in `to`.
pub fn one_sided(from: &[Vec3], to: &[Vec3], backend: NnBackend) -> f64 {
    let sum: f64 = match backend {
        NnBackend::BruteForce => from
            .iter()
            .map(|p| to.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min))
            .sum(),
        NnBackend::RTree => {
            let pts: Vec<GeomWithData<[f64; 3], usize>> =
                to.iter().enumerate().map(|(i, q)| GeomWithData::new([q.x, q.y, q.z], i)).collect();
            let tree = RTree::bulk_load(pts);
            from.iter()
                .map(|p| {
                    let nn = tree.nearest_neighbor(&[p.x, p.y, p.z]).expect("non-empty tree");
                    // recompute exactly from the stored point
                    (p - to[nn.data]).norm_squared()
                })
                .sum()
        }
    };
    sum / from.len() as f64
}

/// Mean of per-frame Chamfer distances between two equally long sequences.
pub fn sequence_chamfer(a: &[Vec<Vec3>], b: &[Vec<Vec3>]) -> Result<f64> {
    sequence_chamfer_with(a, b, NnBackend::RTree)
}

pub fn sequence_chamfer_with(a: &[Vec<Vec3>], b: &[Vec<Vec3>], backend: NnBackend) -> Result<f64> {
    if a.len() != b.len() {
        return Err(DnfError::shape(format!("sequences have {} and {} frames", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(DnfError::invalid("sequence chamfer needs at least one frame"));
    }
    let mut total = 0.0;
    for (fa, fb) in a.iter().zip(b) {
        total += chamfer_distance_with(fa, fb, backend)?;
    }
    Ok(total / a.len() as f64)
}

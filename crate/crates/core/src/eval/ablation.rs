//! Reconstruction ablation: mean sequence Chamfer of four reconstruction
//! variants against the ground-truth frames.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::PointSequence;
use crate::error::{DnfError, Result};
use crate::geometry::{sequence_chamfer, surface_points, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    /// Global shape and motion networks with per-instance latents only.
    LatentOnly,
    /// Frame-0 shape code refit to every later frame, networks fixed.
    ShapeCodeFit,
    /// Frame-0 shape code and shape coefficients refit to every later frame.
    ShapeCodeAndCoeffFit,
    /// Fine-tuned shape feature warped by fine-tuned motion features.
    Decoupled,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::LatentOnly,
        AblationVariant::ShapeCodeFit,
        AblationVariant::ShapeCodeAndCoeffFit,
        AblationVariant::Decoupled,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            AblationVariant::LatentOnly => "latent_only",
            AblationVariant::ShapeCodeFit => "s_ft",
            AblationVariant::ShapeCodeAndCoeffFit => "s_sigma_ft",
            AblationVariant::Decoupled => "ours",
        }
    }
}

/// Mesh frames per sequence id.
pub type SequenceMeshes = BTreeMap<String, Vec<TriMesh>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub mean_cd: f64,
    pub per_sequence: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub points_per_frame: usize,
}

impl AblationTable {
    pub fn mean_cd(&self, v: AblationVariant) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == v).map(|r| r.mean_cd)
    }

    /// `variant,mean_cd,mean_cd_x1e3,n_sequences`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,mean_cd,mean_cd_x1e3,n_sequences\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.variant.label(), r.mean_cd, r.mean_cd * 1e3, r.per_sequence.len()));
        }
        out
    }
}

/// Surface samples of every frame; frame `t` uses seed `seed + t`.
pub fn sample_sequence_points(frames: &[TriMesh], n: usize, seed: u64) -> Result<PointSequence> {
    frames.iter().enumerate().map(|(t, m)| surface_points(m, n, seed + t as u64)).collect()
}

/// Mean sequence Chamfer of each variant over the ground-truth sequences.
/// Every variant must reconstruct every ground-truth sequence.
pub fn reconstruction_ablation(
    ground_truth: &SequenceMeshes,
    reconstructions: &BTreeMap<AblationVariant, SequenceMeshes>,
    points_per_frame: usize,
    seed: u64,
) -> Result<AblationTable> {
    if ground_truth.is_empty() {
        return Err(DnfError::invalid("ablation needs at least one ground-truth sequence"));
    }
    let gt_points: BTreeMap<&String, PointSequence> = ground_truth
        .iter()
        .map(|(id, f)| Ok((id, sample_sequence_points(f, points_per_frame, seed)?)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(AblationVariant::ALL.len());
    for v in AblationVariant::ALL {
        let recon = reconstructions
            .get(&v)
            .ok_or_else(|| DnfError::invalid(format!("ablation variant `{}` is missing", v.label())))?;
        let mut per_sequence = BTreeMap::new();
        for (id, gt) in &gt_points {
            let frames = recon
                .get(*id)
                .ok_or_else(|| DnfError::invalid(format!("variant `{}` lacks sequence `{id}`", v.label())))?;
            let pts = sample_sequence_points(frames, points_per_frame, seed)?;
            per_sequence.insert((*id).clone(), sequence_chamfer(&pts, gt)?);
        }
        let mean_cd = per_sequence.values().sum::<f64>() / per_sequence.len() as f64;
        rows.push(AblationRow { variant: v, mean_cd, per_sequence });
    }
    Ok(AblationTable { rows, points_per_frame })
}

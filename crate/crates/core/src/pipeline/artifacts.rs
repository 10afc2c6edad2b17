//! Checkpoint files of the training stages.

use std::path::Path;

use super::{Run, Stage};
use crate::checkpoint::Container;
use crate::dictionary::{CoefficientSet, CoefficientTable, DictionaryDecoder};
use crate::diffusion::{MotionDiffusionModel, ShapeDiffusionModel};
use crate::error::{DnfError, Result};
use crate::fields::{LatentTable, MlpSpec, MlpWeights};

/// A trained coordinate network and its per-instance latent codes.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldCheckpoint {
    pub spec: MlpSpec,
    pub weights: MlpWeights,
    pub codes: LatentTable,
}

impl FieldCheckpoint {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut c = Container::new();
        c.set_meta("spec", &self.spec)?;
        self.weights.save_into(&mut c, "weights.")?;
        self.codes.save_into(&mut c, "codes")?;
        c.write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        let spec: MlpSpec = c.meta("spec")?;
        let weights = MlpWeights::load_from(&c, "weights.", &spec)?;
        Ok(Self { spec, weights, codes: LatentTable::load_from(&c, "codes")? })
    }

    pub fn code(&self, id: &str) -> Result<&[f64]> {
        self.codes.get(id).ok_or_else(|| DnfError::invalid(format!("no latent code for `{id}`")))
    }
}

/// A fine-tuned dictionary and the coefficients of every training instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientCheckpoint {
    pub decoder: DictionaryDecoder,
    pub table: CoefficientTable,
}

impl CoefficientCheckpoint {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut c = Container::new();
        self.decoder.save_into(&mut c, "decoder.")?;
        let ids: Vec<&String> = self.table.keys().collect();
        c.set_meta("coeffs.ids", &ids)?;
        let (l, w) = (self.decoder.layers.len(), self.decoder.token_width());
        let flat: Vec<f64> = self.table.values().flat_map(|s| s.gamma.iter().flatten().copied()).collect();
        c.push_f64("coeffs", vec![ids.len(), l, w], &flat)?;
        c.write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        let decoder = DictionaryDecoder::load_from(&c, "decoder.")?;
        let ids: Vec<String> = c.meta("coeffs.ids")?;
        let (l, w) = (decoder.layers.len(), decoder.token_width());
        let flat = c.get_f64("coeffs", &[ids.len(), l, w])?;
        let table = ids
            .into_iter()
            .zip(flat.chunks(l * w).map(|rows| CoefficientSet { gamma: rows.chunks(w).map(|r| r.to_vec()).collect() }))
            .collect();
        Ok(Self { decoder, table })
    }

    pub fn coeffs(&self, id: &str) -> Result<&CoefficientSet> {
        self.table.get(id).ok_or_else(|| DnfError::invalid(format!("no coefficients for `{id}`")))
    }
}

impl Run {
    fn checkpoint(&self, stage: Stage, index: usize) -> Result<std::path::PathBuf> {
        let p = self.path(stage.outputs()[index]);
        if !p.exists() {
            return Err(DnfError::Prerequisite { stage: stage.name().into(), detail: format!("{} is missing", p.display()) });
        }
        Ok(p)
    }

    pub fn shape_space(&self) -> Result<FieldCheckpoint> {
        FieldCheckpoint::read(&self.checkpoint(Stage::TrainShape, 0)?)
    }

    pub fn motion_space(&self) -> Result<FieldCheckpoint> {
        FieldCheckpoint::read(&self.checkpoint(Stage::TrainMotion, 0)?)
    }

    /// Decomposed and extended dictionary, before fine-tuning.
    pub fn dictionary(&self, rel: &str) -> Result<DictionaryDecoder> {
        let index = Stage::Decompose.outputs().iter().position(|o| *o == rel).unwrap_or(0);
        DictionaryDecoder::load_from(&Container::read(&self.checkpoint(Stage::Decompose, index)?)?, "decoder.")
    }

    pub fn shape_finetuned(&self) -> Result<CoefficientCheckpoint> {
        CoefficientCheckpoint::read(&self.checkpoint(Stage::FinetuneShape, 0)?)
    }

    pub fn motion_finetuned(&self) -> Result<CoefficientCheckpoint> {
        CoefficientCheckpoint::read(&self.checkpoint(Stage::FinetuneMotion, 0)?)
    }

    pub fn shape_diffusion(&self) -> Result<ShapeDiffusionModel> {
        ShapeDiffusionModel::load_from(&Container::read(&self.checkpoint(Stage::TrainShapeDiff, 0)?)?, "model.")
    }

    pub fn motion_diffusion(&self) -> Result<MotionDiffusionModel> {
        MotionDiffusionModel::load_from(&Container::read(&self.checkpoint(Stage::TrainMotionDiff, 0)?)?, "model.")
    }
}

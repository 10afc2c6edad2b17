//! Token-space diffusion over dictionary features: noise schedules,
//! transformer denoisers predicting clean samples, DDIM sampling and
//! sliding-window out-painting for motion sequences.

mod norm;
mod sampling;
mod schedule;
mod train;
mod transformer;

use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use norm::{TokenNorm, STD_FLOOR};
pub use sampling::{ddim_sample, ddim_step, outpaint_extend, sample_sequence, sample_window, WindowDenoiser, X0Predictor};
pub use schedule::{make_schedule, timestep_embedding, DiffusionSchedule, ScheduleKind};
pub use train::{
    noise_condition, shape_diffusion_loss, train_motion_diffusion, train_shape_diffusion, window_count, DiffusionTraining,
    MotionTrack,
};
pub use transformer::{Attention, DenoiserConfig, FeedForward, LayerNorm, MotionDenoiser, ShapeDenoiser};

use crate::checkpoint::Container;
use crate::dictionary::{flatten_feature, split_feature, Feature, FeatureLayout};
use crate::error::{DnfError, Result};
use crate::nn::{device, randn_vec};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelRecord {
    denoiser: DenoiserConfig,
    layout: FeatureLayout,
    schedule_kind: ScheduleKind,
    schedule_steps: usize,
    cond_dim: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ShapeDiffusionModel {
    pub denoiser: ShapeDenoiser,
    pub norm: TokenNorm,
    pub layout: FeatureLayout,
    pub schedule: DiffusionSchedule,
}

impl X0Predictor for ShapeDiffusionModel {
    fn predict_x0(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        let x = Tensor::from_vec(x_t.to_vec(), (1, x_t.len()), &device())?;
        Ok(self.denoiser.forward(&x, &[t])?.flatten_all()?.to_vec1()?)
    }
}

impl ShapeDiffusionModel {
    pub fn normalize(&self, feature: &Feature) -> Result<Vec<f64>> {
        self.norm.normalize(&flatten_feature(feature))
    }

    pub fn denormalize(&self, x: &[f64]) -> Result<Feature> {
        split_feature(&self.norm.denormalize(x)?, &self.layout)
    }

    /// DDIM sample in normalised space.
    pub fn sample_normalized(&self, n_steps: usize, seed: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = randn_vec(&mut rng, self.layout.total(), 1.0);
        ddim_sample(self, &self.schedule, n_steps, init)
    }

    pub fn sample(&self, n_steps: usize, seed: u64) -> Result<Feature> {
        self.denormalize(&self.sample_normalized(n_steps, seed)?)
    }

    pub fn save_into(&self, c: &mut Container, prefix: &str) -> Result<()> {
        let record = ModelRecord {
            denoiser: self.denoiser.config.clone(),
            layout: self.layout,
            schedule_kind: self.schedule.kind,
            schedule_steps: self.schedule.steps(),
            cond_dim: None,
        };
        c.set_meta(&format!("{prefix}record"), record)?;
        self.norm.save_into(c, &format!("{prefix}norm"))?;
        self.denoiser.store.save_into(c, &format!("{prefix}net."))
    }

    pub fn load_from(c: &Container, prefix: &str) -> Result<Self> {
        let r: ModelRecord = c.meta(&format!("{prefix}record"))?;
        let denoiser = ShapeDenoiser::new(&r.denoiser, &r.layout.token_widths(), &mut ChaCha8Rng::seed_from_u64(0))?;
        denoiser.store.load_from(c, &format!("{prefix}net."))?;
        Ok(Self {
            denoiser,
            norm: TokenNorm::load_from(c, &format!("{prefix}norm"))?,
            layout: r.layout,
            schedule: make_schedule(r.schedule_steps, r.schedule_kind)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MotionDiffusionModel {
    pub denoiser: MotionDenoiser,
    pub norm: TokenNorm,
    pub cond_norm: TokenNorm,
    pub layout: FeatureLayout,
    pub schedule: DiffusionSchedule,
}

/// A motion model bound to one normalised condition.
pub struct ConditionedWindow<'a> {
    model: &'a MotionDiffusionModel,
    cond: Tensor,
}

impl WindowDenoiser for ConditionedWindow<'_> {
    fn t_frames(&self) -> usize {
        self.model.denoiser.config.t_frames
    }

    fn k_frames(&self) -> usize {
        self.model.denoiser.config.k_frames
    }

    fn predict_window(&self, window: &[Vec<f64>], t: usize) -> Result<Vec<Vec<f64>>> {
        let dim = self.model.layout.total();
        if window.iter().any(|f| f.len() != dim) {
            return Err(DnfError::shape(format!("window frames must have {dim} entries")));
        }
        let x = Tensor::from_vec(window.concat(), (1, window.len(), dim), &device())?;
        let y = self.model.denoiser.forward(&x, &[t], &self.cond)?;
        Ok(y.squeeze(0)?.to_vec2()?)
    }
}

impl MotionDiffusionModel {
    /// Binds a raw shape code as the condition.
    pub fn conditioned(&self, shape_code: &[f64]) -> Result<ConditionedWindow<'_>> {
        let c = self.cond_norm.normalize(shape_code)?;
        Ok(ConditionedWindow { model: self, cond: Tensor::from_vec(c, (1, shape_code.len()), &device())? })
    }

    fn frames_out(&self, frames: Vec<Vec<f64>>) -> Result<Vec<Feature>> {
        frames.iter().map(|f| split_feature(&self.norm.denormalize(f)?, &self.layout)).collect()
    }

    /// `n_frames` motion features: a first window from noise, then sliding
    /// windows of `t_frames - k_frames` new frames.
    pub fn sample_sequence(&self, shape_code: &[f64], n_frames: usize, n_steps: usize, seed: u64) -> Result<Vec<Feature>> {
        let w = self.conditioned(shape_code)?;
        self.frames_out(sample_sequence(&w, &self.schedule, self.layout.total(), n_frames, n_steps, seed)?)
    }

    /// Returns `context` unchanged followed by `n_new` generated frames.
    pub fn extend(&self, shape_code: &[f64], context: &[Feature], n_new: usize, n_steps: usize, seed: u64) -> Result<Vec<Feature>> {
        let w = self.conditioned(shape_code)?;
        let ctx = context.iter().map(|f| self.norm.normalize(&flatten_feature(f))).collect::<Result<Vec<_>>>()?;
        let new = outpaint_extend(&w, &self.schedule, &ctx, n_new, n_steps, seed)?;
        let mut out = context.to_vec();
        out.extend(self.frames_out(new)?);
        Ok(out)
    }

    pub fn save_into(&self, c: &mut Container, prefix: &str) -> Result<()> {
        let record = ModelRecord {
            denoiser: self.denoiser.config.clone(),
            layout: self.layout,
            schedule_kind: self.schedule.kind,
            schedule_steps: self.schedule.steps(),
            cond_dim: Some(self.denoiser.cond_dim()),
        };
        c.set_meta(&format!("{prefix}record"), record)?;
        self.norm.save_into(c, &format!("{prefix}norm"))?;
        self.cond_norm.save_into(c, &format!("{prefix}cond_norm"))?;
        self.denoiser.store.save_into(c, &format!("{prefix}net."))
    }

    pub fn load_from(c: &Container, prefix: &str) -> Result<Self> {
        let r: ModelRecord = c.meta(&format!("{prefix}record"))?;
        let cond_dim = r.cond_dim.ok_or_else(|| DnfError::Format("motion model record lacks cond_dim".into()))?;
        let denoiser = MotionDenoiser::new(&r.denoiser, &r.layout.token_widths(), cond_dim, &mut ChaCha8Rng::seed_from_u64(0))?;
        denoiser.store.load_from(c, &format!("{prefix}net."))?;
        Ok(Self {
            denoiser,
            norm: TokenNorm::load_from(c, &format!("{prefix}norm"))?,
            cond_norm: TokenNorm::load_from(c, &format!("{prefix}cond_norm"))?,
            layout: r.layout,
            schedule: make_schedule(r.schedule_steps, r.schedule_kind)?,
        })
    }
}

#[cfg(test)]
mod tests;

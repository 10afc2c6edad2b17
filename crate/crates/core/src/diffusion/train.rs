use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::norm::TokenNorm;
use super::schedule::DiffusionSchedule;
use super::transformer::{DenoiserConfig, MotionDenoiser, ShapeDenoiser};
use super::{MotionDiffusionModel, ShapeDiffusionModel};
use crate::dictionary::{flatten_feature, Feature, FeatureLayout};
use crate::error::{DnfError, Result};
use crate::fields::TrainLog;
use crate::nn::{adam, device, finite_loss, randn_vec, scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Largest forward-diffusion step applied to the motion condition.
    pub cond_noise_max: usize,
    pub reverse_prob: f64,
    pub seed: u64,
}

impl Default for DiffusionTraining {
    fn default() -> Self {
        Self { epochs: 1000, batch_size: 16, lr: 5e-4, cond_noise_max: 50, reverse_prob: 0.5, seed: 0 }
    }
}

/// Per-sequence motion features (frames after the canonical one) and the
/// canonical shape code they are conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionTrack {
    pub id: String,
    pub condition: Vec<f64>,
    pub frames: Vec<Feature>,
}

/// Distinct training windows of a sequence with `len` frames.
pub fn window_count(len: usize, t_frames: usize, reversal: bool) -> usize {
    let n = (len + 1).saturating_sub(t_frames);
    if reversal {
        2 * n
    } else {
        n
    }
}

fn check_layout(features: &[Vec<f64>], layout: &FeatureLayout) -> Result<()> {
    if let Some(bad) = features.iter().find(|f| f.len() != layout.total()) {
        return Err(DnfError::shape(format!("feature has {} entries, layout needs {}", bad.len(), layout.total())));
    }
    Ok(())
}

fn rows_tensor(rows: &[Vec<f64>]) -> Result<Tensor> {
    let d = rows.first().map_or(0, |r| r.len());
    Ok(Tensor::from_vec(rows.concat(), (rows.len(), d), &device())?)
}

/// `mean_b sum_j (x0 - pred)^2`.
fn x0_loss(pred: &Tensor, x0: &Tensor) -> Result<Tensor> {
    let sq = (pred - x0)?.sqr()?;
    let b = sq.dim(0)?;
    Ok((sq.sum_all()? / b as f64)?)
}

/// Shape-feature diffusion loss for given clean normalised features, steps and noise.
pub fn shape_diffusion_loss(model: &ShapeDiffusionModel, x0: &[Vec<f64>], t: &[usize], eps: &[Vec<f64>]) -> Result<f64> {
    if x0.len() != t.len() || x0.len() != eps.len() {
        return Err(DnfError::shape("features, steps and noise differ in count"));
    }
    let noised = x0
        .iter()
        .zip(t)
        .zip(eps)
        .map(|((x, &t), e)| model.schedule.forward_noise(x, t, e))
        .collect::<Result<Vec<_>>>()?;
    let pred = model.denoiser.forward(&rows_tensor(&noised)?, t)?;
    scalar(&x0_loss(&pred, &rows_tensor(x0)?)?)
}

pub fn train_shape_diffusion(
    features: &[Feature],
    layout: FeatureLayout,
    schedule: &DiffusionSchedule,
    denoiser: &DenoiserConfig,
    cfg: &DiffusionTraining,
) -> Result<(ShapeDiffusionModel, TrainLog)> {
    if features.is_empty() {
        return Err(DnfError::invalid("shape diffusion needs at least one feature"));
    }
    let raw: Vec<Vec<f64>> = features.iter().map(flatten_feature).collect();
    check_layout(&raw, &layout)?;
    let norm = TokenNorm::fit(&raw)?;
    let data = raw.iter().map(|f| norm.normalize(f)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = ShapeDenoiser::new(denoiser, &layout.token_widths(), &mut rng)?;
    let mut opt = adam(net.store.vars(), cfg.lr)?;
    let steps = schedule.steps();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let x0: Vec<Vec<f64>> = chunk.iter().map(|&i| data[i].clone()).collect();
            let t: Vec<usize> = chunk.iter().map(|_| rng.random_range(0..steps)).collect();
            let noised = x0
                .iter()
                .zip(&t)
                .map(|(x, &t)| schedule.forward_noise(x, t, &randn_vec(&mut rng, x.len(), 1.0)))
                .collect::<Result<Vec<_>>>()?;
            let pred = net.forward(&rows_tensor(&noised)?, &t)?;
            let loss = x0_loss(&pred, &rows_tensor(&x0)?)?;
            total += finite_loss(&loss, &format!("shape diffusion epoch {epoch}"))?;
            batches += 1;
            candle_nn::Optimizer::backward_step(&mut opt, &loss)?;
        }
        log.losses.push(total / batches as f64);
    }
    Ok((ShapeDiffusionModel { denoiser: net, norm, layout, schedule: schedule.clone() }, log))
}

struct Window {
    frames: Vec<Vec<f64>>,
    condition: Vec<f64>,
}

pub fn train_motion_diffusion(
    tracks: &[MotionTrack],
    layout: FeatureLayout,
    schedule: &DiffusionSchedule,
    denoiser: &DenoiserConfig,
    cfg: &DiffusionTraining,
) -> Result<(MotionDiffusionModel, TrainLog)> {
    denoiser.validate()?;
    let f = denoiser.t_frames;
    let usable: Vec<&MotionTrack> = tracks
        .iter()
        .filter(|tr| {
            let ok = tr.frames.len() >= f;
            if !ok {
                log::warn!("sequence `{}` has {} motion frames, fewer than the window of {f}; skipped", tr.id, tr.frames.len());
            }
            ok
        })
        .collect();
    if usable.is_empty() {
        return Err(DnfError::invalid(format!("no sequence has at least {f} motion frames")));
    }
    let cond_dim = usable[0].condition.len();
    if usable.iter().any(|tr| tr.condition.len() != cond_dim) {
        return Err(DnfError::shape("shape conditions differ in length"));
    }
    let raw: Vec<Vec<Vec<f64>>> = usable.iter().map(|tr| tr.frames.iter().map(flatten_feature).collect()).collect();
    for seq in &raw {
        check_layout(seq, &layout)?;
    }
    let norm = TokenNorm::fit(&raw.concat())?;
    let cond_norm = TokenNorm::fit(&usable.iter().map(|tr| tr.condition.clone()).collect::<Vec<_>>())?;
    let data: Vec<Vec<Vec<f64>>> = raw
        .iter()
        .map(|seq| seq.iter().map(|x| norm.normalize(x)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let conds = usable.iter().map(|tr| cond_norm.normalize(&tr.condition)).collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = MotionDenoiser::new(denoiser, &layout.token_widths(), cond_dim, &mut rng)?;
    let mut opt = adam(net.store.vars(), cfg.lr)?;
    let steps = schedule.steps();
    let dim = layout.total();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let windows: Vec<Window> = chunk
                .iter()
                .map(|&i| {
                    let start = rng.random_range(0..=data[i].len() - f);
                    let mut frames = data[i][start..start + f].to_vec();
                    if rng.random_bool(cfg.reverse_prob) {
                        frames.reverse();
                    }
                    let c = rng.random_range(0..=cfg.cond_noise_max);
                    let condition = noise_condition(schedule, &conds[i], c, &mut rng)?;
                    Ok(Window { frames, condition })
                })
                .collect::<Result<_>>()?;
            let b = windows.len();
            let t: Vec<usize> = (0..b).map(|_| rng.random_range(0..steps)).collect();
            let mut x0 = Vec::with_capacity(b * f * dim);
            let mut xt = Vec::with_capacity(b * f * dim);
            for (w, &t) in windows.iter().zip(&t) {
                for frame in &w.frames {
                    x0.extend_from_slice(frame);
                    xt.extend(schedule.forward_noise(frame, t, &randn_vec(&mut rng, dim, 1.0))?);
                }
            }
            let x0 = Tensor::from_vec(x0, (b, f, dim), &device())?;
            let xt = Tensor::from_vec(xt, (b, f, dim), &device())?;
            let cond = rows_tensor(&windows.iter().map(|w| w.condition.clone()).collect::<Vec<_>>())?;
            let pred = net.forward(&xt, &t, &cond)?;
            let loss = x0_loss(&pred, &x0)?;
            total += finite_loss(&loss, &format!("motion diffusion epoch {epoch}"))?;
            batches += 1;
            candle_nn::Optimizer::backward_step(&mut opt, &loss)?;
        }
        log.losses.push(total / batches as f64);
    }
    let model = MotionDiffusionModel { denoiser: net, norm, cond_norm, layout, schedule: schedule.clone() };
    Ok((model, log))
}

/// Forward-diffuses a normalised condition by `c` steps; `c = 0` returns it unchanged.
pub fn noise_condition<R: Rng + ?Sized>(schedule: &DiffusionSchedule, cond: &[f64], c: usize, rng: &mut R) -> Result<Vec<f64>> {
    if c == 0 {
        return Ok(cond.to_vec());
    }
    let t = (c - 1).min(schedule.steps() - 1);
    schedule.forward_noise(cond, t, &randn_vec(rng, cond.len(), 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::{make_schedule, ScheduleKind};

    #[test]
    fn window_bookkeeping() {
        assert_eq!(window_count(15, 6, false), 10);
        assert_eq!(window_count(15, 6, true), 20);
        assert_eq!(window_count(6, 6, false), 1);
        assert_eq!(window_count(5, 6, true), 0);
    }

    #[test]
    fn zero_condition_noise_is_identity() {
        let s = make_schedule(100, ScheduleKind::Cosine).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = vec![0.3, -0.2, 1.5];
        assert_eq!(noise_condition(&s, &c, 0, &mut rng).unwrap(), c);
        let noised = noise_condition(&s, &c, 50, &mut rng).unwrap();
        assert_ne!(noised, c);
        assert!(noised.iter().all(|v| v.is_finite()));
    }
}

//! Auto-decoder training for the shape and motion spaces.

use std::path::Path;

use candle_core::{Tensor, Var};
use candle_nn::Optimizer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{assemble_input, clamped_l1_tensor, forward_dense, l1_tensor, LatentTable, MlpSpec, MlpWeights};
use crate::checkpoint::write_atomic;
use crate::error::{DnfError, Result};
use crate::geometry::{SdfSampleSet, Vec3};
use crate::nn;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoDecoderTraining {
    pub epochs: usize,
    /// Points drawn per instance (or per motion frame) in every step.
    pub points_per_instance: usize,
    pub lr_weights: f64,
    pub lr_latent: f64,
    pub lambda_reg: f64,
    /// SDF clamp distance; unused by the motion space.
    pub delta: f64,
    pub latent_std: f64,
    pub seed: u64,
}

impl Default for AutoDecoderTraining {
    fn default() -> Self {
        Self {
            epochs: 500,
            points_per_instance: 2048,
            lr_weights: 5e-4,
            lr_latent: 1e-3,
            lambda_reg: 1e-4,
            delta: 0.1,
            latent_std: 0.01,
            seed: 0,
        }
    }
}

/// Per-epoch loss curve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

impl TrainLog {
    pub fn initial(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// Means over consecutive, non-overlapping blocks of `window` epochs.
    pub fn block_means(&self, window: usize) -> Vec<f64> {
        self.losses
            .chunks_exact(window.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        self.losses
            .iter()
            .enumerate()
            .map(|(e, l)| format!("{}\n", serde_json::json!({ "epoch": e, "loss": l })))
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }
}

/// One shape instance: an id and its SDF samples.
#[derive(Debug, Clone, Copy)]
pub struct ShapeInstance<'a> {
    pub id: &'a str,
    pub samples: &'a SdfSampleSet,
}

/// Flow supervision of one sequence: canonical correspondence points and
/// their positions in frames `1..T`.
#[derive(Debug, Clone, Copy)]
pub struct MotionSequence<'a> {
    pub id: &'a str,
    pub canonical: &'a [Vec3],
    pub targets: &'a [Vec<Vec3>],
}

impl MotionSequence<'_> {
    pub fn frame_id(&self, t: usize) -> String {
        motion_frame_id(self.id, t)
    }
}

pub fn motion_frame_id(sequence: &str, t: usize) -> String {
    format!("{sequence}/{t}")
}

pub(crate) struct WeightVars {
    pub layers: Vec<(Var, Var)>,
}

impl WeightVars {
    pub fn new(w: &MlpWeights) -> Result<Self> {
        let layers = w
            .to_tensors()?
            .into_iter()
            .map(|(a, b)| Ok((Var::from_tensor(&a)?, Var::from_tensor(&b)?)))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn tensors(&self) -> Vec<(Tensor, Tensor)> {
        self.layers.iter().map(|(w, b)| (w.as_tensor().clone(), b.as_tensor().clone())).collect()
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|(w, b)| [w.clone(), b.clone()]).collect()
    }

    pub fn to_weights(&self) -> Result<MlpWeights> {
        MlpWeights::from_tensors(&self.tensors())
    }
}

fn check_config(cfg: &AutoDecoderTraining) -> Result<()> {
    if cfg.points_per_instance == 0 {
        return Err(DnfError::Config("points_per_instance must be positive".into()));
    }
    if !(cfg.lr_weights > 0.0 && cfg.lr_latent > 0.0) {
        return Err(DnfError::Config("learning rates must be positive".into()));
    }
    Ok(())
}

/// Jointly optimises the shape network and one latent code per instance
/// under the clamped SDF loss plus `lambda_reg * mean |s|^2`.
pub fn train_shape_space(
    instances: &[ShapeInstance<'_>],
    spec: &MlpSpec,
    cfg: &AutoDecoderTraining,
) -> Result<(MlpWeights, LatentTable, TrainLog)> {
    spec.validate()?;
    check_config(cfg)?;
    if spec.output_dim() != 1 {
        return Err(DnfError::Config("shape network must have a single output".into()));
    }
    if instances.is_empty() {
        return Err(DnfError::invalid("shape training needs at least one instance"));
    }
    for inst in instances {
        inst.samples.validate()?;
        if inst.samples.len() == 0 {
            return Err(DnfError::invalid(format!("instance `{}` has no SDF samples", inst.id)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let weights = MlpWeights::init(spec, &mut rng);
    let ids: Vec<String> = instances.iter().map(|i| i.id.to_string()).collect();
    let codes = LatentTable::random(&ids, spec.cond_dim, cfg.latent_std, &mut rng);

    let wv = WeightVars::new(&weights)?;
    let cv = Var::from_tensor(&codes.to_tensor()?)?;
    let mut opt_w = nn::adam(wv.vars(), cfg.lr_weights)?;
    let mut opt_c = nn::adam(vec![cv.clone()], cfg.lr_latent)?;
    let b = cfg.points_per_instance;
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let mut pts = Vec::with_capacity(b * instances.len());
        let mut dist = Vec::with_capacity(b * instances.len());
        let mut idx = Vec::with_capacity(b * instances.len());
        for (i, inst) in instances.iter().enumerate() {
            let n = inst.samples.len();
            for _ in 0..b {
                let j = rng.random_range(0..n);
                pts.push(inst.samples.points[j]);
                dist.push(inst.samples.distances[j]);
                idx.push(i as u32);
            }
        }
        let x = nn::points_tensor(&pts)?;
        let d = Tensor::from_vec(dist, (pts.len(), 1), &nn::device())?;
        let idx = Tensor::from_vec(idx, pts.len(), &nn::device())?;
        let cond = cv.as_tensor().index_select(&idx, 0)?;
        let input = assemble_input(spec, &x, &cond)?;
        let pred = forward_dense(spec, &wv.tensors(), &input)?;
        let data = clamped_l1_tensor(&pred, &d, cfg.delta)?;
        let reg = (cv.as_tensor().sqr()?.sum(1)?.mean_all()? * cfg.lambda_reg)?;
        let loss = (data + reg)?;
        let value = nn::finite_loss(&loss, &format!("shape training epoch {epoch}"))?;
        log.losses.push(value);
        let grads = loss.backward()?;
        opt_w.step(&grads)?;
        opt_c.step(&grads)?;
    }
    log::debug!("shape space trained: loss {:?} -> {:?}", log.initial(), log.last());
    Ok((wv.to_weights()?, codes.with_codes_from(cv.as_tensor())?, log))
}

pub(crate) fn check_motion_sequences(sequences: &[MotionSequence<'_>], shape_codes: &LatentTable) -> Result<()> {
    if sequences.is_empty() {
        return Err(DnfError::invalid("motion training needs at least one sequence"));
    }
    for seq in sequences {
        if seq.canonical.is_empty() || seq.targets.is_empty() {
            return Err(DnfError::invalid(format!("sequence `{}` has no correspondence data", seq.id)));
        }
        if let Some(t) = seq.targets.iter().position(|f| f.len() != seq.canonical.len()) {
            return Err(DnfError::invalid(format!(
                "sequence `{}` frame {} has {} correspondences, canonical has {}",
                seq.id,
                t + 1,
                seq.targets[t].len(),
                seq.canonical.len()
            )));
        }
        if shape_codes.get(seq.id).is_none() {
            return Err(DnfError::invalid(format!("sequence `{}` has no shape code", seq.id)));
        }
    }
    Ok(())
}

/// Optimises the motion network and one motion code per (sequence, frame >= 1)
/// under the L1 flow loss; shape codes are read only.
pub fn train_motion_space(
    sequences: &[MotionSequence<'_>],
    shape_codes: &LatentTable,
    spec: &MlpSpec,
    cfg: &AutoDecoderTraining,
) -> Result<(MlpWeights, LatentTable, TrainLog)> {
    spec.validate()?;
    check_config(cfg)?;
    if spec.output_dim() != 3 {
        return Err(DnfError::Config("motion network must have three outputs".into()));
    }
    check_motion_sequences(sequences, shape_codes)?;
    if spec.cond_dim <= shape_codes.dim {
        return Err(DnfError::Config(format!(
            "motion conditioning width {} leaves no room for a motion code after the {}-dim shape code",
            spec.cond_dim, shape_codes.dim
        )));
    }
    let dm = spec.cond_dim - shape_codes.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let weights = MlpWeights::init(spec, &mut rng);
    let frame_ids: Vec<String> =
        sequences.iter().flat_map(|s| (1..=s.targets.len()).map(|t| s.frame_id(t))).collect();
    let codes = LatentTable::random(&frame_ids, dm, cfg.latent_std, &mut rng);

    let shape_rows: Vec<f64> = sequences
        .iter()
        .flat_map(|s| shape_codes.get(s.id).expect("checked").to_vec())
        .collect();
    let shape_t = Tensor::from_vec(shape_rows, (sequences.len(), shape_codes.dim), &nn::device())?;

    let wv = WeightVars::new(&weights)?;
    let mv = Var::from_tensor(&codes.to_tensor()?)?;
    let mut opt_w = nn::adam(wv.vars(), cfg.lr_weights)?;
    let mut opt_m = nn::adam(vec![mv.clone()], cfg.lr_latent)?;
    let b = cfg.points_per_instance;
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let mut pts = Vec::new();
        let mut flow = Vec::new();
        let mut sidx = Vec::new();
        let mut midx = Vec::new();
        let mut frame = 0u32;
        for (si, seq) in sequences.iter().enumerate() {
            let n = seq.canonical.len();
            for target in seq.targets {
                for _ in 0..b {
                    let j = rng.random_range(0..n);
                    pts.push(seq.canonical[j]);
                    flow.push(target[j] - seq.canonical[j]);
                    sidx.push(si as u32);
                    midx.push(frame);
                }
                frame += 1;
            }
        }
        let rows = pts.len();
        let x = nn::points_tensor(&pts)?;
        let y = nn::points_tensor(&flow)?;
        let s = shape_t.index_select(&Tensor::from_vec(sidx, rows, &nn::device())?, 0)?;
        let m = mv.as_tensor().index_select(&Tensor::from_vec(midx, rows, &nn::device())?, 0)?;
        let input = assemble_input(spec, &x, &Tensor::cat(&[&s, &m], 1)?)?;
        let pred = forward_dense(spec, &wv.tensors(), &input)?;
        let data = l1_tensor(&pred, &y)?;
        let reg = (mv.as_tensor().sqr()?.sum(1)?.mean_all()? * cfg.lambda_reg)?;
        let loss = (data + reg)?;
        let value = nn::finite_loss(&loss, &format!("motion training epoch {epoch}"))?;
        log.losses.push(value);
        let grads = loss.backward()?;
        opt_w.step(&grads)?;
        opt_m.step(&grads)?;
    }
    log::debug!("motion space trained: loss {:?} -> {:?}", log.initial(), log.last());
    Ok((wv.to_weights()?, codes.with_codes_from(mv.as_tensor())?, log))
}

/// Clamped SDF loss of one instance and its gradients with respect to every
/// weight, bias and latent entry.
pub fn shape_loss_gradients(
    spec: &MlpSpec,
    weights: &MlpWeights,
    latent: &[f64],
    points: &[Vec3],
    d_true: &[f64],
    delta: f64,
) -> Result<(f64, MlpWeights, Vec<f64>)> {
    weights.check(spec)?;
    if points.len() != d_true.len() {
        return Err(DnfError::shape("points and distances differ in length"));
    }
    let wv = WeightVars::new(weights)?;
    let s = Var::from_tensor(&Tensor::new(latent, &nn::device())?)?;
    let x = nn::points_tensor(points)?;
    let d = Tensor::from_vec(d_true.to_vec(), (d_true.len(), 1), &nn::device())?;
    let input = assemble_input(spec, &x, s.as_tensor())?;
    let loss = clamped_l1_tensor(&forward_dense(spec, &wv.tensors(), &input)?, &d, delta)?;
    gradients_of(&loss, &wv, &s)
}

/// L1 flow loss of one frame and its gradients with respect to every weight,
/// bias and motion-latent entry.
pub fn motion_loss_gradients(
    spec: &MlpSpec,
    weights: &MlpWeights,
    shape_code: &[f64],
    motion_code: &[f64],
    points: &[Vec3],
    flow_true: &[Vec3],
) -> Result<(f64, MlpWeights, Vec<f64>)> {
    weights.check(spec)?;
    if points.len() != flow_true.len() {
        return Err(DnfError::shape("points and flows differ in length"));
    }
    let wv = WeightVars::new(weights)?;
    let s = Tensor::new(shape_code, &nn::device())?;
    let m = Var::from_tensor(&Tensor::new(motion_code, &nn::device())?)?;
    let cond = Tensor::cat(&[&s, m.as_tensor()], 0)?;
    let input = assemble_input(spec, &nn::points_tensor(points)?, &cond)?;
    let loss = l1_tensor(&forward_dense(spec, &wv.tensors(), &input)?, &nn::points_tensor(flow_true)?)?;
    gradients_of(&loss, &wv, &m)
}

fn gradients_of(loss: &Tensor, wv: &WeightVars, code: &Var) -> Result<(f64, MlpWeights, Vec<f64>)> {
    let value = nn::finite_loss(loss, "gradient evaluation")?;
    let grads = loss.backward()?;
    let zero_or = |v: &Var| -> Result<Tensor> {
        Ok(match grads.get(v) {
            Some(g) => g.clone(),
            None => v.as_tensor().zeros_like()?,
        })
    };
    let layers: Vec<(Tensor, Tensor)> =
        wv.layers.iter().map(|(w, b)| Ok((zero_or(w)?, zero_or(b)?))).collect::<Result<_>>()?;
    let g_code = zero_or(code)?.to_vec1()?;
    Ok((value, MlpWeights::from_tensors(&layers)?, g_code))
}

//! Coefficient fine-tuning, shared residual training and unseen-shape fitting.
//!
//! Training runs the factorised form `h' = ((h V) * sigma) U^T + b` so that
//! every instance can carry its own coefficients inside one batch.

use std::collections::BTreeMap;

use candle_core::{Tensor, Var};
use candle_nn::Optimizer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CoefficientSet, DictionaryDecoder, Feature, MotionFeature, ShapeFeature};
use crate::error::{DnfError, Result};
use crate::fields::{
    assemble_input, clamped_l1_tensor, forward_with, l1_tensor, motion_frame_id, LatentTable, MotionSequence,
    ShapeInstance, TrainLog,
};
use crate::geometry::{SdfSampleSet, Vec3};
use crate::nn;

/// Coefficients per instance id (shapes) or per `sequence/frame` id (motion).
pub type CoefficientTable = BTreeMap<String, CoefficientSet>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub points_per_instance: usize,
    pub lr_gamma: f64,
    pub lr_residual: f64,
    pub lambda_orth: f64,
    /// SDF clamp distance; unused for motion.
    pub delta: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            points_per_instance: 2048,
            lr_gamma: 2e-3,
            lr_residual: 5e-4,
            lambda_orth: 0.1,
            delta: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Only the latent code moves; coefficients stay at their initial values.
    LatentOnly,
    LatentAndGamma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub points: usize,
    pub lr_latent: f64,
    pub lr_gamma: f64,
    pub lambda_reg: f64,
    pub delta: f64,
    pub latent_std: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { epochs: 300, points: 4096, lr_latent: 5e-3, lr_gamma: 5e-3, lambda_reg: 1e-4, delta: 0.1, latent_std: 0.01, seed: 0 }
    }
}

struct LayerTensors {
    u_k: Tensor,
    v_k: Tensor,
    res: Option<(Var, Var)>,
    bias: Tensor,
    active: Tensor,
}

pub(crate) struct DictTensors {
    layers: Vec<LayerTensors>,
}

impl DictTensors {
    fn new(decoder: &DictionaryDecoder) -> Result<Self> {
        let layers = decoder
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let res = if layer.rk() > 0 {
                    let u = nn::matrix_to_tensor(&layer.u_res)?;
                    let v = nn::matrix_to_tensor(&layer.v_res)?;
                    Some((Var::from_tensor(&u)?, Var::from_tensor(&v)?))
                } else {
                    None
                };
                let active: Vec<u32> = decoder.active_slots(l).into_iter().map(|i| i as u32).collect();
                Ok(LayerTensors {
                    u_k: nn::matrix_to_tensor(&layer.u_k)?,
                    v_k: nn::matrix_to_tensor(&layer.v_k)?,
                    res,
                    bias: nn::vector_to_tensor(&layer.bias)?,
                    active: Tensor::from_vec(active.clone(), active.len(), &nn::device())?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    fn residual_vars(&self) -> Vec<Var> {
        self.layers.iter().filter_map(|l| l.res.as_ref()).flat_map(|(u, v)| [u.clone(), v.clone()]).collect()
    }

    fn basis(&self, l: usize) -> Result<(Tensor, Tensor)> {
        let lt = &self.layers[l];
        Ok(match &lt.res {
            Some((u, v)) => (Tensor::cat(&[&lt.u_k, u.as_tensor()], 1)?, Tensor::cat(&[&lt.v_k, v.as_tensor()], 1)?),
            None => (lt.u_k.clone(), lt.v_k.clone()),
        })
    }

    /// `sigma` holds one tensor per layer, `B x r_l` or `1 x r_l`.
    fn forward(&self, decoder: &DictionaryDecoder, input: &Tensor, sigma: &[Tensor]) -> Result<Tensor> {
        let bases: Vec<(Tensor, Tensor)> = (0..self.layers.len()).map(|l| self.basis(l)).collect::<Result<_>>()?;
        forward_with(&decoder.spec, input, |l, h| {
            let (u, v) = &bases[l];
            let z = h.matmul(v)?.broadcast_mul(&sigma[l])?;
            Ok(z.matmul(&u.t()?)?.broadcast_add(&self.layers[l].bias)?)
        })
    }

    /// Active-slot coefficients of each layer for the given table rows.
    fn sigma(&self, gamma: &[Var], rows: Option<&Tensor>) -> Result<Vec<Tensor>> {
        self.layers
            .iter()
            .zip(gamma)
            .map(|(lt, g)| {
                let g = g.as_tensor().index_select(&lt.active, 1)?;
                let g = match rows {
                    Some(r) => g.index_select(r, 0)?,
                    None => g,
                };
                Ok(g.exp()?)
            })
            .collect()
    }

    fn orthogonality(&self) -> Result<Option<Tensor>> {
        let mut total: Option<Tensor> = None;
        for (u, v) in self.layers.iter().filter_map(|l| l.res.as_ref()) {
            let rk = u.as_tensor().dim(1)?;
            let eye = Tensor::eye(rk, nn::DTYPE, &nn::device())?;
            let dev = |m: &Tensor| -> Result<Tensor> { Ok((m.t()?.matmul(m)? - &eye)?.abs()?.mean_all()?) };
            let term = (dev(u.as_tensor())? + dev(v.as_tensor())?)?;
            total = Some(match total {
                Some(t) => (t + term)?,
                None => term,
            });
        }
        Ok(total)
    }

    fn write_residuals(&self, decoder: &DictionaryDecoder) -> Result<DictionaryDecoder> {
        let mut out = decoder.clone();
        for (layer, lt) in out.layers.iter_mut().zip(&self.layers) {
            if let Some((u, v)) = &lt.res {
                layer.u_res = nn::tensor_to_matrix(u.as_tensor())?;
                layer.v_res = nn::tensor_to_matrix(v.as_tensor())?;
            }
        }
        Ok(out)
    }
}

fn gamma_table(decoder: &DictionaryDecoder, inits: &[&CoefficientSet]) -> Result<Vec<Var>> {
    let w = decoder.token_width();
    (0..decoder.layers.len())
        .map(|l| {
            let flat: Vec<f64> = inits.iter().flat_map(|c| c.gamma[l].iter().copied()).collect();
            Ok(Var::from_tensor(&Tensor::from_vec(flat, (inits.len(), w), &nn::device())?)?)
        })
        .collect()
}

fn read_gamma_rows(gamma: &[Var], n: usize) -> Result<Vec<CoefficientSet>> {
    let per_layer: Vec<Vec<Vec<f64>>> = gamma.iter().map(|g| g.as_tensor().to_vec2()).collect::<candle_core::Result<_>>()?;
    Ok((0..n).map(|i| CoefficientSet { gamma: per_layer.iter().map(|rows| rows[i].clone()).collect() }).collect())
}

fn check_finetune(cfg: &FinetuneConfig) -> Result<()> {
    if cfg.points_per_instance == 0 || !(cfg.lr_gamma > 0.0) || !(cfg.lr_residual > 0.0) {
        return Err(DnfError::Config("fine-tuning needs positive point counts and learning rates".into()));
    }
    Ok(())
}

/// Fine-tunes one coefficient set per shape instance together with the shared
/// residual directions. Latent codes and the frozen dictionary are untouched.
pub fn finetune_shape(
    decoder: &DictionaryDecoder,
    instances: &[ShapeInstance<'_>],
    shape_codes: &LatentTable,
    cfg: &FinetuneConfig,
) -> Result<(DictionaryDecoder, CoefficientTable, TrainLog)> {
    check_finetune(cfg)?;
    if instances.is_empty() {
        return Err(DnfError::invalid("fine-tuning needs at least one instance"));
    }
    let mut codes = Vec::with_capacity(instances.len());
    for inst in instances {
        let c = shape_codes
            .get(inst.id)
            .ok_or_else(|| DnfError::invalid(format!("instance `{}` has no shape code", inst.id)))?;
        codes.extend_from_slice(c);
    }
    let codes = Tensor::from_vec(codes, (instances.len(), shape_codes.dim), &nn::device())?;
    let dt = DictTensors::new(decoder)?;
    let inits = vec![&decoder.base; instances.len()];
    let gamma = gamma_table(decoder, &inits)?;
    let mut opt_g = nn::adam(gamma.clone(), cfg.lr_gamma)?;
    let res_vars = dt.residual_vars();
    let mut opt_r = if res_vars.is_empty() { None } else { Some(nn::adam(res_vars, cfg.lr_residual)?) };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog::default();
    let b = cfg.points_per_instance;

    for epoch in 0..cfg.epochs {
        let mut pts = Vec::with_capacity(b * instances.len());
        let mut dist = Vec::with_capacity(b * instances.len());
        let mut idx = Vec::with_capacity(b * instances.len());
        for (i, inst) in instances.iter().enumerate() {
            for _ in 0..b {
                let j = rng.random_range(0..inst.samples.len());
                pts.push(inst.samples.points[j]);
                dist.push(inst.samples.distances[j]);
                idx.push(i as u32);
            }
        }
        let rows = pts.len();
        let idx = Tensor::from_vec(idx, rows, &nn::device())?;
        let input = assemble_input(&decoder.spec, &nn::points_tensor(&pts)?, &codes.index_select(&idx, 0)?)?;
        let pred = dt.forward(decoder, &input, &dt.sigma(&gamma, Some(&idx))?)?;
        let d = Tensor::from_vec(dist, (rows, 1), &nn::device())?;
        let mut loss = clamped_l1_tensor(&pred, &d, cfg.delta)?;
        if let Some(orth) = dt.orthogonality()? {
            loss = (loss + (orth * cfg.lambda_orth)?)?;
        }
        log.losses.push(nn::finite_loss(&loss, &format!("shape fine-tuning epoch {epoch}"))?);
        let grads = loss.backward()?;
        opt_g.step(&grads)?;
        if let Some(o) = opt_r.as_mut() {
            o.step(&grads)?;
        }
    }
    let table = instances
        .iter()
        .map(|i| i.id.to_string())
        .zip(read_gamma_rows(&gamma, instances.len())?)
        .collect();
    Ok((dt.write_residuals(decoder)?, table, log))
}

/// Fine-tunes one coefficient set per (sequence, frame) together with the
/// shared residual directions of the motion dictionary.
pub fn finetune_motion(
    decoder: &DictionaryDecoder,
    sequences: &[MotionSequence<'_>],
    shape_codes: &LatentTable,
    motion_codes: &LatentTable,
    cfg: &FinetuneConfig,
) -> Result<(DictionaryDecoder, CoefficientTable, TrainLog)> {
    check_finetune(cfg)?;
    crate::fields::check_motion_sequences(sequences, shape_codes)?;
    let mut cond = Vec::new();
    let mut frame_ids = Vec::new();
    for seq in sequences {
        let s = shape_codes.get(seq.id).expect("checked");
        for t in 1..=seq.targets.len() {
            let id = motion_frame_id(seq.id, t);
            let m = motion_codes
                .get(&id)
                .ok_or_else(|| DnfError::invalid(format!("sequence `{}` frame {t} has no motion code", seq.id)))?;
            cond.extend_from_slice(s);
            cond.extend_from_slice(m);
            frame_ids.push(id);
        }
    }
    let cond_dim = shape_codes.dim + motion_codes.dim;
    let cond = Tensor::from_vec(cond, (frame_ids.len(), cond_dim), &nn::device())?;
    let dt = DictTensors::new(decoder)?;
    let inits = vec![&decoder.base; frame_ids.len()];
    let gamma = gamma_table(decoder, &inits)?;
    let mut opt_g = nn::adam(gamma.clone(), cfg.lr_gamma)?;
    let res_vars = dt.residual_vars();
    let mut opt_r = if res_vars.is_empty() { None } else { Some(nn::adam(res_vars, cfg.lr_residual)?) };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog::default();
    let b = cfg.points_per_instance;

    for epoch in 0..cfg.epochs {
        let mut pts = Vec::new();
        let mut flow = Vec::new();
        let mut idx = Vec::new();
        let mut frame = 0u32;
        for seq in sequences {
            for target in seq.targets {
                for _ in 0..b {
                    let j = rng.random_range(0..seq.canonical.len());
                    pts.push(seq.canonical[j]);
                    flow.push(target[j] - seq.canonical[j]);
                    idx.push(frame);
                }
                frame += 1;
            }
        }
        let rows = pts.len();
        let idx = Tensor::from_vec(idx, rows, &nn::device())?;
        let input = assemble_input(&decoder.spec, &nn::points_tensor(&pts)?, &cond.index_select(&idx, 0)?)?;
        let pred = dt.forward(decoder, &input, &dt.sigma(&gamma, Some(&idx))?)?;
        let mut loss = l1_tensor(&pred, &nn::points_tensor(&flow)?)?;
        if let Some(orth) = dt.orthogonality()? {
            loss = (loss + (orth * cfg.lambda_orth)?)?;
        }
        log.losses.push(nn::finite_loss(&loss, &format!("motion fine-tuning epoch {epoch}"))?);
        let grads = loss.backward()?;
        opt_g.step(&grads)?;
        if let Some(o) = opt_r.as_mut() {
            o.step(&grads)?;
        }
    }
    let rows = read_gamma_rows(&gamma, frame_ids.len())?;
    let table = frame_ids.into_iter().zip(rows).collect();
    Ok((dt.write_residuals(decoder)?, table, log))
}

/// Optimises a shape feature against SDF observations with the decoder frozen.
pub fn fit_shape_feature(
    decoder: &DictionaryDecoder,
    observations: &SdfSampleSet,
    init: &ShapeFeature,
    mode: FitMode,
    cfg: &FitConfig,
) -> Result<(ShapeFeature, TrainLog)> {
    init.coeffs.check(decoder)?;
    observations.validate()?;
    if observations.len() == 0 || cfg.points == 0 {
        return Err(DnfError::invalid("fitting needs observations and a positive point count"));
    }
    let dt = DictTensors::new(decoder)?;
    let s = Var::from_tensor(&Tensor::new(init.latent.as_slice(), &nn::device())?)?;
    let gamma = gamma_table(decoder, &[&init.coeffs])?;
    let mut opt_s = nn::adam(vec![s.clone()], cfg.lr_latent)?;
    let mut opt_g = match mode {
        FitMode::LatentAndGamma => Some(nn::adam(gamma.clone(), cfg.lr_gamma)?),
        FitMode::LatentOnly => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let mut pts = Vec::with_capacity(cfg.points);
        let mut dist = Vec::with_capacity(cfg.points);
        for _ in 0..cfg.points {
            let j = rng.random_range(0..observations.len());
            pts.push(observations.points[j]);
            dist.push(observations.distances[j]);
        }
        let input = assemble_input(&decoder.spec, &nn::points_tensor(&pts)?, s.as_tensor())?;
        let pred = dt.forward(decoder, &input, &dt.sigma(&gamma, None)?)?;
        let d = Tensor::from_vec(dist, (pts.len(), 1), &nn::device())?;
        let reg = (s.as_tensor().sqr()?.sum_all()? * cfg.lambda_reg)?;
        let loss = (clamped_l1_tensor(&pred, &d, cfg.delta)? + reg)?;
        log.losses.push(nn::finite_loss(&loss, &format!("shape fitting epoch {epoch}"))?);
        let grads = loss.backward()?;
        opt_s.step(&grads)?;
        if let Some(o) = opt_g.as_mut() {
            o.step(&grads)?;
        }
    }
    let coeffs = read_gamma_rows(&gamma, 1)?.remove(0);
    Ok((Feature { latent: s.as_tensor().to_vec1()?, coeffs }, log))
}

/// Fits a fresh shape feature to an unseen shape: the latent starts from
/// `N(0, latent_std^2)` and the coefficients from `init_gamma`.
pub fn fit_unseen_shape(
    decoder: &DictionaryDecoder,
    observations: &SdfSampleSet,
    init_gamma: &CoefficientSet,
    mode: FitMode,
    cfg: &FitConfig,
) -> Result<(ShapeFeature, TrainLog)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let latent_dim = decoder.spec.cond_dim;
    let init = Feature { latent: nn::randn_vec(&mut rng, latent_dim, cfg.latent_std), coeffs: init_gamma.clone() };
    fit_shape_feature(decoder, observations, &init, mode, cfg)
}

fn per_layer_grads(gamma: &[Var], grads: &candle_core::backprop::GradStore) -> Result<Vec<Vec<f64>>> {
    gamma
        .iter()
        .map(|g| {
            Ok(match grads.get(g) {
                Some(t) => t.to_vec2::<f64>()?.remove(0),
                None => vec![0.0; g.as_tensor().dim(1)?],
            })
        })
        .collect()
}

/// Clamped SDF loss of a shape feature and its gradient with respect to every
/// coefficient slot (inert slots get zero).
pub fn shape_gamma_gradients(
    decoder: &DictionaryDecoder,
    feature: &ShapeFeature,
    points: &[Vec3],
    d_true: &[f64],
    delta: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    feature.coeffs.check(decoder)?;
    let dt = DictTensors::new(decoder)?;
    let gamma = gamma_table(decoder, &[&feature.coeffs])?;
    let s = Tensor::new(feature.latent.as_slice(), &nn::device())?;
    let input = assemble_input(&decoder.spec, &nn::points_tensor(points)?, &s)?;
    let pred = dt.forward(decoder, &input, &dt.sigma(&gamma, None)?)?;
    let d = Tensor::from_vec(d_true.to_vec(), (d_true.len(), 1), &nn::device())?;
    let loss = clamped_l1_tensor(&pred, &d, delta)?;
    let value = nn::finite_loss(&loss, "gradient evaluation")?;
    Ok((value, per_layer_grads(&gamma, &loss.backward()?)?))
}

/// L1 flow loss of a motion feature and its gradient with respect to every
/// coefficient slot.
pub fn motion_gamma_gradients(
    decoder: &DictionaryDecoder,
    s: &[f64],
    feature: &MotionFeature,
    points: &[Vec3],
    flow_true: &[Vec3],
) -> Result<(f64, Vec<Vec<f64>>)> {
    feature.coeffs.check(decoder)?;
    let dt = DictTensors::new(decoder)?;
    let gamma = gamma_table(decoder, &[&feature.coeffs])?;
    let cond: Vec<f64> = s.iter().chain(&feature.latent).copied().collect();
    let cond = Tensor::new(cond.as_slice(), &nn::device())?;
    let input = assemble_input(&decoder.spec, &nn::points_tensor(points)?, &cond)?;
    let pred = dt.forward(decoder, &input, &dt.sigma(&gamma, None)?)?;
    let loss = l1_tensor(&pred, &nn::points_tensor(flow_true)?)?;
    let value = nn::finite_loss(&loss, "gradient evaluation")?;
    Ok((value, per_layer_grads(&gamma, &loss.backward()?)?))
}

/// Factorised forward pass for one feature; used to cross-check the dense route.
#[cfg(test)]
pub(crate) fn factorised_shape_forward(decoder: &DictionaryDecoder, feature: &ShapeFeature, x: &[Vec3]) -> Result<Vec<f64>> {
    let dt = DictTensors::new(decoder)?;
    let gamma = gamma_table(decoder, &[&feature.coeffs])?;
    let s = Tensor::new(feature.latent.as_slice(), &nn::device())?;
    let input = assemble_input(&decoder.spec, &nn::points_tensor(x)?, &s)?;
    Ok(dt.forward(decoder, &input, &dt.sigma(&gamma, None)?)?.flatten_all()?.to_vec1()?)
}

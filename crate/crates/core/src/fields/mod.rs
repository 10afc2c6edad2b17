//! Coordinate MLPs: the shape SDF auto-decoder and the flow-field motion
//! auto-decoder, their losses and their training loops.

mod train;

use candle_core::Tensor;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Container;
use crate::error::{DnfError, Result};
use crate::geometry::Vec3;
use crate::nn;

pub(crate) use train::check_motion_sequences;
pub use train::{
    motion_frame_id, motion_loss_gradients, shape_loss_gradients, train_motion_space, train_shape_space, AutoDecoderTraining,
    MotionSequence, ShapeInstance, TrainLog,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CoordEncoding {
    None,
    Sinusoidal { n_freqs: usize },
}

impl CoordEncoding {
    pub fn dim(&self) -> usize {
        match self {
            CoordEncoding::None => 3,
            CoordEncoding::Sinusoidal { n_freqs } => 3 + 6 * n_freqs,
        }
    }
}

/// Architecture of a coordinate MLP. Layer `l` maps `F_l` inputs to
/// `layer_widths[l]` outputs; the first layer consumes `[encode(x); cond]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    /// Width of the conditioning vector (latent codes) appended to the encoded coordinates.
    pub cond_dim: usize,
    pub activation: Activation,
    /// Layer whose input is `[h; raw input]`.
    pub skip_layer: Option<usize>,
    pub coord_encoding: CoordEncoding,
}

impl MlpSpec {
    /// `n_layers` linear layers, `width` hidden units, skip at `n_layers / 2`.
    pub fn uniform(n_layers: usize, width: usize, cond_dim: usize, output_dim: usize, coord_encoding: CoordEncoding) -> Self {
        let mut layer_widths = vec![width; n_layers.saturating_sub(1)];
        layer_widths.push(output_dim);
        Self {
            layer_widths,
            cond_dim,
            activation: Activation::Relu,
            skip_layer: (n_layers >= 4).then_some(n_layers / 2),
            coord_encoding,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len()
    }

    pub fn input_dim(&self) -> usize {
        self.coord_encoding.dim() + self.cond_dim
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap_or(&0)
    }

    /// `(J, F)` = (outputs, inputs) of each layer's weight matrix.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut prev = self.input_dim();
        self.layer_widths
            .iter()
            .enumerate()
            .map(|(l, &j)| {
                let f = if Some(l) == self.skip_layer { prev + self.input_dim() } else { prev };
                prev = j;
                (j, f)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.n_layers();
        if l < 2 {
            return Err(DnfError::Config(format!("an MLP needs at least 2 layers, got {l}")));
        }
        if self.layer_widths.iter().any(|&w| w == 0) {
            return Err(DnfError::Config("layer widths must be positive".into()));
        }
        if let Some(s) = self.skip_layer {
            if s <= 1 || s >= l {
                return Err(DnfError::Config(format!("skip layer {s} must lie in (1, {l})")));
            }
        }
        Ok(())
    }
}

pub const OUTPUT_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// `J x F`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    pub layers: Vec<LayerWeights>,
}

impl MlpWeights {
    /// PyTorch-style uniform initialisation, with the output layer shrunk by
    /// [`OUTPUT_INIT_SCALE`].
    pub fn init<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Self {
        let n = spec.n_layers();
        let layers = spec
            .layer_shapes()
            .into_iter()
            .enumerate()
            .map(|(l, (j, f))| {
                let scale = if l + 1 == n { OUTPUT_INIT_SCALE } else { 1.0 };
                let bound = scale / (f as f64).sqrt();
                LayerWeights {
                    weight: DMatrix::from_fn(j, f, |_, _| rng.random_range(-bound..=bound)),
                    bias: DVector::from_fn(j, |_, _| rng.random_range(-bound..=bound)),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(j, f)| LayerWeights { weight: DMatrix::zeros(j, f), bias: DVector::zeros(j) })
            .collect();
        Self { layers }
    }

    pub fn check(&self, spec: &MlpSpec) -> Result<()> {
        let shapes = spec.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(DnfError::shape(format!(
                "spec has {} layers, weights have {}",
                shapes.len(),
                self.layers.len()
            )));
        }
        for (l, ((j, f), lw)) in shapes.iter().zip(&self.layers).enumerate() {
            if lw.weight.shape() != (*j, *f) || lw.bias.len() != *j {
                return Err(DnfError::shape(format!(
                    "layer {l}: expected {j}x{f} weight, got {:?} (bias {})",
                    lw.weight.shape(),
                    lw.bias.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_tensors(&self) -> Result<Vec<(Tensor, Tensor)>> {
        self.layers
            .iter()
            .map(|l| Ok((nn::matrix_to_tensor(&l.weight)?, nn::vector_to_tensor(&l.bias)?)))
            .collect()
    }

    pub fn from_tensors(tensors: &[(Tensor, Tensor)]) -> Result<Self> {
        let layers = tensors
            .iter()
            .map(|(w, b)| Ok(LayerWeights { weight: nn::tensor_to_matrix(w)?, bias: nn::tensor_to_vector(b)? }))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.layers {
            for x in l.weight.iter().chain(l.bias.iter()) {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn save_into(&self, c: &mut Container, prefix: &str) -> Result<()> {
        for (l, lw) in self.layers.iter().enumerate() {
            let (j, f) = lw.weight.shape();
            let row_major: Vec<f64> = lw.weight.transpose().as_slice().to_vec();
            c.push_f64(format!("{prefix}{l}.weight"), vec![j, f], &row_major)?;
            c.push_f64(format!("{prefix}{l}.bias"), vec![j], lw.bias.as_slice())?;
        }
        Ok(())
    }

    pub fn load_from(c: &Container, prefix: &str, spec: &MlpSpec) -> Result<Self> {
        let layers = spec
            .layer_shapes()
            .into_iter()
            .enumerate()
            .map(|(l, (j, f))| {
                let w = c.get_f64(&format!("{prefix}{l}.weight"), &[j, f])?;
                let b = c.get_f64(&format!("{prefix}{l}.bias"), &[j])?;
                Ok(LayerWeights { weight: DMatrix::from_row_slice(j, f, &w), bias: DVector::from_vec(b) })
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }
}

/// Per-instance latent codes, kept in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTable {
    pub dim: usize,
    ids: Vec<String>,
    codes: Vec<Vec<f64>>,
}

impl LatentTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, ids: Vec::new(), codes: Vec::new() }
    }

    /// `N(0, std^2)` codes for the given ids.
    pub fn random<R: Rng + ?Sized>(ids: &[String], dim: usize, std: f64, rng: &mut R) -> Self {
        let mut t = Self::new(dim);
        for id in ids {
            t.ids.push(id.clone());
            t.codes.push(nn::randn_vec(rng, dim, std));
        }
        t
    }

    pub fn insert(&mut self, id: impl Into<String>, code: Vec<f64>) -> Result<()> {
        if code.len() != self.dim {
            return Err(DnfError::shape(format!("code has {} entries, table dim is {}", code.len(), self.dim)));
        }
        if code.iter().any(|x| !x.is_finite()) {
            return Err(DnfError::numerical("latent code is not finite"));
        }
        let id = id.into();
        match self.ids.iter().position(|i| *i == id) {
            Some(i) => self.codes[i] = code,
            None => {
                self.ids.push(id);
                self.codes.push(code);
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.codes[i].as_slice())
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn codes(&self) -> &[Vec<f64>] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let flat: Vec<f64> = self.codes.iter().flatten().copied().collect();
        Ok(Tensor::from_vec(flat, (self.len(), self.dim), &nn::device())?)
    }

    pub fn with_codes_from(&self, t: &Tensor) -> Result<Self> {
        let rows: Vec<Vec<f64>> = t.to_vec2()?;
        if rows.len() != self.len() {
            return Err(DnfError::shape("latent tensor row count differs from table"));
        }
        Ok(Self { dim: self.dim, ids: self.ids.clone(), codes: rows })
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (id, code) in self.ids.iter().zip(&self.codes) {
            h.update(id.as_bytes());
            for x in code {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn save_into(&self, c: &mut Container, name: &str) -> Result<()> {
        let flat: Vec<f64> = self.codes.iter().flatten().copied().collect();
        c.push_f64(name, vec![self.len(), self.dim], &flat)?;
        c.set_meta(&format!("{name}.ids"), &self.ids)
    }

    pub fn load_from(c: &Container, name: &str) -> Result<Self> {
        let ids: Vec<String> = c.meta(&format!("{name}.ids"))?;
        let e = c.get(name)?;
        let dim = *e.shape.get(1).ok_or_else(|| DnfError::Format(format!("`{name}` is not a matrix")))?;
        let data = c.get_f64(name, &[ids.len(), dim])?;
        let codes = data.chunks(dim.max(1)).map(|r| r.to_vec()).take(ids.len()).collect();
        Ok(Self { dim, ids, codes })
    }
}

/// `[x, sin(2^k pi x), cos(2^k pi x)]_{k < n}` per coordinate block.
pub fn encode_coords(x: &Tensor, enc: &CoordEncoding) -> Result<Tensor> {
    match enc {
        CoordEncoding::None => Ok(x.clone()),
        CoordEncoding::Sinusoidal { n_freqs } => {
            let mut parts = vec![x.clone()];
            for k in 0..*n_freqs {
                let scaled = (x * (std::f64::consts::PI * 2f64.powi(k as i32)))?;
                parts.push(scaled.sin()?);
                parts.push(scaled.cos()?);
            }
            Ok(Tensor::cat(&parts, 1)?)
        }
    }
}

/// Runs the MLP on a prepared input batch (`B x input_dim`), delegating each
/// layer's affine map to `linear(layer, h)`.
pub fn forward_with<F>(spec: &MlpSpec, input: &Tensor, mut linear: F) -> Result<Tensor>
where
    F: FnMut(usize, &Tensor) -> Result<Tensor>,
{
    let n = spec.n_layers();
    let mut h = input.clone();
    for l in 0..n {
        if Some(l) == spec.skip_layer {
            h = Tensor::cat(&[&h, input], 1)?;
        }
        h = linear(l, &h)?;
        if l + 1 < n {
            h = match spec.activation {
                Activation::Relu => h.relu()?,
            };
        }
    }
    Ok(h)
}

/// Dense forward pass with explicit weights.
pub fn forward_dense(spec: &MlpSpec, layers: &[(Tensor, Tensor)], input: &Tensor) -> Result<Tensor> {
    forward_with(spec, input, |l, h| {
        let (w, b) = &layers[l];
        Ok(h.matmul(&w.t()?)?.broadcast_add(b)?)
    })
}

/// `[encode(x); cond]` where `cond` is either one row (broadcast) or one row per point.
pub fn assemble_input(spec: &MlpSpec, x: &Tensor, cond: &Tensor) -> Result<Tensor> {
    let b = x.dim(0)?;
    let cond = if cond.rank() == 1 { cond.unsqueeze(0)? } else { cond.clone() };
    let cond = if cond.dim(0)? == 1 && b != 1 { cond.broadcast_as((b, cond.dim(1)?))?.contiguous()? } else { cond };
    if cond.dim(1)? != spec.cond_dim {
        return Err(DnfError::shape(format!(
            "conditioning has {} entries, network expects {}",
            cond.dim(1)?,
            spec.cond_dim
        )));
    }
    Ok(Tensor::cat(&[&encode_coords(x, &spec.coord_encoding)?, &cond], 1)?)
}

fn concat_codes(spec: &MlpSpec, codes: &[&[f64]]) -> Result<Tensor> {
    let cond: Vec<f64> = codes.iter().flat_map(|c| c.iter().copied()).collect();
    if cond.len() != spec.cond_dim {
        return Err(DnfError::shape(format!(
            "latent codes have {} entries in total, network expects {}",
            cond.len(),
            spec.cond_dim
        )));
    }
    Ok(Tensor::from_vec(cond, spec.cond_dim, &nn::device())?)
}

/// Signed distance `f(s, x)` for a batch of points.
pub fn shape_forward(spec: &MlpSpec, weights: &MlpWeights, s: &[f64], x: &[Vec3]) -> Result<Vec<f64>> {
    weights.check(spec)?;
    if spec.output_dim() != 1 {
        return Err(DnfError::shape("shape network must have a single output"));
    }
    let cond = concat_codes(spec, &[s])?;
    let input = assemble_input(spec, &nn::points_tensor(x)?, &cond)?;
    let out = forward_dense(spec, &weights.to_tensors()?, &input)?;
    Ok(out.flatten_all()?.to_vec1()?)
}

/// Flow `f(s, m, x)` for a batch of canonical points.
pub fn motion_forward(spec: &MlpSpec, weights: &MlpWeights, s: &[f64], m: &[f64], x: &[Vec3]) -> Result<Vec<Vec3>> {
    weights.check(spec)?;
    if spec.output_dim() != 3 {
        return Err(DnfError::shape("motion network must have three outputs"));
    }
    let cond = concat_codes(spec, &[s, m])?;
    let input = assemble_input(spec, &nn::points_tensor(x)?, &cond)?;
    nn::tensor_to_points(&forward_dense(spec, &weights.to_tensors()?, &input)?)
}

/// `mean |clamp(pred, delta) - clamp(true, delta)|`.
pub fn clamped_sdf_loss(d_pred: &[f64], d_true: &[f64], delta: f64) -> Result<f64> {
    if d_pred.len() != d_true.len() {
        return Err(DnfError::shape(format!("{} predictions for {} targets", d_pred.len(), d_true.len())));
    }
    if !(delta > 0.0) {
        return Err(DnfError::invalid(format!("clamp delta must be positive, got {delta}")));
    }
    if d_pred.is_empty() {
        return Ok(0.0);
    }
    let clamp = |x: f64| x.clamp(-delta, delta);
    let sum: f64 = d_pred.iter().zip(d_true).map(|(p, t)| (clamp(*p) - clamp(*t)).abs()).sum();
    Ok(sum / d_pred.len() as f64)
}

/// Mean absolute error over all points and components.
pub fn flow_l1_loss(pred: &[Vec3], target: &[Vec3]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(DnfError::shape(format!("{} flow predictions for {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).abs().sum()).sum();
    Ok(sum / (3 * pred.len()) as f64)
}

pub(crate) fn clamped_l1_tensor(pred: &Tensor, target: &Tensor, delta: f64) -> Result<Tensor> {
    let p = pred.clamp(-delta, delta)?;
    let t = target.clamp(-delta, delta)?;
    Ok((p - t)?.abs()?.mean_all()?)
}

pub(crate) fn l1_tensor(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    Ok((pred - target)?.abs()?.mean_all()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pts(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn layer_shapes_include_skip() {
        let spec = MlpSpec::uniform(8, 32, 16, 1, CoordEncoding::None);
        let shapes = spec.layer_shapes();
        assert_eq!(shapes[0], (32, 19));
        assert_eq!(shapes[4], (32, 32 + 19));
        assert_eq!(shapes[7], (1, 32));
        spec.validate().unwrap();
        let enc = CoordEncoding::Sinusoidal { n_freqs: 4 };
        assert_eq!(enc.dim(), 27);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = MlpSpec::uniform(8, 32, 16, 1, CoordEncoding::None);
        spec.skip_layer = Some(1);
        assert!(spec.validate().is_err());
        spec.skip_layer = Some(8);
        assert!(spec.validate().is_err());
        assert!(MlpSpec::uniform(1, 8, 1, 1, CoordEncoding::None).validate().is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = MlpSpec::uniform(4, 16, 8, 1, CoordEncoding::None);
        let w = MlpWeights::zeros(&spec);
        let out = shape_forward(&spec, &w, &[0.3; 8], &pts(10, 0)).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        let mspec = MlpSpec::uniform(4, 16, 8 + 4, 3, CoordEncoding::Sinusoidal { n_freqs: 2 });
        let mw = MlpWeights::zeros(&mspec);
        let flow = motion_forward(&mspec, &mw, &[0.1; 8], &[0.2; 4], &pts(10, 1)).unwrap();
        assert!(flow.iter().all(|f| f.norm() == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let spec = MlpSpec::uniform(4, 16, 8, 1, CoordEncoding::None);
        let w = MlpWeights::init(&spec, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(shape_forward(&spec, &w, &[0.0; 7], &pts(3, 0)).is_err());
        let other = MlpSpec::uniform(4, 12, 8, 1, CoordEncoding::None);
        assert!(shape_forward(&other, &w, &[0.0; 8], &pts(3, 0)).is_err());
    }

    #[test]
    fn forward_matches_plain_loop() {
        let spec = MlpSpec::uniform(5, 8, 4, 1, CoordEncoding::None);
        let w = MlpWeights::init(&spec, &mut ChaCha8Rng::seed_from_u64(3));
        let s = [0.1, -0.2, 0.3, 0.05];
        let x = pts(7, 4);
        let got = shape_forward(&spec, &w, &s, &x).unwrap();
        for (p, g) in x.iter().zip(got) {
            let input = DVector::from_iterator(7, [p.x, p.y, p.z].into_iter().chain(s));
            let mut h = input.clone();
            for (l, lw) in w.layers.iter().enumerate() {
                if Some(l) == spec.skip_layer {
                    h = DVector::from_iterator(h.len() + input.len(), h.iter().chain(input.iter()).copied());
                }
                h = &lw.weight * &h + &lw.bias;
                if l + 1 < w.layers.len() {
                    h.apply(|v| *v = v.max(0.0));
                }
            }
            assert!((h[0] - g).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_forward() {
        let spec = MlpSpec::uniform(4, 16, 8, 1, CoordEncoding::None);
        let w = MlpWeights::init(&spec, &mut ChaCha8Rng::seed_from_u64(1));
        let x = pts(50, 2);
        assert_eq!(shape_forward(&spec, &w, &[0.2; 8], &x).unwrap(), shape_forward(&spec, &w, &[0.2; 8], &x).unwrap());
    }

    #[test]
    fn clamped_loss_examples() {
        assert!((clamped_sdf_loss(&[0.2], &[0.05], 0.1).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(clamped_sdf_loss(&[0.3, -0.1], &[0.3, -0.1], 0.1).unwrap(), 0.0);
        assert!((clamped_sdf_loss(&[-0.5], &[0.5], 0.1).unwrap() - 0.2).abs() < 1e-15);
        assert!(clamped_sdf_loss(&[0.0], &[0.0, 1.0], 0.1).is_err());
        assert!(clamped_sdf_loss(&[0.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn flow_loss_examples() {
        let a = [Vec3::new(1.0, 2.0, 3.0)];
        let b = [Vec3::new(0.0, 2.0, 3.0)];
        assert!((flow_l1_loss(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(flow_l1_loss(&a, &a).unwrap(), 0.0);
        assert!(flow_l1_loss(&a, &[]).is_err());
    }

    #[test]
    fn flow_loss_matches_elementwise_oracle() {
        let a = pts(64, 7);
        let b = pts(64, 8);
        let mut acc = 0.0;
        for (p, t) in a.iter().zip(&b) {
            for k in 0..3 {
                acc += (p[k] - t[k]).abs();
            }
        }
        acc /= 192.0;
        assert!((flow_l1_loss(&a, &b).unwrap() - acc).abs() < 1e-9);
    }

    #[test]
    fn tensor_losses_agree_with_slices() {
        let p: Vec<f64> = (0..20).map(|i| (i as f64 - 10.0) * 0.03).collect();
        let t: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).sin() * 0.2).collect();
        let pt = Tensor::new(p.as_slice(), &nn::device()).unwrap();
        let tt = Tensor::new(t.as_slice(), &nn::device()).unwrap();
        let lt = nn::scalar(&clamped_l1_tensor(&pt, &tt, 0.1).unwrap()).unwrap();
        assert!((lt - clamped_sdf_loss(&p, &t, 0.1).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn latent_table_round_trip_and_checksum() {
        let ids: Vec<String> = (0..3).map(|i| format!("s{i}")).collect();
        let t = LatentTable::random(&ids, 5, 0.01, &mut ChaCha8Rng::seed_from_u64(0));
        let mut c = Container::new();
        t.save_into(&mut c, "codes").unwrap();
        let back = LatentTable::load_from(&c, "codes").unwrap();
        assert_eq!(back.ids(), t.ids());
        for (a, b) in back.codes().iter().zip(t.codes()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-8);
            }
        }
        assert_eq!(t.checksum(), t.clone().checksum());
        assert!(t.get("s1").is_some() && t.get("nope").is_none());
    }

    #[test]
    fn weights_checkpoint_round_trip() {
        let spec = MlpSpec::uniform(4, 6, 3, 1, CoordEncoding::None);
        let w = MlpWeights::init(&spec, &mut ChaCha8Rng::seed_from_u64(5));
        let mut c = Container::new();
        w.save_into(&mut c, "shape.").unwrap();
        let back = MlpWeights::load_from(&c, "shape.", &spec).unwrap();
        for (a, b) in w.layers.iter().zip(&back.layers) {
            assert!((&a.weight - &b.weight).amax() < 1e-7);
        }
    }
}

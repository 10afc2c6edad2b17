use candle_core::{Tensor, D};
use candle_nn::ops::softmax_last_dim;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schedule::timestep_embedding;
use crate::error::{DnfError, Result};
use crate::nn::{device, Linear, ParamStore, DTYPE};

const LN_EPS: f64 = 1e-5;
const EMBED_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Inner token dimension.
    pub token_dim: usize,
    /// Number of attention blocks.
    pub depth: usize,
    pub heads: usize,
    /// Frames per motion window.
    pub t_frames: usize,
    /// Context frames reused when extending a sequence.
    pub k_frames: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { token_dim: 256, depth: 8, heads: 8, t_frames: 6, k_frames: 2 }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.token_dim == 0 || self.heads == 0 || self.token_dim % self.heads != 0 {
            return Err(DnfError::Config(format!(
                "token_dim {} must be a positive multiple of the head count {}",
                self.token_dim, self.heads
            )));
        }
        if self.token_dim % 2 != 0 {
            return Err(DnfError::Config(format!("token_dim {} must be even", self.token_dim)));
        }
        if self.depth == 0 {
            return Err(DnfError::Config("denoiser depth must be at least 1".into()));
        }
        if self.k_frames >= self.t_frames {
            return Err(DnfError::Config(format!(
                "context k_frames {} must be smaller than the window t_frames {}",
                self.k_frames, self.t_frames
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: candle_core::Var,
    shift: candle_core::Var,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones(dim, DTYPE, &device())?)?,
            shift: store.add(format!("{name}.shift"), Tensor::zeros(dim, DTYPE, &device())?)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centred = x.broadcast_sub(&mean)?;
        let var = centred.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centred.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
        Ok(normed.broadcast_mul(self.gain.as_tensor())?.broadcast_add(self.shift.as_tensor())?)
    }
}

/// Multi-head attention from queries `x` to keys/values `ctx`.
#[derive(Debug, Clone)]
pub struct Attention {
    heads: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            heads,
            q: Linear::new(store, &format!("{name}.q"), dim, dim, None, rng)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim, None, rng)?,
            v: Linear::new(store, &format!("{name}.v"), dim, dim, None, rng)?,
            o: Linear::new(store, &format!("{name}.o"), dim, dim, None, rng)?,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, d) = x.dims3()?;
        Ok(x.reshape((b, n, self.heads, d / self.heads))?.transpose(1, 2)?.contiguous()?)
    }

    /// `x`: `B x N x D`, `ctx`: `B x M x D`, `mask`: additive `N x M`.
    pub fn forward(&self, x: &Tensor, ctx: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, n, d) = x.dims3()?;
        let q = self.split_heads(&self.q.forward(x)?)?;
        let k = self.split_heads(&self.k.forward(ctx)?)?;
        let v = self.split_heads(&self.v.forward(ctx)?)?;
        let scale = 1.0 / ((d / self.heads) as f64).sqrt();
        let mut scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?;
        if let Some(m) = mask {
            scores = scores.broadcast_add(m)?;
        }
        let attn = softmax_last_dim(&scores)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, n, d))?;
        self.o.forward(&out)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            up: Linear::new(store, &format!("{name}.up"), dim, 4 * dim, None, rng)?,
            down: Linear::new(store, &format!("{name}.down"), 4 * dim, dim, None, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.gelu_erf()?)
    }
}

/// Per-position input and output projections between raw token widths and
/// the inner dimension, plus the timestep embedding.
#[derive(Debug, Clone)]
struct TokenIo {
    widths: Vec<usize>,
    dim: usize,
    inputs: Vec<Linear>,
    outputs: Vec<Linear>,
    time1: Linear,
    time2: Linear,
    final_norm: LayerNorm,
}

impl TokenIo {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, widths: &[usize], dim: usize, rng: &mut R) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(DnfError::invalid(format!("token widths {widths:?} must be non-empty and positive")));
        }
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for (p, &w) in widths.iter().enumerate() {
            inputs.push(Linear::new(store, &format!("in.{p}"), w, dim, None, rng)?);
            outputs.push(Linear::new(store, &format!("out.{p}"), dim, w, Some(0.0), rng)?);
        }
        Ok(Self {
            widths: widths.to_vec(),
            dim,
            inputs,
            outputs,
            time1: Linear::new(store, "time.0", dim, dim, None, rng)?,
            time2: Linear::new(store, "time.1", dim, dim, None, rng)?,
            final_norm: LayerNorm::new(store, "final_norm", dim)?,
        })
    }

    fn total(&self) -> usize {
        self.widths.iter().sum()
    }

    /// `x`: `R x total` → `R x N x D`.
    fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let (_, total) = x.dims2()?;
        if total != self.total() {
            return Err(DnfError::shape(format!("tokens have {total} entries, the denoiser expects {}", self.total())));
        }
        let mut off = 0;
        let mut tokens = Vec::with_capacity(self.widths.len());
        for (w, lin) in self.widths.iter().zip(&self.inputs) {
            tokens.push(lin.forward(&x.narrow(1, off, *w)?)?);
            off += w;
        }
        Ok(Tensor::stack(&tokens, 1)?)
    }

    /// `h`: `R x N x D` → `R x total`.
    fn project_out(&self, h: &Tensor) -> Result<Tensor> {
        let h = self.final_norm.forward(h)?;
        let parts = self
            .outputs
            .iter()
            .enumerate()
            .map(|(p, lin)| lin.forward(&h.narrow(1, p, 1)?.squeeze(1)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&parts, 1)?)
    }

    /// Timestep embeddings, `B x D`.
    fn time(&self, t: &[usize]) -> Result<Tensor> {
        let rows = t.iter().map(|&s| timestep_embedding(s as f64, self.dim)).collect::<Result<Vec<_>>>()?;
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let e = Tensor::from_vec(flat, (t.len(), self.dim), &device())?;
        self.time2.forward(&self.time1.forward(&e)?.silu()?)
    }
}

#[derive(Debug, Clone)]
struct SelfBlock {
    norm1: LayerNorm,
    attn: Attention,
    norm2: LayerNorm,
    ff: FeedForward,
}

impl SelfBlock {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &DenoiserConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.token_dim;
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d)?,
            attn: Attention::new(store, &format!("{name}.attn"), d, cfg.heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), d, rng)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(x)?;
        let x = (x + self.attn.forward(&h, &h, None)?)?;
        Ok((&x + self.ff.forward(&self.norm2.forward(&x)?)?)?)
    }
}

fn check_steps(t: &[usize], batch: usize) -> Result<()> {
    if t.len() != batch {
        return Err(DnfError::shape(format!("{} diffusion steps for a batch of {batch}", t.len())));
    }
    Ok(())
}

/// Transformer over the `L + 1` tokens of a flattened shape feature,
/// predicting the clean feature.
#[derive(Debug, Clone)]
pub struct ShapeDenoiser {
    pub config: DenoiserConfig,
    pub store: ParamStore,
    io: TokenIo,
    pos: candle_core::Var,
    blocks: Vec<SelfBlock>,
}

impl ShapeDenoiser {
    pub fn new<R: Rng + ?Sized>(config: &DenoiserConfig, widths: &[usize], rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let d = config.token_dim;
        let io = TokenIo::new(&mut store, widths, d, rng)?;
        let pos = store.add("pos", crate::nn::randn(rng, &[widths.len(), d], EMBED_STD)?)?;
        let blocks = (0..config.depth)
            .map(|i| SelfBlock::new(&mut store, &format!("block.{i}"), config, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config: config.clone(), store, io, pos, blocks })
    }

    pub fn widths(&self) -> &[usize] {
        &self.io.widths
    }

    /// `x_t`: `B x total` noised normalised features, one step per row.
    pub fn forward(&self, x_t: &Tensor, t: &[usize]) -> Result<Tensor> {
        let (b, _) = x_t.dims2()?;
        check_steps(t, b)?;
        let mut h = self.io.embed(x_t)?.broadcast_add(self.pos.as_tensor())?;
        h = h.broadcast_add(&self.io.time(t)?.unsqueeze(1)?)?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        self.io.project_out(&h)
    }
}

#[derive(Debug, Clone)]
struct MotionBlock {
    norm_s: LayerNorm,
    spatial: Attention,
    norm_c: LayerNorm,
    cross: Attention,
    norm_t: LayerNorm,
    temporal: Attention,
    norm_f: LayerNorm,
    ff: FeedForward,
}

/// Transformer over a window of `t_frames` motion features conditioned on a
/// shape code.
#[derive(Debug, Clone)]
pub struct MotionDenoiser {
    pub config: DenoiserConfig,
    pub store: ParamStore,
    cond_dim: usize,
    io: TokenIo,
    pos: candle_core::Var,
    frame_pos: candle_core::Var,
    cond_in: Linear,
    blocks: Vec<MotionBlock>,
    isolate_frames: bool,
}

impl MotionDenoiser {
    pub fn new<R: Rng + ?Sized>(config: &DenoiserConfig, widths: &[usize], cond_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if cond_dim == 0 {
            return Err(DnfError::invalid("motion denoiser needs a non-empty condition"));
        }
        let mut store = ParamStore::new();
        let d = config.token_dim;
        let io = TokenIo::new(&mut store, widths, d, rng)?;
        let pos = store.add("pos", crate::nn::randn(rng, &[widths.len(), d], EMBED_STD)?)?;
        let frame_pos = store.add("frame_pos", crate::nn::randn(rng, &[config.t_frames, d], EMBED_STD)?)?;
        let cond_in = Linear::new(&mut store, "cond", cond_dim, d, None, rng)?;
        let mut blocks = Vec::with_capacity(config.depth);
        for i in 0..config.depth {
            let n = |s: &str| format!("block.{i}.{s}");
            blocks.push(MotionBlock {
                norm_s: LayerNorm::new(&mut store, &n("norm_s"), d)?,
                spatial: Attention::new(&mut store, &n("spatial"), d, config.heads, rng)?,
                norm_c: LayerNorm::new(&mut store, &n("norm_c"), d)?,
                cross: Attention::new(&mut store, &n("cross"), d, config.heads, rng)?,
                norm_t: LayerNorm::new(&mut store, &n("norm_t"), d)?,
                temporal: Attention::new(&mut store, &n("temporal"), d, config.heads, rng)?,
                norm_f: LayerNorm::new(&mut store, &n("norm_f"), d)?,
                ff: FeedForward::new(&mut store, &n("ff"), d, rng)?,
            });
        }
        Ok(Self { config: config.clone(), store, cond_dim, io, pos, frame_pos, cond_in, blocks, isolate_frames: false })
    }

    pub fn widths(&self) -> &[usize] {
        &self.io.widths
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    /// Test hook: when set, temporal attention only lets each frame attend to
    /// itself.
    pub fn set_frame_isolation(&mut self, on: bool) {
        self.isolate_frames = on;
    }

    /// `x_t`: `B x F x total`, `cond`: `B x cond_dim`.
    pub fn forward(&self, x_t: &Tensor, t: &[usize], cond: &Tensor) -> Result<Tensor> {
        let (b, f, total) = x_t.dims3()?;
        check_steps(t, b)?;
        if f != self.config.t_frames {
            return Err(DnfError::shape(format!("window has {f} frames, the denoiser expects {}", self.config.t_frames)));
        }
        let (cb, cd) = cond.dims2()?;
        if cb != b || cd != self.cond_dim {
            return Err(DnfError::shape(format!("condition is {cb}x{cd}, expected {b}x{}", self.cond_dim)));
        }
        let n = self.io.widths.len();
        let d = self.config.token_dim;
        let time = self.io.time(t)?;
        // B*F x N x D
        let mut h = self.io.embed(&x_t.reshape((b * f, total))?)?.broadcast_add(self.pos.as_tensor())?;
        h = h
            .reshape((b, f, n, d))?
            .broadcast_add(&self.frame_pos.as_tensor().unsqueeze(1)?)?
            .broadcast_add(&time.unsqueeze(1)?.unsqueeze(1)?)?
            .reshape((b * f, n, d))?;
        // condition and timestep tokens, repeated for every frame
        let ctx = Tensor::stack(&[self.cond_in.forward(cond)?, time], 1)?;
        let ctx = ctx.unsqueeze(1)?.broadcast_as((b, f, 2, d))?.reshape((b * f, 2, d))?;
        let mask = if self.isolate_frames {
            let eye = Tensor::eye(f, DTYPE, &device())?;
            Some(((eye - 1.0)? * 1e9)?)
        } else {
            None
        };
        for blk in &self.blocks {
            let s = blk.norm_s.forward(&h)?;
            h = (&h + blk.spatial.forward(&s, &s, None)?)?;
            h = (&h + blk.cross.forward(&blk.norm_c.forward(&h)?, &ctx, None)?)?;
            // B*N x F x D: same token position across frames
            let tm = h.reshape((b, f, n, d))?.transpose(1, 2)?.contiguous()?.reshape((b * n, f, d))?;
            let s = blk.norm_t.forward(&tm)?;
            let tm = (&tm + blk.temporal.forward(&s, &s, mask.as_ref())?)?;
            h = tm.reshape((b, n, f, d))?.transpose(1, 2)?.contiguous()?.reshape((b * f, n, d))?;
            h = (&h + blk.ff.forward(&blk.norm_f.forward(&h)?)?)?;
        }
        Ok(self.io.project_out(&h)?.reshape((b, f, total))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{randn, scalar};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> DenoiserConfig {
        DenoiserConfig { token_dim: 16, depth: 2, heads: 2, t_frames: 4, k_frames: 1 }
    }

    fn perturb(store: &ParamStore, rng: &mut ChaCha8Rng) {
        // give the zero-initialised output projections some weight
        for (_, v) in store.iter() {
            let t = v.as_tensor();
            let noise = randn(rng, t.dims(), 0.1).unwrap();
            v.set(&(t + noise).unwrap()).unwrap();
        }
    }

    fn max_abs(a: &Tensor, b: &Tensor) -> f64 {
        scalar(&(a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(small().validate().is_ok());
        assert!(DenoiserConfig { heads: 3, ..small() }.validate().is_err());
        assert!(DenoiserConfig { k_frames: 4, ..small() }.validate().is_err());
        assert!(DenoiserConfig { depth: 0, ..small() }.validate().is_err());
        assert!(DenoiserConfig::default().validate().is_ok());
    }

    #[test]
    fn layer_norm_matches_manual() {
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "n", 4).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 6.0]], &device()).unwrap();
        let y: Vec<f64> = ln.forward(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let v = [1.0, 2.0, 3.0, 6.0];
        let m = 3.0;
        let var = v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 4.0;
        for (a, b) in y.iter().zip(v) {
            assert!((a - (b - m) / (var + LN_EPS).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let att = Attention::new(&mut store, "a", 4, 2, &mut rng).unwrap();
        let x = randn(&mut rng, &[1, 3, 4], 1.0).unwrap();
        let got: Vec<Vec<f64>> = att.forward(&x, &x, None).unwrap().squeeze(0).unwrap().to_vec2().unwrap();
        let lin = |l: &Linear, v: &[f64]| -> Vec<f64> {
            let w: Vec<Vec<f64>> = l.weight.as_tensor().to_vec2().unwrap();
            let b: Vec<f64> = l.bias.as_tensor().to_vec1().unwrap();
            w.iter().zip(&b).map(|(r, b)| r.iter().zip(v).map(|(a, c)| a * c).sum::<f64>() + b).collect()
        };
        let rows: Vec<Vec<f64>> = x.squeeze(0).unwrap().to_vec2().unwrap();
        let (q, k, v): (Vec<_>, Vec<_>, Vec<_>) = (
            rows.iter().map(|r| lin(&att.q, r)).collect(),
            rows.iter().map(|r| lin(&att.k, r)).collect(),
            rows.iter().map(|r| lin(&att.v, r)).collect(),
        );
        for i in 0..3 {
            let mut concat = vec![0.0; 4];
            for h in 0..2 {
                let sl = h * 2..h * 2 + 2;
                let s: Vec<f64> = (0..3)
                    .map(|j| q[i][sl.clone()].iter().zip(&k[j][sl.clone()]).map(|(a, b)| a * b).sum::<f64>() / 2f64.sqrt())
                    .collect();
                let mx = s.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for j in 0..3 {
                    for c in sl.clone() {
                        concat[c] += e[j] / z * v[j][c];
                    }
                }
            }
            let want = lin(&att.o, &concat);
            for (a, b) in got[i].iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_denoiser_starts_at_zero_and_is_position_aware() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let widths = [3, 5, 5, 5];
        let net = ShapeDenoiser::new(&small(), &widths, &mut rng).unwrap();
        let x = randn(&mut rng, &[2, 18], 1.0).unwrap();
        let y0 = net.forward(&x, &[10, 500]).unwrap();
        assert_eq!(y0.dims(), &[2, 18]);
        assert_eq!(scalar(&y0.abs().unwrap().sum_all().unwrap()).unwrap(), 0.0);
        perturb(&net.store, &mut rng);
        // swap the two last (equal-width) tokens
        let swapped = Tensor::cat(&[x.narrow(1, 0, 8).unwrap(), x.narrow(1, 13, 5).unwrap(), x.narrow(1, 8, 5).unwrap()], 1).unwrap();
        let y = net.forward(&x, &[10, 10]).unwrap();
        let ys = net.forward(&swapped, &[10, 10]).unwrap();
        let ys_back = Tensor::cat(&[ys.narrow(1, 0, 8).unwrap(), ys.narrow(1, 13, 5).unwrap(), ys.narrow(1, 8, 5).unwrap()], 1).unwrap();
        assert!(max_abs(&y, &ys_back) > 1e-6);
        assert!(max_abs(&y, &net.forward(&x, &[11, 900]).unwrap()) > 1e-6);
        assert!(net.forward(&x, &[1]).is_err());
        assert!(net.forward(&x.narrow(1, 0, 17).unwrap(), &[1, 2]).is_err());
    }

    #[test]
    fn motion_denoiser_shapes_and_condition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = MotionDenoiser::new(&small(), &[2, 4, 4], 3, &mut rng).unwrap();
        perturb(&net.store, &mut rng);
        let x = randn(&mut rng, &[2, 4, 10], 1.0).unwrap();
        let c1 = randn(&mut rng, &[2, 3], 1.0).unwrap();
        let c2 = randn(&mut rng, &[2, 3], 1.0).unwrap();
        let y1 = net.forward(&x, &[5, 5], &c1).unwrap();
        assert_eq!(y1.dims(), &[2, 4, 10]);
        assert!(max_abs(&y1, &net.forward(&x, &[5, 5], &c2).unwrap()) > 1e-6);
        assert!(net.forward(&x.narrow(1, 0, 3).unwrap(), &[5, 5], &c1).is_err());
        assert!(net.forward(&x, &[5, 5], &c1.narrow(1, 0, 2).unwrap()).is_err());
    }

    #[test]
    fn frame_isolation_decouples_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = MotionDenoiser::new(&small(), &[2, 4], 3, &mut rng).unwrap();
        perturb(&net.store, &mut rng);
        let x = randn(&mut rng, &[1, 4, 6], 1.0).unwrap();
        let c = randn(&mut rng, &[1, 3], 1.0).unwrap();
        // change frame 3 only
        let mut rows: Vec<Vec<f64>> = x.squeeze(0).unwrap().to_vec2().unwrap();
        rows[3].iter_mut().for_each(|v| *v += 1.0);
        let x2 = Tensor::new(rows, &device()).unwrap().unsqueeze(0).unwrap();
        let frame0 = |net: &MotionDenoiser, x: &Tensor| net.forward(x, &[7], &c).unwrap().narrow(1, 0, 1).unwrap();
        assert!(max_abs(&frame0(&net, &x), &frame0(&net, &x2)) > 1e-6);
        net.set_frame_isolation(true);
        assert_eq!(max_abs(&frame0(&net, &x), &frame0(&net, &x2)), 0.0);
    }
}

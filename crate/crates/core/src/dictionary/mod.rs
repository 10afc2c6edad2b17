//! Layer-wise SVD dictionaries of trained coordinate MLPs.
//!
//! Every layer weight is rewritten as `W = U diag(sigma) V^T` with the top-`k`
//! singular directions frozen and `rk` shared residual directions trainable.
//! Instances differ only in their coefficients, stored as `gamma = ln sigma`.
//!
//! A layer with fewer than `k` (or `rk`) available directions uses only the
//! leading slots; the remaining coefficient slots are inert so that every
//! layer contributes one token of the same width `k + rk`.

mod finetune;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Container;
use crate::error::{DnfError, Result};
use crate::fields::{self, LayerWeights, MlpSpec, MlpWeights};
use crate::geometry::Vec3;
use crate::nn;

pub use finetune::{
    finetune_motion, finetune_shape, fit_shape_feature, fit_unseen_shape, motion_gamma_gradients,
    shape_gamma_gradients, CoefficientTable, FinetuneConfig, FitConfig, FitMode,
};

/// Singular values below this are floored before taking the log.
pub const SIGMA_FLOOR: f64 = 1e-12;
/// Initial coefficient of every residual direction.
pub const RESIDUAL_INIT: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDictionary {
    /// `J x k_l`, frozen.
    pub u_k: DMatrix<f64>,
    /// `F x k_l`, frozen.
    pub v_k: DMatrix<f64>,
    /// `J x rk_l`, trainable.
    pub u_res: DMatrix<f64>,
    /// `F x rk_l`, trainable.
    pub v_res: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl LayerDictionary {
    pub fn k(&self) -> usize {
        self.u_k.ncols()
    }

    pub fn rk(&self) -> usize {
        self.u_res.ncols()
    }

    /// `(J, F)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.u_k.nrows(), self.v_k.nrows())
    }
}

/// `W = U_k diag(sigma[..k]) V_k^T + U_res diag(sigma[k..]) V_res^T`.
pub fn reconstruct_layer(layer: &LayerDictionary, sigma: &[f64]) -> Result<DMatrix<f64>> {
    let (k, rk) = (layer.k(), layer.rk());
    if sigma.len() != k + rk {
        return Err(DnfError::shape(format!("layer has {} directions, got {} coefficients", k + rk, sigma.len())));
    }
    let mut w = scaled_product(&layer.u_k, &sigma[..k], &layer.v_k);
    if rk > 0 {
        w += scaled_product(&layer.u_res, &sigma[k..], &layer.v_res);
    }
    Ok(w)
}

fn scaled_product(u: &DMatrix<f64>, s: &[f64], v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut us = u.clone();
    for (mut c, &x) in us.column_iter_mut().zip(s) {
        c *= x;
    }
    us * v.transpose()
}

/// `mean |U_res^T U_res - I| + mean |V_res^T V_res - I|`.
pub fn orthogonality_loss(layer: &LayerDictionary) -> Result<f64> {
    let rk = layer.rk();
    if rk == 0 {
        return Err(DnfError::invalid("orthogonality loss needs residual directions"));
    }
    let dev = |m: &DMatrix<f64>| {
        let g = m.transpose() * m - DMatrix::<f64>::identity(rk, rk);
        g.iter().map(|x| x.abs()).sum::<f64>() / (rk * rk) as f64
    };
    Ok(dev(&layer.u_res) + dev(&layer.v_res))
}

/// Per-layer log-coefficients, each of length `k + rk`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub gamma: Vec<Vec<f64>>,
}

impl CoefficientSet {
    pub fn check(&self, decoder: &DictionaryDecoder) -> Result<()> {
        if self.gamma.len() != decoder.layers.len() {
            return Err(DnfError::shape(format!(
                "coefficients cover {} layers, decoder has {}",
                self.gamma.len(),
                decoder.layers.len()
            )));
        }
        let w = decoder.token_width();
        if let Some(l) = self.gamma.iter().position(|g| g.len() != w) {
            return Err(DnfError::shape(format!("layer {l} has {} coefficients, expected {w}", self.gamma[l].len())));
        }
        if self.gamma.iter().flatten().any(|g| !g.is_finite()) {
            return Err(DnfError::numerical("coefficient vector is not finite"));
        }
        Ok(())
    }

    /// Linear interpolation `(1 - t) a + t b`.
    pub fn lerp(&self, other: &Self, t: f64) -> Self {
        let gamma = self
            .gamma
            .iter()
            .zip(&other.gamma)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect())
            .collect();
        Self { gamma }
    }

    /// Element-wise mean of a non-empty collection.
    pub fn mean<'a>(sets: impl IntoIterator<Item = &'a CoefficientSet>) -> Result<Self> {
        let mut iter = sets.into_iter();
        let first = iter.next().ok_or_else(|| DnfError::invalid("mean of no coefficient sets"))?;
        let mut acc = first.clone();
        let mut n = 1.0;
        for s in iter {
            for (a, b) in acc.gamma.iter_mut().zip(&s.gamma) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            n += 1.0;
        }
        acc.gamma.iter_mut().flatten().for_each(|x| *x /= n);
        Ok(acc)
    }
}

/// A latent code plus one coefficient vector per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub latent: Vec<f64>,
    pub coeffs: CoefficientSet,
}

pub type ShapeFeature = Feature;
pub type MotionFeature = Feature;

/// Token widths of a flattened feature: one latent token then one token per layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub latent_dim: usize,
    pub n_layers: usize,
    pub token_width: usize,
}

impl FeatureLayout {
    pub fn token_widths(&self) -> Vec<usize> {
        std::iter::once(self.latent_dim).chain(std::iter::repeat_n(self.token_width, self.n_layers)).collect()
    }

    pub fn n_tokens(&self) -> usize {
        self.n_layers + 1
    }

    pub fn total(&self) -> usize {
        self.latent_dim + self.n_layers * self.token_width
    }
}

pub fn flatten_feature(feature: &Feature) -> Vec<f64> {
    feature.latent.iter().chain(feature.coeffs.gamma.iter().flatten()).copied().collect()
}

pub fn split_feature(v: &[f64], layout: &FeatureLayout) -> Result<Feature> {
    if v.len() != layout.total() {
        return Err(DnfError::shape(format!("flat feature has {} entries, layout needs {}", v.len(), layout.total())));
    }
    let (latent, rest) = v.split_at(layout.latent_dim);
    let gamma = rest.chunks(layout.token_width.max(1)).take(layout.n_layers).map(|c| c.to_vec()).collect();
    Ok(Feature { latent: latent.to_vec(), coeffs: CoefficientSet { gamma } })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryDecoder {
    pub spec: MlpSpec,
    /// Nominal main rank (coefficient slots `0..k`).
    pub k: usize,
    /// Nominal residual rank (coefficient slots `k..k + rk`).
    pub rk: usize,
    pub layers: Vec<LayerDictionary>,
    /// Coefficients reproducing the decomposed network (residuals at [`RESIDUAL_INIT`]).
    pub base: CoefficientSet,
}

impl DictionaryDecoder {
    pub fn token_width(&self) -> usize {
        self.k + self.rk
    }

    pub fn layout(&self, latent_dim: usize) -> FeatureLayout {
        FeatureLayout { latent_dim, n_layers: self.layers.len(), token_width: self.token_width() }
    }

    /// Coefficient slots used by layer `l`, main directions first.
    pub fn active_slots(&self, l: usize) -> Vec<usize> {
        let layer = &self.layers[l];
        (0..layer.k()).chain(self.k..self.k + layer.rk()).collect()
    }

    pub fn sigma(&self, coeffs: &CoefficientSet, l: usize) -> Vec<f64> {
        self.active_slots(l).into_iter().map(|i| coeffs.gamma[l][i].exp()).collect()
    }

    /// Dense weights for the given coefficients.
    pub fn reconstruct(&self, coeffs: &CoefficientSet) -> Result<MlpWeights> {
        coeffs.check(self)?;
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let sigma = self.sigma(coeffs, l);
                if let Some(s) = sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
                    return Err(DnfError::numerical(format!("layer {l}: coefficient {s} is not positive and finite")));
                }
                Ok(LayerWeights { weight: reconstruct_layer(layer, &sigma)?, bias: layer.bias.clone() })
            })
            .collect::<Result<_>>()?;
        Ok(MlpWeights { layers })
    }

    pub fn orthogonality_losses(&self) -> Result<Vec<f64>> {
        self.layers.iter().map(orthogonality_loss).collect()
    }

    /// Hash of the frozen parts: `U_k`, `V_k` and biases.
    pub fn frozen_checksum(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.layers {
            for x in l.u_k.iter().chain(l.v_k.iter()).chain(l.bias.iter()) {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Hash of every stored matrix, residuals included.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.frozen_checksum().as_bytes());
        for l in &self.layers {
            for x in l.u_res.iter().chain(l.v_res.iter()) {
                h.update(x.to_le_bytes());
            }
        }
        for x in self.base.gamma.iter().flatten() {
            h.update(x.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn save_into(&self, c: &mut Container, prefix: &str) -> Result<()> {
        c.set_meta(&format!("{prefix}spec"), &self.spec)?;
        c.set_meta(&format!("{prefix}k"), self.k)?;
        c.set_meta(&format!("{prefix}rk"), self.rk)?;
        let ranks: Vec<(usize, usize)> = self.layers.iter().map(|l| (l.k(), l.rk())).collect();
        c.set_meta(&format!("{prefix}layer_ranks"), &ranks)?;
        for (i, l) in self.layers.iter().enumerate() {
            for (name, m) in [("u_k", &l.u_k), ("v_k", &l.v_k), ("u_res", &l.u_res), ("v_res", &l.v_res)] {
                let row_major: Vec<f64> = m.transpose().as_slice().to_vec();
                c.push_f64(format!("{prefix}{i}.{name}"), vec![m.nrows(), m.ncols()], &row_major)?;
            }
            c.push_f64(format!("{prefix}{i}.bias"), vec![l.bias.len()], l.bias.as_slice())?;
        }
        let flat: Vec<f64> = self.base.gamma.iter().flatten().copied().collect();
        c.push_f64(format!("{prefix}base_gamma"), vec![self.layers.len(), self.token_width()], &flat)
    }

    pub fn load_from(c: &Container, prefix: &str) -> Result<Self> {
        let spec: MlpSpec = c.meta(&format!("{prefix}spec"))?;
        let k: usize = c.meta(&format!("{prefix}k"))?;
        let rk: usize = c.meta(&format!("{prefix}rk"))?;
        let ranks: Vec<(usize, usize)> = c.meta(&format!("{prefix}layer_ranks"))?;
        let shapes = spec.layer_shapes();
        if ranks.len() != shapes.len() {
            return Err(DnfError::Format("dictionary layer count differs from its spec".into()));
        }
        let mut layers = Vec::with_capacity(shapes.len());
        for (i, (&(j, f), &(kl, rkl))) in shapes.iter().zip(&ranks).enumerate() {
            let m = |name: &str, r: usize, cols: usize| -> Result<DMatrix<f64>> {
                Ok(DMatrix::from_row_slice(r, cols, &c.get_f64(&format!("{prefix}{i}.{name}"), &[r, cols])?))
            };
            layers.push(LayerDictionary {
                u_k: m("u_k", j, kl)?,
                v_k: m("v_k", f, kl)?,
                u_res: m("u_res", j, rkl)?,
                v_res: m("v_res", f, rkl)?,
                bias: DVector::from_vec(c.get_f64(&format!("{prefix}{i}.bias"), &[j])?),
            });
        }
        let w = k + rk;
        let flat = c.get_f64(&format!("{prefix}base_gamma"), &[layers.len(), w])?;
        let base = CoefficientSet { gamma: flat.chunks(w.max(1)).map(|r| r.to_vec()).take(layers.len()).collect() };
        Ok(Self { spec, k, rk, layers, base })
    }
}

/// Layer-wise SVD of `weights`, keeping the top `k` directions of every layer
/// (fewer where a layer has fewer). Returns the decoder and the coefficients
/// `gamma = ln max(sigma, 1e-12)` that reproduce the truncated network.
pub fn decompose(spec: &MlpSpec, weights: &MlpWeights, k: usize) -> Result<(DictionaryDecoder, CoefficientSet)> {
    weights.check(spec)?;
    let max_rank = spec.layer_shapes().iter().map(|&(j, f)| j.min(f)).max().unwrap_or(0);
    if k == 0 || k > max_rank {
        return Err(DnfError::invalid(format!("rank k = {k} must lie in [1, {max_rank}]")));
    }
    let mut layers = Vec::with_capacity(weights.layers.len());
    let mut gamma = Vec::with_capacity(weights.layers.len());
    for (l, lw) in weights.layers.iter().enumerate() {
        let (u, s, v) = sorted_svd(&lw.weight).ok_or_else(|| DnfError::numerical(format!("SVD of layer {l} did not converge")))?;
        let kl = k.min(s.len());
        let mut g = vec![0.0; k];
        for (gi, si) in g.iter_mut().zip(&s[..kl]) {
            *gi = si.max(SIGMA_FLOOR).ln();
        }
        gamma.push(g);
        layers.push(LayerDictionary {
            u_k: u.columns(0, kl).into_owned(),
            v_k: v.columns(0, kl).into_owned(),
            u_res: DMatrix::zeros(lw.weight.nrows(), 0),
            v_res: DMatrix::zeros(lw.weight.ncols(), 0),
            bias: lw.bias.clone(),
        });
    }
    let base = CoefficientSet { gamma };
    Ok((DictionaryDecoder { spec: spec.clone(), k, rk: 0, layers, base: base.clone() }, base))
}

/// Thin SVD with singular values sorted in descending order: `(U, sigma, V)`.
pub fn sorted_svd(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let svd = m.clone().try_svd(true, true, f64::EPSILON, 10_000)?;
    let u = svd.u?;
    let v = svd.v_t?.transpose();
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = DMatrix::from_fn(v.nrows(), order.len(), |r, c| v[(r, order[c])]);
    Some((u, order.iter().map(|&i| s[i]).collect(), v))
}

/// Appends `rk` orthonormal residual directions per layer (fewer where a layer
/// has fewer), with coefficients at [`RESIDUAL_INIT`].
pub fn extend(decoder: &DictionaryDecoder, rk: usize, seed: u64) -> Result<DictionaryDecoder> {
    if rk == 0 {
        return Err(DnfError::invalid("residual rank must be at least 1"));
    }
    if decoder.rk != 0 {
        return Err(DnfError::invalid("decoder already has residual directions"));
    }
    let max_rank = decoder.layers.iter().map(|l| l.shape().0.min(l.shape().1)).max().unwrap_or(0);
    if rk > max_rank {
        return Err(DnfError::invalid(format!("residual rank {rk} exceeds the largest layer rank {max_rank}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = decoder.clone();
    out.rk = rk;
    for (l, layer) in out.layers.iter_mut().enumerate() {
        let (j, f) = layer.shape();
        let rkl = rk.min(j).min(f);
        layer.u_res = random_orthonormal(j, rkl, &mut rng);
        layer.v_res = random_orthonormal(f, rkl, &mut rng);
        let g = &mut out.base.gamma[l];
        g.extend((0..rk).map(|i| if i < rkl { RESIDUAL_INIT.ln() } else { 0.0 }));
    }
    Ok(out)
}

/// Gaussian matrix orthonormalised by QR.
pub fn random_orthonormal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    if cols == 0 {
        return DMatrix::zeros(rows, 0);
    }
    let g = DMatrix::from_vec(rows, cols, nn::randn_vec(rng, rows * cols, 1.0));
    let q = g.qr().q();
    q.columns(0, cols).into_owned()
}

/// Re-targets coefficients of a decoder without residuals to one with them.
pub fn extend_coefficients(coeffs: &CoefficientSet, extended: &DictionaryDecoder) -> CoefficientSet {
    let gamma = coeffs
        .gamma
        .iter()
        .enumerate()
        .map(|(l, g)| {
            let mut g = g[..extended.k].to_vec();
            g.extend_from_slice(&extended.base.gamma[l][extended.k..]);
            g
        })
        .collect();
    CoefficientSet { gamma }
}

/// Signed distances of the shape field encoded by `feature`.
pub fn dict_shape_decode(decoder: &DictionaryDecoder, feature: &ShapeFeature, x: &[Vec3]) -> Result<Vec<f64>> {
    let w = decoder.reconstruct(&feature.coeffs)?;
    fields::shape_forward(&decoder.spec, &w, &feature.latent, x)
}

/// Flow of the motion field encoded by `feature` on the shape with code `s`.
pub fn dict_motion_decode(decoder: &DictionaryDecoder, s: &[f64], feature: &MotionFeature, x: &[Vec3]) -> Result<Vec<Vec3>> {
    let w = decoder.reconstruct(&feature.coeffs)?;
    fields::motion_forward(&decoder.spec, &w, s, &feature.latent, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::CoordEncoding;
    use proptest::prelude::*;
    use rand::Rng;

    fn single_layer(w: DMatrix<f64>) -> (MlpSpec, MlpWeights) {
        // a 2-layer spec whose first layer is `w`
        let (j, f) = w.shape();
        let spec = MlpSpec {
            layer_widths: vec![j, 1],
            cond_dim: f - 3,
            activation: fields::Activation::Relu,
            skip_layer: None,
            coord_encoding: CoordEncoding::None,
        };
        let weights = MlpWeights {
            layers: vec![
                LayerWeights { weight: w, bias: DVector::zeros(j) },
                LayerWeights { weight: DMatrix::from_element(1, j, 0.5), bias: DVector::zeros(1) },
            ],
        };
        (spec, weights)
    }

    fn random_net(seed: u64) -> (MlpSpec, MlpWeights) {
        let spec = MlpSpec::uniform(5, 12, 6, 1, CoordEncoding::None);
        let mut w = MlpWeights::init(&spec, &mut ChaCha8Rng::seed_from_u64(seed));
        // undo the small output init so the net behaves like a trained one
        let last = w.layers.last_mut().unwrap();
        last.weight /= fields::OUTPUT_INIT_SCALE;
        last.bias /= fields::OUTPUT_INIT_SCALE;
        (spec, w)
    }

    #[test]
    fn diagonal_svd() {
        let mut w = DMatrix::zeros(2, 4);
        w[(0, 0)] = 3.0;
        w[(1, 1)] = 1.0;
        let (u, s, v) = sorted_svd(&w).unwrap();
        assert!((s[0] - 3.0).abs() < 1e-12 && (s[1] - 1.0).abs() < 1e-12);
        assert!((u[(0, 0)].abs() - 1.0).abs() < 1e-12 && (u[(1, 1)].abs() - 1.0).abs() < 1e-12);
        assert!((v[(0, 0)].abs() - 1.0).abs() < 1e-12 && (v[(1, 1)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_error_of_diagonal() {
        let mut w = DMatrix::zeros(2, 4);
        w[(0, 0)] = 3.0;
        w[(1, 1)] = 1.0;
        let (spec, weights) = single_layer(w.clone());
        let (dec, base) = decompose(&spec, &weights, 1).unwrap();
        let rec = reconstruct_layer(&dec.layers[0], &dec.sigma(&base, 0)).unwrap();
        assert!(((rec - w).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_rank_round_trip() {
        let (spec, w) = random_net(0);
        let (dec, base) = decompose(&spec, &w, 12).unwrap();
        let rec = dec.reconstruct(&base).unwrap();
        for (a, b) in rec.layers.iter().zip(&w.layers) {
            assert!((&a.weight - &b.weight).amax() < 1e-10);
        }
        for l in &dec.layers {
            let eye_u = l.u_k.transpose() * &l.u_k;
            let eye_v = l.v_k.transpose() * &l.v_k;
            assert!((eye_u - DMatrix::identity(l.k(), l.k())).amax() < 1e-10);
            assert!((eye_v - DMatrix::identity(l.k(), l.k())).amax() < 1e-10);
        }
    }

    #[test]
    fn eckart_young_and_monotone_truncation() {
        let (spec, w) = random_net(1);
        let (_, full_s, _) = sorted_svd(&w.layers[2].weight).unwrap();
        let mut prev = f64::INFINITY;
        for k in 1..=12 {
            let (dec, base) = decompose(&spec, &w, k).unwrap();
            let rec = reconstruct_layer(&dec.layers[2], &dec.sigma(&base, 2)).unwrap();
            let err = (rec - &w.layers[2].weight).norm();
            let dropped: f64 = full_s[k..].iter().map(|s| s * s).sum::<f64>().sqrt();
            assert!((err - dropped).abs() <= 1e-6 * dropped.max(1e-9) + 1e-12, "k={k}: {err} vs {dropped}");
            assert!(err <= prev + 1e-12);
            prev = err;
        }
    }

    #[test]
    fn capped_layers_and_bad_ranks() {
        let (spec, w) = random_net(2);
        let (dec, base) = decompose(&spec, &w, 9).unwrap();
        assert_eq!(dec.layers[4].k(), 1);
        assert_eq!(base.gamma[4].len(), 9);
        assert!(decompose(&spec, &w, 0).is_err());
        assert!(decompose(&spec, &w, 13).is_err());
        assert!(extend(&dec, 0, 0).is_err());
        assert!(extend(&dec, 13, 0).is_err());
        let ext = extend(&dec, 4, 0).unwrap();
        assert_eq!(ext.layers[4].rk(), 1);
        assert_eq!(ext.token_width(), 13);
        assert_eq!(ext.active_slots(4), vec![0, 9]);
    }

    #[test]
    fn sigma_to_zero_gives_zero_matrix() {
        let (spec, w) = random_net(3);
        let (dec, _) = decompose(&spec, &w, 6).unwrap();
        let rec = reconstruct_layer(&dec.layers[1], &vec![1e-300; 6]).unwrap();
        assert!(rec.amax() < 1e-290);
        assert!(reconstruct_layer(&dec.layers[1], &[1.0]).is_err());
    }

    #[test]
    fn doubling_a_coefficient_is_a_rank_one_update() {
        let (spec, w) = random_net(4);
        let (dec, base) = decompose(&spec, &w, 8).unwrap();
        let layer = &dec.layers[1];
        let sigma = dec.sigma(&base, 1);
        let mut doubled = sigma.clone();
        doubled[3] *= 2.0;
        let delta = reconstruct_layer(layer, &doubled).unwrap() - reconstruct_layer(layer, &sigma).unwrap();
        let expected = layer.u_k.column(3) * layer.v_k.column(3).transpose() * sigma[3];
        assert!((delta - expected).amax() < 1e-12);
    }

    #[test]
    fn orthogonality_examples() {
        let layer = LayerDictionary {
            u_k: DMatrix::zeros(2, 0),
            v_k: DMatrix::zeros(2, 0),
            u_res: DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            v_res: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            bias: DVector::zeros(2),
        };
        assert!((orthogonality_loss(&layer).unwrap() - 1.0).abs() < 1e-15);
        let (spec, w) = random_net(5);
        let (dec, _) = decompose(&spec, &w, 6).unwrap();
        assert!(orthogonality_loss(&dec.layers[0]).is_err());
        let ext = extend(&dec, 5, 9).unwrap();
        for l in ext.orthogonality_losses().unwrap() {
            assert!(l < 1e-4, "{l}");
        }
    }

    #[test]
    fn extension_is_negligible() {
        let (spec, w) = random_net(6);
        let (dec, base) = decompose(&spec, &w, 12).unwrap();
        let ext = extend(&dec, 6, 1).unwrap();
        let before = dec.reconstruct(&base).unwrap();
        let after = ext.reconstruct(&ext.base).unwrap();
        for (a, b) in before.layers.iter().zip(&after.layers) {
            assert!((&a.weight - &b.weight).amax() < 1e-3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<Vec3> = (0..200).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let latent = vec![0.1; 6];
        let y0 = fields::shape_forward(&spec, &w, &latent, &x).unwrap();
        let y1 = dict_shape_decode(&ext, &Feature { latent, coeffs: ext.base.clone() }, &x).unwrap();
        let scale = y0.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-9);
        for (a, b) in y0.iter().zip(&y1) {
            assert!((a - b).abs() / scale < 1e-3);
        }
        assert_eq!(extend_coefficients(&base, &ext), ext.base);
    }

    #[test]
    fn dictionary_checkpoint_round_trip() {
        let (spec, w) = random_net(7);
        let (dec, _) = decompose(&spec, &w, 7).unwrap();
        let ext = extend(&dec, 3, 2).unwrap();
        let mut c = Container::new();
        ext.save_into(&mut c, "dict.").unwrap();
        let back = DictionaryDecoder::load_from(&c, "dict.").unwrap();
        assert_eq!(back.k, 7);
        assert_eq!(back.rk, 3);
        for (a, b) in back.layers.iter().zip(&ext.layers) {
            assert!((&a.u_res - &b.u_res).amax() < 1e-6);
            assert_eq!(a.u_k.shape(), b.u_k.shape());
        }
        let bytes = c.to_bytes().unwrap();
        let mut c2 = Container::new();
        back.save_into(&mut c2, "dict.").unwrap();
        assert_eq!(c2.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn paper_scale_layouts() {
        let shape = FeatureLayout { latent_dim: 384, n_layers: 8, token_width: 384 + 256 };
        assert_eq!(shape.token_widths(), [vec![384], vec![640; 8]].concat());
        let motion = FeatureLayout { latent_dim: 384, n_layers: 8, token_width: 768 + 512 };
        assert_eq!(motion.token_widths()[1], 1280);
        assert_eq!(motion.n_tokens(), 9);
    }

    proptest! {
        #[test]
        fn flatten_split_round_trip(seed in 0u64..500, d in 1usize..6, l in 1usize..5, w in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = Feature {
                latent: nn::randn_vec(&mut rng, d, 1.0),
                coeffs: CoefficientSet { gamma: (0..l).map(|_| nn::randn_vec(&mut rng, w, 1.0)).collect() },
            };
            let layout = FeatureLayout { latent_dim: d, n_layers: l, token_width: w };
            let flat = flatten_feature(&f);
            prop_assert_eq!(flat.len(), layout.total());
            prop_assert_eq!(split_feature(&flat, &layout).unwrap(), f);
            prop_assert!(split_feature(&flat[1..], &layout).is_err());
        }
    }
}

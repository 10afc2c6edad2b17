//! Small neural-network toolkit on top of candle: seeded parameter
//! initialisation, a named parameter store, linear layers and conversions
//! between candle tensors and nalgebra matrices.
//!
//! All randomness goes through an explicit seeded RNG; candle's own random
//! constructors are never used so training is reproducible.

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::checkpoint::Container;
use crate::error::{DnfError, Result};
use crate::geometry::Vec3;

pub const DTYPE: DType = DType::F64;

pub fn device() -> Device {
    Device::Cpu
}

pub fn randn<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| { let z: f64 = StandardNormal.sample(rng); std * z }).collect::<Vec<f64>>();
    Ok(Tensor::from_vec(data, shape, &device())?)
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Ok(Tensor::from_vec(data, shape, &device())?)
}

pub fn randn_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| { let z: f64 = StandardNormal.sample(rng); std * z }).collect::<Vec<f64>>()
}

pub fn points_tensor(points: &[Vec3]) -> Result<Tensor> {
    let flat: Vec<f64> = points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    Ok(Tensor::from_vec(flat, (points.len(), 3), &device())?)
}

pub fn tensor_to_points(t: &Tensor) -> Result<Vec<Vec3>> {
    let rows: Vec<Vec<f64>> = t.to_dtype(DTYPE)?.to_vec2()?;
    rows.into_iter()
        .map(|r| {
            if r.len() != 3 {
                return Err(DnfError::shape(format!("expected 3 columns, got {}", r.len())));
            }
            Ok(Vec3::new(r[0], r[1], r[2]))
        })
        .collect()
}

pub fn matrix_to_tensor(m: &DMatrix<f64>) -> Result<Tensor> {
    let (r, c) = m.shape();
    // nalgebra is column-major
    let data: Vec<f64> = m.transpose().as_slice().to_vec();
    Ok(Tensor::from_vec(data, (r, c), &device())?)
}

pub fn tensor_to_matrix(t: &Tensor) -> Result<DMatrix<f64>> {
    let (r, c) = t.dims2()?;
    let data: Vec<f64> = t.to_dtype(DTYPE)?.flatten_all()?.to_vec1()?;
    Ok(DMatrix::from_row_slice(r, c, &data))
}

pub fn vector_to_tensor(v: &DVector<f64>) -> Result<Tensor> {
    Ok(Tensor::from_vec(v.as_slice().to_vec(), v.len(), &device())?)
}

pub fn tensor_to_vector(t: &Tensor) -> Result<DVector<f64>> {
    Ok(DVector::from_vec(t.to_dtype(DTYPE)?.flatten_all()?.to_vec1()?))
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DTYPE)?.to_scalar::<f64>()?)
}

/// Returns the loss value, or a numerical error naming `what` if it is not finite.
pub fn finite_loss(t: &Tensor, what: &str) -> Result<f64> {
    let v = scalar(t)?;
    if !v.is_finite() {
        return Err(DnfError::numerical(format!("{what}: loss became {v}")));
    }
    Ok(v)
}

/// Ordered, named set of trainable variables.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, init: Tensor) -> Result<Var> {
        let name = name.into();
        if self.params.iter().any(|(n, _)| *n == name) {
            return Err(DnfError::invalid(format!("parameter `{name}` registered twice")));
        }
        let var = Var::from_tensor(&init)?;
        self.params.push((name, var.clone()));
        Ok(var)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.params.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.params.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn save_into(&self, c: &mut Container, prefix: &str) -> Result<()> {
        for (name, var) in &self.params {
            let t = var.as_tensor();
            let data: Vec<f64> = t.flatten_all()?.to_vec1()?;
            c.push_f64(format!("{prefix}{name}"), t.dims().to_vec(), &data)?;
        }
        Ok(())
    }

    pub fn load_from(&self, c: &Container, prefix: &str) -> Result<()> {
        for (name, var) in &self.params {
            let dims = var.as_tensor().dims().to_vec();
            let data = c.get_f64(&format!("{prefix}{name}"), &dims)?;
            var.set(&Tensor::from_vec(data, dims, &device())?)?;
        }
        Ok(())
    }

    /// Rounds every parameter to f32, matching what a checkpoint stores.
    pub fn round_to_f32(&self) -> Result<()> {
        for (_, var) in &self.params {
            let t = var.as_tensor().to_dtype(DType::F32)?.to_dtype(DTYPE)?;
            var.set(&t)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    /// PyTorch-style `U(-1/sqrt(in), 1/sqrt(in))` initialisation, or
    /// `N(0, std^2)` weights with zero bias when `std` is given.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        std: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let (w, b) = match std {
            Some(s) => (randn(rng, &[out_dim, in_dim], s)?, Tensor::zeros(out_dim, DTYPE, &device())?),
            None => {
                let bound = 1.0 / (in_dim as f64).sqrt();
                (uniform(rng, &[out_dim, in_dim], bound)?, uniform(rng, &[out_dim], bound)?)
            }
        };
        Ok(Self {
            weight: store.add(format!("{name}.weight"), w)?,
            bias: store.add(format!("{name}.bias"), b)?,
        })
    }

    /// Applies the layer to the last dimension of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().ok_or_else(|| DnfError::shape("linear input is a scalar"))?;
        let rows = x.elem_count() / in_dim.max(1);
        let flat = x.reshape((rows, in_dim))?;
        let y = flat.matmul(&self.weight.as_tensor().t()?)?.broadcast_add(self.bias.as_tensor())?;
        let mut out_dims = dims;
        *out_dims.last_mut().expect("non-empty") = self.bias.as_tensor().dim(0)?;
        Ok(y.reshape(out_dims)?)
    }
}

/// Adam (AdamW with zero weight decay) over a set of variables.
pub fn adam(vars: Vec<Var>, lr: f64) -> Result<AdamW> {
    Ok(AdamW::new(vars, ParamsAdamW { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 })?)
}

pub fn set_lr(opt: &mut AdamW, lr: f64) {
    opt.set_learning_rate(lr);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matrix_tensor_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = matrix_to_tensor(&m).unwrap();
        assert_eq!(t.to_vec2::<f64>().unwrap(), vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(tensor_to_matrix(&t).unwrap(), m);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = randn(&mut ChaCha8Rng::seed_from_u64(1), &[4, 4], 1.0).unwrap();
        let b = randn(&mut ChaCha8Rng::seed_from_u64(1), &[4, 4], 1.0).unwrap();
        assert_eq!(a.to_vec2::<f64>().unwrap(), b.to_vec2::<f64>().unwrap());
    }

    #[test]
    fn linear_handles_batched_input() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lin = Linear::new(&mut store, "l", 3, 5, None, &mut rng).unwrap();
        let x = randn(&mut rng, &[2, 4, 3], 1.0).unwrap();
        let y = lin.forward(&x).unwrap();
        assert_eq!(y.dims(), &[2, 4, 5]);
        let y0 = lin.forward(&x.get(0).unwrap()).unwrap();
        let diff = (y.get(0).unwrap() - y0).unwrap().abs().unwrap().max_all().unwrap();
        assert_eq!(scalar(&diff).unwrap(), 0.0);
        assert_eq!(store.len(), 2);
    }
}

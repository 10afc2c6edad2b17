use serde::{Deserialize, Serialize};

use crate::checkpoint::Container;
use crate::error::{DnfError, Result};

pub const STD_FLOOR: f64 = 1e-6;

/// Per-entry mean and standard deviation of flattened features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TokenNorm {
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        let first = features.first().ok_or_else(|| DnfError::invalid("normalisation needs at least one feature"))?;
        let d = first.len();
        if features.iter().any(|f| f.len() != d) {
            return Err(DnfError::shape("features differ in length"));
        }
        let n = features.len() as f64;
        let mut mean = vec![0.0; d];
        for f in features {
            for (m, x) in mean.iter_mut().zip(f) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for f in features {
            for ((v, x), m) in var.iter_mut().zip(f).zip(&mean) {
                *v += (x - m).powi(2);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(DnfError::shape(format!("feature has {} entries, normalisation covers {}", x.len(), self.dim())));
        }
        Ok(())
    }

    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(x.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect())
    }

    pub fn denormalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(x.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| x * s + m).collect())
    }

    pub fn save_into(&self, c: &mut Container, name: &str) -> Result<()> {
        c.push_f64(format!("{name}.mean"), vec![self.dim()], &self.mean)?;
        c.push_f64(format!("{name}.std"), vec![self.dim()], &self.std)
    }

    pub fn load_from(c: &Container, name: &str) -> Result<Self> {
        let d = c.get(&format!("{name}.mean"))?.shape.first().copied().unwrap_or(0);
        Ok(Self { mean: c.get_f64(&format!("{name}.mean"), &[d])?, std: c.get_f64(&format!("{name}.std"), &[d])? })
    }
}

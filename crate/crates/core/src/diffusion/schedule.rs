use serde::{Deserialize, Serialize};

use crate::error::{DnfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `beta` linear from 1e-4 to 2e-2.
    Linear,
    /// Squared-cosine `alpha_bar` with offset 0.008, betas clipped at 0.999.
    #[default]
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = DnfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(DnfError::Config(format!("unknown schedule kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub kind: ScheduleKind,
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<DiffusionSchedule> {
    if steps < 2 {
        return Err(DnfError::Config(format!("a schedule needs at least 2 steps, got {steps}")));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            let (lo, hi) = (1e-4, 2e-2);
            (0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect()
        }
        ScheduleKind::Cosine => {
            let s = 0.008;
            let f = |t: f64| ((t / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
            (0..steps).map(|i| (1.0 - f(i as f64 + 1.0) / f(i as f64)).clamp(1e-8, 0.999)).collect()
        }
    };
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for b in &betas {
        acc *= 1.0 - b;
        alpha_bars.push(acc);
    }
    Ok(DiffusionSchedule { kind, betas, alpha_bars })
}

impl DiffusionSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars
            .get(t)
            .copied()
            .ok_or_else(|| DnfError::invalid(format!("diffusion step {t} outside [0, {})", self.steps())))
    }

    /// `x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`.
    pub fn forward_noise(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        if x0.len() != eps.len() {
            return Err(DnfError::shape(format!("x0 has {} entries, noise {}", x0.len(), eps.len())));
        }
        let ab = self.alpha_bar(t)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
    }

    /// Timesteps visited by an `n`-step DDIM sampler, ascending: `(i + 1) T / n - 1`.
    pub fn ddim_timesteps(&self, n: usize) -> Result<Vec<usize>> {
        let t = self.steps();
        if n == 0 || n > t {
            return Err(DnfError::invalid(format!("DDIM step count {n} must lie in [1, {t}]")));
        }
        Ok((0..n).map(|i| (i + 1) * t / n - 1).collect())
    }
}

/// Sinusoidal embedding: `[sin(t w_i), cos(t w_i)]` with `w_i = 10000^(-i / (dim/2))`.
pub fn timestep_embedding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(DnfError::invalid(format!("embedding dimension must be even and positive, got {dim}")));
    }
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half).map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp()).collect();
    Ok(freqs.iter().map(|w| (t * w).sin()).chain(freqs.iter().map(|w| (t * w).cos())).collect())
}

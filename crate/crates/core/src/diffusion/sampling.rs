use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::schedule::DiffusionSchedule;
use crate::error::{DnfError, Result};
use crate::nn::randn_vec;

/// Predicts the clean sample from a noised one at diffusion step `t`.
pub trait X0Predictor {
    fn predict_x0(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>>;
}

impl<F: Fn(&[f64], usize) -> Result<Vec<f64>>> X0Predictor for F {
    fn predict_x0(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        self(x_t, t)
    }
}

/// Clean-window predictor over `t_frames` frames of flat normalised features.
pub trait WindowDenoiser {
    fn t_frames(&self) -> usize;
    fn k_frames(&self) -> usize;
    fn predict_window(&self, window: &[Vec<f64>], t: usize) -> Result<Vec<Vec<f64>>>;
}

/// One deterministic DDIM update in clean-sample form; `t_prev = None` is the
/// final step and returns `x0`.
pub fn ddim_step(schedule: &DiffusionSchedule, x_t: &[f64], x0: &[f64], t: usize, t_prev: Option<usize>) -> Result<Vec<f64>> {
    if x_t.len() != x0.len() {
        return Err(DnfError::shape(format!("x_t has {} entries, prediction {}", x_t.len(), x0.len())));
    }
    let ab = schedule.alpha_bar(t)?;
    let ab_prev = match t_prev {
        Some(p) => schedule.alpha_bar(p)?,
        None => return Ok(x0.to_vec()),
    };
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x_t
        .iter()
        .zip(x0)
        .map(|(x, x0)| {
            let eps = (x - sa * x0) / sn;
            ab_prev.sqrt() * x0 + (1.0 - ab_prev).sqrt() * eps
        })
        .collect())
}

/// Runs `n_steps` DDIM updates from `x_init`, descending through
/// [`DiffusionSchedule::ddim_timesteps`].
pub fn ddim_sample<P: X0Predictor + ?Sized>(model: &P, schedule: &DiffusionSchedule, n_steps: usize, x_init: Vec<f64>) -> Result<Vec<f64>> {
    let ts = schedule.ddim_timesteps(n_steps)?;
    let mut x = x_init;
    for i in (0..ts.len()).rev() {
        let x0 = model.predict_x0(&x, ts[i])?;
        x = ddim_step(schedule, &x, &x0, ts[i], i.checked_sub(1).map(|j| ts[j]))?;
    }
    Ok(x)
}

/// Samples a full window from pure noise.
pub fn sample_window<W: WindowDenoiser + ?Sized>(model: &W, schedule: &DiffusionSchedule, dim: usize, n_steps: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let f = model.t_frames();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = randn_vec(&mut rng, f * dim, 1.0);
    let flat_model = |x: &[f64], t: usize| -> Result<Vec<f64>> {
        let window: Vec<Vec<f64>> = x.chunks(dim).map(|c| c.to_vec()).collect();
        Ok(model.predict_window(&window, t)?.concat())
    };
    let out = ddim_sample(&flat_model, schedule, n_steps, init)?;
    Ok(out.chunks(dim).map(|c| c.to_vec()).collect())
}

/// Generates `n_new` frames after `context` (exactly `k_frames` frames) by
/// sliding windows: at every DDIM step the known frames are re-noised to the
/// current level and only the unknown slots are updated. Returns the new
/// frames only.
pub fn outpaint_extend<W: WindowDenoiser + ?Sized>(
    model: &W,
    schedule: &DiffusionSchedule,
    context: &[Vec<f64>],
    n_new: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let (f, k) = (model.t_frames(), model.k_frames());
    if n_new == 0 {
        return Err(DnfError::invalid("out-painting needs at least one new frame"));
    }
    if context.len() != k {
        return Err(DnfError::shape(format!("out-painting context has {} frames, expected {k}", context.len())));
    }
    let dim = context[0].len();
    if context.iter().any(|c| c.len() != dim) {
        return Err(DnfError::shape("context frames differ in length"));
    }
    let ts = schedule.ddim_timesteps(n_steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all: Vec<Vec<f64>> = context.to_vec();
    let mut produced = Vec::with_capacity(n_new);
    while produced.len() < n_new {
        let known: Vec<Vec<f64>> = all[all.len() - k..].to_vec();
        let mut unknown: Vec<Vec<f64>> = (0..f - k).map(|_| randn_vec(&mut rng, dim, 1.0)).collect();
        for i in (0..ts.len()).rev() {
            let t = ts[i];
            let mut window = Vec::with_capacity(f);
            for c in &known {
                let eps = randn_vec(&mut rng, dim, 1.0);
                window.push(schedule.forward_noise(c, t, &eps)?);
            }
            window.extend(unknown.iter().cloned());
            let pred = model.predict_window(&window, t)?;
            if pred.len() != f {
                return Err(DnfError::shape(format!("denoiser returned {} frames, expected {f}", pred.len())));
            }
            let t_prev = i.checked_sub(1).map(|j| ts[j]);
            unknown = unknown
                .iter()
                .zip(&pred[k..])
                .map(|(x, x0)| ddim_step(schedule, x, x0, t, t_prev))
                .collect::<Result<_>>()?;
        }
        for frame in unknown {
            if produced.len() < n_new {
                produced.push(frame.clone());
                all.push(frame);
            }
        }
    }
    Ok(produced)
}

/// First window from noise, then out-painting until `n_frames` frames exist.
pub fn sample_sequence<W: WindowDenoiser + ?Sized>(
    model: &W,
    schedule: &DiffusionSchedule,
    dim: usize,
    n_frames: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if n_frames == 0 {
        return Err(DnfError::invalid("cannot sample an empty sequence"));
    }
    let mut frames = sample_window(model, schedule, dim, n_steps, seed)?;
    if frames.len() < n_frames {
        let k = model.k_frames();
        let context = frames[frames.len() - k..].to_vec();
        let more = outpaint_extend(model, schedule, &context, n_frames - frames.len(), n_steps, seed.wrapping_add(1))?;
        frames.extend(more);
    }
    frames.truncate(n_frames);
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::{make_schedule, ScheduleKind};
    use std::cell::Cell;

    #[test]
    fn oracle_ddim_recovers_x0() {
        let s = make_schedule(1000, ScheduleKind::Cosine).unwrap();
        let x0 = vec![0.3, -1.2, 2.0];
        let eps = vec![0.5, 0.1, -0.7];
        let x_t = s.forward_noise(&x0, 999, &eps).unwrap();
        let oracle = |_: &[f64], _: usize| -> Result<Vec<f64>> { Ok(vec![0.3, -1.2, 2.0]) };
        for n in [1, 7, 50] {
            let out = ddim_sample(&oracle, &s, n, x_t.clone()).unwrap();
            assert_eq!(out, x0);
        }
        // intermediate iterates stay on the noising path of the true noise
        let x_prev = ddim_step(&s, &x_t, &x0, 999, Some(400)).unwrap();
        let want = s.forward_noise(&x0, 400, &eps).unwrap();
        for (a, b) in x_prev.iter().zip(&want) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn single_step_is_direct_prediction() {
        let s = make_schedule(100, ScheduleKind::Linear).unwrap();
        let calls = Cell::new(Vec::new());
        let model = |x: &[f64], t: usize| -> Result<Vec<f64>> {
            let mut c = calls.take();
            c.push(t);
            calls.set(c);
            Ok(x.iter().map(|v| v * 0.5).collect())
        };
        let out = ddim_sample(&model, &s, 1, vec![2.0, 4.0]).unwrap();
        assert_eq!(out, vec![1.0, 2.0]);
        assert_eq!(calls.take(), vec![99]);
    }

    /// Memorises one normalised sequence; identifies the window offset from
    /// the (noised) context frames.
    struct Memorised {
        seq: Vec<Vec<f64>>,
        schedule: DiffusionSchedule,
    }

    impl WindowDenoiser for Memorised {
        fn t_frames(&self) -> usize {
            4
        }
        fn k_frames(&self) -> usize {
            2
        }
        fn predict_window(&self, window: &[Vec<f64>], t: usize) -> Result<Vec<Vec<f64>>> {
            let a = self.schedule.alpha_bar(t)?.sqrt();
            let score = |s: usize| -> f64 {
                (0..2).map(|j| window[j].iter().zip(&self.seq[s + j]).map(|(x, y)| (x - a * y).powi(2)).sum::<f64>()).sum()
            };
            let best = (0..=self.seq.len() - 4).min_by(|&p, &q| score(p).total_cmp(&score(q))).unwrap();
            Ok(self.seq[best..best + 4].to_vec())
        }
    }

    #[test]
    fn outpainting_with_memorising_oracle_reproduces_continuation() {
        let schedule = make_schedule(1000, ScheduleKind::Cosine).unwrap();
        let seq: Vec<Vec<f64>> = (0..12).map(|i| (0..5).map(|j| ((i * 5 + j) as f64 * 0.37).sin() * 2.0).collect()).collect();
        let oracle = Memorised { seq: seq.clone(), schedule: schedule.clone() };
        let out = outpaint_extend(&oracle, &schedule, &seq[0..2], 10, 20, 3).unwrap();
        assert_eq!(out.len(), 10);
        for (a, b) in out.iter().zip(&seq[2..]) {
            assert_eq!(a, b);
        }
        assert!(outpaint_extend(&oracle, &schedule, &seq[0..2], 0, 20, 3).is_err());
        assert!(outpaint_extend(&oracle, &schedule, &seq[0..3], 2, 20, 3).is_err());
    }

    struct Echo;

    impl WindowDenoiser for Echo {
        fn t_frames(&self) -> usize {
            6
        }
        fn k_frames(&self) -> usize {
            2
        }
        fn predict_window(&self, window: &[Vec<f64>], _: usize) -> Result<Vec<Vec<f64>>> {
            Ok(window.to_vec())
        }
    }

    #[test]
    fn sequence_length_and_window_count() {
        let schedule = make_schedule(100, ScheduleKind::Cosine).unwrap();
        let single = outpaint_extend(&Echo, &schedule, &[vec![0.0; 3], vec![1.0; 3]], 4, 5, 0).unwrap();
        assert_eq!(single.len(), 4);
        for n in [1, 6, 15, 16] {
            assert_eq!(sample_sequence(&Echo, &schedule, 3, n, 5, 0).unwrap().len(), n);
        }
        let a = sample_sequence(&Echo, &schedule, 3, 15, 5, 0).unwrap();
        let b = sample_sequence(&Echo, &schedule, 3, 15, 5, 0).unwrap();
        let c = sample_sequence(&Echo, &schedule, 3, 15, 5, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}

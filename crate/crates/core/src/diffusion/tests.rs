use super::*;
use crate::dictionary::CoefficientSet;
use rand::Rng;

fn layout() -> FeatureLayout {
    FeatureLayout { latent_dim: 8, n_layers: 4, token_width: 8 }
}

fn features(n: usize, seed: u64) -> Vec<Feature> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = layout();
    (0..n)
        .map(|_| {
            let latent = (0..l.latent_dim).map(|_| rng.random_range(-0.05..0.05)).collect();
            let gamma = (0..l.n_layers)
                .map(|layer| (0..l.token_width).map(|j| (3.0 - j as f64 * 0.5) + layer as f64 + rng.random_range(-0.3..0.3)).collect())
                .collect();
            Feature { latent, coeffs: CoefficientSet { gamma } }
        })
        .collect()
}

fn small() -> DenoiserConfig {
    DenoiserConfig { token_dim: 64, depth: 2, heads: 4, t_frames: 6, k_frames: 2 }
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    num / b.iter().map(|y| y * y).sum::<f64>().sqrt()
}

/// Fixed evaluation probes: every feature at `per` random steps.
fn probes(model: &ShapeDiffusionModel, feats: &[Feature], per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut x0, mut t, mut eps) = (Vec::new(), Vec::new(), Vec::new());
    for f in feats {
        for _ in 0..per {
            x0.push(model.normalize(f).unwrap());
            t.push(rng.random_range(0..model.schedule.steps()));
            eps.push(randn_vec(&mut rng, layout().total(), 1.0));
        }
    }
    (x0, t, eps)
}

#[test]
fn initial_loss_is_the_feature_energy() {
    let feats = features(10, 0);
    let schedule = make_schedule(1000, ScheduleKind::Cosine).unwrap();
    let cfg = DiffusionTraining { epochs: 0, ..Default::default() };
    let (model, _) = train_shape_diffusion(&feats, layout(), &schedule, &small(), &cfg).unwrap();
    let (x0, t, eps) = probes(&model, &feats, 5, 1);
    let loss = shape_diffusion_loss(&model, &x0, &t, &eps).unwrap();
    let energy = x0.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / x0.len() as f64;
    assert!((loss / energy - 1.0).abs() < 0.5, "{loss} vs {energy}");
    // the loss of a frozen model is a function of (features, t, eps)
    assert_eq!(loss, shape_diffusion_loss(&model, &x0, &t, &eps).unwrap());
}

/// Loss of the Bayes-optimal clean-sample predictor (posterior mean over the
/// training set) on the given probes.
fn posterior_mean_loss(schedule: &DiffusionSchedule, train: &[Vec<f64>], x0: &[Vec<f64>], t: &[usize], eps: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for ((x, &t), e) in x0.iter().zip(t).zip(eps) {
        let ab = schedule.alpha_bars[t];
        let xt: Vec<f64> = x.iter().zip(e).map(|(a, n)| ab.sqrt() * a + (1.0 - ab).sqrt() * n).collect();
        let logw: Vec<f64> = train
            .iter()
            .map(|p| -p.iter().zip(&xt).map(|(a, b)| (b - ab.sqrt() * a).powi(2)).sum::<f64>() / (2.0 * (1.0 - ab)))
            .collect();
        let m = logw.iter().cloned().fold(f64::MIN, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = w.iter().sum();
        for (j, xj) in x.iter().enumerate() {
            let pred = train.iter().zip(&w).map(|(p, w)| p[j] * w).sum::<f64>() / z;
            total += (pred - xj).powi(2);
        }
    }
    total / x0.len() as f64
}

#[test]
fn shape_diffusion_learns_a_small_set() {
    let feats = features(10, 2);
    let schedule = make_schedule(1000, ScheduleKind::Cosine).unwrap();
    let cfg = DiffusionTraining { epochs: 1500, batch_size: 10, lr: 1e-3, ..Default::default() };
    let (untrained, _) = train_shape_diffusion(&feats, layout(), &schedule, &small(), &DiffusionTraining { epochs: 0, ..cfg.clone() }).unwrap();
    let (model, log) = train_shape_diffusion(&feats, layout(), &schedule, &small(), &cfg).unwrap();
    assert_eq!(log.losses.len(), 1500);
    let (x0, t, eps) = probes(&model, &feats, 50, 3);
    let before = shape_diffusion_loss(&untrained, &x0, &t, &eps).unwrap();
    let after = shape_diffusion_loss(&model, &x0, &t, &eps).unwrap();
    let train: Vec<Vec<f64>> = feats.iter().map(|f| model.normalize(f).unwrap()).collect();
    let floor = posterior_mean_loss(&schedule, &train, &x0, &t, &eps);
    assert!(after < 1.5 * floor, "{after} vs optimum {floor} (untrained {before})");

    let raw: Vec<Vec<f64>> = feats.iter().map(flatten_feature).collect();
    let mut hits = 0;
    for seed in 0..5 {
        let s = flatten_feature(&model.sample(50, seed).unwrap());
        let best = raw.iter().map(|r| rel_l2(&s, r)).fold(f64::INFINITY, f64::min);
        if best < 0.05 {
            hits += 1;
        }
    }
    assert!(hits >= 1);
    assert_ne!(model.sample(50, 0).unwrap(), model.sample(50, 1).unwrap());
}

#[test]
fn overfit_single_feature() {
    let feats = features(1, 4);
    let schedule = make_schedule(1000, ScheduleKind::Cosine).unwrap();
    let cfg = DiffusionTraining { epochs: 200, batch_size: 1, lr: 1e-3, ..Default::default() };
    let (model, _) = train_shape_diffusion(&feats, layout(), &schedule, &small(), &cfg).unwrap();
    let s = flatten_feature(&model.sample(50, 9).unwrap());
    assert!(rel_l2(&s, &flatten_feature(&feats[0])) < 0.05);
}

#[test]
fn training_is_seeded() {
    let feats = features(4, 5);
    let schedule = make_schedule(100, ScheduleKind::Linear).unwrap();
    let cfg = DiffusionTraining { epochs: 5, batch_size: 2, ..Default::default() };
    let (m1, l1) = train_shape_diffusion(&feats, layout(), &schedule, &small(), &cfg).unwrap();
    let (m2, l2) = train_shape_diffusion(&feats, layout(), &schedule, &small(), &cfg).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(m1.sample(10, 3).unwrap(), m2.sample(10, 3).unwrap());
    let bad = vec![Feature { latent: vec![0.0; 3], coeffs: CoefficientSet { gamma: vec![] } }];
    assert!(train_shape_diffusion(&bad, layout(), &schedule, &small(), &cfg).is_err());
}

#[test]
fn shape_model_checkpoint_round_trip() {
    let feats = features(3, 6);
    let schedule = make_schedule(100, ScheduleKind::Cosine).unwrap();
    let cfg = DiffusionTraining { epochs: 3, batch_size: 3, ..Default::default() };
    let (model, _) = train_shape_diffusion(&feats, layout(), &schedule, &small(), &cfg).unwrap();
    model.denoiser.store.round_to_f32().unwrap();
    let mut c = Container::new();
    model.save_into(&mut c, "shape.").unwrap();
    let back = ShapeDiffusionModel::load_from(&Container::from_bytes(&c.to_bytes().unwrap()).unwrap(), "shape.").unwrap();
    let x = randn_vec(&mut ChaCha8Rng::seed_from_u64(0), layout().total(), 1.0);
    assert_eq!(model.predict_x0(&x, 40).unwrap(), back.predict_x0(&x, 40).unwrap());
    for (a, b) in model.norm.mean.iter().zip(&back.norm.mean) {
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
    }
}

fn track(id: &str, n: usize, phase: f64) -> MotionTrack {
    let l = layout();
    let frames = (0..n)
        .map(|i| {
            let s = i as f64 / n as f64;
            let latent = (0..l.latent_dim).map(|j| 0.05 * (6.0 * s + j as f64 + phase).sin()).collect();
            let gamma = (0..l.n_layers)
                .map(|layer| (0..l.token_width).map(|j| 2.0 - 0.3 * j as f64 + 0.2 * (4.0 * s + layer as f64 + phase).cos()).collect())
                .collect();
            Feature { latent, coeffs: CoefficientSet { gamma } }
        })
        .collect();
    MotionTrack { id: id.into(), condition: vec![phase, 1.0 - phase, 0.5], frames }
}

#[test]
fn motion_diffusion_overfits_one_sequence() {
    let tr = track("a", 15, 0.3);
    let schedule = make_schedule(1000, ScheduleKind::Cosine).unwrap();
    let dcfg = DenoiserConfig { token_dim: 32, depth: 2, heads: 4, t_frames: 6, k_frames: 2 };
    let cfg = DiffusionTraining { epochs: 1500, batch_size: 1, lr: 1e-3, reverse_prob: 0.0, ..Default::default() };
    let (model, log) = train_motion_diffusion(std::slice::from_ref(&tr), layout(), &schedule, &dcfg, &cfg).unwrap();
    assert!(log.losses.iter().all(|l| l.is_finite()));
    let w = model.conditioned(&tr.condition).unwrap();
    let sampled = sample_window(&w, &model.schedule, layout().total(), 50, 1).unwrap();
    let sampled: Vec<f64> = sampled.iter().flat_map(|f| flatten_feature(&split_feature(&model.norm.denormalize(f).unwrap(), &layout()).unwrap())).collect();
    let raw: Vec<Vec<f64>> = tr.frames.iter().map(flatten_feature).collect();
    let best = (0..=raw.len() - 6).map(|s| rel_l2(&sampled, &raw[s..s + 6].concat())).fold(f64::INFINITY, f64::min);
    assert!(best < 0.1, "{best}");
}

#[test]
fn motion_model_sequences_and_context() {
    let tracks = vec![track("a", 15, 0.1), track("b", 15, 0.7), track("short", 4, 0.2)];
    let schedule = make_schedule(100, ScheduleKind::Cosine).unwrap();
    let dcfg = DenoiserConfig { token_dim: 16, depth: 1, heads: 2, t_frames: 6, k_frames: 2 };
    let cfg = DiffusionTraining { epochs: 3, batch_size: 2, ..Default::default() };
    let (model, _) = train_motion_diffusion(&tracks, layout(), &schedule, &dcfg, &cfg).unwrap();
    let seq = model.sample_sequence(&tracks[0].condition, 15, 10, 0).unwrap();
    assert_eq!(seq.len(), 15);
    assert!(seq.iter().all(|f| f.latent.len() == 8 && f.coeffs.gamma.len() == 4));
    let ctx = tracks[1].frames[3..5].to_vec();
    let out = model.extend(&tracks[1].condition, &ctx, 4, 10, 1).unwrap();
    assert_eq!(out.len(), 6);
    assert_eq!(&out[..2], &ctx[..]);
    assert!(model.extend(&tracks[1].condition, &ctx, 0, 10, 1).is_err());
    assert!(train_motion_diffusion(&tracks[2..], layout(), &schedule, &dcfg, &cfg).is_err());

    model.denoiser.store.round_to_f32().unwrap();
    let mut c = Container::new();
    model.save_into(&mut c, "m.").unwrap();
    let back = MotionDiffusionModel::load_from(&c, "m.").unwrap();
    let a = model.sample_sequence(&tracks[0].condition, 6, 5, 2).unwrap();
    let b = back.sample_sequence(&tracks[0].condition, 6, 5, 2).unwrap();
    for (fa, fb) in a.iter().zip(&b) {
        assert!(rel_l2(&flatten_feature(fa), &flatten_feature(fb)) < 1e-5);
    }
}

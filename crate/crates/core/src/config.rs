//! Pipeline configuration with `paper` (full-scale) and `desk` presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{desk_corpus, SampleConfig, SyntheticSpec};
use crate::dictionary::{FinetuneConfig, FitConfig};
use crate::diffusion::{DenoiserConfig, DiffusionTraining, ScheduleKind};
use crate::error::{DnfError, Result};
use crate::fields::{AutoDecoderTraining, CoordEncoding, MlpSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-scale hyperparameters: 384-dim latents, 512/1024-wide networks,
    /// k = 384/768, rk = 256/512, 1000/400 fine-tune epochs, token dim 1280, depth 32.
    Paper,
    /// Scaled-down values that train on a single desktop machine.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = DnfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(DnfError::Config(format!("unknown preset `{other}` (expected paper or desk)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSection {
    /// Corpus written by `synth-data`.
    pub synthetic: Vec<SyntheticSpec>,
    /// An existing dataset manifest to use instead of the synthetic corpus.
    pub manifest: Option<PathBuf>,
    /// Identities kept out of every training stage.
    pub held_out_identities: Vec<String>,
    pub samples: SampleConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldsSection {
    /// Shape network; `cond_dim` is the shape latent size.
    pub shape: MlpSpec,
    /// Motion network; `cond_dim` is shape latent plus motion latent size.
    pub motion: MlpSpec,
    pub shape_training: AutoDecoderTraining,
    pub motion_training: AutoDecoderTraining,
}

impl FieldsSection {
    pub fn shape_latent_dim(&self) -> usize {
        self.shape.cond_dim
    }

    pub fn motion_latent_dim(&self) -> usize {
        self.motion.cond_dim.saturating_sub(self.shape.cond_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionarySection {
    pub shape_k: usize,
    pub shape_rk: usize,
    pub motion_k: usize,
    pub motion_rk: usize,
    pub shape_finetune: FinetuneConfig,
    pub motion_finetune: FinetuneConfig,
    /// Fitting of unseen shapes.
    pub fit: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSection {
    pub schedule: ScheduleKind,
    pub schedule_steps: usize,
    pub sampling_steps: usize,
    pub shape_denoiser: DenoiserConfig,
    /// `t_frames` and `k_frames` set the sliding window.
    pub motion_denoiser: DenoiserConfig,
    pub shape_training: DiffusionTraining,
    pub motion_training: DiffusionTraining,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    /// Surface points per frame for the generation metrics.
    pub points_per_frame: usize,
    /// Surface points per frame for the reconstruction ablation.
    pub ablation_points: usize,
    /// Marching-cubes cells per axis when decoding shapes.
    pub mesh_resolution: usize,
    pub n_samples: usize,
    pub sample_frames: usize,
    pub novelty_bins: usize,
    /// Per-frame refits of the shape-feature ablation variants.
    pub ablation_fit: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub preset: Preset,
    /// Global seed; every stage seed is derived from it.
    pub seed: u64,
    pub dataset: DatasetSection,
    pub fields: FieldsSection,
    pub dictionary: DictionarySection,
    pub diffusion: DiffusionSection,
    pub eval: EvalSection,
}

fn motion_encoding() -> CoordEncoding {
    CoordEncoding::Sinusoidal { n_freqs: 4 }
}

impl PipelineConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn paper() -> Self {
        let latent = 384;
        let mut cfg = Self {
            preset: Preset::Paper,
            seed: 0,
            dataset: DatasetSection {
                synthetic: desk_corpus(0),
                manifest: None,
                held_out_identities: Vec::new(),
                samples: SampleConfig::paper(),
            },
            fields: FieldsSection {
                shape: MlpSpec::uniform(8, 512, latent, 1, CoordEncoding::None),
                motion: MlpSpec::uniform(8, 1024, 2 * latent, 3, motion_encoding()),
                shape_training: AutoDecoderTraining::default(),
                motion_training: AutoDecoderTraining::default(),
            },
            dictionary: DictionarySection {
                shape_k: 384,
                shape_rk: 256,
                motion_k: 768,
                motion_rk: 512,
                shape_finetune: FinetuneConfig { epochs: 1000, ..FinetuneConfig::default() },
                motion_finetune: FinetuneConfig { epochs: 400, ..FinetuneConfig::default() },
                fit: FitConfig::default(),
            },
            diffusion: DiffusionSection {
                schedule: ScheduleKind::Cosine,
                schedule_steps: 1000,
                sampling_steps: 50,
                shape_denoiser: DenoiserConfig { token_dim: 1280, depth: 32, heads: 16, t_frames: 6, k_frames: 2 },
                motion_denoiser: DenoiserConfig { token_dim: 1280, depth: 32, heads: 16, t_frames: 6, k_frames: 2 },
                shape_training: DiffusionTraining::default(),
                motion_training: DiffusionTraining::default(),
            },
            eval: EvalSection {
                points_per_frame: 2048,
                ablation_points: 10_000,
                mesh_resolution: 256,
                n_samples: 100,
                sample_frames: 16,
                novelty_bins: 20,
                ablation_fit: FitConfig::default(),
            },
        };
        cfg.derive_seeds();
        cfg
    }

    pub fn desk() -> Self {
        let latent = 64;
        let mut cfg = Self {
            preset: Preset::Desk,
            dataset: DatasetSection { samples: SampleConfig::desk(), ..Self::paper().dataset },
            fields: FieldsSection {
                shape: MlpSpec::uniform(8, 128, latent, 1, CoordEncoding::None),
                motion: MlpSpec::uniform(8, 256, 2 * latent, 3, motion_encoding()),
                shape_training: AutoDecoderTraining::default(),
                motion_training: AutoDecoderTraining::default(),
            },
            dictionary: DictionarySection {
                shape_k: 96,
                shape_rk: 64,
                motion_k: 192,
                motion_rk: 128,
                ..Self::paper().dictionary
            },
            diffusion: DiffusionSection {
                shape_denoiser: DenoiserConfig::default(),
                motion_denoiser: DenoiserConfig::default(),
                ..Self::paper().diffusion
            },
            eval: EvalSection { ablation_points: 2000, mesh_resolution: 128, ..Self::paper().eval },
            ..Self::paper()
        };
        cfg.derive_seeds();
        cfg
    }

    /// Minimal desk-style configuration (five short sequences, tiny networks)
    /// that runs every stage in seconds; used for smoke and determinism checks.
    pub fn smoke() -> Self {
        use crate::datagen::{DeformationKind, IdentityKind};
        use crate::geometry::{CorrespondenceSampling, SdfSampling};
        let latent = 8;
        let mk = |id: &str, identity: IdentityKind, deformation: DeformationKind, amplitude: f64| SyntheticSpec {
            identity_id: id.into(),
            identity,
            deformation,
            amplitude,
            n_frames: 4,
            seed: 0,
        };
        let ball = IdentityKind::Sphere { radius: 0.45 };
        let pill = IdentityKind::Capsule { radius: 0.3, half_length: 0.25 };
        let denoiser = DenoiserConfig { token_dim: 16, depth: 1, heads: 2, t_frames: 3, k_frames: 1 };
        let shape_training = AutoDecoderTraining { epochs: 200, points_per_instance: 512, lr_weights: 2e-3, lr_latent: 2e-3, ..AutoDecoderTraining::default() };
        let motion_training = AutoDecoderTraining { epochs: 60, points_per_instance: 256, ..AutoDecoderTraining::default() };
        let finetune = FinetuneConfig { epochs: 30, points_per_instance: 256, ..FinetuneConfig::default() };
        let fit = FitConfig { epochs: 10, points: 256, ..FitConfig::default() };
        let diffusion_training = DiffusionTraining { epochs: 100, batch_size: 4, cond_noise_max: 5, ..DiffusionTraining::default() };
        let mut cfg = Self {
            preset: Preset::Desk,
            seed: 0,
            dataset: DatasetSection {
                synthetic: vec![
                    mk("ball", ball.clone(), DeformationKind::Translate, 0.2),
                    mk("ball", ball, DeformationKind::Stretch, 0.2),
                    mk("pill", pill.clone(), DeformationKind::Bend, 0.6),
                    mk("pill", pill, DeformationKind::Twist, 0.8),
                    mk("brick", IdentityKind::Box { half: [0.35, 0.3, 0.3], rounding: 0.08 }, DeformationKind::Translate, -0.2),
                ],
                manifest: None,
                held_out_identities: vec!["brick".into()],
                samples: SampleConfig {
                    sdf: SdfSampling { n_uniform: 200, n_near: 600, band: 0.02 },
                    correspondences: CorrespondenceSampling { n: 300, noise_sigma: 0.002, noise_fraction: 0.5 },
                    seed: 0,
                },
            },
            fields: FieldsSection {
                shape: MlpSpec::uniform(3, 32, latent, 1, CoordEncoding::None),
                motion: MlpSpec::uniform(3, 32, 2 * latent, 3, CoordEncoding::Sinusoidal { n_freqs: 2 }),
                shape_training,
                motion_training,
            },
            dictionary: DictionarySection {
                shape_k: 24,
                shape_rk: 8,
                motion_k: 24,
                motion_rk: 8,
                shape_finetune: finetune.clone(),
                motion_finetune: finetune,
                fit: fit.clone(),
            },
            diffusion: DiffusionSection {
                schedule: ScheduleKind::Cosine,
                schedule_steps: 50,
                sampling_steps: 10,
                shape_denoiser: denoiser.clone(),
                motion_denoiser: denoiser,
                shape_training: diffusion_training.clone(),
                motion_training: diffusion_training,
            },
            eval: EvalSection {
                points_per_frame: 256,
                ablation_points: 256,
                mesh_resolution: 24,
                n_samples: 3,
                sample_frames: 4,
                novelty_bins: 4,
                ablation_fit: fit,
            },
        };
        cfg.derive_seeds();
        cfg
    }

    /// Sets every stage seed from the global seed.
    pub fn derive_seeds(&mut self) {
        let s = |salt: u64| self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(salt);
        self.dataset.samples.seed = s(1);
        self.fields.shape_training.seed = s(2);
        self.fields.motion_training.seed = s(3);
        self.dictionary.shape_finetune.seed = s(4);
        self.dictionary.motion_finetune.seed = s(5);
        self.dictionary.fit.seed = s(6);
        self.diffusion.shape_training.seed = s(7);
        self.diffusion.motion_training.seed = s(8);
        self.eval.ablation_fit.seed = s(9);
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.derive_seeds();
        self
    }

    /// Seed used when extending the dictionaries.
    pub fn extension_seed(&self) -> u64 {
        self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(10)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: DnfError| match e {
            DnfError::Config(m) => DnfError::Config(m),
            other => DnfError::Config(other.to_string()),
        };
        self.fields.shape.validate().map_err(cfg_err)?;
        self.fields.motion.validate().map_err(cfg_err)?;
        if self.fields.shape.output_dim() != 1 || self.fields.motion.output_dim() != 3 {
            return Err(DnfError::Config("shape network needs 1 output and motion network 3".into()));
        }
        if self.fields.motion_latent_dim() == 0 {
            return Err(DnfError::Config("motion cond_dim must exceed the shape latent size".into()));
        }
        let d = &self.dictionary;
        if d.shape_k == 0 || d.motion_k == 0 || d.shape_rk == 0 || d.motion_rk == 0 {
            return Err(DnfError::Config("dictionary ranks must be positive".into()));
        }
        self.diffusion.shape_denoiser.validate()?;
        self.diffusion.motion_denoiser.validate()?;
        if self.diffusion.schedule_steps < 2 || self.diffusion.sampling_steps == 0 {
            return Err(DnfError::Config("diffusion needs at least 2 schedule steps and 1 sampling step".into()));
        }
        if self.diffusion.sampling_steps > self.diffusion.schedule_steps {
            return Err(DnfError::Config("sampling steps exceed the schedule length".into()));
        }
        if self.dataset.manifest.is_none() && self.dataset.synthetic.is_empty() {
            return Err(DnfError::Config("dataset needs synthetic specs or a manifest".into()));
        }
        if self.eval.points_per_frame == 0 || self.eval.ablation_points == 0 || self.eval.mesh_resolution < 8 {
            return Err(DnfError::Config("eval point counts must be positive and mesh_resolution at least 8".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| DnfError::Config(format!("cannot parse config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DnfError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

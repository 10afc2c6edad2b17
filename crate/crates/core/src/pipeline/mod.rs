//! Stage orchestration over a run directory.
//!
//! Layout: `<run>/{config.json, stage_reports/, checkpoints/, samples/, reports/, data/}`.
//! Every stage records a content hash of its inputs and skips itself when a
//! completed report with the same hash and all outputs are present.

mod artifacts;
mod decode;
mod tasks;

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use artifacts::{CoefficientCheckpoint, FieldCheckpoint};
pub use decode::{decode_shape_mesh, dense_shape_mesh, dense_warp, warp_with_motion, DECODE_CHUNK};
pub use tasks::{FitReport, ReferenceSplit, SampleReport};

use crate::checkpoint::{write_atomic, Container};
use crate::config::PipelineConfig;
use crate::datagen::{
    generate_dataset, load_dataset, prepare_training_samples, split_holdout_identities, PreparedSequence,
    SequenceDataset, MANIFEST_FILE,
};
use crate::dictionary::{decompose, extend, finetune_motion, finetune_shape, Feature};
use crate::diffusion::{make_schedule, train_motion_diffusion, train_shape_diffusion, MotionTrack};
use crate::error::{DnfError, Result};
use crate::fields::{motion_frame_id, train_motion_space, train_shape_space, MotionSequence, ShapeInstance, TrainLog};

pub const CONFIG_FILE: &str = "config.json";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    SynthData,
    Prepare,
    TrainShape,
    TrainMotion,
    Decompose,
    FinetuneShape,
    FinetuneMotion,
    TrainShapeDiff,
    TrainMotionDiff,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::SynthData,
        Stage::Prepare,
        Stage::TrainShape,
        Stage::TrainMotion,
        Stage::Decompose,
        Stage::FinetuneShape,
        Stage::FinetuneMotion,
        Stage::TrainShapeDiff,
        Stage::TrainMotionDiff,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::SynthData => "synth-data",
            Stage::Prepare => "prepare",
            Stage::TrainShape => "train-shape",
            Stage::TrainMotion => "train-motion",
            Stage::Decompose => "decompose",
            Stage::FinetuneShape => "finetune-shape",
            Stage::FinetuneMotion => "finetune-motion",
            Stage::TrainShapeDiff => "train-shape-diff",
            Stage::TrainMotionDiff => "train-motion-diff",
        }
    }

    /// Stages whose outputs this stage reads.
    pub fn prerequisites(&self) -> &'static [Stage] {
        match self {
            Stage::SynthData => &[],
            Stage::Prepare => &[Stage::SynthData],
            Stage::TrainShape => &[Stage::Prepare],
            Stage::TrainMotion => &[Stage::Prepare, Stage::TrainShape],
            Stage::Decompose => &[Stage::TrainShape, Stage::TrainMotion],
            Stage::FinetuneShape => &[Stage::Prepare, Stage::TrainShape, Stage::Decompose],
            Stage::FinetuneMotion => &[Stage::Prepare, Stage::TrainShape, Stage::TrainMotion, Stage::Decompose],
            Stage::TrainShapeDiff => &[Stage::TrainShape, Stage::FinetuneShape],
            Stage::TrainMotionDiff => &[Stage::Prepare, Stage::TrainShape, Stage::TrainMotion, Stage::FinetuneMotion],
        }
    }

    /// Files written by the stage, relative to the run directory.
    pub fn outputs(&self) -> &'static [&'static str] {
        match self {
            Stage::SynthData => &["data/manifest.json"],
            Stage::Prepare => &["checkpoints/prepared.json"],
            Stage::TrainShape => &["checkpoints/shape_space.dnfc"],
            Stage::TrainMotion => &["checkpoints/motion_space.dnfc"],
            Stage::Decompose => &["checkpoints/shape_dict.dnfc", "checkpoints/motion_dict.dnfc"],
            Stage::FinetuneShape => &["checkpoints/shape_finetuned.dnfc"],
            Stage::FinetuneMotion => &["checkpoints/motion_finetuned.dnfc"],
            Stage::TrainShapeDiff => &["checkpoints/shape_diffusion.dnfc"],
            Stage::TrainMotionDiff => &["checkpoints/motion_diffusion.dnfc"],
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = DnfError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| DnfError::Config(format!("unknown stage `{s}`")))
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub input_hash: String,
    pub output_hash: String,
    pub duration_s: f64,
    pub final_losses: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
    /// The resolved configuration the stage ran with.
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub report: StageReport,
    /// True when the stage was already complete and nothing ran.
    pub skipped: bool,
}

/// Exclusive claim on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    /// Takes the lock, reclaiming it when the recorded owner process no
    /// longer exists.
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    write!(f, "{}", std::process::id())?;
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if !Self::is_stale(&path) {
                        break;
                    }
                    log::warn!("removing stale lock {}", path.display());
                    let _ = std::fs::remove_file(&path);
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(DnfError::Locked(dir.to_path_buf()))
    }

    fn is_stale(path: &Path) -> bool {
        let proc_root = Path::new("/proc");
        if !proc_root.join("self").exists() {
            return false;
        }
        match std::fs::read_to_string(path).ok().and_then(|s| s.trim().parse::<u32>().ok()) {
            Some(pid) => !proc_root.join(pid.to_string()).exists(),
            None => false,
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn sha_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn last_loss(log: &TrainLog, what: &str) -> Result<f64> {
    log.last().ok_or_else(|| DnfError::Config(format!("{what}: zero epochs configured")))
}

/// A run directory with its resolved configuration.
#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
    pub config: PipelineConfig,
}

impl Run {
    /// Creates the directory layout and writes `config.json`.
    pub fn create(dir: &Path, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        for sub in ["stage_reports", "checkpoints", "samples", "reports"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        write_atomic(&dir.join(CONFIG_FILE), config.to_json()?.as_bytes())?;
        Ok(Self { dir: dir.to_path_buf(), config })
    }

    /// Opens an existing run from its `config.json`.
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(CONFIG_FILE);
        if !path.exists() {
            return Err(DnfError::Config(format!("{} has no {CONFIG_FILE}", dir.display())));
        }
        Ok(Self { dir: dir.to_path_buf(), config: PipelineConfig::load(&path)? })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn report_path(&self, stage: Stage) -> PathBuf {
        self.dir.join("stage_reports").join(format!("{}.json", stage.name()))
    }

    pub fn read_report(&self, stage: Stage) -> Result<Option<StageReport>> {
        let p = self.report_path(stage);
        if !p.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&std::fs::read_to_string(p)?)?))
    }

    fn outputs_present(&self, stage: Stage) -> bool {
        stage.outputs().iter().all(|o| self.path(o).exists())
    }

    /// Hash of everything a stage produced. The dataset manifest is rewritten
    /// when samples are cached, so the dataset is hashed through its frames and
    /// the prepared samples through their cache files.
    fn output_hash(&self, stage: Stage) -> Result<String> {
        let mut h = Sha256::new();
        match stage {
            Stage::SynthData => {
                let manifest = load_manifest(&self.manifest_path())?;
                for e in &manifest.sequences {
                    h.update(e.id.as_bytes());
                    for f in &e.frame_files {
                        h.update(std::fs::read(self.manifest_dir().join(f))?);
                    }
                }
            }
            Stage::Prepare => {
                let caches: BTreeMap<String, String> =
                    serde_json::from_str(&std::fs::read_to_string(self.path(Stage::Prepare.outputs()[0]))?)?;
                for (id, c) in &caches {
                    h.update(id.as_bytes());
                    h.update(std::fs::read(self.manifest_dir().join(c))?);
                }
            }
            _ => {
                for o in stage.outputs() {
                    h.update(std::fs::read(self.path(o))?);
                }
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    fn manifest_dir(&self) -> PathBuf {
        self.manifest_path().parent().map(Path::to_path_buf).unwrap_or_default()
    }

    /// Completed report of a prerequisite, or an error naming the stage to run.
    fn require(&self, stage: Stage) -> Result<StageReport> {
        match self.read_report(stage)? {
            Some(r) if self.outputs_present(stage) => Ok(r),
            _ => Err(DnfError::Prerequisite {
                stage: stage.name().to_string(),
                detail: format!("its outputs are missing from {}", self.dir.display()),
            }),
        }
    }

    fn section_json(&self, stage: Stage) -> Result<String> {
        let c = &self.config;
        let v = match stage {
            Stage::SynthData => serde_json::to_value((&c.dataset.synthetic, &c.dataset.manifest))?,
            Stage::Prepare => serde_json::to_value(&c.dataset)?,
            Stage::TrainShape => serde_json::to_value((&c.dataset.held_out_identities, &c.fields.shape, &c.fields.shape_training))?,
            Stage::TrainMotion => serde_json::to_value((&c.dataset.held_out_identities, &c.fields.motion, &c.fields.motion_training))?,
            Stage::Decompose => serde_json::to_value((&c.dictionary.shape_k, &c.dictionary.shape_rk, &c.dictionary.motion_k, &c.dictionary.motion_rk, c.extension_seed()))?,
            Stage::FinetuneShape => serde_json::to_value((&c.dataset.held_out_identities, &c.dictionary.shape_finetune))?,
            Stage::FinetuneMotion => serde_json::to_value((&c.dataset.held_out_identities, &c.dictionary.motion_finetune))?,
            Stage::TrainShapeDiff => serde_json::to_value((&c.diffusion.schedule, c.diffusion.schedule_steps, &c.diffusion.shape_denoiser, &c.diffusion.shape_training))?,
            Stage::TrainMotionDiff => serde_json::to_value((&c.diffusion.schedule, c.diffusion.schedule_steps, &c.diffusion.motion_denoiser, &c.diffusion.motion_training))?,
        };
        Ok(v.to_string())
    }

    fn input_hash(&self, stage: Stage) -> Result<String> {
        let section = self.section_json(stage)?;
        let mut parts: Vec<Vec<u8>> = vec![stage.name().as_bytes().to_vec(), section.into_bytes()];
        for p in stage.prerequisites() {
            if *p == Stage::SynthData && self.config.dataset.manifest.is_some() {
                parts.push(self.output_hash(Stage::SynthData)?.into_bytes());
            } else {
                parts.push(self.require(*p)?.output_hash.into_bytes());
            }
        }
        if stage == Stage::Prepare {
            if let Some(m) = &self.config.dataset.manifest {
                parts.push(std::fs::read(m)?);
            }
        }
        let refs: Vec<&[u8]> = parts.iter().map(|p| p.as_slice()).collect();
        Ok(sha_hex(&refs))
    }

    /// Runs one stage under the run lock; a no-op when its inputs are unchanged.
    pub fn run_stage(&self, stage: Stage) -> Result<StageOutcome> {
        let _lock = RunLock::acquire(&self.dir)?;
        let input_hash = self.input_hash(stage)?;
        if let Some(r) = self.read_report(stage)? {
            if r.input_hash == input_hash && self.outputs_present(stage) && self.output_hash(stage)? == r.output_hash {
                log::info!("stage {stage} is up to date");
                return Ok(StageOutcome { report: r, skipped: true });
            }
        }
        log::info!("running stage {stage}");
        let start = Instant::now();
        let (final_losses, notes) = self.execute(stage)?;
        if let Some((k, v)) = final_losses.iter().find(|(_, v)| !v.is_finite()) {
            return Err(DnfError::numerical(format!("stage {stage}: final loss `{k}` is {v}")));
        }
        let report = StageReport {
            stage,
            input_hash,
            output_hash: self.output_hash(stage)?,
            duration_s: start.elapsed().as_secs_f64(),
            final_losses,
            outputs: stage.outputs().iter().map(|s| s.to_string()).collect(),
            notes,
            config: self.config.clone(),
        };
        write_atomic(&self.report_path(stage), serde_json::to_string_pretty(&report)?.as_bytes())?;
        Ok(StageOutcome { report, skipped: false })
    }

    /// Runs every stage in order.
    pub fn run_all(&self) -> Result<Vec<StageOutcome>> {
        Stage::ALL.iter().map(|s| self.run_stage(*s)).collect()
    }

    pub fn manifest_path(&self) -> PathBuf {
        match &self.config.dataset.manifest {
            Some(m) => m.clone(),
            None => self.path("data").join(MANIFEST_FILE),
        }
    }

    pub fn dataset(&self) -> Result<SequenceDataset> {
        load_dataset(&self.manifest_path())
    }

    /// Dataset plus the cached training samples of every sequence.
    pub fn prepared(&self) -> Result<(SequenceDataset, BTreeMap<String, PreparedSequence>)> {
        let mut ds = self.dataset()?;
        let (prepared, _) = prepare_training_samples(&mut ds, &self.config.dataset.samples)?;
        Ok((ds, prepared))
    }

    /// Sequences used for training: everything outside the held-out identities.
    pub fn train_ids(&self, ds: &SequenceDataset) -> Result<Vec<String>> {
        if self.config.dataset.held_out_identities.is_empty() {
            return Ok(ds.ids());
        }
        Ok(split_holdout_identities(ds, &self.config.dataset.held_out_identities)?.train)
    }

    pub fn held_out_ids(&self, ds: &SequenceDataset) -> Result<Vec<String>> {
        if self.config.dataset.held_out_identities.is_empty() {
            return Ok(Vec::new());
        }
        Ok(split_holdout_identities(ds, &self.config.dataset.held_out_identities)?.test)
    }

    fn execute(&self, stage: Stage) -> Result<(BTreeMap<String, f64>, Vec<String>)> {
        let cfg = &self.config;
        let mut losses = BTreeMap::new();
        let mut notes = Vec::new();
        match stage {
            Stage::SynthData => {
                if cfg.dataset.manifest.is_some() {
                    return Err(DnfError::Config("synth-data is not used with an external dataset manifest".into()));
                }
                let ds = generate_dataset(&cfg.dataset.synthetic, &self.path("data"))?;
                notes.push(format!("{} sequences", ds.sequences.len()));
            }
            Stage::Prepare => {
                let mut ds = self.dataset()?;
                let (prepared, report) = prepare_training_samples(&mut ds, &cfg.dataset.samples)?;
                let caches: BTreeMap<&String, &String> =
                    ds.manifest.sequences.iter().filter_map(|e| e.cache_files.get("samples").map(|c| (&e.id, c))).collect();
                write_atomic(&self.path("checkpoints/prepared.json"), serde_json::to_string_pretty(&caches)?.as_bytes())?;
                notes.push(format!("{} computed, {} reused", report.computed.len(), report.reused.len()));
                notes.push(format!("{} sequences prepared", prepared.len()));
            }
            Stage::TrainShape => {
                let (ds, prepared) = self.prepared()?;
                let ids = self.train_ids(&ds)?;
                let instances: Vec<ShapeInstance> =
                    ids.iter().map(|id| ShapeInstance { id, samples: &prepared[id].sdf }).collect();
                let (weights, codes, log) = train_shape_space(&instances, &cfg.fields.shape, &cfg.fields.shape_training)?;
                FieldCheckpoint { spec: cfg.fields.shape.clone(), weights, codes }.write(&self.path(Stage::TrainShape.outputs()[0]))?;
                log.write_jsonl(&self.path("stage_reports/train-shape.loss.jsonl"))?;
                losses.insert("shape_sdf".into(), last_loss(&log, "train-shape")?);
            }
            Stage::TrainMotion => {
                let (ds, prepared) = self.prepared()?;
                let ids = self.train_ids(&ds)?;
                let shape = self.shape_space()?;
                let seqs = motion_sequences(&ids, &prepared);
                let (weights, codes, log) =
                    train_motion_space(&seqs, &shape.codes, &cfg.fields.motion, &cfg.fields.motion_training)?;
                FieldCheckpoint { spec: cfg.fields.motion.clone(), weights, codes }.write(&self.path(Stage::TrainMotion.outputs()[0]))?;
                log.write_jsonl(&self.path("stage_reports/train-motion.loss.jsonl"))?;
                losses.insert("motion_flow".into(), last_loss(&log, "train-motion")?);
            }
            Stage::Decompose => {
                let seed = cfg.extension_seed();
                for (space, k, rk, out, salt) in [
                    (self.shape_space()?, cfg.dictionary.shape_k, cfg.dictionary.shape_rk, Stage::Decompose.outputs()[0], 0),
                    (self.motion_space()?, cfg.dictionary.motion_k, cfg.dictionary.motion_rk, Stage::Decompose.outputs()[1], 1),
                ] {
                    let (dec, base) = decompose(&space.spec, &space.weights, k)?;
                    let dense = dec.reconstruct(&base)?;
                    let (mut err, mut norm) = (0.0, 0.0);
                    for (a, b) in dense.layers.iter().zip(&space.weights.layers) {
                        err += (&a.weight - &b.weight).norm_squared();
                        norm += b.weight.norm_squared();
                    }
                    let name = if salt == 0 { "shape" } else { "motion" };
                    losses.insert(format!("{name}_truncation_rel_err"), (err / norm.max(f64::MIN_POSITIVE)).sqrt());
                    let extended = extend(&dec, rk, seed.wrapping_add(salt))?;
                    let mut c = Container::new();
                    extended.save_into(&mut c, "decoder.")?;
                    c.write(&self.path(out))?;
                }
            }
            Stage::FinetuneShape => {
                let (ds, prepared) = self.prepared()?;
                let ids = self.train_ids(&ds)?;
                let shape = self.shape_space()?;
                let decoder = self.dictionary(Stage::Decompose.outputs()[0])?;
                let instances: Vec<ShapeInstance> =
                    ids.iter().map(|id| ShapeInstance { id, samples: &prepared[id].sdf }).collect();
                let (decoder, table, log) = finetune_shape(&decoder, &instances, &shape.codes, &cfg.dictionary.shape_finetune)?;
                CoefficientCheckpoint { decoder, table }.write(&self.path(Stage::FinetuneShape.outputs()[0]))?;
                log.write_jsonl(&self.path("stage_reports/finetune-shape.loss.jsonl"))?;
                losses.insert("shape_finetune".into(), last_loss(&log, "finetune-shape")?);
                let ck = self.shape_finetuned()?;
                for (l, o) in ck.decoder.orthogonality_losses()?.into_iter().enumerate() {
                    losses.insert(format!("shape_orthogonality_{l}"), o);
                }
            }
            Stage::FinetuneMotion => {
                let (ds, prepared) = self.prepared()?;
                let ids = self.train_ids(&ds)?;
                let shape = self.shape_space()?;
                let motion = self.motion_space()?;
                let decoder = self.dictionary(Stage::Decompose.outputs()[1])?;
                let seqs = motion_sequences(&ids, &prepared);
                let (decoder, table, log) =
                    finetune_motion(&decoder, &seqs, &shape.codes, &motion.codes, &cfg.dictionary.motion_finetune)?;
                CoefficientCheckpoint { decoder, table }.write(&self.path(Stage::FinetuneMotion.outputs()[0]))?;
                log.write_jsonl(&self.path("stage_reports/finetune-motion.loss.jsonl"))?;
                losses.insert("motion_finetune".into(), last_loss(&log, "finetune-motion")?);
                let ck = self.motion_finetuned()?;
                for (l, o) in ck.decoder.orthogonality_losses()?.into_iter().enumerate() {
                    losses.insert(format!("motion_orthogonality_{l}"), o);
                }
            }
            Stage::TrainShapeDiff => {
                let shape = self.shape_space()?;
                let ft = self.shape_finetuned()?;
                let features = self.shape_features(&shape, &ft)?;
                let layout = ft.decoder.layout(shape.codes.dim);
                let schedule = make_schedule(cfg.diffusion.schedule_steps, cfg.diffusion.schedule)?;
                let (model, log) = train_shape_diffusion(
                    &features,
                    layout,
                    &schedule,
                    &cfg.diffusion.shape_denoiser,
                    &cfg.diffusion.shape_training,
                )?;
                let mut c = Container::new();
                model.save_into(&mut c, "model.")?;
                c.write(&self.path(Stage::TrainShapeDiff.outputs()[0]))?;
                log.write_jsonl(&self.path("stage_reports/train-shape-diff.loss.jsonl"))?;
                losses.insert("shape_diffusion".into(), last_loss(&log, "train-shape-diff")?);
                notes.push(format!("{} features of {} entries", features.len(), layout.total()));
            }
            Stage::TrainMotionDiff => {
                let (ds, _) = self.prepared()?;
                let ids = self.train_ids(&ds)?;
                let shape = self.shape_space()?;
                let motion = self.motion_space()?;
                let ft = self.motion_finetuned()?;
                let mut tracks = Vec::with_capacity(ids.len());
                for id in &ids {
                    let seq = ds.get(id).ok_or_else(|| DnfError::invalid(format!("unknown sequence `{id}`")))?;
                    let frames = (1..seq.frames.len())
                        .map(|t| motion_feature(&motion.codes, &ft, &motion_frame_id(id, t)))
                        .collect::<Result<Vec<_>>>()?;
                    let condition = shape.code(id)?.to_vec();
                    tracks.push(MotionTrack { id: id.clone(), condition, frames });
                }
                let layout = ft.decoder.layout(motion.codes.dim);
                let schedule = make_schedule(cfg.diffusion.schedule_steps, cfg.diffusion.schedule)?;
                let (model, log) = train_motion_diffusion(
                    &tracks,
                    layout,
                    &schedule,
                    &cfg.diffusion.motion_denoiser,
                    &cfg.diffusion.motion_training,
                )?;
                let mut c = Container::new();
                model.save_into(&mut c, "model.")?;
                c.write(&self.path(Stage::TrainMotionDiff.outputs()[0]))?;
                log.write_jsonl(&self.path("stage_reports/train-motion-diff.loss.jsonl"))?;
                losses.insert("motion_diffusion".into(), last_loss(&log, "train-motion-diff")?);
            }
        }
        Ok((losses, notes))
    }

    /// Shape features `(s_i, gamma_i)` of the training instances, in table order.
    pub fn shape_features(&self, shape: &FieldCheckpoint, ft: &CoefficientCheckpoint) -> Result<Vec<Feature>> {
        ft.table
            .iter()
            .map(|(id, coeffs)| Ok(Feature { latent: shape.code(id)?.to_vec(), coeffs: coeffs.clone() }))
            .collect()
    }
}

fn load_manifest(path: &Path) -> Result<crate::datagen::Manifest> {
    if !path.exists() {
        return Err(DnfError::MissingFiles(vec![path.to_path_buf()]));
    }
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn motion_sequences<'a>(ids: &'a [String], prepared: &'a BTreeMap<String, PreparedSequence>) -> Vec<MotionSequence<'a>> {
    ids.iter()
        .map(|id| {
            let p = &prepared[id];
            MotionSequence { id, canonical: &p.canonical, targets: p.motion_targets() }
        })
        .collect()
}

fn motion_feature(codes: &crate::fields::LatentTable, ft: &CoefficientCheckpoint, frame_id: &str) -> Result<Feature> {
    let latent = codes.get(frame_id).ok_or_else(|| DnfError::invalid(format!("no motion code for `{frame_id}`")))?;
    let coeffs = ft.table.get(frame_id).ok_or_else(|| DnfError::invalid(format!("no motion coefficients for `{frame_id}`")))?;
    Ok(Feature { latent: latent.to_vec(), coeffs: coeffs.clone() })
}

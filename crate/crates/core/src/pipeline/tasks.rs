//! Commands that use trained artifacts: sampling, extension, unseen-shape
//! fitting, metrics and the reconstruction ablation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::decode::{decode_shape_mesh, dense_shape_mesh, dense_warp, warp_with_motion};
use super::{motion_feature, Run, RunLock, Stage};
use crate::checkpoint::{write_atomic, Container};
use crate::datagen::{ingest, load_dataset, InMemorySource, SequenceDataset, SourceSequence, MANIFEST_FILE};
use crate::dictionary::{fit_shape_feature, fit_unseen_shape, flatten_feature, split_feature, CoefficientSet, Feature, FitMode};
use crate::error::{DnfError, Result};
use crate::eval::{
    histogram_csv, novelty_csv, novelty_histogram, novelty_retrieval, reconstruction_ablation, sample_sequence_points,
    sequence_distance, AblationTable, AblationVariant, MetricReport, PointSequence, SequenceMeshes,
};
use crate::fields::{motion_frame_id, TrainLog};
use crate::geometry::{chamfer_distance, sample_sdf, surface_points, TriMesh};

const FEATURES_FILE: &str = "features.dnfc";
const GENERATED_IDENTITY: &str = "generated";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub dir: PathBuf,
    pub samples: Vec<String>,
    pub skipped: Vec<SkippedSample>,
    pub frames: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub mode: FitMode,
    /// Chamfer distance between the fitted surface and the input mesh.
    pub cd: f64,
    pub losses: Vec<f64>,
    pub frames: usize,
    pub dir: PathBuf,
    pub feature: Feature,
}

/// Reference sequences for the generation metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSplit {
    Train,
    HeldOut,
    All,
}

impl std::str::FromStr for ReferenceSplit {
    type Err = DnfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "held_out" | "held-out" | "test" => Ok(Self::HeldOut),
            "all" => Ok(Self::All),
            other => Err(DnfError::Config(format!("unknown reference split `{other}`"))),
        }
    }
}

/// Shape and motion features of generated sequences, kept for extension.
#[derive(Debug, Clone, PartialEq)]
struct SampleFeatures {
    shape: Feature,
    motion: Vec<Feature>,
}

fn save_features(path: &Path, items: &[(String, SampleFeatures)], shape_dim: usize, motion_dim: usize) -> Result<()> {
    let mut c = Container::new();
    let index: Vec<(&String, usize)> = items.iter().map(|(id, f)| (id, f.motion.len())).collect();
    c.set_meta("samples", &index)?;
    for (id, f) in items {
        c.push_f64(format!("{id}.shape"), vec![shape_dim], &flatten_feature(&f.shape))?;
        let flat: Vec<f64> = f.motion.iter().flat_map(flatten_feature).collect();
        c.push_f64(format!("{id}.motion"), vec![f.motion.len(), motion_dim], &flat)?;
    }
    c.write(path)
}

fn load_features(path: &Path, run: &Run) -> Result<BTreeMap<String, SampleFeatures>> {
    let c = Container::read(path)?;
    let index: Vec<(String, usize)> = c.meta("samples")?;
    let shape_layout = run.shape_diffusion()?.layout;
    let motion_layout = run.motion_diffusion()?.layout;
    index
        .into_iter()
        .map(|(id, n)| {
            let shape = split_feature(&c.get_f64(&format!("{id}.shape"), &[shape_layout.total()])?, &shape_layout)?;
            let flat = c.get_f64(&format!("{id}.motion"), &[n, motion_layout.total()])?;
            let motion = flat
                .chunks(motion_layout.total())
                .map(|r| split_feature(r, &motion_layout))
                .collect::<Result<Vec<_>>>()?;
            Ok((id, SampleFeatures { shape, motion }))
        })
        .collect()
}

fn trace_summary(log: &TrainLog) -> String {
    let l = &log.losses;
    let head: Vec<String> = l.iter().take(5).map(|v| format!("{v:.3e}")).collect();
    let tail: Vec<String> = l.iter().skip(l.len().saturating_sub(5)).map(|v| format!("{v:.3e}")).collect();
    format!("first [{}] last [{}]", head.join(", "), tail.join(", "))
}

fn frames_prefix(frames: &[TriMesh], n: usize) -> &[TriMesh] {
    &frames[..n.min(frames.len())]
}

impl Run {
    fn sample_dir(&self, name: &str) -> PathBuf {
        self.path("samples").join(name)
    }

    /// Draws `n` sequences of `frames` frames (canonical frame plus `frames - 1`
    /// warped frames) and writes them under `samples/<name>/`.
    pub fn sample(&self, name: &str, n: usize, frames: usize, seed: u64) -> Result<SampleReport> {
        let _lock = RunLock::acquire(&self.dir)?;
        self.require(Stage::TrainShapeDiff)?;
        self.require(Stage::TrainMotionDiff)?;
        if frames < 2 {
            return Err(DnfError::invalid("a sampled sequence needs at least 2 frames"));
        }
        let shape_model = self.shape_diffusion()?;
        let motion_model = self.motion_diffusion()?;
        let shape_ft = self.shape_finetuned()?;
        let motion_ft = self.motion_finetuned()?;
        let steps = self.config.diffusion.sampling_steps;
        let mut sequences = Vec::new();
        let mut features = Vec::new();
        let mut skipped = Vec::new();
        for i in 0..n {
            let s_seed = seed.wrapping_add(2 * i as u64);
            let shape = shape_model.sample(steps, s_seed)?;
            let canonical = match decode_shape_mesh(&shape_ft.decoder, &shape, self.config.eval.mesh_resolution) {
                Ok(m) => m,
                Err(DnfError::EmptyMesh { .. }) => {
                    log::warn!("sample {i}: decoded shape has an empty surface, skipped");
                    skipped.push(SkippedSample { index: i, reason: "empty marching-cubes mesh".into() });
                    continue;
                }
                Err(e) => return Err(e),
            };
            let motion = motion_model.sample_sequence(&shape.latent, frames - 1, steps, s_seed + 1)?;
            let mut meshes = vec![canonical.clone()];
            for m in &motion {
                meshes.push(warp_with_motion(&motion_ft.decoder, &shape.latent, m, &canonical)?);
            }
            let id = format!("sample_{i:03}");
            sequences.push(SourceSequence { id: id.clone(), identity: GENERATED_IDENTITY.into(), frames: meshes, spec: None });
            features.push((id, SampleFeatures { shape, motion }));
        }
        let dir = self.sample_dir(name);
        std::fs::create_dir_all(&dir)?;
        let report = SampleReport {
            dir: dir.clone(),
            samples: sequences.iter().map(|s| s.id.clone()).collect(),
            skipped,
            frames,
            seed,
        };
        if !sequences.is_empty() {
            ingest(&InMemorySource(sequences), &dir)?;
            save_features(&dir.join(FEATURES_FILE), &features, shape_model.layout.total(), motion_model.layout.total())?;
        }
        write_atomic(&dir.join("report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
        Ok(report)
    }

    /// Appends `n_new` frames to sample `id` of `samples/<name>/` by
    /// out-painting from its last context frames; writes `samples/<out>/`.
    pub fn extend(&self, name: &str, id: &str, n_new: usize, seed: u64, out: &str) -> Result<SampleReport> {
        let _lock = RunLock::acquire(&self.dir)?;
        self.require(Stage::TrainMotionDiff)?;
        let src = self.sample_dir(name);
        let ds = load_dataset(&src.join(MANIFEST_FILE))?;
        let seq = ds.get(id).ok_or_else(|| DnfError::invalid(format!("no sample `{id}` in {}", src.display())))?;
        let mut feats = load_features(&src.join(FEATURES_FILE), self)?;
        let f = feats.remove(id).ok_or_else(|| DnfError::invalid(format!("no features stored for `{id}`")))?;
        let motion_model = self.motion_diffusion()?;
        let motion_ft = self.motion_finetuned()?;
        let k = motion_model.denoiser.config.k_frames;
        if f.motion.len() < k {
            return Err(DnfError::invalid(format!("sample `{id}` has {} motion frames, extension needs {k}", f.motion.len())));
        }
        let context = &f.motion[f.motion.len() - k..];
        let extended = motion_model.extend(&f.shape.latent, context, n_new, self.config.diffusion.sampling_steps, seed)?;
        let canonical = seq.canonical().clone();
        let mut frames = seq.frames.clone();
        for m in &extended[k..] {
            frames.push(warp_with_motion(&motion_ft.decoder, &f.shape.latent, m, &canonical)?);
        }
        let mut motion = f.motion.clone();
        motion.extend_from_slice(&extended[k..]);
        let dir = self.sample_dir(out);
        let n_frames = frames.len();
        ingest(
            &InMemorySource(vec![SourceSequence { id: id.into(), identity: GENERATED_IDENTITY.into(), frames, spec: None }]),
            &dir,
        )?;
        let shape_dim = flatten_feature(&f.shape).len();
        let motion_dim = motion_model.layout.total();
        save_features(&dir.join(FEATURES_FILE), &[(id.to_string(), SampleFeatures { shape: f.shape, motion })], shape_dim, motion_dim)?;
        let report = SampleReport { dir: dir.clone(), samples: vec![id.into()], skipped: Vec::new(), frames: n_frames, seed };
        write_atomic(&dir.join("report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
        Ok(report)
    }

    /// Fits a shape feature to a watertight mesh, then animates it with the
    /// motion sampler conditioned on the fitted code.
    pub fn fit_unseen(&self, mesh_path: &Path, frames: usize, seed: u64, mode: FitMode, out: &str) -> Result<FitReport> {
        let _lock = RunLock::acquire(&self.dir)?;
        self.require(Stage::FinetuneShape)?;
        self.require(Stage::TrainMotionDiff)?;
        if frames < 2 {
            return Err(DnfError::invalid("an animated sequence needs at least 2 frames"));
        }
        let mesh = TriMesh::read_obj(mesh_path)?;
        let id = mesh_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
        let obs = sample_sdf(&mesh, &id, &self.config.dataset.samples.sdf, seed)?;
        let shape_ft = self.shape_finetuned()?;
        let init = CoefficientSet::mean(shape_ft.table.values())?;
        let fit_cfg = crate::dictionary::FitConfig { seed, ..self.config.dictionary.fit.clone() };
        let (feature, log) = fit_unseen_shape(&shape_ft.decoder, &obs, &init, mode, &fit_cfg)?;
        match (log.initial(), log.last()) {
            (Some(a), Some(b)) if b < a => {}
            _ => return Err(DnfError::numerical(format!("shape fit diverged: {}", trace_summary(&log)))),
        }
        let canonical = decode_shape_mesh(&shape_ft.decoder, &feature, self.config.eval.mesh_resolution)?;
        let n = self.config.eval.points_per_frame;
        let cd = chamfer_distance(&surface_points(&canonical, n, seed)?, &surface_points(&mesh, n, seed.wrapping_add(1))?)?;

        let motion_model = self.motion_diffusion()?;
        let motion_ft = self.motion_finetuned()?;
        let steps = self.config.diffusion.sampling_steps;
        let motion = motion_model.sample_sequence(&feature.latent, frames - 1, steps, seed)?;
        let mut meshes = vec![canonical.clone()];
        for m in &motion {
            meshes.push(warp_with_motion(&motion_ft.decoder, &feature.latent, m, &canonical)?);
        }
        let dir = self.sample_dir(out);
        ingest(&InMemorySource(vec![SourceSequence { id: id.clone(), identity: id.clone(), frames: meshes, spec: None }]), &dir)?;
        let report = FitReport { mode, cd, losses: log.losses, frames, dir: dir.clone(), feature };
        write_atomic(&self.path("reports").join(format!("fit_{out}.json")), serde_json::to_string_pretty(&report)?.as_bytes())?;
        Ok(report)
    }

    fn split_ids(&self, ds: &SequenceDataset, split: ReferenceSplit) -> Result<Vec<String>> {
        match split {
            ReferenceSplit::Train => self.train_ids(ds),
            ReferenceSplit::HeldOut => self.held_out_ids(ds),
            ReferenceSplit::All => Ok(ds.ids()),
        }
    }

    /// Generation metrics of `gen_dir` against a reference split, plus the
    /// novelty retrieval against the training split. Sequences are compared
    /// over their common frame count.
    pub fn evaluate(&self, gen_dir: &Path, reference: ReferenceSplit, seed: u64) -> Result<MetricReport> {
        let manifest = gen_dir.join(MANIFEST_FILE);
        if !manifest.exists() {
            return Err(DnfError::invalid(format!("{} holds no generated sequences", gen_dir.display())));
        }
        let gen = load_dataset(&manifest)?;
        if gen.sequences.is_empty() {
            return Err(DnfError::invalid(format!("{} holds no generated sequences", gen_dir.display())));
        }
        let ds = self.dataset()?;
        let ref_ids = self.split_ids(&ds, reference)?;
        if ref_ids.is_empty() {
            return Err(DnfError::invalid(format!("reference split {reference:?} is empty")));
        }
        let train_ids = self.train_ids(&ds)?;
        let lookup = |id: &String| ds.get(id).ok_or_else(|| DnfError::invalid(format!("unknown sequence `{id}`")));
        let refs = ref_ids.iter().map(lookup).collect::<Result<Vec<_>>>()?;
        let trains = train_ids.iter().map(lookup).collect::<Result<Vec<_>>>()?;
        let len = gen.sequences.iter().chain(refs.iter().copied()).chain(trains.iter().copied()).map(|s| s.frames.len()).min().unwrap_or(0);
        let n = self.config.eval.points_per_frame;
        let pts = |frames: &[TriMesh]| sample_sequence_points(frames_prefix(frames, len), n, seed);
        let gen_pts: Vec<(String, PointSequence)> =
            gen.sequences.iter().map(|s| Ok((s.id().to_string(), pts(&s.frames)?))).collect::<Result<_>>()?;
        let ref_pts: Vec<PointSequence> = refs.iter().map(|s| pts(&s.frames)).collect::<Result<_>>()?;
        let train_pts: Vec<(String, PointSequence)> =
            trains.iter().map(|s| Ok((s.id().to_string(), pts(&s.frames)?))).collect::<Result<_>>()?;

        let gen_only: Vec<PointSequence> = gen_pts.iter().map(|(_, p)| p.clone()).collect();
        let report = MetricReport::compute(&gen_only, &ref_pts, n)?;
        let entries = novelty_retrieval(&gen_pts, &train_pts, sequence_distance)?;
        let bins = novelty_histogram(&entries, self.config.eval.novelty_bins)?;
        let reports = self.path("reports");
        write_atomic(&reports.join("metrics.csv"), report.to_csv().as_bytes())?;
        write_atomic(&reports.join("novelty.csv"), novelty_csv(&entries).as_bytes())?;
        write_atomic(&reports.join("novelty_histogram.csv"), histogram_csv(&bins).as_bytes())?;
        Ok(report)
    }

    /// Reconstructs every training sequence with the four ablation variants
    /// and tabulates their mean sequence Chamfer against the ground truth.
    pub fn reconstruct_ablation(&self, max_frames: usize) -> Result<AblationTable> {
        let _lock = RunLock::acquire(&self.dir)?;
        for st in [Stage::TrainMotion, Stage::FinetuneShape, Stage::FinetuneMotion] {
            self.require(st)?;
        }
        let cfg = &self.config;
        let ds = self.dataset()?;
        let ids = self.train_ids(&ds)?;
        let shape = self.shape_space()?;
        let motion = self.motion_space()?;
        let sft = self.shape_finetuned()?;
        let mft = self.motion_finetuned()?;
        let res = cfg.eval.mesh_resolution;

        let mut gt = SequenceMeshes::new();
        let mut recon: BTreeMap<AblationVariant, SequenceMeshes> = BTreeMap::new();
        for id in &ids {
            let seq = ds.get(id).ok_or_else(|| DnfError::invalid(format!("unknown sequence `{id}`")))?;
            let frames = frames_prefix(&seq.frames, max_frames);
            gt.insert(id.clone(), frames.to_vec());
            let s = shape.code(id)?;
            let ours = Feature { latent: s.to_vec(), coeffs: sft.coeffs(id)?.clone() };

            let base = dense_shape_mesh(&shape.spec, &shape.weights, s, res)?;
            let mut latent_only = vec![base.clone()];
            for t in 1..frames.len() {
                latent_only.push(dense_warp(&motion.spec, &motion.weights, s, motion.code(&motion_frame_id(id, t))?, &base)?);
            }

            let canonical = decode_shape_mesh(&sft.decoder, &ours, res)?;
            let mut decoupled = vec![canonical.clone()];
            for t in 1..frames.len() {
                let m = motion_feature(&motion.codes, &mft, &motion_frame_id(id, t))?;
                decoupled.push(warp_with_motion(&mft.decoder, s, &m, &canonical)?);
            }

            let mut refits = [vec![canonical.clone()], vec![canonical.clone()]];
            for (t, frame) in frames.iter().enumerate().skip(1) {
                let seed = cfg.eval.ablation_fit.seed.wrapping_add(t as u64);
                let obs = sample_sdf(frame, &format!("{id}/{t}"), &cfg.dataset.samples.sdf, seed)?;
                let fit_cfg = crate::dictionary::FitConfig { seed, ..cfg.eval.ablation_fit.clone() };
                for (slot, mode) in [FitMode::LatentOnly, FitMode::LatentAndGamma].into_iter().enumerate() {
                    let (f, _) = fit_shape_feature(&sft.decoder, &obs, &ours, mode, &fit_cfg)?;
                    refits[slot].push(decode_shape_mesh(&sft.decoder, &f, res)?);
                }
            }
            let [s_ft, s_sigma_ft] = refits;
            for (v, frames) in [
                (AblationVariant::LatentOnly, latent_only),
                (AblationVariant::ShapeCodeFit, s_ft),
                (AblationVariant::ShapeCodeAndCoeffFit, s_sigma_ft),
                (AblationVariant::Decoupled, decoupled),
            ] {
                recon.entry(v).or_default().insert(id.clone(), frames);
            }
        }
        let table = reconstruction_ablation(&gt, &recon, cfg.eval.ablation_points, cfg.seed)?;
        let reports = self.path("reports");
        write_atomic(&reports.join("ablation.csv"), table.to_csv().as_bytes())?;
        write_atomic(&reports.join("ablation.json"), serde_json::to_string_pretty(&table)?.as_bytes())?;
        Ok(table)
    }
}

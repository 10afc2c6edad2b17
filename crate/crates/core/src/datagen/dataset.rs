use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::synth::SyntheticSpec;
use crate::checkpoint::{write_atomic, Container};
use crate::error::{DnfError, Result};
use crate::geometry::{
    evaluate_correspondences, sample_correspondences, sample_sdf, CorrespondenceSampling, Normalization, SampleKind,
    SdfSampleSet, SdfSampling, TriMesh, Vec3,
};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const CACHE_FILE: &str = "samples.dnfc";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub id: String,
    pub identity: String,
    pub n_frames: usize,
    /// Paths relative to the dataset root.
    pub frame_files: Vec<String>,
    #[serde(default)]
    pub cache_files: BTreeMap<String, String>,
    /// Generator parameters for synthetic sequences.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub sequences: Vec<SequenceEntry>,
    pub normalization: Normalization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub entry: SequenceEntry,
    /// Frame 0 is the canonical shape; all frames share its triangles.
    pub frames: Vec<TriMesh>,
}

impl Sequence {
    pub fn id(&self) -> &str {
        &self.entry.id
    }

    pub fn identity(&self) -> &str {
        &self.entry.identity
    }

    pub fn canonical(&self) -> &TriMesh {
        &self.frames[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub sequences: Vec<Sequence>,
}

/// One mesh sequence from an external source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSequence {
    pub id: String,
    pub identity: String,
    pub frames: Vec<TriMesh>,
    pub spec: Option<SyntheticSpec>,
}

/// Provider of mesh sequences to ingest (the synthetic generator, or an
/// importer for an external corpus).
pub trait SequenceSource {
    fn sequences(&self) -> Result<Vec<SourceSequence>>;

    /// Map into the `[-1, 1]^3` working box applied to every frame.
    fn normalization(&self, _sequences: &[SourceSequence]) -> Normalization {
        Normalization::identity()
    }
}

pub struct SyntheticSource<'a> {
    pub specs: &'a [SyntheticSpec],
}

impl SequenceSource for SyntheticSource<'_> {
    fn sequences(&self) -> Result<Vec<SourceSequence>> {
        let mut seen = BTreeSet::new();
        self.specs
            .iter()
            .map(|s| {
                let id = s.sequence_id();
                if !seen.insert(id.clone()) {
                    return Err(DnfError::invalid(format!("duplicate sequence id `{id}`")));
                }
                Ok(SourceSequence { id, identity: s.identity_id.clone(), frames: s.frames()?, spec: Some(s.resolved()) })
            })
            .collect()
    }
}

/// Sequences already held in memory, such as generated samples.
pub struct InMemorySource(pub Vec<SourceSequence>);

impl SequenceSource for InMemorySource {
    fn sequences(&self) -> Result<Vec<SourceSequence>> {
        Ok(self.0.clone())
    }
}

fn frame_file(id: &str, t: usize) -> String {
    format!("{id}/frame_{t:03}.obj")
}

/// Normalises and writes every sequence as OBJ frames plus a JSON manifest.
pub fn ingest(source: &dyn SequenceSource, out_dir: &Path) -> Result<SequenceDataset> {
    let mut sequences = source.sequences()?;
    if sequences.is_empty() {
        return Err(DnfError::invalid("no sequences to ingest"));
    }
    let normalization = source.normalization(&sequences);
    let mut out = Vec::with_capacity(sequences.len());
    for s in sequences.iter_mut() {
        if s.frames.len() < 2 {
            return Err(DnfError::invalid(format!("sequence `{}` has fewer than 2 frames", s.id)));
        }
        let canonical = s.frames[0].clone();
        let mut frame_files = Vec::with_capacity(s.frames.len());
        for (t, f) in s.frames.iter_mut().enumerate() {
            if !f.same_topology(&canonical) {
                return Err(DnfError::InvalidMesh(format!("sequence `{}` frame {t} changes topology", s.id)));
            }
            f.apply_normalization(&normalization);
            let rel = frame_file(&s.id, t);
            f.write_obj(&out_dir.join(&rel))?;
            frame_files.push(rel);
        }
        let entry = SequenceEntry {
            id: s.id.clone(),
            identity: s.identity.clone(),
            n_frames: s.frames.len(),
            frame_files,
            cache_files: BTreeMap::new(),
            spec: s.spec.clone(),
        };
        out.push(Sequence { entry, frames: std::mem::take(&mut s.frames) });
    }
    let manifest = Manifest { version: MANIFEST_VERSION, sequences: out.iter().map(|s| s.entry.clone()).collect(), normalization };
    write_manifest(out_dir, &manifest)?;
    Ok(SequenceDataset { root: out_dir.to_path_buf(), manifest, sequences: out })
}

pub fn generate_dataset(specs: &[SyntheticSpec], out_dir: &Path) -> Result<SequenceDataset> {
    if specs.is_empty() {
        return Err(DnfError::invalid("no synthetic specs given"));
    }
    ingest(&SyntheticSource { specs }, out_dir)
}

fn write_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    write_atomic(&root.join(MANIFEST_FILE), serde_json::to_string_pretty(manifest)?.as_bytes())
}

pub fn load_dataset(manifest_path: &Path) -> Result<SequenceDataset> {
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|_| DnfError::MissingFiles(vec![manifest_path.to_path_buf()]))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(DnfError::Format(format!("manifest version {} is not {MANIFEST_VERSION}", manifest.version)));
    }
    let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let missing: Vec<PathBuf> = manifest
        .sequences
        .iter()
        .flat_map(|s| s.frame_files.iter())
        .map(|f| root.join(f))
        .filter(|p| !p.exists())
        .collect();
    if !missing.is_empty() {
        return Err(DnfError::MissingFiles(missing));
    }
    let sequences = manifest
        .sequences
        .iter()
        .map(|e| {
            if e.frame_files.len() != e.n_frames {
                return Err(DnfError::Format(format!("sequence `{}` lists {} files for {} frames", e.id, e.frame_files.len(), e.n_frames)));
            }
            let frames = e.frame_files.iter().map(|f| TriMesh::read_obj(&root.join(f))).collect::<Result<Vec<_>>>()?;
            if let Some(t) = frames.iter().position(|f| !f.same_topology(&frames[0])) {
                return Err(DnfError::InvalidMesh(format!("sequence `{}` frame {t} changes topology", e.id)));
            }
            Ok(Sequence { entry: e.clone(), frames })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceDataset { root, manifest, sequences })
}

impl SequenceDataset {
    pub fn get(&self, id: &str) -> Option<&Sequence> {
        self.sequences.iter().find(|s| s.id() == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.sequences.iter().map(|s| s.id().to_string()).collect()
    }

    pub fn identities(&self) -> Vec<String> {
        let set: BTreeSet<String> = self.sequences.iter().map(|s| s.identity().to_string()).collect();
        set.into_iter().collect()
    }
}

/// Sequence ids per split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Random split by sequence with the given `(train, val, test)` fractions.
pub fn split_dataset(dataset: &SequenceDataset, fractions: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(DnfError::invalid(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let mut ids = dataset.ids();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    let n_train = ((a * n as f64).round() as usize).min(n);
    let n_val = ((b * n as f64).round() as usize).min(n - n_train);
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok(Split { train: ids, val, test })
}

/// Every sequence of the `held_out` identities goes to test, the rest to train.
pub fn split_holdout_identities(dataset: &SequenceDataset, held_out: &[String]) -> Result<Split> {
    let known = dataset.identities();
    if let Some(bad) = held_out.iter().find(|h| !known.contains(h)) {
        return Err(DnfError::invalid(format!("identity `{bad}` is not in the dataset")));
    }
    let (test, train): (Vec<&Sequence>, Vec<&Sequence>) = dataset.sequences.iter().partition(|s| held_out.iter().any(|h| h == s.identity()));
    Ok(Split {
        train: train.iter().map(|s| s.id().to_string()).collect(),
        val: Vec::new(),
        test: test.iter().map(|s| s.id().to_string()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub sdf: SdfSampling,
    pub correspondences: CorrespondenceSampling,
    pub seed: u64,
}

impl SampleConfig {
    pub fn desk() -> Self {
        Self { sdf: SdfSampling::desk(), correspondences: CorrespondenceSampling::desk(), seed: 0 }
    }

    pub fn paper() -> Self {
        Self { sdf: SdfSampling::paper(), correspondences: CorrespondenceSampling::paper(), seed: 0 }
    }
}

/// Training samples of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSequence {
    /// SDF samples of the canonical frame.
    pub sdf: SdfSampleSet,
    /// Correspondence positions on the canonical frame.
    pub canonical: Vec<Vec3>,
    /// Correspondence positions on frames `0..T` (frame 0 equals `canonical`).
    pub targets: Vec<Vec<Vec3>>,
}

impl PreparedSequence {
    /// Targets of frames `1..T`.
    pub fn motion_targets(&self) -> &[Vec<Vec3>] {
        &self.targets[1..]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrepareReport {
    pub computed: Vec<String>,
    pub reused: Vec<String>,
}

fn sequence_seed(base: u64, id: &str) -> u64 {
    let d = Sha256::digest(id.as_bytes());
    base ^ u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

fn cache_key(seq: &Sequence, cfg: &SampleConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg)?);
    for f in &seq.frames {
        h.update(f.to_obj().as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

fn points_flat(points: &[Vec3]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn points_from(flat: &[f64]) -> Vec<Vec3> {
    flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

/// Computes one sequence's samples (no caching).
pub fn prepare_sequence(seq: &Sequence, cfg: &SampleConfig) -> Result<PreparedSequence> {
    let seed = sequence_seed(cfg.seed, seq.id());
    let sdf = sample_sdf(seq.canonical(), seq.id(), &cfg.sdf, seed)?;
    let corr = sample_correspondences(seq.canonical(), &cfg.correspondences, seed.wrapping_add(1))?;
    let targets = seq.frames.iter().map(|f| evaluate_correspondences(&corr, f)).collect::<Result<Vec<_>>>()?;
    Ok(PreparedSequence { sdf, canonical: corr.canonical_positions, targets })
}

fn cache_path(root: &Path, id: &str) -> PathBuf {
    root.join(id).join(CACHE_FILE)
}

fn read_cache(path: &Path, key: &str) -> Result<Option<PreparedSequence>> {
    if !path.exists() {
        return Ok(None);
    }
    let c = Container::read(path)?;
    if c.meta::<String>("key").ok().as_deref() != Some(key) {
        return Ok(None);
    }
    let n_sdf = c.get("sdf.distances")?.shape[0];
    let (n_frames, n_corr) = {
        let s = &c.get("targets")?.shape;
        (s[0], s[1])
    };
    let kinds = c
        .get_f64("sdf.kinds", &[n_sdf])?
        .into_iter()
        .map(|k| if k == 0.0 { SampleKind::Uniform } else { SampleKind::NearSurface })
        .collect();
    let sdf = SdfSampleSet {
        points: points_from(&c.get_f64("sdf.points", &[n_sdf, 3])?),
        distances: c.get_f64("sdf.distances", &[n_sdf])?,
        kinds,
    };
    let all = c.get_f64("targets", &[n_frames, n_corr, 3])?;
    let targets: Vec<Vec<Vec3>> = all.chunks_exact(n_corr * 3).map(points_from).collect();
    Ok(Some(PreparedSequence { sdf, canonical: targets[0].clone(), targets }))
}

fn write_cache(path: &Path, key: &str, p: &PreparedSequence) -> Result<()> {
    let mut c = Container::new();
    c.set_meta("key", key)?;
    let n = p.sdf.len();
    c.push_f64("sdf.points", vec![n, 3], &points_flat(&p.sdf.points))?;
    c.push_f64("sdf.distances", vec![n], &p.sdf.distances)?;
    let kinds: Vec<f64> = p.sdf.kinds.iter().map(|k| if *k == SampleKind::Uniform { 0.0 } else { 1.0 }).collect();
    c.push_f64("sdf.kinds", vec![n], &kinds)?;
    let flat: Vec<f64> = p.targets.iter().flat_map(|t| points_flat(t)).collect();
    c.push_f64("targets", vec![p.targets.len(), p.canonical.len(), 3], &flat)?;
    c.write(path)
}

/// Computes and caches samples for every sequence. Sequences whose cache
/// matches the current frames and config are loaded instead of recomputed.
/// Cached values are stored in single precision.
pub fn prepare_training_samples(
    dataset: &mut SequenceDataset,
    cfg: &SampleConfig,
) -> Result<(BTreeMap<String, PreparedSequence>, PrepareReport)> {
    let mut out = BTreeMap::new();
    let mut report = PrepareReport::default();
    let mut manifest_changed = false;
    for seq in &mut dataset.sequences {
        let key = cache_key(seq, cfg)?;
        let path = cache_path(&dataset.root, seq.id());
        let prepared = match read_cache(&path, &key)? {
            Some(p) => {
                report.reused.push(seq.id().to_string());
                p
            }
            None => {
                let p = prepare_sequence(seq, cfg)?;
                write_cache(&path, &key, &p)?;
                report.computed.push(seq.id().to_string());
                // reload so fresh and cached runs see identical values
                read_cache(&path, &key)?.ok_or_else(|| DnfError::Format(format!("cache of `{}` unreadable", seq.id())))?
            }
        };
        let rel = format!("{}/{CACHE_FILE}", seq.id());
        if seq.entry.cache_files.get("samples") != Some(&rel) {
            seq.entry.cache_files.insert("samples".into(), rel);
            manifest_changed = true;
        }
        out.insert(seq.id().to_string(), prepared);
    }
    if manifest_changed {
        dataset.manifest.sequences = dataset.sequences.iter().map(|s| s.entry.clone()).collect();
        write_manifest(&dataset.root, &dataset.manifest)?;
    }
    Ok((out, report))
}

//! MMD, coverage and 1-NNA over sequence Chamfer distances.
//!
//! Every metric is written against a generic distance so the same code runs on
//! point-cloud sequences and on toy scalar sets.

use serde::{Deserialize, Serialize};

use crate::error::{DnfError, Result};
use crate::geometry::{sequence_chamfer, Vec3};

/// Surface points of every frame of one sequence.
pub type PointSequence = Vec<Vec<Vec3>>;

/// Pairwise distances `d[i][j] = dist(a[i], b[j])`.
pub fn distance_matrix<T, F>(a: &[T], b: &[T], mut dist: F) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&T, &T) -> Result<f64>,
{
    a.iter().map(|x| b.iter().map(|y| dist(x, y)).collect()).collect()
}

pub fn sequence_distance(a: &PointSequence, b: &PointSequence) -> Result<f64> {
    sequence_chamfer(a, b)
}

fn non_empty<T>(gen: &[T], reference: &[T], what: &str) -> Result<()> {
    if gen.is_empty() || reference.is_empty() {
        return Err(DnfError::invalid(format!("{what} needs non-empty generated and reference sets")));
    }
    Ok(())
}

/// Index of the smallest entry; the first one wins ties.
fn argmin(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v < row[best] {
            best = i;
        }
    }
    best
}

/// Mean over reference items of the distance to the closest generated item.
pub fn mmd_with<T, F>(gen: &[T], reference: &[T], dist: F) -> Result<f64>
where
    F: FnMut(&T, &T) -> Result<f64>,
{
    non_empty(gen, reference, "MMD")?;
    let d = distance_matrix(reference, gen, dist)?;
    Ok(d.iter().map(|row| row.iter().copied().fold(f64::INFINITY, f64::min)).sum::<f64>() / reference.len() as f64)
}

/// Fraction of reference items that are the nearest reference of at least one
/// generated item.
pub fn coverage_with<T, F>(gen: &[T], reference: &[T], dist: F) -> Result<f64>
where
    F: FnMut(&T, &T) -> Result<f64>,
{
    non_empty(gen, reference, "coverage")?;
    let d = distance_matrix(gen, reference, dist)?;
    let mut hit = vec![false; reference.len()];
    for row in &d {
        hit[argmin(row)] = true;
    }
    Ok(hit.iter().filter(|&&h| h).count() as f64 / reference.len() as f64)
}

/// Leave-one-out 1-NN accuracy over the pooled set. A generated and a
/// reference neighbour at the same distance count as a reference neighbour.
pub fn one_nna_with<T, F>(gen: &[T], reference: &[T], mut dist: F) -> Result<f64>
where
    F: FnMut(&T, &T) -> Result<f64>,
{
    if gen.len() < 2 || reference.len() < 2 {
        return Err(DnfError::invalid("1-NNA needs at least two generated and two reference items"));
    }
    let pooled: Vec<(&T, bool)> = gen.iter().map(|x| (x, false)).chain(reference.iter().map(|x| (x, true))).collect();
    let n = pooled.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = dist(pooled[i].0, pooled[j].0)?;
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    let mut correct = 0usize;
    for i in 0..n {
        let (mut best_gen, mut best_ref) = (f64::INFINITY, f64::INFINITY);
        for j in (0..n).filter(|&j| j != i) {
            let slot = if pooled[j].1 { &mut best_ref } else { &mut best_gen };
            *slot = slot.min(d[i][j]);
        }
        let predicted_ref = best_ref <= best_gen;
        if predicted_ref == pooled[i].1 {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

pub fn mmd(gen: &[PointSequence], reference: &[PointSequence]) -> Result<f64> {
    mmd_with(gen, reference, sequence_distance)
}

pub fn coverage(gen: &[PointSequence], reference: &[PointSequence]) -> Result<f64> {
    coverage_with(gen, reference, sequence_distance)
}

pub fn one_nna(gen: &[PointSequence], reference: &[PointSequence]) -> Result<f64> {
    one_nna_with(gen, reference, sequence_distance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    SequenceChamfer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mmd: f64,
    pub cov: f64,
    pub one_nna: f64,
    pub n_gen: usize,
    pub n_ref: usize,
    pub distance: DistanceKind,
    pub points_per_frame: usize,
}

impl MetricReport {
    pub fn compute(gen: &[PointSequence], reference: &[PointSequence], points_per_frame: usize) -> Result<Self> {
        Ok(Self {
            mmd: mmd(gen, reference)?,
            cov: coverage(gen, reference)?,
            one_nna: one_nna(gen, reference)?,
            n_gen: gen.len(),
            n_ref: reference.len(),
            distance: DistanceKind::SequenceChamfer,
            points_per_frame,
        })
    }

    /// One row per metric; `display` is MMD ×10³ and the fractions in percent.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value,display,n_gen,n_ref,distance,points_per_frame\n");
        for (name, v, scale) in [("mmd", self.mmd, 1e3), ("cov", self.cov, 100.0), ("one_nna", self.one_nna, 100.0)] {
            out.push_str(&format!(
                "{name},{v},{},{},{},sequence_chamfer,{}\n",
                v * scale,
                self.n_gen,
                self.n_ref,
                self.points_per_frame
            ));
        }
        out
    }
}

/// Nearest training sequence of one generated sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyEntry {
    pub gen_id: String,
    pub train_id: String,
    pub distance: f64,
}

pub fn novelty_retrieval<T, F>(gen: &[(String, T)], train: &[(String, T)], mut dist: F) -> Result<Vec<NoveltyEntry>>
where
    F: FnMut(&T, &T) -> Result<f64>,
{
    if gen.is_empty() || train.is_empty() {
        return Err(DnfError::invalid("novelty retrieval needs generated and training sequences"));
    }
    gen.iter()
        .map(|(gid, g)| {
            let d: Vec<f64> = train.iter().map(|(_, t)| dist(g, t)).collect::<Result<_>>()?;
            let j = argmin(&d);
            Ok(NoveltyEntry { gen_id: gid.clone(), train_id: train[j].0.clone(), distance: d[j] })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

/// Equal-width bins over `[0, max distance]`; the last bin is closed.
pub fn novelty_histogram(entries: &[NoveltyEntry], n_bins: usize) -> Result<Vec<HistogramBin>> {
    if n_bins == 0 {
        return Err(DnfError::invalid("histogram needs at least one bin"));
    }
    let hi = entries.iter().map(|e| e.distance).fold(0.0, f64::max);
    let width = if hi > 0.0 { hi / n_bins as f64 } else { 1.0 };
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|b| HistogramBin { low: b as f64 * width, high: (b + 1) as f64 * width, count: 0 })
        .collect();
    for e in entries {
        let b = ((e.distance / width) as usize).min(n_bins - 1);
        bins[b].count += 1;
    }
    Ok(bins)
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_low,bin_high,count\n");
    for b in bins {
        out.push_str(&format!("{},{},{}\n", b.low, b.high, b.count));
    }
    out
}

pub fn novelty_csv(entries: &[NoveltyEntry]) -> String {
    let mut out = String::from("gen_id,train_id,distance\n");
    for e in entries {
        out.push_str(&format!("{},{},{}\n", e.gen_id, e.train_id, e.distance));
    }
    out
}

//! Generative-quality metrics, novelty retrieval and the reconstruction
//! ablation table.

mod ablation;
mod metrics;

pub use ablation::{
    reconstruction_ablation, sample_sequence_points, AblationRow, AblationTable, AblationVariant, SequenceMeshes,
};
pub use metrics::{
    coverage, coverage_with, distance_matrix, histogram_csv, mmd, mmd_with, novelty_csv, novelty_histogram,
    novelty_retrieval, one_nna, one_nna_with, sequence_distance, DistanceKind, HistogramBin, MetricReport,
    NoveltyEntry, PointSequence,
};

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::{TriMesh, Vec3};

    // Independent brute-force oracles.

    fn bf_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
        let side = |x: &[Vec3], y: &[Vec3]| {
            let mut s = 0.0;
            for p in x {
                let mut best = f64::INFINITY;
                for q in y {
                    let d = (p - q).norm_squared();
                    if d < best {
                        best = d;
                    }
                }
                s += best;
            }
            s / x.len() as f64
        };
        side(a, b) + side(b, a)
    }

    fn bf_seq(a: &PointSequence, b: &PointSequence) -> f64 {
        let mut s = 0.0;
        for t in 0..a.len() {
            s += bf_chamfer(&a[t], &b[t]);
        }
        s / a.len() as f64
    }

    fn bf_mmd<T>(g: &[T], r: &[T], d: &dyn Fn(&T, &T) -> f64) -> f64 {
        let mut total = 0.0;
        for y in r {
            let mut best = f64::INFINITY;
            for x in g {
                best = best.min(d(x, y));
            }
            total += best;
        }
        total / r.len() as f64
    }

    fn bf_cov<T>(g: &[T], r: &[T], d: &dyn Fn(&T, &T) -> f64) -> f64 {
        let mut matched = std::collections::BTreeSet::new();
        for x in g {
            let mut best = (f64::INFINITY, 0);
            for (j, y) in r.iter().enumerate() {
                let v = d(x, y);
                if v < best.0 {
                    best = (v, j);
                }
            }
            matched.insert(best.1);
        }
        matched.len() as f64 / r.len() as f64
    }

    fn bf_nna<T>(g: &[T], r: &[T], d: &dyn Fn(&T, &T) -> f64) -> f64 {
        let mut correct = 0;
        let all: Vec<(&T, u8)> = g.iter().map(|x| (x, 0)).chain(r.iter().map(|x| (x, 1))).collect();
        for (i, (x, label)) in all.iter().enumerate() {
            let mut best = f64::INFINITY;
            let mut best_label = 1;
            for (j, (y, l)) in all.iter().enumerate() {
                if i == j {
                    continue;
                }
                let v = d(x, y);
                if v < best || (v == best && *l == 1) {
                    best = v;
                    best_label = *l;
                }
            }
            if best_label == *label {
                correct += 1;
            }
        }
        correct as f64 / all.len() as f64
    }

    fn abs_dist(a: &f64, b: &f64) -> Result<f64, crate::DnfError> {
        Ok((a - b).abs())
    }

    fn cloud(rng: &mut ChaCha8Rng, n: usize, radius: f64, offset: f64) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                let v = Vec3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                v.normalize() * radius + Vec3::new(offset, 0.0, 0.0)
            })
            .collect()
    }

    fn sequences(n: usize, seed: u64, offset: f64) -> Vec<PointSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let r = rng.random_range(0.3..0.6);
                (0..2).map(|_| cloud(&mut rng, 24, r, offset)).collect()
            })
            .collect()
    }

    #[test]
    fn metrics_match_brute_force_on_sequences() {
        let g = sequences(20, 1, 0.0);
        let r = sequences(20, 2, 0.05);
        let d = |a: &PointSequence, b: &PointSequence| bf_seq(a, b);
        assert_eq!(mmd(&g, &r).unwrap(), bf_mmd(&g, &r, &d));
        assert_eq!(coverage(&g, &r).unwrap(), bf_cov(&g, &r, &d));
        assert_eq!(one_nna(&g, &r).unwrap(), bf_nna(&g, &r, &d));
        assert_eq!(one_nna(&g[..10], &r[..10]).unwrap(), bf_nna(&g[..10], &r[..10], &d));
    }

    #[test]
    fn toy_scalar_sets() {
        let d = |a: &f64, b: &f64| (a - b).abs();
        assert_eq!(mmd_with(&[0.0, 1.0], &[0.0, 2.0], abs_dist).unwrap(), 0.5);
        assert_eq!(mmd_with(&[0.0, 1.0], &[0.0, 2.0], abs_dist).unwrap(), bf_mmd(&[0.0, 1.0], &[0.0, 2.0], &d));
        // every generated item closest to the same reference
        assert_eq!(coverage_with(&[0.0, 0.1, -0.2], &[0.0, 5.0, 9.0], abs_dist).unwrap(), 1.0 / 3.0);
        assert!(mmd_with::<f64, _>(&[], &[1.0], abs_dist).is_err());
        assert!(coverage_with::<f64, _>(&[1.0], &[], abs_dist).is_err());
        assert!(one_nna_with(&[1.0], &[1.0, 2.0], abs_dist).is_err());
    }

    #[test]
    fn copies_and_separation() {
        let r = sequences(6, 3, 0.0);
        assert_eq!(mmd(&r, &r).unwrap(), 0.0);
        assert_eq!(coverage(&r, &r).unwrap(), 1.0);
        let far = sequences(6, 4, 5.0);
        assert_eq!(one_nna(&far, &r).unwrap(), 1.0);
        let mut superset = sequences(3, 9, 0.2);
        superset.extend(r.iter().cloned());
        assert_eq!(mmd(&superset, &r).unwrap(), 0.0);
    }

    #[test]
    fn same_distribution_one_nna_is_near_half() {
        let mut acc = 0.0;
        for trial in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
            let g: Vec<Vec<Vec3>> = (0..50).map(|_| vec![Vec3::new(rng.random(), rng.random(), rng.random())]).collect();
            let r: Vec<Vec<Vec3>> = (0..50).map(|_| vec![Vec3::new(rng.random(), rng.random(), rng.random())]).collect();
            let g: Vec<PointSequence> = g.into_iter().map(|p| vec![p]).collect();
            let r: Vec<PointSequence> = r.into_iter().map(|p| vec![p]).collect();
            acc += one_nna(&g, &r).unwrap();
        }
        let mean = acc / 10.0;
        assert!((0.40..=0.60).contains(&mean), "mean 1-NNA {mean}");
    }

    #[test]
    fn novelty_and_histogram() {
        let train = sequences(5, 5, 0.0);
        let named: Vec<(String, PointSequence)> = train.iter().enumerate().map(|(i, s)| (format!("t{i}"), s.clone())).collect();
        let gen: Vec<(String, PointSequence)> = vec![("g0".into(), train[3].clone()), ("g1".into(), sequences(1, 6, 0.3).remove(0))];
        let entries = novelty_retrieval(&gen, &named, sequence_distance).unwrap();
        assert_eq!(entries[0].train_id, "t3");
        assert_eq!(entries[0].distance, 0.0);
        assert!(entries[1].distance > 0.0);
        let bins = novelty_histogram(&entries, 4).unwrap();
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), gen.len());
        let csv = histogram_csv(&bins);
        assert!(csv.starts_with("bin_low,bin_high,count\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn report_csv_has_one_block() {
        let r = sequences(4, 7, 0.0);
        let rep = MetricReport::compute(&r, &r, 24).unwrap();
        assert_eq!((rep.mmd, rep.cov), (0.0, 1.0));
        let csv = rep.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("mmd,0,0,4,4,sequence_chamfer,24"));
    }

    #[test]
    fn ablation_table() {
        let frames = |r: f64| vec![TriMesh::icosphere(r, 2), TriMesh::icosphere(r * 1.1, 2)];
        let gt: SequenceMeshes = [("a".to_string(), frames(0.4)), ("b".to_string(), frames(0.5))].into_iter().collect();
        let mut recon: BTreeMap<AblationVariant, SequenceMeshes> = BTreeMap::new();
        recon.insert(AblationVariant::LatentOnly, [("a".to_string(), frames(0.3)), ("b".to_string(), frames(0.4))].into_iter().collect());
        recon.insert(AblationVariant::ShapeCodeFit, recon[&AblationVariant::LatentOnly].clone());
        recon.insert(AblationVariant::ShapeCodeAndCoeffFit, gt.clone());
        assert!(reconstruction_ablation(&gt, &recon, 200, 0).is_err());
        recon.insert(AblationVariant::Decoupled, gt.clone());
        let table = reconstruction_ablation(&gt, &recon, 200, 0).unwrap();
        assert_eq!(table.mean_cd(AblationVariant::Decoupled), Some(0.0));
        assert_eq!(table.mean_cd(AblationVariant::LatentOnly), table.mean_cd(AblationVariant::ShapeCodeFit));
        assert!(table.mean_cd(AblationVariant::LatentOnly).unwrap() > 0.0);
        assert_eq!(table.to_csv().lines().count(), 5);
    }

    proptest! {
        #[test]
        fn mmd_and_cov_are_permutation_invariant(
            g in prop::collection::vec(-10.0f64..10.0, 1..12),
            r in prop::collection::vec(-10.0f64..10.0, 1..12),
            rot_g in 0usize..12,
            rot_r in 0usize..12,
        ) {
            let mut g2 = g.clone();
            g2.rotate_left(rot_g % g.len());
            g2.reverse();
            let mut r2 = r.clone();
            r2.rotate_left(rot_r % r.len());
            let m1 = mmd_with(&g, &r, abs_dist).unwrap();
            let m2 = mmd_with(&g2, &r2, abs_dist).unwrap();
            prop_assert!((m1 - m2).abs() <= 1e-12 * m1.abs().max(1.0));
            prop_assert_eq!(coverage_with(&g, &r, abs_dist).unwrap(), coverage_with(&g2, &r2, abs_dist).unwrap());
        }

        #[test]
        fn one_nna_is_label_symmetric(
            g in prop::collection::vec(-10.0f64..10.0, 2..10),
            r in prop::collection::vec(-10.0f64..10.0, 2..10),
        ) {
            let mut all: Vec<f64> = g.iter().chain(&r).copied().collect();
            all.sort_by(f64::total_cmp);
            prop_assume!(all.windows(2).all(|w| w[1] - w[0] > 1e-9));
            let d = |a: &f64, b: &f64| (a - b).abs();
            let a = one_nna_with(&g, &r, abs_dist).unwrap();
            prop_assert_eq!(a, one_nna_with(&r, &g, abs_dist).unwrap());
            prop_assert_eq!(a, bf_nna(&g, &r, &d));
        }

        #[test]
        fn scalar_metrics_match_brute_force(
            g in prop::collection::vec(-10.0f64..10.0, 2..20),
            r in prop::collection::vec(-10.0f64..10.0, 2..20),
        ) {
            let d = |a: &f64, b: &f64| (a - b).abs();
            prop_assert_eq!(mmd_with(&g, &r, abs_dist).unwrap(), bf_mmd(&g, &r, &d));
            prop_assert_eq!(coverage_with(&g, &r, abs_dist).unwrap(), bf_cov(&g, &r, &d));
            prop_assert_eq!(one_nna_with(&g, &r, abs_dist).unwrap(), bf_nna(&g, &r, &d));
        }
    }
}

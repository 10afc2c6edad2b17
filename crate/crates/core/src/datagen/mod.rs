//! Synthetic 4D corpus: analytic identities and deformations with exact
//! correspondences, OBJ/manifest persistence, splits and cached samples.

mod dataset;
mod synth;

pub use dataset::{
    generate_dataset, ingest, load_dataset, prepare_sequence, prepare_training_samples, split_dataset,
    split_holdout_identities, InMemorySource, Manifest, PrepareReport, PreparedSequence, SampleConfig, Sequence, SequenceDataset,
    SequenceEntry, SequenceSource, SourceSequence, Split, SyntheticSource, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use synth::{desk_corpus, leg_tip_amplitude, DeformationKind, IdentityKind, SyntheticSpec, IDENTITY_RESOLUTION};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        evaluate_correspondences, sample_correspondences, CorrespondenceSampling, SdfSampling, Vec3,
    };

    fn specs() -> Vec<SyntheticSpec> {
        let mk = |id: &str, identity: IdentityKind, deformation: DeformationKind, amplitude: f64| SyntheticSpec {
            identity_id: id.into(),
            identity,
            deformation,
            amplitude,
            n_frames: 4,
            seed: 3,
        };
        vec![
            mk("ball", IdentityKind::Sphere { radius: 0.4 }, DeformationKind::Translate, 0.2),
            mk("ball", IdentityKind::Sphere { radius: 0.4 }, DeformationKind::Stretch, 0.2),
            mk("pill", IdentityKind::Capsule { radius: 0.2, half_length: 0.3 }, DeformationKind::Twist, 1.0),
            mk("brick", IdentityKind::Box { half: [0.3, 0.2, 0.25], rounding: 0.05 }, DeformationKind::Bend, 0.8),
        ]
    }

    fn small_samples() -> SampleConfig {
        SampleConfig {
            sdf: SdfSampling { n_uniform: 200, n_near: 600, band: 0.02 },
            correspondences: CorrespondenceSampling { n: 500, noise_sigma: 0.002, noise_fraction: 0.5 },
            seed: 1,
        }
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let da = generate_dataset(&specs(), a.path()).unwrap();
        generate_dataset(&specs(), b.path()).unwrap();
        for s in &da.manifest.sequences {
            for f in &s.frame_files {
                assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
            }
        }
        assert_eq!(da.sequences.len(), 4);
        assert!(generate_dataset(&[], a.path()).is_err());
        let dup = vec![specs()[0].clone(), specs()[0].clone()];
        assert!(generate_dataset(&dup, a.path()).is_err());
    }

    #[test]
    fn manifest_round_trip_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&specs(), dir.path()).unwrap();
        let loaded = load_dataset(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded.manifest, ds.manifest);
        for (a, b) in loaded.sequences.iter().zip(&ds.sequences) {
            assert_eq!(a.frames.len(), b.frames.len());
            assert!(a.frames.iter().all(|f| f.same_topology(a.canonical())));
        }
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        for key in ["version", "sequences", "normalization"] {
            assert!(json.get(key).is_some());
        }
        let first = &ds.manifest.sequences[0].frame_files;
        std::fs::remove_file(dir.path().join(&first[1])).unwrap();
        std::fs::remove_file(dir.path().join(&first[2])).unwrap();
        match load_dataset(&dir.path().join(MANIFEST_FILE)) {
            Err(crate::DnfError::MissingFiles(files)) => assert_eq!(files.len(), 2),
            other => panic!("expected missing files, got {other:?}"),
        }
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let dir = tempfile::tempdir().unwrap();
        let specs = desk_corpus(0).into_iter().map(|s| SyntheticSpec { n_frames: 2, ..s }).collect::<Vec<_>>();
        let ds = generate_dataset(&specs, dir.path()).unwrap();
        let s = split_dataset(&ds, (0.75, 0.05, 0.20), 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (18, 1, 5));
        let mut all: Vec<String> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
        all.sort();
        let mut ids = ds.ids();
        ids.sort();
        assert_eq!(all, ids);
        assert_eq!(s, split_dataset(&ds, (0.75, 0.05, 0.20), 7).unwrap());
        assert_ne!(s, split_dataset(&ds, (0.75, 0.05, 0.20), 8).unwrap());
        assert!(split_dataset(&ds, (0.5, 0.1, 0.1), 0).is_err());

        let h = split_holdout_identities(&ds, &["quadruped".to_string()]).unwrap();
        assert_eq!(h.test.len(), 3);
        for id in &h.train {
            assert_ne!(ds.get(id).unwrap().identity(), "quadruped");
        }
        assert!(split_holdout_identities(&ds, &["unicorn".to_string()]).is_err());
    }

    #[test]
    fn prepare_is_idempotent_and_frame_zero_is_canonical() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = generate_dataset(&specs()[..2], dir.path()).unwrap();
        let cfg = small_samples();
        let (first, r1) = prepare_training_samples(&mut ds, &cfg).unwrap();
        assert_eq!(r1.computed.len(), 2);
        let stamp = std::fs::metadata(dir.path().join("ball_translate/samples.dnfc")).unwrap().modified().unwrap();
        let (second, r2) = prepare_training_samples(&mut ds, &cfg).unwrap();
        assert!(r2.computed.is_empty() && r2.reused.len() == 2);
        assert_eq!(first, second);
        assert_eq!(std::fs::metadata(dir.path().join("ball_translate/samples.dnfc")).unwrap().modified().unwrap(), stamp);
        let p = &first["ball_translate"];
        assert_eq!(p.sdf.len(), 800);
        assert_eq!(p.targets[0], p.canonical);
        assert_eq!(p.motion_targets().len(), 3);
        let reloaded = load_dataset(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(reloaded.sequences[0].entry.cache_files["samples"], "ball_translate/samples.dnfc");
        // a config change invalidates the cache
        let (_, r3) = prepare_training_samples(&mut ds, &SampleConfig { seed: 2, ..cfg }).unwrap();
        assert_eq!(r3.computed.len(), 2);
    }

    #[test]
    fn correspondences_follow_the_analytic_flow() {
        for spec in specs() {
            let frames = spec.frames().unwrap();
            let resolved = spec.resolved();
            let params = CorrespondenceSampling { n: 2000, noise_sigma: 0.002, noise_fraction: 0.0 };
            let corr = sample_correspondences(&frames[0], &params, 0).unwrap();
            let affine = matches!(spec.deformation, DeformationKind::Translate | DeformationKind::Stretch);
            for (t, f) in frames.iter().enumerate() {
                let got = evaluate_correspondences(&corr, f).unwrap();
                let err = got
                    .iter()
                    .zip(&corr.canonical_positions)
                    .map(|(g, c)| (g - resolved.deform(c, t as f64)).norm())
                    .fold(0.0, f64::max);
                // piecewise-linear interpolation error of a smooth map on ~0.035-unit triangles
                let tol = if affine { 1e-5 } else { 2e-3 };
                assert!(err < tol, "{} frame {t}: {err}", spec.sequence_id());
            }
        }
        // rigid motion also carries normal-offset points exactly
        let spec = &specs()[0];
        let frames = spec.frames().unwrap();
        let corr = sample_correspondences(&frames[0], &CorrespondenceSampling { n: 500, noise_sigma: 0.002, noise_fraction: 1.0 }, 1).unwrap();
        let got = evaluate_correspondences(&corr, &frames[3]).unwrap();
        for (g, c) in got.iter().zip(&corr.canonical_positions) {
            assert!((g - (c + Vec3::new(0.2, 0.0, 0.0))).norm() < 1e-5);
        }
    }
}

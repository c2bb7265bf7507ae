use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::cohort::{simulate_cohort, SimConfig};
use crate::harness::{train_bundle, Algorithm, AlgorithmSpec, ExperimentConfig};

fn trained(spec: AlgorithmSpec) -> ModelBundle {
    let (cohort, _) = simulate_cohort(&SimConfig { n: 800, ..SimConfig::default() }, 3).unwrap();
    let config = ExperimentConfig {
        mice_cycles: 2,
        master_seed: 5,
        ..ExperimentConfig::default()
    };
    train_bundle(&cohort, &spec, &config).unwrap()
}

fn random_record(rng: &mut ChaCha8Rng) -> ResidentRecord {
    let mut r = ResidentRecord::empty();
    for f in Feature::ALL {
        if rng.random_bool(0.2) {
            continue;
        }
        let levels = f.levels();
        r.set(f, Some(levels[rng.random_range(0..levels.len())])).unwrap();
    }
    r
}

#[test]
fn round_trip_reproduces_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dir = tempfile::tempdir().unwrap();
    for spec in [
        AlgorithmSpec::new(Algorithm::Xgboost).with_rounds(60),
        AlgorithmSpec::new(Algorithm::Coxph),
        AlgorithmSpec::new(Algorithm::RandomForest).with_estimators(6),
    ] {
        let bundle = trained(spec);
        let path = dir.path().join("model.bundle");
        save_bundle(&bundle, &path).unwrap();
        assert!(!path.with_extension("tmp").exists());
        let loaded = load_bundle(&path).unwrap();
        assert_eq!(loaded, bundle);
        for _ in 0..100 {
            let record = random_record(&mut rng);
            let a = bundle.predict(&record).unwrap();
            let b = loaded.predict(&record).unwrap();
            assert!((a.margin - b.margin).abs() <= 1e-12);
            for (x, y) in a.survival.iter().zip(&b.survival) {
                assert!((x - y).abs() <= 1e-12);
            }
            for (x, y) in a.calibrated.iter().zip(&b.calibrated) {
                assert!((x.probability - y.probability).abs() <= 1e-12);
            }
            assert_eq!(a.imputed, b.imputed);
        }
    }
}

#[test]
fn trained_bundle_contents() {
    let bundle = trained(AlgorithmSpec::new(Algorithm::Xgboost).with_rounds(40));
    assert_eq!(bundle.horizons(), vec![30, 91, 182, 365]);
    assert_eq!(bundle.provenance.algorithm, "XGB");
    assert_eq!(bundle.provenance.config_hash.len(), 64);
    assert!(bundle.provenance.metrics.contains_key("validation_cindex"));
    let b = &bundle.baseline;
    assert_eq!(b.times[0], 0.0);
    assert_eq!(b.survival[0], 1.0);
    assert!(b.times.contains(&182.0));
    assert!(b.survival.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(bundle.model.as_ref().unwrap().feature_names(), bundle.feature_names().as_slice());
}

#[test]
fn prepare_flags_and_keeps_observed_values() {
    let bundle = trained(AlgorithmSpec::new(Algorithm::Coxph));
    let mut record = ResidentRecord::empty();
    for f in Feature::ALL {
        record.set(f, Some(f.levels()[0])).unwrap();
    }
    let full = bundle.prepare(&record).unwrap();
    assert!(full.imputed.is_empty());
    for (m, v) in bundle.features.iter().zip(&full.values) {
        let f: Feature = m.name.parse().unwrap();
        assert_eq!(*v, f64::from(f.levels()[0]));
    }
    record.set(Feature::Mobilisation, None).unwrap();
    record.set(Feature::SkinIntegrityScore, None).unwrap();
    let partial = bundle.prepare(&record).unwrap();
    let expected: Vec<String> = bundle
        .feature_names()
        .into_iter()
        .filter(|n| n == "mobilisation" || n == "skin_integrity_score")
        .collect();
    assert!(expected.contains(&"mobilisation".to_string()));
    assert_eq!(partial.imputed, expected);
    let j = bundle.feature_names().iter().position(|n| n == "mobilisation").unwrap();
    assert!((0.0..=4.0).contains(&partial.values[j]));
    assert_eq!(partial, bundle.prepare(&record).unwrap());

    let mut bare = bundle.clone();
    bare.imputation = None;
    match bare.prepare(&record) {
        Err(Error::InvalidFields(f)) => assert_eq!(f[0].field, "mobilisation"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn truncated_or_corrupted_files_are_rejected() {
    let bundle = trained(AlgorithmSpec::new(Algorithm::Xgboost).with_rounds(10));
    let bytes = bundle.to_bytes().unwrap();
    for cut in [1, 20, bytes.len() / 3, bytes.len() / 2, bytes.len() - 1] {
        match ModelBundle::from_bytes(&bytes[..cut]) {
            Err(Error::ChecksumMismatch) => {}
            other => panic!("cut {cut}: {other:?}"),
        }
    }
    let mut flipped = bytes.clone();
    let k = bytes.len() - 10;
    flipped[k] ^= 0x01;
    assert!(matches!(ModelBundle::from_bytes(&flipped), Err(Error::ChecksumMismatch)));
}

#[test]
fn version_mismatch_names_both_versions() {
    let bytes = ModelBundle::empty().to_bytes().unwrap();
    let text = String::from_utf8(bytes).unwrap().replacen("CARESPAN-BUNDLE 1 ", "CARESPAN-BUNDLE 7 ", 1);
    let err = ModelBundle::from_bytes(text.as_bytes()).unwrap_err();
    assert!(matches!(err, Error::VersionMismatch { found: 7, expected: 1 }));
    assert!(err.to_string().contains('7') && err.to_string().contains('1'));
    assert!(matches!(ModelBundle::from_bytes(b"hello\n{}"), Err(Error::CorruptBundle(_))));
}

#[test]
fn empty_bundle_round_trips() {
    let empty = ModelBundle::empty();
    let back = ModelBundle::from_bytes(&empty.to_bytes().unwrap()).unwrap();
    assert_eq!(back, empty);
    assert!(back.predict(&ResidentRecord::empty()).is_err());
}

#[test]
fn invariants_are_checked() {
    let bundle = trained(AlgorithmSpec::new(Algorithm::Coxph));
    let mut dup = bundle.clone();
    dup.scalers[1].horizon_days = dup.scalers[0].horizon_days;
    assert!(dup.to_bytes().is_err());
    let mut renamed = bundle.clone();
    renamed.features[0].name = "something_else".into();
    assert!(renamed.validate().is_err());
    let mut rising = bundle;
    rising.baseline.survival[3] = 1.0;
    assert!(rising.validate().is_err());
}

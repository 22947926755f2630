mod common;

use std::collections::BTreeSet;
use std::f64::consts::PI;

use icadenoise_core::data::{
    artifact_timecourse, generate_synthetic, power_spectrum, signal_timecourse, split_folds,
    standardize, ArtifactSeries, ComponentRecord, Dataset, Features, Label, SplitConfig,
    SynthConfig,
};
use icadenoise_core::zoo::Domain;
use icadenoise_core::Error;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (
        m,
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt(),
    )
}

fn tiny_config(seed: u64) -> SynthConfig {
    SynthConfig {
        n_subjects: 394,
        components_per_subject: 2,
        grid: [6, 7, 6],
        timecourse_len: 32,
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn standardize_is_idempotent() {
    let mut rng = common::rng(1);
    let x: Vec<f64> = (0..50).map(|_| rng.gen_range(-3.0..9.0)).collect();
    let z = standardize(&x).unwrap();
    let zz = standardize(&z).unwrap();
    for (a, b) in z.iter().zip(&zz) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn pure_tone_has_one_dominant_bin() {
    let t = 64;
    for k in [1, 5, 17, 31] {
        let x: Vec<f64> = (0..t)
            .map(|n| (2.0 * PI * k as f64 * n as f64 / t as f64 + 0.3).cos())
            .collect();
        let p = power_spectrum(&x).unwrap();
        assert_eq!(p.len(), 32);
        let peak = p[k - 1];
        for (j, &v) in p.iter().enumerate() {
            if j != k - 1 {
                assert!(v <= 1e-8 * peak, "bin {} = {v}", j + 1);
            }
        }
    }
}

#[test]
fn retained_spectrum_holds_half_the_energy() {
    let mut rng = common::rng(2);
    for t in [63usize, 64, 101, 1200] {
        let x: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z = standardize(&x).unwrap();
        let energy: f64 = z.iter().map(|v| v * v).sum();
        let p = power_spectrum(&x).unwrap();
        let mut retained: f64 = p.iter().sum();
        if t % 2 == 0 {
            // the Nyquist bin has no mirror image, so it counts only once
            retained -= p[t / 2 - 1] / 2.0;
        }
        let rel = (retained - energy / 2.0).abs() / (energy / 2.0);
        assert!(rel <= 1e-6, "T={t}: {rel}");
    }
}

#[test]
fn white_noise_spectrum_is_flat_on_average() {
    let t = 1024;
    let mut avg = vec![0.0; t / 2];
    for seed in 0..20 {
        let mut rng = common::rng(100 + seed);
        let x: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut rng)).collect();
        for (a, p) in avg.iter_mut().zip(power_spectrum(&x).unwrap()) {
            *a += p / 20.0;
        }
    }
    let mean = avg.iter().sum::<f64>() / avg.len() as f64;
    let worst = avg.iter().cloned().fold(0.0, f64::max);
    assert!(worst <= 5.0 * mean, "{worst} vs mean {mean}");
}

fn rel_close(a: &[f64], b: &[f64]) -> bool {
    let scale = a.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-6 * scale)
}

proptest! {
    #[test]
    fn standardized_output_has_zero_mean_unit_std(x in prop::collection::vec(-1e3f64..1e3, 2..200)) {
        prop_assume!(mean_std(&x).1 > 1e-6);
        let z = standardize(&x).unwrap();
        let (m, s) = mean_std(&z);
        prop_assert!(m.abs() <= 1e-9);
        prop_assert!((s - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn periodogram_ignores_circular_shifts(x in prop::collection::vec(-5f64..5.0, 8..128), shift in 0usize..200) {
        prop_assume!(mean_std(&x).1 > 1e-3);
        let s = shift % x.len();
        let mut y = x.clone();
        y.rotate_left(s);
        let p = power_spectrum(&x).unwrap();
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!(rel_close(&p, &power_spectrum(&y).unwrap()));
    }

    #[test]
    fn periodogram_ignores_affine_rescaling(
        x in prop::collection::vec(-5f64..5.0, 8..128),
        a in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
        b in -100f64..100.0,
    ) {
        prop_assume!(mean_std(&x).1 > 1e-3);
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!(rel_close(&power_spectrum(&x).unwrap(), &power_spectrum(&y).unwrap()));
    }

    #[test]
    fn folds_are_subject_disjoint(seed in 0u64..1000) {
        let mut records = Vec::new();
        let mut rng = common::rng(seed);
        for s in 0..130 {
            for c in 0..3 {
                let label = if rng.gen_bool(0.7) { Label::Artifact } else { Label::Signal };
                records.push(stub_record(&format!("s{s}"), c, label));
            }
        }
        let folds = split_folds(&records, &SplitConfig { seed, ..SplitConfig::default() }).unwrap();
        check_folds(&records, &folds);
    }
}

fn stub_record(subject: &str, component: u32, label: Label) -> ComponentRecord {
    ComponentRecord {
        subject_id: subject.to_string(),
        component_id: component,
        label,
        spatial_map: vec![],
        timecourse: vec![],
        power_spectrum: vec![],
    }
}

fn check_folds(records: &[ComponentRecord], folds: &[icadenoise_core::data::FoldPlan]) {
    assert_eq!(folds.len(), 5);
    let test0: BTreeSet<&String> = folds[0].test_subjects.iter().collect();
    let mut validated = BTreeSet::new();
    for f in folds {
        let train: BTreeSet<&String> = f.train_subjects.iter().collect();
        let val: BTreeSet<&String> = f.val_subjects.iter().collect();
        let test: BTreeSet<&String> = f.test_subjects.iter().collect();
        assert_eq!((train.len(), val.len()), (80, 20));
        assert!(train.is_disjoint(&val) && train.is_disjoint(&test) && val.is_disjoint(&test));
        assert_eq!(test, test0);
        for r in records {
            let hits = [&train, &val, &test]
                .iter()
                .filter(|s| s.contains(&r.subject_id))
                .count();
            assert_eq!(hits, 1);
        }
        let art = f
            .balanced_train_records
            .iter()
            .filter(|&&i| records[i].label == Label::Artifact)
            .count();
        assert_eq!(2 * art, f.balanced_train_records.len());
        assert!(f
            .balanced_train_records
            .iter()
            .all(|&i| train.contains(&records[i].subject_id)));
        assert!(f
            .val_records
            .iter()
            .all(|&i| val.contains(&records[i].subject_id)));
        assert!(f
            .test_records
            .iter()
            .all(|&i| test.contains(&records[i].subject_id)));
        validated.extend(val);
    }
    assert_eq!(validated.len(), 100);
}

#[test]
fn default_subject_counts_give_the_standard_partition() {
    let records = generate_synthetic(&tiny_config(4)).unwrap();
    let folds = split_folds(&records, &SplitConfig::default()).unwrap();
    assert_eq!(folds[0].test_subjects.len(), 294);
    check_folds(&records, &folds);
    assert_ne!(
        folds[0].balanced_train_records,
        folds[1].balanced_train_records
    );
}

#[test]
fn too_few_subjects_is_a_partition_error() {
    let records: Vec<_> = (0..100)
        .map(|s| stub_record(&format!("s{s}"), 0, Label::Artifact))
        .collect();
    assert!(matches!(
        split_folds(&records, &SplitConfig::default()),
        Err(Error::Partition(_))
    ));
}

#[test]
fn artifact_fraction_is_within_three_sigma() {
    let cfg = SynthConfig {
        n_subjects: 50,
        components_per_subject: 20,
        grid: [6, 6, 6],
        timecourse_len: 32,
        artifact_fraction: 0.7,
        ..SynthConfig::default()
    };
    let records = generate_synthetic(&cfg).unwrap();
    assert_eq!(records.len(), 1000);
    let artifacts = records
        .iter()
        .filter(|r| r.label == Label::Artifact)
        .count() as f64;
    let sigma = (1000.0f64 * 0.7 * 0.3).sqrt();
    assert!((artifacts - 700.0).abs() <= 3.0 * sigma, "{artifacts}");
}

#[test]
fn generation_is_deterministic_per_seed() {
    let a = Dataset::generate(&tiny_config(9)).unwrap();
    let b = Dataset::generate(&tiny_config(9)).unwrap();
    let c = Dataset::generate(&tiny_config(10)).unwrap();
    assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    assert_ne!(a.hash().unwrap(), c.hash().unwrap());
}

#[test]
fn generated_records_satisfy_their_invariants() {
    let cfg = SynthConfig {
        n_subjects: 5,
        components_per_subject: 20,
        grid: [24, 27, 24],
        timecourse_len: 1200,
        ..SynthConfig::default()
    };
    for r in generate_synthetic(&cfg).unwrap() {
        let map: Vec<f64> = r.spatial_map.iter().map(|&v| v as f64).collect();
        let (m, s) = mean_std(&map);
        assert!(m.abs() <= 1e-5 && (s - 1.0).abs() <= 1e-4, "{m} {s}");
        assert_eq!(r.timecourse.len(), 1200);
        assert_eq!(r.power_spectrum.len(), 600);
        assert!(r.power_spectrum.iter().all(|&p| p >= 0.0));
    }
}

#[test]
fn signal_spectra_sit_below_the_cutoff_more_than_high_frequency_artifacts() {
    let t = 1200;
    let cutoff = (0.1 * t as f64) as usize;
    let low_mass = |x: &[f64]| {
        let p = power_spectrum(x).unwrap();
        p[..cutoff].iter().sum::<f64>() / p.iter().sum::<f64>()
    };
    let mut rng = common::rng(12);
    let n = 200;
    let signal: f64 = (0..n)
        .map(|_| low_mass(&signal_timecourse(t, 0.3, &mut rng)))
        .sum::<f64>()
        / n as f64;
    let artifact: f64 = (0..n)
        .map(|_| {
            low_mass(&artifact_timecourse(
                ArtifactSeries::HighFrequency,
                t,
                0.3,
                &mut rng,
            ))
        })
        .sum::<f64>()
        / n as f64;
    assert!(signal > artifact, "{signal} vs {artifact}");
}

#[test]
fn invalid_generator_settings_are_rejected() {
    for bad in [
        SynthConfig {
            artifact_fraction: 1.0,
            ..SynthConfig::default()
        },
        SynthConfig {
            artifact_fraction: 0.0,
            ..SynthConfig::default()
        },
        SynthConfig {
            n_subjects: 0,
            ..SynthConfig::default()
        },
        SynthConfig {
            components_per_subject: 0,
            ..SynthConfig::default()
        },
    ] {
        assert!(matches!(generate_synthetic(&bad), Err(Error::Config(_))));
    }
}

#[test]
fn dataset_round_trips_through_bytes_and_files() {
    let ds = Dataset::generate(&SynthConfig {
        n_subjects: 3,
        ..tiny_config(1)
    })
    .unwrap();
    assert_eq!(Dataset::decode(&ds.encode().unwrap()).unwrap(), ds);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    ds.write(&path).unwrap();
    assert_eq!(Dataset::read(&path).unwrap(), ds);
}

#[test]
fn empty_dataset_is_a_valid_file() {
    let ds = Dataset::new([4, 4, 4], 16, vec![], None).unwrap();
    let back = Dataset::decode(&ds.encode().unwrap()).unwrap();
    assert!(back.records.is_empty());
    assert_eq!(back, ds);
}

#[test]
fn damaged_files_give_distinct_errors() {
    let ds = Dataset::generate(&SynthConfig {
        n_subjects: 2,
        ..tiny_config(1)
    })
    .unwrap();
    let bytes = ds.encode().unwrap();

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(Dataset::decode(&magic), Err(Error::Format(_))));

    let truncated = &bytes[..bytes.len() - 40];
    assert!(matches!(
        Dataset::decode(truncated),
        Err(Error::Truncated(_))
    ));
    assert!(matches!(
        Dataset::decode(&bytes[..5]),
        Err(Error::Truncated(_))
    ));

    let mut flipped = bytes.clone();
    let mid = bytes.len() - 100;
    flipped[mid] ^= 0x40;
    assert!(matches!(
        Dataset::decode(&flipped),
        Err(Error::Checksum { .. })
    ));

    let mut newer = ds.clone();
    newer.header.format_version = 99;
    assert!(matches!(
        Dataset::decode(&newer.encode().unwrap()),
        Err(Error::Version { found: 99, .. })
    ));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.bin");
    std::fs::write(&path, truncated).unwrap();
    assert!(matches!(
        Dataset::read(&path).unwrap_err().root(),
        Error::Truncated(_)
    ));
}

#[test]
fn features_hold_standardized_inputs() {
    let ds = Dataset::generate(&SynthConfig {
        n_subjects: 2,
        ..tiny_config(3)
    })
    .unwrap();
    let records = ds.records.clone();
    let f = Features::from_dataset(ds).unwrap();
    assert_eq!(f.len(), 4);
    assert_eq!(f.row(Domain::Spatial, 1), records[1].spatial_map.as_slice());
    for d in [Domain::Temporal, Domain::Frequency] {
        let row: Vec<f64> = f.row(d, 2).iter().map(|&v| v as f64).collect();
        let (m, s) = mean_std(&row);
        assert!(m.abs() < 1e-5 && (s - 1.0).abs() < 1e-4);
    }
    let batch = f.batch::<f32>(&[0, 3], &[Domain::Spatial, Domain::Frequency]);
    assert_eq!(batch.spatial.as_ref().unwrap().shape(), &[2, 1, 6, 7, 6]);
    assert_eq!(batch.frequency.as_ref().unwrap().shape(), &[2, 1, 16]);
    assert!(batch.temporal.is_none());
    assert_eq!(
        f.targets::<f32>(&[0, 3]),
        vec![
            records[0].label.as_u8() as f32,
            records[3].label.as_u8() as f32
        ]
    );
}

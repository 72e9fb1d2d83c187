use std::io::Write;

use prose_core::dataset::{
    config_hash, generate, generate_split, make_sample, read_dataset, read_jsonl, write_dataset, write_jsonl,
    DatasetConfig, DatasetError, DatasetReader, Split, SplitSizes, DATASET_VERSION,
};
use prose_core::integrate::{linspace, solve};
use prose_core::symbolic::{from_polish, Vocabulary};

fn small() -> DatasetConfig {
    DatasetConfig {
        train: SplitSizes {
            instances: 25,
            ics_per_instance: 4,
        },
        ..DatasetConfig::desk()
    }
}

#[test]
fn binary_roundtrip_of_100_samples() {
    let cfg = small();
    let samples = generate_split(&cfg, Split::Train, 11).unwrap();
    assert_eq!(samples.len(), 100);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.bin");
    write_dataset(&path, config_hash(&cfg), &samples).unwrap();
    let (header, back) = read_dataset(&path).unwrap();
    assert_eq!(header.count, 100);
    assert_eq!(header.version, DATASET_VERSION);
    assert_eq!(header.config_hash, config_hash(&cfg));
    assert_eq!(back, samples);

    let json = dir.path().join("train.jsonl");
    write_jsonl(&json, &samples).unwrap();
    assert_eq!(read_jsonl(&json).unwrap(), samples);
}

#[test]
fn truncated_file_reports_record_index() {
    let cfg = small();
    let samples = generate(
        &cfg,
        SplitSizes {
            instances: 2,
            ics_per_instance: 2,
        },
        3,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    write_dataset(&path, [0; 32], &samples).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    let results: Vec<_> = DatasetReader::open(&path).unwrap().collect();
    assert_eq!(results.len(), 4);
    assert!(results[..3].iter().all(|r| r.is_ok()));
    assert!(matches!(results[3], Err(DatasetError::CorruptRecord { index: 3 })));
}

#[test]
fn other_versions_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    write_dataset(&path, [0; 32], &[]).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[8..12].copy_from_slice(&(DATASET_VERSION + 1).to_le_bytes());
    std::fs::File::create(&path).unwrap().write_all(&bytes).unwrap();
    assert!(matches!(read_dataset(&path), Err(DatasetError::SchemaMismatch(_))));
    std::fs::write(&path, b"garbage").unwrap();
    assert!(matches!(read_dataset(&path), Err(DatasetError::SchemaMismatch(_))));
}

#[test]
fn targets_reproduce_clean_trajectories() {
    let cfg = small();
    let vocab = Vocabulary::default();
    let grid = linspace(0.0, 6.0, 192);
    for s in generate(
        &cfg,
        SplitSizes {
            instances: 6,
            ics_per_instance: 1,
        },
        8,
    )
    .unwrap()
    {
        let sys = from_polish(s.symbol_target.ids(), &vocab).unwrap();
        let clean = solve(&sys, &s.initial_condition, &grid, &cfg.solver).unwrap();
        // Compare on the input window, before chaos amplifies the
        // three-digit coefficient quantization.
        let anchor = clean.row(63);
        let err: f64 = anchor
            .iter()
            .zip(&s.anchor_state)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = s.anchor_state.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(err / norm < 1e-2, "{}: {}", s.family_name(), err / norm);
    }
}

#[test]
fn measured_snr_is_exact_on_every_sample() {
    let cfg = small();
    let grid = linspace(0.0, 6.0, 192);
    let fams = cfg.resolve_families().unwrap();
    for s in generate_split(&cfg, Split::Train, 21).unwrap() {
        let fam = fams.iter().find(|f| f.name == s.family_name()).unwrap();
        let clean = solve(&fam.system(&s.params), &s.initial_condition, &grid, &cfg.solver).unwrap();
        let noisy: Vec<f64> = s.input_values.iter().chain(&s.labels).copied().collect();
        let num: f64 = clean
            .values
            .iter()
            .zip(&noisy)
            .map(|(a, b)| (b - a).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = clean.values.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((num / den - 0.02).abs() < 1e-12, "{}", num / den);
        assert_eq!(clean.row(63), &s.anchor_state[..]);
    }
}

#[test]
fn thomas_golden_record() {
    let cfg = DatasetConfig {
        families: vec!["thomas".into()],
        ..small()
    };
    let s = make_sample(&cfg, cfg.train, 42, 0).unwrap();
    let vocab = Vocabulary::default();
    assert_eq!(s.symbol_target.to_words(&vocab), GOLDEN_TARGET);
    assert_eq!(s.symbol_input.to_words(&vocab), GOLDEN_INPUT);
    let summary = format!(
        "{:.12e} {:.12e} {:.12e} {:.12e}",
        s.params[0], s.initial_condition[0], s.labels[0], s.noise_sigma
    );
    assert_eq!(summary, GOLDEN_VALUES);
}

const GOLDEN_TARGET: &str =
    "add sin u_2 mul - 175 E-3 u_1 | add sin u_3 mul - 175 E-3 u_2 | add sin u_1 mul - 175 E-3 u_3";
const GOLDEN_INPUT: &str =
    "add sin u_2 mul <PH> u_1 | add sin u_3 add mul <PH> u_2 mul <PH> mul u_2 u_3 | add mul <PH> u_3 sin u_1";
const GOLDEN_VALUES: &str = "1.746685776160e-1 1.026626873090e-1 -1.022439926461e0 3.208251414500e-2";

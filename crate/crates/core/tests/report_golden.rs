//! Byte-stability of the benchmark report rendering.
//!
//! The report for a fixed manifest must be identical across runs once the
//! environment-dependent columns (training time, inference rate) are
//! masked. Regenerate the golden files with SZOO_REGOLD=1 after an
//! intentional format change.

use std::fs;
use std::path::PathBuf;

use szoo_core::bench::{run_benchmark, BenchEntry, BenchManifest, DatasetRef, ModelRef};
use szoo_core::data::SynthSpec;
use szoo_core::train::TrainConfig;
use szoo_core::zoo;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn fixed_manifest() -> BenchManifest {
    let dataset = DatasetRef::Synth {
        spec: SynthSpec::new(4, 10, 16, 13),
        n_train: 48,
        n_test: 16,
    };
    let mut tiny_wrn = zoo::wrn_b0(szoo_core::attention::AttentionKind::Eca, false);
    tiny_wrn.resolution = 16;
    tiny_wrn.num_classes = 4;
    let mut tiny_mixer = zoo::mlp_mixer_tiny();
    tiny_mixer.resolution = 16;
    tiny_mixer.num_classes = 4;
    let mut mixer_spec = tiny_mixer.clone();
    if let szoo_core::arch::FamilySpec::MlpMixer { ref mut patch, .. } = mixer_spec.family {
        *patch = 4;
    }
    BenchManifest {
        entries: vec![
            BenchEntry {
                name: "WRNB0-ECA@16".into(),
                model: ModelRef::Inline(Box::new(tiny_wrn)),
                train: TrainConfig::for_epochs(2, 2e-3, 16, 13),
                dataset: dataset.clone(),
                workers: 1,
                tau: 0.5,
            },
            BenchEntry {
                name: "MLPMixerTiny@16".into(),
                model: ModelRef::Inline(Box::new(mixer_spec)),
                train: TrainConfig::for_epochs(2, 2e-3, 16, 13),
                dataset,
                workers: 1,
                tau: 0.5,
            },
        ],
    }
}

#[test]
fn masked_report_is_byte_stable() {
    let report = run_benchmark(&fixed_manifest());
    assert!(!report.any_failed(), "fixture entries must run: {:?}", report.failures);
    let md = report.to_markdown(true);
    let csv = report.to_csv(true);
    let dir = golden_dir();
    let md_path = dir.join("bench_report.md");
    let csv_path = dir.join("bench_report.csv");
    if std::env::var("SZOO_REGOLD").is_ok() {
        fs::create_dir_all(&dir).unwrap();
        fs::write(&md_path, &md).unwrap();
        fs::write(&csv_path, &csv).unwrap();
        return;
    }
    let want_md = fs::read_to_string(&md_path).expect("golden markdown (set SZOO_REGOLD=1 to create)");
    let want_csv = fs::read_to_string(&csv_path).expect("golden csv");
    assert_eq!(md, want_md, "markdown report drifted from the golden file");
    assert_eq!(csv, want_csv, "csv report drifted from the golden file");
}

#[test]
fn column_order_matches_published_layout() {
    let report = run_benchmark(&BenchManifest { entries: vec![] });
    let md = report.to_markdown(true);
    let header = md.lines().next().unwrap();
    assert_eq!(
        header,
        "| Model | Accuracy (%) | Precision (%) | Recall (%) | F-Score (%) | Training Time (hours.mins) | Inference Rate (imgs/sec) | Model Size |"
    );
    let csv = report.to_csv(true);
    assert!(csv.starts_with(
        "model,accuracy,precision,recall,f_score,training_time_hmm,training_seconds,inference_rate,model_size"
    ));
}

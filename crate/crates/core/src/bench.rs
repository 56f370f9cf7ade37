//! Benchmark runner: trains and evaluates every manifest entry, then renders
//! the results table (markdown + CSV) with the best F-score per model family
//! set in bold, plus the compound-scaling ladder tables.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ConfigError, Model, ModelConfig};
use crate::checkpoint::CheckpointError;
use crate::data::{self, DataError, Dataset, SynthSpec};
use crate::dist::{self, DistError, WorkerPoolConfig};
use crate::scaling::{self, ScalingCoefficients};
use crate::train::{self, TrainConfig, TrainError};
use crate::zoo;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("manifest: {0}")]
    Manifest(String),
}

/// Model reference: either a zoo name or an inline config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Zoo(String),
    Inline(Box<ModelConfig>),
}

impl ModelRef {
    pub fn resolve(&self) -> Result<ModelConfig, ConfigError> {
        match self {
            ModelRef::Zoo(name) => zoo::lookup(name),
            ModelRef::Inline(cfg) => {
                cfg.validate()?;
                Ok((**cfg).clone())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetRef {
    Synth {
        spec: SynthSpec,
        n_train: usize,
        n_test: usize,
    },
    Disk {
        root: PathBuf,
    },
}

impl DatasetRef {
    pub fn load(&self) -> Result<(Dataset, Dataset), BenchError> {
        match self {
            DatasetRef::Synth {
                spec,
                n_train,
                n_test,
            } => Ok(data::synth_pair(spec, *n_train, *n_test)?),
            DatasetRef::Disk { root } => {
                let train = data::load_dataset(root, data::Split::Train)?;
                let test = data::load_dataset(root, data::Split::Test)?;
                Ok((train, test))
            }
        }
    }
}

fn default_tau() -> f64 {
    0.5
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchEntry {
    pub name: String,
    pub model: ModelRef,
    pub train: TrainConfig,
    pub dataset: DatasetRef,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchManifest {
    pub entries: Vec<BenchEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub name: String,
    pub family: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub train_seconds: f64,
    pub inference_rate: f64,
    pub model_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub failures: Vec<(String, String)>,
}

/// Runs every manifest entry sequentially; a failing entry is recorded and
/// the run continues.
pub fn run_benchmark(manifest: &BenchManifest) -> BenchReport {
    run_benchmark_with(manifest, false)
}

/// Entry runner with opt-in parallelism. Rows keep manifest order either
/// way; parallel entries trade timing fidelity for wall time.
pub fn run_benchmark_with(manifest: &BenchManifest, parallel_entries: bool) -> BenchReport {
    let outcomes: Vec<Result<BenchRow, BenchError>> = if parallel_entries {
        std::thread::scope(|scope| {
            let handles: Vec<_> = manifest
                .entries
                .iter()
                .map(|entry| scope.spawn(move || run_entry(entry)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(BenchError::Manifest("entry panicked".into())))
                })
                .collect()
        })
    } else {
        manifest.entries.iter().map(run_entry).collect()
    };
    let mut report = BenchReport::default();
    for (entry, outcome) in manifest.entries.iter().zip(outcomes) {
        match outcome {
            Ok(row) => report.rows.push(row),
            Err(e) => report.failures.push((entry.name.clone(), e.to_string())),
        }
    }
    report
}

fn run_entry(entry: &BenchEntry) -> Result<BenchRow, BenchError> {
    let mut config = entry.model.resolve()?;
    let (train_ds, test_ds) = entry.dataset.load()?;
    // the model adapts to the dataset's channel roster and label width;
    // the patches are resized upstream to the model's input resolution
    config.in_channels = train_ds.descriptor.channels();
    config.num_classes = train_ds.descriptor.num_classes;
    config.validate()?;
    let train_ds = fit_resolution(train_ds, config.resolution);
    let test_ds = fit_resolution(test_ds, config.resolution);
    let started = Instant::now();
    let mut model = if entry.workers > 1 {
        if !entry.train.batch_size.is_multiple_of(entry.workers) {
            return Err(BenchError::Manifest(format!(
                "{}: batch size {} not divisible by {} workers",
                entry.name, entry.train.batch_size, entry.workers
            )));
        }
        let pool = WorkerPoolConfig::new(
            entry.workers,
            entry.train.batch_size / entry.workers,
            entry.train.base_lr / entry.workers as f64,
        );
        let (model, _stats) = dist::distributed_train(&config, &train_ds, &pool, &entry.train)?;
        model
    } else {
        let mut model = Model::<f32>::build(config, entry.train.seed)?;
        train::train(&mut model, &train_ds, &entry.train)?;
        model
    };
    let train_seconds = started.elapsed().as_secs_f64();
    let (metrics, rate) = train::evaluate(&mut model, &test_ds, entry.tau)?;
    Ok(BenchRow {
        name: entry.name.clone(),
        family: model.config.family.tag().to_string(),
        accuracy: metrics.example_accuracy,
        precision: metrics.micro.precision,
        recall: metrics.micro.recall,
        f_score: metrics.micro.f_score,
        train_seconds,
        inference_rate: rate,
        model_size: model.count_params(),
    })
}

fn fit_resolution(ds: Dataset, resolution: usize) -> Dataset {
    if ds.descriptor.resolution == resolution {
        ds
    } else {
        data::resize_dataset(&ds, resolution)
    }
}

/// Wall time in the "hours.minutes" notation of the results tables
/// (0.11 = 11 minutes, 13.22 = 13 h 22 min).
pub fn format_hmm(seconds: f64) -> String {
    let minutes = (seconds / 60.0).round() as u64;
    format!("{}.{:02}", minutes / 60, minutes % 60)
}

impl BenchReport {
    fn best_f_per_family(&self) -> Vec<bool> {
        self.rows
            .iter()
            .map(|r| {
                let best = self
                    .rows
                    .iter()
                    .filter(|o| o.family == r.family)
                    .map(|o| o.f_score)
                    .fold(f64::MIN, f64::max);
                r.f_score == best
            })
            .collect()
    }

    /// Markdown results table; columns and units follow the published
    /// layout, the best F-score of each family is bold. `mask_timings`
    /// replaces the environment-dependent columns for byte-stable output.
    pub fn to_markdown(&self, mask_timings: bool) -> String {
        let mut out = String::new();
        out.push_str("| Model | Accuracy (%) | Precision (%) | Recall (%) | F-Score (%) | Training Time (hours.mins) | Inference Rate (imgs/sec) | Model Size |\n");
        out.push_str("|---|---|---|---|---|---|---|---|\n");
        let best = self.best_f_per_family();
        for (row, is_best) in self.rows.iter().zip(best) {
            let f = format!("{:.1}", row.f_score * 100.0);
            let f = if is_best { format!("**{f}**") } else { f };
            let (time, rate) = if mask_timings {
                ("-".to_string(), "-".to_string())
            } else {
                (
                    format_hmm(row.train_seconds),
                    format!("{:.0}", row.inference_rate),
                )
            };
            out.push_str(&format!(
                "| {} | {:.1} | {:.1} | {:.1} | {} | {} | {} | {} |\n",
                row.name,
                row.accuracy * 100.0,
                row.precision * 100.0,
                row.recall * 100.0,
                f,
                time,
                rate,
                row.model_size
            ));
        }
        for (name, err) in &self.failures {
            out.push_str(&format!("| {name} | FAILED: {err} | | | | | | |\n"));
        }
        out
    }

    /// CSV twin of the markdown table with a machine-readable seconds
    /// column next to the hours.mins one.
    pub fn to_csv(&self, mask_timings: bool) -> String {
        let mut out = String::from(
            "model,accuracy,precision,recall,f_score,training_time_hmm,training_seconds,inference_rate,model_size\n",
        );
        for row in &self.rows {
            let (hmm, secs, rate) = if mask_timings {
                ("-".into(), "-".into(), "-".into())
            } else {
                (
                    format_hmm(row.train_seconds),
                    format!("{:.3}", row.train_seconds),
                    format!("{:.1}", row.inference_rate),
                )
            };
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4},{},{},{},{}\n",
                row.name,
                row.accuracy,
                row.precision,
                row.recall,
                row.f_score,
                hmm,
                secs,
                rate,
                row.model_size
            ));
        }
        out
    }

    pub fn any_failed(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Ladder table for `scale-plan`: one row per φ with multipliers,
/// resolution and parameter count, as CSV plus aligned text.
pub fn scale_plan(
    base: &ModelConfig,
    coefficients: &ScalingCoefficients,
    max_phi: u32,
) -> Result<(String, String), ConfigError> {
    let ladder = scaling::scaling_ladder(base, coefficients, max_phi)?;
    let mut csv = String::from("phi,depth_mult,width_mult,resolution_mult,resolution,params\n");
    let mut text = format!(
        "{:<4} {:>10} {:>10} {:>10} {:>10} {:>12}\n",
        "phi", "depth", "width", "res_mult", "resolution", "params"
    );
    for rung in &ladder {
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{},{}\n",
            rung.phi,
            rung.multipliers.depth,
            rung.multipliers.width,
            rung.multipliers.resolution,
            rung.resolution,
            rung.param_count
        ));
        text.push_str(&format!(
            "B{:<3} {:>10.4} {:>10.4} {:>10.4} {:>10} {:>12}\n",
            rung.phi,
            rung.multipliers.depth,
            rung.multipliers.width,
            rung.multipliers.resolution,
            rung.resolution,
            rung.param_count
        ));
    }
    Ok((csv, text))
}

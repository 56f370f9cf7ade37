//! `szoo` command line: synthetic data generation, training, evaluation,
//! benchmarking, scaling ladders, class-evidence heatmaps and the model zoo.
//!
//! Exit codes: 0 on success, 1 when a benchmark entry or runtime step
//! failed, 2 for configuration errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use szoo_core::arch::{Model, ModelConfig};
use szoo_core::bench::{self, BenchManifest};
use szoo_core::checkpoint;
use szoo_core::data::{self, ChannelMode, Split, SynthSpec};
use szoo_core::dist::{self, WorkerPoolConfig};
use szoo_core::explain::{self, EvidenceTag, Sidecar};
use szoo_core::scalar::Scalar;
use szoo_core::scaling::ScalingCoefficients;
use szoo_core::train::{self, TrainConfig};
use szoo_core::zoo;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Parser)]
#[command(name = "szoo", version, about = "Compound-scaled attention model benchmark harness")]
struct Cli {
    /// Seed for model init, shuffling and synthetic data.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Data-parallel worker count for training.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Output directory for generated files.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Numeric precision of the training/evaluation path.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multispectral dataset on disk.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Run a benchmark manifest and render the results tables.
    Bench(BenchArgs),
    /// Emit the compound-scaling ladder for a base model.
    ScalePlan(ScalePlanArgs),
    /// Render a class-evidence heatmap for one sample.
    Gradcam(GradcamArgs),
    /// List, export or import the named model configurations.
    #[command(subcommand)]
    Zoo(ZooCommand),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 10)]
    channels: usize,
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 2000)]
    train: usize,
    #[arg(long, default_value_t = 500)]
    test: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Zoo name (see `szoo zoo list`) or a JSON config file path.
    #[arg(long)]
    model: String,
    /// Dataset root (manifest.json + patches).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 24)]
    decay_epoch: usize,
    /// Checkpoint file name (written under --out).
    #[arg(long, default_value = "model.szoo")]
    checkpoint: String,
    /// Keep only these bands before training.
    #[arg(long, value_enum)]
    channel_mode: Option<ChannelModeArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ChannelModeArg {
    Rgb,
    RgbNir,
    All,
}

impl From<ChannelModeArg> for ChannelMode {
    fn from(v: ChannelModeArg) -> Self {
        match v {
            ChannelModeArg::Rgb => ChannelMode::Rgb,
            ChannelModeArg::RgbNir => ChannelMode::RgbNir,
            ChannelModeArg::All => ChannelMode::All,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(v: SplitArg) -> Self {
        match v {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Run manifest entries concurrently (timings become unreliable).
    #[arg(long)]
    parallel_entries: bool,
}

#[derive(Args)]
struct ScalePlanArgs {
    /// Base model name (WRN or EfficientNet family).
    #[arg(long, default_value = "WRNB0-ECA")]
    model: String,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 7)]
    max_phi: u32,
}

#[derive(Args)]
struct GradcamArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Sample index within the split.
    #[arg(long, default_value_t = 0)]
    sample: usize,
    /// Class index to explain.
    #[arg(long)]
    class: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
}

#[derive(Subcommand)]
enum ZooCommand {
    /// Print every named configuration with its parameter count.
    List,
    /// Write the zoo manifest (name -> config) as JSON.
    Export {
        #[arg(long, default_value = "zoo.json")]
        file: String,
    },
    /// Load a zoo manifest and validate every entry.
    Import {
        #[arg(long)]
        file: PathBuf,
    },
}

fn main() -> ExitCode {
    // die quietly when stdout is closed early (e.g. piped into `head`)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            // configuration-shaped problems exit 2, runtime failures 1
            let msg = format!("{e:#}");
            if msg.contains("unknown model")
                || msg.contains("model:")
                || msg.contains("config")
                || msg.contains("manifest")
            {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn resolve_model(name_or_path: &str) -> anyhow::Result<ModelConfig> {
    if Path::new(name_or_path).exists() {
        let cfg: ModelConfig = serde_json::from_slice(&fs::read(name_or_path)?)?;
        cfg.validate()?;
        Ok(cfg)
    } else {
        Ok(zoo::lookup(name_or_path)?)
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    fs::create_dir_all(&cli.out)?;
    match &cli.command {
        Command::Synth(args) => {
            let mut spec = SynthSpec::new(args.classes, args.channels, args.resolution, cli.seed);
            spec.noise = args.noise;
            let (train_ds, test_ds) = data::synth_pair(&spec, args.train, args.test)?;
            data::save_dataset(&cli.out, &[&train_ds, &test_ds])?;
            println!(
                "wrote {} train + {} test patches to {}",
                train_ds.len(),
                test_ds.len(),
                cli.out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(args) => match cli.precision {
            Precision::F32 => cmd_train::<f32>(&cli, args),
            Precision::F64 => cmd_train::<f64>(&cli, args),
        },
        Command::Eval(args) => {
            let mut model = checkpoint::load_checkpoint(&args.checkpoint)?;
            let ds = data::load_dataset(&args.data, args.split.into())?;
            let ds = fit(ds, model.config.resolution);
            match cli.precision {
                Precision::F32 => {
                    let (report, rate) = train::evaluate(&mut model, &ds, args.tau)?;
                    print!("{}", report.to_csv());
                    eprintln!("inference rate: {rate:.1} imgs/sec");
                }
                Precision::F64 => {
                    let mut model = model.cast::<f64>();
                    let (report, rate) = train::evaluate(&mut model, &ds, args.tau)?;
                    print!("{}", report.to_csv());
                    eprintln!("inference rate: {rate:.1} imgs/sec");
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench(args) => {
            let manifest: BenchManifest = serde_json::from_slice(&fs::read(&args.manifest)?)?;
            let report = bench::run_benchmark_with(&manifest, args.parallel_entries);
            fs::write(cli.out.join("report.md"), report.to_markdown(false))?;
            fs::write(cli.out.join("report.csv"), report.to_csv(false))?;
            println!("{}", report.to_markdown(false));
            for (name, err) in &report.failures {
                eprintln!("entry {name} failed: {err}");
            }
            Ok(if report.any_failed() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::ScalePlan(args) => {
            let base = resolve_model(&args.model)?;
            let mut coeffs = zoo::ladder_coefficients(&base)?;
            if let (Some(a), Some(b), Some(g)) = (args.alpha, args.beta, args.gamma) {
                coeffs = ScalingCoefficients::new(a, b, g, 0);
            }
            let (csv, text) = bench::scale_plan(&base, &coeffs, args.max_phi)?;
            fs::write(cli.out.join("scale_plan.csv"), &csv)?;
            print!("{text}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcam(args) => {
            let mut model = checkpoint::load_checkpoint(&args.checkpoint)?;
            let ds = data::load_dataset(&args.data, args.split.into())?;
            let ds = fit(ds, model.config.resolution);
            let sample = ds
                .samples
                .get(args.sample)
                .ok_or_else(|| anyhow::anyhow!("sample {} out of range", args.sample))?;
            let map = explain::gradcam(&mut model, sample, args.class)?;
            let logits = model.forward(
                &szoo_core::Tensor::new(
                    {
                        let mut s = vec![1];
                        s.extend_from_slice(sample.pixels.shape());
                        s
                    },
                    sample.pixels.data().to_vec(),
                )?,
                szoo_core::Mode::Eval,
            )?;
            let prob = 1.0 / (1.0 + (-logits.data()[args.class] as f64).exp());
            let predicted = prob > args.tau;
            let labeled = sample.labels.contains(args.class);
            let tag = match (predicted, labeled) {
                (true, true) => Some(EvidenceTag::Tp),
                (true, false) => Some(EvidenceTag::Fp),
                (false, true) => Some(EvidenceTag::Fn),
                (false, false) => None,
            };
            let stem = format!("gradcam-{}-c{}", sample.id, args.class);
            explain::write_pgm(&map, &cli.out.join(format!("{stem}.pgm")))?;
            explain::write_sidecar(
                &Sidecar {
                    class_index: args.class,
                    class_name: format!("class_{}", args.class),
                    probability: prob,
                    tag,
                    degenerate: map.degenerate,
                },
                &cli.out.join(format!("{stem}.json")),
            )?;
            println!("wrote {stem}.pgm (+ sidecar), P = {prob:.3}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Zoo(cmd) => match cmd {
            ZooCommand::List => {
                for entry in zoo::registry() {
                    let built = Model::<f32>::build(entry.config.clone(), 0)
                        .map(|m| m.count_params())
                        .ok();
                    let params = built.map_or("invalid".into(), |p| p.to_string());
                    let note = match (built, zoo::reference_size(&entry.name)) {
                        (Some(b), Some(r)) if b == r => "  (matches reference)".to_string(),
                        (Some(b), Some(r)) => format!(
                            "  (reference {r}, {:+.1}%)",
                            100.0 * (b as f64 - r as f64) / r as f64
                        ),
                        _ => String::new(),
                    };
                    println!(
                        "{:<28} {:>12} params  {}{}",
                        entry.name,
                        params,
                        entry.config.family.tag(),
                        note
                    );
                }
                Ok(ExitCode::SUCCESS)
            }
            ZooCommand::Export { file } => {
                let reg = zoo::registry();
                fs::write(cli.out.join(file), serde_json::to_string_pretty(&reg)?)?;
                println!("exported {} configs to {file}", reg.len());
                Ok(ExitCode::SUCCESS)
            }
            ZooCommand::Import { file } => {
                let entries: Vec<zoo::ZooEntry> = serde_json::from_slice(&fs::read(file)?)?;
                for e in &entries {
                    e.config.validate()?;
                }
                println!("imported {} valid configs", entries.len());
                Ok(ExitCode::SUCCESS)
            }
        },
    }
}

fn cmd_train<E: Scalar>(cli: &Cli, args: &TrainArgs) -> anyhow::Result<ExitCode> {
    let config = resolve_model(&args.model)?;
    let train_split = data::load_dataset(&args.data, Split::Train)?;
    let train_split = match args.channel_mode {
        Some(mode) => data::channel_subset(&train_split, mode.into())?,
        None => train_split,
    };
    let mut config = config;
    if config.in_channels != train_split.descriptor.channels() {
        config.in_channels = train_split.descriptor.channels();
    }
    if config.num_classes != train_split.descriptor.num_classes {
        config.num_classes = train_split.descriptor.num_classes;
    }
    let train_split = fit(train_split, config.resolution);
    let mut tcfg = TrainConfig {
        epochs: args.epochs,
        base_lr: args.lr,
        batch_size: args.batch,
        decay_epoch: args.decay_epoch.min(args.epochs.saturating_sub(1)),
        seed: cli.seed,
        ..TrainConfig::default()
    };
    let (model, stats_csv) = if cli.workers > 1 {
        if !args.batch.is_multiple_of(cli.workers) {
            anyhow::bail!("config: batch {} not divisible by {} workers", args.batch, cli.workers);
        }
        tcfg.base_lr = args.lr; // per-worker rate; pool scales by W
        let pool = WorkerPoolConfig::new(cli.workers, args.batch / cli.workers, args.lr / cli.workers as f64);
        let (model, stats) = dist::distributed_train::<E>(&config, &train_split, &pool, &tcfg)?;
        (model, stats.to_csv())
    } else {
        let mut model = Model::<E>::build(config, cli.seed)?;
        let stats = train::train(&mut model, &train_split, &tcfg)?;
        (model, stats.to_csv())
    };
    let ckpt = cli.out.join(&args.checkpoint);
    checkpoint::save_checkpoint(&model, &ckpt)?;
    fs::write(cli.out.join("train_stats.csv"), stats_csv)?;
    println!(
        "trained {} params for {} epochs -> {}",
        model.count_params(),
        args.epochs,
        ckpt.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn fit(ds: data::Dataset, resolution: usize) -> data::Dataset {
    if ds.descriptor.resolution == resolution {
        ds
    } else {
        data::resize_dataset(&ds, resolution)
    }
}

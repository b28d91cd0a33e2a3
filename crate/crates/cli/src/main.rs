//! `brme` — command-line frontend for the metric-learning engine.
//!
//! Subcommands: `gen-data`, `train`, `eval`, `gradcheck`, `sweep-bins`,
//! `compare-losses`. Every command is deterministic given its flags;
//! identical invocations produce byte-identical artifacts.
//!
//! Exit codes: 0 success, 1 check failure, 2 bad configuration or flags,
//! 3 I/O failure, 4 degenerate data, 5 dimension mismatch.

mod config;

use std::collections::BTreeMap;
use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use brme::baselines::MarginConfig;
use brme::data::{
    gen_synthetic, gen_synthetic_rasters, load_features, load_raster, raster_to_features,
    save_features, save_raster, AugmentConfig, FeatureDataset, RasterDataset, RASTER_MAGIC,
};
use brme::encoder::{forward, load_checkpoint, Activation, InitScheme};
use brme::eval::{
    eval_report, linear_classifier_train, recall_at_k, CLASSIFIER_DEFAULT_EPOCHS,
    CLASSIFIER_DEFAULT_REG,
};
use brme::gradcheck::{run_gradcheck, GradCheckConfig};
use brme::linalg::Matrix;
use brme::pairs::EmbeddingBatch;
use brme::rng::Rng;
use brme::train::{
    train, train_val_split, LossKind, TrainConfig, TrainData, TrainOutcome, TrainOutputs,
};
use brme::{Error, Result};

use config::{parse_usize_list, resolve, resolve_opt, FileConfig};

#[derive(Parser)]
#[command(
    name = "brme",
    version,
    about = "Metric-embedding training with a histogram-overlap risk loss"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature CSV or raster dataset.
    GenData(GenDataArgs),
    /// Train an encoder with one of the five losses.
    Train(TrainArgs),
    /// Evaluate a checkpoint: embeddings, linear probe, retrieval metrics.
    Eval(EvalArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Train once per histogram resolution and tabulate the results.
    SweepBins(SweepArgs),
    /// Train once per loss with a shared budget and tabulate the results.
    CompareLosses(CompareArgs),
}

/// Tuning flags shared by train, sweep-bins, and compare-losses.
/// Anything left unset falls back to the config file, then to defaults.
#[derive(Args, Clone, Debug)]
struct TrainingFlags {
    /// Flat `key = value` config file; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset file: feature CSV or raster binary, told apart by magic.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for checkpoints and metrics.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Encoder widths, input first, e.g. "16,32,16".
    #[arg(long)]
    layer_sizes: Option<String>,
    /// Hidden activation: relu or tanh.
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    classes_per_batch: Option<usize>,
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Learning-rate decay factor.
    #[arg(long)]
    gamma: Option<f64>,
    /// Epochs between learning-rate decays.
    #[arg(long)]
    decay_every: Option<u32>,
    #[arg(long)]
    max_epochs: Option<u32>,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long)]
    patience: Option<u32>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Cross-entropy weight for the brm+ce loss.
    #[arg(long)]
    ce_weight: Option<f64>,
    #[arg(long)]
    contrastive_margin: Option<f64>,
    #[arg(long)]
    triplet_margin: Option<f64>,
    #[arg(long)]
    lifted_margin: Option<f64>,
    /// Disable raster augmentation (on by default for raster data).
    #[arg(long)]
    no_augment: bool,
    /// Central-crop fraction applied to rasters before flattening.
    #[arg(long)]
    crop_fraction: Option<f64>,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    /// Feature dimension (features format only).
    #[arg(long)]
    dim: Option<usize>,
    /// Within-class spread (features format only).
    #[arg(long)]
    sigma: Option<f64>,
    /// "features" (CSV) or "rasters" (binary images).
    #[arg(long)]
    format: Option<String>,
    /// Image side length (rasters format only).
    #[arg(long)]
    side: Option<usize>,
    /// Output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    flags: TrainingFlags,
    /// brm, brm+ce, contrastive, triplet, or lifted.
    #[arg(long)]
    loss: Option<String>,
    /// Histogram resolution for the risk losses.
    #[arg(long)]
    bins: Option<usize>,
    /// Continue from this checkpoint instead of initializing fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Seed of the training run, to reproduce its train/val split.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Which rows to report on: val, train, or all. The linear probe is
    /// always fitted on the train split.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    crop_fraction: Option<f64>,
    /// Also write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of random configurations to check.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 15)]
    bins: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value = "8,10,8")]
    layer_sizes: String,
    #[arg(long, default_value = "relu")]
    activation: String,
    /// Minimum passing seeds for exit 0. The objective has kinks at
    /// histogram nodes, so a seed that lands near one fails finite
    /// differences no matter how correct the gradient is; the default
    /// requires 95% of seeds.
    #[arg(long)]
    min_pass: Option<usize>,
    /// Negate part of the backward pass to confirm the check catches it.
    #[arg(long)]
    plant_fault: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    flags: TrainingFlags,
    #[arg(long)]
    loss: Option<String>,
    /// Comma-separated histogram resolutions, one training run each.
    #[arg(long)]
    bins: Option<String>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    flags: TrainingFlags,
    /// Comma-separated losses; defaults to all five.
    #[arg(long)]
    losses: Option<String>,
    #[arg(long)]
    bins: Option<usize>,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::SweepBins(args) => cmd_sweep_bins(args),
        Command::CompareLosses(args) => cmd_compare_losses(args),
    }
}

/// Maps library errors onto the documented exit codes.
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) | Error::EmptyInput(_) | Error::BatchTooSmall { .. } => 2,
        Error::Io(_)
        | Error::Parse { .. }
        | Error::BadMagic { .. }
        | Error::TruncatedFile { .. } => 3,
        Error::DegenerateData(_)
        | Error::InsufficientClassSamples { .. }
        | Error::EmptyPairSet { .. }
        | Error::NoValidTriplet
        | Error::NoNegativePartner { .. }
        | Error::SingleClass
        | Error::EmptyTrainSet
        | Error::DegenerateNorm { .. } => 4,
        Error::DimensionMismatch { .. }
        | Error::ShapeMismatch { .. }
        | Error::NotNormalized { .. }
        | Error::NotSquare { .. }
        | Error::LabelOutOfRange { .. }
        | Error::CacheMismatch => 5,
    }
}

// ---------------------------------------------------------------- datasets

enum Loaded {
    Features(FeatureDataset),
    Rasters(RasterDataset),
}

/// Tells the two dataset formats apart by the leading magic bytes.
fn load_dataset(path: &Path) -> Result<Loaded> {
    let mut magic = [0u8; 4];
    let mut f = std::fs::File::open(path)?;
    let n = f.read(&mut magic)?;
    drop(f);
    if n == 4 && &magic == RASTER_MAGIC {
        Ok(Loaded::Rasters(load_raster(path)?))
    } else {
        Ok(Loaded::Features(load_features(path)?))
    }
}

// ---------------------------------------------------------------- gen-data

fn cmd_gen_data(args: GenDataArgs) -> Result<i32> {
    let file = FileConfig::load_optional(args.config.as_deref())?;
    let seed = resolve(args.seed, &file, "seed", 7u64)?;
    let classes = resolve(args.classes, &file, "classes", 10usize)?;
    let per_class = resolve(args.per_class, &file, "per_class", 100usize)?;
    let format: String = resolve(args.format, &file, "format", "features".into())?;
    let out: PathBuf = resolve_opt(args.out, &file, "out")?
        .ok_or_else(|| Error::InvalidConfig("--out is required".into()))?;

    let mut rng = Rng::new(seed);
    match format.as_str() {
        "features" => {
            let dim = resolve(args.dim, &file, "dim", 16usize)?;
            let sigma = resolve(args.sigma, &file, "sigma", 0.05f64)?;
            let ds = gen_synthetic(&mut rng, classes, per_class, dim, sigma)?;
            save_features(&out, &ds)?;
            println!(
                "wrote {}: {} rows, {} classes, dim {}",
                out.display(),
                ds.len(),
                ds.num_classes(),
                ds.dim()
            );
        }
        "rasters" => {
            let side = resolve(args.side, &file, "side", 28usize)?;
            let ds = gen_synthetic_rasters(&mut rng, classes, per_class, side)?;
            save_raster(&out, &ds)?;
            println!(
                "wrote {}: {} rasters {}x{}, {} classes",
                out.display(),
                ds.len(),
                ds.side(),
                ds.side(),
                ds.num_classes()
            );
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown format {other:?} (expected features or rasters)"
            )))
        }
    }
    Ok(0)
}

// ---------------------------------------------------------------- training

/// Flag/file/default resolution shared by the three training commands.
struct ResolvedTraining {
    seed: u64,
    data_path: PathBuf,
    out_dir: PathBuf,
    layer_sizes: Option<Vec<usize>>,
    activation: Activation,
    margins: MarginConfig,
    ce_weight: f64,
    classes_per_batch: usize,
    samples_per_class: usize,
    base_lr: f64,
    lr_gamma: f64,
    lr_decay_every: u32,
    max_epochs: u32,
    patience: u32,
    val_fraction: f64,
    no_augment: bool,
    crop_fraction: f64,
}

fn resolve_training(flags: &TrainingFlags) -> Result<(ResolvedTraining, FileConfig)> {
    let file = FileConfig::load_optional(flags.config.as_deref())?;
    let layer_sizes = match resolve_opt(flags.layer_sizes.clone(), &file, "layer_sizes")? {
        Some(raw) => Some(parse_usize_list(&raw, "layer_sizes")?),
        None => None,
    };
    let activation_raw: String =
        resolve(flags.activation.clone(), &file, "activation", "relu".into())?;
    let resolved = ResolvedTraining {
        seed: resolve(flags.seed, &file, "seed", 7u64)?,
        data_path: resolve_opt(flags.data.clone(), &file, "data")?
            .ok_or_else(|| Error::InvalidConfig("--data is required".into()))?,
        out_dir: resolve_opt(flags.out.clone(), &file, "out")?
            .ok_or_else(|| Error::InvalidConfig("--out is required".into()))?,
        layer_sizes,
        activation: Activation::from_str(&activation_raw)?,
        margins: MarginConfig {
            contrastive_margin: resolve(
                flags.contrastive_margin,
                &file,
                "contrastive_margin",
                0.5,
            )?,
            triplet_margin: resolve(flags.triplet_margin, &file, "triplet_margin", 0.2)?,
            lifted_margin: resolve(flags.lifted_margin, &file, "lifted_margin", 1.0)?,
        },
        ce_weight: resolve(flags.ce_weight, &file, "ce_weight", 1.0)?,
        classes_per_batch: resolve(flags.classes_per_batch, &file, "classes_per_batch", 8)?,
        samples_per_class: resolve(flags.samples_per_class, &file, "samples_per_class", 8)?,
        base_lr: resolve(flags.lr, &file, "lr", 1e-3)?,
        lr_gamma: resolve(flags.gamma, &file, "gamma", 0.5)?,
        lr_decay_every: resolve(flags.decay_every, &file, "decay_every", 50)?,
        max_epochs: resolve(flags.max_epochs, &file, "max_epochs", 300)?,
        patience: resolve(flags.patience, &file, "patience", 20)?,
        val_fraction: resolve(flags.val_fraction, &file, "val_fraction", 0.2)?,
        no_augment: flags.no_augment,
        crop_fraction: resolve(flags.crop_fraction, &file, "crop_fraction", 1.0)?,
    };
    Ok((resolved, file))
}

/// Wraps the loaded dataset for training and reports its bridged input
/// dimension (pixel count after cropping, for rasters).
fn make_train_data(loaded: Loaded, resolved: &ResolvedTraining) -> Result<(TrainData, usize)> {
    match loaded {
        Loaded::Features(f) => {
            let dim = f.dim();
            Ok((TrainData::Features(f), dim))
        }
        Loaded::Rasters(r) => {
            let bridged = raster_to_features(&r, resolved.crop_fraction)?;
            let dim = bridged.dim();
            let augment = AugmentConfig {
                enabled: !resolved.no_augment,
                ..AugmentConfig::default()
            };
            Ok((
                TrainData::Rasters {
                    dataset: r,
                    augment,
                    crop_fraction: resolved.crop_fraction,
                },
                dim,
            ))
        }
    }
}

fn build_train_config(
    resolved: &ResolvedTraining,
    loss: LossKind,
    bins: usize,
    input_dim: usize,
) -> TrainConfig {
    TrainConfig {
        seed: resolved.seed,
        loss,
        bins,
        margins: resolved.margins,
        ce_weight: resolved.ce_weight,
        layer_sizes: resolved
            .layer_sizes
            .clone()
            .unwrap_or_else(|| vec![input_dim, 32, 16]),
        activation: resolved.activation,
        init_scheme: InitScheme::He,
        classes_per_batch: resolved.classes_per_batch,
        samples_per_class: resolved.samples_per_class,
        base_lr: resolved.base_lr,
        lr_gamma: resolved.lr_gamma,
        lr_decay_every: resolved.lr_decay_every,
        max_epochs: resolved.max_epochs,
        patience: resolved.patience,
        val_fraction: resolved.val_fraction,
    }
}

fn print_outcome(outcome: &TrainOutcome, outputs: &TrainOutputs) {
    let epochs = outcome.history.last().map_or(0, |r| r.epoch);
    let why = if outcome.stopped_early {
        "early stop"
    } else {
        "budget reached"
    };
    println!(
        "trained to epoch {epochs} ({why}); best val_recall_at_1 {:.4} at epoch {}",
        outcome.best_val_recall, outcome.best_epoch
    );
    println!("metrics: {}", outputs.metrics_path.display());
    println!(
        "checkpoints: {} (final), {} (best)",
        outputs.final_checkpoint.display(),
        outputs.best_checkpoint.display()
    );
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let (resolved, file) = resolve_training(&args.flags)?;
    let loss_raw: String = resolve(args.loss, &file, "loss", "brm".into())?;
    let loss = LossKind::from_str(&loss_raw)?;
    let bins = resolve(args.bins, &file, "bins", 75usize)?;

    let loaded = load_dataset(&resolved.data_path)?;
    let (data, input_dim) = make_train_data(loaded, &resolved)?;
    let cfg = build_train_config(&resolved, loss, bins, input_dim);

    std::fs::create_dir_all(&resolved.out_dir)?;
    let mut outputs = TrainOutputs::in_dir(&resolved.out_dir);
    outputs.resume_from = args.resume;
    let outcome = train(&data, &cfg, &outputs)?;
    print_outcome(&outcome, &outputs);
    Ok(0)
}

// ---------------------------------------------------------------- eval

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    let file = FileConfig::load_optional(args.config.as_deref())?;
    let checkpoint: PathBuf = resolve_opt(args.checkpoint, &file, "checkpoint")?
        .ok_or_else(|| Error::InvalidConfig("--checkpoint is required".into()))?;
    let data_path: PathBuf = resolve_opt(args.data, &file, "data")?
        .ok_or_else(|| Error::InvalidConfig("--data is required".into()))?;
    let seed = resolve(args.seed, &file, "seed", 7u64)?;
    let val_fraction = resolve(args.val_fraction, &file, "val_fraction", 0.2)?;
    let split: String = resolve(args.split, &file, "split", "val".into())?;
    let crop_fraction = resolve(args.crop_fraction, &file, "crop_fraction", 1.0)?;

    let (params, _state) = load_checkpoint(&checkpoint)?;
    let features = match load_dataset(&data_path)? {
        Loaded::Features(f) => f,
        Loaded::Rasters(r) => raster_to_features(&r, crop_fraction)?,
    };
    let all: Vec<usize> = (0..features.len()).collect();
    let (inputs, labels) = features.select(&all);
    let (embeddings, _) = forward(&params, &inputs)?;

    // the split is re-derived exactly as training derived it
    let mut rng = Rng::new(seed);
    let (train_idx, val_idx) = train_val_split(&labels, val_fraction, &mut rng);
    let report_idx = match split.as_str() {
        "val" => val_idx,
        "train" => train_idx.clone(),
        "all" => all,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown split {other:?} (expected val, train, or all)"
            )))
        }
    };

    let gather = |idx: &[usize]| -> (Matrix, Vec<usize>) {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| embeddings.row(i).to_vec()).collect();
        let picked: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        (Matrix::from_rows(&rows).expect("rows are uniform"), picked)
    };
    let (probe_inputs, probe_labels) = gather(&train_idx);
    let clf = linear_classifier_train(
        &probe_inputs,
        &probe_labels,
        features.num_classes(),
        CLASSIFIER_DEFAULT_EPOCHS,
        CLASSIFIER_DEFAULT_REG,
    )?;

    let (report_emb, report_labels) = gather(&report_idx);
    let scores = clf.scores(&report_emb)?;
    let batch = EmbeddingBatch::new(report_emb, report_labels.clone())?;
    let mut recall_at = BTreeMap::new();
    recall_at.insert(1, recall_at_k(&batch, 1)?);
    recall_at.insert(5, recall_at_k(&batch, 5)?);
    let report = eval_report(&scores, &report_labels, features.num_classes(), recall_at)?;

    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{json}");
    if let Some(out) = resolve_opt::<PathBuf>(args.out, &file, "out")? {
        std::fs::write(&out, format!("{json}\n"))?;
    }
    Ok(0)
}

// ---------------------------------------------------------------- gradcheck

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32> {
    let cfg = GradCheckConfig {
        base_seed: args.base_seed,
        num_seeds: args.seeds,
        batch_size: args.batch_size,
        num_classes: 4,
        layer_sizes: parse_usize_list(&args.layer_sizes, "layer_sizes")?,
        activation: Activation::from_str(&args.activation)?,
        bins: args.bins,
        step: args.step,
        tolerance: args.tolerance,
        plant_fault: args.plant_fault,
    };
    let report = run_gradcheck(&cfg)?;
    for r in &report.results {
        println!(
            "seed {:>4}: weights {:9.3e}  biases {:9.3e}  inputs {:9.3e}  -> {}",
            r.seed,
            r.weights_err,
            r.biases_err,
            r.inputs_err,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    let passes = report.passes();
    let required = args
        .min_pass
        .unwrap_or_else(|| (report.total() as f64 * 0.95).ceil() as usize);
    println!(
        "passed {passes}/{} at tolerance {:.1e} (required {required})",
        report.total(),
        report.tolerance
    );
    if passes < required {
        println!("gradient check FAILED");
        Ok(1)
    } else {
        println!("gradient check OK");
        Ok(0)
    }
}

// ---------------------------------------------------------------- sweeps

fn cmd_sweep_bins(args: SweepArgs) -> Result<i32> {
    let (resolved, file) = resolve_training(&args.flags)?;
    let loss_raw: String = resolve(args.loss, &file, "loss", "brm".into())?;
    let loss = LossKind::from_str(&loss_raw)?;
    let bins_raw: String = resolve(args.bins, &file, "sweep_bins", "25,75,150".into())?;
    let bin_counts = parse_usize_list(&bins_raw, "bins")?;
    if bin_counts.is_empty() {
        return Err(Error::InvalidConfig("need at least one bin count".into()));
    }

    let loaded = load_dataset(&resolved.data_path)?;
    let (data, input_dim) = make_train_data(loaded, &resolved)?;
    std::fs::create_dir_all(&resolved.out_dir)?;

    let mut csv = String::from("R,val_recall_at_1,final_loss\n");
    for &r in &bin_counts {
        let cfg = build_train_config(&resolved, loss, r, input_dim);
        let run_dir = resolved.out_dir.join(format!("bins-{r}"));
        std::fs::create_dir_all(&run_dir)?;
        let outputs = TrainOutputs::in_dir(&run_dir);
        let outcome = train(&data, &cfg, &outputs)?;
        csv.push_str(&format!(
            "{r},{},{}\n",
            outcome.best_val_recall,
            outcome.final_loss()
        ));
    }
    let csv_path = resolved.out_dir.join("sweep.csv");
    std::fs::write(&csv_path, &csv)?;
    print!("{csv}");
    println!("wrote {}", csv_path.display());
    Ok(0)
}

fn cmd_compare_losses(args: CompareArgs) -> Result<i32> {
    let (resolved, file) = resolve_training(&args.flags)?;
    let losses_raw: String = resolve(
        args.losses,
        &file,
        "losses",
        "brm,brm+ce,contrastive,triplet,lifted".into(),
    )?;
    let losses: Vec<LossKind> = losses_raw
        .split(',')
        .map(|s| LossKind::from_str(s.trim()))
        .collect::<Result<_>>()?;
    if losses.is_empty() {
        return Err(Error::InvalidConfig("need at least one loss".into()));
    }
    let bins = resolve(args.bins, &file, "bins", 75usize)?;

    let loaded = load_dataset(&resolved.data_path)?;
    let (data, input_dim) = make_train_data(loaded, &resolved)?;
    std::fs::create_dir_all(&resolved.out_dir)?;

    let mut csv = String::from("loss,val_recall_at_1,epochs_to_converge\n");
    for &loss in &losses {
        let cfg = build_train_config(&resolved, loss, bins, input_dim);
        let run_dir = resolved.out_dir.join(format!("loss-{loss}"));
        std::fs::create_dir_all(&run_dir)?;
        let outputs = TrainOutputs::in_dir(&run_dir);
        let outcome = train(&data, &cfg, &outputs)?;
        csv.push_str(&format!(
            "{loss},{},{}\n",
            outcome.best_val_recall, outcome.best_epoch
        ));
    }
    let csv_path = resolved.out_dir.join("compare.csv");
    std::fs::write(&csv_path, &csv)?;
    print!("{csv}");
    println!("wrote {}", csv_path.display());
    Ok(0)
}

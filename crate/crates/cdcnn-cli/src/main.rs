//! Command-line pipeline: synthesize data, inspect datasets, train models,
//! evaluate them, and compute permutation feature importance.
//!
//! Every run prints its resolved configuration, and all emitted CSV/JSON
//! files use fixed 6-significant-digit float formatting, so identical seeds
//! reproduce identical bytes.
//!
//! Exit codes: 0 success, 2 usage error, 3 data validation error, 4 numeric
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cdcnn::dataset::{
    apply_normalizer, fit_normalizer, generate_synthetic, load_dataset, split_by_subject,
    subject_class_table, write_dataset, Dataset, SplitSpec,
};
use cdcnn::evaluation::{
    confusion_matrix, permutation_importance, write_text, EvalReport, ImportanceOptions,
};
use cdcnn::model::checkpoint::{load_file, save_file};
use cdcnn::model::{Cdcnn, Checkpoint, LinearBaseline, LinearConfig, ModelConfig, SavedModel};
use cdcnn::training::{
    evaluate_split, train, write_train_report, TrainConfig, STREAM_INIT,
};
use cdcnn::{Error, Rng};

/// Environment variable limiting the rayon thread pool.
const THREADS_ENV: &str = "CDCNN_THREADS";

#[derive(Parser)]
#[command(name = "cdcnn", version, about = "Circular dilated CNN pipeline for smart-insole activity windows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset directory
    Synth(SynthArgs),
    /// Print the subject x class sample table of a dataset
    Inspect(InspectArgs),
    /// Train the CDCNN (or the linear baseline) on a subject-disjoint split
    Train(TrainArgs),
    /// Evaluate a checkpoint: accuracy, per-class metrics, confusion matrix
    Eval(EvalArgs),
    /// Permutation feature importance per channel
    Importance(ImportanceArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Number of subjects
    #[arg(long, default_value_t = 8)]
    subjects: usize,
    /// Windows per subject per class
    #[arg(long = "per-class", default_value_t = 25)]
    per_class: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct InspectArgs {
    /// Dataset directory
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// JSON file assigning subject ids to train/val/test
    #[arg(long = "split-spec", value_name = "FILE")]
    split_spec: PathBuf,
    /// Output checkpoint path
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Training history JSON (default: train_report.json next to the model)
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    lr: f32,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 0.2)]
    dropout: f32,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Skip per-channel standardization
    #[arg(long = "no-standardize")]
    no_standardize: bool,
    /// Train the flattened-feature linear baseline instead of the CDCNN
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long = "split-spec", value_name = "FILE")]
    split_spec: PathBuf,
    /// Checkpoint to evaluate
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Which split to evaluate: train, val, or test
    #[arg(long, default_value = "test")]
    split: String,
    /// Output report JSON
    #[arg(long, value_name = "FILE")]
    report: PathBuf,
    /// Output confusion matrix CSV
    #[arg(long, value_name = "FILE")]
    confusion: PathBuf,
}

#[derive(Args)]
struct ImportanceArgs {
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long = "split-spec", value_name = "FILE")]
    split_spec: PathBuf,
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Which split to permute: train, val, or test
    #[arg(long, default_value = "test")]
    split: String,
    /// Permutation repeats per channel
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output CSV path; a JSON report lands next to it
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Shuffle within the time axis instead of across samples
    #[arg(long = "within-time")]
    within_time: bool,
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Inspect(args) => cmd_inspect(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Importance(args) => cmd_importance(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn init_thread_pool() {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        if let Ok(threads) = value.parse::<usize>() {
            if threads >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn cmd_synth(args: SynthArgs) -> Result<(), Error> {
    if args.subjects == 0 {
        return Err(usage("--subjects must be >= 1"));
    }
    if args.per_class == 0 {
        return Err(usage("--per-class must be >= 1"));
    }
    println!(
        "config: {{\"command\":\"synth\",\"out\":{:?},\"subjects\":{},\"per_class\":{},\"seed\":{}}}",
        args.out, args.subjects, args.per_class, args.seed
    );
    let ds = generate_synthetic(args.subjects, args.per_class, args.seed);
    write_dataset(&ds, &args.out)?;
    println!(
        "wrote {} windows ({} subjects x {} per class x 4 classes) to {}",
        ds.len(),
        args.subjects,
        args.per_class,
        args.out.display()
    );
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<(), Error> {
    println!("config: {{\"command\":\"inspect\",\"data\":{:?}}}", args.data);
    let ds = load_dataset(&args.data)?;
    let table = subject_class_table(&ds);
    print!("{}", table.render(&ds.label_names));
    Ok(())
}

fn pick_split(name: &str, splits: (Dataset, Dataset, Dataset)) -> Result<Dataset, Error> {
    let (train_split, val_split, test_split) = splits;
    match name {
        "train" => Ok(train_split),
        "val" => Ok(val_split),
        "test" => Ok(test_split),
        other => Err(usage(format!(
            "--split must be train, val, or test (got {other})"
        ))),
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let cfg = TrainConfig {
        lr: args.lr,
        max_epochs: args.epochs,
        patience: args.patience,
        batch_size: args.batch,
        dropout: args.dropout,
        seed: args.seed,
        standardize: !args.no_standardize,
    };
    cfg.validate()?;
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| sibling(&args.model, "train_report.json"));
    println!(
        "config: {{\"command\":\"train\",\"data\":{:?},\"split_spec\":{:?},\"model\":{:?},\"report\":{:?},\"baseline\":{},{}}}",
        args.data,
        args.split_spec,
        args.model,
        report_path,
        args.baseline,
        serde_json::to_string(&cfg)
            .expect("config serializes")
            .trim_start_matches('{')
            .trim_end_matches('}')
    );

    let spec = SplitSpec::load_file(&args.split_spec)?;
    let ds = load_dataset(&args.data)?;
    let label_names = ds.label_names.clone();
    let channel_names = ds.channel_names.clone();
    let (mut train_split, mut val_split, _test) = split_by_subject(ds, &spec)?;
    if train_split.is_empty() || val_split.is_empty() {
        return Err(Error::InvalidData(
            "train and val splits must be non-empty".into(),
        ));
    }

    let normalizer = if cfg.standardize {
        let norm = fit_normalizer(&train_split)?;
        apply_normalizer(&mut train_split, &norm)?;
        apply_normalizer(&mut val_split, &norm)?;
        Some(norm)
    } else {
        None
    };

    let mut init_rng = Rng::new(cfg.seed).derive(STREAM_INIT);
    let (model, report) = if args.baseline {
        let baseline = LinearBaseline::init(
            LinearConfig {
                in_channels: cdcnn::dataset::NUM_CHANNELS,
                time_steps: cdcnn::dataset::TIME_STEPS,
                num_classes: cdcnn::dataset::NUM_CLASSES,
            },
            &mut init_rng,
        )?;
        let (best, report) = train(baseline, &train_split, &val_split, &cfg)?;
        (SavedModel::Linear(best), report)
    } else {
        let model_cfg = ModelConfig {
            dropout: cfg.dropout,
            ..ModelConfig::default()
        };
        let net = Cdcnn::init(model_cfg, &mut init_rng)?;
        let (best, report) = train(net, &train_split, &val_split, &cfg)?;
        (SavedModel::Cdcnn(best), report)
    };

    let ckpt = Checkpoint {
        model,
        channel_names,
        label_names,
        normalizer,
    };
    save_file(&args.model, &ckpt)?;
    write_train_report(&report, &report_path)?;
    println!(
        "best epoch {} (val_acc={:.4}), stopped at epoch {} after {:.1}s; checkpoint: {}",
        report.best_epoch,
        report.best_val_acc,
        report.stopped_epoch,
        report.wall_time_secs,
        args.model.display()
    );
    Ok(())
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent()
        .map(|p| p.join(name))
        .unwrap_or_else(|| PathBuf::from(name))
}

/// Loads the checkpoint and the requested split, standardized with the
/// checkpoint's stored normalizer. Validates model/dataset compatibility.
fn load_for_inference(
    data: &Path,
    split_spec: &Path,
    model_path: &Path,
    split: &str,
) -> Result<(Checkpoint, Dataset), Error> {
    let ckpt = load_file(model_path)?;
    let ds = load_dataset(data)?;
    if ds.channel_names != ckpt.channel_names {
        return Err(Error::InvalidData(format!(
            "checkpoint was trained on different channel names ({:?} vs {:?})",
            ckpt.channel_names, ds.channel_names
        )));
    }
    if ds.label_names != ckpt.label_names {
        return Err(Error::InvalidData(format!(
            "checkpoint was trained on different label names ({:?} vs {:?})",
            ckpt.label_names, ds.label_names
        )));
    }
    let spec = SplitSpec::load_file(split_spec)?;
    let mut chosen = pick_split(split, split_by_subject(ds, &spec)?)?;
    if let Some(norm) = &ckpt.normalizer {
        apply_normalizer(&mut chosen, norm)?;
    }
    Ok((ckpt, chosen))
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    println!(
        "config: {{\"command\":\"eval\",\"data\":{:?},\"split_spec\":{:?},\"model\":{:?},\"split\":{:?},\"report\":{:?},\"confusion\":{:?}}}",
        args.data, args.split_spec, args.model, args.split, args.report, args.confusion
    );
    let (ckpt, split) = load_for_inference(&args.data, &args.split_spec, &args.model, &args.split)?;
    if split.is_empty() {
        return Err(Error::InvalidData(format!(
            "split {:?} is empty for this dataset",
            args.split
        )));
    }
    let cm = confusion_matrix(&ckpt.model, &split)?;
    let accuracy = evaluate_split(&ckpt.model, &split)?;
    debug_assert_eq!(cm.accuracy(), accuracy);
    let report = EvalReport::from_confusion(
        &cm,
        &ckpt.label_names,
        &args.data.display().to_string(),
        &args.model.display().to_string(),
        &args.split,
    );
    write_text(&args.report, &report.to_json())?;
    write_text(&args.confusion, &cm.to_csv(&ckpt.label_names))?;
    println!(
        "{} split: accuracy {:.4} over {} windows ({})",
        args.split,
        accuracy,
        split.len(),
        ckpt.model.arch_name()
    );
    Ok(())
}

fn cmd_importance(args: ImportanceArgs) -> Result<(), Error> {
    if args.repeats == 0 {
        return Err(usage("--repeats must be >= 1"));
    }
    println!(
        "config: {{\"command\":\"importance\",\"data\":{:?},\"split_spec\":{:?},\"model\":{:?},\"split\":{:?},\"repeats\":{},\"seed\":{},\"within_time\":{},\"out\":{:?}}}",
        args.data, args.split_spec, args.model, args.split, args.repeats, args.seed, args.within_time, args.out
    );
    let (ckpt, split) = load_for_inference(&args.data, &args.split_spec, &args.model, &args.split)?;
    let opts = ImportanceOptions {
        repeats: args.repeats,
        seed: args.seed,
        within_time: args.within_time,
    };
    let report = permutation_importance(&ckpt.model, &split, &opts)?;
    write_text(&args.out, &report.to_csv())?;
    let json_path = args.out.with_extension("json");
    write_text(&json_path, &report.to_json())?;
    let mut ranked: Vec<_> = report.channels.iter().collect();
    ranked.sort_by(|a, b| b.importance_mean.total_cmp(&a.importance_mean));
    println!(
        "baseline accuracy {:.4}; top channels: {}",
        report.baseline_accuracy,
        ranked
            .iter()
            .take(3)
            .map(|c| format!("{} ({:+.4})", c.name, c.importance_mean))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}

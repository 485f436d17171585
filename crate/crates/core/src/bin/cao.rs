//! Pipeline driver: `synth` writes a labelled record dataset, `preprocess`
//! turns it into a pulse dataset for either arm, and `train-eval` runs the
//! repeated-split experiment and writes the report tables.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cao_locate::cascade::{save_cascade, train_cascade};
use cao_locate::ecg::{read_record_dataset, write_record_dataset, CaoClass, EcgRecord};
use cao_locate::eval::{
    render_report_csv, render_report_text, run_experiment, EvalReport, ExperimentOptions,
};
use cao_locate::filters::FilterSpec;
use cao_locate::nn::{ModelConfig, Variant};
use cao_locate::pulses::{build_dataset, write_pulse_dataset};
use cao_locate::synth::{derive_seed, generate_dataset, write_ground_truth, NoiseConfig, SynthConfig};
use cao_locate::{Error, Result};

#[derive(Parser)]
#[command(name = "cao", version, about = "12-lead ECG occlusion-site localization pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled record dataset
    Synth(SynthArgs),
    /// Build a pulse dataset from records (either arm)
    Preprocess(PreprocessArgs),
    /// Run the repeated-split training/evaluation experiment
    TrainEval(TrainEvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Records to generate per class
    #[arg(long, default_value_t = 120)]
    n_lad: usize,
    #[arg(long, default_value_t = 20)]
    n_lcx: usize,
    #[arg(long, default_value_t = 80)]
    n_rca: usize,
    /// Base RNG seed (required: no wall-clock seeding)
    #[arg(long)]
    seed: u64,
    /// Output directory for manifest, per-record CSVs, and ground truth
    #[arg(long)]
    out: PathBuf,
    /// Sampling rate in Hz
    #[arg(long, default_value_t = 500.0)]
    fs: f64,
    /// Record duration in seconds
    #[arg(long, default_value_t = 12.0)]
    duration: f64,
    /// ST elevation amplitude in mV
    #[arg(long, default_value_t = 0.2)]
    st_elevation: f64,
    /// Disable all noise sources (clean signals)
    #[arg(long)]
    no_noise: bool,
    /// Overwrite an existing non-empty output directory
    #[arg(long)]
    force: bool,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ArmArg {
    Raw,
    Preprocessed,
    All,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    #[value(name = "1d")]
    OneD,
    #[value(name = "2d")]
    TwoD,
    All,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Record dataset directory (from `synth`)
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for pulses.bin + pulses.meta.json
    #[arg(long)]
    out: PathBuf,
    /// Which arm to build
    #[arg(long, value_enum)]
    arm: ArmChoice,
    /// Window before the R peak, seconds
    #[arg(long, default_value_t = 0.25)]
    window_pre: f64,
    /// Window after the R peak, seconds
    #[arg(long, default_value_t = 0.45)]
    window_post: f64,
    #[arg(long)]
    force: bool,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ArmChoice {
    Raw,
    Preprocessed,
}

#[derive(Args)]
struct TrainEvalArgs {
    /// Record dataset directory (from `synth`)
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for report.{json,csv,txt} and cascade checkpoints
    #[arg(long)]
    out: PathBuf,
    /// Repeated stratified splits per combination (minimum 2)
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Base RNG seed (required: no wall-clock seeding)
    #[arg(long)]
    seed: u64,
    /// Classifier variant to evaluate
    #[arg(long, value_enum, default_value_t = VariantArg::All)]
    variant: VariantArg,
    /// Dataset arm to evaluate
    #[arg(long, value_enum, default_value_t = ArmArg::All)]
    arm: ArmArg,
    /// Training epochs per stage
    #[arg(long)]
    epochs: Option<usize>,
    /// Skip writing final cascade checkpoints
    #[arg(long)]
    no_checkpoints: bool,
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_thread_pool();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::TrainEval(args) => cmd_train_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // one machine-readable line on stderr
            eprintln!(
                "{}",
                serde_json::json!({ "error": e.to_string() })
            );
            ExitCode::FAILURE
        }
    }
}

/// `CAO_THREADS` caps run-level parallelism; default is machine parallelism.
fn init_thread_pool() {
    if let Ok(v) = std::env::var("CAO_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// Refuses to write into an existing non-empty directory unless forced.
fn prepare_out_dir(path: &Path, force: bool) -> Result<()> {
    if path.exists() {
        let non_empty = std::fs::read_dir(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                path.display()
            )));
        }
    } else {
        std::fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

fn write_config_echo<T: Serialize>(dir: &Path, name: &str, config: &T) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(config)?)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    prepare_out_dir(&args.out, args.force)?;
    let mut base = SynthConfig::new(CaoClass::Lad, args.seed);
    base.fs_hz = args.fs;
    base.duration_s = args.duration;
    base.st_elevation_mv = args.st_elevation;
    if args.no_noise {
        base.noise = NoiseConfig::none();
    }

    let counts = (args.n_lad, args.n_lcx, args.n_rca);
    if counts == (0, 0, 0) {
        eprintln!("warning: zero records requested; writing an empty dataset");
    }
    let generated = generate_dataset(counts, &base, args.seed)?;
    let (records, truths): (Vec<EcgRecord>, Vec<_>) = generated.into_iter().unzip();
    write_record_dataset(&args.out, &records)?;
    write_ground_truth(&args.out, &truths)?;

    #[derive(Serialize)]
    struct SynthEcho<'a> {
        seed: u64,
        n_lad: usize,
        n_lcx: usize,
        n_rca: usize,
        base_config: &'a SynthConfig,
    }
    write_config_echo(
        &args.out,
        "synth.json",
        &SynthEcho {
            seed: args.seed,
            n_lad: args.n_lad,
            n_lcx: args.n_lcx,
            n_rca: args.n_rca,
            base_config: &base,
        },
    )?;

    println!(
        "wrote {} records to {} (LAD {}, LCX {}, RCA {})",
        records.len(),
        args.out.display(),
        args.n_lad,
        args.n_lcx,
        args.n_rca
    );
    Ok(())
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<()> {
    let records = read_record_dataset(&args.dataset)?;
    prepare_out_dir(&args.out, args.force)?;
    let preprocess = args.arm == ArmChoice::Preprocessed;
    let spec = FilterSpec::default();
    let dataset = build_dataset(
        &records,
        preprocess,
        &spec,
        (args.window_pre, args.window_post),
    )?;
    write_pulse_dataset(&args.out, &dataset)?;

    #[derive(Serialize)]
    struct PreprocessEcho<'a> {
        arm: &'a str,
        window_pre_s: f64,
        window_post_s: f64,
        filter_spec: &'a FilterSpec,
        source: String,
    }
    write_config_echo(
        &args.out,
        "preprocess.json",
        &PreprocessEcho {
            arm: if preprocess { "preprocessed" } else { "raw" },
            window_pre_s: args.window_pre,
            window_post_s: args.window_post,
            filter_spec: &spec,
            source: args.dataset.display().to_string(),
        },
    )?;

    let counts = dataset.class_counts();
    let per_class: Vec<String> = counts
        .iter()
        .map(|(class, n)| format!("{class} {n}"))
        .collect();
    println!(
        "{} arm: {} pulses of length {} from {} records ({})",
        if preprocess { "preprocessed" } else { "raw" },
        dataset.pulses.len(),
        dataset.pulse_len(),
        records.len(),
        per_class.join(", ")
    );
    Ok(())
}

fn cmd_train_eval(args: TrainEvalArgs) -> Result<()> {
    let records = read_record_dataset(&args.dataset)?;
    prepare_out_dir(&args.out, args.force)?;

    let mut options = ExperimentOptions::default();
    if let Some(epochs) = args.epochs {
        options.train.epochs = epochs;
    }

    let variants: Vec<Variant> = match args.variant {
        VariantArg::OneD => vec![Variant::Conv1d],
        VariantArg::TwoD => vec![Variant::Conv2d],
        VariantArg::All => vec![Variant::Conv1d, Variant::Conv2d],
    };
    let arms: Vec<bool> = match args.arm {
        ArmArg::Raw => vec![false],
        ArmArg::Preprocessed => vec![true],
        ArmArg::All => vec![true, false],
    };

    let mut reports: Vec<EvalReport> = Vec::new();
    for &variant in &variants {
        for &preprocess in &arms {
            let arm_name = if preprocess { "preprocessed" } else { "raw" };
            println!(
                "running {} x {arm_name}: {} runs, seed {}",
                variant.as_str(),
                args.runs,
                args.seed
            );
            let report =
                run_experiment(&records, preprocess, variant, args.runs, args.seed, &options)?;
            println!(
                "  stage1 AUROC {:.3} ± {:.3}, stage2 AUROC {:.3} ± {:.3}",
                report.stage1.auroc.mean,
                report.stage1.auroc.std,
                report.stage2.auroc.mean,
                report.stage2.auroc.std
            );
            reports.push(report);
        }
    }

    let json_path = args.out.join("report.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&reports)?)
        .map_err(|e| Error::io(json_path.display().to_string(), e))?;
    let csv_path = args.out.join("report.csv");
    std::fs::write(&csv_path, render_report_csv(&reports)?)
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    let txt = render_report_text(&reports)?;
    let txt_path = args.out.join("report.txt");
    std::fs::write(&txt_path, &txt).map_err(|e| Error::io(txt_path.display().to_string(), e))?;
    print!("{txt}");

    if !args.no_checkpoints {
        // Final checkpoints: one cascade per combination, trained on the
        // full dataset with a seed derived from the experiment seed.
        for &variant in &variants {
            for &preprocess in &arms {
                let arm_name = if preprocess { "preprocessed" } else { "raw" };
                let dataset = build_dataset(
                    &records,
                    preprocess,
                    &options.filter_spec,
                    (options.window_pre_s, options.window_post_s),
                )?;
                let model = options
                    .model
                    .clone()
                    .unwrap_or_else(|| ModelConfig::desk_scale(variant));
                let mut train_config = options.train.clone();
                train_config.rng_seed = derive_seed(args.seed, 0xF1A1);
                let mut cascade = train_cascade(&dataset, &model, &train_config)?;
                cascade.threshold1 = options.threshold1;
                cascade.threshold2 = options.threshold2;
                let dir = args
                    .out
                    .join(format!("cascade-{}-{arm_name}", variant.as_str()));
                save_cascade(&dir, &mut cascade)?;
            }
        }
    }

    println!("report written to {}", args.out.display());
    Ok(())
}

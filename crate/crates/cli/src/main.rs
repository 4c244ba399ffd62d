use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use driftlearn::curation::{DriftDetectorConfig, FrameStatistic, StatisticDistance};
use driftlearn::stream::DriftingStreamConfig;
use driftlearn_cli::commands::{prepare_output_dir, write_json, CURATED_MANIFEST};
use driftlearn_cli::compare::comparison_csv;
use driftlearn_cli::{
    cmd_compare, cmd_curate, cmd_evaluate, cmd_generate, cmd_run, exit_code, ExperimentConfig,
    Method, StreamSource, EXIT_DIVERGED, EXIT_OK,
};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(
    name = "driftlearn",
    version,
    about = "Online segmentation experiments on drifting streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic stream directory.
    Generate(GenerateArgs),
    /// Detect sub-chunks and choose annotation frames for a stream directory.
    Curate(CurateArgs),
    /// Run the Δ_C sweep for each method and seed.
    Run(RunArgs),
    /// Score a directory of predicted masks.
    Evaluate(EvaluateArgs),
    /// Tabulate report sets written by `run`.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// JSON stream spec or preset parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    sub_chunks: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    appearance_pool: Option<usize>,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct CurateArgs {
    #[arg(long)]
    stream: PathBuf,
    /// Manifest to write; defaults to `curated.json` inside the stream.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Detector settings as JSON; the flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = serde_enum::<FrameStatistic>)]
    statistic: Option<FrameStatistic>,
    #[arg(long, value_parser = serde_enum::<StatisticDistance>)]
    distance: Option<StatisticDistance>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodChoice {
    Baseline,
    Rcl,
    Both,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stream directory written by `generate`.
    #[arg(long)]
    stream: Option<PathBuf>,
    /// Alternative manifest inside or beside the stream, e.g. from `curate`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodChoice>,
    /// Comma-separated Δ_C values.
    #[arg(long, value_delimiter = ',')]
    delta_c: Option<Vec<usize>>,
    /// Comma-separated model seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    lambda_r: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    init_epochs: Option<usize>,
    #[arg(long)]
    memory_capacity: Option<usize>,
    #[arg(long)]
    snapshot_capacity: Option<usize>,
    /// Skip re-scoring earlier sub-chunks at sub-chunk ends.
    #[arg(long)]
    no_revisit: bool,
    /// Skip writing predicted masks.
    #[arg(long)]
    no_masks: bool,
    /// Parallel cells; also capped by DRIFTLEARN_THREADS.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    stream: PathBuf,
    /// Directory of `mask_%06d.pgm` predictions.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Boundary tolerance in pixels.
    #[arg(long)]
    radius: Option<usize>,
    /// Write the evaluation JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Output directories of `run`.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Directory for comparison.csv and comparison.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
}

fn serde_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|e| e.to_string())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("parsing {}: {e}", path.display()))
}

fn generate(args: GenerateArgs) -> Result<i32> {
    let mut source = match &args.config {
        Some(path) => read_json::<StreamSource>(path)?,
        None => StreamSource::Preset(DriftingStreamConfig::default()),
    };
    match &mut source {
        StreamSource::Preset(p) => {
            p.seed = args.seed.unwrap_or(p.seed);
            p.frames = args.frames.unwrap_or(p.frames);
            p.sub_chunks = args.sub_chunks.unwrap_or(p.sub_chunks);
            p.height = args.height.unwrap_or(p.height);
            p.width = args.width.unwrap_or(p.width);
            p.channels = args.channels.unwrap_or(p.channels);
            p.appearance_pool = args.appearance_pool.unwrap_or(p.appearance_pool);
        }
        StreamSource::Spec(spec) => {
            let shape_flags = [
                args.frames,
                args.sub_chunks,
                args.height,
                args.width,
                args.channels,
                args.appearance_pool,
            ];
            if shape_flags.iter().any(Option::is_some) {
                bail!("only --seed can override an explicit stream spec");
            }
            spec.seed = args.seed.unwrap_or(spec.seed);
        }
        StreamSource::Directory(_) => {
            bail!("generate needs a spec or preset config, not a directory")
        }
    }
    let manifest = cmd_generate(&source, &args.out, args.overwrite)?;
    println!(
        "wrote {} frames in {} sub-chunks ({} annotated) to {}",
        manifest.frame_count,
        manifest.sub_chunks.len(),
        manifest.annotated_frames.len(),
        args.out.display()
    );
    Ok(EXIT_OK)
}

fn curate(args: CurateArgs) -> Result<i32> {
    let mut detector = match &args.config {
        Some(path) => read_json::<DriftDetectorConfig>(path)?,
        None => DriftDetectorConfig::default(),
    };
    detector.statistic = args.statistic.unwrap_or(detector.statistic);
    detector.distance = args.distance.unwrap_or(detector.distance);
    detector.threshold = args.threshold.unwrap_or(detector.threshold);
    detector.smoothing_window = args.window.unwrap_or(detector.smoothing_window);
    let out = args
        .out
        .unwrap_or_else(|| args.stream.join(CURATED_MANIFEST));
    let manifest = cmd_curate(&args.stream, &detector, &out, args.overwrite)?;
    println!(
        "{} sub-chunks, {} annotated frames, manifest {}",
        manifest.sub_chunks.len(),
        manifest.annotated_frames.len(),
        out.display()
    );
    Ok(EXIT_OK)
}

fn run(args: RunArgs) -> Result<i32> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::read(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = args.stream {
        config.stream = Some(StreamSource::Directory(dir));
    }
    if let Some(out) = args.out {
        config.output_dir = Some(out);
    }
    if let Some(m) = args.method {
        config.methods = match m {
            MethodChoice::Baseline => vec![Method::Baseline],
            MethodChoice::Rcl => vec![Method::Rcl],
            MethodChoice::Both => vec![Method::Baseline, Method::Rcl],
        };
    }
    if let Some(dc) = args.delta_c {
        config.sweep_delta_c = dc;
    }
    if let Some(seeds) = args.seeds {
        config.seeds = seeds;
    }
    let l = &mut config.learner;
    l.lambda_r = args.lambda_r.unwrap_or(l.lambda_r);
    l.learning_rate = args.learning_rate.unwrap_or(l.learning_rate);
    l.epochs_per_update = args.epochs.unwrap_or(l.epochs_per_update);
    l.init_epochs = args.init_epochs.unwrap_or(l.init_epochs);
    l.memory_capacity = args.memory_capacity.unwrap_or(l.memory_capacity);
    l.snapshot_capacity = args.snapshot_capacity.unwrap_or(l.snapshot_capacity);
    if args.no_revisit {
        l.revisit = false;
    }
    if args.no_masks {
        config.write_masks = false;
    }
    let summary = cmd_run(&config, args.manifest.as_deref(), args.jobs, args.overwrite)?;
    let diverged = summary.cells.iter().filter(|c| c.diverged).count();
    println!(
        "{} cells written to {}{}",
        summary.cells.len(),
        config.output_dir.as_ref().expect("validated").display(),
        if diverged > 0 {
            format!(", {diverged} diverged")
        } else {
            String::new()
        }
    );
    Ok(if summary.diverged() {
        EXIT_DIVERGED
    } else {
        EXIT_OK
    })
}

fn evaluate(args: EvaluateArgs) -> Result<i32> {
    let eval = cmd_evaluate(
        &args.stream,
        args.manifest.as_deref(),
        &args.predictions,
        args.radius,
    )?;
    match args.out {
        Some(path) => {
            if path.exists() && !args.overwrite {
                bail!(
                    "{} already exists; pass --overwrite to replace it",
                    path.display()
                );
            }
            write_json(&path, &eval)?;
            println!(
                "J {:.4}  F {:.4}  J&F {:.4} over {} frames",
                eval.summary.mean_j, eval.summary.mean_f, eval.summary.mean_jf, eval.summary.count
            );
        }
        None => println!("{}", serde_json::to_string_pretty(&eval)?),
    }
    Ok(EXIT_OK)
}

fn compare(args: CompareArgs) -> Result<i32> {
    let comparison = cmd_compare(&args.reports)?;
    let csv = comparison_csv(&comparison)?;
    if let Some(out) = &args.out {
        prepare_output_dir(out, args.overwrite)?;
        std::fs::write(out.join("comparison.csv"), &csv)?;
        write_json(&out.join("comparison.json"), &comparison)?;
    }
    print!("{csv}");
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Curate(a) => curate(a),
        Command::Run(a) => run(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}

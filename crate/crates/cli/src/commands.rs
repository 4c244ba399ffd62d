use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use driftlearn::curation::{
    detect_sub_chunks, relabel_manifest, select_annotation_frames, DriftDetectorConfig,
};
use driftlearn::learner::{run_sequence, NoopObserver, RunReport, RunStatus};
use driftlearn::metrics::{aggregate, forgetting, Aggregate, ForgettingReport, ScoreRecord};
use driftlearn::stream::{
    chunk_of, mask_file_name, read_mask, save_stream, write_mask, Frame, Manifest,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Method, StreamSource};

pub const REPORT_FILE: &str = "report.json";
pub const EXPERIMENT_FILE: &str = "experiment.json";
pub const CURATED_MANIFEST: &str = "curated.json";
pub const THREADS_ENV: &str = "DRIFTLEARN_THREADS";

/// Makes `path` an empty directory. An existing non-empty target is
/// removed only with `overwrite`.
pub fn prepare_output_dir(path: &Path, overwrite: bool) -> Result<()> {
    if path.exists() {
        let occupied = !path.is_dir() || fs::read_dir(path)?.next().is_some();
        if occupied {
            if !overwrite {
                bail!(
                    "{} already exists; pass --overwrite to replace it",
                    path.display()
                );
            }
            if path.is_dir() {
                fs::remove_dir_all(path)
            } else {
                fs::remove_file(path)
            }
            .with_context(|| format!("removing {}", path.display()))?;
        }
    }
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn check_output_file(path: &Path, overwrite: bool) -> Result<()> {
    if path.exists() && !overwrite {
        bail!(
            "{} already exists; pass --overwrite to replace it",
            path.display()
        );
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Generates a stream directory: manifest, feature files and masks.
pub fn cmd_generate(source: &StreamSource, out: &Path, overwrite: bool) -> Result<Manifest> {
    if matches!(source, StreamSource::Directory(_)) {
        bail!("generate needs a stream spec or preset, not a directory");
    }
    let (manifest, frames) = source.load(None)?;
    prepare_output_dir(out, overwrite)?;
    save_stream(out, &manifest, &frames)?;
    Ok(manifest)
}

/// Detects sub-chunks in a stream directory and writes a manifest with the
/// new partition and annotation frames.
pub fn cmd_curate(
    stream_dir: &Path,
    detector: &DriftDetectorConfig,
    out: &Path,
    overwrite: bool,
) -> Result<Manifest> {
    detector.validate()?;
    check_output_file(out, overwrite)?;
    let (manifest, frames) = StreamSource::Directory(stream_dir.to_path_buf()).load(None)?;
    let features: Vec<_> = frames.into_iter().map(|f| f.features).collect();
    let bounds = detect_sub_chunks(&features, detector)?;
    let annotated = select_annotation_frames(&bounds, manifest.frame_count)?;
    let curated = relabel_manifest(&manifest, &bounds, annotated)?;
    curated.write(out)?;
    Ok(curated)
}

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub seed: u64,
    pub delta_c: usize,
    pub method: Method,
    pub dir: PathBuf,
    pub diverged: bool,
    pub mean_jf: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub cells: Vec<CellResult>,
}

impl RunSummary {
    pub fn diverged(&self) -> bool {
        self.cells.iter().any(|c| c.diverged)
    }
}

pub fn cell_dir(root: &Path, seed: u64, delta_c: usize, method: Method) -> PathBuf {
    root.join(format!("seed_{seed}"))
        .join(format!("dc_{delta_c:02}"))
        .join(method.name())
}

/// Worker count: `jobs` if given, otherwise all cores, capped by
/// `DRIFTLEARN_THREADS` when set.
pub fn worker_count(jobs: Option<usize>) -> usize {
    let mut n = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if let Some(cap) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        n = n.min(cap.max(1));
    }
    n.max(1)
}

fn run_cell(
    config: &ExperimentConfig,
    frames: &[Frame],
    manifest: &Manifest,
    root: &Path,
    (seed, delta_c, method): (u64, usize, Method),
) -> Result<CellResult> {
    let learner = config.cell_config(seed, delta_c, method);
    let outcome = run_sequence(frames, manifest, &learner, &mut NoopObserver)?;
    let dir = cell_dir(root, seed, delta_c, method);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join(REPORT_FILE), &outcome.report)?;
    if config.write_masks {
        let mask_dir = dir.join("masks");
        fs::create_dir_all(&mask_dir)?;
        for (t, mask) in outcome.predictions.iter().enumerate() {
            if let Some(mask) = mask {
                write_mask(&mask_dir.join(mask_file_name(t)), mask)?;
            }
        }
    }
    let diverged = matches!(outcome.report.status, RunStatus::Diverged { .. });
    eprintln!(
        "seed {seed} Δ_C {delta_c} {method}: {}",
        match (&outcome.report.status, outcome.report.mean_jf()) {
            (RunStatus::Diverged { step, .. }, _) => format!("diverged at frame {step}"),
            (_, Some(jf)) => format!("mean J&F {jf:.4}"),
            (_, None) => "no evaluation frames".to_string(),
        }
    );
    Ok(CellResult {
        seed,
        delta_c,
        method,
        dir,
        diverged,
        mean_jf: outcome.report.mean_jf(),
    })
}

/// Runs every (seed, Δ_C, method) cell and writes one report directory per
/// cell under the output directory.
pub fn cmd_run(
    config: &ExperimentConfig,
    manifest_path: Option<&Path>,
    jobs: Option<usize>,
    overwrite: bool,
) -> Result<RunSummary> {
    config.validate()?;
    let source = config
        .stream
        .as_ref()
        .context("no stream given; pass --stream or set `stream` in the config")?;
    let root = config
        .output_dir
        .as_deref()
        .context("no output directory given; pass --out or set `output_dir` in the config")?;
    let (manifest, frames) = source.load(manifest_path)?;
    prepare_output_dir(root, overwrite)?;
    write_json(&root.join(EXPERIMENT_FILE), config)?;

    let mut cells = Vec::new();
    for &seed in &config.seeds {
        for &dc in &config.sweep_delta_c {
            for &method in &config.methods {
                cells.push((seed, dc, method));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(jobs))
        .build()?;
    let results: Result<Vec<CellResult>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&cell| run_cell(config, &frames, &manifest, root, cell))
            .collect()
    });
    Ok(RunSummary { cells: results? })
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub scores: Vec<ScoreRecord>,
    pub summary: Aggregate,
    pub forgetting: ForgettingReport,
}

/// Scores predicted masks (`mask_%06d.pgm`) against the annotated frames of
/// a stream directory.
pub fn cmd_evaluate(
    stream_dir: &Path,
    manifest_path: Option<&Path>,
    predictions: &Path,
    radius: Option<usize>,
) -> Result<Evaluation> {
    let (manifest, frames) =
        StreamSource::Directory(stream_dir.to_path_buf()).load(manifest_path)?;
    let bounds = manifest.bounds();
    let mut scores = Vec::new();
    for e in manifest.evaluation_frames() {
        let path = predictions.join(mask_file_name(e));
        let pred =
            read_mask(&path).with_context(|| format!("reading prediction {}", path.display()))?;
        let chunk = chunk_of(&bounds, e).expect("annotated frames lie inside the partition");
        scores.push(ScoreRecord::score(
            &pred,
            frames[e].truth()?,
            e,
            chunk,
            0,
            radius,
        )?);
    }
    let summary = aggregate(&scores).context("the stream has no evaluation frames")?;
    let forgetting = forgetting(&scores);
    Ok(Evaluation {
        scores,
        summary,
        forgetting,
    })
}

/// Reads a report written by `run`.
pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use driftlearn::curation::{select_annotation_frames, DriftDetectorConfig};
use driftlearn::learner::LearnerConfig;
use driftlearn::stream::{
    generate_stream, load_stream, load_stream_with_manifest, DriftingStreamConfig, Frame, Manifest,
    StreamSpec,
};
use serde::{Deserialize, Serialize};

pub const DEFAULT_SWEEP: [usize; 6] = [1, 2, 4, 6, 8, 10];

/// Where a stream comes from: a directory written by `generate`, an
/// explicit generator spec, or preset parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StreamSource {
    Directory(PathBuf),
    Spec(StreamSpec),
    Preset(DriftingStreamConfig),
}

impl StreamSource {
    /// Generator spec for in-memory sources.
    pub fn spec(&self) -> Result<Option<StreamSpec>> {
        Ok(match self {
            StreamSource::Directory(_) => None,
            StreamSource::Spec(spec) => {
                spec.validate()?;
                Some(spec.clone())
            }
            StreamSource::Preset(preset) => Some(preset.build()?),
        })
    }

    /// Frames plus a manifest. Generated sources are annotated with the
    /// selection rule applied to the generator's partition.
    pub fn load(&self, manifest: Option<&Path>) -> Result<(Manifest, Vec<Frame>)> {
        if let StreamSource::Directory(dir) = self {
            let loaded = match manifest {
                Some(m) => load_stream_with_manifest(dir, m),
                None => load_stream(dir),
            };
            return loaded.with_context(|| format!("loading stream from {}", dir.display()));
        }
        if manifest.is_some() {
            bail!("--manifest only applies to stream directories");
        }
        let spec = self.spec()?.expect("in-memory source");
        let frames = generate_stream(&spec)?;
        let annotated = select_annotation_frames(&spec.bounds(), spec.frame_count())?;
        Ok((Manifest::from_spec(&spec, annotated), frames))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    Rcl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Rcl => "rcl",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything `run` needs. Read from one JSON document; command-line flags
/// override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub stream: Option<StreamSource>,
    pub learner: LearnerConfig,
    pub sweep_delta_c: Vec<usize>,
    pub methods: Vec<Method>,
    /// Target-model initialisation seeds, one set of cells per seed.
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub detector: DriftDetectorConfig,
    pub write_masks: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            stream: None,
            learner: LearnerConfig::default(),
            sweep_delta_c: DEFAULT_SWEEP.to_vec(),
            methods: vec![Method::Baseline, Method::Rcl],
            seeds: vec![0],
            output_dir: None,
            detector: DriftDetectorConfig::default(),
            write_masks: true,
        }
    }
}

impl ExperimentConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        if self.sweep_delta_c.is_empty() || self.sweep_delta_c.contains(&0) {
            bail!(
                "sweep values must be at least 1, got {:?}",
                self.sweep_delta_c
            );
        }
        if self.methods.is_empty() {
            bail!("at least one method is required");
        }
        self.learner.validate()?;
        Ok(())
    }

    /// Learner settings for one cell.
    pub fn cell_config(&self, seed: u64, delta_c: usize, method: Method) -> LearnerConfig {
        LearnerConfig {
            delta_c,
            rcl_enabled: method == Method::Rcl,
            init_seed: seed,
            ..self.learner.clone()
        }
    }
}

//! Splitting a stream into sub-chunks and choosing frames to annotate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Grid2D;
use crate::stream::{validate_partition, ChunkBounds, Manifest, ManifestSubChunk, StreamSpec};

const HISTOGRAM_BINS: usize = 16;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatistic {
    /// Per-channel mean over all pixels.
    #[default]
    GlobalMean,
    /// Per-channel normalised histogram on a range shared by the stream.
    ChannelHistogram,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticDistance {
    #[default]
    Euclidean,
    ChiSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftDetectorConfig {
    pub statistic: FrameStatistic,
    pub distance: StatisticDistance,
    /// `f64::INFINITY` disables detection.
    pub threshold: f64,
    pub smoothing_window: usize,
}

impl Default for DriftDetectorConfig {
    fn default() -> Self {
        Self {
            statistic: FrameStatistic::GlobalMean,
            distance: StatisticDistance::Euclidean,
            threshold: 1.0,
            smoothing_window: 1,
        }
    }
}

impl DriftDetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(Error::Config(format!(
                "detector threshold must be positive, got {}",
                self.threshold
            )));
        }
        if self.smoothing_window == 0 {
            return Err(Error::Config("smoothing window must be at least 1".into()));
        }
        Ok(())
    }
}

fn frame_statistics(frames: &[Grid2D], statistic: FrameStatistic) -> Vec<Vec<f64>> {
    match statistic {
        FrameStatistic::GlobalMean => frames
            .iter()
            .map(|f| {
                let mut sums = vec![0.0; f.channels()];
                for px in f.data().chunks_exact(f.channels()) {
                    for (s, v) in sums.iter_mut().zip(px) {
                        *s += v;
                    }
                }
                let n = f.pixel_count() as f64;
                sums.into_iter().map(|s| s / n).collect()
            })
            .collect(),
        FrameStatistic::ChannelHistogram => {
            let channels = frames[0].channels();
            let mut lo = vec![f64::INFINITY; channels];
            let mut hi = vec![f64::NEG_INFINITY; channels];
            for f in frames {
                for px in f.data().chunks_exact(channels) {
                    for c in 0..channels {
                        lo[c] = lo[c].min(px[c]);
                        hi[c] = hi[c].max(px[c]);
                    }
                }
            }
            frames
                .iter()
                .map(|f| {
                    let mut hist = vec![0.0; channels * HISTOGRAM_BINS];
                    let share = 1.0 / f.pixel_count() as f64;
                    for px in f.data().chunks_exact(channels) {
                        for c in 0..channels {
                            let span = hi[c] - lo[c];
                            let bin = if span > 0.0 {
                                (((px[c] - lo[c]) / span) * HISTOGRAM_BINS as f64) as usize
                            } else {
                                0
                            };
                            hist[c * HISTOGRAM_BINS + bin.min(HISTOGRAM_BINS - 1)] += share;
                        }
                    }
                    hist
                })
                .collect()
        }
    }
}

fn window_mean(stats: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; stats[0].len()];
    for s in stats {
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= stats.len() as f64);
    acc
}

fn distance(a: &[f64], b: &[f64], kind: StatisticDistance) -> f64 {
    match kind {
        StatisticDistance::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        StatisticDistance::ChiSquare => a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                let denom = x.abs() + y.abs();
                if denom > 0.0 {
                    (x - y) * (x - y) / denom
                } else {
                    0.0
                }
            })
            .sum(),
    }
}

/// Distance between the window ending at `t−1` and the window starting at
/// `t`, for every `t ≥ 1`. Index 0 is always 0.
pub fn drift_scores(frames: &[Grid2D], config: &DriftDetectorConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::Usage(
            "drift detection needs at least one frame".into(),
        ));
    }
    for (i, f) in frames.iter().enumerate() {
        if f.channels() != frames[0].channels() {
            return Err(Error::Usage(format!(
                "frame {i} has {} channels, frame 0 has {}",
                f.channels(),
                frames[0].channels()
            )));
        }
    }
    let stats = frame_statistics(frames, config.statistic);
    let w = config.smoothing_window;
    let n = frames.len();
    let mut scores = vec![0.0; n];
    for t in 1..n {
        let before = window_mean(&stats[t.saturating_sub(w)..t]);
        let after = window_mean(&stats[t..(t + w).min(n)]);
        scores[t] = distance(&before, &after, config.distance);
    }
    Ok(scores)
}

/// Splits the stream where consecutive windows differ by more than the
/// threshold. With a window wider than one frame, only the largest score
/// within `window − 1` frames of a candidate becomes a boundary.
pub fn detect_sub_chunks(
    frames: &[Grid2D],
    config: &DriftDetectorConfig,
) -> Result<Vec<ChunkBounds>> {
    let scores = drift_scores(frames, config)?;
    let n = frames.len();
    let reach = config.smoothing_window - 1;
    let above = |t: usize| t > 0 && scores[t] > config.threshold;
    let mut starts = vec![0];
    for t in 1..n {
        if !above(t) {
            continue;
        }
        let lo = t.saturating_sub(reach).max(1);
        let hi = (t + reach).min(n - 1);
        let dominated = (lo..=hi).any(|u| {
            u != t && above(u) && (scores[u] > scores[t] || (scores[u] == scores[t] && u < t))
        });
        if !dominated {
            starts.push(t);
        }
    }
    let bounds: Vec<ChunkBounds> = starts
        .iter()
        .enumerate()
        .map(|(i, &s)| ChunkBounds::new(s, starts.get(i + 1).map_or(n - 1, |&next| next - 1)))
        .collect();
    Ok(bounds)
}

/// First frame and middle frame of every sub-chunk plus the last frame of
/// the stream, sorted and deduplicated.
pub fn select_annotation_frames(
    sub_chunks: &[ChunkBounds],
    total_frames: usize,
) -> Result<Vec<usize>> {
    if sub_chunks.is_empty() {
        return Err(Error::Usage(
            "no sub-chunks to select annotation frames from".into(),
        ));
    }
    validate_partition(sub_chunks, Some(total_frames)).map_err(|e| Error::Usage(e.to_string()))?;
    let mut frames: Vec<usize> = sub_chunks
        .iter()
        .flat_map(|c| [c.start, (c.start + c.end) / 2])
        .chain([total_frames - 1])
        .collect();
    frames.sort_unstable();
    frames.dedup();
    Ok(frames)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationRole {
    /// Ground truth handed to the learner.
    Given,
    Evaluation,
}

pub fn annotation_roles(
    annotated: &[usize],
    ground_truth_frame: usize,
) -> Vec<(usize, AnnotationRole)> {
    annotated
        .iter()
        .map(|&f| {
            let role = if f == ground_truth_frame {
                AnnotationRole::Given
            } else {
                AnnotationRole::Evaluation
            };
            (f, role)
        })
        .collect()
}

/// Replaces the partition and annotations of `base`. Regime descriptions
/// survive only where a new sub-chunk matches an old one exactly.
pub fn relabel_manifest(
    base: &Manifest,
    sub_chunks: &[ChunkBounds],
    annotated_frames: Vec<usize>,
) -> Result<Manifest> {
    let mut manifest = base.clone();
    manifest.sub_chunks = sub_chunks
        .iter()
        .map(|b| ManifestSubChunk {
            start: b.start,
            end: b.end,
            regime: base
                .sub_chunks
                .iter()
                .find(|c| c.start == b.start && c.end == b.end)
                .and_then(|c| c.regime.clone()),
        })
        .collect();
    manifest.annotated_frames = annotated_frames;
    manifest.validate()?;
    Ok(manifest)
}

/// Builds the manifest for `spec` with the given partition and annotations.
pub fn build_manifest(
    spec: &StreamSpec,
    sub_chunks: &[ChunkBounds],
    annotated_frames: Vec<usize>,
) -> Result<Manifest> {
    relabel_manifest(
        &Manifest::from_spec(spec, Vec::new()),
        sub_chunks,
        annotated_frames,
    )
}

pub fn write_manifest(
    spec: &StreamSpec,
    sub_chunks: &[ChunkBounds],
    annotated_frames: Vec<usize>,
    path: &Path,
) -> Result<Manifest> {
    let manifest = build_manifest(spec, sub_chunks, annotated_frames)?;
    manifest.write(path)?;
    Ok(manifest)
}

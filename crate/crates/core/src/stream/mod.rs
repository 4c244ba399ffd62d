//! Synthetic piecewise-stationary segmentation streams.
//!
//! A stream is a sequence of sub-chunks; each sub-chunk holds one
//! [`RegimeSpec`] describing the object footprint and the per-class feature
//! distribution. Regimes are swapped abruptly at sub-chunk boundaries.
//!
//! Frame noise is drawn from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! the stream seed, with the word stream set to the frame index, and
//! normal variates from `rand_distr::StandardNormal`. Any frame can therefore
//! be regenerated on its own.

mod format;
mod presets;

pub use format::{
    feature_file_name, load_stream, load_stream_with_manifest, mask_file_name, read_features,
    read_mask, save_stream, write_features, write_mask, Manifest, ManifestSubChunk, MANIFEST_FILE,
};
pub use presets::DriftingStreamConfig;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Grid2D, MaskGrid};

pub const DEFAULT_HEIGHT: usize = 64;
pub const DEFAULT_WIDTH: usize = 64;
pub const DEFAULT_CHANNELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectShape {
    Disc,
    Rectangle,
    Ring,
}

impl ObjectShape {
    /// Whether offset `(dy, dx)` from the object centre is inside a shape of
    /// the given scale. Rectangles are `2·scale` wide and `1.2·scale` tall;
    /// rings keep the outer half of the disc radius.
    fn contains(self, dy: f64, dx: f64, scale: f64) -> bool {
        let r2 = dy * dy + dx * dx;
        match self {
            ObjectShape::Disc => r2 <= scale * scale,
            ObjectShape::Rectangle => dy.abs() <= 0.6 * scale && dx.abs() <= scale,
            ObjectShape::Ring => r2 <= scale * scale && r2 >= 0.25 * scale * scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub object_shape: ObjectShape,
    /// Radius (disc, ring) or half-width (rectangle), in pixels.
    pub object_scale: f64,
    pub foreground_mean: Vec<f64>,
    pub background_mean: Vec<f64>,
    pub feature_noise_std: f64,
    /// Per-frame displacement `[dy, dx]` of the object centre.
    pub motion: [f64; 2],
}

impl RegimeSpec {
    fn validate(&self, channels: usize, separable: bool, chunk: usize) -> Result<()> {
        let ctx = |msg: String| Error::Validation(format!("sub-chunk {chunk}: {msg}"));
        if self.foreground_mean.len() != channels || self.background_mean.len() != channels {
            return Err(ctx(format!(
                "feature means must have {channels} channels (got {} and {})",
                self.foreground_mean.len(),
                self.background_mean.len()
            )));
        }
        let all = self
            .foreground_mean
            .iter()
            .chain(&self.background_mean)
            .chain(&self.motion);
        if !all.into_iter().all(|v| v.is_finite()) {
            return Err(ctx("non-finite regime value".into()));
        }
        if !(self.feature_noise_std >= 0.0 && self.feature_noise_std.is_finite()) {
            return Err(ctx(format!(
                "noise std must be finite and non-negative, got {}",
                self.feature_noise_std
            )));
        }
        if !(self.object_scale > 0.0 && self.object_scale.is_finite()) {
            return Err(ctx(format!(
                "object scale must be positive, got {}",
                self.object_scale
            )));
        }
        if separable && self.max_mean_gap() < 2.0 * self.feature_noise_std {
            return Err(ctx(format!(
                "separable stream needs a channel gap ≥ 2σ = {}, largest gap is {}",
                2.0 * self.feature_noise_std,
                self.max_mean_gap()
            )));
        }
        Ok(())
    }

    pub fn max_mean_gap(&self) -> f64 {
        self.foreground_mean
            .iter()
            .zip(&self.background_mean)
            .map(|(f, b)| (f - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubChunk {
    pub start_frame: usize,
    /// Inclusive.
    pub end_frame: usize,
    pub regime: RegimeSpec,
}

impl SubChunk {
    pub fn len(&self) -> usize {
        self.end_frame + 1 - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, frame: usize) -> bool {
        (self.start_frame..=self.end_frame).contains(&frame)
    }
}

/// Inclusive frame range of one sub-chunk, without regime information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkBounds {
    pub start: usize,
    pub end: usize,
}

impl ChunkBounds {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, frame: usize) -> bool {
        (self.start..=self.end).contains(&frame)
    }
}

/// Checks that `chunks` are non-empty and tile `[0, total)` contiguously.
pub fn validate_partition(chunks: &[ChunkBounds], total: Option<usize>) -> Result<()> {
    if chunks.is_empty() {
        return Err(Error::Validation("stream has no sub-chunks".into()));
    }
    let mut next = 0usize;
    for (i, c) in chunks.iter().enumerate() {
        if c.start > c.end {
            return Err(Error::Validation(format!(
                "sub-chunk {i} starts at {} after its end {}",
                c.start, c.end
            )));
        }
        if c.start != next {
            return Err(Error::Validation(format!(
                "sub-chunk {i} starts at {} but the previous one ended at {} (overlap or gap)",
                c.start,
                next as isize - 1
            )));
        }
        next = c.end + 1;
    }
    if let Some(total) = total {
        if next != total {
            return Err(Error::Validation(format!(
                "sub-chunk lengths sum to {next} but the stream has {total} frames"
            )));
        }
    }
    Ok(())
}

/// Index of the sub-chunk containing `frame`.
pub fn chunk_of(chunks: &[ChunkBounds], frame: usize) -> Option<usize> {
    chunks.iter().position(|c| c.contains(frame))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub sub_chunks: Vec<SubChunk>,
    pub seed: u64,
    #[serde(default)]
    pub ground_truth_frame: usize,
    /// When set, every regime must keep its class means at least two noise
    /// standard deviations apart in some channel.
    #[serde(default)]
    pub separable: bool,
    /// Nominal frame rate; recorded but not used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
}

impl StreamSpec {
    pub fn frame_count(&self) -> usize {
        self.sub_chunks.last().map_or(0, |c| c.end_frame + 1)
    }

    pub fn bounds(&self) -> Vec<ChunkBounds> {
        self.sub_chunks
            .iter()
            .map(|c| ChunkBounds::new(c.start_frame, c.end_frame))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Validation(format!(
                "stream dimensions must be positive, got {}×{}×{}",
                self.height, self.width, self.channels
            )));
        }
        validate_partition(&self.bounds(), None)?;
        for (i, chunk) in self.sub_chunks.iter().enumerate() {
            chunk.regime.validate(self.channels, self.separable, i)?;
        }
        if !self.sub_chunks[0].contains(self.ground_truth_frame) {
            return Err(Error::Validation(format!(
                "ground-truth frame {} is outside the first sub-chunk",
                self.ground_truth_frame
            )));
        }
        Ok(())
    }

    fn regime_at(&self, frame: usize) -> &RegimeSpec {
        let i = self
            .sub_chunks
            .partition_point(|c| c.end_frame < frame)
            .min(self.sub_chunks.len() - 1);
        &self.sub_chunks[i].regime
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub features: Grid2D,
    /// Loaded streams may carry masks for annotated frames only.
    pub truth_mask: Option<MaskGrid>,
}

impl Frame {
    pub fn truth(&self) -> Result<&MaskGrid> {
        self.truth_mask
            .as_ref()
            .ok_or_else(|| Error::State(format!("frame {} has no ground-truth mask", self.index)))
    }
}

/// Renders every frame of `spec`.
pub fn generate_stream(spec: &StreamSpec) -> Result<Vec<Frame>> {
    spec.validate()?;
    let (h, w, d) = (spec.height, spec.width, spec.channels);
    let mut centre = [(h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0];
    let mut frames = Vec::with_capacity(spec.frame_count());
    for t in 0..spec.frame_count() {
        let regime = spec.regime_at(t);
        if t > 0 {
            centre[0] += regime.motion[0];
            centre[1] += regime.motion[1];
        }
        let mask = MaskGrid::from_fn(h, w, |y, x| {
            regime.object_shape.contains(
                y as f64 - centre[0],
                x as f64 - centre[1],
                regime.object_scale,
            )
        });
        if mask.foreground_count() == 0 {
            return Err(Error::Generation {
                frame: t,
                reason: format!(
                    "object centred at ({:.1}, {:.1}) has no pixels on the {h}×{w} canvas",
                    centre[0], centre[1]
                ),
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(t as u64);
        let mut features = Grid2D::zeros(h, w, d);
        let sigma = regime.feature_noise_std;
        for (px, &m) in features.data_mut().chunks_exact_mut(d).zip(mask.data()) {
            let mean = if m == 1 {
                &regime.foreground_mean
            } else {
                &regime.background_mean
            };
            for (v, mu) in px.iter_mut().zip(mean) {
                *v = *mu;
                if sigma > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += sigma * z;
                }
            }
        }
        frames.push(Frame {
            index: t,
            features,
            truth_mask: Some(mask),
        });
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn regime(fg: f64, bg: f64, channels: usize, noise: f64) -> RegimeSpec {
        RegimeSpec {
            object_shape: ObjectShape::Disc,
            object_scale: 4.0,
            foreground_mean: vec![fg; channels],
            background_mean: vec![bg; channels],
            feature_noise_std: noise,
            motion: [0.0, 0.0],
        }
    }

    fn two_chunk_spec(noise: f64) -> StreamSpec {
        StreamSpec {
            height: 16,
            width: 16,
            channels: 3,
            sub_chunks: vec![
                SubChunk {
                    start_frame: 0,
                    end_frame: 9,
                    regime: regime(5.0, 0.0, 3, noise),
                },
                SubChunk {
                    start_frame: 10,
                    end_frame: 19,
                    regime: regime(-5.0, 0.0, 3, noise),
                },
            ],
            seed: 11,
            ground_truth_frame: 0,
            separable: false,
            fps: None,
        }
    }

    #[test]
    fn stationary_zero_noise_frames_identical() {
        let mut spec = two_chunk_spec(0.0);
        spec.sub_chunks.truncate(1);
        let frames = generate_stream(&spec).unwrap();
        assert_eq!(frames.len(), 10);
        for f in &frames[1..] {
            assert_eq!(f.features, frames[0].features);
            assert_eq!(f.truth_mask, frames[0].truth_mask);
        }
    }

    #[test]
    fn foreground_mean_flips_at_boundary() {
        let spec = two_chunk_spec(0.5);
        let frames = generate_stream(&spec).unwrap();
        for f in &frames {
            let means = f
                .features
                .masked_channel_means(f.truth_mask.as_ref().unwrap(), true)
                .unwrap();
            for m in means {
                if f.index < 10 {
                    assert!(m > 3.0, "frame {} mean {m}", f.index);
                } else {
                    assert!(m < -3.0, "frame {} mean {m}", f.index);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let spec = two_chunk_spec(1.0);
        assert_eq!(
            generate_stream(&spec).unwrap(),
            generate_stream(&spec).unwrap()
        );
        let mut other = spec.clone();
        other.seed += 1;
        assert_ne!(
            generate_stream(&spec).unwrap(),
            generate_stream(&other).unwrap()
        );
    }

    #[test]
    fn object_leaving_canvas_names_frame() {
        let mut spec = two_chunk_spec(0.0);
        spec.sub_chunks[1].regime.motion = [0.0, 2.0];
        match generate_stream(&spec) {
            Err(Error::Generation { frame, .. }) => {
                // centre starts at 7.5, radius 4: gone once x > 15 + 4
                assert!(frame > 10 && frame < 20);
            }
            other => panic!("expected generation error, got {other:?}"),
        }
    }

    #[test]
    fn masks_are_binary_and_non_empty() {
        let mut spec = two_chunk_spec(1.0);
        spec.sub_chunks[0].regime.object_shape = ObjectShape::Ring;
        spec.sub_chunks[1].regime.object_shape = ObjectShape::Rectangle;
        spec.sub_chunks[1].regime.motion = [0.2, -0.1];
        for f in generate_stream(&spec).unwrap() {
            let m = f.truth_mask.unwrap();
            assert!(m.data().iter().all(|&v| v <= 1));
            assert!(m.foreground_count() > 0);
        }
    }

    #[test]
    fn overlapping_sub_chunks_rejected() {
        let mut spec = two_chunk_spec(0.0);
        spec.sub_chunks[1].start_frame = 9;
        assert!(matches!(spec.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn ground_truth_must_be_in_first_chunk() {
        let mut spec = two_chunk_spec(0.0);
        spec.ground_truth_frame = 12;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn separable_flag_checks_gap() {
        let mut spec = two_chunk_spec(3.0);
        spec.separable = true;
        // gap 5 < 2·3
        assert!(spec.validate().is_err());
        spec.sub_chunks
            .iter_mut()
            .for_each(|c| c.regime.feature_noise_std = 2.0);
        spec.validate().unwrap();
    }

    #[test]
    fn partition_checks_total() {
        let chunks = [ChunkBounds::new(0, 4), ChunkBounds::new(5, 9)];
        validate_partition(&chunks, Some(10)).unwrap();
        assert!(validate_partition(&chunks, Some(11)).is_err());
        assert!(validate_partition(&[], None).is_err());
        assert_eq!(chunk_of(&chunks, 7), Some(1));
        assert_eq!(chunk_of(&chunks, 10), None);
    }
}

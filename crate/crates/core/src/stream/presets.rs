//! Randomised stream specs with abrupt regime changes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ObjectShape, RegimeSpec, StreamSpec, SubChunk};
use crate::error::{Error, Result};

/// Parameters for [`DriftingStreamConfig::build`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftingStreamConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frames: usize,
    pub sub_chunks: usize,
    pub seed: u64,
    pub noise_std: f64,
    /// Foreground/background gap along the cue shared by every regime.
    pub shared_gap: f64,
    /// Spread of the regime-specific class means.
    pub regime_spread: f64,
    pub min_scale: f64,
    pub max_scale: f64,
    pub max_speed: f64,
    /// Number of distinct class-mean appearances that sub-chunks draw from;
    /// 0 gives every sub-chunk a fresh appearance. Neighbouring sub-chunks
    /// never share one, so every boundary is a drift.
    pub appearance_pool: usize,
}

impl Default for DriftingStreamConfig {
    fn default() -> Self {
        Self {
            height: super::DEFAULT_HEIGHT,
            width: super::DEFAULT_WIDTH,
            channels: super::DEFAULT_CHANNELS,
            frames: 600,
            sub_chunks: 6,
            seed: 0,
            noise_std: 0.125,
            shared_gap: 0.5,
            regime_spread: 0.25,
            min_scale: 6.0,
            max_scale: 12.0,
            max_speed: 0.2,
            appearance_pool: 0,
        }
    }
}

impl DriftingStreamConfig {
    /// Stream with a single regime.
    pub fn stationary(mut self) -> Self {
        self.sub_chunks = 1;
        self
    }

    pub fn build(&self) -> Result<StreamSpec> {
        if self.sub_chunks == 0 || self.frames < self.sub_chunks {
            return Err(Error::Config(format!(
                "cannot split {} frames into {} sub-chunks",
                self.frames, self.sub_chunks
            )));
        }
        if self.channels == 0 {
            return Err(Error::Config(
                "drifting stream needs at least one channel".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        // keep regime draws off the word streams used for frame noise
        rng.set_stream(u64::MAX);

        let bounds = self.chunk_starts(&mut rng);
        if self.appearance_pool == 1 && self.sub_chunks > 1 {
            return Err(Error::Config(
                "an appearance pool of one cannot separate neighbouring sub-chunks".into(),
            ));
        }
        let distinct = if self.appearance_pool == 0 {
            self.sub_chunks
        } else {
            self.appearance_pool
        };
        let appearances: Vec<(Vec<f64>, Vec<f64>)> =
            (0..distinct).map(|_| self.appearance(&mut rng)).collect();
        let mut sub_chunks = Vec::with_capacity(self.sub_chunks);
        let mut previous = 0;
        for (i, &start) in bounds.iter().enumerate() {
            let end = bounds.get(i + 1).map_or(self.frames, |&s| s) - 1;
            let pick = if self.appearance_pool == 0 || i == 0 {
                i
            } else {
                // uniform over the pool minus the previous appearance
                let k = rng.random_range(0..distinct - 1);
                if k >= previous {
                    k + 1
                } else {
                    k
                }
            };
            previous = pick;
            let (foreground_mean, background_mean) = appearances[pick].clone();
            let object_shape = match rng.random_range(0..3) {
                0 => ObjectShape::Disc,
                1 => ObjectShape::Rectangle,
                _ => ObjectShape::Ring,
            };
            let object_scale = rng.random_range(self.min_scale..=self.max_scale);
            let motion = [
                rng.random_range(-self.max_speed..=self.max_speed),
                rng.random_range(-self.max_speed..=self.max_speed),
            ];
            sub_chunks.push(SubChunk {
                start_frame: start,
                end_frame: end,
                regime: RegimeSpec {
                    object_shape,
                    object_scale,
                    foreground_mean,
                    background_mean,
                    feature_noise_std: self.noise_std,
                    motion,
                },
            });
        }
        self.keep_on_canvas(&mut sub_chunks);
        let spec = StreamSpec {
            height: self.height,
            width: self.width,
            channels: self.channels,
            sub_chunks,
            seed: self.seed,
            ground_truth_frame: 0,
            separable: false,
            fps: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Class means: the first half of the channels separates the classes by
    /// about `shared_gap` around a common offset, the rest are unrelated.
    fn appearance(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let shared = self.channels.div_ceil(2);
        let mut foreground = Vec::with_capacity(self.channels);
        let mut background = Vec::with_capacity(self.channels);
        let offset = rng.random_range(-self.regime_spread..=self.regime_spread);
        for c in 0..self.channels {
            if c < shared {
                let gap = self.shared_gap * rng.random_range(0.75..=1.25);
                foreground.push(offset + gap / 2.0);
                background.push(offset - gap / 2.0);
            } else {
                foreground.push(rng.random_range(-self.regime_spread..=self.regime_spread));
                background.push(rng.random_range(-self.regime_spread..=self.regime_spread));
            }
        }
        (foreground, background)
    }

    /// Sub-chunk start frames: equal lengths with up to ±25% jitter.
    fn chunk_starts(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let base = self.frames as f64 / self.sub_chunks as f64;
        let mut starts = vec![0usize];
        for i in 1..self.sub_chunks {
            let jitter = rng.random_range(-0.25..=0.25) * base;
            let s = (base * i as f64 + jitter).round() as usize;
            let prev = *starts.last().unwrap();
            starts.push(s.clamp(prev + 1, self.frames - (self.sub_chunks - i)));
        }
        starts
    }

    /// Keeps the object centre within a quarter of the canvas of the middle:
    /// caps the travel within a sub-chunk at that distance and reverses the
    /// motion when the end point would leave the band.
    fn keep_on_canvas(&self, chunks: &mut [SubChunk]) {
        let limit = [self.height as f64 / 4.0, self.width as f64 / 4.0];
        let mut offset = [0.0f64; 2];
        for chunk in chunks.iter_mut() {
            let n = (chunk.len() - usize::from(chunk.start_frame == 0)) as f64;
            for axis in 0..2 {
                if n > 0.0 {
                    let cap = limit[axis] / n;
                    chunk.regime.motion[axis] = chunk.regime.motion[axis].clamp(-cap, cap);
                }
                let end = offset[axis] + chunk.regime.motion[axis] * n;
                if end.abs() > limit[axis] {
                    chunk.regime.motion[axis] = -chunk.regime.motion[axis];
                }
                offset[axis] += chunk.regime.motion[axis] * n;
            }
        }
    }
}

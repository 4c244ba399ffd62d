//! The online target model: a single 3×3 convolution from frame features to
//! a one-channel score map, decoded to a mask by a sigmoid threshold. Labels
//! pass through an identity encoder, so the model regresses masks directly.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{entry_data_loss, LossSettings};
use crate::memory::FrameMemory;
use crate::numerics::{conv2d_forward, ConvKernel, Grid2D, MaskGrid};

pub const DEFAULT_KERNEL_SIZE: usize = 3;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
const CHECKPOINT_MAGIC: &[u8; 4] = b"CLVM";

#[derive(Debug, Clone, PartialEq)]
pub struct TargetModel {
    kernel: ConvKernel,
}

impl TargetModel {
    /// Zero bias and weights drawn uniformly from `±1/√fan_in`.
    pub fn new(channels: usize, kernel_size: usize, seed: u64) -> Result<Self> {
        let mut kernel = ConvKernel::zeros(kernel_size, channels, 1)?;
        let bound = 1.0 / ((kernel_size * kernel_size * channels) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in kernel.weights_mut() {
            *w = rng.random_range(-bound..bound);
        }
        Ok(Self { kernel })
    }

    pub fn from_kernel(kernel: ConvKernel) -> Result<Self> {
        if kernel.out_channels() != 1 {
            return Err(Error::Config(format!(
                "target model produces one score map, kernel has {} outputs",
                kernel.out_channels()
            )));
        }
        Ok(Self { kernel })
    }

    pub fn kernel(&self) -> &ConvKernel {
        &self.kernel
    }

    pub fn channels(&self) -> usize {
        self.kernel.in_channels()
    }

    pub fn param_count(&self) -> usize {
        self.kernel.param_count()
    }

    pub fn params(&self) -> Vec<f64> {
        self.kernel.params()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.kernel.set_params(params)
    }

    pub fn is_finite(&self) -> bool {
        self.kernel.is_finite()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let k = &self.kernel;
        let mut bytes = CHECKPOINT_MAGIC.to_vec();
        for dim in [k.kernel_size(), k.in_channels(), k.out_channels()] {
            bytes.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in k.weights().iter().chain(k.bias()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::load(path, "missing CLVM header"));
        }
        let dim =
            |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (ks, cin, cout) = (dim(0), dim(1), dim(2));
        let n_weights = ks * ks * cin * cout;
        let values: Vec<f64> = bytes[16..]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if bytes[16..].len() % 8 != 0 || values.len() != n_weights + cout {
            return Err(Error::load(
                path,
                format!("checkpoint payload does not match a {ks}×{ks}×{cin}→{cout} kernel"),
            ));
        }
        let kernel = ConvKernel::new(
            ks,
            cin,
            cout,
            values[..n_weights].to_vec(),
            values[n_weights..].to_vec(),
        )
        .map_err(|e| Error::load(path, e.to_string()))?;
        Self::from_kernel(kernel).map_err(|e| Error::load(path, e.to_string()))
    }
}

pub fn predict_scores(model: &TargetModel, features: &Grid2D) -> Result<Grid2D> {
    conv2d_forward(features, &model.kernel)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Foreground where `sigmoid(score) ≥ threshold`. Only channel 0 of
/// `scores` is read.
pub fn decode_mask(scores: &Grid2D, threshold: f64) -> MaskGrid {
    let c = scores.channels();
    let mut mask = MaskGrid::zeros(scores.height(), scores.width());
    for y in 0..scores.height() {
        for x in 0..scores.width() {
            let s = scores.data()[(y * scores.width() + x) * c];
            mask.set(y, x, sigmoid(s) >= threshold);
        }
    }
    mask
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceKind {
    /// Mean absolute per-entry gradient.
    #[default]
    AbsGrad,
    /// Mean squared per-entry gradient (diagonal Fisher style).
    SqGrad,
}

/// Per-parameter importance; every entry is finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceVector(Vec<f64>);

impl ImportanceVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Importance of each parameter: the mean over memory entries of the
/// magnitude of that entry's data-loss gradient, at the current parameters.
pub fn compute_importance(
    model: &TargetModel,
    memory: &FrameMemory,
    current_step: usize,
    settings: &LossSettings,
    kind: ImportanceKind,
) -> Result<ImportanceVector> {
    if memory.is_empty() {
        return Err(Error::State(
            "cannot compute importance on an empty memory".into(),
        ));
    }
    let d = memory.temporal_weights(current_step)?;
    let mut phi = vec![0.0; model.param_count()];
    for (entry, &dn) in memory.entries().iter().zip(&d) {
        let (_, grad) = entry_data_loss(model, &entry.features, &entry.mask, dn, settings)?;
        for (p, g) in phi.iter_mut().zip(grad) {
            *p += match kind {
                ImportanceKind::AbsGrad => g.abs(),
                ImportanceKind::SqGrad => g * g,
            };
        }
    }
    let n = memory.len() as f64;
    phi.iter_mut().for_each(|p| *p /= n);
    if phi.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical("importance is not finite".into()));
    }
    Ok(ImportanceVector(phi))
}

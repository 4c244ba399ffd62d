//! Bounded stores used by the online learner: the frame memory of
//! (features, mask) training pairs and the regularizer memory of
//! (parameters, importance) snapshots.
//!
//! Both evict the oldest non-pinned entry once full. The first entry of
//! each (the ground-truth frame, the initial snapshot) is pinned.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Grid2D, MaskGrid};
use crate::stream::{write_features, write_mask};

pub const DEFAULT_FRAME_CAPACITY: usize = 32;
pub const DEFAULT_SNAPSHOT_CAPACITY: usize = 20;
pub const DEFAULT_DECAY_GAMMA: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub features: Grid2D,
    pub mask: MaskGrid,
    pub insertion_step: usize,
    pub pinned: bool,
}

/// What happened on [`FrameMemory::insert_frame`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    /// Inserted, and the entry stored at this step was dropped.
    Evicted(usize),
    /// The memory holds only pinned entries; the newcomer was dropped.
    Rejected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMemory {
    capacity: usize,
    decay_gamma: f64,
    decay_pinned: bool,
    entries: Vec<FrameEntry>,
}

impl FrameMemory {
    /// Memory holding only the pinned ground-truth pair.
    pub fn new(
        features: Grid2D,
        mask: MaskGrid,
        step: usize,
        capacity: usize,
        decay_gamma: f64,
    ) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config(
                "frame memory capacity must be at least 1".into(),
            ));
        }
        if !(decay_gamma > 0.0 && decay_gamma <= 1.0) {
            return Err(Error::Config(format!(
                "decay gamma must lie in (0, 1], got {decay_gamma}"
            )));
        }
        check_pair(&features, &mask)?;
        Ok(Self {
            capacity,
            decay_gamma,
            decay_pinned: false,
            entries: vec![FrameEntry {
                features,
                mask,
                insertion_step: step,
                pinned: true,
            }],
        })
    }

    /// Also decay the pinned entry by its age instead of holding it at 1.
    pub fn with_pinned_decay(mut self, decay_pinned: bool) -> Self {
        self.decay_pinned = decay_pinned;
        self
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[FrameEntry] {
        &self.entries
    }

    pub fn pinned_count(&self) -> usize {
        self.entries.iter().filter(|e| e.pinned).count()
    }

    pub fn latest_step(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.insertion_step)
            .max()
            .unwrap_or(0)
    }

    pub fn insert_frame(
        &mut self,
        features: Grid2D,
        mask: MaskGrid,
        step: usize,
    ) -> Result<InsertOutcome> {
        if let Some(last) = self.entries.iter().map(|e| e.insertion_step).max() {
            if step <= last {
                return Err(Error::Usage(format!(
                    "insertion step {step} is not after the latest stored step {last}"
                )));
            }
        }
        check_pair(&features, &mask)?;
        if let Some(first) = self.entries.first() {
            if !first.features.same_shape(&features) {
                return Err(Error::Config(
                    "inserted features differ in shape from memory".into(),
                ));
            }
        }
        self.entries.push(FrameEntry {
            features,
            mask,
            insertion_step: step,
            pinned: false,
        });
        if self.entries.len() <= self.capacity {
            return Ok(InsertOutcome::Inserted);
        }
        // entries are in insertion order, so the first unpinned one is oldest
        let victim = self
            .entries
            .iter()
            .position(|e| !e.pinned)
            .expect("newcomer is unpinned");
        let evicted = self.entries.remove(victim);
        if evicted.insertion_step == step {
            Ok(InsertOutcome::Rejected)
        } else {
            Ok(InsertOutcome::Evicted(evicted.insertion_step))
        }
    }

    /// Temporal weights `d_n = γ^(age)`, with the pinned entry held at 1
    /// unless pinned decay is enabled, rescaled to sum to the entry count.
    pub fn temporal_weights(&self, current_step: usize) -> Result<Vec<f64>> {
        let mut raw = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            if e.insertion_step > current_step {
                return Err(Error::Usage(format!(
                    "entry stored at step {} is newer than current step {current_step}",
                    e.insertion_step
                )));
            }
            let age = (current_step - e.insertion_step) as f64;
            raw.push(if e.pinned && !self.decay_pinned {
                1.0
            } else {
                self.decay_gamma.powf(age)
            });
        }
        let total: f64 = raw.iter().sum();
        let n = raw.len() as f64;
        Ok(raw.into_iter().map(|w| w * n / total).collect())
    }

    /// Writes `index.json` plus one CLVF/PGM pair per entry into `dir`.
    pub fn dump(&self, dir: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct IndexEntry {
            slot: usize,
            insertion_step: usize,
            pinned: bool,
            features: String,
            mask: String,
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut index = Vec::with_capacity(self.entries.len());
        for (slot, e) in self.entries.iter().enumerate() {
            let features = format!("entry_{slot:03}.clvf");
            let mask = format!("entry_{slot:03}.pgm");
            write_features(&dir.join(&features), &e.features)?;
            write_mask(&dir.join(&mask), &e.mask)?;
            index.push(IndexEntry {
                slot,
                insertion_step: e.insertion_step,
                pinned: e.pinned,
                features,
                mask,
            });
        }
        let path = dir.join("index.json");
        let text = serde_json::to_string_pretty(&index).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn check_pair(features: &Grid2D, mask: &MaskGrid) -> Result<()> {
    if features.height() != mask.height() || features.width() != mask.width() {
        return Err(Error::Config(format!(
            "features are {}×{} but mask is {}×{}",
            features.height(),
            features.width(),
            mask.height(),
            mask.width()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub step: usize,
    pub pinned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerMemory {
    capacity: usize,
    snapshots: Vec<Snapshot>,
}

impl RegularizerMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config(
                "regularizer memory capacity must be at least 1".into(),
            ));
        }
        Ok(Self {
            capacity,
            snapshots: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    /// Appends a snapshot, pinning the first one ever pushed. Returns the
    /// step of an evicted snapshot, if any.
    pub fn push_snapshot(
        &mut self,
        theta: Vec<f64>,
        phi: Vec<f64>,
        step: usize,
    ) -> Result<Option<usize>> {
        if theta.len() != phi.len() {
            return Err(Error::Config(format!(
                "theta has {} entries but phi has {}",
                theta.len(),
                phi.len()
            )));
        }
        if let Some(first) = self.snapshots.first() {
            if first.theta.len() != theta.len() {
                return Err(Error::Config(format!(
                    "snapshot has {} parameters, memory holds {}",
                    theta.len(),
                    first.theta.len()
                )));
            }
        }
        if phi.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::Config(
                "importance entries must be finite and ≥ 0".into(),
            ));
        }
        let pinned = self.snapshots.is_empty();
        self.snapshots.push(Snapshot {
            theta,
            phi,
            step,
            pinned,
        });
        if self.snapshots.len() <= self.capacity {
            return Ok(None);
        }
        let victim = self
            .snapshots
            .iter()
            .position(|s| !s.pinned)
            .expect("latest snapshot is unpinned");
        Ok(Some(self.snapshots.remove(victim).step))
    }
}

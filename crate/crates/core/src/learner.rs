//! Online training of the target model.
//!
//! The data loss over the frame memory is
//!
//! ```text
//! L(Θ) = 1/|M| Σ_n Σ_p (d_n W_n,p (y_n,p − s_n,p(Θ)))² / Σ_p W_n,p² + λ_wd Σ_k θ_k²
//! ```
//!
//! with `d_n` the temporal weight of entry `n`, `W_n` the class-balancing
//! pixel weights derived from its stored mask, `y` the stored mask and `s`
//! the score map. Dividing by `Σ_p W²` keeps the curvature of the loss
//! independent of object size, so one learning rate suits every stream. The regularized loss adds
//! `λ_r Σ_j Σ_k φ^j_k (θ_k − θ^j_k)²` over every retained snapshot.
//! Both are minimised by fixed-step full-batch gradient descent.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{
    FrameMemory, InsertOutcome, RegularizerMemory, DEFAULT_DECAY_GAMMA, DEFAULT_FRAME_CAPACITY,
    DEFAULT_SNAPSHOT_CAPACITY,
};
use crate::metrics::{aggregate, forgetting, Aggregate, ForgettingReport, ScoreRecord};
use crate::model::{
    compute_importance, decode_mask, predict_scores, sigmoid, ImportanceKind, TargetModel,
    DEFAULT_KERNEL_SIZE,
};
use crate::numerics::{conv2d_kernel_gradient, Grid2D, MaskGrid};
use crate::stream::{chunk_of, Frame, Manifest};

/// Class-balancing pixel weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelWeightPolicy {
    /// Each class weight is clamped to `[1/cap, cap]`.
    pub cap: f64,
}

impl Default for PixelWeightPolicy {
    fn default() -> Self {
        Self { cap: 100.0 }
    }
}

/// Where `d_n W_n` enters the squared residual.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPlacement {
    /// `(d W r)²`: the weights are squared with the residual.
    Inside,
    /// `d W r²`.
    #[default]
    Outside,
}

/// How a descent step treats the RCL penalty.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyStep {
    /// Data term explicit, penalty term at the new parameters (proximal).
    #[default]
    Implicit,
    /// Plain gradient step on the whole objective.
    Explicit,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSettings {
    pub pixel_weights: PixelWeightPolicy,
    pub placement: WeightPlacement,
}

/// Foreground pixels get `T/(2·N_fg)`, background `T/(2·N_bg)`, each
/// clamped to `[1/cap, cap]`; a mask with an empty class is weighted 1.
pub fn spatial_weights(mask: &MaskGrid, policy: &PixelWeightPolicy) -> Grid2D {
    let total = mask.pixel_count();
    let fg = mask.foreground_count();
    let bg = total - fg;
    if fg == 0 || bg == 0 {
        return Grid2D::filled(mask.height(), mask.width(), 1, 1.0);
    }
    let (lo, hi) = (1.0 / policy.cap, policy.cap);
    let w_fg = (total as f64 / (2.0 * fg as f64)).clamp(lo, hi);
    let w_bg = (total as f64 / (2.0 * bg as f64)).clamp(lo, hi);
    let data = mask
        .data()
        .iter()
        .map(|&m| if m == 1 { w_fg } else { w_bg })
        .collect();
    Grid2D::from_vec(mask.height(), mask.width(), 1, data).expect("shape matches mask")
}

/// One memory entry's contribution `Σ_p (d W (y − s))² / Σ_p W²` and its
/// gradient, without the `1/|M|` factor. The outside placement divides
/// `Σ_p d W (y − s)²` by `Σ_p W`.
pub(crate) fn entry_data_loss(
    model: &TargetModel,
    features: &Grid2D,
    mask: &MaskGrid,
    temporal_weight: f64,
    settings: &LossSettings,
) -> Result<(f64, Vec<f64>)> {
    let scores = predict_scores(model, features)?;
    let weights = spatial_weights(mask, &settings.pixel_weights);
    let p: f64 = match settings.placement {
        WeightPlacement::Inside => weights.data().iter().map(|w| w * w).sum(),
        WeightPlacement::Outside => weights.data().iter().sum(),
    };
    let mut loss = 0.0;
    let mut upstream = Vec::with_capacity(mask.pixel_count());
    for ((&y, &s), &w) in mask.data().iter().zip(scores.data()).zip(weights.data()) {
        let r = f64::from(y) - s;
        let c = match settings.placement {
            WeightPlacement::Inside => (temporal_weight * w).powi(2),
            WeightPlacement::Outside => temporal_weight * w,
        };
        loss += c * r * r;
        upstream.push(-2.0 * c * r / p);
    }
    let upstream = Grid2D::from_vec(mask.height(), mask.width(), 1, upstream)?;
    let grad = conv2d_kernel_gradient(features, model.kernel(), &upstream)?;
    Ok((loss / p, grad.params()))
}

/// Data loss over the whole frame memory plus weight decay.
pub fn data_loss(
    model: &TargetModel,
    memory: &FrameMemory,
    current_step: usize,
    config: &LearnerConfig,
) -> Result<(f64, Vec<f64>)> {
    if memory.is_empty() {
        return Err(Error::State("data loss needs a non-empty memory".into()));
    }
    let settings = config.loss_settings();
    let d = memory.temporal_weights(current_step)?;
    let n = memory.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.param_count()];
    for (entry, &dn) in memory.entries().iter().zip(&d) {
        let (l, g) = entry_data_loss(model, &entry.features, &entry.mask, dn, &settings)?;
        loss += l;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += gi;
        }
    }
    loss /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    if config.lambda_wd != 0.0 {
        for (g, theta) in grad.iter_mut().zip(model.params()) {
            loss += config.lambda_wd * theta * theta;
            *g += 2.0 * config.lambda_wd * theta;
        }
    }
    Ok((loss, grad))
}

/// `λ_r Σ_j Σ_k φ^j_k (θ_k − θ^j_k)²` and its gradient.
pub fn rcl_penalty(
    theta: &[f64],
    reg_mem: &RegularizerMemory,
    lambda_r: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut penalty = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for snap in reg_mem.snapshots() {
        if snap.theta.len() != theta.len() {
            return Err(Error::Config(format!(
                "snapshot from step {} has {} parameters, model has {}",
                snap.step,
                snap.theta.len(),
                theta.len()
            )));
        }
        for k in 0..theta.len() {
            let diff = theta[k] - snap.theta[k];
            penalty += snap.phi[k] * diff * diff;
            grad[k] += 2.0 * snap.phi[k] * diff;
        }
    }
    grad.iter_mut().for_each(|g| *g *= lambda_r);
    Ok((lambda_r * penalty, grad))
}

/// Loss terms at the current parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub data: f64,
    pub penalty: f64,
    pub gradient: Vec<f64>,
}

impl Objective {
    pub fn total(&self) -> f64 {
        self.data + self.penalty
    }
}

/// `L` for the baseline, `L + rcl_penalty` when RCL is enabled.
pub fn objective(
    model: &TargetModel,
    frame_memory: &FrameMemory,
    reg_mem: &RegularizerMemory,
    config: &LearnerConfig,
    current_step: usize,
) -> Result<Objective> {
    let (data, mut gradient) = data_loss(model, frame_memory, current_step, config)?;
    let mut penalty = 0.0;
    if config.rcl_enabled {
        let (p, g) = rcl_penalty(&model.params(), reg_mem, config.lambda_r)?;
        penalty = p;
        for (acc, gi) in gradient.iter_mut().zip(g) {
            *acc += gi;
        }
    }
    Ok(Objective {
        data,
        penalty,
        gradient,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    /// Frames between target-model updates.
    pub delta_c: usize,
    /// Frames between memory insertions; `None` follows `delta_c`.
    pub delta_m: Option<usize>,
    pub epochs_per_update: usize,
    /// Descent steps used to fit the initial model on the ground-truth frame.
    pub init_epochs: usize,
    pub learning_rate: f64,
    pub lambda_wd: f64,
    pub lambda_r: f64,
    pub rcl_enabled: bool,
    pub penalty_step: PenaltyStep,
    pub memory_capacity: usize,
    pub snapshot_capacity: usize,
    pub decay_gamma: f64,
    pub decay_pinned: bool,
    pub pixel_weight_cap: f64,
    pub weight_placement: WeightPlacement,
    pub importance: ImportanceKind,
    /// Sigmoid probability at or above which a pixel is foreground.
    pub decode_threshold: f64,
    pub kernel_size: usize,
    pub init_seed: u64,
    /// Re-score earlier annotated frames at the end of every sub-chunk.
    pub revisit: bool,
    /// Boundary tolerance in pixels; `None` uses the DAVIS default.
    pub boundary_radius: Option<usize>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            delta_c: 1,
            delta_m: None,
            epochs_per_update: 3,
            init_epochs: 500,
            learning_rate: 0.05,
            lambda_wd: 1e-3,
            lambda_r: 5.0,
            rcl_enabled: true,
            penalty_step: PenaltyStep::Implicit,
            memory_capacity: DEFAULT_FRAME_CAPACITY,
            snapshot_capacity: DEFAULT_SNAPSHOT_CAPACITY,
            decay_gamma: DEFAULT_DECAY_GAMMA,
            decay_pinned: false,
            pixel_weight_cap: PixelWeightPolicy::default().cap,
            weight_placement: WeightPlacement::Outside,
            importance: ImportanceKind::AbsGrad,
            // score 0.5, halfway between the background and foreground targets
            decode_threshold: sigmoid(0.5),
            kernel_size: DEFAULT_KERNEL_SIZE,
            init_seed: 0,
            revisit: true,
            boundary_radius: None,
        }
    }
}

impl LearnerConfig {
    pub fn baseline() -> Self {
        Self {
            rcl_enabled: false,
            ..Self::default()
        }
    }

    pub fn delta_m(&self) -> usize {
        self.delta_m.unwrap_or(self.delta_c)
    }

    pub fn method_name(&self) -> &'static str {
        if self.rcl_enabled {
            "rcl"
        } else {
            "baseline"
        }
    }

    pub fn loss_settings(&self) -> LossSettings {
        LossSettings {
            pixel_weights: PixelWeightPolicy {
                cap: self.pixel_weight_cap,
            },
            placement: self.weight_placement,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.delta_c == 0 || self.delta_m() == 0 {
            return bad("delta_c and delta_m must be at least 1".into());
        }
        if self.epochs_per_update == 0 {
            return bad("epochs_per_update must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} is invalid", self.learning_rate));
        }
        if !(self.lambda_wd >= 0.0 && self.lambda_wd.is_finite()) {
            return bad(format!("lambda_wd {} is invalid", self.lambda_wd));
        }
        if !(self.lambda_r >= 0.0 && self.lambda_r.is_finite()) {
            return bad(format!("lambda_r {} is invalid", self.lambda_r));
        }
        if self.memory_capacity == 0 || self.snapshot_capacity == 0 {
            return bad("memory capacities must be at least 1".into());
        }
        if !(self.decay_gamma > 0.0 && self.decay_gamma <= 1.0) {
            return bad(format!(
                "decay_gamma {} is outside (0, 1]",
                self.decay_gamma
            ));
        }
        if !(self.pixel_weight_cap >= 1.0 && self.pixel_weight_cap.is_finite()) {
            return bad(format!(
                "pixel weight cap {} must be ≥ 1",
                self.pixel_weight_cap
            ));
        }
        if !(self.decode_threshold > 0.0 && self.decode_threshold < 1.0) {
            return bad(format!(
                "decode threshold {} is outside (0, 1)",
                self.decode_threshold
            ));
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel size {} must be odd", self.kernel_size));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateSummary {
    /// Objective at the start of each epoch.
    pub losses: Vec<f64>,
    pub penalties: Vec<f64>,
    pub pushed_snapshot: bool,
    pub evicted_snapshot: Option<usize>,
}

/// Per-parameter curvature `2λ Σ_j φ^j_k` and pull `2λ Σ_j φ^j_k θ^j_k`
/// of the penalty, so that its gradient is `curvature ⊙ θ − pull`.
fn penalty_anchor(reg_mem: &RegularizerMemory, k: usize, lambda_r: f64) -> (Vec<f64>, Vec<f64>) {
    let mut curvature = vec![0.0; k];
    let mut pull = vec![0.0; k];
    for snap in reg_mem.snapshots() {
        for i in 0..k {
            curvature[i] += snap.phi[i];
            pull[i] += snap.phi[i] * snap.theta[i];
        }
    }
    for i in 0..k {
        curvature[i] *= 2.0 * lambda_r;
        pull[i] *= 2.0 * lambda_r;
    }
    (curvature, pull)
}

/// Runs `epochs` descent steps on the objective.
fn descend(
    model: &mut TargetModel,
    frame_memory: &FrameMemory,
    reg_mem: &RegularizerMemory,
    config: &LearnerConfig,
    step: usize,
    epochs: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut losses = Vec::with_capacity(epochs);
    let mut penalties = Vec::with_capacity(epochs);
    let mut params = model.params();
    let lr = config.learning_rate;
    let implicit = config.rcl_enabled && config.penalty_step == PenaltyStep::Implicit;
    let anchor = if implicit {
        reg_mem.snapshots().iter().try_for_each(|snap| {
            if snap.theta.len() == params.len() {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "snapshot from step {} has {} parameters, model has {}",
                    snap.step,
                    snap.theta.len(),
                    params.len()
                )))
            }
        })?;
        Some(penalty_anchor(reg_mem, params.len(), config.lambda_r))
    } else {
        None
    };
    for epoch in 0..epochs {
        let (data, mut gradient) = data_loss(model, frame_memory, step, config)?;
        let mut penalty = 0.0;
        if config.rcl_enabled {
            let (p, g) = rcl_penalty(&params, reg_mem, config.lambda_r)?;
            penalty = p;
            if !implicit {
                for (acc, gi) in gradient.iter_mut().zip(g) {
                    *acc += gi;
                }
            }
        }
        let loss = data + penalty;
        if !loss.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step, epoch, loss });
        }
        losses.push(loss);
        penalties.push(penalty);
        match &anchor {
            // the penalty term is taken at the new parameters, which keeps
            // the step stable however many snapshots are stored
            Some((curvature, pull)) => {
                for k in 0..params.len() {
                    let moved = params[k] - lr * gradient[k];
                    params[k] = if curvature[k] == 0.0 {
                        moved
                    } else {
                        (moved + lr * pull[k]) / (1.0 + lr * curvature[k])
                    };
                }
            }
            None => {
                for (p, g) in params.iter_mut().zip(&gradient) {
                    *p -= lr * g;
                }
            }
        }
        model.set_params(&params)?;
    }
    if !model.is_finite() {
        return Err(Error::Divergence {
            step,
            epoch: epochs,
            loss: f64::NAN,
        });
    }
    Ok((losses, penalties))
}

/// One update step: `epochs_per_update` descent steps on `L` (baseline) or
/// `L_R` (RCL), then, with RCL enabled, push `(Θ^t, Φ^t)` to the
/// regularizer memory.
pub fn update_target_model(
    model: &mut TargetModel,
    frame_memory: &FrameMemory,
    reg_mem: &mut RegularizerMemory,
    config: &LearnerConfig,
    current_step: usize,
) -> Result<UpdateSummary> {
    if frame_memory.is_empty() {
        return Err(Error::State(
            "cannot update on an empty frame memory".into(),
        ));
    }
    if reg_mem.is_empty() {
        return Err(Error::State("regularizer memory is not initialised".into()));
    }
    let (losses, penalties) = descend(
        model,
        frame_memory,
        reg_mem,
        config,
        current_step,
        config.epochs_per_update,
    )?;
    let mut summary = UpdateSummary {
        losses,
        penalties,
        pushed_snapshot: false,
        evicted_snapshot: None,
    };
    if config.rcl_enabled {
        let phi = compute_importance(
            model,
            frame_memory,
            current_step,
            &config.loss_settings(),
            config.importance,
        )?;
        summary.evicted_snapshot =
            reg_mem.push_snapshot(model.params(), phi.into_vec(), current_step)?;
        summary.pushed_snapshot = true;
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub inserts: usize,
    pub evictions: usize,
    pub rejected_inserts: usize,
    pub updates: usize,
    pub snapshots: usize,
    pub snapshot_evictions: usize,
}

/// The online learner state: target model, frame memory and regularizer
/// memory, advanced frame by frame.
#[derive(Debug, Clone)]
pub struct OnlineLearner {
    config: LearnerConfig,
    model: TargetModel,
    memory: FrameMemory,
    reg_mem: RegularizerMemory,
    ground_truth_frame: usize,
    events: EventCounts,
}

impl OnlineLearner {
    /// Seeds the memory with the ground-truth pair, fits `C⁰` on it and
    /// stores the pinned `(Θ⁰, Φ⁰)` snapshot.
    pub fn new(
        features: &Grid2D,
        truth: &MaskGrid,
        ground_truth_frame: usize,
        config: LearnerConfig,
    ) -> Result<Self> {
        config.validate()?;
        let mut model =
            TargetModel::new(features.channels(), config.kernel_size, config.init_seed)?;
        let memory = FrameMemory::new(
            features.clone(),
            truth.clone(),
            ground_truth_frame,
            config.memory_capacity,
            config.decay_gamma,
        )?
        .with_pinned_decay(config.decay_pinned);
        let mut reg_mem = RegularizerMemory::new(config.snapshot_capacity)?;
        descend(
            &mut model,
            &memory,
            &reg_mem,
            &config,
            ground_truth_frame,
            config.init_epochs,
        )?;
        let phi = compute_importance(
            &model,
            &memory,
            ground_truth_frame,
            &config.loss_settings(),
            config.importance,
        )?;
        reg_mem.push_snapshot(model.params(), phi.into_vec(), ground_truth_frame)?;
        Ok(Self {
            config,
            model,
            memory,
            reg_mem,
            ground_truth_frame,
            events: EventCounts {
                snapshots: 1,
                ..Default::default()
            },
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn model(&self) -> &TargetModel {
        &self.model
    }

    pub fn frame_memory(&self) -> &FrameMemory {
        &self.memory
    }

    pub fn regularizer_memory(&self) -> &RegularizerMemory {
        &self.reg_mem
    }

    pub fn events(&self) -> EventCounts {
        self.events
    }

    pub fn predict(&self, features: &Grid2D) -> Result<MaskGrid> {
        let scores = predict_scores(&self.model, features)?;
        Ok(decode_mask(&scores, self.config.decode_threshold))
    }

    /// Segments frame `t`, then inserts it into memory and updates the
    /// model when the schedules say so. Returns the predicted mask.
    pub fn step(&mut self, t: usize, features: &Grid2D) -> Result<MaskGrid> {
        if t <= self.ground_truth_frame {
            return Err(Error::Usage(format!(
                "frame {t} is not after the ground-truth frame {}",
                self.ground_truth_frame
            )));
        }
        let predicted = self.predict(features)?;
        let k = t - self.ground_truth_frame;
        if k.is_multiple_of(self.config.delta_m()) {
            match self
                .memory
                .insert_frame(features.clone(), predicted.clone(), t)?
            {
                InsertOutcome::Inserted => self.events.inserts += 1,
                InsertOutcome::Evicted(_) => {
                    self.events.inserts += 1;
                    self.events.evictions += 1;
                }
                InsertOutcome::Rejected => self.events.rejected_inserts += 1,
            }
        }
        if k.is_multiple_of(self.config.delta_c) {
            let summary = update_target_model(
                &mut self.model,
                &self.memory,
                &mut self.reg_mem,
                &self.config,
                t,
            )?;
            self.events.updates += 1;
            if summary.pushed_snapshot {
                self.events.snapshots += 1;
            }
            if summary.evicted_snapshot.is_some() {
                self.events.snapshot_evictions += 1;
            }
        }
        Ok(predicted)
    }
}

/// Callbacks from [`run_sequence`].
pub trait RunObserver {
    fn on_prediction(&mut self, _frame: usize, _mask: &MaskGrid) {}

    /// Called after initialisation and after every processed frame.
    fn on_step(&mut self, _frame: usize, _memory: &FrameMemory, _reg_mem: &RegularizerMemory) {}
}

pub struct NoopObserver;

impl RunObserver for NoopObserver {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub seed: u64,
    pub frame_count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub sub_chunks: usize,
    pub ground_truth_frame: usize,
    pub annotated_frames: Vec<usize>,
}

impl From<&Manifest> for StreamSummary {
    fn from(m: &Manifest) -> Self {
        Self {
            seed: m.seed,
            frame_count: m.frame_count,
            height: m.height,
            width: m.width,
            channels: m.channels,
            sub_chunks: m.sub_chunks.len(),
            ground_truth_frame: m.ground_truth_frame,
            annotated_frames: m.annotated_frames.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged {
        step: usize,
        epoch: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubChunkSummary {
    pub sub_chunk: usize,
    pub start: usize,
    pub end: usize,
    pub scores: Option<Aggregate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryAudit {
    pub frame: usize,
    pub frame_entries: usize,
    pub snapshots: usize,
    pub pinned_frame: bool,
    pub pinned_snapshot: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: f64,
    pub mean_frame_ms: f64,
    pub per_frame_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub config: LearnerConfig,
    pub stream: StreamSummary,
    pub status: RunStatus,
    /// Online scores at annotated frames.
    pub scores: Vec<ScoreRecord>,
    /// Re-scores of earlier annotated frames at each sub-chunk end.
    pub revisits: Vec<ScoreRecord>,
    pub summary: Option<Aggregate>,
    pub sub_chunk_summary: Vec<SubChunkSummary>,
    pub forgetting: ForgettingReport,
    pub events: EventCounts,
    pub peak_frame_entries: usize,
    pub peak_snapshots: usize,
    pub audit: Vec<MemoryAudit>,
    pub timing: Timing,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// JSON with the wall-clock fields removed, for reproducibility checks.
    pub fn to_json_without_timing(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serialises");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("timing");
        }
        serde_json::to_string_pretty(&value).expect("report serialises")
    }

    pub fn mean_jf(&self) -> Option<f64> {
        self.summary.map(|s| s.mean_jf)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    /// Predicted mask per frame; `None` up to and including the
    /// ground-truth frame and after a divergence.
    pub predictions: Vec<Option<MaskGrid>>,
    pub final_model: TargetModel,
}

/// Runs the online loop over `frames` and scores the annotated frames.
///
/// Per frame `t` after the ground-truth frame: predict with the current
/// model, score if annotated, insert into memory every `delta_m` frames and
/// update the model every `delta_c` frames. With `revisit` on, every
/// sub-chunk end re-scores all annotated frames seen so far with the
/// current model. A divergence ends the loop and returns the partial report
/// with a `diverged` status.
pub fn run_sequence(
    frames: &[Frame],
    manifest: &Manifest,
    config: &LearnerConfig,
    observer: &mut dyn RunObserver,
) -> Result<RunOutcome> {
    config.validate()?;
    if frames.len() != manifest.frame_count {
        return Err(Error::Usage(format!(
            "manifest declares {} frames but {} were supplied",
            manifest.frame_count,
            frames.len()
        )));
    }
    let bounds = manifest.bounds();
    let g = manifest.ground_truth_frame;
    let gt_frame = &frames[g];
    let started = Instant::now();
    let mut learner = OnlineLearner::new(&gt_frame.features, gt_frame.truth()?, g, config.clone())?;

    let eval_frames = manifest.evaluation_frames();
    for &e in &eval_frames {
        frames[e].truth()?;
    }
    let is_eval = |t: usize| eval_frames.binary_search(&t).is_ok();
    let radius = config.boundary_radius;

    let mut predictions: Vec<Option<MaskGrid>> = vec![None; frames.len()];
    let mut scores = Vec::new();
    let mut revisits = Vec::new();
    let mut audit = Vec::with_capacity(frames.len());
    let mut per_frame_ms = Vec::with_capacity(frames.len());
    let mut status = RunStatus::Completed;

    let record_audit = |audit: &mut Vec<MemoryAudit>, t: usize, l: &OnlineLearner| {
        audit.push(MemoryAudit {
            frame: t,
            frame_entries: l.frame_memory().len(),
            snapshots: l.regularizer_memory().len(),
            pinned_frame: l
                .frame_memory()
                .entries()
                .iter()
                .any(|e| e.pinned && e.insertion_step == g),
            pinned_snapshot: l
                .regularizer_memory()
                .snapshots()
                .first()
                .is_some_and(|s| s.pinned && s.step == g),
        });
    };
    record_audit(&mut audit, g, &learner);
    observer.on_step(g, learner.frame_memory(), learner.regularizer_memory());

    for t in g + 1..frames.len() {
        let frame = &frames[t];
        let tick = Instant::now();
        let step = learner.step(t, &frame.features);
        per_frame_ms.push(tick.elapsed().as_secs_f64() * 1e3);
        let predicted = match step {
            Ok(mask) => mask,
            Err(Error::Divergence { step, epoch, loss }) => {
                status = RunStatus::Diverged {
                    step,
                    epoch,
                    message: format!("non-finite loss {loss}"),
                };
                break;
            }
            Err(e) => return Err(e),
        };
        observer.on_prediction(t, &predicted);
        let chunk = chunk_of(&bounds, t).expect("frame inside the partition");
        if is_eval(t) {
            scores.push(ScoreRecord::score(
                &predicted,
                frame.truth()?,
                t,
                chunk,
                0,
                radius,
            )?);
        }
        predictions[t] = Some(predicted);

        if config.revisit && bounds[chunk].end == t {
            for &e in eval_frames.iter().filter(|&&e| e > g && e <= t) {
                let mask = learner.predict(&frames[e].features)?;
                let c = chunk_of(&bounds, e).expect("frame inside the partition");
                revisits.push(ScoreRecord::score(
                    &mask,
                    frames[e].truth()?,
                    e,
                    c,
                    chunk + 1,
                    radius,
                )?);
            }
        }
        record_audit(&mut audit, t, &learner);
        observer.on_step(t, learner.frame_memory(), learner.regularizer_memory());
    }

    let summary = aggregate(&scores).ok();
    let sub_chunk_summary = bounds
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let mine: Vec<ScoreRecord> = scores
                .iter()
                .filter(|r| r.sub_chunk == i)
                .copied()
                .collect();
            SubChunkSummary {
                sub_chunk: i,
                start: b.start,
                end: b.end,
                scores: aggregate(&mine).ok(),
            }
        })
        .collect();
    let forgetting_report = if config.revisit {
        forgetting(&revisits)
    } else {
        forgetting(&scores)
    };
    let peak_frame_entries = audit.iter().map(|a| a.frame_entries).max().unwrap_or(0);
    let peak_snapshots = audit.iter().map(|a| a.snapshots).max().unwrap_or(0);
    let mean_frame_ms = if per_frame_ms.is_empty() {
        0.0
    } else {
        per_frame_ms.iter().sum::<f64>() / per_frame_ms.len() as f64
    };
    let report = RunReport {
        method: config.method_name().to_string(),
        config: config.clone(),
        stream: StreamSummary::from(manifest),
        status,
        scores,
        revisits,
        summary,
        sub_chunk_summary,
        forgetting: forgetting_report,
        events: learner.events(),
        peak_frame_entries,
        peak_snapshots,
        audit,
        timing: Timing {
            total_ms: started.elapsed().as_secs_f64() * 1e3,
            mean_frame_ms,
            per_frame_ms,
        },
    };
    Ok(RunOutcome {
        report,
        predictions,
        final_model: learner.model().clone(),
    })
}

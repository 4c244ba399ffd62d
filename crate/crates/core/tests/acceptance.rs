//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion; the tolerances live in the constants below.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use driftlearn::curation::{detect_sub_chunks, select_annotation_frames, DriftDetectorConfig};
use driftlearn::learner::{
    objective, run_sequence, LearnerConfig, NoopObserver, RunObserver, RunOutcome, RunStatus,
    WeightPlacement,
};
use driftlearn::memory::{
    FrameMemory, RegularizerMemory, DEFAULT_FRAME_CAPACITY, DEFAULT_SNAPSHOT_CAPACITY,
};
use driftlearn::metrics::{boundary_f, default_tolerance, jaccard, mean_and_std};
use driftlearn::model::TargetModel;
use driftlearn::numerics::{Grid2D, MaskGrid};
use driftlearn::stream::{
    generate_stream, ChunkBounds, DriftingStreamConfig, Frame, Manifest, ObjectShape, RegimeSpec,
    StreamSpec, SubChunk,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRADIENT_INSTANCES: u64 = 120;
const GRADIENT_REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error, so components that are zero
/// up to rounding are compared absolutely.
const GRADIENT_REL_FLOOR: f64 = 1e-4;
const GRADIENT_EPS: f64 = 1e-5;
const GRADIENT_BUDGET_S: f64 = 30.0;

const SWEEP: [usize; 6] = [1, 2, 4, 6, 8, 10];
const DRIFT_STREAMS: u64 = 5;
const DRIFT_FRAMES: usize = 600;
const DRIFT_SUB_CHUNKS: usize = 6;
const REQUIRED_WINS: usize = 4;
const DRIFT_BUDGET_S: f64 = 15.0 * 60.0;

const STATIONARY_STREAMS: u64 = 5;
const STATIONARY_FRAMES: usize = 300;
const NEUTRALITY_TOL: f64 = 0.01;
const STATIONARY_BUDGET_S: f64 = 5.0 * 60.0;

const METRIC_PAIRS: u64 = 200;
const CURATION_STREAMS: u64 = 20;

fn report_line(criterion: &str, pass: bool, detail: &str) {
    let mut out = std::io::stdout().lock();
    let verdict = if pass { "PASS" } else { "FAIL" };
    writeln!(out, "[{verdict}] {criterion}: {detail}").unwrap();
}

fn drifting_config(seed: u64) -> DriftingStreamConfig {
    DriftingStreamConfig {
        height: 32,
        width: 32,
        frames: DRIFT_FRAMES,
        sub_chunks: DRIFT_SUB_CHUNKS,
        seed,
        min_scale: 3.0,
        max_scale: 6.0,
        max_speed: 0.1,
        ..Default::default()
    }
}

fn materialise(cfg: &DriftingStreamConfig) -> (Vec<Frame>, Manifest) {
    let spec = cfg.build().unwrap();
    let frames = generate_stream(&spec).unwrap();
    let annotated = select_annotation_frames(&spec.bounds(), spec.frame_count()).unwrap();
    (frames, Manifest::from_spec(&spec, annotated))
}

fn cell_config(delta_c: usize, rcl: bool) -> LearnerConfig {
    LearnerConfig {
        delta_c,
        rcl_enabled: rcl,
        ..Default::default()
    }
}

/// Checks the memory bounds after every step of a run.
#[derive(Default)]
struct BoundAudit {
    steps: usize,
    violations: Vec<String>,
}

impl RunObserver for BoundAudit {
    fn on_step(&mut self, frame: usize, memory: &FrameMemory, reg_mem: &RegularizerMemory) {
        self.steps += 1;
        if memory.len() > DEFAULT_FRAME_CAPACITY {
            self.violations
                .push(format!("frame {frame}: {} frame entries", memory.len()));
        }
        if reg_mem.len() > DEFAULT_SNAPSHOT_CAPACITY {
            self.violations
                .push(format!("frame {frame}: {} snapshots", reg_mem.len()));
        }
        if !memory
            .entries()
            .iter()
            .any(|e| e.pinned && e.insertion_step == 0)
        {
            self.violations
                .push(format!("frame {frame}: ground-truth entry missing"));
        }
        if !reg_mem.snapshots().first().is_some_and(|s| s.pinned) {
            self.violations
                .push(format!("frame {frame}: initial snapshot missing"));
        }
    }
}

struct Cell {
    jf: f64,
    /// `None` on single-sub-chunk streams.
    forgetting: Option<f64>,
    frame_ms: f64,
    peak_entries: usize,
    peak_snapshots: usize,
}

fn run_cell(
    frames: &[Frame],
    manifest: &Manifest,
    cfg: &LearnerConfig,
    audit: &mut BoundAudit,
) -> Cell {
    let out = run_sequence(frames, manifest, cfg, audit).unwrap();
    let r = out.report;
    assert_eq!(
        r.status,
        RunStatus::Completed,
        "{} Δ_C={} diverged",
        r.method,
        cfg.delta_c
    );
    Cell {
        jf: r.mean_jf().unwrap(),
        forgetting: r.forgetting.mean_forgetting,
        frame_ms: r.timing.mean_frame_ms,
        peak_entries: r.peak_frame_entries,
        peak_snapshots: r.peak_snapshots,
    }
}

struct SweepResult {
    baseline: Vec<Cell>,
    rcl: Vec<Cell>,
}

impl SweepResult {
    fn jf(cells: &[Cell]) -> (f64, f64) {
        mean_and_std(&cells.iter().map(|c| c.jf).collect::<Vec<_>>()).unwrap()
    }

    fn forgetting(cells: &[Cell]) -> f64 {
        mean_and_std(
            &cells
                .iter()
                .map(|c| c.forgetting.unwrap())
                .collect::<Vec<_>>(),
        )
        .unwrap()
        .0
    }

    fn frame_ms(cells: &[Cell]) -> f64 {
        cells.iter().map(|c| c.frame_ms).sum::<f64>() / cells.len() as f64
    }
}

struct Experiment {
    sweeps: Vec<SweepResult>,
    audit: BoundAudit,
    elapsed_s: f64,
}

fn sweep(frames: &[Frame], manifest: &Manifest, audit: &mut BoundAudit) -> SweepResult {
    let mut result = SweepResult {
        baseline: Vec::new(),
        rcl: Vec::new(),
    };
    // interleaved so slow phases of the machine hit both methods alike
    for &dc in &SWEEP {
        result
            .baseline
            .push(run_cell(frames, manifest, &cell_config(dc, false), audit));
        result
            .rcl
            .push(run_cell(frames, manifest, &cell_config(dc, true), audit));
    }
    result
}

fn drifting_experiment() -> &'static Experiment {
    static CELL: OnceLock<Experiment> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let mut audit = BoundAudit::default();
        let sweeps = (0..DRIFT_STREAMS)
            .map(|seed| {
                let (frames, manifest) = materialise(&drifting_config(seed));
                sweep(&frames, &manifest, &mut audit)
            })
            .collect();
        Experiment {
            sweeps,
            audit,
            elapsed_s: start.elapsed().as_secs_f64(),
        }
    })
}

fn stationary_experiment() -> &'static Experiment {
    static CELL: OnceLock<Experiment> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let mut audit = BoundAudit::default();
        let sweeps = (0..STATIONARY_STREAMS)
            .map(|seed| {
                let cfg = DriftingStreamConfig {
                    frames: STATIONARY_FRAMES,
                    ..drifting_config(100 + seed)
                }
                .stationary();
                let (frames, manifest) = materialise(&cfg);
                sweep(&frames, &manifest, &mut audit)
            })
            .collect();
        Experiment {
            sweeps,
            audit,
            elapsed_s: start.elapsed().as_secs_f64(),
        }
    })
}

fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Grid2D {
    Grid2D::from_vec(
        h,
        w,
        c,
        (0..h * w * c)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> MaskGrid {
    MaskGrid::from_fn(h, w, |_, _| rng.random_bool(p))
}

/// Largest relative error between the analytic gradient and central
/// differences, for the data loss alone and for the RCL objective.
fn gradient_instance(seed: u64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(2..=8);
    let w = rng.random_range(2..=8);
    let c = rng.random_range(1..=8);
    let entries = rng.random_range(1..=4);
    let fill = rng.random_range(0.1..0.6);
    let mut memory = FrameMemory::new(
        random_grid(&mut rng, h, w, c),
        random_mask(&mut rng, h, w, fill),
        0,
        4,
        0.95,
    )
    .unwrap();
    for step in 1..entries {
        memory
            .insert_frame(
                random_grid(&mut rng, h, w, c),
                random_mask(&mut rng, h, w, fill),
                step,
            )
            .unwrap();
    }
    let mut model = TargetModel::new(c, 3, seed).unwrap();
    let theta: Vec<f64> = model
        .params()
        .iter()
        .map(|v| v + rng.random_range(-0.5..0.5))
        .collect();
    model.set_params(&theta).unwrap();
    let k = theta.len();
    let mut reg_mem = RegularizerMemory::new(DEFAULT_SNAPSHOT_CAPACITY).unwrap();
    for j in 0..rng.random_range(1..=6) {
        let anchor = theta
            .iter()
            .map(|v| v + rng.random_range(-0.5..0.5))
            .collect();
        let phi = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        reg_mem.push_snapshot(anchor, phi, j).unwrap();
    }
    let placement = if seed.is_multiple_of(2) {
        WeightPlacement::Outside
    } else {
        WeightPlacement::Inside
    };
    let mut worst: f64 = 0.0;
    for rcl in [false, true] {
        let cfg = LearnerConfig {
            rcl_enabled: rcl,
            weight_placement: placement,
            lambda_wd: rng.random_range(0.0..0.01),
            ..Default::default()
        };
        let step = entries + 2;
        let analytic = objective(&model, &memory, &reg_mem, &cfg, step)
            .unwrap()
            .gradient;
        let eval = |p: &[f64]| {
            let mut m = model.clone();
            m.set_params(p).unwrap();
            objective(&m, &memory, &reg_mem, &cfg, step)
                .unwrap()
                .total()
        };
        for i in 0..k {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[i] += GRADIENT_EPS;
            minus[i] -= GRADIENT_EPS;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * GRADIENT_EPS);
            let denom = analytic[i].abs().max(numeric.abs()).max(GRADIENT_REL_FLOOR);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
    }
    (k, worst)
}

#[test]
fn c1_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut max_k = 0;
    for seed in 0..GRADIENT_INSTANCES {
        let (k, err) = gradient_instance(seed);
        worst = worst.max(err);
        max_k = max_k.max(k);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst < GRADIENT_REL_TOL && elapsed < GRADIENT_BUDGET_S && max_k <= 100;
    report_line(
        "1 gradient correctness",
        pass,
        &format!(
            "{GRADIENT_INSTANCES} instances (data loss and RCL objective), max rel err {worst:.2e} < {GRADIENT_REL_TOL:.0e}, K ≤ {max_k}, {elapsed:.1}s"
        ),
    );
    assert!(pass);
}

#[test]
fn c2_drift_sweep_favours_rcl() {
    let exp = drifting_experiment();
    let mut wins = [0usize; 3];
    let mut lines = Vec::new();
    for (i, s) in exp.sweeps.iter().enumerate() {
        let (bj, bs) = SweepResult::jf(&s.baseline);
        let (rj, rs) = SweepResult::jf(&s.rcl);
        let (bf, rf) = (
            SweepResult::forgetting(&s.baseline),
            SweepResult::forgetting(&s.rcl),
        );
        wins[0] += usize::from(rj >= bj);
        wins[1] += usize::from(rs < bs);
        wins[2] += usize::from(rf < bf);
        lines.push(format!(
            "stream {i}: J&F {bj:.3}±{bs:.3} -> {rj:.3}±{rs:.3}, forgetting {bf:.3} -> {rf:.3}"
        ));
    }
    {
        let mut out = std::io::stdout().lock();
        for l in &lines {
            writeln!(out, "    {l}").unwrap();
        }
    }
    let n = exp.sweeps.len();
    let within = exp.elapsed_s < DRIFT_BUDGET_S;
    let parts = [
        ("2a J&F", wins[0]),
        ("2b sweep std", wins[1]),
        ("2c forgetting", wins[2]),
    ];
    for (name, w) in parts {
        report_line(
            name,
            w >= REQUIRED_WINS,
            &format!("RCL better on {w}/{n} streams (need {REQUIRED_WINS})"),
        );
    }
    report_line(
        "2 runtime",
        within,
        &format!("{:.0}s < {DRIFT_BUDGET_S:.0}s", exp.elapsed_s),
    );
    let pass = within && wins.iter().all(|&w| w >= REQUIRED_WINS);
    report_line(
        "2 directional drift reproduction",
        pass,
        &format!("wins J&F/std/forgetting = {wins:?} of {n}"),
    );
    assert!(pass, "wins {wins:?}");
}

#[test]
fn c3_stationary_streams_are_neutral() {
    let exp = stationary_experiment();
    let mut worst_gap: f64 = 0.0;
    let (mut base_ms, mut rcl_ms) = (0.0, 0.0);
    let mut lowest = f64::INFINITY;
    for s in &exp.sweeps {
        let (b, r) = (SweepResult::jf(&s.baseline).0, SweepResult::jf(&s.rcl).0);
        lowest = lowest.min(b).min(r);
        let gap = (r - b).abs();
        worst_gap = worst_gap.max(gap);
        base_ms += SweepResult::frame_ms(&s.baseline);
        rcl_ms += SweepResult::frame_ms(&s.rcl);
    }
    let n = exp.sweeps.len() as f64;
    let (base_ms, rcl_ms) = (base_ms / n, rcl_ms / n);
    let pass =
        worst_gap <= NEUTRALITY_TOL && rcl_ms >= base_ms && exp.elapsed_s < STATIONARY_BUDGET_S;
    report_line(
        "3 stationary neutrality",
        pass,
        &format!(
            "max |ΔJ&F| {worst_gap:.4} ≤ {NEUTRALITY_TOL} (lowest mean J&F {lowest:.3}), ms/frame baseline {base_ms:.3} vs RCL {rcl_ms:.3}, {:.0}s",
            exp.elapsed_s
        ),
    );
    assert!(pass);
}

#[test]
fn c4_memory_bounds_hold_every_step() {
    let mut violations = Vec::new();
    let mut steps = 0;
    let mut peaks = (0, 0);
    for exp in [drifting_experiment(), stationary_experiment()] {
        violations.extend(exp.audit.violations.iter().cloned());
        steps += exp.audit.steps;
        for s in &exp.sweeps {
            for c in s.baseline.iter().chain(&s.rcl) {
                peaks.0 = peaks.0.max(c.peak_entries);
                peaks.1 = peaks.1.max(c.peak_snapshots);
            }
        }
    }

    // same stream at twice the length stores exactly as much
    let short = drifting_config(0);
    let long = DriftingStreamConfig {
        frames: 2 * DRIFT_FRAMES,
        sub_chunks: 2 * DRIFT_SUB_CHUNKS,
        ..short.clone()
    };
    let mut audit = BoundAudit::default();
    let mut stored = Vec::new();
    for cfg in [&short, &long] {
        let (frames, manifest) = materialise(cfg);
        let c = run_cell(&frames, &manifest, &cell_config(1, true), &mut audit);
        stored.push((c.peak_entries, c.peak_snapshots));
    }
    violations.extend(audit.violations);
    steps += audit.steps;
    let length_free = stored[0] == stored[1];
    let pass = violations.is_empty() && length_free && steps > 0;
    report_line(
        "4 memory bounds",
        pass,
        &format!(
            "{steps} steps checked, {} violations, peak |M| {} ≤ {DEFAULT_FRAME_CAPACITY}, peak |M_R| {} ≤ {DEFAULT_SNAPSHOT_CAPACITY}, stored at {}/{} frames: {:?}/{:?}",
            violations.len(),
            peaks.0,
            peaks.1,
            DRIFT_FRAMES,
            2 * DRIFT_FRAMES,
            stored[0],
            stored[1]
        ),
    );
    assert!(pass, "{violations:?}");
}

fn model_bits(out: &RunOutcome) -> Vec<u64> {
    out.final_model
        .params()
        .iter()
        .map(|v| v.to_bits())
        .collect()
}

#[test]
fn c5_zero_lambda_matches_baseline() {
    let mut checked = 0;
    let mut mismatches = Vec::new();
    for seed in 0..3 {
        let cfg = DriftingStreamConfig {
            frames: 150,
            sub_chunks: 3,
            ..drifting_config(200 + seed)
        };
        let (frames, manifest) = materialise(&cfg);
        for dc in [1, 4] {
            let base = run_sequence(
                &frames,
                &manifest,
                &cell_config(dc, false),
                &mut NoopObserver,
            )
            .unwrap();
            let zero = LearnerConfig {
                lambda_r: 0.0,
                ..cell_config(dc, true)
            };
            let rcl = run_sequence(&frames, &manifest, &zero, &mut NoopObserver).unwrap();
            checked += base.predictions.iter().flatten().count();
            if base.predictions != rcl.predictions || model_bits(&base) != model_bits(&rcl) {
                mismatches.push(format!("seed {seed} Δ_C={dc}"));
            }
        }
    }
    let pass = mismatches.is_empty();
    report_line(
        "5 λ_r = 0 equals baseline",
        pass,
        &format!("3 seeds × Δ_C {{1,4}}, {checked} predicted masks and final parameters bit-identical; mismatches {mismatches:?}"),
    );
    assert!(pass);
}

fn oracle_jaccard(a: &MaskGrid, b: &MaskGrid) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.data().iter().zip(b.data()) {
        inter += usize::from(*x == 1 && *y == 1);
        union += usize::from(*x == 1 || *y == 1);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn oracle_boundary(m: &MaskGrid) -> Vec<(i64, i64)> {
    let (h, w) = (m.height() as i64, m.width() as i64);
    let inside =
        |y: i64, x: i64| y >= 0 && x >= 0 && y < h && x < w && m.get(y as usize, x as usize);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let edge = [(-1, 0), (1, 0), (0, -1), (0, 1)]
                .iter()
                .any(|(dy, dx)| !inside(y + dy, x + dx));
            if inside(y, x) && edge {
                out.push((y, x));
            }
        }
    }
    out
}

fn oracle_boundary_f(pred: &MaskGrid, gt: &MaskGrid, radius: usize) -> f64 {
    let (pb, gb) = (oracle_boundary(pred), oracle_boundary(gt));
    match (pb.is_empty(), gb.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let r2 = (radius * radius) as i64;
    let matched = |from: &[(i64, i64)], to: &[(i64, i64)]| {
        let hits = from
            .iter()
            .filter(|(y, x)| {
                to.iter()
                    .any(|(v, u)| (y - v).pow(2) + (x - u).pow(2) <= r2)
            })
            .count();
        hits as f64 / from.len() as f64
    };
    let precision = matched(&pb, &gb);
    let recall = matched(&gb, &pb);
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[test]
fn c6_metrics_match_brute_force_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    let mut comparisons = 0;
    for i in 0..METRIC_PAIRS {
        // sparse, dense and blob-like masks
        let (a, b) = match i % 3 {
            0 => {
                let p = rng.random_range(0.0..1.0);
                (
                    random_mask(&mut rng, 16, 16, p),
                    random_mask(&mut rng, 16, 16, p),
                )
            }
            1 => (
                random_mask(&mut rng, 16, 16, 0.05),
                random_mask(&mut rng, 16, 16, 0.9),
            ),
            _ => {
                let blob = |rng: &mut ChaCha8Rng| {
                    let (cy, cx, r) = (
                        rng.random_range(0.0..16.0),
                        rng.random_range(0.0..16.0),
                        rng.random_range(1.0..7.0),
                    );
                    MaskGrid::from_fn(16, 16, |y, x| {
                        (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r
                    })
                };
                (blob(&mut rng), blob(&mut rng))
            }
        };
        comparisons += 1;
        if jaccard(&a, &b).unwrap() != oracle_jaccard(&a, &b) {
            mismatches += 1;
        }
        for radius in [None, Some(0), Some(1), Some(2), Some(3)] {
            comparisons += 1;
            let r = radius.unwrap_or_else(|| default_tolerance(16, 16));
            if boundary_f(&a, &b, radius).unwrap() != oracle_boundary_f(&a, &b, r) {
                mismatches += 1;
            }
        }
    }
    let empty = MaskGrid::zeros(16, 16);
    let conventions =
        jaccard(&empty, &empty).unwrap() == 1.0 && boundary_f(&empty, &empty, None).unwrap() == 1.0;
    let mut identity = true;
    for _ in 0..20 {
        let m = random_mask(&mut rng, 16, 16, 0.4);
        identity &= jaccard(&m, &m).unwrap() == 1.0 && boundary_f(&m, &m, None).unwrap() == 1.0;
    }
    let pass = mismatches == 0 && conventions && identity;
    report_line(
        "6 metric oracles",
        pass,
        &format!(
            "{METRIC_PAIRS} pairs, {comparisons} exact comparisons, {mismatches} mismatches; both-empty = 1: {conventions}; pred = gt gives 1: {identity}"
        ),
    );
    assert!(pass);
}

fn regime(fg: f64, bg: f64, channels: usize) -> RegimeSpec {
    RegimeSpec {
        object_shape: ObjectShape::Disc,
        object_scale: 4.0,
        foreground_mean: vec![fg; channels],
        background_mean: vec![bg; channels],
        feature_noise_std: 0.1,
        motion: [0.0, 0.0],
    }
}

/// Stream with random sub-chunk lengths whose level jumps by 4 to 8 noise
/// units' worth of mean at every boundary.
fn jump_stream(seed: u64) -> (Vec<Grid2D>, Vec<ChunkBounds>) {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let mut sub_chunks = Vec::new();
    let (mut start, mut level) = (0, 0.0);
    for _ in 0..rng.random_range(1..=8) {
        let len = rng.random_range(2..=20);
        level += if rng.random_bool(0.5) { 1.0 } else { -1.0 } * rng.random_range(4.0..8.0);
        sub_chunks.push(SubChunk {
            start_frame: start,
            end_frame: start + len - 1,
            regime: regime(level + 1.0, level, 3),
        });
        start += len;
    }
    let spec = StreamSpec {
        height: 16,
        width: 16,
        channels: 3,
        sub_chunks,
        seed,
        ground_truth_frame: 0,
        separable: false,
        fps: None,
    };
    let frames = generate_stream(&spec).unwrap();
    (
        frames.into_iter().map(|f| f.features).collect(),
        spec.bounds(),
    )
}

#[test]
fn c7_curation_recovers_partitions() {
    let mut failures = Vec::new();
    for seed in 0..CURATION_STREAMS {
        let (frames, truth) = jump_stream(seed);
        let found = detect_sub_chunks(&frames, &DriftDetectorConfig::default()).unwrap();
        if found != truth {
            failures.push(format!(
                "stream {seed}: {} vs {} sub-chunks",
                found.len(),
                truth.len()
            ));
        }
    }
    let example =
        select_annotation_frames(&[ChunkBounds::new(0, 9), ChunkBounds::new(10, 19)], 20).unwrap();
    let example_ok = example == vec![0, 4, 10, 14, 19];

    // random partitions, including single-frame sub-chunks
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut uncovered = 0;
    for _ in 0..500 {
        let mut chunks = Vec::new();
        let mut start = 0;
        for _ in 0..rng.random_range(1..=12) {
            let len = rng.random_range(1..=15);
            chunks.push(ChunkBounds::new(start, start + len - 1));
            start += len;
        }
        let picked = select_annotation_frames(&chunks, start).unwrap();
        uncovered += chunks
            .iter()
            .filter(|c| !picked.iter().any(|&f| c.contains(f)))
            .count();
    }
    let pass = failures.is_empty() && example_ok && uncovered == 0;
    report_line(
        "7 curation",
        pass,
        &format!(
            "{CURATION_STREAMS} streams recovered exactly (failures {failures:?}); [0..9],[10..19] -> {example:?}; 500 random partitions, {uncovered} sub-chunks without a frame"
        ),
    );
    assert!(pass);
}

#[test]
fn c8_runs_are_deterministic() {
    let cfg = DriftingStreamConfig {
        frames: 120,
        sub_chunks: 3,
        ..drifting_config(300)
    };
    let (frames, manifest) = materialise(&cfg);
    let mut differing = Vec::new();
    let mut runs = 0;
    for (dc, rcl) in [(1, false), (1, true), (4, true)] {
        let lc = cell_config(dc, rcl);
        let a = run_sequence(&frames, &manifest, &lc, &mut NoopObserver).unwrap();
        // regenerate the stream too: generation is part of the run
        let (frames_b, manifest_b) = materialise(&cfg);
        let b = run_sequence(&frames_b, &manifest_b, &lc, &mut NoopObserver).unwrap();
        runs += 1;
        if a.report.to_json_without_timing().into_bytes()
            != b.report.to_json_without_timing().into_bytes()
        {
            differing.push(format!("{} Δ_C={dc}", a.report.method));
        }
    }
    let pass = differing.is_empty();
    report_line(
        "8 determinism",
        pass,
        &format!("{runs} configurations run twice, report JSON without timing byte-identical; differing {differing:?}"),
    );
    assert!(pass);
}

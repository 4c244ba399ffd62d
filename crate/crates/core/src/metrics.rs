//! DAVIS-style region and boundary scores plus forgetting over sub-chunks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::MaskGrid;

/// One evaluation of one annotated frame.
///
/// `round` orders evaluations in time: 0 for the online pass, `k + 1` for
/// the revisit after sub-chunk `k` finished.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub frame: usize,
    pub sub_chunk: usize,
    #[serde(default)]
    pub round: usize,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "JF")]
    pub jf: f64,
}

impl ScoreRecord {
    pub fn new(frame: usize, sub_chunk: usize, round: usize, j: f64, f: f64) -> Self {
        Self {
            frame,
            sub_chunk,
            round,
            j,
            f,
            jf: (j + f) / 2.0,
        }
    }

    pub fn score(
        pred: &MaskGrid,
        gt: &MaskGrid,
        frame: usize,
        sub_chunk: usize,
        round: usize,
        radius: Option<usize>,
    ) -> Result<Self> {
        let j = jaccard(pred, gt)?;
        let f = boundary_f(pred, gt, radius)?;
        Ok(Self::new(frame, sub_chunk, round, j, f))
    }
}

fn check_dims(pred: &MaskGrid, gt: &MaskGrid) -> Result<()> {
    if !pred.same_shape(gt) {
        return Err(Error::Usage(format!(
            "prediction is {}×{} but ground truth is {}×{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// Intersection over union; 1.0 when both masks are empty.
pub fn jaccard(pred: &MaskGrid, gt: &MaskGrid) -> Result<f64> {
    check_dims(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        inter += usize::from(p & g);
        union += usize::from(p | g);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// DAVIS default tolerance: 0.8% of the image diagonal, rounded up.
pub fn default_tolerance(height: usize, width: usize) -> usize {
    (0.008 * ((height * height + width * width) as f64).sqrt()).ceil() as usize
}

/// Foreground pixels with a 4-neighbour that is background or off-image.
pub fn boundary_pixels(mask: &MaskGrid) -> MaskGrid {
    let (h, w) = (mask.height(), mask.width());
    MaskGrid::from_fn(h, w, |y, x| {
        mask.get(y, x)
            && (y == 0
                || x == 0
                || y + 1 == h
                || x + 1 == w
                || !mask.get(y - 1, x)
                || !mask.get(y + 1, x)
                || !mask.get(y, x - 1)
                || !mask.get(y, x + 1))
    })
}

/// Dilation by a Euclidean disc of the given radius.
fn dilate(mask: &MaskGrid, radius: usize) -> MaskGrid {
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|(dy, dx)| dy * dy + dx * dx <= r * r)
        .collect();
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    let mut out = MaskGrid::zeros(mask.height(), mask.width());
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y as usize, x as usize) {
                continue;
            }
            for (dy, dx) in &offsets {
                let (ny, nx) = (y + dy, x + dx);
                if ny >= 0 && nx >= 0 && ny < h && nx < w {
                    out.set(ny as usize, nx as usize, true);
                }
            }
        }
    }
    out
}

fn matched_fraction(boundary: &MaskGrid, reach: &MaskGrid) -> f64 {
    let total = boundary.foreground_count();
    let hit = boundary
        .data()
        .iter()
        .zip(reach.data())
        .filter(|(&b, &r)| b == 1 && r == 1)
        .count();
    hit as f64 / total as f64
}

/// Boundary F-measure. A boundary pixel matches when it lies within
/// `tolerance_radius` (Euclidean) of the other mask's boundary; `None` uses
/// [`default_tolerance`]. Both masks empty scores 1.0, exactly one empty
/// scores 0.0.
pub fn boundary_f(pred: &MaskGrid, gt: &MaskGrid, tolerance_radius: Option<usize>) -> Result<f64> {
    check_dims(pred, gt)?;
    let radius = tolerance_radius.unwrap_or_else(|| default_tolerance(gt.height(), gt.width()));
    let pb = boundary_pixels(pred);
    let gb = boundary_pixels(gt);
    match (pb.foreground_count(), gb.foreground_count()) {
        (0, 0) => return Ok(1.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let precision = matched_fraction(&pb, &dilate(&gb, radius));
    let recall = matched_fraction(&gb, &dilate(&pb, radius));
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_j: f64,
    pub mean_f: f64,
    pub mean_jf: f64,
    pub count: usize,
}

pub fn aggregate(records: &[ScoreRecord]) -> Result<Aggregate> {
    if records.is_empty() {
        return Err(Error::Usage("cannot aggregate zero score records".into()));
    }
    let n = records.len() as f64;
    Ok(Aggregate {
        mean_j: records.iter().map(|r| r.j).sum::<f64>() / n,
        mean_f: records.iter().map(|r| r.f).sum::<f64>() / n,
        mean_jf: records.iter().map(|r| r.jf).sum::<f64>() / n,
        count: records.len(),
    })
}

/// Mean and population standard deviation, e.g. of per-run means across a
/// Δ_C sweep.
pub fn mean_and_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Usage("cannot summarise an empty sweep".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubChunkForgetting {
    pub sub_chunk: usize,
    pub evaluations: usize,
    pub best_jf: f64,
    pub final_jf: f64,
    pub forgetting: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    pub per_sub_chunk: Vec<SubChunkForgetting>,
    /// Mean over sub-chunks evaluated at least twice; `None` if there are
    /// none.
    pub mean_forgetting: Option<f64>,
}

/// Groups records by sub-chunk and evaluation round; each round's score is
/// the mean JF over that sub-chunk's frames. Forgetting is the best round
/// minus the last round.
pub fn forgetting(records: &[ScoreRecord]) -> ForgettingReport {
    let mut rounds: BTreeMap<usize, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for r in records {
        let slot = rounds
            .entry(r.sub_chunk)
            .or_default()
            .entry(r.round)
            .or_insert((0.0, 0));
        slot.0 += r.jf;
        slot.1 += 1;
    }
    let per_sub_chunk: Vec<SubChunkForgetting> = rounds
        .into_iter()
        .map(|(sub_chunk, by_round)| {
            let series: Vec<f64> = by_round.values().map(|(s, n)| s / *n as f64).collect();
            let best_jf = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let final_jf = *series.last().unwrap();
            SubChunkForgetting {
                sub_chunk,
                evaluations: series.len(),
                best_jf,
                final_jf,
                forgetting: best_jf - final_jf,
            }
        })
        .collect();
    let counted: Vec<f64> = per_sub_chunk
        .iter()
        .filter(|s| s.evaluations >= 2)
        .map(|s| s.forgetting)
        .collect();
    let mean_forgetting =
        (!counted.is_empty()).then(|| counted.iter().sum::<f64>() / counted.len() as f64);
    ForgettingReport {
        per_sub_chunk,
        mean_forgetting,
    }
}

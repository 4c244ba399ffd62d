use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use driftlearn::learner::{RunReport, StreamSummary};
use driftlearn::metrics::mean_and_std;
use serde::Serialize;
use walkdir::WalkDir;

use crate::commands::{read_report, REPORT_FILE};

pub const CSV_COLUMNS: [&str; 9] = [
    "method",
    "mean_J",
    "std_J",
    "mean_F",
    "std_F",
    "mean_JF",
    "std_JF",
    "mean_forgetting",
    "time_per_frame_ms",
];

/// One method within one report set, summarised across its cells.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRow {
    pub method: String,
    pub set: String,
    pub cells: usize,
    pub mean_j: f64,
    pub std_j: f64,
    pub mean_f: f64,
    pub std_f: f64,
    pub mean_jf: f64,
    pub std_jf: f64,
    pub mean_forgetting: Option<f64>,
    pub time_per_frame_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowDifference {
    pub method: String,
    pub sets: [String; 2],
    pub mean_jf: f64,
    pub std_jf: f64,
    pub mean_forgetting: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub stream: StreamSummary,
    pub sweep_delta_c: Vec<usize>,
    pub rows: Vec<MethodRow>,
    /// RCL over baseline time per frame, per set that has both.
    pub timing_ratio: BTreeMap<String, f64>,
    pub differences: Vec<RowDifference>,
}

fn collect_reports(dir: &Path) -> Result<Vec<(PathBuf, RunReport)>> {
    let mut out = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.with_context(|| format!("walking {}", dir.display()))?;
        if entry.file_type().is_file() && entry.file_name() == REPORT_FILE {
            out.push((entry.path().to_path_buf(), read_report(entry.path())?));
        }
    }
    if out.is_empty() {
        bail!("no {REPORT_FILE} found under {}", dir.display());
    }
    Ok(out)
}

fn set_labels(dirs: &[PathBuf]) -> Vec<String> {
    let base: Vec<String> = dirs
        .iter()
        .map(|d| {
            d.file_name().map_or_else(
                || d.display().to_string(),
                |n| n.to_string_lossy().into_owned(),
            )
        })
        .collect();
    base.iter()
        .enumerate()
        .map(|(i, name)| {
            if base.iter().filter(|b| *b == name).count() > 1 {
                format!("{name}#{}", i + 1)
            } else {
                name.clone()
            }
        })
        .collect()
}

fn summarise(method: &str, set: &str, reports: &[(PathBuf, RunReport)]) -> Result<MethodRow> {
    let mut j = Vec::new();
    let mut f = Vec::new();
    let mut jf = Vec::new();
    let mut forgetting = Vec::new();
    let mut timing = Vec::new();
    for (path, r) in reports {
        let s = r.summary.with_context(|| {
            format!(
                "{} has no scores (diverged before the first evaluation frame?)",
                path.display()
            )
        })?;
        j.push(s.mean_j);
        f.push(s.mean_f);
        jf.push(s.mean_jf);
        if let Some(v) = r.forgetting.mean_forgetting {
            forgetting.push(v);
        }
        timing.push(r.timing.mean_frame_ms);
    }
    let (mean_j, std_j) = mean_and_std(&j)?;
    let (mean_f, std_f) = mean_and_std(&f)?;
    let (mean_jf, std_jf) = mean_and_std(&jf)?;
    Ok(MethodRow {
        method: method.to_string(),
        set: set.to_string(),
        cells: reports.len(),
        mean_j,
        std_j,
        mean_f,
        std_f,
        mean_jf,
        std_jf,
        mean_forgetting: mean_and_std(&forgetting).ok().map(|m| m.0),
        time_per_frame_ms: mean_and_std(&timing)?.0,
    })
}

/// Per-method mean and population std of J, F and J&F across the cells of
/// each report set, plus mean forgetting and time per frame.
pub fn cmd_compare(dirs: &[PathBuf]) -> Result<Comparison> {
    if dirs.is_empty() {
        bail!("compare needs at least one report directory");
    }
    let labels = set_labels(dirs);
    let mut stream: Option<(PathBuf, StreamSummary)> = None;
    let mut sweep: Option<Vec<usize>> = None;
    let mut groups: Vec<(String, String, Vec<(PathBuf, RunReport)>)> = Vec::new();
    for (dir, label) in dirs.iter().zip(&labels) {
        let mut by_method: BTreeMap<String, Vec<(PathBuf, RunReport)>> = BTreeMap::new();
        for (path, report) in collect_reports(dir)? {
            match &stream {
                None => stream = Some((path.clone(), report.stream.clone())),
                Some((first, s)) if *s != report.stream => bail!(
                    "{} and {} were run on different streams",
                    first.display(),
                    path.display()
                ),
                Some(_) => {}
            }
            by_method
                .entry(report.method.clone())
                .or_default()
                .push((path, report));
        }
        for (method, reports) in by_method {
            let mut dcs: Vec<usize> = reports.iter().map(|(_, r)| r.config.delta_c).collect();
            dcs.sort_unstable();
            dcs.dedup();
            match &sweep {
                None => sweep = Some(dcs),
                Some(s) if *s != dcs => {
                    bail!("{label}/{method} covers Δ_C {dcs:?} but an earlier set covers {s:?}")
                }
                Some(_) => {}
            }
            groups.push((label.clone(), method, reports));
        }
    }
    if groups.len() < 2 {
        bail!("compare needs at least two report sets (methods or directories)");
    }
    let single_set = dirs.len() == 1;
    let mut rows = Vec::new();
    for (set, method, reports) in &groups {
        let mut row = summarise(method, set, reports)?;
        if !single_set {
            row.method = format!("{set}/{method}");
        }
        rows.push(row);
    }

    let mut timing_ratio = BTreeMap::new();
    for label in &labels {
        let time = |m: &str| {
            groups
                .iter()
                .zip(&rows)
                .find(|((set, method, _), _)| set == label && method == m)
                .map(|(_, row)| row.time_per_frame_ms)
        };
        if let (Some(rcl), Some(base)) = (time("rcl"), time("baseline")) {
            if base > 0.0 {
                timing_ratio.insert(label.clone(), rcl / base);
            }
        }
    }

    let mut differences = Vec::new();
    for a in 0..groups.len() {
        for b in a + 1..groups.len() {
            if groups[a].1 != groups[b].1 || groups[a].0 == groups[b].0 {
                continue;
            }
            let (ra, rb) = (&rows[a], &rows[b]);
            differences.push(RowDifference {
                method: groups[a].1.clone(),
                sets: [groups[a].0.clone(), groups[b].0.clone()],
                mean_jf: rb.mean_jf - ra.mean_jf,
                std_jf: rb.std_jf - ra.std_jf,
                mean_forgetting: ra
                    .mean_forgetting
                    .zip(rb.mean_forgetting)
                    .map(|(x, y)| y - x),
            });
        }
    }

    Ok(Comparison {
        stream: stream.expect("at least one report").1,
        sweep_delta_c: sweep.expect("at least one report"),
        rows,
        timing_ratio,
        differences,
    })
}

/// The comparison table as CSV with the fixed column set.
pub fn comparison_csv(comparison: &Comparison) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for r in &comparison.rows {
        w.write_record([
            r.method.clone(),
            r.mean_j.to_string(),
            r.std_j.to_string(),
            r.mean_f.to_string(),
            r.std_f.to_string(),
            r.mean_jf.to_string(),
            r.std_jf.to_string(),
            r.mean_forgetting
                .map_or_else(String::new, |v| v.to_string()),
            r.time_per_frame_ms.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

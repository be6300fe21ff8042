use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::meta::MetaVariant;
use crate::shadow::SkippedTraining;

/// Five-number summary of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    /// Quartiles by linear interpolation between order statistics.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(BoxStats {
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi || v[lo] == v[hi] {
        v[lo]
    } else {
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    BoxStats::from_values(values).map(|b| b.median)
}

/// Test-set performance of one meta-classifier at one step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub step_size: f64,
    pub variant: MetaVariant,
    pub avg_mse: f64,
    pub kl: BoxStats,
    pub n_train: usize,
    pub n_test: usize,
    /// `(baseline - proposed) / baseline` average MSE at this step size.
    pub rel_improvement: f64,
    pub wall_time_secs: f64,
}

/// True and estimated distributions of every test record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scatter {
    pub step_size: f64,
    pub variant: MetaVariant,
    pub true_p: Vec<Vec<f64>>,
    pub est_p: Vec<Vec<f64>>,
}

/// Mean test KL per `(p_1, p_2)` cell, for simplex heatmaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub step_size: f64,
    pub variant: MetaVariant,
    pub cells: Vec<HeatmapCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub p1: f64,
    pub p2: f64,
    pub mean_kl: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OversampleCase {
    pub p: Vec<f64>,
    pub kl_unaware: f64,
    pub kl_aware: f64,
    /// KL against the balanced distribution the countermeasure induces.
    pub kl_balanced: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OversampleReport {
    pub cases: Vec<OversampleCase>,
    pub unaware: BoxStats,
    pub aware: BoxStats,
    pub balanced: BoxStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedLog {
    pub master: u64,
    pub data: u64,
    pub aux: u64,
    pub shadows: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oversampled_shadows: Option<u64>,
    /// `(variant, step size, seed)` of every trained meta-classifier.
    pub metas: Vec<(MetaVariant, f64, u64)>,
}

/// Everything a run produced; serialised verbatim as `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub arch: String,
    pub seeds: SeedLog,
    pub rows: Vec<ReportRow>,
    pub scatter: Vec<Scatter>,
    #[serde(default)]
    pub heatmaps: Vec<Heatmap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oversample: Option<OversampleReport>,
    pub skipped: Vec<SkippedTraining>,
    pub wall_time_secs: f64,
}

fn step_label(step: f64) -> String {
    format!("{step}")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub const SUMMARY_COLUMNS: [&str; 10] = [
    "step_size",
    "variant",
    "avg_mse",
    "kl_min",
    "kl_q1",
    "kl_median",
    "kl_q3",
    "kl_max",
    "n_test",
    "rel_improvement",
];

fn box_fields(b: &BoxStats) -> [String; 5] {
    [fmt(b.min), fmt(b.q1), fmt(b.median), fmt(b.q3), fmt(b.max)]
}

/// Writes the CSV files and `run.json` into `dir`, returning the paths written.
///
/// CSVs contain no timing information, so identical runs give identical bytes.
pub fn emit_report(report: &Report, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    if !report.rows.is_empty() {
        let path = dir.join("summary.csv");
        let header: Vec<String> = SUMMARY_COLUMNS.iter().map(|s| s.to_string()).collect();
        let rows = report.rows.iter().map(|r| {
            let mut row = vec![fmt(r.step_size), r.variant.name().to_string(), fmt(r.avg_mse)];
            row.extend(box_fields(&r.kl));
            row.push(r.n_test.to_string());
            row.push(fmt(r.rel_improvement));
            row
        });
        write_csv(&path, &header, rows)?;
        written.push(path);
    }

    for s in &report.scatter {
        let path = dir.join(format!("scatter_{}_{}.csv", s.variant.name(), step_label(s.step_size)));
        let classes = s.true_p.first().map(Vec::len).unwrap_or(0);
        let header: Vec<String> = (1..=classes)
            .map(|c| format!("true_p{c}"))
            .chain((1..=classes).map(|c| format!("est_p{c}")))
            .collect();
        let rows = s
            .true_p
            .iter()
            .zip(&s.est_p)
            .map(|(t, e)| t.iter().chain(e).map(|&v| fmt(v)).collect());
        write_csv(&path, &header, rows)?;
        written.push(path);
    }

    for h in &report.heatmaps {
        let path = dir.join(format!("heatmap_{}_{}.csv", h.variant.name(), step_label(h.step_size)));
        let header = ["p1", "p2", "mean_kl", "n"].map(String::from);
        let rows = h
            .cells
            .iter()
            .map(|c| vec![fmt(c.p1), fmt(c.p2), fmt(c.mean_kl), c.n.to_string()]);
        write_csv(&path, &header, rows)?;
        written.push(path);
    }

    if let Some(o) = &report.oversample {
        let path = dir.join("oversample.csv");
        let header = ["true_p1", "kl_unaware", "kl_aware", "kl_balanced"].map(String::from);
        let rows = o
            .cases
            .iter()
            .map(|c| vec![fmt(c.p[0]), fmt(c.kl_unaware), fmt(c.kl_aware), fmt(c.kl_balanced)]);
        write_csv(&path, &header, rows)?;
        written.push(path);

        let path = dir.join("oversample_summary.csv");
        let header = ["meta", "kl_min", "kl_q1", "kl_median", "kl_q3", "kl_max", "n_test"].map(String::from);
        let rows = [("unaware", &o.unaware), ("aware", &o.aware), ("balanced", &o.balanced)]
            .into_iter()
            .map(|(name, b)| {
                let mut row = vec![name.to_string()];
                row.extend(box_fields(b));
                row.push(o.cases.len().to_string());
                row
            });
        write_csv(&path, &header, rows)?;
        written.push(path);
    }

    let path = dir.join("run.json");
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

pub fn load_report(path: impl AsRef<Path>) -> Result<Report> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

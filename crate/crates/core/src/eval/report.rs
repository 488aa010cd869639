use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentReport;
use crate::cli::write_atomic;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionError {
    pub x_mm: f64,
    pub y_mm: f64,
    pub pred_x_mm: f64,
    pub pred_y_mm: f64,
    pub err_mm: f64,
    pub err_x_mm: f64,
    pub err_y_mm: f64,
}

impl PositionError {
    pub fn new(x_mm: f64, y_mm: f64, pred_x_mm: f64, pred_y_mm: f64) -> Self {
        let err_x_mm = (pred_x_mm - x_mm).abs();
        let err_y_mm = (pred_y_mm - y_mm).abs();
        Self {
            x_mm,
            y_mm,
            pred_x_mm,
            pred_y_mm,
            err_mm: err_x_mm.hypot(err_y_mm),
            err_x_mm,
            err_y_mm,
        }
    }
}

/// Euclidean error statistics; all zero when `n == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub mean_mm: f64,
    pub max_mm: f64,
    /// Nearest-rank 95th percentile.
    pub p95_mm: f64,
    pub mean_x_mm: f64,
    pub mean_y_mm: f64,
    pub n: usize,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

impl ErrorSummary {
    pub fn from_rows(rows: &[PositionError]) -> Self {
        let mut errs: Vec<f64> = rows.iter().map(|r| r.err_mm).collect();
        errs.sort_by(f64::total_cmp);
        Self {
            mean_mm: mean(errs.iter().copied()),
            max_mm: errs.last().copied().unwrap_or(0.0),
            p95_mm: percentile(&errs, 95.0),
            mean_x_mm: mean(rows.iter().map(|r| r.err_x_mm)),
            mean_y_mm: mean(rows.iter().map(|r| r.err_y_mm)),
            n: rows.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseStats {
    pub mean: f64,
    pub max: f64,
    pub n: usize,
}

impl MseStats {
    pub fn from_values(values: &[f64]) -> Self {
        Self {
            mean: mean(values.iter().copied()),
            max: values.iter().copied().fold(0.0, f64::max),
            n: values.len(),
        }
    }
}

/// What a report was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec_sha256: String,
    pub seed: u64,
    /// `(stage, sha256 of parameter bytes)` for each checkpoint used.
    pub checkpoints: Vec<(String, String)>,
}

#[derive(Serialize)]
struct ErrorRow<'a> {
    experiment_id: &'a str,
    x_mm: f64,
    y_mm: f64,
    pred_x_mm: f64,
    pred_y_mm: f64,
    err_mm: f64,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    experiment_id: &'a str,
    mean_mm: f64,
    max_mm: f64,
    p95_mm: f64,
    n: usize,
}

const ERROR_HEADER: [&str; 6] = ["experiment_id", "x_mm", "y_mm", "pred_x_mm", "pred_y_mm", "err_mm"];
const SUMMARY_HEADER: [&str; 5] = ["experiment_id", "mean_mm", "max_mm", "p95_mm", "n"];

fn csv_bytes<'a>(header: &[&str], rows: impl Iterator<Item = Result<Vec<u8>>> + 'a) -> Result<Vec<u8>> {
    let mut out = header.join(",").into_bytes();
    out.push(b'\n');
    for row in rows {
        out.extend(row?);
    }
    Ok(out)
}

fn record<T: Serialize>(row: &T) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize(row).map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))
}

fn error_rows(r: &ExperimentReport) -> impl Iterator<Item = Result<Vec<u8>>> + '_ {
    r.rows.iter().map(move |p| {
        record(&ErrorRow {
            experiment_id: &r.spec.id,
            x_mm: p.x_mm,
            y_mm: p.y_mm,
            pred_x_mm: p.pred_x_mm,
            pred_y_mm: p.pred_y_mm,
            err_mm: p.err_mm,
        })
    })
}

/// The summary CSV line for one report, without the trailing newline.
pub fn summary_row(r: &ExperimentReport) -> Result<String> {
    let bytes = record(&SummaryRow {
        experiment_id: &r.spec.id,
        mean_mm: r.summary.mean_mm,
        max_mm: r.summary.max_mm,
        p95_mm: r.summary.p95_mm,
        n: r.summary.n,
    })?;
    Ok(String::from_utf8_lossy(&bytes).trim_end().to_string())
}

/// Writes `errors.csv` (every position of every report), `summary.csv`
/// (one row per report), one `<id>.csv` per report, and `reports.json`.
/// Returns the written paths.
pub fn emit_report(reports: &[ExperimentReport], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
        let path = dir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
        Ok(())
    };
    put("errors.csv".into(), csv_bytes(&ERROR_HEADER, reports.iter().flat_map(error_rows))?)?;
    let summary = reports.iter().map(|r| summary_row(r).map(|s| format!("{s}\n").into_bytes()));
    put("summary.csv".into(), csv_bytes(&SUMMARY_HEADER, summary)?)?;
    for r in reports {
        put(format!("{}.csv", r.spec.id), csv_bytes(&ERROR_HEADER, error_rows(r))?)?;
    }
    put("reports.json".into(), serde_json::to_vec_pretty(reports)?)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euclidean_and_axis_errors() {
        let e = PositionError::new(10.0, 20.0, 13.0, 16.0);
        assert_eq!((e.err_x_mm, e.err_y_mm, e.err_mm), (3.0, 4.0, 5.0));
    }

    #[test]
    fn summary_statistics() {
        let rows: Vec<_> = (1..=20).map(|i| PositionError::new(0.0, 0.0, i as f64, 0.0)).collect();
        let s = ErrorSummary::from_rows(&rows);
        assert_eq!(s.mean_mm, 10.5);
        assert_eq!(s.max_mm, 20.0);
        assert_eq!(s.p95_mm, 19.0);
        assert_eq!(s.mean_y_mm, 0.0);
        assert_eq!(s.n, 20);
        let empty = ErrorSummary::from_rows(&[]);
        assert_eq!((empty.mean_mm, empty.n), (0.0, 0));
    }

    #[test]
    fn empty_report_list_gives_header_only() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&[], dir.path()).unwrap();
        let errors = std::fs::read_to_string(dir.path().join("errors.csv")).unwrap();
        assert_eq!(errors, "experiment_id,x_mm,y_mm,pred_x_mm,pred_y_mm,err_mm\n");
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary, "experiment_id,mean_mm,max_mm,p95_mm,n\n");
    }
}

//! Side-by-side summary of finished runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cbo_core::diagnostics::{fit_points, value_window};

use crate::csvio::{fmt, read_table, write_csv};
use crate::error::{HarnessError, Result};
use crate::experiment::FIT_WINDOW;

/// Default W₂ level for time-to-threshold.
pub const DEFAULT_THRESHOLD: f64 = 1e-2;

/// `key=value` pairs of a run's manifest (first occurrence wins).
pub fn read_manifest(dir: &Path) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    if let Ok(text) = fs::read_to_string(dir.join("manifest.txt")) {
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                if !k.contains(' ') {
                    map.entry(k.to_string()).or_insert_with(|| v.to_string());
                }
            }
        }
    }
    map
}

/// Human label such as `chi p=2` or `cbo_heaviside eps=0.01`.
pub fn run_label(dir: &Path) -> String {
    let m = read_manifest(dir);
    match m.get("scheme").map(String::as_str) {
        Some("chi") | Some("porous") => {
            format!(
                "{} p={}",
                m["scheme"],
                m.get("p").map_or("?", String::as_str)
            )
        }
        Some("cbo_heaviside") => format!(
            "cbo_heaviside eps={}",
            m.get("heaviside_eps").map_or("?", String::as_str)
        ),
        Some(s) => s.to_string(),
        None => dir.file_name().map_or_else(
            || dir.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        ),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub run: PathBuf,
    pub label: String,
    /// First `t` with `w2_mean < threshold`.
    pub time_to_threshold: Option<f64>,
    pub rate_hat: Option<f64>,
    pub r_squared: Option<f64>,
    pub final_w2: f64,
}

/// Summarises each run and writes `comparison.csv` to `out`.
pub fn compare_runs(run_dirs: &[PathBuf], threshold: f64, out: &Path) -> Result<Vec<CompareRow>> {
    if run_dirs.len() < 2 {
        return Err(HarnessError::Usage(
            "compare needs at least two run directories".into(),
        ));
    }
    let mut rows = Vec::new();
    for dir in run_dirs {
        let path = dir.join("series.csv");
        let table = read_table(&path)?;
        let (Some(t), Some(w)) = (table.column("t"), table.column("w2_mean")) else {
            return Err(HarnessError::data(&path, "series.csv lacks t or w2_mean"));
        };
        let pts: Vec<(f64, f64)> = t.into_iter().zip(w).collect();
        let time_to_threshold = pts.iter().find(|p| p.1 < threshold).map(|p| p.0);
        let fit = value_window(&pts, FIT_WINDOW.0, FIT_WINDOW.1).and_then(|win| {
            let inside: Vec<_> = pts
                .iter()
                .copied()
                .filter(|p| p.0 >= win.0 && p.0 <= win.1 && p.1 > 0.0)
                .collect();
            fit_points(&inside, None).ok()
        });
        rows.push(CompareRow {
            run: dir.clone(),
            label: run_label(dir),
            time_to_threshold,
            rate_hat: fit.map(|f| f.rate_hat),
            r_squared: fit.map(|f| f.r_squared),
            final_w2: pts.last().map_or(f64::NAN, |p| p.1),
        });
    }
    let header = [
        "run",
        "label",
        "threshold",
        "time_to_threshold",
        "rate_hat",
        "r_squared",
        "final_w2",
    ]
    .map(String::from);
    let bytes = write_csv(
        &header,
        rows.iter().map(|r| {
            vec![
                r.run.display().to_string(),
                r.label.clone(),
                fmt(threshold),
                r.time_to_threshold.map_or("not reached".into(), fmt),
                r.rate_hat.map_or(String::new(), fmt),
                r.r_squared.map_or(String::new(), fmt),
                fmt(r.final_w2),
            ]
        }),
    )?;
    fs::write(out, bytes).map_err(|e| HarnessError::io(out, e))?;
    Ok(rows)
}

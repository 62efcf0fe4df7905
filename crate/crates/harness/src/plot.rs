//! Static SVG figures written straight from run directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::compare::run_label;
use crate::csvio::{fmt, read_table, Table};
use crate::error::{HarnessError, Result};

/// Values at or below this are drawn on the floor of log plots.
pub const PLOT_FLOOR: f64 = 1e-16;

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 70.0;
const MR: f64 = 20.0;
const MT: f64 = 30.0;
const MB: f64 = 50.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

struct Curve {
    label: String,
    points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo <= 0.0 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Renders curves; `log_y` plots log10 of the values, clipping at
/// [`PLOT_FLOOR`].
fn render(title: &str, x_label: &str, y_label: &str, curves: &[Curve], log_y: bool) -> String {
    let mut clipped = false;
    let ty = |v: f64, clipped: &mut bool| {
        if log_y {
            if v.is_nan() || v <= PLOT_FLOOR {
                *clipped = true;
                PLOT_FLOOR.log10()
            } else {
                v.log10()
            }
        } else {
            v
        }
    };
    let drawn: Vec<Vec<(f64, f64)>> = curves
        .iter()
        .map(|c| {
            c.points
                .iter()
                .filter(|p| p.0.is_finite() && !p.1.is_nan())
                .map(|&(x, y)| (x, ty(y, &mut clipped)))
                .collect()
        })
        .collect();
    let (x0, x1) = range(drawn.iter().flatten().map(|p| p.0));
    let (mut y0, mut y1) = range(drawn.iter().flatten().map(|p| p.1));
    if log_y {
        y0 = y0.floor();
        y1 = y1.ceil().max(y0 + 1.0);
    }
    let px = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{ML}" y="{MT}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - ML - MR,
        H - MT - MB
    );
    // y ticks
    if log_y {
        let mut e = y0 as i64;
        let step = (((y1 - y0) / 8.0).ceil() as i64).max(1);
        while e as f64 <= y1 {
            let y = py(e as f64);
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{y:.2}" x2="{ML}" y2="{y:.2}" stroke="black"/>"#,
                ML - 4.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.2}" text-anchor="end">1e{e}</text>"#,
                ML - 6.0,
                y + 4.0
            );
            e += step;
        }
    } else {
        for i in 0..=4 {
            let v = y0 + (y1 - y0) * i as f64 / 4.0;
            let y = py(v);
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{y:.2}" x2="{ML}" y2="{y:.2}" stroke="black"/>"#,
                ML - 4.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
                ML - 6.0,
                y + 4.0
            );
        }
    }
    for i in 0..=4 {
        let v = x0 + (x1 - x0) * i as f64 / 4.0;
        let x = px(v);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#,
            H - MB,
            H - MB + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">{v:.3}</text>"#,
            H - MB + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (ML + W - MR) / 2.0,
        H - 8.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0,
        escape(y_label)
    );

    for (i, (curve, pts)) in curves.iter().zip(&drawn).enumerate() {
        let color = COLORS[i % COLORS.len()];
        // raw values exactly as in the source CSV
        let _ = write!(
            s,
            r#"<metadata class="data" data-label="{}">"#,
            escape(&curve.label)
        );
        for (x, y) in &curve.points {
            let _ = write!(s, "{},{};", fmt(*x), fmt(*y));
        }
        let _ = writeln!(s, "</metadata>");
        if pts.len() == 1 {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px(pts[0].0),
                py(pts[0].1)
            );
        } else if !pts.is_empty() {
            let path: Vec<String> = pts
                .iter()
                .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
        }
        let ly = MT + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            W - MR - 170.0,
            W - MR - 150.0,
            W - MR - 145.0,
            ly + 4.0,
            escape(&curve.label)
        );
    }
    if clipped {
        let ly = MT + 16.0 + 16.0 * curves.len() as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-style="italic">values ≤ 1e-16 drawn at 1e-16</text>"#,
            W - MR - 170.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn load_series(dir: &Path) -> Result<Table> {
    let path = dir.join("series.csv");
    if !path.exists() {
        return Err(HarnessError::data(&path, "missing series.csv"));
    }
    let t = read_table(&path)?;
    if t.column("t").is_none() || t.column("w2_mean").is_none() {
        return Err(HarnessError::data(&path, "series.csv lacks t or w2_mean"));
    }
    if t.rows.is_empty() {
        return Err(HarnessError::data(&path, "series.csv has no rows"));
    }
    Ok(t)
}

fn w2_curve(dir: &Path, label: String) -> Result<Curve> {
    let t = load_series(dir)?;
    let ts = t.column("t").expect("checked");
    let w = t.column("w2_mean").expect("checked");
    Ok(Curve {
        label,
        points: ts.into_iter().zip(w).collect(),
    })
}

fn write(path: PathBuf, text: String) -> Result<PathBuf> {
    fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}

/// Grid snapshot files `chi_t<step>.csv` in step order.
pub fn grid_files(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))? {
        let entry = entry.map_err(|e| HarnessError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(step) = name
            .strip_prefix("chi_t")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            out.push((step, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

/// Writes `error_curve.svg` and, when grid snapshots exist,
/// `chi_progression.svg` into `run_dir`.
pub fn render_plots(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let label = run_label(run_dir);
    let curve = w2_curve(run_dir, label.clone())?;
    let mut written = vec![write(
        run_dir.join("error_curve.svg"),
        render(
            &format!("W2 error: {label}"),
            "t",
            "W2 to minimizer",
            &[curve],
            true,
        ),
    )?];
    let grids = grid_files(run_dir)?;
    if !grids.is_empty() {
        let mut curves = Vec::new();
        for (step, path) in grids {
            let t = read_table(&path)?;
            let (Some(eta), Some(chi)) = (t.column("eta"), t.column("chi")) else {
                return Err(HarnessError::data(&path, "expected eta,chi columns"));
            };
            curves.push(Curve {
                label: format!("step {step}"),
                points: eta.into_iter().zip(chi).collect(),
            });
        }
        written.push(write(
            run_dir.join("chi_progression.svg"),
            render("quantile function over time", "eta", "chi", &curves, false),
        )?);
    }
    Ok(written)
}

/// Overlays the error curves of several runs, labelled by scheme.
pub fn render_overlay(run_dirs: &[PathBuf], out: &Path) -> Result<PathBuf> {
    let curves = run_dirs
        .iter()
        .map(|d| w2_curve(d, run_label(d)))
        .collect::<Result<Vec<_>>>()?;
    write(
        out.to_path_buf(),
        render("W2 error comparison", "t", "W2 to minimizer", &curves, true),
    )
}

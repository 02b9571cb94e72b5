//! SVG line plots of metrics aggregated across seeds: the IQM at each
//! update with a shaded bootstrap band.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};
use crate::metrics::{read_metrics, MetricsRow, RowKind, METRICS_HEADER};
use crate::stats::{bootstrap_iqm_ci, iqm, BOOTSTRAP_RESAMPLES};

pub const PLOT_SEED: u64 = 0;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

/// Per-update aggregate of one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub update: usize,
    pub iqm: f64,
    pub low: f64,
    pub high: f64,
    pub seeds: usize,
}

/// Aggregates `column` over runs, using `train` rows except for the
/// win-rate columns which only eval rows carry.
pub fn aggregate(runs: &[Vec<MetricsRow>], column: &str) -> Result<Vec<CurvePoint>> {
    let mut by_update: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for run in runs {
        for row in run {
            if let Some(v) = row.get(column).filter(|v| v.is_finite()) {
                if row.kind == RowKind::Train || column.starts_with("win_") {
                    by_update.entry(row.update).or_default().push(v);
                }
            }
        }
    }
    by_update
        .into_iter()
        .map(|(update, vals)| {
            let (low, high) = bootstrap_iqm_ci(&vals, BOOTSTRAP_RESAMPLES, PLOT_SEED)?;
            Ok(CurvePoint {
                update,
                iqm: iqm(&vals)?,
                low,
                high,
                seeds: vals.len(),
            })
        })
        .collect()
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders one curve as a standalone SVG document.
pub fn render_svg(title: &str, points: &[CurvePoint]) -> String {
    let (x0, x1) = match (points.first(), points.last()) {
        (Some(a), Some(b)) => (a.update as f64, (b.update as f64).max(a.update as f64 + 1.0)),
        _ => (0.0, 1.0),
    };
    let mut y0 = points.iter().map(|p| p.low).fold(f64::INFINITY, f64::min);
    let mut y1 = points.iter().map(|p| p.high).fold(f64::NEG_INFINITY, f64::max);
    if !y0.is_finite() || !y1.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        esc(title)
    );
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#);
    for (v, y) in [(y0, b), (y1, t)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            l - 6.0,
            y + 4.0,
            fmt_tick(v)
        );
    }
    for (v, x) in [(x0, l), (x1, r)] {
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
            b + 18.0,
            fmt_tick(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">update</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );

    let band = points.iter().any(|p| p.high > p.low);
    if band {
        let mut d = String::new();
        for (i, p) in points.iter().enumerate() {
            let _ = write!(
                d,
                "{}{:.2} {:.2} ",
                if i == 0 { "M" } else { "L" },
                px(p.update as f64),
                py(p.high)
            );
        }
        for p in points.iter().rev() {
            let _ = write!(d, "L{:.2} {:.2} ", px(p.update as f64), py(p.low));
        }
        let _ = writeln!(s, r#"<path d="{}Z" fill="steelblue" fill-opacity="0.25" stroke="none"/>"#, d);
    }
    if points.len() == 1 {
        let p = &points[0];
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#,
            px(p.update as f64),
            py(p.iqm)
        );
    } else if !points.is_empty() {
        let pts: Vec<String> = points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.update as f64), py(p.iqm)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
            pts.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-3) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Reads every log matching `pattern` and writes one `<metric>.svg` per
/// metric with data into `out_dir`. Returns the written paths.
pub fn emit_plots(pattern: &str, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| HarnessError::config(format!("bad glob `{pattern}`: {e}")))?
        .filter_map(std::result::Result::ok)
        .collect();
    if paths.is_empty() {
        return Err(HarnessError::config(format!("no metrics files match `{pattern}`")));
    }
    let runs = paths.iter().map(|p| read_metrics(p)).collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for column in &METRICS_HEADER[3..] {
        let points = aggregate(&runs, column)?;
        if points.is_empty() {
            continue;
        }
        let title = format!("{column} (IQM over {} runs, 95% bootstrap band)", runs.len());
        let path = out_dir.join(format!("{column}.svg"));
        fs::write(&path, render_svg(&title, &points))?;
        written.push(path);
    }
    Ok(written)
}

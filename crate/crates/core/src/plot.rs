//! SVG rendering of run artifacts: accuracy curve, confusion heatmap and
//! gradient-ledger timeline. Everything is read back from the CSV files in
//! a run directory, so plots can be regenerated without rerunning.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::expcli::{read_confusion, read_curve, read_ledger, ConfusionRow};
use crate::objective::GradientLedger;
use crate::trainer::CurvePoint;
use crate::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

pub const CURVE_FILE: &str = "curve.svg";
pub const CONFUSION_FILE: &str = "confusion.svg";
pub const LEDGER_FILE: &str = "ledger.svg";

fn open(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
}

fn color(i: usize, n: usize) -> String {
    let hue = 360.0 * i as f64 / n.max(1) as f64;
    format!("hsl({hue:.0},65%,45%)")
}

/// Maps `v` in `[lo, hi]` to `[a, b]`; a degenerate range maps to the midpoint.
fn scale(v: f64, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    if hi > lo {
        a + (v - lo) / (hi - lo) * (b - a)
    } else {
        (a + b) / 2.0
    }
}

fn axes(out: &mut String, x0: f64, y0: f64, x1: f64, y1: f64) {
    let _ = writeln!(
        out,
        r#"<path d="M{x0},{y0} V{y1} H{x1}" fill="none" stroke="black"/>"#
    );
}

/// Accuracy against samples seen, one polyline vertex per curve point.
pub fn curve_svg(points: &[CurvePoint]) -> Result<String> {
    if points.is_empty() {
        return Err(Error::EmptyCurve);
    }
    let max_x = points.iter().map(|p| p.samples_seen).max().unwrap_or(0) as f64;
    let (x0, x1) = (MARGIN, WIDTH - MARGIN / 2.0);
    let (y_top, y_bot) = (MARGIN / 2.0, HEIGHT - MARGIN);
    let mut out = String::new();
    open(&mut out, WIDTH, HEIGHT);
    axes(&mut out, x0, y_top, x1, y_bot);
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = scale(tick, 0.0, 1.0, y_bot, y_top);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{y}" text-anchor="end" dominant-baseline="middle">{tick:.2}</text>"#,
            x0 - 4.0
        );
    }
    let vertices: Vec<String> = points
        .iter()
        .map(|p| {
            let x = scale(p.samples_seen as f64, 0.0, max_x, x0, x1);
            let y = scale(p.accuracy, 0.0, 1.0, y_bot, y_top);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline class="curve" fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        vertices.join(" ")
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">samples seen</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">accuracy</text>"#,
        (y_top + y_bot) / 2.0,
        (y_top + y_bot) / 2.0
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Row-normalized heatmap. Rows and columns follow the CSV order, which is
/// the order classes first appeared in the stream; axis labels carry the
/// `b`/`d` role tag.
pub fn confusion_svg(rows: &[ConfusionRow]) -> String {
    let n = rows.len();
    let cell = if n == 0 { 0.0 } else { (400.0 / n as f64).clamp(8.0, 28.0) };
    let left = 64.0;
    let top = 24.0;
    let w = left + cell * n as f64 + 16.0;
    let h = top + cell * n as f64 + 48.0;
    let mut out = String::new();
    open(&mut out, w, h);
    for (i, (class, role, _, counts)) in rows.iter().enumerate() {
        let total: u64 = counts.iter().sum();
        let y = top + cell * i as f64;
        let _ = writeln!(
            out,
            r#"<text class="row-label" x="{}" y="{}" text-anchor="end" dominant-baseline="middle">{class}{role}</text>"#,
            left - 4.0,
            y + cell / 2.0
        );
        for (j, &k) in counts.iter().enumerate() {
            let frac = if total == 0 { 0.0 } else { k as f64 / total as f64 };
            let shade = (255.0 * (1.0 - frac)).round() as u8;
            let _ = writeln!(
                out,
                r#"<rect class="cell" x="{:.2}" y="{y:.2}" width="{cell:.2}" height="{cell:.2}" fill="rgb({shade},{shade},255)"><title>{class} -> {}: {k}</title></rect>"#,
                left + cell * j as f64,
                rows.get(j).map_or(String::from("?"), |r| r.0.to_string())
            );
        }
    }
    for (j, (class, role, _, _)) in rows.iter().enumerate() {
        let x = left + cell * j as f64 + cell / 2.0;
        let y = top + cell * n as f64 + 6.0;
        let _ = writeln!(
            out,
            r#"<text class="col-label" x="{x:.2}" y="{y:.2}" transform="rotate(90 {x:.2} {y:.2})">{class}{role}</text>"#
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Two stacked panels sharing the step axis: positive-sample gradient
/// norms on top, negative-sample norms below. Each class gets one colour,
/// assigned in occurrence order. Asymmetric negatives are drawn dashed and
/// left out entirely when the ledger holds none.
pub fn ledger_svg(ledger: &GradientLedger) -> String {
    let panel_h = (HEIGHT - MARGIN * 1.5) / 2.0;
    let (x0, x1) = (MARGIN, WIDTH - MARGIN / 2.0);
    let max_step = ledger.entries.iter().map(|e| e.step).max().unwrap_or(0) as f64;
    let max_pos = ledger.entries.iter().map(|e| e.positive).fold(0.0, f64::max);
    let max_neg = ledger
        .entries
        .iter()
        .map(|e| e.symmetric.max(e.asymmetric))
        .fold(0.0, f64::max);
    let has_asym = ledger.entries.iter().any(|e| e.asymmetric != 0.0);
    let n = ledger.order.len();

    let mut out = String::new();
    open(&mut out, WIDTH, HEIGHT);
    let panels = [("positive", MARGIN / 2.0, max_pos), ("negative", MARGIN / 2.0 + panel_h + MARGIN / 2.0, max_neg)];
    for (name, top, _) in panels {
        axes(&mut out, x0, top, x1, top + panel_h);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{name}</text>"#, x0 + 4.0, top + 10.0);
    }

    let mut series = vec![("positive", 0usize, panels[0].1, max_pos), ("symmetric", 1, panels[1].1, max_neg)];
    if has_asym {
        series.push(("asymmetric", 1, panels[1].1, max_neg));
    }
    for (ci, class) in ledger.order.iter().enumerate() {
        let stroke = color(ci, n);
        for &(bucket, _, top, max) in &series {
            let pts: Vec<String> = ledger
                .entries
                .iter()
                .filter(|e| e.class == *class)
                .map(|e| {
                    let v = match bucket {
                        "positive" => e.positive,
                        "symmetric" => e.symmetric,
                        _ => e.asymmetric,
                    };
                    let x = scale(e.step as f64, 0.0, max_step, x0, x1);
                    let y = scale(v, 0.0, max, top + panel_h, top);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            if pts.is_empty() {
                continue;
            }
            let dash = if bucket == "asymmetric" { r#" stroke-dasharray="4 2""# } else { "" };
            let _ = writeln!(
                out,
                r#"<polyline class="series {bucket}" data-class="{class}" fill="none" stroke="{stroke}" stroke-width="1"{dash} points="{}"/>"#,
                pts.join(" ")
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">step</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 6.0
    );
    out.push_str("</svg>\n");
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Renders all three plots for one run directory and returns their paths.
pub fn plot_run(dir: &Path) -> Result<Vec<PathBuf>> {
    let curve = read_curve(dir)?;
    let confusion = read_confusion(dir)?;
    let ledger = read_ledger(dir)?;
    let files = vec![dir.join(CURVE_FILE), dir.join(CONFUSION_FILE), dir.join(LEDGER_FILE)];
    write(&files[0], &curve_svg(&curve)?)?;
    write(&files[1], &confusion_svg(&confusion))?;
    write(&files[2], &ledger_svg(&ledger))?;
    Ok(files)
}

/// Plots `dir` itself if it is a run directory, otherwise every run
/// directory found below it.
pub fn plot_tree(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join("metrics.json").is_file() {
        return plot_run(dir);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    let mut out = Vec::new();
    for d in subdirs {
        out.extend(plot_tree(&d)?);
    }
    if out.is_empty() {
        return Err(Error::MissingArtifact(dir.join("metrics.json")));
    }
    Ok(out)
}

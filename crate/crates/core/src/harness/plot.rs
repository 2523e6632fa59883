//! Standalone SVG 1.1 line charts of a metric against SNR.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::report::ResultRow;
use crate::error::{param, Result};

pub const PLOT_METRICS: [&str; 7] = ["mse", "nmse", "sw2", "mmd2", "sigma_tot2", "gamma_mean", "t_b_resolved"];

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 230.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

pub fn check_metric(name: &str) -> Result<()> {
    if PLOT_METRICS.contains(&name) {
        Ok(())
    } else {
        Err(param(format!("unknown metric '{name}' (expected one of {})", PLOT_METRICS.join(", "))))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub metric: String,
    pub title: String,
}

impl PlotSpec {
    pub fn new(metric: &str) -> Self {
        Self { metric: metric.into(), title: format!("median {metric} vs SNR") }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    crate::analysis::median(&mut v)
}

/// One series per configuration label, each point the median over seeds
/// at one SNR. Rows at infinite SNR cannot be placed and are skipped.
pub fn series(rows: &[ResultRow], metric: &str) -> Result<BTreeMap<String, Vec<(f64, f64)>>> {
    check_metric(metric)?;
    let mut grouped: BTreeMap<String, Vec<(f64, Vec<f64>)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.snr_db.is_finite()) {
        let y = r.metric(metric).expect("metric checked");
        let cells = grouped.entry(r.series_label()).or_default();
        match cells.iter_mut().find(|(x, _)| *x == r.snr_db) {
            Some((_, ys)) => ys.push(y),
            None => cells.push((r.snr_db, vec![y])),
        }
    }
    Ok(grouped
        .into_iter()
        .map(|(label, mut cells)| {
            cells.sort_by(|a, b| a.0.total_cmp(&b.0));
            (label, cells.into_iter().map(|(x, ys)| (x, median(ys))).collect())
        })
        .collect())
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn emit_svg_plot(rows: &[ResultRow], spec: &PlotSpec) -> Result<String> {
    if rows.is_empty() {
        return Err(param("cannot plot an empty result set"));
    }
    let data = series(rows, &spec.metric)?;
    let points: Vec<(f64, f64)> = data.values().flatten().copied().collect();
    if points.is_empty() {
        return Err(param("no rows with a finite SNR to plot"));
    }
    let (x0, x1) = nice_range(
        points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = nice_range(
        points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
    );
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let w = &mut s;
    // Writing into a String cannot fail.
    let _ = writeln!(w, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(w, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(w, r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(&spec.title));
    let _ = writeln!(
        w,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{fx:.1}</text>"#,
            sx(fx),
            TOP + ph + 18.0
        );
        let _ = writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{fy:.4}</text>"#, LEFT - 6.0, sy(fy) + 4.0);
    }
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">SNR (dB)</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        w,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&spec.metric)
    );
    for (k, (label, pts)) in data.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
        let _ = writeln!(w, r#"<g class="series" stroke="{color}" fill="{color}">"#);
        let _ = writeln!(w, r#"<polyline fill="none" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        for (x, y) in pts {
            let _ = writeln!(w, r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="3"/>"#, sx(*x), sy(*y));
        }
        let _ = writeln!(w, "</g>");
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            w,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        );
        let _ = writeln!(w, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 24.0, ly + 4.0, escape(label));
    }
    let _ = writeln!(w, "</svg>");
    Ok(s)
}

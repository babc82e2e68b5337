//! Log-linear SVG plots of the decaying diagnostics, written as plain text.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::background::ArwParams;
use crate::flow::DiagnosticsRecord;
use crate::Result;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 48.0;
const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

/// A plot of one or more positive series on a log axis, with an optional
/// `e^{slope·t}` guide anchored at the first point of the first series.
struct PlotSpec {
    file: &'static str,
    title: String,
    series: Vec<Series>,
    guide: Option<(f64, String)>,
}

fn nice_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    let m = if r < 1.5 {
        1.0
    } else if r < 3.5 {
        2.0
    } else if r < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn render(spec: &PlotSpec) -> Option<String> {
    let all: Vec<(f64, f64)> = spec
        .series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(t, y)| t.is_finite() && y.is_finite() && *y > 0.0)
        .collect();
    if all.is_empty() {
        return None;
    }
    let t0 = all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let mut t1 = all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if t1 <= t0 {
        t1 = t0 + 1.0;
    }
    let lmin = all.iter().map(|p| p.1.log10()).fold(f64::INFINITY, f64::min);
    let lmax = all.iter().map(|p| p.1.log10()).fold(f64::NEG_INFINITY, f64::max);
    let mut d0 = lmin.floor();
    let mut d1 = lmax.ceil();
    if d1 - d0 < 1.0 {
        d0 -= 1.0;
        d1 += 1.0;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |t: f64| LEFT + (t - t0) / (t1 - t0) * pw;
    let sy = |y: f64| TOP + (d1 - y.log10()) / (d1 - d0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<defs><clipPath id="area"><rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}"/></clipPath></defs>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );

    // Decade ticks, thinned to at most ten labels.
    let decades = (d1 - d0) as usize;
    let every = decades.div_ceil(10).max(1);
    for k in (0..=decades).step_by(every) {
        let e = d0 + k as f64;
        let y = sy(10f64.powf(e));
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{e}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let step = nice_step(t1 - t0);
    let mut t = (t0 / step).ceil() * step;
    while t <= t1 + 1e-9 * step {
        let x = sx(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#eee"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 16.0,
            trim(t)
        );
        t += step;
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">t</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0
    );

    let _ = writeln!(s, r#"<g clip-path="url(#area)">"#);
    let mut legend = Vec::new();
    for (i, series) in spec.series.iter().enumerate() {
        let pts: Vec<String> = series
            .points
            .iter()
            .filter(|(t, y)| t.is_finite() && y.is_finite() && *y > 0.0)
            .map(|(t, y)| format!("{:.2},{:.2}", sx(*t), sy(*y)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        legend.push((series.label.clone(), color, false));
    }
    if let Some((slope, label)) = &spec.guide {
        if let Some(&(ta, ya)) = spec.series[0].points.iter().find(|(_, y)| *y > 0.0 && y.is_finite()) {
            let at = |t: f64| ya * (slope * (t - ta)).exp();
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#555" stroke-dasharray="6 4"/>"##,
                sx(t0),
                sy(at(t0)),
                sx(t1),
                sy(at(t1))
            );
            legend.push((label.clone(), "#555", true));
        }
    }
    let _ = writeln!(s, "</g>");
    for (i, (label, color, dashed)) in legend.iter().enumerate() {
        let y = TOP + 16.0 + 16.0 * i as f64;
        let x = LEFT + pw - 160.0;
        let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1.5"{dash}/><text x="{:.2}" y="{y:.2}">{}</text>"#,
            y - 4.0,
            x + 24.0,
            y - 4.0,
            x + 30.0,
            escape(label)
        );
    }
    let _ = writeln!(s, "</svg>");
    Some(s)
}

fn trim(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn specs(diags: &[DiagnosticsRecord], params: &ArwParams) -> Vec<PlotSpec> {
    let g = params.gamma();
    let series = |label: &str, f: &dyn Fn(&DiagnosticsRecord) -> f64| Series {
        label: label.into(),
        points: diags.iter().map(|d| (d.t, f(d))).collect(),
    };
    vec![
        PlotSpec {
            file: "u_tilde.svg",
            title: "rescaled height |ũ| = |u|e^{γt}".into(),
            series: vec![
                series("max |ũ|", &|d| -d.u_tilde_min),
                series("min |ũ|", &|d| -d.u_tilde_max),
            ],
            guide: None,
        },
        PlotSpec {
            file: "grad_u.svg",
            title: "‖Du‖∞".into(),
            series: vec![series("‖Du‖∞", &|d| d.grad_u_tilde_max * (-g * d.t).exp())],
            guide: Some((-g, format!("slope −γ = −{}", trim(g)))),
        },
        PlotSpec {
            file: "a_norm.svg",
            title: "‖A‖∞".into(),
            series: vec![series("‖A‖∞", &|d| d.a_norm_scaled_max * (-g * d.t).exp())],
            guide: Some((-g, format!("slope −γ = −{}", trim(g)))),
        },
        PlotSpec {
            file: "umbilicity.svg",
            title: "umbilicity F⁻¹|Å|".into(),
            series: vec![series("max F⁻¹|Å|", &|d| d.umbilicity_ratio_max)],
            guide: Some((-2.0 * g, format!("slope −2γ = −{}", trim(2.0 * g)))),
        },
        PlotSpec {
            file: "metric_deviation.svg",
            title: "rescaled metric deviation δ_g".into(),
            series: vec![series("δ_g", &|d| d.metric_deviation)],
            guide: None,
        },
        PlotSpec {
            file: "fu_residual.svg",
            title: "time-function residual".into(),
            series: vec![series("max |residual|", &|d| d.fu_residual_max)],
            guide: Some((-2.0 * g, format!("slope −2γ = −{}", trim(2.0 * g)))),
        },
    ]
}

/// Writes one SVG per diagnostic into `dir` and returns the paths written. Series with
/// no positive values are skipped with a warning; empty diagnostics write nothing.
pub fn emit_plots(diags: &[DiagnosticsRecord], params: &ArwParams, dir: &Path) -> Result<Vec<PathBuf>> {
    if diags.is_empty() {
        log::warn!("no diagnostics recorded; no plots written");
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for spec in specs(diags, params) {
        match render(&spec) {
            Some(svg) => {
                let path = dir.join(spec.file);
                std::fs::write(&path, svg)?;
                written.push(path);
            }
            None => log::warn!("{}: no positive values to plot; skipped", spec.file),
        }
    }
    Ok(written)
}

//! Deterministic SVG rendering of training curves and sweep heatmaps.
//!
//! Output depends only on the inputs: fixed precision, fixed palette, no
//! timestamps or random identifiers.

use std::fmt::Write;

use crate::experiment::TraceRow;
use crate::io::Tensor;
use crate::verify::OutcomeLabel;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Viridis control points.
const RAMP: [(f64, f64, f64); 5] =
    [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Grid of line-chart panels sharing an x label.
pub fn line_chart(panels: &[Panel], cols: usize, x_label: &str) -> String {
    let (pw, ph) = (320.0, 240.0);
    let cols = cols.max(1);
    let rows = panels.len().div_ceil(cols).max(1);
    let (width, height) = (pw * cols as f64, ph * rows as f64);
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="10">"#);
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (p, panel) in panels.iter().enumerate() {
        let ox = (p % cols) as f64 * pw;
        let oy = (p / cols) as f64 * ph;
        let (l, r, t, b) = (ox + 50.0, ox + pw - 10.0, oy + 25.0, oy + ph - 40.0);
        let (x0, x1) = bounds(panel.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
        let (y0, y1) = bounds(panel.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        let sx = |x: f64| l + (x - x0) / (x1 - x0) * (r - l);
        let sy = |y: f64| b - (y - y0) / (y1 - y0) * (b - t);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">{}</text>"#, (l + r) / 2.0, oy + 15.0, esc(&panel.title));
        let _ = writeln!(out, r#"<rect x="{l:.2}" y="{t:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#, r - l, b - t);
        for (v, y) in [(y0, b), (y1, t)] {
            let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, l - 3.0, y + 3.0, tick(v));
        }
        for (v, x) in [(x0, l), (x1, r)] {
            let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, b + 12.0, tick(v));
        }
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, b + 26.0, esc(x_label));
        for (k, s) in panel.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            if !pts.is_empty() {
                let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
            }
            let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#, l + 5.0, t + 12.0 + 11.0 * k as f64, esc(&s.label));
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Loss and accuracy curves of one or more runs, 2 × 3 panels.
pub fn trace_chart(runs: &[(String, Vec<TraceRow>)]) -> String {
    type Get = fn(&TraceRow) -> Option<f64>;
    let specs: [(&str, Get); 6] = [
        ("clean loss", |r| Some(r.clean_loss)),
        ("corrupt loss", |r| Some(r.corrupt_loss)),
        ("test loss", |r| r.test_loss),
        ("clean accuracy", |r| Some(r.clean_accuracy)),
        ("corrupt accuracy", |r| Some(r.corrupt_accuracy)),
        ("test accuracy", |r| r.test_accuracy),
    ];
    let panels: Vec<Panel> = specs
        .iter()
        .map(|(title, get)| Panel {
            title: title.to_string(),
            series: runs
                .iter()
                .map(|(label, rows)| Series {
                    label: label.clone(),
                    points: rows.iter().filter_map(|r| get(r).map(|v| (r.iteration as f64, v))).collect(),
                })
                .collect(),
        })
        .collect();
    line_chart(&panels, 3, "iteration")
}

fn ramp(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { return "#cccccc".into() };
    let pos = t * (RAMP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(RAMP.len() - 2);
    let f = pos - i as f64;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    let mix = |x: f64, y: f64| (x + (y - x) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn category_color(l: OutcomeLabel) -> &'static str {
    match l {
        OutcomeLabel::Benign => "#2ca02c",
        OutcomeLabel::NonBenign => "#d62728",
        OutcomeLabel::NoOverfit => "#1f77b4",
        OutcomeLabel::Mixed => "#bbbbbb",
        OutcomeLabel::DidNotTerminate => "#333333",
    }
}

/// Position of `v` on an index axis whose cell centres sit at `grid` values,
/// interpolated in log space. `None` outside the grid span.
fn log_position(grid: &[f64], v: f64) -> Option<f64> {
    if grid.len() == 1 {
        return ((v - grid[0]).abs() <= 1e-12 * grid[0].abs()).then_some(0.5);
    }
    let lv = v.ln();
    (0..grid.len() - 1).find_map(|i| {
        let (a, b) = (grid[i].ln(), grid[i + 1].ln());
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        (lv >= lo - 1e-12 && lv <= hi + 1e-12).then(|| i as f64 + 0.5 + (lv - a) / (b - a))
    })
}

/// Heatmap with γ on the horizontal axis and n on the vertical axis, both
/// log-spaced. An optional `γ = c / n` curve is drawn where it lies inside the grid.
pub fn heatmap(tensor: &Tensor, title: &str, overlay: Option<f64>) -> String {
    let (cw, ch) = (14.0, 14.0);
    let cols = tensor.gammas.len();
    let rows = tensor.ns.len();
    let (l, t) = (70.0, 30.0);
    let (pw, ph) = (cw * cols as f64, ch * rows as f64);
    let width = l + pw + 130.0;
    let height = t + ph + 50.0;
    let categorical = tensor.is_categorical();
    let values = tensor.values();
    let (v0, v1) = bounds(values.iter().flatten().copied());
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="10">"#);
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="12">{}</text>"#, l + pw / 2.0, esc(title));
    // Row 0 (smallest n) is drawn at the bottom.
    for (r, row) in tensor.cells.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let fill = match OutcomeLabel::parse(cell) {
                Some(label) if categorical => category_color(label).to_string(),
                _ => ramp((values[r][c] - v0) / (v1 - v0)),
            };
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{cw:.2}" height="{ch:.2}" fill="{fill}"/>"#,
                l + c as f64 * cw,
                t + (rows - 1 - r) as f64 * ch
            );
        }
    }
    let _ = writeln!(out, r#"<rect x="{l:.2}" y="{t:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#);
    if let (Some(g0), Some(g1)) = (tensor.gammas.first(), tensor.gammas.last()) {
        let _ = writeln!(out, r#"<text x="{l:.2}" y="{:.2}" text-anchor="start">{}</text>"#, t + ph + 12.0, tick(*g0));
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, l + pw, t + ph + 12.0, tick(*g1));
    }
    if let (Some(n0), Some(n1)) = (tensor.ns.first(), tensor.ns.last()) {
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{n0}</text>"#, l - 3.0, t + ph);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{n1}</text>"#, l - 3.0, t + 8.0);
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">gamma (log)</text>"#, l + pw / 2.0, t + ph + 28.0);
    let _ = writeln!(out, r#"<text x="15" y="{:.2}" transform="rotate(-90 15 {:.2})" text-anchor="middle">n (log)</text>"#, t + ph / 2.0, t + ph / 2.0);

    if let Some(c) = overlay {
        let ns: Vec<f64> = tensor.ns.iter().map(|&n| n as f64).collect();
        let mut segment: Vec<String> = Vec::new();
        let mut segments = Vec::new();
        let steps = 200;
        let (lo, hi) = (ns[0].ln(), ns[ns.len() - 1].ln());
        for s in 0..=steps {
            let n = (lo + (hi - lo) * s as f64 / steps as f64).exp();
            match (log_position(&tensor.gammas, c / n), log_position(&ns, n)) {
                (Some(x), Some(y)) => segment.push(format!("{:.2},{:.2}", l + x * cw, t + ph - y * ch)),
                _ => {
                    if segment.len() > 1 {
                        segments.push(std::mem::take(&mut segment));
                    }
                    segment.clear();
                }
            }
        }
        if segment.len() > 1 {
            segments.push(segment);
        }
        for seg in segments {
            let _ = writeln!(out, r#"<polyline fill="none" stroke="white" stroke-width="2" stroke-dasharray="4 2" points="{}"/>"#, seg.join(" "));
        }
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">gamma = {c:.3}/n</text>"#, l + pw + 10.0, t + ph);
    }

    let lx = l + pw + 10.0;
    if categorical {
        for (k, label) in [OutcomeLabel::Benign, OutcomeLabel::NonBenign, OutcomeLabel::NoOverfit, OutcomeLabel::Mixed, OutcomeLabel::DidNotTerminate]
            .into_iter()
            .enumerate()
        {
            let y = t + 14.0 * k as f64;
            let _ = writeln!(out, r#"<rect x="{lx:.2}" y="{y:.2}" width="10" height="10" fill="{}"/>"#, category_color(label));
            let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 14.0, y + 9.0, label.as_str());
        }
    } else {
        for k in 0..=10 {
            let f = k as f64 / 10.0;
            let y = t + (1.0 - f) * (ph - 10.0).max(50.0);
            let _ = writeln!(out, r#"<rect x="{lx:.2}" y="{y:.2}" width="10" height="6" fill="{}"/>"#, ramp(f));
            if k % 5 == 0 {
                let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 14.0, y + 6.0, tick(v0 + f * (v1 - v0)));
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor() -> Tensor {
        Tensor {
            gammas: vec![0.001, 0.01, 0.1],
            ns: vec![10, 100],
            cells: vec![vec!["0.1".into(), "0.5".into(), "1".into()], vec!["0".into(), "0.2".into(), "NaN".into()]],
        }
    }

    #[test]
    fn heatmap_is_deterministic_and_overlay_clipped() {
        let a = heatmap(&tensor(), "test loss", Some(1.0));
        assert_eq!(a, heatmap(&tensor(), "test loss", Some(1.0)));
        assert!(a.contains("polyline"));
        // c = 1000 puts c/n above the γ range everywhere.
        assert!(!heatmap(&tensor(), "x", Some(1000.0)).contains("polyline"));
    }

    #[test]
    fn log_position_centres() {
        let g = [0.001, 0.01, 0.1];
        assert!((log_position(&g, 0.01).unwrap() - 1.5).abs() < 1e-12);
        assert!((log_position(&g, 10f64.powf(-1.5)).unwrap() - 2.0).abs() < 1e-12);
        assert!(log_position(&g, 1.0).is_none());
    }

    #[test]
    fn categorical_tensor_uses_legend() {
        let t = Tensor { gammas: vec![0.1], ns: vec![5], cells: vec![vec!["Benign".into()]] };
        let svg = heatmap(&t, "outcome", None);
        assert!(svg.contains("#2ca02c") && svg.contains("NonBenign"));
    }
}

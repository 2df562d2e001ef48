//! Per-sample SVG: one panel per decode step with the node distribution as a
//! grid heatmap, overlaid with observed, ground-truth and predicted paths.

use std::fmt::Write;

use tgmr_core::scene::{GridSpec, Point, TrajectorySample};

const PANEL_COLS: usize = 4;
const GAP: f64 = 8.0;

fn polyline(out: &mut String, pts: &[Point], ox: f64, oy: f64, style: &str) {
    if pts.len() < 2 {
        return;
    }
    let coords: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", p[0] + ox, p[1] + oy)).collect();
    let _ = writeln!(out, r#"<polyline points="{}" fill="none" {style}/>"#, coords.join(" "));
}

/// `step_probs[t][node]` over the grid `spec`.
pub fn render(spec: &GridSpec, sample: &TrajectorySample, predictions: &[Vec<Point>], step_probs: &[Vec<f64>]) -> String {
    let (fw, fh) = (spec.frame_width, spec.frame_height);
    let panels = step_probs.len().max(1);
    let rows = panels.div_ceil(PANEL_COLS);
    let cols = panels.min(PANEL_COLS);
    let (w, h) = (cols as f64 * (fw + GAP) + GAP, rows as f64 * (fh + GAP + 12.0) + GAP);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(&sample.id));
    for p in 0..panels {
        let ox = GAP + (p % PANEL_COLS) as f64 * (fw + GAP);
        let oy = GAP + 12.0 + (p / PANEL_COLS) as f64 * (fh + GAP + 12.0);
        let _ = writeln!(s, r#"<g id="step-{}">"#, p + 1);
        let _ = writeln!(s, r#"<text x="{ox:.1}" y="{:.1}" font-size="10">t+{}</text>"#, oy - 3.0, p + 1);
        let _ = writeln!(s, r##"<rect x="{ox:.1}" y="{oy:.1}" width="{fw:.1}" height="{fh:.1}" fill="#f4f4f4" stroke="#999"/>"##);
        if let Some(probs) = step_probs.get(p) {
            let max = probs.iter().copied().fold(0.0, f64::max);
            for (node, &v) in probs.iter().enumerate() {
                if max <= 0.0 || v <= 0.0 {
                    continue;
                }
                let [x0, y0, x1, y1] = spec.cell_rect(node);
                let _ = writeln!(
                    s,
                    r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#d62728" fill-opacity="{:.3}"/>"##,
                    x0 + ox,
                    y0 + oy,
                    x1 - x0,
                    y1 - y0,
                    v / max
                );
            }
        }
        polyline(&mut s, &sample.observed, ox, oy, r##"stroke="#e6b800" stroke-width="1.5""##);
        for f in &sample.futures {
            polyline(&mut s, f, ox, oy, r##"stroke="#2ca02c" stroke-width="1.2""##);
        }
        for pr in predictions {
            polyline(&mut s, pr, ox, oy, r##"stroke="#1f3b8c" stroke-width="0.8" stroke-dasharray="2,2""##);
            if let Some(q) = pr.get(p) {
                let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="#1f3b8c"/>"##, q[0] + ox, q[1] + oy);
            }
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

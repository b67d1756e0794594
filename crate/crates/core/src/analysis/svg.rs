//! Minimal SVG scatter plots with one colour per label.

use std::collections::BTreeMap;
use std::fmt::Write;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders `points` (x, y) with labels; labels share a colour and appear
/// in a legend in sorted order.
pub fn scatter(points: &[(f64, f64)], labels: &[String], title: &str) -> String {
    let (w, h, margin) = (640.0, 480.0, 48.0);
    let legend_w = 140.0;
    let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
    let xs: Vec<f64> = points.iter().map(|p| finite(p.0)).collect();
    let ys: Vec<f64> = points.iter().map(|p| finite(p.1)).collect();
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (-1.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 1.0, hi + 1.0)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = range(&xs);
    let (y0, y1) = range(&ys);
    let plot_w = w - 2.0 * margin - legend_w;
    let plot_h = h - 2.0 * margin;
    let sx = |x: f64| margin + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| h - margin - (y - y0) / (y1 - y0) * plot_h;

    let mut colours: BTreeMap<&str, &str> = BTreeMap::new();
    for l in labels {
        let next = PALETTE[colours.len() % PALETTE.len()];
        colours.entry(l.as_str()).or_insert(next);
    }

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        margin + plot_w / 2.0,
        margin / 2.0 + 6.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{margin}" y="{margin}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for (i, (x, y)) in xs.iter().zip(&ys).enumerate() {
        let label = labels.get(i).map(String::as_str).unwrap_or("");
        let colour = colours.get(label).copied().unwrap_or("black");
        let _ = writeln!(
            out,
            r#"<circle cx="{:.3}" cy="{:.3}" r="4" fill="{colour}"><title>{}</title></circle>"#,
            sx(*x),
            sy(*y),
            escape(label)
        );
    }
    for (i, (label, colour)) in colours.iter().enumerate() {
        let y = margin + 16.0 + i as f64 * 18.0;
        let x = w - legend_w - margin / 2.0 + 16.0;
        let _ = writeln!(out, r#"<circle cx="{x}" cy="{}" r="5" fill="{colour}"/>"#, y - 4.0);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="12">{}</text>"#,
            x + 10.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

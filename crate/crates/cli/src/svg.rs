//! Minimal self-contained SVG charts: a grid of panels holding polylines
//! and rectangles in data coordinates.

use std::fmt::Write;

const PANEL_W: f64 = 240.0;
const PANEL_H: f64 = 170.0;
const MARGIN: f64 = 28.0;
const TITLE_H: f64 = 30.0;

pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone)]
pub enum Elem {
    Line {
        points: Vec<(f64, f64)>,
        color: String,
        width: f64,
        opacity: f64,
        dashed: bool,
    },
    Rect {
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
        color: String,
    },
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub elems: Vec<Elem>,
}

impl Panel {
    /// Panel whose ranges cover all elements (y always includes 0 for bars).
    pub fn fitted(title: impl Into<String>, elems: Vec<Elem>) -> Self {
        let (mut x, mut y) = ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
        let mut grow = |px: f64, py: f64| {
            x = (x.0.min(px), x.1.max(px));
            y = (y.0.min(py), y.1.max(py));
        };
        for e in &elems {
            match e {
                Elem::Line { points, .. } => points.iter().for_each(|&(a, b)| grow(a, b)),
                Elem::Rect { x0, x1, y0, y1, .. } => {
                    grow(*x0, *y0);
                    grow(*x1, *y1);
                }
            }
        }
        let widen = |(lo, hi): (f64, f64)| {
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5 * lo.abs().max(1e-6), hi + 0.5 * hi.abs().max(1e-6))
            } else {
                (lo, hi)
            }
        };
        Self {
            title: title.into(),
            x: widen(x),
            y: widen(y),
            elems,
        }
    }
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

/// Renders `panels` row by row, `cols` per row, under a figure title.
pub fn render(title: &str, panels: &[Panel], cols: usize) -> String {
    let cols = cols.max(1);
    let rows = panels.len().div_ceil(cols);
    let width = cols as f64 * PANEL_W;
    let height = TITLE_H + rows as f64 * PANEL_H;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="10">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{:.1}" y="18" font-size="14" text-anchor="middle">{}</text>"#,
        width / 2.0,
        escape(title)
    )
    .unwrap();
    for (n, p) in panels.iter().enumerate() {
        let ox = (n % cols) as f64 * PANEL_W;
        let oy = TITLE_H + (n / cols) as f64 * PANEL_H;
        panel(&mut s, p, ox, oy);
    }
    s.push_str("</svg>\n");
    s
}

fn panel(s: &mut String, p: &Panel, ox: f64, oy: f64) {
    let (l, r) = (ox + MARGIN + 8.0, ox + PANEL_W - 8.0);
    let (t, b) = (oy + 18.0, oy + PANEL_H - MARGIN + 6.0);
    let sx = |x: f64| l + (x - p.x.0) / (p.x.1 - p.x.0) * (r - l);
    let sy = |y: f64| b - (y - p.y.0) / (p.y.1 - p.y.0) * (b - t);
    writeln!(
        s,
        r#"<g><text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        oy + 12.0,
        escape(&p.title)
    )
    .unwrap();
    writeln!(
        s,
        r##"<rect x="{l:.1}" y="{t:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##,
        r - l,
        b - t
    )
    .unwrap();
    for e in &p.elems {
        match e {
            Elem::Line {
                points,
                color,
                width,
                opacity,
                dashed,
            } => {
                let pts: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
                let dash = if *dashed { r#" stroke-dasharray="4 2""# } else { "" };
                writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}" stroke-opacity="{opacity}"{dash}/>"#,
                    pts.join(" ")
                )
                .unwrap();
            }
            Elem::Rect { x0, x1, y0, y1, color } => {
                let (ya, yb) = (sy(*y1), sy(*y0));
                writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
                    sx(*x0),
                    ya,
                    (sx(*x1) - sx(*x0)).max(0.0),
                    (yb - ya).max(0.0)
                )
                .unwrap();
            }
        }
    }
    let ticks = [
        (l, b + 12.0, "start", fmt_tick(p.x.0)),
        (r, b + 12.0, "end", fmt_tick(p.x.1)),
        (l - 3.0, b, "end", fmt_tick(p.y.0)),
        (l - 3.0, t + 8.0, "end", fmt_tick(p.y.1)),
    ];
    for (x, y, anchor, label) in ticks {
        writeln!(
            s,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" font-size="8">{label}</text>"#
        )
        .unwrap();
    }
    s.push_str("</g>\n");
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Histogram of `xs` over `bins` equal bins as rectangles.
pub fn histogram(xs: &[f64], bins: usize, color: &str) -> Vec<Elem> {
    let bins = bins.max(1);
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return Vec::new();
    }
    let w = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1e-9_f64.max(lo.abs() * 1e-9)
    };
    let mut counts = vec![0usize; bins];
    for &x in xs {
        let i = (((x - lo) / w) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let n = xs.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| Elem::Rect {
            x0: lo + i as f64 * w,
            x1: lo + (i + 1) as f64 * w,
            y0: 0.0,
            y1: c as f64 / n,
            color: color.to_string(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_well_formed_document() {
        let p = Panel::fitted(
            "a<b",
            vec![Elem::Line {
                points: vec![(0.0, 0.0), (1.0, 2.0)],
                color: PALETTE[0].into(),
                width: 1.0,
                opacity: 1.0,
                dashed: false,
            }],
        );
        let s = render("t", &[p.clone(), p], 2);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert!(s.contains("a&lt;b"));
        assert_eq!(s.matches("<polyline").count(), 2);
    }

    #[test]
    fn histogram_mass_is_one() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let total: f64 = histogram(&xs, 7, "red")
            .iter()
            .map(|e| match e {
                Elem::Rect { y1, .. } => *y1,
                _ => 0.0,
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

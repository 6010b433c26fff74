//! Minimal SVG line charts.

use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub color: String,
    pub points: Vec<(f64, f64)>,
}

/// Shaded region between two curves sharing the same x values.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub label: String,
    pub color: String,
    pub x: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub bands: Vec<Band>,
    /// Pale vertical spans, e.g. the training range.
    pub spans: Vec<(f64, f64)>,
}

const W: f64 = 720.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 44.0;

impl LineChart {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        let xs = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.0))
            .chain(self.bands.iter().flat_map(|b| b.x.iter().copied()));
        let ys = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .chain(self.bands.iter().flat_map(|b| b.lower.iter().chain(&b.upper).copied()));
        let (x0, x1) = min_max(xs);
        let (y0, y1) = min_max(ys);
        let pad = 0.05 * (y1 - y0).max(1e-9);
        (x0, x1.max(x0 + 1e-9), y0 - pad, y1 + pad)
    }

    pub fn to_svg(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, esc(&self.title));
        for (a, b) in &self.spans {
            let (a, b) = (sx(a.max(x0)), sx(b.min(x1)));
            let _ = writeln!(s, r##"<rect x="{a:.2}" y="{TOP}" width="{:.2}" height="{ph}" fill="#eeeeee"/>"##, (b - a).max(0.0));
        }
        for band in &self.bands {
            let mut d = String::new();
            for (i, (x, u)) in band.x.iter().zip(&band.upper).enumerate() {
                let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, sx(*x), sy(*u));
            }
            for (x, l) in band.x.iter().zip(&band.lower).rev() {
                let _ = write!(d, "L{:.2},{:.2} ", sx(*x), sy(*l));
            }
            let _ = writeln!(s, r#"<path d="{}Z" fill="{}" fill-opacity="0.25" stroke="none"/>"#, d, band.color);
        }
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, sx(xv), H - BOTTOM + 16.0, tick(xv));
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, sy(yv) + 4.0, tick(yv));
        }
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 8.0, esc(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            esc(&self.y_label)
        );
        for series in &self.series {
            let pts: Vec<String> = series
                .points
                .iter()
                .filter(|p| p.1.is_finite())
                .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
                .collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#, pts.join(" "), series.color);
        }
        let legend = self
            .series
            .iter()
            .map(|x| (&x.label, &x.color))
            .chain(self.bands.iter().map(|b| (&b.label, &b.color)));
        for (i, (label, color)) in legend.enumerate() {
            let y = TOP + 12.0 + 18.0 * i as f64;
            let lx = W - RIGHT + 12.0;
            let _ = writeln!(s, r#"<rect x="{lx}" y="{:.2}" width="14" height="4" fill="{color}"/>"#, y - 4.0);
            let _ = writeln!(s, r#"<text x="{}" y="{y:.2}">{}</text>"#, lx + 20.0, esc(label));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

fn tick(v: f64) -> String {
    let r = (v * 100.0).round() / 100.0;
    if r == 0.0 {
        "0".into()
    } else {
        format!("{r}")
    }
}

fn esc(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

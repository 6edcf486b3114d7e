//! Minimal static SVG charts: a multi-series line chart and a histogram.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        LEFT + (x - self.x0) / span * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let span = if self.y1 > self.y0 { self.y1 - self.y0 } else { 1.0 };
        H - BOTTOM - (y - self.y0) / span * (H - TOP - BOTTOM)
    }

    fn axes(&self, s: &mut String, title: &str, x_label: &str, y_label: &str, ticks: usize) {
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            (LEFT + W - RIGHT) / 2.0,
            escape(title)
        );
        let (bx, by) = (self.px(self.x0), self.py(self.y0));
        let _ = writeln!(
            s,
            r#"<path d="M{bx:.1},{:.1} L{bx:.1},{by:.1} L{:.1},{by:.1}" fill="none" stroke="black"/>"#,
            self.py(self.y1),
            self.px(self.x1)
        );
        for k in 0..=ticks {
            let t = k as f64 / ticks as f64;
            let xv = self.x0 + t * (self.x1 - self.x0);
            let yv = self.y0 + t * (self.y1 - self.y0);
            let (x, y) = (self.px(xv), self.py(yv));
            let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{by:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#, by + 4.0);
            let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, by + 18.0, fmt_tick(xv));
            let _ = writeln!(s, r#"<line x1="{:.1}" y1="{y:.1}" x2="{bx:.1}" y2="{y:.1}" stroke="black"/>"#, bx - 4.0);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, bx - 7.0, y + 4.0, fmt_tick(yv));
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (LEFT + W - RIGHT) / 2.0,
            H - 14.0,
            escape(x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            (TOP + H - BOTTOM) / 2.0,
            (TOP + H - BOTTOM) / 2.0,
            escape(y_label)
        );
    }
}

fn fmt_tick(v: f64) -> String {
    let r = (v * 100.0).round() / 100.0;
    if r == r.trunc() {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], y_range: (f64, f64)) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (x0, x1) = if x0.is_finite() { (x0, x1) } else { (0.0, 1.0) };
    let frame = Frame {
        x0,
        x1,
        y0: y_range.0,
        y1: y_range.1,
    };
    let mut s = String::new();
    frame.axes(&mut s, title, x_label, y_label, 5);
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| format!("{}{:.1},{:.1}", if i == 0 { "M" } else { "L" }, frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" "));
        for &(x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, frame.px(x), frame.py(y));
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = W - RIGHT + 16.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

/// Bars over [0, 1] with equal-width bins, heights as shares of the total.
pub fn histogram(title: &str, x_label: &str, counts: &[u64]) -> String {
    let total: u64 = counts.iter().sum();
    let shares: Vec<f64> = counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect();
    let top = shares.iter().cloned().fold(0.0, f64::max).max(1e-9);
    let frame = Frame {
        x0: 0.0,
        x1: 1.0,
        y0: 0.0,
        y1: (top * 10.0).ceil() / 10.0,
    };
    let mut s = String::new();
    frame.axes(&mut s, title, x_label, "share of rows", 5);
    let width = 1.0 / counts.len().max(1) as f64;
    for (k, &h) in shares.iter().enumerate() {
        let (xa, xb) = (frame.px(k as f64 * width), frame.px((k + 1) as f64 * width));
        let (ya, yb) = (frame.py(h), frame.py(0.0));
        let _ = writeln!(
            s,
            r##"<rect x="{xa:.1}" y="{ya:.1}" width="{:.1}" height="{:.1}" fill="#1f77b4" stroke="white"/>"##,
            (xb - xa).max(0.0),
            (yb - ya).max(0.0)
        );
    }
    s.push_str("</svg>\n");
    s
}

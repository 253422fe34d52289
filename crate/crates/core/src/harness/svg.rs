//! Minimal static SVG plotting.

use std::fmt::Write;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Canvas {
    width: f64,
    height: f64,
    margin: f64,
    x: (f64, f64),
    y: (f64, f64),
    body: String,
}

fn widen(lo: f64, hi: f64) -> (f64, f64) {
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

impl Canvas {
    pub fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        Self {
            width: 640.0,
            height: 420.0,
            margin: 50.0,
            x: widen(x.0, x.1),
            y: widen(y.0, y.1),
            body: String::new(),
        }
    }

    fn px(&self, x: f64) -> f64 {
        self.margin + (x - self.x.0) / (self.x.1 - self.x.0) * (self.width - 2.0 * self.margin)
    }

    fn py(&self, y: f64) -> f64 {
        self.height - self.margin - (y - self.y.0) / (self.y.1 - self.y.0) * (self.height - 2.0 * self.margin)
    }

    fn points(&self, pts: &[(f64, f64)]) -> String {
        pts.iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], colour: &str) {
        let p = self.points(pts);
        let _ = writeln!(self.body, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{p}"/>"#);
    }

    pub fn band(&mut self, lower: &[(f64, f64)], upper: &[(f64, f64)], colour: &str) {
        let mut pts: Vec<(f64, f64)> = upper.to_vec();
        pts.extend(lower.iter().rev());
        let p = self.points(&pts);
        let _ = writeln!(self.body, r#"<polygon fill="{colour}" fill-opacity="0.2" stroke="none" points="{p}"/>"#);
    }

    pub fn dot(&mut self, x: f64, y: f64, r: f64, colour: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{r}" fill="{colour}"/>"#,
            self.px(x),
            self.py(y)
        );
    }

    /// Axis-aligned ellipse with data-space radii.
    pub fn dashed_ellipse(&mut self, x: f64, y: f64, rx: f64, ry: f64, colour: &str) {
        let sx = (self.px(x + rx) - self.px(x)).abs();
        let sy = (self.py(y + ry) - self.py(y)).abs();
        let _ = writeln!(
            self.body,
            r#"<ellipse cx="{:.2}" cy="{:.2}" rx="{sx:.2}" ry="{sy:.2}" fill="none" stroke="{colour}" stroke-dasharray="4 3"/>"#,
            self.px(x),
            self.py(y)
        );
    }

    pub fn label(&mut self, x: f64, y: f64, text: &str, colour: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" fill="{colour}">{}</text>"#,
            self.px(x),
            self.py(y),
            escape(text)
        );
    }

    pub fn finish(&self, title: &str, x_label: &str, y_label: &str) -> String {
        let (w, h, m) = (self.width, self.height, self.margin);
        let mut s = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
        s.push('\n');
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            w - 2.0 * m,
            h - 2.0 * m
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">{}</text>"#, w / 2.0, m * 0.6, escape(title));
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#, w / 2.0, h - 10.0, escape(x_label));
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            h / 2.0,
            h / 2.0,
            escape(y_label)
        );
        for (v, anchor_y) in [(self.y.0, h - m), (self.y.1, m)] {
            let _ = writeln!(s, r#"<text x="{}" y="{anchor_y}" font-size="10" text-anchor="end">{v:.3}</text>"#, m - 4.0);
        }
        for (v, anchor_x) in [(self.x.0, m), (self.x.1, w - m)] {
            let _ = writeln!(s, r#"<text x="{anchor_x}" y="{}" font-size="10" text-anchor="middle">{v:.3}</text>"#, h - m + 14.0);
        }
        s.push_str(&self.body);
        s.push_str("</svg>\n");
        s
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

//! Minimal static SVG charts: scatter, lines, ribbons, histograms and
//! boxplots on a single pair of linear axes.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

pub const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Range padded by 5% on each side; a zero-width range is widened to unit width.
pub fn padded_range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.into_iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Equal-width histogram; the last bin is closed on the right.
pub fn histogram(values: &[f64], bins: usize, range: (f64, f64)) -> (Vec<f64>, Vec<usize>) {
    let bins = bins.max(1);
    let (lo, hi) = range;
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| lo + width * b as f64).collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        if v < lo || v > hi || !v.is_finite() {
            continue;
        }
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    (edges, counts)
}

/// Five-number summary used for a boxplot (2.5%, 25%, 50%, 75%, 97.5%).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub low: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub high: f64,
}

pub struct Chart {
    body: String,
    legend: Vec<(String, &'static str)>,
    title: String,
    x_label: String,
    y_label: String,
    x_range: (f64, f64),
    y_range: (f64, f64),
    x_ticks: Option<Vec<(f64, String)>>,
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str, x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        Chart {
            body: String::new(),
            legend: Vec::new(),
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            x_range,
            y_range,
            x_ticks: None,
        }
    }

    /// Replaces numeric x tick labels, e.g. with category names.
    pub fn with_x_ticks(mut self, ticks: Vec<(f64, String)>) -> Self {
        self.x_ticks = Some(ticks);
        self
    }

    fn sx(&self, x: f64) -> f64 {
        let (lo, hi) = self.x_range;
        LEFT + (x - lo) / (hi - lo) * (WIDTH - LEFT - RIGHT)
    }

    fn sy(&self, y: f64) -> f64 {
        let (lo, hi) = self.y_range;
        HEIGHT - BOTTOM - (y - lo) / (hi - lo) * (HEIGHT - TOP - BOTTOM)
    }

    pub fn legend(&mut self, label: &str, color: &'static str) {
        self.legend.push((label.to_string(), color));
    }

    pub fn points(&mut self, pts: &[(f64, f64)], color: &str, radius: f64) {
        for &(x, y) in pts {
            let _ = writeln!(
                self.body,
                r#"<circle cx="{:.2}" cy="{:.2}" r="{radius}" fill="{color}" fill-opacity="0.8"/>"#,
                self.sx(x),
                self.sy(y)
            );
        }
    }

    pub fn segment(&mut self, a: (f64, f64), b: (f64, f64), color: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="{width}"/>"#,
            self.sx(a.0),
            self.sy(a.1),
            self.sx(b.0),
            self.sy(b.1)
        );
    }

    /// Point with horizontal and vertical bars of half-width `sd`.
    pub fn error_cross(&mut self, centre: (f64, f64), sd: (f64, f64), color: &str) {
        let (x, y) = centre;
        self.segment((x - sd.0, y), (x + sd.0, y), color, 1.5);
        self.segment((x, y - sd.1), (x, y + sd.1), color, 1.5);
        let _ = writeln!(
            self.body,
            r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="{color}"/>"#,
            self.sx(x) - 4.0,
            self.sy(y) - 4.0
        );
    }

    fn path(&self, pts: &[(f64, f64)]) -> String {
        pts.iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", self.sx(x), self.sy(y)))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn line(&mut self, pts: &[(f64, f64)], color: &str) {
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            self.path(pts)
        );
    }

    /// Closed outline, used for mixing polygons.
    pub fn polygon(&mut self, pts: &[(f64, f64)], color: &str) {
        let _ = writeln!(
            self.body,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.08" stroke="{color}" stroke-dasharray="4 3"/>"#,
            self.path(pts)
        );
    }

    pub fn ribbon(&mut self, xs: &[f64], lower: &[f64], upper: &[f64], color: &str) {
        let mut pts: Vec<(f64, f64)> = xs.iter().copied().zip(upper.iter().copied()).collect();
        pts.extend(xs.iter().copied().zip(lower.iter().copied()).rev());
        let _ = writeln!(
            self.body,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            self.path(&pts)
        );
    }

    /// Histogram bars scaled to density so overlaid series are comparable.
    pub fn histogram(&mut self, edges: &[f64], counts: &[usize], color: &str) {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return;
        }
        for (b, &c) in counts.iter().enumerate() {
            let w = edges[b + 1] - edges[b];
            let h = c as f64 / (total as f64 * w);
            let (x0, x1) = (self.sx(edges[b]), self.sx(edges[b + 1]));
            let (y0, y1) = (self.sy(0.0), self.sy(h));
            let _ = writeln!(
                self.body,
                r#"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.45" stroke="{color}" stroke-width="0.5"/>"#,
                (x1 - x0).max(0.0),
                (y0 - y1).max(0.0)
            );
        }
    }

    pub fn boxplot(&mut self, x: f64, half_width: f64, stats: BoxStats, color: &str) {
        self.segment((x, stats.low), (x, stats.q1), color, 1.2);
        self.segment((x, stats.q3), (x, stats.high), color, 1.2);
        let (x0, x1) = (self.sx(x - half_width), self.sx(x + half_width));
        let (y0, y1) = (self.sy(stats.q3), self.sy(stats.q1));
        let _ = writeln!(
            self.body,
            r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.3" stroke="{color}"/>"#,
            x1 - x0,
            (y1 - y0).max(0.5)
        );
        self.segment((x - half_width, stats.median), (x + half_width, stats.median), color, 2.0);
    }

    fn ticks(range: (f64, f64)) -> Vec<f64> {
        let (lo, hi) = range;
        let raw = (hi - lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| *s >= raw)
            .unwrap_or(10.0 * mag);
        let mut t = (lo / step).ceil() * step;
        let mut out = Vec::new();
        while t <= hi + 1e-9 * step {
            out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
            t += step;
        }
        out
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            escape(&self.title)
        );
        let (x0, x1) = (LEFT, WIDTH - RIGHT);
        let (y0, y1) = (HEIGHT - BOTTOM, TOP);
        let _ = writeln!(
            s,
            r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y0 - y1
        );
        let x_ticks: Vec<(f64, String)> = match &self.x_ticks {
            Some(t) => t.clone(),
            None => Self::ticks(self.x_range).into_iter().map(|t| (t, format!("{t}"))).collect(),
        };
        for (t, label) in x_ticks {
            let px = self.sx(t);
            let _ = writeln!(
                s,
                r#"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{:.1}" stroke="black"/><text x="{px:.2}" y="{:.1}" text-anchor="middle">{}</text>"#,
                y0 + 5.0,
                y0 + 18.0,
                escape(&label)
            );
        }
        for t in Self::ticks(self.y_range) {
            let py = self.sy(t);
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/><text x="{:.1}" y="{:.2}" text-anchor="end">{t}</text>"#,
                x0 - 5.0,
                x0 - 8.0,
                py + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(18,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            (y0 + y1) / 2.0,
            escape(&self.y_label)
        );
        let _ = writeln!(
            s,
            r#"<svg x="{x0}" y="{y1}" width="{}" height="{}" viewBox="{x0} {y1} {} {}" overflow="hidden">"#,
            x1 - x0,
            y0 - y1,
            x1 - x0,
            y0 - y1
        );
        s.push_str(&self.body);
        s.push_str("</svg>\n");
        for (i, (label, color)) in self.legend.iter().enumerate() {
            let y = TOP + 10.0 + 18.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="12" height="12" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                x1 + 12.0,
                y - 10.0,
                x1 + 30.0,
                y,
                escape(label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

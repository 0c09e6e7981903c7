//! SVG rate-distortion charts: log bitrate on x, MS-SSIM dB on y.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::curve::{CurveError, RDCurve};

pub const SAMPLES_PER_CURVE: usize = 200;
pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("nothing to plot")]
    Empty,
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Maps (log10 kbps, dB) to pixel coordinates and back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotTransform {
    pub log_rate: (f64, f64),
    pub quality: (f64, f64),
}

impl PlotTransform {
    pub fn fit(curves: &[RDCurve]) -> Self {
        let mut lr = (f64::INFINITY, f64::NEG_INFINITY);
        let mut q = (f64::INFINITY, f64::NEG_INFINITY);
        for c in curves {
            let (a, b) = c.log_rate_span();
            lr = (lr.0.min(a), lr.1.max(b));
            let (a, b) = c.quality_span();
            q = (q.0.min(a), q.1.max(b));
        }
        let pad = |(lo, hi): (f64, f64)| {
            let w = (hi - lo).max(1e-6);
            (lo - 0.05 * w, hi + 0.05 * w)
        };
        PlotTransform { log_rate: pad(lr), quality: pad(q) }
    }

    pub fn to_px(&self, log_rate: f64, db: f64) -> (f64, f64) {
        let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let x = MARGIN_LEFT + (log_rate - self.log_rate.0) / (self.log_rate.1 - self.log_rate.0) * pw;
        let y = MARGIN_TOP + (self.quality.1 - db) / (self.quality.1 - self.quality.0) * ph;
        (x, y)
    }

    pub fn from_px(&self, x: f64, y: f64) -> (f64, f64) {
        let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let log_rate = self.log_rate.0 + (x - MARGIN_LEFT) / pw * (self.log_rate.1 - self.log_rate.0);
        let db = self.quality.1 - (y - MARGIN_TOP) / ph * (self.quality.1 - self.quality.0);
        (log_rate, db)
    }
}

/// Sample abscissae strictly inside the knot span, endpoints included.
pub fn sample_points(span: (f64, f64), n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i + 1 == n { span.1 } else { span.0 + (span.1 - span.0) * i as f64 / (n - 1) as f64 })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_plot(curves: &[RDCurve]) -> Result<String, PlotError> {
    if curves.is_empty() {
        return Err(PlotError::Empty);
    }
    let t = PlotTransform::fit(curves);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (x0, y1) = t.to_px(t.log_rate.0, t.quality.0);
    let (x1, y0) = t.to_px(t.log_rate.1, t.quality.1);
    let _ = writeln!(
        svg,
        r#"<rect class="frame" x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y1 - y0
    );

    // Decade and 2x/5x ticks on the log bitrate axis.
    let mut decade = t.log_rate.0.floor() as i32;
    while (decade as f64) <= t.log_rate.1 {
        for m in [1.0f64, 2.0, 5.0] {
            let lr = decade as f64 + m.log10();
            if lr < t.log_rate.0 || lr > t.log_rate.1 {
                continue;
            }
            let (x, _) = t.to_px(lr, t.quality.0);
            let _ = writeln!(svg, r##"<line class="tick" x1="{x:.2}" y1="{y1:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"##, y1 + 5.0);
            let _ = writeln!(
                svg,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                y1 + 18.0,
                m * 10f64.powi(decade)
            );
        }
        decade += 1;
    }
    let ystep = nice_step(t.quality.1 - t.quality.0);
    let mut q = (t.quality.0 / ystep).ceil() * ystep;
    while q <= t.quality.1 {
        let (_, y) = t.to_px(t.log_rate.0, q);
        let _ = writeln!(svg, r#"<line class="tick" x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{q:.1}</text>"#, x0 - 8.0, y + 4.0);
        q += ystep;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">bitrate (kbps, log scale)</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{:.2}" text-anchor="middle" transform="rotate(-90 15 {:.2})">MS-SSIM (dB)</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let f = c.quality_interpolant()?;
        let mut pts = Vec::with_capacity(SAMPLES_PER_CURVE);
        for lr in sample_points(f.span(), SAMPLES_PER_CURVE) {
            let db = f.eval(lr).map_err(CurveError::from)?;
            let (x, y) = t.to_px(lr, db);
            pts.push(format!("{x:.2},{y:.2}"));
        }
        let label = escape(&format!("k={}", c.k));
        let _ = writeln!(svg, r#"<g class="curve" data-k="{}">"#, c.k);
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        for p in c.points() {
            let (x, y) = t.to_px(p.log_rate(), p.msssim_db);
            let _ = writeln!(svg, r#"<circle class="marker" data-qp="{}" cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#, p.qp);
        }
        let _ = writeln!(svg, "</g>");
        let ly = MARGIN_TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 15.0;
        let _ = writeln!(
            svg,
            r#"<g class="legend-entry"><line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{label}</text></g>"#,
            lx + 20.0,
            lx + 25.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn nice_step(range: f64) -> f64 {
    let raw = range / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let m = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

pub fn emit_plot(curves: &[RDCurve], path: &Path) -> Result<String, PlotError> {
    let svg = render_plot(curves)?;
    std::fs::write(path, &svg).map_err(|e| PlotError::Io { path: path.to_path_buf(), source: e })?;
    Ok(svg)
}

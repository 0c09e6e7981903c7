#![allow(dead_code)]

use lambdatune_core::curve::{db_to_msssim, RDCurve, RDPoint};
use lambdatune_core::{CodecId, FrameTypeGroup, LambdaScope, ScaleFactor};
use rand::Rng;

/// Curve from `(qp, kbps, dB)` triples.
pub fn curve(k: f64, pts: &[(i32, f64, f64)]) -> RDCurve {
    let points = pts.iter().map(|&(qp, r, db)| RDPoint::new(qp, r, db_to_msssim(db), None).unwrap()).collect();
    RDCurve::new("clip", CodecId::Av1, ScaleFactor::new(k).unwrap(), FrameTypeGroup::Kf, LambdaScope::Top, points).unwrap()
}

/// Random strictly increasing rate/quality curve with `n` points. QPs
/// descend as quality rises.
pub fn random_curve<R: Rng>(rng: &mut R, n: usize, k: f64) -> RDCurve {
    let mut rate: f64 = rng.gen_range(100.0..400.0);
    let mut db: f64 = rng.gen_range(6.0..10.0);
    let mut pts = Vec::with_capacity(n);
    for i in 0..n {
        pts.push((60 - 5 * i as i32, rate, db));
        rate *= rng.gen_range(1.3..3.0);
        db += rng.gen_range(0.5..3.0);
    }
    curve(k, &pts)
}

/// Reference PCHIP, written from the textbook recipe: Fritsch–Butland
/// harmonic interior slopes and the three-point end rule.
pub struct OraclePchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl OraclePchip {
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
        let m: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d = vec![m[0], m[0]];
        } else {
            for k in 1..n - 1 {
                if m[k - 1] * m[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / m[k - 1] + w2 / m[k]);
                }
            }
            let edge = |h1: f64, h2: f64, m1: f64, m2: f64| {
                let e = ((2.0 * h1 + h2) * m1 - h1 * m2) / (h1 + h2);
                if e.signum() != m1.signum() || e == 0.0 {
                    0.0
                } else if m1.signum() != m2.signum() && e.abs() > 3.0 * m1.abs() {
                    3.0 * m1
                } else {
                    e
                }
            };
            d[0] = edge(h[0], h[1], m[0], m[1]);
            d[n - 1] = edge(h[n - 2], h[n - 3], m[n - 2], m[n - 3]);
        }
        OraclePchip { x: x.to_vec(), y: y.to_vec(), d }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let mut i = 0;
        while i + 2 < n && t > self.x[i + 1] {
            i += 1;
        }
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }
}

/// Trapezoid mean of `f - g` over `[a, b]` with `n` panels.
pub fn trapezoid_mean(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = 0.5 * (f(a) + f(b));
    for i in 1..n {
        s += f(a + h * i as f64);
    }
    s * h / (b - a)
}

/// BD-Rate by dense sampling, independent of the library's quadrature.
pub fn oracle_bd_rate(reference: &RDCurve, test: &RDCurve, samples: usize) -> f64 {
    let fit = |c: &RDCurve| {
        let x: Vec<f64> = c.points().iter().map(|p| p.msssim_db).collect();
        let y: Vec<f64> = c.points().iter().map(|p| p.bitrate_kbps.log10()).collect();
        OraclePchip::new(&x, &y)
    };
    let (r, t) = (fit(reference), fit(test));
    let (ra, rb) = reference.quality_span();
    let (ta, tb) = test.quality_span();
    let (a, b) = (ra.max(ta), rb.min(tb));
    let delta = trapezoid_mean(|q| t.eval(q) - r.eval(q), a, b, samples);
    (10f64.powf(delta) - 1.0) * 100.0
}

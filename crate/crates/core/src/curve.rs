//! RD points and curves, and the Bjøntegaard-style comparisons between them.
//!
//! Quality is MS-SSIM expressed in dB. Rates are compared on a log10 scale.
//! All curve comparisons are restricted to the overlap of the two curves;
//! nothing is ever extrapolated.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lambda::{CodecId, FrameTypeGroup, LambdaScope, ScaleFactor};
use crate::pchip::{adaptive_simpson, pchip_fit, Interpolant, PchipError};

/// Ceiling applied when a reported MS-SSIM is exactly 1.
pub const MAX_MSSSIM_DB: f64 = 100.0;

/// Conventional minimum number of points for a BD comparison.
pub const DEFAULT_MIN_POINTS: usize = 4;

/// Absolute tolerance on the averaged log-rate (or dB) difference.
const QUADRATURE_TOL: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum CurveError {
    #[error("MS-SSIM score {0} is outside [0, 1)")]
    ScoreDomain(f64),
    #[error("invalid RD point at qp {qp}: {reason}")]
    InvalidPoint { qp: i32, reason: String },
    #[error("curve has {got} points, at least {needed} required")]
    InsufficientData { needed: usize, got: usize },
    #[error("curve must be strictly increasing in quality and bitrate ({0})")]
    NotMonotone(String),
    #[error("duplicate qp {0} in curve")]
    DuplicateQp(i32),
    #[error("curves do not overlap: [{d1}, {d2}] is empty")]
    NoOverlap { d1: f64, d2: f64 },
    #[error("qp {qp} missing from the {which} curve")]
    MissingPoint { qp: i32, which: &'static str },
    #[error("QP ladders differ: {reference:?} vs {test:?}")]
    LadderMismatch { reference: Vec<i32>, test: Vec<i32> },
    #[error("minimum point count must be at least 2, got {0}")]
    BadPointFloor(usize),
    #[error("interpolation failed: {0}")]
    Pchip(#[from] PchipError),
    #[error("non-finite result from curve integration")]
    NonFinite,
}

pub fn msssim_to_db(score: f64) -> Result<f64, CurveError> {
    if !(0.0..1.0).contains(&score) {
        return Err(CurveError::ScoreDomain(score));
    }
    Ok(-10.0 * (1.0 - score).log10())
}

pub fn db_to_msssim(db: f64) -> f64 {
    1.0 - 10f64.powf(-db / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RDPoint {
    pub qp: i32,
    pub bitrate_kbps: f64,
    pub msssim: f64,
    pub msssim_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vmaf: Option<f64>,
}

impl RDPoint {
    /// Builds a point from a pooled MS-SSIM score; the dB value is derived.
    pub fn new(qp: i32, bitrate_kbps: f64, msssim: f64, vmaf: Option<f64>) -> Result<Self, CurveError> {
        let bad = |reason: String| CurveError::InvalidPoint { qp, reason };
        if !(msssim > 0.0 && msssim <= 1.0) {
            return Err(bad(format!("MS-SSIM {msssim} outside (0, 1]")));
        }
        let msssim_db = if msssim < 1.0 { msssim_to_db(msssim)? } else { MAX_MSSSIM_DB };
        let p = RDPoint { qp, bitrate_kbps, msssim, msssim_db, vmaf };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CurveError> {
        let bad = |reason: String| CurveError::InvalidPoint { qp: self.qp, reason };
        if !(self.bitrate_kbps.is_finite() && self.bitrate_kbps > 0.0) {
            return Err(bad(format!("bitrate {} must be positive", self.bitrate_kbps)));
        }
        if !(self.msssim > 0.0 && self.msssim <= 1.0) {
            return Err(bad(format!("MS-SSIM {} outside (0, 1]", self.msssim)));
        }
        if !self.msssim_db.is_finite() {
            return Err(bad("MS-SSIM dB is not finite".into()));
        }
        let expected = if self.msssim < 1.0 { msssim_to_db(self.msssim)? } else { MAX_MSSSIM_DB };
        if (expected - self.msssim_db).abs() > 1e-6 * expected.abs().max(1.0) {
            return Err(bad(format!(
                "MS-SSIM dB {} disagrees with score {} ({expected} dB)",
                self.msssim_db, self.msssim
            )));
        }
        if let Some(v) = self.vmaf {
            if !(0.0..=100.0).contains(&v) {
                return Err(bad(format!("VMAF {v} outside [0, 100]")));
            }
        }
        Ok(())
    }

    pub fn log_rate(&self) -> f64 {
        self.bitrate_kbps.log10()
    }
}

/// Measurements for one (clip, k, group, scope) configuration, sorted by
/// ascending quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCurve")]
pub struct RDCurve {
    pub clip_id: String,
    pub codec: CodecId,
    pub k: ScaleFactor,
    pub group: FrameTypeGroup,
    pub scope: LambdaScope,
    points: Vec<RDPoint>,
}

#[derive(Deserialize)]
struct RawCurve {
    clip_id: String,
    codec: CodecId,
    k: ScaleFactor,
    group: FrameTypeGroup,
    scope: LambdaScope,
    points: Vec<RDPoint>,
}

impl TryFrom<RawCurve> for RDCurve {
    type Error = CurveError;

    fn try_from(raw: RawCurve) -> Result<Self, Self::Error> {
        RDCurve::new(raw.clip_id, raw.codec, raw.k, raw.group, raw.scope, raw.points)
    }
}

impl RDCurve {
    pub fn new(
        clip_id: impl Into<String>,
        codec: CodecId,
        k: ScaleFactor,
        group: FrameTypeGroup,
        scope: LambdaScope,
        mut points: Vec<RDPoint>,
    ) -> Result<Self, CurveError> {
        if points.len() < 2 {
            return Err(CurveError::InsufficientData { needed: 2, got: points.len() });
        }
        for p in &points {
            p.validate()?;
        }
        let mut qps: Vec<i32> = points.iter().map(|p| p.qp).collect();
        qps.sort_unstable();
        if let Some(w) = qps.windows(2).find(|w| w[0] == w[1]) {
            return Err(CurveError::DuplicateQp(w[0]));
        }
        points.sort_by(|a, b| a.msssim_db.total_cmp(&b.msssim_db));
        for w in points.windows(2) {
            if w[1].msssim_db <= w[0].msssim_db {
                return Err(CurveError::NotMonotone(format!(
                    "quality repeats at qp {} and {}",
                    w[0].qp, w[1].qp
                )));
            }
            if w[1].bitrate_kbps <= w[0].bitrate_kbps {
                return Err(CurveError::NotMonotone(format!(
                    "higher quality at qp {} does not cost more bits than qp {}",
                    w[1].qp, w[0].qp
                )));
            }
        }
        Ok(RDCurve { clip_id: clip_id.into(), codec, k, group, scope, points })
    }

    pub fn points(&self) -> &[RDPoint] {
        &self.points
    }

    pub fn point_at(&self, qp: i32) -> Option<&RDPoint> {
        self.points.iter().find(|p| p.qp == qp)
    }

    /// QPs in ascending order.
    pub fn ladder(&self) -> Vec<i32> {
        let mut q: Vec<i32> = self.points.iter().map(|p| p.qp).collect();
        q.sort_unstable();
        q
    }

    pub fn quality_span(&self) -> (f64, f64) {
        (self.points[0].msssim_db, self.points[self.points.len() - 1].msssim_db)
    }

    pub fn log_rate_span(&self) -> (f64, f64) {
        (self.points[0].log_rate(), self.points[self.points.len() - 1].log_rate())
    }

    /// log10 bitrate as a function of quality (dB).
    pub fn rate_interpolant(&self) -> Result<Interpolant, CurveError> {
        let knots: Vec<(f64, f64)> = self.points.iter().map(|p| (p.msssim_db, p.log_rate())).collect();
        Ok(pchip_fit(&knots)?)
    }

    /// Quality (dB) as a function of log10 bitrate.
    pub fn quality_interpolant(&self) -> Result<Interpolant, CurveError> {
        let knots: Vec<(f64, f64)> = self.points.iter().map(|p| (p.log_rate(), p.msssim_db)).collect();
        Ok(pchip_fit(&knots)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapInterval {
    pub d1: f64,
    pub d2: f64,
}

impl OverlapInterval {
    fn of(a: (f64, f64), b: (f64, f64)) -> Result<Self, CurveError> {
        let d1 = a.0.max(b.0);
        let d2 = a.1.min(b.1);
        if d1 < d2 {
            Ok(OverlapInterval { d1, d2 })
        } else {
            Err(CurveError::NoOverlap { d1, d2 })
        }
    }

    pub fn width(&self) -> f64 {
        self.d2 - self.d1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdOptions {
    pub min_points: usize,
}

impl Default for BdOptions {
    fn default() -> Self {
        BdOptions { min_points: DEFAULT_MIN_POINTS }
    }
}

impl BdOptions {
    pub fn with_min_points(min_points: usize) -> Result<Self, CurveError> {
        if min_points < 2 {
            return Err(CurveError::BadPointFloor(min_points));
        }
        if min_points < DEFAULT_MIN_POINTS {
            tracing::warn!(min_points, "BD comparisons with fewer than 4 points are poorly conditioned");
        }
        Ok(BdOptions { min_points })
    }

    fn check(&self, curve: &RDCurve) -> Result<(), CurveError> {
        if curve.points.len() < self.min_points {
            return Err(CurveError::InsufficientData { needed: self.min_points, got: curve.points.len() });
        }
        Ok(())
    }
}

pub fn quality_overlap(reference: &RDCurve, test: &RDCurve) -> Result<OverlapInterval, CurveError> {
    OverlapInterval::of(reference.quality_span(), test.quality_span())
}

/// Mean of `test(x) - reference(x)` over `[d1, d2]`, integrating piece by
/// piece between knots so every Simpson panel sees a single cubic.
fn mean_difference(reference: &Interpolant, test: &Interpolant, span: OverlapInterval) -> Result<f64, CurveError> {
    let mut breaks: Vec<f64> = reference
        .xs()
        .iter()
        .chain(test.xs())
        .copied()
        .filter(|&x| x > span.d1 && x < span.d2)
        .collect();
    breaks.push(span.d1);
    breaks.push(span.d2);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let diff = |x: f64| match (test.eval(x), reference.eval(x)) {
        (Ok(t), Ok(r)) => t - r,
        _ => f64::NAN,
    };
    let width = span.width();
    let integral: f64 = breaks
        .windows(2)
        .map(|w| adaptive_simpson(&diff, w[0], w[1], QUADRATURE_TOL * (w[1] - w[0])))
        .sum();
    let mean = integral / width;
    if mean.is_finite() {
        Ok(mean)
    } else {
        Err(CurveError::NonFinite)
    }
}

pub fn bd_rate(reference: &RDCurve, test: &RDCurve) -> Result<f64, CurveError> {
    bd_rate_with(reference, test, BdOptions::default())
}

/// Average bitrate difference of `test` against `reference` at equal
/// quality, in percent. Negative means `test` needs fewer bits.
pub fn bd_rate_with(reference: &RDCurve, test: &RDCurve, opts: BdOptions) -> Result<f64, CurveError> {
    opts.check(reference)?;
    opts.check(test)?;
    let span = quality_overlap(reference, test)?;
    let delta = mean_difference(&reference.rate_interpolant()?, &test.rate_interpolant()?, span)?;
    Ok((10f64.powf(delta) - 1.0) * 100.0)
}

pub fn bd_quality(reference: &RDCurve, test: &RDCurve) -> Result<f64, CurveError> {
    bd_quality_with(reference, test, BdOptions::default())
}

/// Average quality difference in dB at equal log-rate. Positive means
/// `test` is better.
pub fn bd_quality_with(reference: &RDCurve, test: &RDCurve, opts: BdOptions) -> Result<f64, CurveError> {
    opts.check(reference)?;
    opts.check(test)?;
    let span = OverlapInterval::of(reference.log_rate_span(), test.log_rate_span())?;
    mean_difference(&reference.quality_interpolant()?, &test.quality_interpolant()?, span)
}

pub fn matched_qp_savings(reference: &RDCurve, test: &RDCurve, qp: i32) -> Result<f64, CurveError> {
    let r = reference.point_at(qp).ok_or(CurveError::MissingPoint { qp, which: "reference" })?;
    let t = test.point_at(qp).ok_or(CurveError::MissingPoint { qp, which: "test" })?;
    Ok((t.bitrate_kbps - r.bitrate_kbps) / r.bitrate_kbps * 100.0)
}

fn shared_ladder(reference: &RDCurve, test: &RDCurve) -> Result<Vec<i32>, CurveError> {
    let a = reference.ladder();
    let b = test.ladder();
    if a != b {
        return Err(CurveError::LadderMismatch { reference: a, test: b });
    }
    Ok(a)
}

/// Arithmetic mean of the per-QP bitrate change over the full ladder.
pub fn mean_matched_savings(reference: &RDCurve, test: &RDCurve) -> Result<f64, CurveError> {
    let ladder = shared_ladder(reference, test)?;
    let mut sum = 0.0;
    for &qp in &ladder {
        sum += matched_qp_savings(reference, test, qp)?;
    }
    Ok(sum / ladder.len() as f64)
}

/// Mean per-QP VMAF difference (test minus reference); `None` unless every
/// point on both curves carries a VMAF score.
pub fn mean_vmaf_change(reference: &RDCurve, test: &RDCurve) -> Result<Option<f64>, CurveError> {
    let ladder = shared_ladder(reference, test)?;
    let mut sum = 0.0;
    for &qp in &ladder {
        let r = reference.point_at(qp).and_then(|p| p.vmaf);
        let t = test.point_at(qp).and_then(|p| p.vmaf);
        match (r, t) {
            (Some(r), Some(t)) => sum += t - r,
            _ => return Ok(None),
        }
    }
    Ok(Some(sum / ladder.len() as f64))
}

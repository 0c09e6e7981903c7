//! Parametric stand-in for a patched encoder.
//!
//! Rate falls with `k` because the keyframe share of the bitstream
//! (`beta`) shrinks as `k^-gamma`; quality is a concave function of `ln k`
//! peaking at the clip's latent `k_star`. At `k = 1` both terms reduce to
//! the unscaled curve exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{sha256_hex, ClipSpec, EncodeError, EncodeJob, EncoderBackend};
use crate::curve::{db_to_msssim, RDPoint};
use crate::lambda::ScaleFactor;

/// Fields omitted from a model file take their default values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticClipModel {
    /// Rate scale in kbps.
    pub r0: f64,
    /// Per-QP exponential rate decay.
    pub b: f64,
    /// Fraction of bits spent on the frames whose lambda is scaled.
    pub beta: f64,
    pub gamma: f64,
    /// Quality intercept in dB.
    pub s0: f64,
    /// Per-QP quality slope in dB.
    pub a: f64,
    /// Curvature of the quality response to `ln k`.
    pub c: f64,
    pub k_star: f64,
    pub noise_seed: Option<u64>,
}

impl Default for SyntheticClipModel {
    fn default() -> Self {
        SyntheticClipModel {
            r0: 30000.0,
            b: 0.09,
            beta: 0.35,
            gamma: 1.0,
            s0: 26.0,
            a: 0.28,
            c: 0.8,
            k_star: 2.5,
            noise_seed: None,
        }
    }
}

const NOISE_RATE_FRACTION: f64 = 0.005;
const NOISE_DB: f64 = 0.02;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in [-1, 1), reproducible from its inputs.
fn noise(seed: u64, qp: i32, k: ScaleFactor, stream: u64) -> f64 {
    let h = splitmix64(seed ^ splitmix64((qp as u64) << 32 ^ stream) ^ splitmix64(k.quantized() as u64));
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

impl SyntheticClipModel {
    pub fn validate(&self) -> Result<(), EncodeError> {
        let positive = [
            ("r0", self.r0),
            ("b", self.b),
            ("gamma", self.gamma),
            ("s0", self.s0),
            ("a", self.a),
            ("c", self.c),
            ("k_star", self.k_star),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(EncodeError::Domain(format!("synthetic parameter {name} must be positive, got {v}")));
            }
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(EncodeError::Domain(format!("synthetic beta must lie in (0, 1), got {}", self.beta)));
        }
        Ok(())
    }

    pub fn bitrate_kbps(&self, qp: i32, k: ScaleFactor) -> f64 {
        let scaled_share = 1.0 + self.beta * (k.get().powf(-self.gamma) - 1.0);
        self.r0 * (-self.b * qp as f64).exp() * scaled_share
    }

    pub fn quality_db(&self, qp: i32, k: ScaleFactor) -> f64 {
        let lk = k.get().ln();
        let ls = self.k_star.ln();
        self.s0 - self.a * qp as f64 - self.c * ((lk - ls).powi(2) - ls.powi(2))
    }

    /// Fixed affine map of quality; only there so VMAF columns populate.
    pub fn vmaf(db: f64) -> f64 {
        (4.0 * db + 20.0).clamp(0.0, 100.0)
    }
}

pub fn synth_encode(model: &SyntheticClipModel, qp: i32, k: ScaleFactor) -> Result<RDPoint, EncodeError> {
    model.validate()?;
    if qp < 0 {
        return Err(EncodeError::Domain(format!("qp {qp} is negative")));
    }
    let mut rate = model.bitrate_kbps(qp, k);
    let mut db = model.quality_db(qp, k);
    if let Some(seed) = model.noise_seed {
        rate *= 1.0 + NOISE_RATE_FRACTION * noise(seed, qp, k, 1);
        db += NOISE_DB * noise(seed, qp, k, 2);
    }
    if !(db > 0.0 && db.is_finite()) {
        return Err(EncodeError::Domain(format!("synthetic quality at qp {qp}, k {k} fell to {db:.3} dB")));
    }
    let point = RDPoint {
        qp,
        bitrate_kbps: rate,
        msssim: db_to_msssim(db),
        msssim_db: db,
        vmaf: Some(SyntheticClipModel::vmaf(db)),
    };
    point.validate()?;
    Ok(point)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClip {
    pub id: String,
    pub model: SyntheticClipModel,
}

/// A set of synthetic clips. On disk either a single model object or an
/// array of `{id, model}` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SyntheticSuite {
    pub clips: Vec<SyntheticClip>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SuiteFile {
    Single(SyntheticClipModel),
    Many(Vec<SyntheticClip>),
}

impl SyntheticSuite {
    pub const DEFAULT_CLIP: &'static str = "synthetic";

    pub fn single(id: impl Into<String>, model: SyntheticClipModel) -> Self {
        SyntheticSuite { clips: vec![SyntheticClip { id: id.into(), model }] }
    }

    pub fn default_suite() -> Self {
        Self::single(Self::DEFAULT_CLIP, SyntheticClipModel::default())
    }

    pub fn from_json(bytes: &[u8], single_id: &str) -> Result<Self, EncodeError> {
        let parsed: SuiteFile =
            serde_json::from_slice(bytes).map_err(|e| EncodeError::Domain(format!("bad synthetic model file: {e}")))?;
        let suite = match parsed {
            SuiteFile::Single(m) => Self::single(single_id, m),
            SuiteFile::Many(clips) => SyntheticSuite { clips },
        };
        suite.validate()?;
        Ok(suite)
    }

    /// `default` selects the built-in model; anything else is a file path.
    pub fn load(spec: &str) -> Result<Self, EncodeError> {
        if spec == "default" {
            return Ok(Self::default_suite());
        }
        let path = Path::new(spec);
        let bytes = std::fs::read(path).map_err(|e| EncodeError::io(path, e))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(Self::DEFAULT_CLIP);
        Self::from_json(&bytes, stem)
    }

    pub fn validate(&self) -> Result<(), EncodeError> {
        if self.clips.is_empty() {
            return Err(EncodeError::Domain("synthetic suite has no clips".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.clips {
            c.model.validate()?;
            if !seen.insert(&c.id) {
                return Err(EncodeError::Domain(format!("duplicate synthetic clip id `{}`", c.id)));
            }
        }
        Ok(())
    }

    pub fn clip_specs(&self) -> Vec<ClipSpec> {
        self.clips.iter().map(|c| ClipSpec::synthetic(c.id.clone())).collect()
    }
}

pub struct SyntheticBackend {
    models: BTreeMap<String, SyntheticClipModel>,
}

impl SyntheticBackend {
    pub fn new(suite: &SyntheticSuite) -> Result<Self, EncodeError> {
        suite.validate()?;
        Ok(SyntheticBackend { models: suite.clips.iter().map(|c| (c.id.clone(), c.model.clone())).collect() })
    }

    fn model(&self, clip_id: &str) -> Result<&SyntheticClipModel, EncodeError> {
        self.models.get(clip_id).ok_or_else(|| EncodeError::UnknownClip(clip_id.to_string()))
    }
}

impl EncoderBackend for SyntheticBackend {
    fn encode(&self, job: &EncodeJob) -> Result<RDPoint, EncodeError> {
        synth_encode(self.model(job.clip_id())?, job.qp, job.k)
    }

    fn template_digest(&self) -> String {
        sha256_hex(&[b"synthetic-v1"])
    }

    fn clip_identity(&self, clip: &ClipSpec) -> Result<String, EncodeError> {
        let model = serde_json::to_vec(self.model(&clip.id)?).map_err(|e| EncodeError::Domain(e.to_string()))?;
        Ok(sha256_hex(&[clip.id.as_bytes(), &model]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(v: f64) -> ScaleFactor {
        ScaleFactor::new(v).unwrap()
    }

    #[test]
    fn unit_scale_is_the_unscaled_curve() {
        let m = SyntheticClipModel::default();
        for qp in [27, 39, 49, 59, 63] {
            let p = synth_encode(&m, qp, ScaleFactor::DEFAULT).unwrap();
            assert_eq!(p.msssim_db, m.s0 - m.a * qp as f64);
            assert_eq!(p.bitrate_kbps, m.r0 * (-m.b * qp as f64).exp());
        }
    }

    #[test]
    fn rate_decreases_in_qp_and_k() {
        let m = SyntheticClipModel::default();
        for qp in 0..63 {
            assert!(m.bitrate_kbps(qp + 1, k(1.3)) < m.bitrate_kbps(qp, k(1.3)));
        }
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let r = m.bitrate_kbps(39, k((-2.7 + i as f64 * 0.027).exp()));
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn quality_peaks_at_k_star() {
        let m = SyntheticClipModel::default();
        let peak = m.quality_db(39, k(m.k_star));
        for v in [0.5, 1.0, 2.0, 2.49, 2.51, 4.0, 10.0] {
            assert!(m.quality_db(39, k(v)) < peak);
        }
        // Strict concavity in ln k: second differences are negative.
        let h = 0.1;
        for i in -20..20 {
            let u = i as f64 * 0.1;
            let f = |u: f64| m.quality_db(39, ScaleFactor::from_log(u).unwrap());
            assert!(f(u - h) + f(u + h) - 2.0 * f(u) < 0.0);
        }
    }

    #[test]
    fn noise_is_reproducible() {
        let m = SyntheticClipModel { noise_seed: Some(7), ..Default::default() };
        let a = synth_encode(&m, 39, k(1.7)).unwrap();
        let b = synth_encode(&m, 39, k(1.7)).unwrap();
        assert_eq!(a, b);
        let clean = synth_encode(&SyntheticClipModel::default(), 39, k(1.7)).unwrap();
        assert_ne!(a.bitrate_kbps, clean.bitrate_kbps);
        assert!((a.msssim_db - clean.msssim_db).abs() <= NOISE_DB);
    }

    #[test]
    fn parameter_validation() {
        let bad = SyntheticClipModel { beta: 1.0, ..Default::default() };
        assert!(synth_encode(&bad, 39, ScaleFactor::DEFAULT).is_err());
        let bad = SyntheticClipModel { c: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(synth_encode(&SyntheticClipModel::default(), -1, ScaleFactor::DEFAULT).is_err());
    }

    #[test]
    fn suite_formats() {
        let single = serde_json::to_vec(&SyntheticClipModel::default()).unwrap();
        let s = SyntheticSuite::from_json(&single, "dinner").unwrap();
        assert_eq!(s.clips[0].id, "dinner");
        let many = br#"[{"id": "a", "model": {"r0": 1000, "b": 0.1, "beta": 0.3, "gamma": 1, "s0": 20, "a": 0.2, "c": 1, "k_star": 1.5}},
                        {"id": "b", "model": {"r0": 2000, "b": 0.1, "beta": 0.3, "gamma": 1, "s0": 20, "a": 0.2, "c": 1, "k_star": 0.7}}]"#;
        let s = SyntheticSuite::from_json(many, "x").unwrap();
        assert_eq!(s.clips.len(), 2);
        let partial = SyntheticSuite::from_json(b"{\"k_star\": 1.2}", "x").unwrap();
        assert_eq!(partial.clips[0].model, SyntheticClipModel { k_star: 1.2, ..Default::default() });
        assert!(SyntheticSuite::from_json(b"{\"kstar\": 1}", "x").is_err());
        assert_eq!(SyntheticSuite::load("default").unwrap(), SyntheticSuite::default_suite());
    }
}

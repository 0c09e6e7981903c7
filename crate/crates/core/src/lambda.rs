//! Codec lambda/QP relationships and the per-clip scale factor `k`.
//!
//! The harness never hands lambda values to a real encoder: patched encoders
//! take `k` on the command line and apply it to their own internal default.
//! The functions here exist for reporting and for model-based simulation.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LambdaError {
    #[error("qp {qp} is outside the {codec} range [0, {max}]")]
    QpOutOfRange { codec: CodecId, qp: i32, max: i32 },
    #[error("scale factor must be a positive finite number, got {0}")]
    InvalidScale(f64),
    #[error("lambda must be a positive finite number, got {0}")]
    InvalidLambda(f64),
    #[error("AV1 lambda requires q_dc parameters")]
    MissingAv1Params,
    #[error("q_dc table has no entry for q_i = {0}")]
    MissingQdcEntry(i32),
    #[error("A = {0} is outside [3.2, 3.3]")]
    InvalidA(f64),
    #[error("invalid q_dc table: {0}")]
    InvalidTable(String),
    #[error("frame group {group} is not defined for {codec}")]
    GroupCodecMismatch { group: FrameTypeGroup, codec: CodecId },
    #[error("unknown {kind} `{value}`")]
    Unknown { kind: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CodecId {
    #[serde(rename = "AV1")]
    Av1,
    #[serde(rename = "HEVC")]
    Hevc,
}

impl CodecId {
    pub fn max_qp(self) -> i32 {
        match self {
            CodecId::Av1 => 63,
            CodecId::Hevc => 51,
        }
    }

    /// The constant-QP ladder used for the RD curves.
    pub fn default_ladder(self) -> Vec<i32> {
        match self {
            CodecId::Av1 => vec![27, 39, 49, 59, 63],
            CodecId::Hevc => vec![22, 27, 32, 37, 42],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CodecId::Av1 => "AV1",
            CodecId::Hevc => "HEVC",
        }
    }
}

impl fmt::Display for CodecId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CodecId {
    type Err = LambdaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "AV1" => Ok(CodecId::Av1),
            "HEVC" => Ok(CodecId::Hevc),
            _ => Err(LambdaError::Unknown { kind: "codec", value: s.to_string() }),
        }
    }
}

/// Frame types whose lambda is scaled. Every other frame type keeps the
/// codec default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrameTypeGroup {
    AllFrames,
    #[serde(rename = "KF")]
    Kf,
    #[serde(rename = "GF_ARF")]
    GfArf,
    #[serde(rename = "KF_GF_ARF")]
    KfGfArf,
    IFrames,
    BFrames,
}

impl FrameTypeGroup {
    pub const ALL: [FrameTypeGroup; 6] = [
        FrameTypeGroup::AllFrames,
        FrameTypeGroup::Kf,
        FrameTypeGroup::GfArf,
        FrameTypeGroup::KfGfArf,
        FrameTypeGroup::IFrames,
        FrameTypeGroup::BFrames,
    ];

    pub fn is_valid_for(self, codec: CodecId) -> bool {
        use FrameTypeGroup::*;
        match codec {
            CodecId::Av1 => matches!(self, AllFrames | Kf | GfArf | KfGfArf),
            CodecId::Hevc => matches!(self, AllFrames | IFrames | BFrames),
        }
    }

    pub fn check(self, codec: CodecId) -> Result<(), LambdaError> {
        if self.is_valid_for(codec) {
            Ok(())
        } else {
            Err(LambdaError::GroupCodecMismatch { group: self, codec })
        }
    }

    pub fn groups_for(codec: CodecId) -> Vec<FrameTypeGroup> {
        Self::ALL.into_iter().filter(|g| g.is_valid_for(codec)).collect()
    }

    /// Flag value forwarded to patched encoders.
    pub fn as_str(self) -> &'static str {
        match self {
            FrameTypeGroup::AllFrames => "AllFrames",
            FrameTypeGroup::Kf => "KF",
            FrameTypeGroup::GfArf => "GF_ARF",
            FrameTypeGroup::KfGfArf => "KF_GF_ARF",
            FrameTypeGroup::IFrames => "IFrames",
            FrameTypeGroup::BFrames => "BFrames",
        }
    }
}

impl fmt::Display for FrameTypeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FrameTypeGroup {
    type Err = LambdaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|g| g.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| LambdaError::Unknown { kind: "frame group", value: s.to_string() })
    }
}

/// Which decisions inside the targeted frames see the scaled lambda.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LambdaScope {
    /// Every RD decision in the targeted frames.
    Top,
    /// Only the block partitioning decision.
    Partition,
}

impl LambdaScope {
    pub fn as_str(self) -> &'static str {
        match self {
            LambdaScope::Top => "Top",
            LambdaScope::Partition => "Partition",
        }
    }
}

impl fmt::Display for LambdaScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LambdaScope {
    type Err = LambdaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "top" => Ok(LambdaScope::Top),
            "partition" => Ok(LambdaScope::Partition),
            _ => Err(LambdaError::Unknown { kind: "scope", value: s.to_string() }),
        }
    }
}

/// Multiplier applied to the codec default lambda. `k = 1` is the default.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ScaleFactor(f64);

impl ScaleFactor {
    pub const DEFAULT: ScaleFactor = ScaleFactor(1.0);

    pub fn new(k: f64) -> Result<Self, LambdaError> {
        if k.is_finite() && k > 0.0 {
            Ok(ScaleFactor(k))
        } else {
            Err(LambdaError::InvalidScale(k))
        }
    }

    pub fn from_log(log_k: f64) -> Result<Self, LambdaError> {
        Self::new(log_k.exp())
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn is_default(self) -> bool {
        self.0 == 1.0
    }

    /// `k` snapped to a 1e-6 grid, used wherever two scale factors must
    /// compare equal (cache keys, memoization).
    pub fn quantized(self) -> i64 {
        (self.0 * 1e6).round() as i64
    }
}

impl TryFrom<f64> for ScaleFactor {
    type Error = LambdaError;

    fn try_from(k: f64) -> Result<Self, Self::Error> {
        Self::new(k)
    }
}

impl From<ScaleFactor> for f64 {
    fn from(k: ScaleFactor) -> f64 {
        k.0
    }
}

impl fmt::Display for ScaleFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// AV1 DC quantizer step lookup, indexed by `q_i` in `[0, 63]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QdcTable {
    values: Vec<f64>,
}

impl QdcTable {
    pub fn new(values: Vec<f64>) -> Result<Self, LambdaError> {
        let expected = CodecId::Av1.max_qp() as usize + 1;
        if values.len() != expected {
            return Err(LambdaError::InvalidTable(format!(
                "expected {expected} entries, found {}",
                values.len()
            )));
        }
        for (q, w) in values.windows(2).enumerate() {
            if w[1] < w[0] {
                return Err(LambdaError::InvalidTable(format!("q_dc decreases at q_i = {}", q + 1)));
            }
        }
        if let Some(q) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(LambdaError::InvalidTable(format!("q_dc must be positive at q_i = {q}")));
        }
        Ok(QdcTable { values })
    }

    /// Reads the two-column `q_i,q_dc` CSV. A header row is required and
    /// every `q_i` in `[0, 63]` must appear exactly once.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, LambdaError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| LambdaError::InvalidTable(e.to_string()))?.clone();
        if headers.len() != 2
            || !headers[0].eq_ignore_ascii_case("q_i")
            || !headers[1].eq_ignore_ascii_case("q_dc")
        {
            return Err(LambdaError::InvalidTable(format!(
                "header must be `q_i,q_dc`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let n = CodecId::Av1.max_qp() as usize + 1;
        let mut slots: Vec<Option<f64>> = vec![None; n];
        for row in rdr.records() {
            let row = row.map_err(|e| LambdaError::InvalidTable(e.to_string()))?;
            let qi: i32 = row[0]
                .parse()
                .map_err(|_| LambdaError::InvalidTable(format!("bad q_i `{}`", &row[0])))?;
            let qdc: f64 = row[1]
                .parse()
                .map_err(|_| LambdaError::InvalidTable(format!("bad q_dc `{}`", &row[1])))?;
            if !validate_qp(CodecId::Av1, qi) {
                return Err(LambdaError::InvalidTable(format!("q_i {qi} outside [0, 63]")));
            }
            let slot = &mut slots[qi as usize];
            if slot.is_some() {
                return Err(LambdaError::InvalidTable(format!("duplicate q_i {qi}")));
            }
            *slot = Some(qdc);
        }
        if let Some(missing) = slots.iter().position(Option::is_none) {
            return Err(LambdaError::MissingQdcEntry(missing as i32));
        }
        Self::new(slots.into_iter().flatten().collect())
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, LambdaError> {
        let file = std::fs::File::open(path)
            .map_err(|e| LambdaError::InvalidTable(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(file)
    }

    pub fn get(&self, qi: i32) -> Option<f64> {
        usize::try_from(qi).ok().and_then(|i| self.values.get(i)).copied()
    }
}

/// Frame-type dependent constant `A` in the AV1 relationship.
pub const AV1_A_KEY_FRAME: f64 = 3.3;
pub const AV1_A_INTER_FRAME: f64 = 3.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Av1LambdaParams {
    pub a: f64,
    pub qdc_table: QdcTable,
}

impl Av1LambdaParams {
    pub fn new(a: f64, qdc_table: QdcTable) -> Result<Self, LambdaError> {
        if !(AV1_A_INTER_FRAME..=AV1_A_KEY_FRAME).contains(&a) {
            return Err(LambdaError::InvalidA(a));
        }
        Ok(Av1LambdaParams { a, qdc_table })
    }

    pub fn key_frame(qdc_table: QdcTable) -> Self {
        Av1LambdaParams { a: AV1_A_KEY_FRAME, qdc_table }
    }

    pub fn inter_frame(qdc_table: QdcTable) -> Self {
        Av1LambdaParams { a: AV1_A_INTER_FRAME, qdc_table }
    }
}

pub fn validate_qp(codec: CodecId, qp: i32) -> bool {
    (0..=codec.max_qp()).contains(&qp)
}

pub fn check_qp(codec: CodecId, qp: i32) -> Result<(), LambdaError> {
    if validate_qp(codec, qp) {
        Ok(())
    } else {
        Err(LambdaError::QpOutOfRange { codec, qp, max: codec.max_qp() })
    }
}

/// Codec default lambda for `qp`.
///
/// HEVC: `0.57 * 2^((qp - 12) / 3)`. AV1: `q_dc^2 * (A + 0.0035 * qp)` with
/// `q_dc` from the lookup table in `params`.
pub fn lambda_default(codec: CodecId, qp: i32, params: Option<&Av1LambdaParams>) -> Result<f64, LambdaError> {
    check_qp(codec, qp)?;
    match codec {
        CodecId::Hevc => Ok(0.57 * ((qp - 12) as f64 / 3.0).exp2()),
        CodecId::Av1 => {
            let params = params.ok_or(LambdaError::MissingAv1Params)?;
            let qdc = params.qdc_table.get(qp).ok_or(LambdaError::MissingQdcEntry(qp))?;
            Ok(qdc * qdc * (params.a + 0.0035 * qp as f64))
        }
    }
}

pub fn scale_lambda(lambda0: f64, k: ScaleFactor) -> Result<f64, LambdaError> {
    if !(lambda0.is_finite() && lambda0 > 0.0) {
        return Err(LambdaError::InvalidLambda(lambda0));
    }
    Ok(k.get() * lambda0)
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn default_lambda_positive(qp in 0i32..=51) {
            prop_assert!(lambda_default(CodecId::Hevc, qp, None).unwrap() > 0.0);
        }

        #[test]
        fn scale_is_linear(l in 1e-3f64..1e6, k1 in 1e-3f64..100.0, k2 in 1e-3f64..100.0) {
            let a = scale_lambda(l, ScaleFactor::new(k1).unwrap()).unwrap();
            let b = scale_lambda(l, ScaleFactor::new(k2).unwrap()).unwrap();
            let ab = scale_lambda(l, ScaleFactor::new(k1 + k2).unwrap()).unwrap();
            prop_assert!((a + b - ab).abs() <= 1e-9 * ab.abs());
            prop_assert_eq!(scale_lambda(l, ScaleFactor::DEFAULT).unwrap(), l);
        }
    }
}

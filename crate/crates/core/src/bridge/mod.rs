//! Encode a clip at `(qp, k, group, scope)` and measure the resulting RD
//! point, either through external encoder/metric processes or through a
//! parametric synthetic model.

mod external;
mod metric;
mod synthetic;
mod template;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{CurveError, RDPoint};
use crate::lambda::{check_qp, CodecId, FrameTypeGroup, LambdaError, LambdaScope, ScaleFactor};

pub use external::{encode_measure, ExternalBackend};
pub use metric::{parse_metric_report, MetricKeys};
pub use synthetic::{synth_encode, SyntheticBackend, SyntheticClip, SyntheticClipModel, SyntheticSuite};
pub use template::{CommandTemplate, Placeholder};

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("invalid job: {0}")]
    Job(#[from] LambdaError),
    #[error("invalid command template: {0}")]
    Template(String),
    #[error("failed to start `{program}`: {source}")]
    Spawn { program: String, source: std::io::Error },
    #[error("{stage} exited with {status}: {output}")]
    ProcessFailed { stage: &'static str, status: String, output: String },
    #[error("malformed metric report: {0}")]
    ReportParse(String),
    #[error("metric report has no numeric value at `{0}`")]
    MissingKey(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unknown clip `{0}`")]
    UnknownClip(String),
    #[error(transparent)]
    Curve(#[from] CurveError),
}

impl EncodeError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        EncodeError::Io { path: path.to_path_buf(), source }
    }
}

/// One entry of the clip manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub id: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
    pub frame_rate: f64,
    pub pix_fmt: String,
}

impl ClipSpec {
    /// Placeholder entry for clips that only exist as synthetic models.
    pub fn synthetic(id: impl Into<String>) -> Self {
        let id = id.into();
        ClipSpec {
            path: PathBuf::from(format!("synthetic:{id}")),
            id,
            width: 1920,
            height: 1080,
            frame_count: 130,
            frame_rate: 30.0,
            pix_fmt: "yuv420p".into(),
        }
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frame_count as f64 / self.frame_rate
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("clip id is empty".into());
        }
        if self.frame_count == 0 {
            return Err(format!("clip `{}` has zero frames", self.id));
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(format!("clip `{}` has frame rate {}", self.id, self.frame_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("manifest {path} is not a valid clip list: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("manifest {path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

/// Parses a JSON array of clip entries.
pub fn load_manifest(path: &Path) -> Result<Vec<ClipSpec>, ManifestError> {
    let bytes = std::fs::read(path).map_err(|source| ManifestError::Read { path: path.into(), source })?;
    let clips: Vec<ClipSpec> =
        serde_json::from_slice(&bytes).map_err(|source| ManifestError::Parse { path: path.into(), source })?;
    let invalid = |reason: String| ManifestError::Invalid { path: path.into(), reason };
    if clips.is_empty() {
        return Err(invalid("no clips".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for clip in &clips {
        clip.validate().map_err(invalid)?;
        if !seen.insert(clip.id.as_str()) {
            return Err(invalid(format!("duplicate clip id `{}`", clip.id)));
        }
    }
    Ok(clips)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeJob {
    pub clip: ClipSpec,
    pub codec: CodecId,
    pub qp: i32,
    pub k: ScaleFactor,
    pub group: FrameTypeGroup,
    pub scope: LambdaScope,
    pub work_dir: PathBuf,
}

impl EncodeJob {
    pub fn new(
        clip: ClipSpec,
        codec: CodecId,
        qp: i32,
        k: ScaleFactor,
        group: FrameTypeGroup,
        scope: LambdaScope,
        work_dir: PathBuf,
    ) -> Result<Self, EncodeError> {
        check_qp(codec, qp)?;
        group.check(codec)?;
        Ok(EncodeJob { clip, codec, qp, k, group, scope, work_dir })
    }

    pub fn clip_id(&self) -> &str {
        &self.clip.id
    }

    pub fn input_path(&self) -> &Path {
        &self.clip.path
    }
}

/// Anything that can turn an encode job into a measured RD point.
pub trait EncoderBackend: Send + Sync {
    fn encode(&self, job: &EncodeJob) -> Result<RDPoint, EncodeError>;

    /// Digest of everything besides the job that determines the result
    /// (command templates, model parameters).
    fn template_digest(&self) -> String;

    /// Stable identity of the clip content.
    fn clip_identity(&self, clip: &ClipSpec) -> Result<String, EncodeError>;
}

pub(crate) fn sha256_hex(parts: &[&[u8]]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

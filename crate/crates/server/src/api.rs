//! Request and response bodies shared by the server and its clients.

use std::path::PathBuf;

use lambdatune_core::bridge::{CommandTemplate, MetricKeys, SyntheticSuite};
use lambdatune_core::opt::OptimizerConfig;
use lambdatune_core::report::SummaryRow;
use lambdatune_core::sweep::{OptimizationResult, SweepConfig, SweepOutcome};
use lambdatune_core::{CodecId, RDCurve, ScaleFactor};
use serde::{Deserialize, Serialize};

/// Where RD points come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Synthetic { suite: SyntheticSuite },
    /// Paths are resolved on the server host.
    External { manifest: PathBuf, templates: CommandTemplate, #[serde(default)] metric_keys: MetricKeys },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaRequest {
    pub codec: CodecId,
    pub qp: i32,
    #[serde(default = "unit_k")]
    pub k: ScaleFactor,
    /// AV1 only: q_dc CSV on the server host.
    #[serde(default)]
    pub qdc_table: Option<PathBuf>,
    /// AV1 only: the `A` coefficient.
    #[serde(default)]
    pub a: Option<f64>,
}

fn unit_k() -> ScaleFactor {
    ScaleFactor::DEFAULT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaResponse {
    pub lambda0: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BdRateRequest {
    pub reference: RDCurve,
    pub test: RDCurve,
    #[serde(default)]
    pub min_points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdRateResponse {
    pub bd_rate: f64,
    pub bd_quality: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRequest {
    pub backend: BackendSpec,
    /// Every clip of the backend when empty.
    #[serde(default)]
    pub clips: Vec<String>,
    pub k: ScaleFactor,
    pub config: SweepConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResponse {
    pub sweeps: Vec<SweepOutcome>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeRequest {
    pub backend: BackendSpec,
    #[serde(default)]
    pub clips: Vec<String>,
    pub config: SweepConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipFailure {
    pub clip: String,
    pub error: ApiError,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeResponse {
    pub results: Vec<OptimizationResult>,
    pub failures: Vec<ClipFailure>,
    /// Backend calls made while serving this request.
    pub encoder_invocations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Text,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRequest {
    pub results: Vec<OptimizationResult>,
    #[serde(default)]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportResponse {
    pub rows: Vec<SummaryRow>,
    pub rendered: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotRequest {
    pub curves: Vec<RDCurve>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotResponse {
    pub svg: String,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BudgetResponse {
    pub invocations: u64,
}

/// Error body. `stage` names the step that failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub stage: String,
    pub message: String,
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.message)
    }
}

impl std::error::Error for ApiError {}

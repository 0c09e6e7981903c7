//! HTTP/JSON service over the tuning pipeline.

pub mod api;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Json, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use lambdatune_core::bridge::{
    load_manifest, ClipSpec, EncoderBackend, ExternalBackend, SyntheticBackend,
};
use lambdatune_core::curve::{bd_quality_with, bd_rate_with, BdOptions};
use lambdatune_core::lambda::{lambda_default, scale_lambda, Av1LambdaParams, QdcTable, AV1_A_KEY_FRAME};
use lambdatune_core::plot::render_plot;
use lambdatune_core::report::{render_csv, render_text, summarize};
use lambdatune_core::sweep::{predict_budget, InvocationBudget, Limiter, Orchestrator, RunStore, SweepError};
use lambdatune_core::CodecId;
use tokio::net::TcpListener;

use api::*;

/// Cap on concurrent encodes across all requests.
pub const DEFAULT_MAX_ENCODES: usize = 16;

pub struct AppState {
    stores: Mutex<HashMap<PathBuf, Arc<RunStore>>>,
    limiter: Arc<Limiter>,
}

impl AppState {
    pub fn new(max_encodes: usize) -> Arc<Self> {
        Arc::new(AppState { stores: Mutex::new(HashMap::new()), limiter: Arc::new(Limiter::new(max_encodes)) })
    }

    /// One store per cache directory so concurrent requests share a
    /// single ledger writer.
    fn store(&self, dir: Option<&PathBuf>) -> Result<Arc<RunStore>, SweepError> {
        let Some(dir) = dir else { return Ok(Arc::new(RunStore::in_memory())) };
        let mut stores = self.stores.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(s) = stores.get(dir) {
            return Ok(s.clone());
        }
        let store = Arc::new(RunStore::open(dir)?);
        stores.insert(dir.clone(), store.clone());
        Ok(store)
    }
}

pub struct Failure {
    status: StatusCode,
    body: ApiError,
}

impl Failure {
    fn new(status: StatusCode, stage: &str, message: impl ToString) -> Self {
        Failure { status, body: ApiError { stage: stage.into(), message: message.to_string() } }
    }

    fn bad(stage: &str, message: impl ToString) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, stage, message)
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn sweep_failure(e: SweepError) -> Failure {
    let stage = match &e {
        SweepError::Config(_) | SweepError::Lambda(_) => "config",
        SweepError::JobFailed { .. } | SweepError::Encode(_) => "encode",
        SweepError::Curve(_) => "bdrate",
        SweepError::Optimizer(_) => "optimize",
        SweepError::Cache(_) | SweepError::Io { .. } => "cache",
    };
    let status = match &e {
        SweepError::Config(_) | SweepError::Lambda(_) | SweepError::Optimizer(_) => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    Failure::new(status, stage, e)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Failure> + Send + 'static) -> Result<T, Failure> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Failure::new(StatusCode::INTERNAL_SERVER_ERROR, "server", e))?
}

type Resolved = (Arc<dyn EncoderBackend>, Vec<ClipSpec>);

fn resolve(spec: &BackendSpec, wanted: &[String]) -> Result<Resolved, Failure> {
    let (backend, clips): Resolved = match spec {
        BackendSpec::Synthetic { suite } => {
            let backend = SyntheticBackend::new(suite).map_err(|e| Failure::bad("synthetic model", e))?;
            (Arc::new(backend), suite.clip_specs())
        }
        BackendSpec::External { manifest, templates, metric_keys } => {
            let clips = load_manifest(manifest).map_err(|e| Failure::bad("manifest", e))?;
            let backend = ExternalBackend::new(templates.clone(), metric_keys.clone())
                .map_err(|e| Failure::bad("command template", e))?;
            (Arc::new(backend), clips)
        }
    };
    if wanted.is_empty() {
        return Ok((backend, clips));
    }
    let mut picked = Vec::with_capacity(wanted.len());
    for id in wanted {
        let clip = clips.iter().find(|c| &c.id == id).ok_or_else(|| Failure::bad("manifest", format!("unknown clip `{id}`")))?;
        picked.push(clip.clone());
    }
    Ok((backend, picked))
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn lambda(Json(req): Json<LambdaRequest>) -> Result<Json<LambdaResponse>, Failure> {
    let params = match req.codec {
        CodecId::Hevc => None,
        CodecId::Av1 => {
            let path = req.qdc_table.as_ref().ok_or_else(|| Failure::bad("lambda", "AV1 needs a q_dc table"))?;
            let table = QdcTable::from_csv_path(path).map_err(|e| Failure::bad("lambda", e))?;
            Some(Av1LambdaParams::new(req.a.unwrap_or(AV1_A_KEY_FRAME), table).map_err(|e| Failure::bad("lambda", e))?)
        }
    };
    let lambda0 = lambda_default(req.codec, req.qp, params.as_ref()).map_err(|e| Failure::bad("lambda", e))?;
    let lambda = scale_lambda(lambda0, req.k).map_err(|e| Failure::bad("lambda", e))?;
    Ok(Json(LambdaResponse { lambda0, lambda }))
}

async fn bdrate(Json(req): Json<BdRateRequest>) -> Result<Json<BdRateResponse>, Failure> {
    let opts = match req.min_points {
        Some(n) => BdOptions::with_min_points(n).map_err(|e| Failure::bad("bdrate", e))?,
        None => BdOptions::default(),
    };
    let bd_rate = bd_rate_with(&req.reference, &req.test, opts).map_err(|e| Failure::bad("bdrate", e))?;
    let bd_quality = bd_quality_with(&req.reference, &req.test, opts).map_err(|e| Failure::bad("bdrate", e))?;
    Ok(Json(BdRateResponse { bd_rate, bd_quality }))
}

async fn sweep(State(state): State<Arc<AppState>>, Json(req): Json<SweepRequest>) -> Result<Json<SweepResponse>, Failure> {
    blocking(move || {
        req.config.validate().map_err(sweep_failure)?;
        let (backend, clips) = resolve(&req.backend, &req.clips)?;
        let store = state.store(req.config.cache_dir.as_ref()).map_err(sweep_failure)?;
        let orch = Orchestrator::new(backend, store).with_limiter(state.limiter.clone());
        let sweeps = clips
            .iter()
            .map(|c| orch.run_sweep(c, req.k, &req.config))
            .collect::<Result<Vec<_>, _>>()
            .map_err(sweep_failure)?;
        Ok(Json(SweepResponse { sweeps }))
    })
    .await
}

async fn optimize(
    State(state): State<Arc<AppState>>,
    Json(req): Json<OptimizeRequest>,
) -> Result<Json<OptimizeResponse>, Failure> {
    blocking(move || {
        req.config.validate().map_err(sweep_failure)?;
        req.optimizer.validate().map_err(|e| Failure::bad("optimize", e))?;
        let (backend, clips) = resolve(&req.backend, &req.clips)?;
        let store = state.store(req.config.cache_dir.as_ref()).map_err(sweep_failure)?;
        let orch = Orchestrator::new(backend, store).with_limiter(state.limiter.clone());
        let mut results = Vec::new();
        let mut failures = Vec::new();
        for (clip, outcome) in clips.iter().zip(orch.optimize_all(&clips, &req.config, &req.optimizer)) {
            match outcome {
                Ok(r) => results.push(r),
                Err(e) => failures.push(ClipFailure { clip: clip.id.clone(), error: sweep_failure(e).body }),
            }
        }
        Ok(Json(OptimizeResponse { results, failures, encoder_invocations: orch.backend_invocations() }))
    })
    .await
}

async fn report(Json(req): Json<ReportRequest>) -> Json<ReportResponse> {
    let rows = summarize(&req.results);
    let rendered = match req.format {
        ReportFormat::Text => render_text(&rows),
        ReportFormat::Csv => render_csv(&rows),
    };
    Json(ReportResponse { rows, rendered })
}

async fn plot(Json(req): Json<PlotRequest>) -> Result<Json<PlotResponse>, Failure> {
    let svg = render_plot(&req.curves).map_err(|e| Failure::bad("plot", e))?;
    Ok(Json(PlotResponse { svg }))
}

async fn budget(Json(b): Json<InvocationBudget>) -> Result<Json<BudgetResponse>, Failure> {
    if b.p == 0 || b.n == 0 || b.m == 0 {
        return Err(Failure::bad("budget", "P, N and M must be positive"));
    }
    Ok(Json(BudgetResponse { invocations: predict_budget(b) }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/lambda", post(lambda))
        .route("/v1/bdrate", post(bdrate))
        .route("/v1/sweep", post(sweep))
        .route("/v1/optimize", post(optimize))
        .route("/v1/report", post(report))
        .route("/v1/plot", post(plot))
        .route("/v1/budget", post(budget))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Binds an ephemeral local port and serves in the background.
pub async fn spawn_local(state: Arc<AppState>) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind(("127.0.0.1", 0)).await?;
    let addr = listener.local_addr()?;
    tokio::spawn(async move {
        if let Err(e) = serve(listener, state).await {
            tracing::error!(error = %e, "embedded server stopped");
        }
    });
    Ok(addr)
}

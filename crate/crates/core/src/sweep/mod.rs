//! RD sweeps over a QP ladder, the BD-Rate cost of a scale factor, and the
//! per-clip search for the best one.

mod replay;
mod store;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::{sha256_hex, ClipSpec, EncodeError, EncodeJob, EncoderBackend};
use crate::curve::{
    bd_quality_with, bd_rate_with, matched_qp_savings, mean_matched_savings, mean_vmaf_change, BdOptions, CurveError,
    RDCurve, RDPoint, DEFAULT_MIN_POINTS,
};
use crate::lambda::{check_qp, CodecId, FrameTypeGroup, LambdaError, LambdaScope, ScaleFactor};
use crate::opt::{try_bracket_minimum, try_brent_minimize, OptError, OptimizerConfig, SearchError};

pub use replay::{replay_ledger, ReplayedRun};
pub use store::{read_ledger, LedgerRecord, Limiter, Permit, Phase, RunStore, LEDGER_FILE};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep config: {0}")]
    Config(String),
    #[error(transparent)]
    Lambda(#[from] LambdaError),
    #[error("encode job (qp {qp}, k {k}) for clip `{clip}` failed: {source}")]
    JobFailed { clip: String, qp: i32, k: f64, source: EncodeError },
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Optimizer(#[from] OptError),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub codec: CodecId,
    pub qp_ladder: Vec<i32>,
    pub workers: usize,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    pub group: FrameTypeGroup,
    pub scope: LambdaScope,
    /// Keep encoded media under the cache's work directory.
    #[serde(default)]
    pub keep_media: bool,
    #[serde(default = "default_min_points")]
    pub min_points: usize,
}

fn default_min_points() -> usize {
    DEFAULT_MIN_POINTS
}

pub const DEFAULT_WORKERS: usize = 5;

impl SweepConfig {
    pub fn new(codec: CodecId, group: FrameTypeGroup, scope: LambdaScope) -> Self {
        SweepConfig {
            codec,
            qp_ladder: codec.default_ladder(),
            workers: DEFAULT_WORKERS,
            cache_dir: None,
            group,
            scope,
            keep_media: false,
            min_points: DEFAULT_MIN_POINTS,
        }
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.workers == 0 {
            return Err(SweepError::Config("workers must be at least 1".into()));
        }
        if self.qp_ladder.len() < 2 {
            return Err(SweepError::Config("QP ladder needs at least 2 entries".into()));
        }
        for &qp in &self.qp_ladder {
            check_qp(self.codec, qp)?;
        }
        if self.qp_ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SweepError::Config(format!("QP ladder {:?} must be strictly ascending", self.qp_ladder)));
        }
        self.group.check(self.codec)?;
        self.bd_options()?;
        Ok(())
    }

    pub fn bd_options(&self) -> Result<BdOptions, SweepError> {
        Ok(BdOptions::with_min_points(self.min_points)?)
    }

    /// Second ladder entry, the typical-streaming operating point.
    pub fn rd2_qp(&self) -> Option<i32> {
        self.qp_ladder.get(1).copied()
    }
}

/// Content digest identifying one encode result.
pub fn cache_key(job: &EncodeJob, clip_identity: &str, template_digest: &str) -> String {
    sha256_hex(&[
        b"lambdatune-point-v1",
        clip_identity.as_bytes(),
        job.codec.as_str().as_bytes(),
        &job.qp.to_le_bytes(),
        &job.k.quantized().to_le_bytes(),
        job.group.as_str().as_bytes(),
        job.scope.as_str().as_bytes(),
        template_digest.as_bytes(),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub curve: RDCurve,
    pub invocations: usize,
    pub cache_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub k: ScaleFactor,
    /// BD-Rate (%) against the `k = 1` reference curve.
    pub cost: f64,
    pub encoder_invocations: usize,
    pub curve: RDCurve,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "reason", rename_all = "snake_case")]
pub enum OptimizationStatus {
    Converged,
    MaxIterations,
    BracketFailed(String),
    Aborted(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub clip_id: String,
    pub codec: CodecId,
    pub group: FrameTypeGroup,
    pub scope: LambdaScope,
    pub qp_ladder: Vec<i32>,
    pub k_hat: ScaleFactor,
    pub bd_rate: f64,
    pub iterations: usize,
    pub status: OptimizationStatus,
    pub improved: bool,
    pub rd2_qp: Option<i32>,
    pub rd2_savings: Option<f64>,
    pub mean_savings: f64,
    pub msssim_change_db: Option<f64>,
    pub vmaf_change: Option<f64>,
    pub total_invocations: usize,
    pub reference_invocations: usize,
    pub memo_hits: usize,
    pub reference: RDCurve,
    /// Every evaluated `k != 1`, in evaluation order.
    pub trials: Vec<TrialRecord>,
}

impl OptimizationResult {
    pub fn best_curve(&self) -> &RDCurve {
        self.trials.iter().find(|t| t.k == self.k_hat).map(|t| &t.curve).unwrap_or(&self.reference)
    }

    pub fn file_name(&self) -> String {
        let safe: String =
            self.clip_id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect();
        format!("{safe}__{}__{}__{}.json", self.codec, self.scope, self.group)
    }
}

/// Builds the result fields from the reference curve and the trials. Shared
/// by the optimizer and ledger replay so both derive values the same way.
#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble_result(
    clip_id: &str,
    config: &SweepConfig,
    reference: RDCurve,
    trials: Vec<TrialRecord>,
    iterations: usize,
    status: OptimizationStatus,
    reference_invocations: usize,
    memo_hits: usize,
) -> Result<OptimizationResult, SweepError> {
    let opts = config.bd_options()?;
    // Ties go to the baseline, then to the earliest trial.
    let mut best: Option<&TrialRecord> = None;
    let mut best_cost = 0.0;
    for t in &trials {
        if t.cost < best_cost {
            best_cost = t.cost;
            best = Some(t);
        }
    }
    let (k_hat, best_curve) = match best {
        Some(t) => (t.k, &t.curve),
        None => (ScaleFactor::DEFAULT, &reference),
    };
    let rd2_qp = config.rd2_qp();
    let rd2_savings = match rd2_qp {
        Some(qp) => Some(matched_qp_savings(&reference, best_curve, qp)?),
        None => None,
    };
    let mean_savings = mean_matched_savings(&reference, best_curve)?;
    let msssim_change_db = if best.is_none() { Some(0.0) } else { bd_quality_with(&reference, best_curve, opts).ok() };
    let vmaf_change = mean_vmaf_change(&reference, best_curve)?;
    let total_invocations = trials.iter().map(|t| t.encoder_invocations).sum();
    Ok(OptimizationResult {
        clip_id: clip_id.to_string(),
        codec: config.codec,
        group: config.group,
        scope: config.scope,
        qp_ladder: config.qp_ladder.clone(),
        k_hat,
        bd_rate: best_cost,
        iterations,
        status,
        improved: best.is_some(),
        rd2_qp,
        rd2_savings,
        mean_savings,
        msssim_change_db,
        vmaf_change,
        total_invocations,
        reference_invocations,
        memo_hits,
        reference,
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationBudget {
    /// Optimizer iterations.
    pub p: u64,
    /// QP points per curve.
    pub n: u64,
    /// Clips.
    pub m: u64,
}

pub fn predict_budget(budget: InvocationBudget) -> u64 {
    budget.p * budget.n * budget.m
}

static RUN_COUNTER: AtomicU64 = AtomicU64::new(0);

fn new_run_id(clip: &str) -> String {
    let now = chrono::Utc::now().format("%Y%m%dT%H%M%S%.6fZ");
    let n = RUN_COUNTER.fetch_add(1, Ordering::Relaxed);
    format!("{clip}-{now}-{}-{n}", std::process::id())
}

/// Runs sweeps and optimizations against one backend and store.
#[derive(Clone)]
pub struct Orchestrator {
    backend: Arc<dyn EncoderBackend>,
    store: Arc<RunStore>,
    limiter: Option<Arc<Limiter>>,
    invocations: Arc<AtomicU64>,
}

impl Orchestrator {
    pub fn new(backend: Arc<dyn EncoderBackend>, store: Arc<RunStore>) -> Self {
        Orchestrator { backend, store, limiter: None, invocations: Arc::new(AtomicU64::new(0)) }
    }

    /// Shares a global cap on concurrent encodes with other orchestrators.
    pub fn with_limiter(mut self, limiter: Arc<Limiter>) -> Self {
        self.limiter = Some(limiter);
        self
    }

    pub fn store(&self) -> &RunStore {
        &self.store
    }

    /// Backend calls made through this orchestrator (and its clones).
    pub fn backend_invocations(&self) -> u64 {
        self.invocations.load(Ordering::SeqCst)
    }

    pub fn run_sweep(&self, clip: &ClipSpec, k: ScaleFactor, config: &SweepConfig) -> Result<SweepOutcome, SweepError> {
        self.sweep_tagged(clip, k, config, None, Phase::Sweep)
    }

    fn work_dir(&self, key: &str) -> PathBuf {
        match self.store.dir() {
            Some(dir) => dir.join("work").join(key),
            None => std::env::temp_dir().join(format!("lambdatune-{}", std::process::id())).join(key),
        }
    }

    fn sweep_tagged(
        &self,
        clip: &ClipSpec,
        k: ScaleFactor,
        config: &SweepConfig,
        run: Option<&str>,
        phase: Phase,
    ) -> Result<SweepOutcome, SweepError> {
        config.validate()?;
        let identity = self.backend.clip_identity(clip)?;
        let digest = self.backend.template_digest();

        let mut points: Vec<RDPoint> = Vec::with_capacity(config.qp_ladder.len());
        let mut pending: Vec<(EncodeJob, String)> = Vec::new();
        for &qp in &config.qp_ladder {
            let mut job = EncodeJob::new(clip.clone(), config.codec, qp, k, config.group, config.scope, PathBuf::new())?;
            let key = cache_key(&job, &identity, &digest);
            match self.store.lookup(&key)? {
                Some(point) => {
                    self.store.commit(None, ledger_record(&job, &key, &point, 0.0, true, run, phase))?;
                    points.push(point);
                }
                None => {
                    job.work_dir = self.work_dir(&key);
                    pending.push((job, key));
                }
            }
        }
        let cache_hits = points.len();
        let invocations = pending.len();

        let failures: Mutex<Vec<(i32, EncodeError)>> = Mutex::new(Vec::new());
        let fresh: Mutex<Vec<RDPoint>> = Mutex::new(Vec::new());
        let store_error: Mutex<Option<SweepError>> = Mutex::new(None);
        let next = AtomicUsize::new(0);
        let workers = config.workers.min(pending.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some((job, key)) = pending.get(i) else { break };
                    let _permit = self.limiter.as_deref().map(Limiter::acquire);
                    let started = Instant::now();
                    self.invocations.fetch_add(1, Ordering::SeqCst);
                    let outcome = self.backend.encode(job);
                    let seconds = started.elapsed().as_secs_f64();
                    if !config.keep_media {
                        let _ = std::fs::remove_dir_all(&job.work_dir);
                    }
                    match outcome {
                        Ok(point) => {
                            let rec = ledger_record(job, key, &point, seconds, false, run, phase);
                            if let Err(e) = self.store.commit(Some(&point), rec) {
                                store_error.lock().unwrap_or_else(|p| p.into_inner()).get_or_insert(e);
                            }
                            fresh.lock().unwrap_or_else(|p| p.into_inner()).push(point);
                        }
                        Err(e) => {
                            tracing::warn!(clip = %job.clip.id, qp = job.qp, k = %job.k, error = %e, "encode failed");
                            failures.lock().unwrap_or_else(|p| p.into_inner()).push((job.qp, e));
                        }
                    }
                });
            }
        });

        if let Some(e) = store_error.into_inner().unwrap_or_else(|p| p.into_inner()) {
            return Err(e);
        }
        let mut failures = failures.into_inner().unwrap_or_else(|p| p.into_inner());
        if !failures.is_empty() {
            failures.sort_by_key(|(qp, _)| *qp);
            let (qp, source) = failures.remove(0);
            return Err(SweepError::JobFailed { clip: clip.id.clone(), qp, k: k.get(), source });
        }
        points.extend(fresh.into_inner().unwrap_or_else(|p| p.into_inner()));
        points.sort_by_key(|p| p.qp);
        let curve = RDCurve::new(clip.id.clone(), config.codec, k, config.group, config.scope, points)?;
        Ok(SweepOutcome { curve, invocations, cache_hits })
    }

    /// BD-Rate of the sweep at `k` against the `k = 1` reference. `k = 1`
    /// itself costs nothing and runs no encodes.
    pub fn evaluate_cost(
        &self,
        clip: &ClipSpec,
        k: ScaleFactor,
        reference: &RDCurve,
        config: &SweepConfig,
    ) -> Result<TrialRecord, SweepError> {
        self.evaluate_tagged(clip, k, reference, config, None, Phase::Sweep)
    }

    fn evaluate_tagged(
        &self,
        clip: &ClipSpec,
        k: ScaleFactor,
        reference: &RDCurve,
        config: &SweepConfig,
        run: Option<&str>,
        phase: Phase,
    ) -> Result<TrialRecord, SweepError> {
        if k.is_default() {
            return Ok(TrialRecord { k, cost: 0.0, encoder_invocations: 0, curve: reference.clone() });
        }
        let sweep = self.sweep_tagged(clip, k, config, run, phase)?;
        let cost = bd_rate_with(reference, &sweep.curve, config.bd_options()?)?;
        Ok(TrialRecord { k, cost, encoder_invocations: sweep.invocations, curve: sweep.curve })
    }

    /// Searches `k` for the lowest BD-Rate against the clip's `k = 1` curve.
    /// The baseline is always a candidate, so the reported BD-Rate is never
    /// positive.
    pub fn optimize_clip(
        &self,
        clip: &ClipSpec,
        config: &SweepConfig,
        opt: &OptimizerConfig,
    ) -> Result<OptimizationResult, SweepError> {
        config.validate()?;
        opt.validate()?;
        let run = new_run_id(&clip.id);
        let reference = self.sweep_tagged(clip, ScaleFactor::DEFAULT, config, Some(&run), Phase::Reference)?;

        let mut trials: Vec<TrialRecord> = Vec::new();
        let mut memo: HashMap<i64, f64> = HashMap::new();
        let mut memo_hits = 0usize;
        let mut objective = |x: f64, phase: Phase| -> Result<f64, SweepError> {
            let slot = (x * 1e6).round() as i64;
            if let Some(&cost) = memo.get(&slot) {
                memo_hits += 1;
                return Ok(cost);
            }
            let k = ScaleFactor::new(opt.from_search(x))?;
            let trial = match self.evaluate_tagged(clip, k, &reference.curve, config, Some(&run), phase) {
                Ok(t) => t,
                Err(first) => {
                    tracing::warn!(clip = %clip.id, %k, error = %first, "trial failed, retrying once");
                    self.evaluate_tagged(clip, k, &reference.curve, config, Some(&run), phase)?
                }
            };
            let cost = trial.cost;
            memo.insert(slot, cost);
            if !k.is_default() {
                trials.push(trial);
            }
            Ok(cost)
        };

        let seeds = (opt.to_search(0.5), opt.to_search(1.0));
        let bracket =
            try_bracket_minimum(|x| objective(x, Phase::Bracket), seeds.0, seeds.1, opt.max_expansions, opt.search_bounds());
        let (iterations, status) = match bracket {
            Ok(br) => match try_brent_minimize(|x| objective(x, Phase::Search), &br, opt) {
                Ok(m) if m.trace.converged => (m.trace.iterations, OptimizationStatus::Converged),
                Ok(m) => (m.trace.iterations, OptimizationStatus::MaxIterations),
                Err(SearchError::Search(e)) => return Err(e.into()),
                Err(SearchError::Objective(e)) => (0, OptimizationStatus::Aborted(e.to_string())),
            },
            Err(SearchError::Search(e)) => (0, OptimizationStatus::BracketFailed(e.to_string())),
            Err(SearchError::Objective(e)) => (0, OptimizationStatus::Aborted(e.to_string())),
        };
        if let OptimizationStatus::Aborted(reason) | OptimizationStatus::BracketFailed(reason) = &status {
            tracing::warn!(clip = %clip.id, reason, "search ended early; keeping the best evaluated k");
        }
        let iterations = if matches!(status, OptimizationStatus::Aborted(_)) {
            trials.len().saturating_sub(3)
        } else {
            iterations
        };
        assemble_result(&clip.id, config, reference.curve, trials, iterations, status, reference.invocations, memo_hits)
    }

    /// Optimizes every clip, in parallel across clips. Results keep the
    /// order of `clips`.
    pub fn optimize_all(
        &self,
        clips: &[ClipSpec],
        config: &SweepConfig,
        opt: &OptimizerConfig,
    ) -> Vec<Result<OptimizationResult, SweepError>> {
        std::thread::scope(|s| {
            let handles: Vec<_> = clips.iter().map(|clip| s.spawn(move || self.optimize_clip(clip, config, opt))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(SweepError::Cache("optimizer thread panicked".into()))))
                .collect()
        })
    }
}

fn ledger_record(
    job: &EncodeJob,
    key: &str,
    point: &RDPoint,
    seconds: f64,
    cached: bool,
    run: Option<&str>,
    phase: Phase,
) -> LedgerRecord {
    LedgerRecord {
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        cache_key: key.to_string(),
        clip: job.clip.id.clone(),
        codec: job.codec,
        qp: job.qp,
        k: job.k,
        group: job.group,
        scope: job.scope,
        bitrate_kbps: point.bitrate_kbps,
        msssim: point.msssim,
        msssim_db: point.msssim_db,
        vmaf: point.vmaf,
        invocation_seconds: seconds,
        cached,
        run: run.map(str::to_string),
        phase: Some(phase),
    }
}

/// Writes one pretty-printed JSON document per result into `dir`.
pub fn write_results(dir: &Path, results: &[OptimizationResult]) -> Result<Vec<PathBuf>, SweepError> {
    std::fs::create_dir_all(dir).map_err(|e| SweepError::Io { path: dir.into(), source: e })?;
    let mut written = Vec::with_capacity(results.len());
    for r in results {
        let path = dir.join(r.file_name());
        let mut bytes = serde_json::to_vec_pretty(r).map_err(|e| SweepError::Cache(e.to_string()))?;
        bytes.push(b'\n');
        std::fs::write(&path, bytes).map_err(|e| SweepError::Io { path: path.clone(), source: e })?;
        written.push(path);
    }
    Ok(written)
}

/// Reads result documents from files, or every `*.json` inside directories.
pub fn read_results(paths: &[PathBuf]) -> Result<Vec<OptimizationResult>, SweepError> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| SweepError::Io { path: p.clone(), source: e })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    files
        .iter()
        .map(|f| {
            let bytes = std::fs::read(f).map_err(|e| SweepError::Io { path: f.clone(), source: e })?;
            serde_json::from_slice(&bytes).map_err(|e| SweepError::Cache(format!("{}: {e}", f.display())))
        })
        .collect()
}

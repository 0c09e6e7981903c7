use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use lambdatune_core::bridge::{
    ClipSpec, EncodeError, EncodeJob, EncoderBackend, SyntheticBackend, SyntheticClip, SyntheticClipModel,
    SyntheticSuite,
};
use lambdatune_core::curve::RDPoint;
use lambdatune_core::opt::OptimizerConfig;
use lambdatune_core::sweep::{
    read_ledger, read_results, replay_ledger, write_results, Limiter, OptimizationStatus, Orchestrator, Phase,
    RunStore, SweepConfig, SweepError, LEDGER_FILE,
};
use lambdatune_core::{CodecId, FrameTypeGroup, LambdaScope, ScaleFactor};

fn suite(clips: &[(&str, SyntheticClipModel)]) -> SyntheticSuite {
    SyntheticSuite {
        clips: clips.iter().map(|(id, model)| SyntheticClip { id: id.to_string(), model: model.clone() }).collect(),
    }
}

fn hevc() -> SweepConfig {
    SweepConfig::new(CodecId::Hevc, FrameTypeGroup::IFrames, LambdaScope::Top)
}

/// Synthetic backend that fails chosen QPs and counts calls.
struct Flaky {
    inner: SyntheticBackend,
    fail_qp: Option<i32>,
    calls: AtomicUsize,
}

impl EncoderBackend for Flaky {
    fn encode(&self, job: &EncodeJob) -> Result<RDPoint, EncodeError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if Some(job.qp) == self.fail_qp {
            return Err(EncodeError::Domain(format!("injected failure at qp {}", job.qp)));
        }
        self.inner.encode(job)
    }
    fn template_digest(&self) -> String {
        self.inner.template_digest()
    }
    fn clip_identity(&self, clip: &ClipSpec) -> Result<String, EncodeError> {
        self.inner.clip_identity(clip)
    }
}

fn flaky(fail_qp: Option<i32>) -> Arc<Flaky> {
    Arc::new(Flaky {
        inner: SyntheticBackend::new(&SyntheticSuite::default_suite()).unwrap(),
        fail_qp,
        calls: AtomicUsize::new(0),
    })
}

fn synthetic_clip() -> ClipSpec {
    ClipSpec::synthetic(SyntheticSuite::DEFAULT_CLIP)
}

#[test]
fn sweep_invocation_counts() {
    let dir = tempfile::tempdir().unwrap();
    let backend = flaky(None);
    let store = Arc::new(RunStore::open(dir.path()).unwrap());
    let orch = Orchestrator::new(backend.clone(), store);
    let mut config = hevc();
    config.cache_dir = Some(dir.path().into());
    let k = ScaleFactor::new(1.7).unwrap();

    let cold = orch.run_sweep(&synthetic_clip(), k, &config).unwrap();
    assert_eq!((cold.invocations, cold.cache_hits), (5, 0));
    let warm = orch.run_sweep(&synthetic_clip(), k, &config).unwrap();
    assert_eq!((warm.invocations, warm.cache_hits), (0, 5));
    assert_eq!(warm.curve, cold.curve);
    assert_eq!(backend.calls.load(Ordering::SeqCst), 5);

    // A fresh process over the same cache directory sees the same points.
    let reopened = Orchestrator::new(backend.clone(), Arc::new(RunStore::open(dir.path()).unwrap()));
    assert_eq!(reopened.run_sweep(&synthetic_clip(), k, &config).unwrap().invocations, 0);

    // Two of five points cached up front.
    let mut partial = config.clone();
    partial.qp_ladder = vec![22, 27];
    let k2 = ScaleFactor::new(0.8).unwrap();
    assert_eq!(orch.run_sweep(&synthetic_clip(), k2, &partial).unwrap().invocations, 2);
    assert_eq!(orch.run_sweep(&synthetic_clip(), k2, &config).unwrap().invocations, 3);

    let ledger = read_ledger(&dir.path().join(LEDGER_FILE)).unwrap();
    assert_eq!(ledger.iter().filter(|r| !r.cached).count(), 10);
    assert!(ledger.iter().all(|r| r.phase == Some(Phase::Sweep) && r.run.is_none()));
}

#[test]
fn failed_job_is_named_and_partial_results_are_kept() {
    let backend = flaky(Some(32));
    let store = Arc::new(RunStore::in_memory());
    let orch = Orchestrator::new(backend.clone(), store.clone());
    let k = ScaleFactor::new(2.0).unwrap();
    match orch.run_sweep(&synthetic_clip(), k, &hevc()) {
        Err(SweepError::JobFailed { qp, k, .. }) => assert_eq!((qp, k), (32, 2.0)),
        other => panic!("{other:?}"),
    }
    assert_eq!(store.records().len(), 4);
    // Once the fault clears only the missing point is encoded.
    let healthy = Orchestrator::new(flaky(None), store);
    assert_eq!(healthy.run_sweep(&synthetic_clip(), k, &hevc()).unwrap().invocations, 1);
}

#[test]
fn failing_trials_keep_best_evaluated_k() {
    // The reference sweep must succeed, so inject the failure only for k != 1.
    struct FailScaled(Arc<Flaky>);
    impl EncoderBackend for FailScaled {
        fn encode(&self, job: &EncodeJob) -> Result<RDPoint, EncodeError> {
            if !job.k.is_default() {
                return Err(EncodeError::Domain("scaled encodes are broken".into()));
            }
            self.0.encode(job)
        }
        fn template_digest(&self) -> String {
            self.0.template_digest()
        }
        fn clip_identity(&self, clip: &ClipSpec) -> Result<String, EncodeError> {
            self.0.clip_identity(clip)
        }
    }
    let orch = Orchestrator::new(Arc::new(FailScaled(flaky(None))), Arc::new(RunStore::in_memory()));
    let r = orch.optimize_clip(&synthetic_clip(), &hevc(), &OptimizerConfig::default()).unwrap();
    assert!(matches!(r.status, OptimizationStatus::Aborted(_)));
    assert_eq!((r.k_hat, r.bd_rate, r.improved), (ScaleFactor::DEFAULT, 0.0, false));
}

#[test]
fn calibrated_clip_keeps_unit_scale() {
    let model = SyntheticClipModel { k_star: 1.0, c: 200.0, ..Default::default() };
    let backend = Arc::new(SyntheticBackend::new(&suite(&[("calibrated", model)])).unwrap());
    let orch = Orchestrator::new(backend, Arc::new(RunStore::in_memory()));
    let opt = OptimizerConfig::default();
    let r = orch.optimize_clip(&ClipSpec::synthetic("calibrated"), &hevc(), &opt).unwrap();
    assert!(r.k_hat.get().ln().abs() <= opt.xtol, "k_hat {}", r.k_hat);
    assert!(r.bd_rate <= 0.0 && r.bd_rate > -0.1, "{}", r.bd_rate);
}

#[test]
fn optimize_ledger_replays_to_same_result() {
    let dir = tempfile::tempdir().unwrap();
    let models = [
        ("a", SyntheticClipModel { k_star: 1.8, noise_seed: Some(7), ..Default::default() }),
        ("b", SyntheticClipModel { k_star: 0.7, ..Default::default() }),
        ("c", SyntheticClipModel::default()),
    ];
    let backend = Arc::new(SyntheticBackend::new(&suite(&models)).unwrap());
    let orch = Orchestrator::new(backend, Arc::new(RunStore::open(dir.path()).unwrap()))
        .with_limiter(Arc::new(Limiter::new(3)));
    let clips: Vec<ClipSpec> = ["a", "b", "c"].iter().map(|id| ClipSpec::synthetic(*id)).collect();
    let results: Vec<_> = orch
        .optimize_all(&clips, &hevc(), &OptimizerConfig::default())
        .into_iter()
        .collect::<Result<_, _>>()
        .unwrap();

    let ledger = read_ledger(&dir.path().join(LEDGER_FILE)).unwrap();
    let mut replayed = replay_ledger(&ledger, 4).unwrap();
    replayed.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    assert_eq!(replayed.len(), 3);
    for (r, p) in results.iter().zip(&replayed) {
        assert_eq!(r.clip_id, p.clip_id);
        assert_eq!(r.k_hat, p.k_hat);
        assert_eq!(r.bd_rate.to_bits(), p.bd_rate.to_bits());
        assert_eq!(r.rd2_savings, p.rd2_savings);
        assert_eq!(r.mean_savings.to_bits(), p.mean_savings.to_bits());
        assert_eq!(r.msssim_change_db, p.msssim_change_db);
        assert_eq!(r.vmaf_change, p.vmaf_change);
        assert_eq!(r.total_invocations, p.total_invocations);
        assert_eq!(r.reference_invocations, p.reference_invocations);
        let trials: Vec<_> = r.trials.iter().map(|t| (t.k, t.cost)).collect();
        assert_eq!(trials, p.trials);
    }

    // Results files round-trip exactly.
    let out = dir.path().join("results");
    write_results(&out, &results).unwrap();
    assert_eq!(read_results(&[out]).unwrap(), results);
}

#[test]
fn warm_rerun_is_free_and_identical() {
    let dir = tempfile::tempdir().unwrap();
    let backend = flaky(None);
    let opt = OptimizerConfig::default();
    let first = Orchestrator::new(backend.clone(), Arc::new(RunStore::open(dir.path()).unwrap()))
        .optimize_clip(&synthetic_clip(), &hevc(), &opt)
        .unwrap();
    let calls = backend.calls.load(Ordering::SeqCst);
    let second_orch = Orchestrator::new(backend.clone(), Arc::new(RunStore::open(dir.path()).unwrap()));
    let second = second_orch.optimize_clip(&synthetic_clip(), &hevc(), &opt).unwrap();
    assert_eq!(backend.calls.load(Ordering::SeqCst), calls);
    assert_eq!(second_orch.backend_invocations(), 0);
    // Invocation counts describe the work done by this run.
    assert_eq!((second.total_invocations, second.reference_invocations), (0, 0));
    assert_eq!(second.k_hat, first.k_hat);
    assert_eq!(second.bd_rate.to_bits(), first.bd_rate.to_bits());
}

#[test]
fn workers_bound_concurrency() {
    struct Slow {
        inner: SyntheticBackend,
        active: AtomicUsize,
        peak: AtomicUsize,
    }
    impl EncoderBackend for Slow {
        fn encode(&self, job: &EncodeJob) -> Result<RDPoint, EncodeError> {
            let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(20));
            self.active.fetch_sub(1, Ordering::SeqCst);
            self.inner.encode(job)
        }
        fn template_digest(&self) -> String {
            self.inner.template_digest()
        }
        fn clip_identity(&self, clip: &ClipSpec) -> Result<String, EncodeError> {
            self.inner.clip_identity(clip)
        }
    }
    let slow = Arc::new(Slow {
        inner: SyntheticBackend::new(&SyntheticSuite::default_suite()).unwrap(),
        active: AtomicUsize::new(0),
        peak: AtomicUsize::new(0),
    });
    let orch = Orchestrator::new(slow.clone(), Arc::new(RunStore::in_memory()));
    let mut config = hevc();
    config.workers = 2;
    orch.run_sweep(&synthetic_clip(), ScaleFactor::DEFAULT, &config).unwrap();
    assert_eq!(slow.peak.load(Ordering::SeqCst), 2);
}

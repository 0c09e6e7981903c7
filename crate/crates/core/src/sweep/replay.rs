//! Rebuilds optimization outcomes from ledger records alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{assemble_result, LedgerRecord, OptimizationStatus, Phase, SweepConfig, SweepError, TrialRecord};
use crate::curve::{RDCurve, RDPoint};
use crate::lambda::ScaleFactor;

/// Values of one optimizer run recomputed from its ledger lines. Iteration
/// counts and the termination status are not recorded per line, so they
/// are absent here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayedRun {
    pub run: String,
    pub clip_id: String,
    pub k_hat: ScaleFactor,
    pub bd_rate: f64,
    pub rd2_savings: Option<f64>,
    pub mean_savings: f64,
    pub msssim_change_db: Option<f64>,
    pub vmaf_change: Option<f64>,
    pub total_invocations: usize,
    pub reference_invocations: usize,
    /// `(k, BD-Rate)` per trial, in evaluation order.
    pub trials: Vec<(ScaleFactor, f64)>,
}

struct Sweep {
    k: ScaleFactor,
    points: BTreeMap<i32, RDPoint>,
    fresh: usize,
}

impl Sweep {
    fn add(&mut self, rec: &LedgerRecord) {
        self.points.insert(rec.qp, rec.point());
        if !rec.cached {
            self.fresh += 1;
        }
    }
}

/// Groups records by run id and recomputes each run's result. Records
/// without a run id (plain sweeps) are ignored. Runs are returned in order
/// of first appearance.
pub fn replay_ledger(records: &[LedgerRecord], min_points: usize) -> Result<Vec<ReplayedRun>, SweepError> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_run: BTreeMap<&str, Vec<&LedgerRecord>> = BTreeMap::new();
    for rec in records {
        let Some(run) = rec.run.as_deref() else { continue };
        by_run.entry(run).or_insert_with(|| {
            order.push(run);
            Vec::new()
        });
        by_run.get_mut(run).expect("inserted above").push(rec);
    }
    order.into_iter().map(|run| replay_run(run, &by_run[run], min_points)).collect()
}

fn replay_run(run: &str, records: &[&LedgerRecord], min_points: usize) -> Result<ReplayedRun, SweepError> {
    let first = records[0];
    let mut reference = Sweep { k: ScaleFactor::DEFAULT, points: BTreeMap::new(), fresh: 0 };
    let mut trials: Vec<Sweep> = Vec::new();
    for rec in records {
        match rec.phase {
            Some(Phase::Reference) => reference.add(rec),
            Some(Phase::Bracket | Phase::Search) => {
                match trials.iter_mut().find(|t| t.k.quantized() == rec.k.quantized()) {
                    Some(t) => t.add(rec),
                    None => {
                        let mut t = Sweep { k: rec.k, points: BTreeMap::new(), fresh: 0 };
                        t.add(rec);
                        trials.push(t);
                    }
                }
            }
            _ => {}
        }
    }
    if reference.points.is_empty() {
        return Err(SweepError::Cache(format!("run {run} has no reference sweep in the ledger")));
    }
    let mut config = SweepConfig::new(first.codec, first.group, first.scope);
    config.qp_ladder = reference.points.keys().copied().collect();
    config.min_points = min_points;

    let curve = |s: &Sweep| RDCurve::new(first.clip.clone(), first.codec, s.k, first.group, first.scope, s.points.values().cloned().collect());
    let ref_curve = curve(&reference)?;
    let opts = config.bd_options()?;
    let mut rebuilt = Vec::with_capacity(trials.len());
    for t in &trials {
        // A trial that never completed its ladder was abandoned mid-sweep.
        if t.points.len() != config.qp_ladder.len() {
            continue;
        }
        let c = curve(t)?;
        let cost = crate::curve::bd_rate_with(&ref_curve, &c, opts)?;
        rebuilt.push(TrialRecord { k: t.k, cost, encoder_invocations: t.fresh, curve: c });
    }
    let r = assemble_result(
        &first.clip,
        &config,
        ref_curve,
        rebuilt,
        0,
        OptimizationStatus::Converged,
        reference.fresh,
        0,
    )?;
    Ok(ReplayedRun {
        run: run.to_string(),
        clip_id: r.clip_id,
        k_hat: r.k_hat,
        bd_rate: r.bd_rate,
        rd2_savings: r.rd2_savings,
        mean_savings: r.mean_savings,
        msssim_change_db: r.msssim_change_db,
        vmaf_change: r.vmaf_change,
        total_invocations: r.total_invocations,
        reference_invocations: r.reference_invocations,
        trials: r.trials.iter().map(|t| (t.k, t.cost)).collect(),
    })
}

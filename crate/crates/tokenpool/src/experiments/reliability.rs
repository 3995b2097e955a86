use serde::{Deserialize, Serialize};
use tokenpool_core::metrics::{
    alert_preemption, compare, preemption_window_rates, summarize_run, Alert, Comparison, RunSummary,
    PREEMPTION_ALERT_THRESHOLD,
};
use tokenpool_core::sim::{self, Counters};

use super::{measured_throughput, size_for_utilization};
use crate::config::Experiment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub utilization: f64,
    pub homogeneous_counts: Vec<u64>,
    pub dual_counts: Vec<u64>,
    /// Saturated req/s per instance on each pool's own share.
    pub homogeneous_mu: Vec<f64>,
    pub dual_mu: Vec<f64>,
    pub homogeneous: RunSummary,
    pub dual: RunSummary,
    pub comparison: Comparison,
    /// Short-pool counters over the whole run, warm-up included.
    pub short_pool: Counters,
    pub homogeneous_alerts: Vec<Alert>,
    pub dual_alerts: Vec<Alert>,
}

/// Size both fleets so every pool runs at the same utilisation of its own
/// measured throughput, run them on one trace and compare.
pub fn reliability(exp: &Experiment) -> Result<ReliabilityReport> {
    let c = &exp.config;
    let rc = c
        .reliability
        .as_ref()
        .ok_or_else(|| Error::config("reliability", "missing section"))?;
    let trace = exp.trace()?;
    let reqs = &trace.requests;
    let dual_t = c.sim_config(Some(&vec![1; c.pools.len()]))?;
    let homo_t = c.baseline_config(Some(1))?;
    let dual_counts = size_for_utilization(&dual_t, reqs, rc.utilization, rc.sample)?;
    let homogeneous_counts = size_for_utilization(&homo_t, reqs, rc.utilization, rc.sample)?;
    let dual_cfg = c.sim_config(Some(&dual_counts))?;
    let homo_cfg = c.baseline_config(Some(homogeneous_counts[0]))?;
    let (h, d) = rayon::join(|| sim::run(&homo_cfg, reqs), || sim::run(&dual_cfg, reqs));
    let (h, d) = (h?, d?);
    let homogeneous = summarize_run(&h);
    let dual = summarize_run(&d);
    Ok(ReliabilityReport {
        utilization: rc.utilization,
        homogeneous_mu: measured_throughput(&homo_t, reqs, rc.sample)?,
        dual_mu: measured_throughput(&dual_t, reqs, rc.sample)?,
        homogeneous_counts,
        dual_counts,
        comparison: compare(&homogeneous.aggregate, &dual.aggregate)?,
        short_pool: d.pools[0].all,
        homogeneous_alerts: alert_preemption(&preemption_window_rates(&h), PREEMPTION_ALERT_THRESHOLD),
        dual_alerts: alert_preemption(&preemption_window_rates(&d), PREEMPTION_ALERT_THRESHOLD),
        homogeneous,
        dual,
    })
}

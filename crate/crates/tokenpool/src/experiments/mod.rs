//! Experiment drivers behind the CLI subcommands and the acceptance run.

mod calibration;
mod projection;
mod reliability;
mod savings;
mod sweep;

pub use calibration::{calibrate, CalibrationReport, CalibrationRow};
pub use projection::{project, ProjectionReport};
pub use reliability::{reliability, ReliabilityReport};
pub use savings::{savings_at_rates, savings_spread, SavingsRow};
pub use sweep::{check_plateau, check_upper_bound, is_unimodal, sweep, SweepReport};

use serde::{Deserialize, Serialize};
use tokenpool_core::metrics::{compare, summarize_run, Comparison, RunSummary};
use tokenpool_core::sim::{self, find_min_fleet, RoutingMode, SimConfig, SimResult};
use tokenpool_core::trace::Request;

use crate::config::{Experiment, SearchConfig};
use crate::error::Result;

/// Requests per pool share used to measure saturated throughput.
pub const THROUGHPUT_SAMPLE: usize = 2_000;

/// Requests each pool would see, splitting on the true total budget.
pub fn pool_shares<'a>(cfg: &SimConfig, trace: &'a [Request]) -> Vec<Vec<&'a Request>> {
    match cfg.routing {
        RoutingMode::RoundRobinHomogeneous => vec![trace.iter().collect()],
        RoutingMode::TokenBudget => {
            let (s, l) = trace.iter().partition(|r| r.total_budget() <= cfg.b_short);
            vec![s, l]
        }
    }
}

fn span_s(trace: &[Request]) -> f64 {
    match (trace.first(), trace.last()) {
        (Some(a), Some(b)) if b.arrival_s > a.arrival_s => b.arrival_s - a.arrival_s,
        _ => 1.0,
    }
}

/// Per-pool saturated throughput, measured on a sample of each pool's share.
/// Pools whose share is too small keep their configured figure.
pub fn measured_throughput(cfg: &SimConfig, trace: &[Request], sample: usize) -> Result<Vec<f64>> {
    pool_shares(cfg, trace)
        .iter()
        .enumerate()
        .map(|(i, share)| {
            let s: Vec<Request> = share.iter().take(sample).map(|r| (*r).clone()).collect();
            let p = &cfg.pools[i];
            if s.len() < 20 {
                return Ok(p.config.throughput_per_instance);
            }
            Ok(sim::saturated_throughput(
                &p.config,
                &cfg.pool_model(i),
                &s,
                Some(cfg.kv_capacity_tokens(i)),
            )?)
        })
        .collect()
}

/// Instances per pool to run each share at `utilization` of measured
/// saturated throughput.
pub fn size_for_utilization(cfg: &SimConfig, trace: &[Request], utilization: f64, sample: usize) -> Result<Vec<u64>> {
    let mu = measured_throughput(cfg, trace, sample)?;
    let dur = span_s(trace);
    Ok(pool_shares(cfg, trace)
        .iter()
        .zip(&mu)
        .map(|(share, mu)| ((share.len() as f64 / dur) / (utilization * mu)).ceil().max(1.0) as u64)
        .collect())
}

/// Smallest SLO-meeting fleet, starting from the queueing estimate unless
/// `initial` is given.
pub fn search_fleet(
    template: &SimConfig,
    trace: &[Request],
    search: &SearchConfig,
    initial: Option<Vec<u64>>,
) -> Result<sim::FleetSearch> {
    let init = match initial {
        Some(v) => v,
        None => size_for_utilization(template, trace, 1.0, THROUGHPUT_SAMPLE)?,
    };
    log::info!("fleet search from {init:?}");
    let out = find_min_fleet(template, trace, &search.slo, &init, search.ceiling)?;
    log::info!("fleet search settled on {:?} after {} probes", out.counts, out.probes);
    Ok(out)
}

/// Output of `simulate`: the fleet under test and, optionally, the
/// homogeneous baseline on the same trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub name: String,
    pub counts: Vec<u64>,
    pub summary: RunSummary,
    pub baseline_gpus: Option<u64>,
    pub baseline: Option<RunSummary>,
    pub comparison: Option<Comparison>,
    #[serde(skip)]
    pub result: Option<SimResult>,
    #[serde(skip)]
    pub baseline_result: Option<SimResult>,
}

fn configured_counts(exp: &Experiment) -> Option<Vec<u64>> {
    exp.config.pools.iter().map(|p| p.instances).collect()
}

/// Run the configured fleet (searched when `[search]` is present) and, with
/// `with_baseline`, the homogeneous fleet too.
pub fn simulate(exp: &Experiment, with_baseline: bool) -> Result<SimulateReport> {
    let c = &exp.config;
    let trace = exp.trace()?;
    let reqs = &trace.requests;
    let dual = || -> Result<SimResult> {
        match &c.search {
            Some(s) => {
                let init = configured_counts(exp);
                let template = c.sim_config(Some(&vec![1; c.pools.len()]))?;
                Ok(search_fleet(&template, reqs, s, init)?.result)
            }
            None => Ok(sim::run(&c.sim_config(None)?, reqs)?),
        }
    };
    let base = || -> Result<Option<SimResult>> {
        if !with_baseline {
            return Ok(None);
        }
        let configured = c.baseline.as_ref().and_then(|b| b.instances);
        Ok(Some(match &c.search {
            Some(s) => {
                let template = c.baseline_config(Some(1))?;
                search_fleet(&template, reqs, s, configured.map(|n| vec![n]))?.result
            }
            None => sim::run(&c.baseline_config(None)?, reqs)?,
        }))
    };
    let (result, baseline_result) = rayon::join(dual, base);
    let (result, baseline_result) = (result?, baseline_result?);
    let mut summary = summarize_run(&result);
    let baseline = baseline_result.as_ref().map(summarize_run);
    let baseline_gpus = baseline_result
        .as_ref()
        .map(|b| b.gpus)
        .or_else(|| c.baseline.as_ref().and_then(|b| b.instances));
    if let Some(g) = baseline_gpus.filter(|&g| g > 0) {
        summary.aggregate.savings_vs_baseline = Some(1.0 - result.gpus as f64 / g as f64);
    }
    let comparison = match &baseline {
        Some(b) => Some(compare(&b.aggregate, &summary.aggregate)?),
        None => None,
    };
    Ok(SimulateReport {
        name: c.name.clone(),
        counts: result.pools.iter().map(|p| p.instances).collect(),
        summary,
        baseline_gpus,
        baseline,
        comparison,
        result: Some(result),
        baseline_result,
    })
}

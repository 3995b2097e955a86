use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tokenpool_core::estimator::{estimate_with_ratio, CategoryStats, FALLBACK_CATEGORY};
use tokenpool_core::kv::PoolConfig;
use tokenpool_core::trace::{Request, Trace};

use crate::config::Experiment;
use crate::error::Result;
use crate::estimator::SharedEstimator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub category: String,
    /// Profile ratio when the trace came from a generator, else the mean
    /// observed bytes per prompt token.
    pub true_ratio: f64,
    pub c_hat: f64,
    pub sigma_hat: f64,
    pub n_obs: u64,
    pub rel_error: f64,
    /// Requests routed after calibration.
    pub evaluated: u64,
    pub misroute_rate: f64,
    pub static_misroute_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub observations: usize,
    pub static_ratio: f64,
    pub b_short: u64,
    pub short_c_max: u64,
    pub rows: Vec<CalibrationRow>,
    pub stats: Vec<CategoryStats>,
}

/// Sent short on the estimate but too big for the short pool.
fn misrouted(est_total: u64, r: &Request, b_short: u64, short_c_max: u64) -> bool {
    est_total <= b_short.min(short_c_max) && r.total_budget() > short_c_max
}

/// Feed each category its first `observations` responses, then route the rest
/// of the trace with the frozen state and, for comparison, a fixed global
/// ratio.
pub fn calibrate(
    exp: &Experiment,
    trace: &Trace,
    observations: Option<usize>,
    estimator: Option<&SharedEstimator>,
) -> Result<CalibrationReport> {
    let c = &exp.config;
    let cc = c.calibration.clone().unwrap_or_default();
    let observations = observations.unwrap_or(cc.observations);
    let short_c_max = match c.pools.first() {
        Some(p) => p.resolve("pools[0]")?.c_max,
        None => PoolConfig::short_8k().c_max,
    };
    let b_short = c.routing.b_short.min(short_c_max);
    let profiles: BTreeMap<String, f64> = c
        .trace
        .as_ref()
        .and_then(|t| t.categories.clone())
        .unwrap_or_else(tokenpool_core::trace::default_categories)
        .into_iter()
        .map(|p| (p.name, p.true_ratio))
        .collect();
    let generated = c.trace.as_ref().is_some_and(|t| t.kind != tokenpool_core::trace::TraceKind::File);
    let mut names: Vec<&str> = trace.requests.iter().map(|r| r.category.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    let own;
    let est = match estimator {
        Some(e) => e,
        None => {
            own = SharedEstimator::new(c.estimator, names.iter().copied());
            &own
        }
    };
    let bucket = |cat: &str| est.stats(cat).category;

    let mut fed: BTreeMap<String, usize> = BTreeMap::new();
    let mut held_out: Vec<&Request> = Vec::new();
    for r in &trace.requests {
        let k = fed.entry(bucket(&r.category)).or_default();
        if *k < observations && r.true_prompt_tokens > 0 && r.body_bytes > 0 {
            est.observe(&r.category, r.body_bytes, r.true_prompt_tokens)?;
            *k += 1;
        } else {
            held_out.push(r);
        }
    }

    #[derive(Default)]
    struct Tally {
        n: u64,
        mis: u64,
        mis_static: u64,
        bytes: f64,
        tokens: f64,
    }
    let mut tally: BTreeMap<String, Tally> = BTreeMap::new();
    for r in &held_out {
        let t = tally.entry(bucket(&r.category)).or_default();
        t.n += 1;
        t.bytes += r.body_bytes as f64;
        t.tokens += r.true_prompt_tokens as f64;
        let e = est.estimate(&r.category, r.body_bytes, r.max_output_tokens);
        t.mis += misrouted(e.l_total, r, b_short, short_c_max) as u64;
        let s = estimate_with_ratio(r.body_bytes, r.max_output_tokens, cc.static_ratio);
        t.mis_static += misrouted(s.l_total, r, b_short, short_c_max) as u64;
    }

    let stats = est.snapshot();
    let rows = stats
        .iter()
        .filter(|s| s.category != FALLBACK_CATEGORY || names.contains(&FALLBACK_CATEGORY) || s.n_obs > 0)
        .map(|s| {
            let t = tally.remove(&s.category).unwrap_or_default();
            let true_ratio = match profiles.get(&s.category) {
                Some(&x) if generated => x,
                _ if t.tokens > 0.0 => t.bytes / t.tokens,
                _ => f64::NAN,
            };
            let rate = |x: u64| if t.n == 0 { 0.0 } else { x as f64 / t.n as f64 };
            CalibrationRow {
                category: s.category.clone(),
                true_ratio,
                c_hat: s.c_hat,
                sigma_hat: s.sigma_hat,
                n_obs: s.n_obs,
                rel_error: (s.c_hat - true_ratio).abs() / true_ratio,
                evaluated: t.n,
                misroute_rate: rate(t.mis),
                static_misroute_rate: rate(t.mis_static),
            }
        })
        .collect();
    Ok(CalibrationReport {
        observations,
        static_ratio: cc.static_ratio,
        b_short,
        short_c_max,
        rows,
        stats,
    })
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tokenpool_core::cost::savings_fraction;
use tokenpool_core::trace::{generate, stats};

use super::search_fleet;
use crate::config::Experiment;
use crate::error::{Error, Result};

/// Searched fleets at one arrival rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsRow {
    pub rate: f64,
    pub n_requests: u64,
    pub homogeneous: u64,
    pub short: u64,
    pub long: u64,
    pub dual_total: u64,
    pub savings: f64,
    pub alpha: f64,
    /// `alpha * (1 - 1/rho)` with rho from the configured pool throughputs.
    pub predicted: f64,
    pub probes: u64,
}

/// Smallest homogeneous and two-pool fleets at every `[savings]` rate, each on
/// its own trace with the configured seed (and duration, when one is set).
pub fn savings_at_rates(exp: &Experiment) -> Result<Vec<SavingsRow>> {
    let c = &exp.config;
    let rates = &c
        .savings
        .as_ref()
        .ok_or_else(|| Error::config("savings", "missing section"))?
        .rates;
    let search = c.search.clone().unwrap_or_default();
    let tc = c.trace_config()?;
    let dual_t = c.sim_config(Some(&vec![1; c.pools.len()]))?;
    let homo_t = c.baseline_config(Some(1))?;
    let rho = dual_t.pools[0].config.throughput_per_instance / dual_t.pools[1].config.throughput_per_instance;
    rates
        .par_iter()
        .map(|&rate| {
            let trace = generate(&tc.spec_at(rate)?)?;
            let alpha = stats(&trace)?.alpha_at(dual_t.b_short);
            let reqs = &trace.requests;
            let (h, d) = rayon::join(
                || search_fleet(&homo_t, reqs, &search, None),
                || search_fleet(&dual_t, reqs, &search, None),
            );
            let (h, d) = (h?, d?);
            let homogeneous = h.counts[0];
            let dual_total: u64 = d.counts.iter().sum();
            log::info!("{rate} req/s: homogeneous {homogeneous}, dual {:?}", d.counts);
            Ok(SavingsRow {
                rate,
                n_requests: reqs.len() as u64,
                homogeneous,
                short: d.counts[0],
                long: d.counts[1],
                dual_total,
                savings: 1.0 - dual_total as f64 / homogeneous as f64,
                alpha,
                predicted: savings_fraction(alpha, rho)?,
                probes: h.probes + d.probes,
            })
        })
        .collect()
}

/// Largest minus smallest savings across rows.
pub fn savings_spread(rows: &[SavingsRow]) -> f64 {
    let hi = rows.iter().map(|r| r.savings).fold(f64::NEG_INFINITY, f64::max);
    let lo = rows.iter().map(|r| r.savings).fold(f64::INFINITY, f64::min);
    hi - lo
}


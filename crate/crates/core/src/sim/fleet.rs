//! Smallest instance counts that keep a trace within latency and loss SLOs.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{run, Counters, SimConfig, SimResult};
use crate::error::{Error, Result};
use crate::metrics::{summarize_parts, MetricsSummary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slo {
    pub p99_ttft_s: f64,
    pub p99_tpot_s: f64,
    /// Ceiling on (rejected + OOM-dropped + unfinished) / arrivals.
    pub max_failure_rate: f64,
}

impl Default for Slo {
    fn default() -> Self {
        Slo {
            p99_ttft_s: 2.0,
            p99_tpot_s: 0.080,
            max_failure_rate: 0.005,
        }
    }
}

impl Slo {
    /// The first metric out of bounds, if any.
    pub fn violation(&self, c: &Counters, m: &MetricsSummary) -> Option<String> {
        if c.arrivals == 0 {
            return None;
        }
        let failed = c.rejected + c.oom_dropped + c.inflight_at_end;
        let rate = failed as f64 / c.arrivals as f64;
        if rate >= self.max_failure_rate {
            return Some(alloc::format!("failure rate {rate:.4}"));
        }
        match m.p99_ttft_s {
            Some(t) if t <= self.p99_ttft_s => {}
            t => return Some(alloc::format!("p99 TTFT {t:?} s")),
        }
        if let Some(t) = m.p99_tpot_ms {
            if t > self.p99_tpot_s * 1e3 {
                return Some(alloc::format!("p99 TPOT {t:.1} ms"));
            }
        }
        None
    }

    fn pool_violation(&self, r: &SimResult, i: usize) -> Option<String> {
        let p = &r.pools[i];
        let m = summarize_parts(&p.measured, p.latency.iter(), r.duration_s, p.instances, r.trace_digest);
        self.violation(&p.measured, &m)
    }

    fn fleet_violation(&self, r: &SimResult) -> Option<String> {
        let m = summarize_parts(
            &r.aggregate_measured,
            r.pools.iter().flat_map(|p| p.latency.iter()),
            r.duration_s,
            r.gpus,
            r.trace_digest,
        );
        self.violation(&r.aggregate_measured, &m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSearch {
    /// Instance count per pool, in `template.pools` order.
    pub counts: Vec<u64>,
    /// Simulations run.
    pub probes: u64,
    /// The run at `counts`.
    pub result: SimResult,
}

struct Prober<'a> {
    template: &'a SimConfig,
    trace: &'a [crate::trace::Request],
    cache: BTreeMap<Vec<u64>, SimResult>,
    probes: u64,
}

impl Prober<'_> {
    fn probe(&mut self, counts: &[u64]) -> Result<&SimResult> {
        if !self.cache.contains_key(counts) {
            let mut cfg = self.template.clone();
            for (p, &n) in cfg.pools.iter_mut().zip(counts) {
                p.instance_count = n;
            }
            let r = run(&cfg, self.trace)?;
            self.probes += 1;
            self.cache.insert(counts.to_vec(), r);
        }
        Ok(&self.cache[counts])
    }
}

/// Shrink pool `i` to the fewest instances for which the fleet meets the SLO,
/// other pools fixed at `counts`.
fn search_pool(pr: &mut Prober, slo: &Slo, counts: &mut [u64], i: usize, ceiling: u64) -> Result<()> {
    let ok = |pr: &mut Prober, counts: &[u64]| -> Result<bool> {
        Ok(slo.fleet_violation(pr.probe(counts)?).is_none())
    };
    let at = |n: u64, counts: &mut [u64], pr: &mut Prober| -> Result<bool> {
        counts[i] = n;
        ok(pr, counts)
    };
    let start = counts[i].clamp(1, ceiling);
    // [lo, hi]: lo fails (or is 0), hi passes
    let (mut lo, mut hi);
    if at(start, counts, pr)? {
        hi = start;
        let mut step = (start / 16).max(1);
        loop {
            let n = hi.saturating_sub(step);
            if n == 0 {
                lo = 0;
                break;
            }
            if at(n, counts, pr)? {
                hi = n;
                step *= 2;
            } else {
                lo = n;
                break;
            }
        }
    } else {
        lo = start;
        hi = start;
        loop {
            if hi >= ceiling {
                counts[i] = ceiling;
                let why = slo.fleet_violation(pr.probe(counts)?).unwrap_or_default();
                return Err(Error::SloUnmeetable {
                    pool: pr.template.pools[i].config.pool_id.clone(),
                    ceiling,
                    metric: why,
                });
            }
            hi = (hi * 2).min(ceiling);
            if at(hi, counts, pr)? {
                break;
            }
            lo = hi;
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if at(mid, counts, pr)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    counts[i] = hi;
    Ok(())
}

/// Minimise each pool's instance count, last pool (the long one) first,
/// then fix up until the fleet meets `slo` over all measured requests. `initial` seeds the search and is
/// usually the queueing estimate.
pub fn find_min_fleet(
    template: &SimConfig,
    trace: &[crate::trace::Request],
    slo: &Slo,
    initial: &[u64],
    ceiling: u64,
) -> Result<FleetSearch> {
    if initial.len() != template.pools.len() {
        return Err(Error::config(alloc::format!(
            "initial: expected {} pool sizes, got {}",
            template.pools.len(),
            initial.len()
        )));
    }
    let mut pr = Prober {
        template,
        trace,
        cache: BTreeMap::new(),
        probes: 0,
    };
    let mut counts: Vec<u64> = initial.iter().map(|&n| n.clamp(1, ceiling)).collect();
    for i in (0..counts.len()).rev() {
        search_pool(&mut pr, slo, &mut counts, i, ceiling)?;
    }
    loop {
        let r = pr.probe(&counts)?;
        let Some(why) = slo.fleet_violation(r) else { break };
        let failing: Vec<usize> = (0..counts.len())
            .filter(|&i| slo.pool_violation(r, i).is_some())
            .collect();
        let bump: Vec<usize> = if failing.is_empty() { (0..counts.len()).collect() } else { failing };
        for i in bump {
            if counts[i] >= ceiling {
                return Err(Error::SloUnmeetable {
                    pool: template.pools[i].config.pool_id.clone(),
                    ceiling,
                    metric: why,
                });
            }
            counts[i] += 1;
        }
    }
    let result = pr.cache.remove(&counts).expect("probed");
    Ok(FleetSearch {
        counts,
        probes: pr.probes,
        result,
    })
}

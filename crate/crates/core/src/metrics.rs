//! Percentiles, run summaries, baseline comparison and preemption alerts.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::cost::nearest_rank_index;
use crate::error::{Error, Result};
use crate::sim::{Counters, LatencyRecord, PoolResult, SimResult};

/// Nearest-rank percentile: the sample at 1-based rank `ceil(p * n)`.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, p)
}

/// [`percentile`] on an already ascending slice.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    Ok(sorted[nearest_rank_index(sorted.len(), p)?])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub arrivals: u64,
    pub completed: u64,
    pub p50_ttft_s: Option<f64>,
    pub p99_ttft_s: Option<f64>,
    pub p50_tpot_ms: Option<f64>,
    pub p99_tpot_ms: Option<f64>,
    pub preemption_per_mille: f64,
    pub oom_per_hour: f64,
    pub rejection_rate: f64,
    pub oom_drop_rate: f64,
    pub success_rate: f64,
    pub gpus: u64,
    pub savings_vs_baseline: Option<f64>,
    pub trace_digest: u64,
}

/// Summary of one pool's (or the fleet's) measured counters and latencies.
pub fn summarize_parts<'a>(
    c: &Counters,
    latency: impl Iterator<Item = &'a LatencyRecord>,
    duration_s: f64,
    gpus: u64,
    trace_digest: u64,
) -> MetricsSummary {
    let mut ttft = Vec::new();
    let mut tpot = Vec::new();
    for r in latency {
        ttft.push(r.ttft_s);
        if let Some(t) = r.tpot_s {
            tpot.push(t * 1e3);
        }
    }
    ttft.sort_by(f64::total_cmp);
    tpot.sort_by(f64::total_cmp);
    let pct = |v: &[f64], p| percentile_sorted(v, p).ok();
    let settled = c.completed + c.rejected + c.oom_dropped;
    let rate = |x: u64| if settled == 0 { 0.0 } else { x as f64 / settled as f64 };
    let rejection_rate = rate(c.rejected);
    let oom_drop_rate = rate(c.oom_dropped);
    MetricsSummary {
        arrivals: c.arrivals,
        completed: c.completed,
        p50_ttft_s: pct(&ttft, 0.5),
        p99_ttft_s: pct(&ttft, 0.99),
        p50_tpot_ms: pct(&tpot, 0.5),
        p99_tpot_ms: pct(&tpot, 0.99),
        preemption_per_mille: if c.completed == 0 {
            0.0
        } else {
            1e3 * c.preempted_events as f64 / c.completed as f64
        },
        oom_per_hour: if duration_s > 0.0 {
            c.oom_dropped as f64 * 3600.0 / duration_s
        } else {
            0.0
        },
        rejection_rate,
        oom_drop_rate,
        success_rate: 1.0 - rejection_rate - oom_drop_rate,
        gpus,
        savings_vs_baseline: None,
        trace_digest,
    }
}

pub fn summarize_pool(result: &SimResult, pool: &PoolResult) -> MetricsSummary {
    summarize_parts(
        &pool.measured,
        pool.latency.iter(),
        result.duration_s,
        pool.instances,
        result.trace_digest,
    )
}

/// Fleet-wide summary over measured (post-warmup) requests.
pub fn summarize(result: &SimResult) -> MetricsSummary {
    summarize_parts(
        &result.aggregate_measured,
        result.pools.iter().flat_map(|p| p.latency.iter()),
        result.duration_s,
        result.gpus,
        result.trace_digest,
    )
}

/// Aggregate plus per-pool summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub aggregate: MetricsSummary,
    pub pools: Vec<(String, MetricsSummary)>,
}

pub fn summarize_run(result: &SimResult) -> RunSummary {
    RunSummary {
        aggregate: summarize(result),
        pools: result
            .pools
            .iter()
            .map(|p| (p.pool_id.clone(), summarize_pool(result, p)))
            .collect(),
    }
}

/// Baseline-over-candidate factor; `Infinite` when the candidate is zero and
/// the baseline is not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Improvement {
    Finite(f64),
    Infinite,
}

impl Improvement {
    fn of(baseline: f64, candidate: f64) -> Self {
        if candidate == 0.0 {
            if baseline == 0.0 {
                Improvement::Finite(1.0)
            } else {
                Improvement::Infinite
            }
        } else {
            Improvement::Finite(baseline / candidate)
        }
    }

    /// True when the improvement is at least `factor`.
    pub fn at_least(&self, factor: f64) -> bool {
        match self {
            Improvement::Infinite => true,
            Improvement::Finite(x) => *x >= factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub gpu_savings_fraction: f64,
    pub preemption_ratio: Improvement,
    pub oom_ratio: Improvement,
    pub p50_ttft_delta_s: Option<f64>,
    pub p99_ttft_delta_s: Option<f64>,
    pub p50_tpot_delta_ms: Option<f64>,
    pub p99_tpot_delta_ms: Option<f64>,
    pub success_rate_delta: f64,
}

fn delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(b? - a?)
}

/// Candidate relative to baseline. Both must come from the same trace.
pub fn compare(baseline: &MetricsSummary, candidate: &MetricsSummary) -> Result<Comparison> {
    if baseline.trace_digest != candidate.trace_digest || baseline.arrivals != candidate.arrivals {
        return Err(Error::Mismatch(alloc::format!(
            "baseline saw trace {:016x} with {} arrivals, candidate {:016x} with {}",
            baseline.trace_digest,
            baseline.arrivals,
            candidate.trace_digest,
            candidate.arrivals
        )));
    }
    let gpu_savings_fraction = if baseline.gpus == 0 {
        0.0
    } else {
        1.0 - candidate.gpus as f64 / baseline.gpus as f64
    };
    Ok(Comparison {
        gpu_savings_fraction,
        preemption_ratio: Improvement::of(baseline.preemption_per_mille, candidate.preemption_per_mille),
        oom_ratio: Improvement::of(baseline.oom_per_hour, candidate.oom_per_hour),
        p50_ttft_delta_s: delta(baseline.p50_ttft_s, candidate.p50_ttft_s),
        p99_ttft_delta_s: delta(baseline.p99_ttft_s, candidate.p99_ttft_s),
        p50_tpot_delta_ms: delta(baseline.p50_tpot_ms, candidate.p50_tpot_ms),
        p99_tpot_delta_ms: delta(baseline.p99_tpot_ms, candidate.p99_tpot_ms),
        success_rate_delta: candidate.success_rate - baseline.success_rate,
    })
}

/// Default alert threshold: 1% of requests preempted within a window.
pub const PREEMPTION_ALERT_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub window: usize,
    pub rate: f64,
}

/// One alert per window whose rate exceeds `threshold`.
pub fn alert_preemption(window_rates: &[f64], threshold: f64) -> Vec<Alert> {
    window_rates
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > threshold)
        .map(|(window, &rate)| Alert { window, rate })
        .collect()
}

/// Fleet-wide preemptions per completion in each alert window.
pub fn preemption_window_rates(result: &SimResult) -> Vec<f64> {
    let n = result.pools.iter().map(|p| p.windows.len()).max().unwrap_or(0);
    (0..n)
        .map(|w| {
            let (mut pre, mut done) = (0u64, 0u64);
            for p in &result.pools {
                if let Some(c) = p.windows.get(w) {
                    pre += c.preemptions;
                    done += c.completions;
                }
            }
            pre as f64 / done.max(1) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn percentile_examples() {
        let v: Vec<f64> = (1..=100).map(|x| x as f64).collect();
        assert_eq!(percentile(&v, 0.99).unwrap(), 99.0);
        assert_eq!(percentile(&v, 0.5).unwrap(), 50.0);
        assert_eq!(percentile(&[7.5], 0.01).unwrap(), 7.5);
        assert_eq!(percentile(&[5.0; 100], 0.5).unwrap(), 5.0);
        assert!(percentile(&[], 0.5).is_err());
        assert!(percentile(&[1.0], 0.0).is_err());
    }

    fn counters(arrivals: u64, rejected: u64, oom: u64) -> Counters {
        Counters {
            arrivals,
            completed: arrivals - rejected - oom,
            rejected,
            oom_dropped: oom,
            ..Default::default()
        }
    }

    #[test]
    fn success_rate_arithmetic() {
        let s = summarize_parts(&counters(1000, 3, 1), [].iter(), 3600.0, 4, 0);
        assert!((s.success_rate - 0.996).abs() < 1e-12);
        assert_eq!(s.oom_per_hour, 1.0);
        assert!(s.p99_ttft_s.is_none());
        let clean = summarize_parts(&counters(10, 0, 0), [].iter(), 1.0, 1, 0);
        assert_eq!(clean.success_rate, 1.0);
    }

    #[test]
    fn compare_examples() {
        let mut base = summarize_parts(&counters(1000, 0, 0), [].iter(), 1.0, 358, 9);
        base.preemption_per_mille = 47.3;
        let mut cand = base.clone();
        cand.gpus = 208;
        cand.preemption_per_mille = 8.7;
        let c = compare(&base, &cand).unwrap();
        assert!((c.gpu_savings_fraction - 0.419).abs() < 5e-4);
        let Improvement::Finite(r) = c.preemption_ratio else { panic!() };
        assert!((r - 5.4).abs() < 0.05);
        let same = compare(&base, &base).unwrap();
        assert_eq!(same.gpu_savings_fraction, 0.0);
        assert_eq!(same.preemption_ratio, Improvement::Finite(1.0));
        assert_eq!(same.oom_ratio, Improvement::Finite(1.0));
        cand.preemption_per_mille = 0.0;
        assert_eq!(compare(&base, &cand).unwrap().preemption_ratio, Improvement::Infinite);
        cand.trace_digest = 10;
        assert!(compare(&base, &cand).is_err());
    }

    #[test]
    fn savings_swap_relation() {
        let a = summarize_parts(&counters(5, 0, 0), [].iter(), 1.0, 358, 0);
        let b = MetricsSummary { gpus: 208, ..a.clone() };
        let s = compare(&a, &b).unwrap().gpu_savings_fraction;
        let back = compare(&b, &a).unwrap().gpu_savings_fraction;
        // swapping gives -s / (1 - s)
        assert!((back - (-s / (1.0 - s))).abs() < 1e-12);
    }

    #[test]
    fn alerts() {
        assert!(alert_preemption(&[0.0; 12], 0.01).is_empty());
        let a = alert_preemption(&[0.0, 0.02, 0.01], 0.01);
        assert_eq!(a, alloc::vec![Alert { window: 1, rate: 0.02 }]);
    }

    proptest! {
        #[test]
        fn percentile_is_a_sample(v in proptest::collection::vec(-1e6f64..1e6, 1..200), p in 0.001f64..=1.0) {
            let x = percentile(&v, p).unwrap();
            prop_assert!(v.contains(&x));
            let below = v.iter().filter(|&&y| y <= x).count();
            prop_assert!(below as f64 >= p * v.len() as f64 - 1e-9);
        }
    }
}

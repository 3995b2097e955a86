//! Closed-form fleet sizing: the two-pool savings formula, GPU counts,
//! empirical traffic CDFs and formula-level threshold sweeps.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv;
use crate::math;

/// Fractional GPU savings `alpha * (1 - 1/rho)` of splitting off a short pool
/// that is `rho` times faster per instance and takes `alpha` of the traffic.
///
/// Negative results (rho < 1) are returned as is.
pub fn savings_fraction(alpha: f64, rho: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfUnitRange {
            name: "alpha",
            value: alpha,
        });
    }
    if !(rho > 0.0) {
        return Err(Error::DegenerateRatio(rho));
    }
    Ok(alpha * (1.0 - 1.0 / rho))
}

fn check_mu(name: &'static str, mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositive { name, value: mu })
    }
}

fn instances_for(rate: f64, mu: f64) -> u64 {
    if rate <= 0.0 {
        0
    } else {
        math::ceil_tolerant(rate / mu) as u64
    }
}

/// `ceil(rate / mu)`: instances needed when every request goes to one pool.
pub fn homogeneous_gpus(rate: f64, mu: f64) -> Result<u64> {
    check_mu("mu", mu)?;
    Ok(instances_for(rate, mu))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualPoolGpus {
    pub short: u64,
    pub long: u64,
    pub total: u64,
}

/// Independent ceilings for the short (`alpha` of traffic) and long pools.
pub fn dual_pool_gpus(rate: f64, alpha: f64, mu_short: f64, mu_long: f64) -> Result<DualPoolGpus> {
    check_mu("mu_short", mu_short)?;
    check_mu("mu_long", mu_long)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfUnitRange {
            name: "alpha",
            value: alpha,
        });
    }
    let short = instances_for(alpha * rate, mu_short);
    let long = instances_for((1.0 - alpha) * rate, mu_long);
    Ok(DualPoolGpus {
        short,
        long,
        total: short + long,
    })
}

/// Sorted per-request total budgets (`prompt + max_output`) and the empirical
/// CDF over them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficStats {
    sorted_total_budgets: Vec<u64>,
}

impl TrafficStats {
    pub fn from_budgets(mut budgets: Vec<u64>) -> Result<Self> {
        if budgets.is_empty() {
            return Err(Error::EmptyTrace);
        }
        budgets.sort_unstable();
        Ok(TrafficStats {
            sorted_total_budgets: budgets,
        })
    }

    pub fn len(&self) -> usize {
        self.sorted_total_budgets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted_total_budgets.is_empty()
    }

    pub fn sorted(&self) -> &[u64] {
        &self.sorted_total_budgets
    }

    /// Fraction of requests with total budget `<= threshold`.
    pub fn alpha_at(&self, threshold: u64) -> f64 {
        let n = self.sorted_total_budgets.partition_point(|&b| b <= threshold);
        n as f64 / self.len() as f64
    }

    /// Nearest-rank quantile, `p` in (0, 1].
    pub fn quantile(&self, p: f64) -> Result<u64> {
        let idx = nearest_rank_index(self.len(), p)?;
        Ok(self.sorted_total_budgets[idx])
    }
}

/// 0-based index of the nearest-rank `p` quantile among `n` sorted samples.
pub(crate) fn nearest_rank_index(n: usize, p: f64) -> Result<usize> {
    if n == 0 {
        return Err(Error::EmptySamples);
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidPercentile(p));
    }
    // guard against 0.99 * 100 = 99.00000000000001
    let rank = math::ceil(p * n as f64 - 1e-9).max(1.0) as usize;
    Ok(rank.min(n) - 1)
}

/// `alpha_at` with the empty-trace check made explicit.
pub fn alpha_from_trace(stats: &TrafficStats, threshold: u64) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(stats.alpha_at(threshold))
}

/// One threshold of a savings sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: u64,
    pub alpha: f64,
    pub rho: f64,
    pub predicted_savings: f64,
    pub simulated_savings: Option<f64>,
}

/// Formula-only savings at each threshold; `rho_of` maps a threshold to the
/// short/long throughput ratio.
pub fn formula_sweep(
    stats: &TrafficStats,
    thresholds: &[u64],
    rho_of: impl Fn(u64) -> f64,
) -> Result<Vec<SweepPoint>> {
    if thresholds.is_empty() || thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::BadThresholds);
    }
    thresholds
        .iter()
        .map(|&t| {
            let alpha = alpha_from_trace(stats, t)?;
            let rho = rho_of(t);
            Ok(SweepPoint {
                threshold: t,
                alpha,
                rho,
                predicted_savings: savings_fraction(alpha, rho)?,
                simulated_savings: None,
            })
        })
        .collect()
}

/// Throughput ratio of a short pool with context `B` over the long pool,
/// derived from KV concurrency and anchored to a measured point.
///
/// `raw(B) = min(N_seq(B) / N_seq(C_H), ratio_cap)` and `rho = raw^k` with `k`
/// chosen so `rho(anchor_threshold) = anchor_rho`. The power keeps
/// `rho(C_H) = 1` and monotonicity in `B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoModel {
    pub kv_budget_bytes: u64,
    pub kv_bytes_per_token: u64,
    pub c_long: u64,
    pub ratio_cap: f64,
    pub anchor_threshold: u64,
    pub anchor_rho: f64,
}

impl Default for RhoModel {
    /// A 1,048,576-token instance (16 x 65K = 128 x 8K), measured 11.2/2.8 = 4 at 8K.
    fn default() -> Self {
        RhoModel {
            kv_budget_bytes: 16 * 65_536,
            kv_bytes_per_token: 1,
            c_long: 65_536,
            ratio_cap: 8.0,
            anchor_threshold: 8_192,
            anchor_rho: 4.0,
        }
    }
}

impl RhoModel {
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.kv_bytes_per_token == 0 {
            v.push("rho_model.kv_bytes_per_token must be >= 1".into());
        }
        if self.c_long == 0 {
            v.push("rho_model.c_long must be >= 1".into());
        }
        if !(self.ratio_cap >= 1.0) {
            v.push("rho_model.ratio_cap must be >= 1".into());
        }
        if !(self.anchor_rho > 0.0) {
            v.push("rho_model.anchor_rho must be > 0".into());
        }
        if v.is_empty() {
            let long = self.seqs(self.c_long);
            if long == 0 {
                v.push("rho_model: KV budget holds no long-context sequence".into());
            } else {
                let raw = self.raw(self.anchor_threshold);
                if !(raw > 1.0) {
                    v.push("rho_model: anchor threshold has no concurrency gain".into());
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    fn seqs(&self, c: u64) -> u64 {
        kv::max_concurrent_seqs(self.kv_budget_bytes, self.kv_bytes_per_token, c.max(1))
    }

    /// Capped concurrency ratio before anchoring.
    pub fn raw(&self, threshold: u64) -> f64 {
        let long = self.seqs(self.c_long).max(1) as f64;
        let r = self.seqs(threshold) as f64 / long;
        r.min(self.ratio_cap)
    }

    fn exponent(&self) -> f64 {
        math::ln(self.anchor_rho) / math::ln(self.raw(self.anchor_threshold))
    }

    pub fn rho(&self, threshold: u64) -> f64 {
        let raw = self.raw(threshold);
        if raw <= 0.0 {
            return 0.0;
        }
        math::powf(raw, self.exponent())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn savings_examples() {
        assert!((savings_fraction(0.80, 4.0).unwrap() - 0.60).abs() < 1e-15);
        assert!((savings_fraction(0.70, 2.0).unwrap() - 0.35).abs() < 1e-15);
        assert_eq!(savings_fraction(0.37, 1.0).unwrap(), 0.0);
        assert_eq!(savings_fraction(0.5, 0.0), Err(Error::DegenerateRatio(0.0)));
        assert!(savings_fraction(0.5, 0.5).unwrap() < 0.0);
    }

    #[test]
    fn gpu_counts() {
        assert_eq!(homogeneous_gpus(1000.0, 2.8).unwrap(), 358);
        assert_eq!(homogeneous_gpus(0.0, 2.8).unwrap(), 0);
        assert_eq!(homogeneous_gpus(100.0, 2.8).unwrap(), 36);
        assert!(homogeneous_gpus(1.0, 0.0).is_err());
        let d = dual_pool_gpus(1000.0, 0.8, 11.2, 2.8).unwrap();
        assert_eq!((d.short, d.long, d.total), (72, 72, 144));
        let d = dual_pool_gpus(1000.0, 0.0, 11.2, 2.8).unwrap();
        assert_eq!((d.short, d.long), (0, 358));
    }

    #[test]
    fn exact_quotients_do_not_round_up() {
        // 0.3 * 10 / 0.1 is 29.999999999999996 or 30.000000000000004 in floats
        assert_eq!(homogeneous_gpus(3.0, 0.1).unwrap(), 30);
        assert_eq!(homogeneous_gpus(1.0, 0.1).unwrap(), 10);
    }

    #[test]
    fn cdf_and_quantiles() {
        let s = TrafficStats::from_budgets(vec![5, 1, 3, 3]).unwrap();
        assert_eq!(s.alpha_at(0), 0.0);
        assert_eq!(s.alpha_at(3), 0.75);
        assert_eq!(s.alpha_at(u64::MAX), 1.0);
        assert_eq!(s.quantile(0.5).unwrap(), 3);
        assert_eq!(s.quantile(1.0).unwrap(), 5);
        assert!(TrafficStats::from_budgets(vec![]).is_err());
        let one = TrafficStats::from_budgets(vec![100]).unwrap();
        assert_eq!(one.alpha_at(99), 0.0);
        assert_eq!(one.alpha_at(100), 1.0);
    }

    #[test]
    fn sweep_rejects_unsorted() {
        let s = TrafficStats::from_budgets(vec![1, 2]).unwrap();
        assert!(formula_sweep(&s, &[], |_| 2.0).is_err());
        assert!(formula_sweep(&s, &[4, 2], |_| 2.0).is_err());
        let p = formula_sweep(&s, &[1], |_| 2.0).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].predicted_savings, savings_fraction(0.5, 2.0).unwrap());
    }

    #[test]
    fn rho_model_anchor() {
        let m = RhoModel::default();
        m.validate().unwrap();
        assert!((m.rho(8_192) - 4.0).abs() < 1e-12);
        assert!((m.rho(65_536) - 1.0).abs() < 1e-12);
        // capped at 8x below 8K, so 4K and 1K share the anchor value
        assert!((m.rho(1_024) - 4.0).abs() < 1e-12);
        assert!(m.rho(16_384) < 4.0 && m.rho(16_384) > m.rho(32_768));
    }

    proptest! {
        #[test]
        fn alpha_matches_linear_scan(mut v in proptest::collection::vec(0u64..100_000, 1..300),
                                     t in 0u64..120_000) {
            let s = TrafficStats::from_budgets(v.clone()).unwrap();
            let brute = v.iter().filter(|&&b| b <= t).count();
            let got = s.alpha_at(t) * v.len() as f64;
            prop_assert!((got - brute as f64).abs() < 1.0);
            v.sort();
            let q = s.quantile(0.9).unwrap();
            prop_assert!(v.contains(&q));
        }

        #[test]
        fn savings_monotone(a in 0.0f64..1.0, da in 0.0f64..0.5, r in 1.0f64..20.0, dr in 0.0f64..5.0) {
            let base = savings_fraction(a, r).unwrap();
            prop_assert!(savings_fraction((a + da).min(1.0), r).unwrap() >= base);
            prop_assert!(savings_fraction(a, r + dr).unwrap() >= base - 1e-15);
            prop_assert!((0.0..1.0).contains(&base));
        }

        #[test]
        fn degenerate_alpha_costs_only_ceiling_slack(rate in 0.0f64..5000.0, ms in 0.1f64..50.0, ml in 0.1f64..50.0) {
            let h = homogeneous_gpus(rate, ml).unwrap();
            prop_assert!(dual_pool_gpus(rate, 0.0, ms, ml).unwrap().total <= h + 1);
            let hs = homogeneous_gpus(rate, ms).unwrap();
            prop_assert!(dual_pool_gpus(rate, 1.0, ms, ml).unwrap().total <= hs + 1);
        }
    }
}

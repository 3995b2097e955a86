use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tokenpool_core::cost::{formula_sweep, SweepPoint};
use tokenpool_core::sim::SimConfig;
use tokenpool_core::trace::stats;

use super::search_fleet;
use crate::config::Experiment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    pub homogeneous: Option<u64>,
    /// Searched `[short, long]` counts per threshold.
    pub fleets: Vec<Option<Vec<u64>>>,
}

/// Two-pool template with the short pool resized for threshold `b`: context
/// `b`, seats `kv_tokens / b` up to `max_seqs`, and the long pool untouched.
pub fn fleet_at_threshold(base: &SimConfig, b: u64, kv_tokens: u64, max_seqs: u64, rho: f64) -> Result<SimConfig> {
    let mut cfg = base.clone();
    let long_mu = cfg.pools[1].config.throughput_per_instance;
    let short = &mut cfg.pools[0];
    short.config.c_max = b;
    short.config.n_seq_cap = (kv_tokens / b.max(1)).clamp(1, max_seqs.max(1));
    short.config.throughput_per_instance = rho * long_mu;
    short.kv_capacity_tokens = Some(kv_tokens);
    cfg.b_short = b;
    cfg.validate().map_err(tokenpool_core::Error::Config)?;
    Ok(cfg)
}

/// Predicted savings at every threshold and, when `simulate`, the searched
/// fleets' savings against one searched homogeneous fleet.
pub fn sweep(exp: &Experiment, thresholds: Option<&[u64]>, simulate: Option<bool>) -> Result<SweepReport> {
    let c = &exp.config;
    let sc = c.sweep.as_ref().ok_or_else(|| Error::config("sweep", "missing section"))?;
    let thresholds = thresholds.unwrap_or(&sc.thresholds);
    let simulate = simulate.unwrap_or(sc.simulate);
    let trace = exp.trace()?;
    let mut points = formula_sweep(&stats(&trace)?, thresholds, |t| sc.rho_model.rho(t))?;
    if !simulate {
        return Ok(SweepReport {
            fleets: vec![None; points.len()],
            points,
            homogeneous: None,
        });
    }
    let search = c.search.clone().unwrap_or_default();
    let reqs = &trace.requests;
    let base = c.sim_config(Some(&vec![1; c.pools.len()]))?;
    let templates = points
        .iter()
        .map(|p| fleet_at_threshold(&base, p.threshold, sc.kv_tokens, sc.max_seqs, p.rho))
        .collect::<Result<Vec<_>>>()?;
    let homo_t = c.baseline_config(Some(1))?;
    let (homo, duals) = rayon::join(
        || search_fleet(&homo_t, reqs, &search, None),
        || {
            templates
                .par_iter()
                .map(|t| search_fleet(t, reqs, &search, None))
                .collect::<Result<Vec<_>>>()
        },
    );
    let homogeneous = homo?.counts[0];
    let duals = duals?;
    let mut fleets = Vec::new();
    for (p, d) in points.iter_mut().zip(&duals) {
        let total: u64 = d.counts.iter().sum();
        log::info!("threshold {}: dual {:?} vs homogeneous {homogeneous}", p.threshold, d.counts);
        p.simulated_savings = Some(1.0 - total as f64 / homogeneous as f64);
        fleets.push(Some(d.counts.clone()));
    }
    Ok(SweepReport {
        points,
        homogeneous: Some(homogeneous),
        fleets,
    })
}

fn value(p: &SweepPoint) -> f64 {
    p.simulated_savings.unwrap_or(p.predicted_savings)
}

/// Every threshold in `[lo, hi]` reaches `fraction` of the peak (simulated
/// savings when present, else predicted).
pub fn check_plateau(points: &[SweepPoint], fraction: f64, lo: u64, hi: u64) -> std::result::Result<(), String> {
    let peak = points.iter().map(value).fold(f64::NEG_INFINITY, f64::max);
    let inside: Vec<&SweepPoint> = points.iter().filter(|p| (lo..=hi).contains(&p.threshold)).collect();
    if inside.is_empty() {
        return Err(format!("no sweep threshold lies in [{lo}, {hi}]"));
    }
    let short: Vec<String> = inside
        .iter()
        .filter(|p| value(p) < fraction * peak)
        .map(|p| format!("{} ({:.3})", p.threshold, value(p)))
        .collect();
    if short.is_empty() {
        Ok(())
    } else {
        Err(format!(
            "below {fraction} of peak savings {peak:.3}: {}",
            short.join(", ")
        ))
    }
}

/// Rises to one peak then falls, forgiving dips of at most `tol`.
pub fn is_unimodal(points: &[SweepPoint], tol: f64) -> bool {
    let v: Vec<f64> = points.iter().map(value).collect();
    let Some(peak) = (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])) else {
        return true;
    };
    v[..=peak].windows(2).all(|w| w[1] >= w[0] - tol) && v[peak..].windows(2).all(|w| w[1] <= w[0] + tol)
}

/// Thresholds whose simulated savings beat the closed-form prediction.
pub fn check_upper_bound(points: &[SweepPoint]) -> std::result::Result<(), String> {
    let over: Vec<String> = points
        .iter()
        .filter_map(|p| {
            let s = p.simulated_savings?;
            (s > p.predicted_savings).then(|| format!("{} ({s:.3} > {:.3})", p.threshold, p.predicted_savings))
        })
        .collect();
    if over.is_empty() {
        Ok(())
    } else {
        Err(format!("simulated savings exceed the prediction at {}", over.join(", ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(u64, f64)]) -> Vec<SweepPoint> {
        v.iter()
            .map(|&(t, s)| SweepPoint {
                threshold: t,
                alpha: 0.5,
                rho: 4.0,
                predicted_savings: 0.6,
                simulated_savings: Some(s),
            })
            .collect()
    }

    #[test]
    fn plateau() {
        let p = pts(&[(1024, 0.1), (4096, 0.33), (8192, 0.40), (16384, 0.325), (32768, 0.1)]);
        assert!(check_plateau(&p, 0.8, 4096, 16384).is_ok());
        let e = check_plateau(&p, 0.85, 4096, 16384).unwrap_err();
        assert!(e.contains("16384") && e.contains("4096"), "{e}");
        assert!(check_plateau(&p, 0.8, 5000, 6000).is_err());
    }

    #[test]
    fn unimodality() {
        assert!(is_unimodal(&pts(&[(1, 0.1), (2, 0.3), (3, 0.2)]), 0.0));
        assert!(is_unimodal(&pts(&[(1, 0.1), (2, 0.09), (3, 0.3), (4, 0.2)]), 0.02));
        assert!(!is_unimodal(&pts(&[(1, 0.3), (2, 0.1), (3, 0.3), (4, 0.2)]), 0.02));
        assert!(is_unimodal(&[], 0.0));
    }

    #[test]
    fn upper_bound() {
        assert!(check_upper_bound(&pts(&[(1, 0.5)])).is_ok());
        assert!(check_upper_bound(&pts(&[(1, 0.61)])).is_err());
    }

    #[test]
    fn short_pool_resized() {
        let base = SimConfig::dual(
            tokenpool_core::kv::PoolConfig::short_8k(),
            1,
            tokenpool_core::kv::PoolConfig::long_65k(),
            1,
            8_192,
        );
        let c = fleet_at_threshold(&base, 32_768, 1_048_576, 128, 1.6).unwrap();
        assert_eq!((c.pools[0].config.c_max, c.pools[0].config.n_seq_cap, c.b_short), (32_768, 32, 32_768));
        let c = fleet_at_threshold(&base, 1_024, 1_048_576, 128, 4.0).unwrap();
        assert_eq!(c.pools[0].config.n_seq_cap, 128);
        assert!((c.pools[0].config.throughput_per_instance - 11.2).abs() < 1e-12);
        assert!(fleet_at_threshold(&base, 131_072, 1_048_576, 128, 1.0).is_err());
    }
}

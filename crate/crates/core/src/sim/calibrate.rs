//! Fit iteration-time coefficients to a measured per-instance throughput.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{run, IterationModel, PoolSpec, RoutingMode, SimConfig};
use crate::error::{Error, Result};
use crate::kv::PoolConfig;
use crate::math;
use crate::trace::Request;

const MIN_SAMPLE: usize = 20;
const SCALE_LO: f64 = 1e-3;
const SCALE_HI: f64 = 1e3;
const BISECT_STEPS: usize = 60;

/// Throughput of one saturated instance: every sample request arrives at
/// t = 0 and we time completions between the 10% and 90% marks.
pub fn saturated_throughput(
    pool: &PoolConfig,
    model: &IterationModel,
    sample: &[Request],
    kv_capacity_tokens: Option<u64>,
) -> Result<f64> {
    let reqs: Vec<Request> = sample
        .iter()
        .filter(|r| r.total_budget() <= pool.c_max)
        .map(|r| Request {
            arrival_s: 0.0,
            ..r.clone()
        })
        .collect();
    if reqs.len() < MIN_SAMPLE {
        return Err(Error::config(alloc::format!(
            "calibration sample needs at least {MIN_SAMPLE} requests that fit c_max = {}",
            pool.c_max
        )));
    }
    let mut cfg = SimConfig::homogeneous(pool.clone(), 1);
    cfg.pools = alloc::vec![PoolSpec {
        iteration_model: Some(*model),
        kv_capacity_tokens,
        ..PoolSpec::new(pool.clone(), 1)
    }];
    cfg.routing = RoutingMode::RoundRobinHomogeneous;
    cfg.warmup_fraction = 0.0;
    cfg.record_events = true;
    let res = run(&cfg, &reqs)?;
    let mut done: Vec<f64> = res
        .events
        .unwrap_or_default()
        .iter()
        .filter_map(|e| e.finished_at_s)
        .collect();
    done.sort_by(f64::total_cmp);
    let n = done.len();
    let a = n / 10;
    let b = (9 * n) / 10;
    let span = done[b.min(n - 1)] - done[a];
    if !(span > 0.0) {
        return Ok(f64::INFINITY);
    }
    Ok((b - a) as f64 / span)
}

/// Scale `base`'s per-token and per-sequence costs (keeping `t_fixed`) until
/// the saturated throughput on `sample` matches `target_mu`.
pub fn calibrate_iteration_model(
    target_mu: f64,
    pool: &PoolConfig,
    sample: &[Request],
    base: &IterationModel,
    kv_capacity_tokens: Option<u64>,
) -> Result<IterationModel> {
    let mu = |s: f64| saturated_throughput(pool, &base.scaled(s), sample, kv_capacity_tokens);
    let fastest = mu(SCALE_LO)?;
    let slowest = mu(SCALE_HI)?;
    if !(target_mu > 0.0) || target_mu > fastest || target_mu < slowest {
        return Err(Error::Calibration {
            target: target_mu,
            min: slowest,
            max: fastest,
        });
    }
    let (mut lo, mut hi) = (math::ln(SCALE_LO), math::ln(SCALE_HI));
    for _ in 0..BISECT_STEPS {
        let mid = 0.5 * (lo + hi);
        let m = mu(math::exp(mid))?;
        if (m / target_mu - 1.0).abs() < 1e-4 {
            return Ok(base.scaled(math::exp(mid)));
        }
        // throughput falls as the scale grows
        if m > target_mu {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(base.scaled(math::exp(0.5 * (lo + hi))))
}

/// One iteration model for every pool, matching two measured throughputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedCalibration {
    pub model: IterationModel,
    pub long_mu: f64,
    pub short_mu: f64,
}

/// Search `t_fixed` so that, after [`calibrate_iteration_model`] pins the
/// long pool to `long_mu`, the short pool also reaches `short_mu`.
///
/// Bigger fixed costs favour the many-seat short pool, which amortises them
/// over more sequences, so the short pool's throughput rises with `t_fixed`.
pub fn calibrate_shared_model(
    long: (&PoolConfig, &[Request], f64),
    short: (&PoolConfig, &[Request], f64),
    base: &IterationModel,
) -> Result<SharedCalibration> {
    let (lp, ls, lmu) = long;
    let (sp, ss, smu) = short;
    let eval = |t_fixed: f64| -> Result<(IterationModel, f64)> {
        let b = IterationModel { t_fixed_s: t_fixed, ..*base };
        let m = calibrate_iteration_model(lmu, lp, ls, &b, None)?;
        Ok((m, saturated_throughput(sp, &m, ss, None)?))
    };
    let (mut lo, mut hi) = (math::ln(1e-4), math::ln(1.0));
    let mut best: Option<(IterationModel, f64)> = None;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        match eval(math::exp(mid)) {
            // the long target is out of reach with this much fixed cost
            Err(Error::Calibration { .. }) => hi = mid,
            Err(e) => return Err(e),
            Ok((m, s)) => {
                let err = (s / smu - 1.0).abs();
                if best.as_ref().is_none_or(|(_, bs)| err < (bs / smu - 1.0).abs()) {
                    best = Some((m, s));
                }
                if err < 1e-3 {
                    break;
                }
                if s < smu {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
    }
    let (model, s) = best.ok_or(Error::Calibration {
        target: lmu,
        min: 0.0,
        max: 0.0,
    })?;
    Ok(SharedCalibration {
        model,
        long_mu: saturated_throughput(lp, &model, ls, None)?,
        short_mu: s,
    })
}

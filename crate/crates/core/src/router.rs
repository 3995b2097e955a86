//! Two-pool dispatch: feasibility, threshold on the estimated total budget,
//! one-hop load-aware spillover, and a final capacity check.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Estimator;
use crate::kv::PoolConfig;

/// Which of the two pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSide {
    Short,
    Long,
}

impl PoolSide {
    pub fn other(self) -> Self {
        match self {
            PoolSide::Short => PoolSide::Long,
            PoolSide::Long => PoolSide::Short,
        }
    }
}

/// The routing step that decided the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteStage {
    Feasibility,
    BudgetShort,
    BudgetLong,
    Spillover,
    Safety,
}

/// Aggregate load of one pool as the router sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    pub config: PoolConfig,
    pub queue_depth: u64,
    pub inflight: u64,
    pub overload_queue_threshold: u64,
}

impl PoolState {
    /// Idle pool with the default overload threshold `2 * n_seq_cap * instances`.
    pub fn idle(config: PoolConfig, instances: u64) -> Self {
        let t = default_overload_threshold(&config, instances);
        PoolState {
            config,
            queue_depth: 0,
            inflight: 0,
            overload_queue_threshold: t,
        }
    }
}

pub fn default_overload_threshold(config: &PoolConfig, instances: u64) -> u64 {
    2 * config.n_seq_cap * instances
}

pub fn is_overloaded(pool: &PoolState) -> bool {
    pool.queue_depth > pool.overload_queue_threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub pool: PoolSide,
    pub l_total_est: u64,
    pub stage: RouteStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum RouteOutcome {
    Dispatch(RouteDecision),
    /// The estimate exceeds even the long pool's context limit.
    Reject { l_total_est: u64 },
}

impl RouteOutcome {
    pub fn decision(&self) -> Option<&RouteDecision> {
        match self {
            RouteOutcome::Dispatch(d) => Some(d),
            RouteOutcome::Reject { .. } => None,
        }
    }
}

/// Route a request given its estimated total budget.
pub fn route_estimated(
    l_total_est: u64,
    short: &PoolState,
    long: &PoolState,
    b_short: u64,
    spillover: bool,
) -> RouteOutcome {
    if l_total_est > long.config.c_max {
        return RouteOutcome::Reject { l_total_est };
    }
    let decide = |pool, stage| {
        RouteOutcome::Dispatch(RouteDecision {
            pool,
            l_total_est,
            stage,
        })
    };
    if l_total_est > short.config.c_max {
        return decide(PoolSide::Long, RouteStage::Feasibility);
    }
    let (mut pool, mut stage) = if l_total_est <= b_short {
        (PoolSide::Short, RouteStage::BudgetShort)
    } else {
        (PoolSide::Long, RouteStage::BudgetLong)
    };
    let state = |p| match p {
        PoolSide::Short => short,
        PoolSide::Long => long,
    };
    if spillover && is_overloaded(state(pool)) {
        let alt = state(pool.other());
        if l_total_est <= alt.config.c_max && !is_overloaded(alt) {
            pool = pool.other();
            stage = RouteStage::Spillover;
        }
    }
    if state(pool).config.c_max < l_total_est {
        return decide(PoolSide::Long, RouteStage::Safety);
    }
    decide(pool, stage)
}

/// Estimate the request's budget with the category's calibration state, then
/// route it.
#[allow(clippy::too_many_arguments)]
pub fn route(
    body_bytes: u64,
    max_output_tokens: u64,
    category: &str,
    estimator: &Estimator,
    short: &PoolState,
    long: &PoolState,
    b_short: u64,
    spillover: bool,
) -> RouteOutcome {
    let est = estimator.estimate(category, body_bytes, max_output_tokens);
    route_estimated(est.l_total, short, long, b_short, spillover)
}

/// Check `b_short <= short.c_max <= long.c_max` plus each pool's own
/// invariants, reporting every violation.
pub fn validate_config(short: &PoolConfig, long: &PoolConfig, b_short: u64) -> Result<()> {
    let mut v: Vec<String> = Vec::new();
    for p in [short, long] {
        if let Err(e) = p.validate() {
            v.extend(e);
        }
    }
    if b_short > short.c_max {
        v.push(alloc::format!(
            "b_short ({b_short}) exceeds short pool c_max ({})",
            short.c_max
        ));
    }
    if short.c_max > long.c_max {
        v.push(alloc::format!(
            "short pool c_max ({}) exceeds long pool c_max ({})",
            short.c_max,
            long.c_max
        ));
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(v))
    }
}

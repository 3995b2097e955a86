//! Deterministic iteration-level fleet simulator.
//!
//! Every instance runs continuous batching: each iteration carries one decode
//! token per decoding sequence plus prefill chunks up to the batch token
//! budget, and takes `t_fixed + t_prefill * prefill_tokens + t_decode *
//! decoding_seqs` seconds. KV memory is paged in fixed-size blocks allocated
//! on demand; when a step cannot get a block the most recently admitted
//! sequence is preempted and later recomputed from scratch.
//!
//! The engine draws no random numbers: given a config and a trace the result
//! is bit-for-bit reproducible. Randomness lives in trace generation.

mod calibrate;
mod engine;
mod fleet;

pub use calibrate::{calibrate_iteration_model, calibrate_shared_model, saturated_throughput, SharedCalibration};
pub use engine::run;
pub use fleet::{find_min_fleet, FleetSearch, Slo};

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::estimator::EstimatorConfig;
use crate::kv::PoolConfig;
use crate::router::{self, RouteStage};

/// Linear iteration-time model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationModel {
    pub t_fixed_s: f64,
    pub t_per_prefill_token_s: f64,
    pub t_per_decode_seq_s: f64,
}

impl Default for IterationModel {
    /// Shared A100-class coefficients fitted so the 65K/16-seat pool runs at
    /// 2.8 req/s on Azure-like traffic and the 8K/128-seat pool at 11.2 req/s
    /// on its short share (see `calibrate_shared_model`).
    fn default() -> Self {
        IterationModel {
            t_fixed_s: 0.013_62,
            t_per_prefill_token_s: 5.854e-6,
            t_per_decode_seq_s: 2.927e-4,
        }
    }
}

impl IterationModel {
    #[inline]
    pub fn iteration_time(&self, prefill_tokens: u64, decode_seqs: u64) -> f64 {
        self.t_fixed_s
            + self.t_per_prefill_token_s * prefill_tokens as f64
            + self.t_per_decode_seq_s * decode_seqs as f64
    }

    /// Multiply the per-token and per-sequence costs, keeping `t_fixed`.
    pub fn scaled(&self, s: f64) -> Self {
        IterationModel {
            t_fixed_s: self.t_fixed_s,
            t_per_prefill_token_s: self.t_per_prefill_token_s * s,
            t_per_decode_seq_s: self.t_per_decode_seq_s * s,
        }
    }

    pub fn validate(&self, at: &str) -> Vec<String> {
        let mut v = Vec::new();
        for (name, x) in [
            ("t_fixed_s", self.t_fixed_s),
            ("t_per_prefill_token_s", self.t_per_prefill_token_s),
            ("t_per_decode_seq_s", self.t_per_decode_seq_s),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                v.push(alloc::format!("{at}.{name} must be > 0, got {x}"));
            }
        }
        v
    }
}

/// A pool and how many instances serve it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub config: PoolConfig,
    pub instance_count: u64,
    /// Overrides the fleet-wide iteration model for this pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration_model: Option<IterationModel>,
    /// Overrides the fleet-wide KV capacity for this pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kv_capacity_tokens: Option<u64>,
}

impl PoolSpec {
    pub fn new(config: PoolConfig, instance_count: u64) -> Self {
        PoolSpec {
            config,
            instance_count,
            iteration_model: None,
            kv_capacity_tokens: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    /// One pool; no router.
    RoundRobinHomogeneous,
    /// Two pools (`pools[0]` short, `pools[1]` long) behind the router.
    TokenBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub pools: Vec<PoolSpec>,
    pub routing: RoutingMode,
    pub b_short: u64,
    pub spillover_enabled: bool,
    /// Queue depth above which a pool counts as overloaded; default
    /// `2 * n_seq_cap * instance_count` per pool.
    #[serde(default)]
    pub overload_queue_threshold: Option<u64>,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub iteration_model: IterationModel,
    #[serde(default = "default_block_tokens")]
    pub block_tokens: u64,
    /// Default `n_seq_cap * c_max` of each pool.
    #[serde(default)]
    pub kv_capacity_tokens_per_instance: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    /// Keep a per-request event log in the result.
    #[serde(default)]
    pub record_events: bool,
    /// Stop the clock here; anything unfinished counts as in flight.
    #[serde(default)]
    pub max_sim_time_s: Option<f64>,
}

fn default_block_tokens() -> u64 {
    16
}

fn default_warmup() -> f64 {
    0.1
}

/// Fraction of free blocks new admissions must leave untouched.
pub const ADMISSION_WATERMARK: f64 = 0.01;

/// Length of a preemption-alert window in simulated seconds.
pub const ALERT_WINDOW_S: f64 = 300.0;

impl SimConfig {
    /// One homogeneous pool.
    pub fn homogeneous(pool: PoolConfig, instances: u64) -> Self {
        SimConfig {
            pools: alloc::vec![PoolSpec::new(pool, instances)],
            routing: RoutingMode::RoundRobinHomogeneous,
            b_short: 0,
            spillover_enabled: false,
            overload_queue_threshold: None,
            estimator: EstimatorConfig::default(),
            iteration_model: IterationModel::default(),
            block_tokens: default_block_tokens(),
            kv_capacity_tokens_per_instance: None,
            seed: 0,
            warmup_fraction: default_warmup(),
            record_events: false,
            max_sim_time_s: None,
        }
    }

    /// Short and long pools behind the router, spillover on.
    pub fn dual(short: PoolConfig, short_n: u64, long: PoolConfig, long_n: u64, b_short: u64) -> Self {
        SimConfig {
            pools: alloc::vec![PoolSpec::new(short, short_n), PoolSpec::new(long, long_n)],
            routing: RoutingMode::TokenBudget,
            b_short,
            spillover_enabled: true,
            ..Self::homogeneous(PoolConfig::long_65k(), 1)
        }
    }

    pub fn kv_capacity_tokens(&self, pool: usize) -> u64 {
        let p = &self.pools[pool];
        p.kv_capacity_tokens
            .or(self.kv_capacity_tokens_per_instance)
            .unwrap_or(p.config.n_seq_cap.saturating_mul(p.config.c_max))
    }

    pub fn pool_model(&self, pool: usize) -> IterationModel {
        self.pools[pool].iteration_model.unwrap_or(self.iteration_model)
    }

    pub fn total_instances(&self) -> u64 {
        self.pools.iter().map(|p| p.instance_count).sum()
    }

    /// Every violation, with a config path.
    pub fn validate(&self) -> core::result::Result<(), Vec<String>> {
        let mut v = Vec::new();
        match (self.routing, self.pools.len()) {
            (RoutingMode::RoundRobinHomogeneous, 1) | (RoutingMode::TokenBudget, 2) => {}
            (RoutingMode::RoundRobinHomogeneous, n) => {
                v.push(alloc::format!("pools: homogeneous routing needs exactly 1 pool, got {n}"))
            }
            (RoutingMode::TokenBudget, n) => {
                v.push(alloc::format!("pools: token_budget routing needs exactly 2 pools (short, long), got {n}"))
            }
        }
        for (i, p) in self.pools.iter().enumerate() {
            if let Err(e) = p.config.validate() {
                v.extend(e);
            }
            if p.instance_count < 1 {
                v.push(alloc::format!("pools[{i}].instance_count must be >= 1"));
            }
            if let Some(m) = &p.iteration_model {
                v.extend(m.validate(&alloc::format!("pools[{i}].iteration_model")));
            }
        }
        if self.routing == RoutingMode::TokenBudget && self.pools.len() == 2 {
            if let Err(crate::Error::Config(e)) =
                router::validate_config(&self.pools[0].config, &self.pools[1].config, self.b_short)
            {
                for msg in e {
                    if !v.contains(&msg) {
                        v.push(msg);
                    }
                }
            }
        }
        if let Err(e) = self.estimator.validate() {
            v.extend(e);
        }
        v.extend(self.iteration_model.validate("iteration_model"));
        if self.block_tokens < 1 {
            v.push("block_tokens must be >= 1".into());
        }
        if !(0.0..=0.5).contains(&self.warmup_fraction) {
            v.push(alloc::format!("warmup_fraction must lie in [0, 0.5], got {}", self.warmup_fraction));
        }
        for i in 0..self.pools.len() {
            let cap = self.kv_capacity_tokens(i);
            let blocks = cap / self.block_tokens.max(1);
            if blocks < 1 {
                v.push(alloc::format!(
                    "pools[{i}]: KV capacity of {cap} tokens is smaller than one {}-token block",
                    self.block_tokens
                ));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }
}

/// How a request left (or did not leave) the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Rejected,
    OomDropped,
    Inflight,
}

/// Counters for one pool, or summed over pools.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub arrivals: u64,
    pub completed: u64,
    pub rejected: u64,
    pub oom_dropped: u64,
    pub inflight_at_end: u64,
    pub preempted_events: u64,
    /// Requests the router sent to this pool although their true budget did
    /// not fit; they were redirected to the long pool.
    pub misrouted: u64,
    /// Requests that arrived here by spillover.
    pub spilled_in: u64,
}

impl Counters {
    pub fn add(&mut self, o: &Counters) {
        self.arrivals += o.arrivals;
        self.completed += o.completed;
        self.rejected += o.rejected;
        self.oom_dropped += o.oom_dropped;
        self.inflight_at_end += o.inflight_at_end;
        self.preempted_events += o.preempted_events;
        self.misrouted += o.misrouted;
        self.spilled_in += o.spilled_in;
    }

    /// `arrivals = completed + rejected + oom_dropped + inflight_at_end`.
    pub fn conserved(&self) -> bool {
        self.arrivals == self.completed + self.rejected + self.oom_dropped + self.inflight_at_end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub id: u64,
    pub ttft_s: f64,
    /// Absent for single-token outputs.
    pub tpot_s: Option<f64>,
}

/// Preemptions and completions in one alert window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowCounts {
    pub preemptions: u64,
    pub completions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolResult {
    pub pool_id: String,
    pub c_max: u64,
    pub instances: u64,
    pub kv_capacity_tokens: u64,
    /// Every request.
    pub all: Counters,
    /// Requests after warmup only; metrics use these.
    pub measured: Counters,
    pub busy_seconds: f64,
    pub peak_kv_blocks: u64,
    pub latency: Vec<LatencyRecord>,
    pub windows: Vec<WindowCounts>,
}

/// Per-request history, kept when `record_events` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestEvent {
    pub id: u64,
    pub pool: Option<String>,
    pub stage: Option<RouteStage>,
    pub measured: bool,
    pub arrival_s: f64,
    pub admitted_at_s: Option<f64>,
    pub preempted_at_s: Vec<f64>,
    pub first_token_at_s: Option<f64>,
    pub finished_at_s: Option<f64>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub routing: RoutingMode,
    pub n_requests: u64,
    pub warmup_requests: u64,
    pub trace_digest: u64,
    pub duration_s: f64,
    pub gpus: u64,
    pub gpu_seconds: f64,
    pub achieved_throughput: f64,
    /// Admissions whose true budget exceeded the instance's context limit.
    /// Always 0 unless the router is broken.
    pub safety_violations: u64,
    /// Iteration boundaries where held blocks disagreed with stored tokens.
    pub kv_accounting_violations: u64,
    pub stages: BTreeMap<String, u64>,
    pub aggregate: Counters,
    pub aggregate_measured: Counters,
    pub pools: Vec<PoolResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<RequestEvent>>,
}

impl SimResult {
    pub fn pool(&self, id: &str) -> Option<&PoolResult> {
        self.pools.iter().find(|p| p.pool_id == id)
    }
}

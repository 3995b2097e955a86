//! KV-cache memory arithmetic: bytes per token, per-GPU KV budget,
//! concurrency ceilings, block fragmentation and fleet cost projection.
//!
//! All byte math is `u64`; "GB" means 10^9 bytes.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::cost;
use crate::error::{Error, Result};
use crate::math;

/// One decimal gigabyte.
pub const GB: u64 = 1_000_000_000;

/// Hours in a (non-leap) year, used for annual cost.
pub const HOURS_PER_YEAR: f64 = 8760.0;

/// Transformer dimensions that determine the KV footprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub n_layers: u32,
    pub n_kv_heads: u32,
    pub head_dim: u32,
    pub kv_elem_bytes: u32,
    pub tp_degree: u32,
    pub weight_bytes_per_gpu: u64,
}

impl ModelSpec {
    /// Llama-3-70B, BF16, tensor parallel 2 (140 GB of weights split in two).
    pub fn llama3_70b_bf16() -> Self {
        ModelSpec {
            name: "llama3-70b-bf16".into(),
            n_layers: 80,
            n_kv_heads: 8,
            head_dim: 128,
            kv_elem_bytes: 2,
            tp_degree: 2,
            weight_bytes_per_gpu: 70_600_000_000,
        }
    }

    /// Qwen3-235B-A22B on 8-way tensor parallelism. The KV element size is 2
    /// bytes: that is what makes 23.5 KB/token/GPU come out, whatever the
    /// weight format.
    pub fn qwen3_235b_a22b() -> Self {
        ModelSpec {
            name: "qwen3-235b-a22b".into(),
            n_layers: 94,
            n_kv_heads: 4,
            head_dim: 128,
            kv_elem_bytes: 2,
            tp_degree: 8,
            weight_bytes_per_gpu: 29_400_000_000,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "llama3-70b-bf16" => Some(Self::llama3_70b_bf16()),
            "qwen3-235b-a22b" => Some(Self::qwen3_235b_a22b()),
            _ => None,
        }
    }

    pub fn validate(&self) -> core::result::Result<(), Vec<String>> {
        let mut v = Vec::new();
        for (name, val) in [
            ("n_layers", self.n_layers),
            ("n_kv_heads", self.n_kv_heads),
            ("head_dim", self.head_dim),
            ("tp_degree", self.tp_degree),
        ] {
            if val < 1 {
                v.push(alloc::format!("model.{name} must be >= 1"));
            }
        }
        if !matches!(self.kv_elem_bytes, 1 | 2 | 4) {
            v.push(alloc::format!(
                "model.kv_elem_bytes must be 1, 2 or 4, got {}",
                self.kv_elem_bytes
            ));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }
}

/// Accelerator memory description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuSpec {
    pub name: String,
    pub hbm_bytes: u64,
    pub mem_util_fraction: f64,
    pub activation_reserve_bytes: u64,
}

impl GpuSpec {
    pub fn a100_80g() -> Self {
        GpuSpec {
            name: "a100-80g".into(),
            hbm_bytes: 80 * GB,
            mem_util_fraction: 0.9,
            activation_reserve_bytes: 5 * GB,
        }
    }

    pub fn mi300x_192g() -> Self {
        GpuSpec {
            name: "mi300x-192g".into(),
            hbm_bytes: 192 * GB,
            mem_util_fraction: 0.9,
            activation_reserve_bytes: 10 * GB,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "a100-80g" => Some(Self::a100_80g()),
            "mi300x-192g" => Some(Self::mi300x_192g()),
            _ => None,
        }
    }

    pub fn validate(&self) -> core::result::Result<(), Vec<String>> {
        let mut v = Vec::new();
        if self.hbm_bytes == 0 {
            v.push("gpu.hbm_bytes must be > 0".into());
        }
        if !(self.mem_util_fraction > 0.0 && self.mem_util_fraction <= 1.0) {
            v.push(alloc::format!(
                "gpu.mem_util_fraction must lie in (0, 1], got {}",
                self.mem_util_fraction
            ));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }
}

/// One serving pool: context limit, seat count, batch token budget and the
/// profiled per-instance throughput.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub pool_id: String,
    pub c_max: u64,
    pub n_seq_cap: u64,
    pub batch_token_budget: u64,
    pub throughput_per_instance: f64,
}

impl PoolConfig {
    /// 65K-context pool with 16 seats (the homogeneous baseline and the long pool).
    pub fn long_65k() -> Self {
        PoolConfig {
            pool_id: "long".into(),
            c_max: 65_536,
            n_seq_cap: 16,
            batch_token_budget: 8_192,
            throughput_per_instance: 2.8,
        }
    }

    pub fn homogeneous_65k() -> Self {
        PoolConfig {
            pool_id: "homogeneous".into(),
            ..Self::long_65k()
        }
    }

    /// 8K-context pool with 128 seats.
    pub fn short_8k() -> Self {
        PoolConfig {
            pool_id: "short".into(),
            c_max: 8_192,
            n_seq_cap: 128,
            batch_token_budget: 16_384,
            throughput_per_instance: 11.2,
        }
    }

    pub fn validate(&self) -> core::result::Result<(), Vec<String>> {
        let id = &self.pool_id;
        let mut v = Vec::new();
        if self.c_max < 1 {
            v.push(alloc::format!("pool `{id}`: c_max must be >= 1"));
        }
        if self.n_seq_cap < 1 {
            v.push(alloc::format!("pool `{id}`: n_seq_cap must be >= 1"));
        }
        if self.batch_token_budget < 1 {
            v.push(alloc::format!("pool `{id}`: batch_token_budget must be >= 1"));
        }
        if !(self.throughput_per_instance > 0.0) {
            v.push(alloc::format!(
                "pool `{id}`: throughput_per_instance must be > 0, got {}",
                self.throughput_per_instance
            ));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }
}

/// KV bytes one token occupies on one GPU: 2 (K and V) x layers x kv heads x
/// head dim x element size, split across the tensor-parallel group and rounded
/// to the nearest byte.
pub fn kv_bytes_per_token(model: &ModelSpec) -> u64 {
    let total = 2u64
        * model.n_layers as u64
        * model.n_kv_heads as u64
        * model.head_dim as u64
        * model.kv_elem_bytes as u64;
    let tp = model.tp_degree.max(1) as u64;
    (total + tp / 2) / tp
}

/// Usable KV memory per GPU: `hbm * u - weights - activations`, clamped at 0.
pub fn kv_budget_bytes(gpu: &GpuSpec, model: &ModelSpec) -> u64 {
    let usable = math::round(gpu.hbm_bytes as f64 * gpu.mem_util_fraction) as u64;
    usable
        .saturating_sub(model.weight_bytes_per_gpu)
        .saturating_sub(gpu.activation_reserve_bytes)
}

/// How many full `c_max` reservations fit in `budget`.
pub fn max_concurrent_seqs(budget: u64, per_token: u64, c_max: u64) -> u64 {
    let per_seq = per_token.saturating_mul(c_max);
    if per_seq == 0 {
        return 0;
    }
    budget / per_seq
}

/// Worst-case partially filled last block across `n_seqs` sequences.
pub fn fragmentation_waste(n_seqs: u64, per_token: u64, block_tokens: u64) -> u64 {
    n_seqs * block_tokens.saturating_sub(1) * per_token
}

/// One side of a fleet projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FleetCost {
    pub gpus: u64,
    pub nodes: u64,
    pub annual_cost: f64,
}

/// Homogeneous versus two-pool fleet at a given request rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetProjection {
    pub rate: f64,
    pub alpha: f64,
    pub price_per_gpu_hour: f64,
    pub homogeneous: FleetCost,
    pub short_gpus: u64,
    pub long_gpus: u64,
    pub token_budget: FleetCost,
    pub annual_savings: f64,
    pub savings_fraction: f64,
}

fn fleet_cost(gpus: u64, gpus_per_node: u64, price: f64) -> FleetCost {
    FleetCost {
        gpus,
        nodes: gpus.div_ceil(gpus_per_node.max(1)),
        annual_cost: gpus as f64 * price * HOURS_PER_YEAR,
    }
}

/// Size the homogeneous (all-long) fleet and the two-pool fleet for `rate`
/// req/s and price both. Throughputs are per GPU (`throughput_per_instance`).
pub fn fleet_projection(
    rate: f64,
    alpha: f64,
    short: &PoolConfig,
    long: &PoolConfig,
    gpus_per_node: u64,
    price_per_gpu_hour: f64,
) -> Result<FleetProjection> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfUnitRange {
            name: "alpha",
            value: alpha,
        });
    }
    if gpus_per_node == 0 {
        return Err(Error::NonPositive {
            name: "gpus_per_node",
            value: 0.0,
        });
    }
    let rate = if rate > 0.0 { rate } else { 0.0 };
    let homo = cost::homogeneous_gpus(rate, long.throughput_per_instance)?;
    let dual = cost::dual_pool_gpus(
        rate,
        alpha,
        short.throughput_per_instance,
        long.throughput_per_instance,
    )?;
    let homogeneous = fleet_cost(homo, gpus_per_node, price_per_gpu_hour);
    let token_budget = fleet_cost(dual.total, gpus_per_node, price_per_gpu_hour);
    let savings_fraction = if homo == 0 {
        0.0
    } else {
        1.0 - dual.total as f64 / homo as f64
    };
    Ok(FleetProjection {
        rate,
        alpha,
        price_per_gpu_hour,
        homogeneous,
        short_gpus: dual.short,
        long_gpus: dual.long,
        token_budget,
        annual_savings: homogeneous.annual_cost - token_budget.annual_cost,
        savings_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn qwen3_bytes_per_token() {
        assert_eq!(kv_bytes_per_token(&ModelSpec::qwen3_235b_a22b()), 24_064);
    }

    #[test]
    fn unit_model_is_two_bytes() {
        let m = ModelSpec {
            name: "unit".into(),
            n_layers: 1,
            n_kv_heads: 1,
            head_dim: 1,
            kv_elem_bytes: 1,
            tp_degree: 1,
            weight_bytes_per_gpu: 0,
        };
        assert_eq!(kv_bytes_per_token(&m), 2);
    }

    #[test]
    fn llama_tp1_bytes_per_token() {
        let m = ModelSpec {
            tp_degree: 1,
            ..ModelSpec::llama3_70b_bf16()
        };
        assert_eq!(kv_bytes_per_token(&m), 327_680);
    }

    #[test]
    fn mi300x_budget() {
        let b = kv_budget_bytes(&GpuSpec::mi300x_192g(), &ModelSpec::qwen3_235b_a22b());
        assert_eq!(b, 133_400_000_000);
    }

    #[test]
    fn a100_budget_and_clamp() {
        let m = ModelSpec {
            weight_bytes_per_gpu: 35 * GB,
            ..ModelSpec::llama3_70b_bf16()
        };
        assert_eq!(kv_budget_bytes(&GpuSpec::a100_80g(), &m), 32 * GB);
        let heavy = ModelSpec {
            weight_bytes_per_gpu: 100 * GB,
            ..m
        };
        assert_eq!(kv_budget_bytes(&GpuSpec::a100_80g(), &heavy), 0);
    }

    #[test]
    fn concurrency_ceilings() {
        assert_eq!(max_concurrent_seqs(133_400_000_000, 24_064, 8_192), 676);
        assert_eq!(max_concurrent_seqs(133_400_000_000, 24_064, 32_768), 169);
        assert_eq!(max_concurrent_seqs(32 * GB, 327_680, 8_192), 11);
        assert_eq!(max_concurrent_seqs(1000, 24_064, 8_192), 0);
        assert_eq!(max_concurrent_seqs(0, 24_064, 8_192), 0);
    }

    #[test]
    fn fragmentation() {
        assert_eq!(fragmentation_waste(128, 24_064, 16), 46_202_880);
        assert_eq!(fragmentation_waste(128, 24_064, 1), 0);
        assert_eq!(fragmentation_waste(16, 327_680, 16), 78_643_200);
    }

    #[test]
    fn fragmentation_share_of_hbm() {
        let qwen = fragmentation_waste(128, kv_bytes_per_token(&ModelSpec::qwen3_235b_a22b()), 16);
        assert!((qwen as f64) < 0.0005 * GpuSpec::mi300x_192g().hbm_bytes as f64);
        let llama = ModelSpec::llama3_70b_bf16();
        let homo = fragmentation_waste(16, kv_bytes_per_token(&llama), 16);
        assert_eq!(homo, 39_321_600);
        assert!((homo as f64) < 0.001 * GpuSpec::a100_80g().hbm_bytes as f64);
    }

    #[test]
    fn projection_zero_rate_and_zero_price() {
        let p = fleet_projection(
            0.0,
            0.5,
            &PoolConfig::short_8k(),
            &PoolConfig::long_65k(),
            8,
            3.67,
        )
        .unwrap();
        assert_eq!(p.homogeneous.nodes, 0);
        assert_eq!(p.token_budget.annual_cost, 0.0);
        let p = fleet_projection(
            1000.0,
            0.8,
            &PoolConfig::short_8k(),
            &PoolConfig::long_65k(),
            8,
            0.0,
        )
        .unwrap();
        assert_eq!(p.annual_savings, 0.0);
        assert!(p.homogeneous.gpus > 0);
    }

    #[test]
    fn presets_validate() {
        for m in [ModelSpec::llama3_70b_bf16(), ModelSpec::qwen3_235b_a22b()] {
            m.validate().unwrap();
        }
        for g in [GpuSpec::a100_80g(), GpuSpec::mi300x_192g()] {
            g.validate().unwrap();
        }
        let bad = ModelSpec {
            kv_elem_bytes: 3,
            n_layers: 0,
            ..ModelSpec::qwen3_235b_a22b()
        };
        assert_eq!(bad.validate().unwrap_err().len(), 2);
    }

    proptest! {
        #[test]
        fn seqs_monotone(budget in 0u64..1u64 << 40, per_token in 1u64..1 << 20,
                         c in 1u64..1 << 17, dc in 0u64..1 << 16, db in 0u64..1 << 30) {
            let base = max_concurrent_seqs(budget, per_token, c);
            prop_assert!(max_concurrent_seqs(budget, per_token, c + dc) <= base);
            prop_assert!(max_concurrent_seqs(budget + db, per_token, c) >= base);
        }

        #[test]
        fn doubling_elem_bytes_halves(budget in 0u64..1u64 << 42, per_token in 1u64..1 << 18,
                                      c in 1u64..1 << 17) {
            let one = max_concurrent_seqs(budget, per_token, c);
            let two = max_concurrent_seqs(budget, 2 * per_token, c);
            prop_assert!(two <= one / 2 + 1);
            prop_assert!(two >= one / 2);
        }

        #[test]
        fn eightfold_concurrency(n64 in 100u64..5000, per_token in 1u64..50_000, slack in 0u64..65_536) {
            // budget holding n64 full 64K sequences plus a little slack
            let budget = n64 * per_token * 65_536 + slack * per_token;
            let short = max_concurrent_seqs(budget, per_token, 8_192);
            let long = max_concurrent_seqs(budget, per_token, 65_536);
            prop_assert!(short >= 8 * long && short <= 8 * long + 7);
        }
    }
}

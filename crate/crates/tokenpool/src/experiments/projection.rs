use serde::{Deserialize, Serialize};
use tokenpool_core::kv::{
    fleet_projection, fragmentation_waste, kv_budget_bytes, kv_bytes_per_token, max_concurrent_seqs, FleetProjection,
    PoolConfig,
};

use crate::config::{Experiment, ProjectionConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub model: String,
    pub gpu: String,
    pub kv_bytes_per_token: u64,
    pub kv_budget_bytes: u64,
    pub seqs_short: u64,
    pub seqs_long: u64,
    pub rho: f64,
    pub mu_short: f64,
    pub mu_long: f64,
    /// Worst-case last-block waste of a full short instance, 16-token blocks.
    pub fragmentation_bytes: u64,
    pub projection: FleetProjection,
}

/// Size both fleets from the KV concurrency of the configured model and GPU.
/// `p` overrides the `[projection]` section.
pub fn project(exp: &Experiment, p: Option<&ProjectionConfig>) -> Result<ProjectionReport> {
    let c = &exp.config;
    let p = p
        .or(c.projection.as_ref())
        .ok_or_else(|| Error::config("projection", "missing section"))?;
    let model = c.model()?.ok_or_else(|| Error::config("model", "required for a projection"))?;
    let gpu = c.gpu()?.ok_or_else(|| Error::config("gpu", "required for a projection"))?;
    if !(p.mu_long > 0.0) {
        return Err(Error::config("projection.mu_long", "must be > 0"));
    }
    let per_token = kv_bytes_per_token(&model);
    let budget = kv_budget_bytes(&gpu, &model);
    let seqs_short = max_concurrent_seqs(budget, per_token, p.short_c_max.max(1));
    let seqs_long = max_concurrent_seqs(budget, per_token, p.long_c_max.max(1));
    if seqs_long == 0 {
        return Err(Error::config(
            "projection.long_c_max",
            format!("{} has no room for one {}-token sequence", gpu.name, p.long_c_max),
        ));
    }
    let rho = seqs_short as f64 / seqs_long as f64;
    let pool = |id: &str, c_max, seqs, mu| PoolConfig {
        pool_id: id.into(),
        c_max,
        n_seq_cap: seqs,
        batch_token_budget: c_max,
        throughput_per_instance: mu,
    };
    let short = pool("short", p.short_c_max, seqs_short, rho * p.mu_long);
    let long = pool("long", p.long_c_max, seqs_long, p.mu_long);
    Ok(ProjectionReport {
        model: model.name.clone(),
        gpu: gpu.name.clone(),
        kv_bytes_per_token: per_token,
        kv_budget_bytes: budget,
        seqs_short,
        seqs_long,
        rho,
        mu_short: short.throughput_per_instance,
        mu_long: p.mu_long,
        fragmentation_bytes: fragmentation_waste(seqs_short, per_token, 16),
        projection: fleet_projection(p.rate, p.alpha, &short, &long, p.gpus_per_node, p.price_per_gpu_hour)?,
    })
}

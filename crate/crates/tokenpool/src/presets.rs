//! Bundled model, GPU, pool and experiment presets.

use tokenpool_core::kv::PoolConfig;

pub const MODELS: &[&str] = &["llama3-70b-bf16", "qwen3-235b-a22b"];
pub const GPUS: &[&str] = &["a100-80g", "mi300x-192g"];
pub const POOLS: &[&str] = &["short-8k", "long-65k", "homogeneous-65k"];

pub fn pool(name: &str) -> Option<PoolConfig> {
    match name {
        "short-8k" => Some(PoolConfig::short_8k()),
        "long-65k" => Some(PoolConfig::long_65k()),
        "homogeneous-65k" => Some(PoolConfig::homogeneous_65k()),
        _ => None,
    }
}

pub const EXPERIMENTS: &[(&str, &str)] = &[
    ("azure-1000rps-dual", include_str!("../presets/azure-1000rps-dual.toml")),
    ("table2-azure", include_str!("../presets/table2-azure.toml")),
    ("table3-reliability", include_str!("../presets/table3-reliability.toml")),
    ("table5-calibration", include_str!("../presets/table5-calibration.toml")),
    ("fig6-sweep", include_str!("../presets/fig6-sweep.toml")),
    ("table6-projection", include_str!("../presets/table6-projection.toml")),
];

/// TOML text of a bundled experiment.
pub fn experiment(name: &str) -> Option<&'static str> {
    EXPERIMENTS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

//! Per-category bytes-per-token calibration.
//!
//! Each category keeps an EMA of the observed bytes/token ratio and of its
//! absolute deviation. Routing divides the request body by a deliberately low
//! ratio (`c_hat - gamma * sigma_hat`), so token counts are over- rather than
//! under-estimated and mistakes push traffic toward the long pool.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Name of the catch-all bucket for unknown categories.
pub const FALLBACK_CATEGORY: &str = "mixed";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub beta: f64,
    pub gamma: f64,
    pub c0: f64,
    pub sigma0: f64,
    pub c_floor: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            beta: 0.95,
            gamma: 1.0,
            c0: 4.0,
            sigma0: 0.5,
            c_floor: 0.5,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> core::result::Result<(), Vec<String>> {
        let mut v = Vec::new();
        if !(self.beta > 0.0 && self.beta < 1.0) {
            v.push(alloc::format!("estimator.beta must lie in (0, 1), got {}", self.beta));
        }
        if !(self.gamma >= 0.0) {
            v.push(alloc::format!("estimator.gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.c0 > 0.0) {
            v.push(alloc::format!("estimator.c0 must be > 0, got {}", self.c0));
        }
        if !(self.sigma0 >= 0.0) {
            v.push(alloc::format!("estimator.sigma0 must be >= 0, got {}", self.sigma0));
        }
        if !(self.c_floor > 0.0) {
            v.push(alloc::format!("estimator.c_floor must be > 0, got {}", self.c_floor));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }
}

/// Calibration state of one traffic category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryStats {
    pub category: String,
    pub c_hat: f64,
    pub sigma_hat: f64,
    pub n_obs: u64,
}

impl CategoryStats {
    pub fn cold(category: &str, cfg: &EstimatorConfig) -> Self {
        CategoryStats {
            category: category.to_string(),
            c_hat: cfg.c0.max(cfg.c_floor),
            sigma_hat: cfg.sigma0,
            n_obs: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetEstimate {
    pub l_in: u64,
    pub l_total: u64,
    /// The bytes/token ratio the estimate was computed with.
    pub c_route: f64,
}

/// Conservative ratio used for routing.
pub fn conservative_ratio(stats: &CategoryStats, cfg: &EstimatorConfig) -> f64 {
    (stats.c_hat - cfg.gamma * stats.sigma_hat).max(cfg.c_floor)
}

/// `l_in = ceil(bytes / c_route)`, `l_total = l_in + max_output_tokens`.
pub fn estimate_budget(
    body_bytes: u64,
    max_output_tokens: u64,
    stats: &CategoryStats,
    cfg: &EstimatorConfig,
) -> BudgetEstimate {
    estimate_with_ratio(body_bytes, max_output_tokens, conservative_ratio(stats, cfg))
}

/// Estimate with an explicit ratio (e.g. a global static `c = 4`).
pub fn estimate_with_ratio(body_bytes: u64, max_output_tokens: u64, c_route: f64) -> BudgetEstimate {
    let l_in = if body_bytes == 0 {
        0
    } else {
        math::ceil(body_bytes as f64 / c_route) as u64
    };
    BudgetEstimate {
        l_in,
        l_total: l_in.saturating_add(max_output_tokens),
        c_route,
    }
}

/// Fold one usage report into `stats`.
///
/// The first observation of a category replaces the cold-start ratio outright
/// (its deviation from `c0` still feeds `sigma_hat`); later ones are the EMA
/// `c_hat = beta * c_hat + (1 - beta) * c_obs`, and
/// `sigma_hat = beta * sigma_hat + (1 - beta) * |c_obs - c_hat_prev|`.
pub fn on_response(
    body_bytes: u64,
    prompt_tokens: u64,
    stats: &CategoryStats,
    cfg: &EstimatorConfig,
) -> Result<CategoryStats> {
    if prompt_tokens == 0 {
        return Err(Error::InvalidUsageFeedback);
    }
    let c_obs = body_bytes as f64 / prompt_tokens as f64;
    let prev = stats.c_hat;
    let b = cfg.beta;
    let c_hat = if stats.n_obs == 0 {
        c_obs
    } else {
        b * prev + (1.0 - b) * c_obs
    };
    Ok(CategoryStats {
        category: stats.category.clone(),
        c_hat: c_hat.max(cfg.c_floor),
        sigma_hat: b * stats.sigma_hat + (1.0 - b) * (c_obs - prev).abs(),
        n_obs: stats.n_obs + 1,
    })
}

/// A fixed set of categories plus the fallback bucket.
///
/// Lookups by name resolve unknown categories to [`FALLBACK_CATEGORY`]; the
/// index API avoids string work on hot paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    cfg: EstimatorConfig,
    stats: Vec<CategoryStats>,
    index: BTreeMap<String, usize>,
}

impl Estimator {
    pub fn new<'a>(cfg: EstimatorConfig, categories: impl IntoIterator<Item = &'a str>) -> Self {
        let mut index = BTreeMap::new();
        for c in categories.into_iter().chain(core::iter::once(FALLBACK_CATEGORY)) {
            let next = index.len();
            index.entry(c.to_string()).or_insert(next);
        }
        let mut stats = alloc::vec![CategoryStats::cold("", &cfg); index.len()];
        for (name, &i) in &index {
            stats[i] = CategoryStats::cold(name, &cfg);
        }
        Estimator { cfg, stats, index }
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    pub fn index_of(&self, category: &str) -> usize {
        match self.index.get(category) {
            Some(&i) => i,
            None => self.index[FALLBACK_CATEGORY],
        }
    }

    pub fn stats(&self, category: &str) -> &CategoryStats {
        &self.stats[self.index_of(category)]
    }

    pub fn stats_at(&self, idx: usize) -> &CategoryStats {
        &self.stats[idx]
    }

    pub fn estimate(&self, category: &str, body_bytes: u64, max_output_tokens: u64) -> BudgetEstimate {
        self.estimate_at(self.index_of(category), body_bytes, max_output_tokens)
    }

    pub fn estimate_at(&self, idx: usize, body_bytes: u64, max_output_tokens: u64) -> BudgetEstimate {
        estimate_budget(body_bytes, max_output_tokens, &self.stats[idx], &self.cfg)
    }

    pub fn observe(&mut self, category: &str, body_bytes: u64, prompt_tokens: u64) -> Result<()> {
        let i = self.index_of(category);
        self.observe_at(i, body_bytes, prompt_tokens)
    }

    pub fn observe_at(&mut self, idx: usize, body_bytes: u64, prompt_tokens: u64) -> Result<()> {
        self.stats[idx] = on_response(body_bytes, prompt_tokens, &self.stats[idx], &self.cfg)?;
        Ok(())
    }

    /// Replace a category's state (e.g. restored from disk). Unknown names land
    /// in the fallback bucket.
    pub fn restore(&mut self, stats: CategoryStats) {
        let i = self.index_of(&stats.category);
        let name = self.stats[i].category.clone();
        self.stats[i] = CategoryStats { category: name, ..stats };
    }

    /// Every category, sorted by name.
    pub fn snapshot(&self) -> Vec<CategoryStats> {
        self.index.values().map(|&i| self.stats[i].clone()).collect()
    }
}

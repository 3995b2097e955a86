//! Thread-safe calibration state shared by routing (reads) and response
//! handling (writes).
//!
//! Every category owns its own `RwLock`, and the set of categories is fixed at
//! construction, so there is no lock spanning categories. Writers to one
//! category serialize on its lock; a reader copies the whole `CategoryStats`
//! under the read lock and so never sees `c_hat` from one update paired with
//! `sigma_hat` from another.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::RwLock;

use tokenpool_core::estimator::{
    estimate_budget, on_response, BudgetEstimate, CategoryStats, EstimatorConfig, FALLBACK_CATEGORY,
};

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug)]
pub struct SharedEstimator {
    cfg: EstimatorConfig,
    cats: BTreeMap<String, RwLock<CategoryStats>>,
}

impl SharedEstimator {
    /// Cold-started categories plus the fallback bucket.
    pub fn new<'a>(cfg: EstimatorConfig, categories: impl IntoIterator<Item = &'a str>) -> Self {
        let cats = categories
            .into_iter()
            .chain([FALLBACK_CATEGORY])
            .map(|c| (c.to_string(), RwLock::new(CategoryStats::cold(c, &cfg))))
            .collect();
        SharedEstimator { cfg, cats }
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    fn slot(&self, category: &str) -> &RwLock<CategoryStats> {
        self.cats
            .get(category)
            .unwrap_or_else(|| &self.cats[FALLBACK_CATEGORY])
    }

    /// Current state of the bucket `category` resolves to.
    pub fn stats(&self, category: &str) -> CategoryStats {
        self.slot(category).read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn estimate(&self, category: &str, body_bytes: u64, max_output_tokens: u64) -> BudgetEstimate {
        let s = self.stats(category);
        estimate_budget(body_bytes, max_output_tokens, &s, &self.cfg)
    }

    /// Fold one usage report in. Bad feedback leaves the state untouched.
    pub fn observe(&self, category: &str, body_bytes: u64, prompt_tokens: u64) -> Result<()> {
        let mut g = self.slot(category).write().unwrap_or_else(|e| e.into_inner());
        *g = on_response(body_bytes, prompt_tokens, &g, &self.cfg)?;
        Ok(())
    }

    /// All categories at one instant, sorted by name. Takes every read lock in
    /// name order before copying.
    pub fn snapshot(&self) -> Vec<CategoryStats> {
        let guards: Vec<_> = self
            .cats
            .values()
            .map(|l| l.read().unwrap_or_else(|e| e.into_inner()))
            .collect();
        guards.iter().map(|g| (**g).clone()).collect()
    }

    /// Overwrite categories from saved stats. Unknown names go to the
    /// fallback bucket, keeping its name.
    pub fn restore(&self, saved: &[CategoryStats]) -> Result<()> {
        for (i, s) in saved.iter().enumerate() {
            let at = format!("[{i}] ({})", s.category);
            if !(s.c_hat >= self.cfg.c_floor) || !s.c_hat.is_finite() {
                return Err(Error::config(at, format!("c_hat {} below c_floor {}", s.c_hat, self.cfg.c_floor)));
            }
            if !(s.sigma_hat >= 0.0) || !s.sigma_hat.is_finite() {
                return Err(Error::config(at, format!("sigma_hat must be >= 0, got {}", s.sigma_hat)));
            }
        }
        for s in saved {
            let mut g = self.slot(&s.category).write().unwrap_or_else(|e| e.into_inner());
            *g = CategoryStats {
                category: g.category.clone(),
                ..s.clone()
            };
        }
        Ok(())
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        io::write_json(path, &self.snapshot())
    }

    pub fn import(&self, path: &Path) -> Result<()> {
        let saved: Vec<CategoryStats> = io::read_json(path)?;
        self.restore(&saved)
    }
}

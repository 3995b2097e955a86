//! Requests, traces and the synthetic trace generators.
//!
//! Generation is a pure function of the [`TraceSpec`]: one ChaCha8 stream
//! seeded from `seed`, and a fixed draw order per request (inter-arrival,
//! category, output budget, prompt length, output length, bytes/token noise).

pub mod lengths;

use alloc::string::String;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::cost::TrafficStats;
use crate::error::{Error, Result};
use crate::math;

/// One serving request with ground-truth token counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub arrival_s: f64,
    pub body_bytes: u64,
    pub category: String,
    pub max_output_tokens: u64,
    pub true_prompt_tokens: u64,
    pub true_output_tokens: u64,
}

impl Request {
    /// Tokens the request can occupy at most: prompt plus output budget.
    pub fn total_budget(&self) -> u64 {
        self.true_prompt_tokens + self.max_output_tokens
    }
}

/// Arrival-ordered requests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub requests: Vec<Request>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    /// Stable sort by arrival time; returns how many requests were out of order.
    pub fn sort_by_arrival(&mut self) -> usize {
        let out_of_order = self
            .requests
            .windows(2)
            .filter(|w| w[1].arrival_s < w[0].arrival_s)
            .count();
        if out_of_order > 0 {
            self.requests
                .sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s));
        }
        out_of_order
    }

    /// FNV-1a over every field, so runs can tell whether they saw the same trace.
    pub fn digest(&self) -> u64 {
        digest_requests(&self.requests)
    }
}

/// [`Trace::digest`] over a borrowed slice.
pub fn digest_requests(requests: &[Request]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for r in requests {
        eat(&r.id.to_le_bytes());
        eat(&r.arrival_s.to_bits().to_le_bytes());
        eat(&r.body_bytes.to_le_bytes());
        eat(r.category.as_bytes());
        eat(&[0xff]);
        eat(&r.max_output_tokens.to_le_bytes());
        eat(&r.true_prompt_tokens.to_le_bytes());
        eat(&r.true_output_tokens.to_le_bytes());
    }
    h
}

/// A traffic category with its true bytes/token ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryProfile {
    pub name: String,
    pub weight: f64,
    pub true_ratio: f64,
    /// Coefficient of variation of the per-request ratio.
    #[serde(default = "default_ratio_cv")]
    pub ratio_cv: f64,
}

fn default_ratio_cv() -> f64 {
    0.10
}

impl CategoryProfile {
    pub fn new(name: &str, weight: f64, true_ratio: f64) -> Self {
        CategoryProfile {
            name: name.into(),
            weight,
            true_ratio,
            ratio_cv: default_ratio_cv(),
        }
    }
}

/// Prose, code, CJK and mixed text. Ratios are measured bytes/token; the
/// weights are an assumption.
pub fn default_categories() -> Vec<CategoryProfile> {
    alloc::vec![
        CategoryProfile::new("prose", 0.55, 4.48),
        CategoryProfile::new("code", 0.20, 3.52),
        CategoryProfile::new("cjk", 0.10, 2.01),
        CategoryProfile::new("mixed", 0.15, 3.81),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    AzureLike,
    LmsysLike,
    /// Loaded from disk by the caller; cannot be generated.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub kind: TraceKind,
    pub rate: f64,
    pub n_requests: u64,
    pub seed: u64,
    pub categories: Vec<CategoryProfile>,
}

impl TraceSpec {
    pub fn azure_like(rate: f64, n_requests: u64, seed: u64) -> Self {
        TraceSpec {
            kind: TraceKind::AzureLike,
            rate,
            n_requests,
            seed,
            categories: default_categories(),
        }
    }

    pub fn lmsys_like(rate: f64, n_requests: u64, seed: u64) -> Self {
        TraceSpec {
            kind: TraceKind::LmsysLike,
            ..Self::azure_like(rate, n_requests, seed)
        }
    }

    pub fn validate(&self) -> core::result::Result<(), Vec<String>> {
        let mut v = Vec::new();
        if self.kind != TraceKind::File && !(self.rate > 0.0 && self.rate.is_finite()) {
            v.push(alloc::format!("trace.rate must be > 0, got {}", self.rate));
        }
        if self.categories.is_empty() {
            v.push("trace.categories must not be empty".into());
        }
        let sum: f64 = self.categories.iter().map(|c| c.weight).sum();
        if !self.categories.is_empty() && (sum - 1.0).abs() > 1e-6 {
            v.push(alloc::format!("trace.categories weights must sum to 1, got {sum}"));
        }
        for (i, c) in self.categories.iter().enumerate() {
            if !(c.weight >= 0.0) {
                v.push(alloc::format!("trace.categories[{i}].weight must be >= 0"));
            }
            if !(c.true_ratio > 0.0) {
                v.push(alloc::format!("trace.categories[{i}].true_ratio must be > 0"));
            }
            if !(c.ratio_cv >= 0.0) {
                v.push(alloc::format!("trace.categories[{i}].ratio_cv must be >= 0"));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }
}

/// Mean-one log-normal multiplier with the given coefficient of variation.
fn ratio_noise(cv: f64) -> Option<LogNormal<f64>> {
    if cv <= 0.0 {
        return None;
    }
    let s2 = math::ln(1.0 + cv * cv);
    LogNormal::new(-s2 / 2.0, math::sqrt(s2)).ok()
}

/// Synthesize a trace.
pub fn generate(spec: &TraceSpec) -> Result<Trace> {
    if spec.kind == TraceKind::File {
        return Err(Error::config("trace.kind = file cannot be generated; load it instead"));
    }
    spec.validate().map_err(Error::Config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gap = Exp::new(spec.rate).map_err(|_| Error::config("trace.rate invalid"))?;
    let total_w: f64 = spec.categories.iter().map(|c| c.weight).sum();
    let noise: Vec<Option<LogNormal<f64>>> =
        spec.categories.iter().map(|c| ratio_noise(c.ratio_cv)).collect();
    let (p_long, out_scale) = match spec.kind {
        TraceKind::AzureLike => (lengths::azure::LONG_BUDGET_PROB, lengths::azure::OUTPUT_SCALE),
        _ => (lengths::lmsys::LONG_BUDGET_PROB, lengths::lmsys::OUTPUT_SCALE),
    };

    let mut t = 0.0;
    let mut requests = Vec::with_capacity(spec.n_requests as usize);
    for id in 0..spec.n_requests {
        t += gap.sample(&mut rng);
        let u: f64 = rng.random::<f64>() * total_w;
        let mut ci = spec.categories.len() - 1;
        let mut acc = 0.0;
        for (i, c) in spec.categories.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                ci = i;
                break;
            }
        }
        let budget = lengths::sample_budget(&mut rng, p_long);
        let prompt = match spec.kind {
            TraceKind::AzureLike => lengths::sample_azure_prompt(&mut rng),
            _ => lengths::sample_lmsys_prompt(&mut rng),
        };
        let output = lengths::sample_output(&mut rng, out_scale, budget);
        let cat = &spec.categories[ci];
        let ratio = cat.true_ratio * noise[ci].as_ref().map_or(1.0, |d| d.sample(&mut rng));
        let body = (math::round(prompt as f64 * ratio) as u64).max(1);
        requests.push(Request {
            id,
            arrival_s: t,
            body_bytes: body,
            category: cat.name.clone(),
            max_output_tokens: budget,
            true_prompt_tokens: prompt,
            true_output_tokens: output,
        });
    }
    Ok(Trace { requests })
}

/// Empirical distribution of total budgets (`prompt + max_output`).
pub fn stats(trace: &Trace) -> Result<TrafficStats> {
    TrafficStats::from_budgets(trace.requests.iter().map(Request::total_budget).collect())
}

/// Nearest-rank quantiles of prompt lengths.
pub fn prompt_quantile(trace: &Trace, p: f64) -> Result<u64> {
    let mut v: Vec<u64> = trace.requests.iter().map(|r| r.true_prompt_tokens).collect();
    v.sort_unstable();
    let i = crate::cost::nearest_rank_index(v.len(), p)?;
    Ok(v[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate(&TraceSpec::azure_like(100.0, 2_000, 7)).unwrap();
        let b = generate(&TraceSpec::azure_like(100.0, 2_000, 7)).unwrap();
        let c = generate(&TraceSpec::azure_like(100.0, 2_000, 8)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn request_invariants() {
        for spec in [TraceSpec::azure_like(50.0, 5_000, 1), TraceSpec::lmsys_like(50.0, 5_000, 1)] {
            let t = generate(&spec).unwrap();
            assert_eq!(t.len(), 5_000);
            for w in t.requests.windows(2) {
                assert!(w[0].arrival_s <= w[1].arrival_s);
            }
            for r in &t.requests {
                assert!(r.true_output_tokens <= r.max_output_tokens);
                assert!(r.true_output_tokens >= 1);
                assert!(r.body_bytes >= 1);
                assert!(r.total_budget() <= 65_536);
            }
        }
    }

    #[test]
    fn bad_specs() {
        let mut s = TraceSpec::azure_like(0.0, 10, 1);
        assert!(generate(&s).is_err());
        s.rate = 1.0;
        s.categories[0].weight = 0.9;
        assert!(generate(&s).is_err());
        s.kind = TraceKind::File;
        assert!(generate(&s).is_err());
    }

    #[test]
    fn single_request_step() {
        let t = Trace {
            requests: alloc::vec![Request {
                id: 0,
                arrival_s: 0.0,
                body_bytes: 40,
                category: "prose".into(),
                max_output_tokens: 90,
                true_prompt_tokens: 10,
                true_output_tokens: 5,
            }],
        };
        let s = stats(&t).unwrap();
        assert_eq!(s.alpha_at(99), 0.0);
        assert_eq!(s.alpha_at(100), 1.0);
        assert!(stats(&Trace::default()).is_err());
    }

    #[test]
    fn sorting_counts_inversions() {
        let mk = |id, t| Request {
            id,
            arrival_s: t,
            body_bytes: 4,
            category: "x".into(),
            max_output_tokens: 1,
            true_prompt_tokens: 1,
            true_output_tokens: 1,
        };
        let mut t = Trace { requests: alloc::vec![mk(0, 1.0), mk(1, 0.5), mk(2, 2.0)] };
        assert_eq!(t.sort_by_arrival(), 1);
        assert_eq!(t.requests[0].id, 1);
        assert_eq!(t.sort_by_arrival(), 0);
    }
}

//! Fitted length models for the synthetic traces.
//!
//! Constants are produced by `scripts/fit_lengths.py` (exact quantile matching)
//! and mirrored in `data/length_fit.json`; a test keeps the two in sync.

use rand::Rng;
use rand_distr::{Distribution, LogNormal};

use crate::math;

pub const SMALL_BUDGETS: [u64; 7] = [64, 128, 256, 512, 1024, 2048, 4096];
pub const LONG_BUDGET: u64 = 8192;
/// Small budgets are weighted `q^i`, smallest first.
pub const SMALL_BUDGET_DECAY: f64 = 0.708_306_500_548_220_3;
pub const OUTPUT_SIGMA: f64 = 0.8;
/// Median realized output is `scale * budget^OUTPUT_BUDGET_EXPONENT`.
pub const OUTPUT_BUDGET_EXPONENT: f64 = 0.25;

pub mod azure {
    pub const BODY_MASS: f64 = 0.95;
    pub const BODY_MU: f64 = 6.653_056_000_158_244;
    pub const BODY_SIGMA: f64 = 1.0;
    pub const TAIL_START: f64 = 8192.0;
    pub const TAIL_CAP: f64 = 57344.0;
    pub const TAIL_SHAPE: f64 = 1.2;
    pub const LONG_BUDGET_PROB: f64 = 0.155_393_094_884_201_72;
    pub const OUTPUT_SCALE: f64 = 61.573_380_378_912_96;
}

pub mod lmsys {
    pub const PROMPT_MU: f64 = 3.741_326_691_027_867_3;
    pub const PROMPT_SIGMA: f64 = 1.0;
    /// Prompts are clipped so every request fits a 65,536-token context.
    pub const PROMPT_CAP: u64 = 57_344;
    pub const LONG_BUDGET_PROB: f64 = 0.319_999_871_674_549_7;
    pub const OUTPUT_SCALE: f64 = 30.168_492_727_648;
}

/// Client output budget: `LONG_BUDGET` with probability `p_long`, otherwise a
/// small power of two. One uniform draw.
pub fn sample_budget<R: Rng + ?Sized>(rng: &mut R, p_long: f64) -> u64 {
    let u: f64 = rng.random();
    if u < p_long {
        return LONG_BUDGET;
    }
    let v = (u - p_long) / (1.0 - p_long);
    let total: f64 = (0..SMALL_BUDGETS.len())
        .map(|i| math::powf(SMALL_BUDGET_DECAY, i as f64))
        .sum();
    let mut acc = 0.0;
    for (i, &b) in SMALL_BUDGETS.iter().enumerate() {
        acc += math::powf(SMALL_BUDGET_DECAY, i as f64) / total;
        if v < acc {
            return b;
        }
    }
    SMALL_BUDGETS[SMALL_BUDGETS.len() - 1]
}

/// Realized output tokens for a given budget, always in `1..=budget`.
pub fn sample_output<R: Rng + ?Sized>(rng: &mut R, scale: f64, budget: u64) -> u64 {
    let mu = math::ln(scale * math::powf(budget as f64, OUTPUT_BUDGET_EXPONENT));
    let d = LogNormal::new(mu, OUTPUT_SIGMA).expect("finite lognormal parameters");
    let y = math::round(d.sample(rng));
    (y.max(1.0) as u64).min(budget)
}

/// Azure-like prompt: truncated log-normal body below 8K, truncated Pareto
/// tail from 8K to 56K. One uniform picks the component.
pub fn sample_azure_prompt<R: Rng + ?Sized>(rng: &mut R) -> u64 {
    use azure::*;
    let u: f64 = rng.random();
    let x = if u < BODY_MASS {
        let d = LogNormal::new(BODY_MU, BODY_SIGMA).expect("finite lognormal parameters");
        loop {
            let x = d.sample(rng);
            if x < TAIL_START {
                break x;
            }
        }
    } else {
        let v: f64 = rng.random();
        let a = TAIL_SHAPE;
        let k = 1.0 - math::powf(TAIL_START / TAIL_CAP, a);
        TAIL_START / math::powf(1.0 - v * k, 1.0 / a)
    };
    (math::ceil(x) as u64).clamp(1, TAIL_CAP as u64)
}

pub fn sample_lmsys_prompt<R: Rng + ?Sized>(rng: &mut R) -> u64 {
    use lmsys::*;
    let d = LogNormal::new(PROMPT_MU, PROMPT_SIGMA).expect("finite lognormal parameters");
    (math::round(d.sample(rng)) as u64).clamp(1, PROMPT_CAP)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Pull a number out of the fitted JSON by key path without a JSON parser.
    fn json_num(src: &str, section: Option<&str>, key: &str) -> f64 {
        let body = match section {
            Some(s) => {
                let start = src.find(&format!("\"{s}\"")).unwrap();
                &src[start..]
            }
            None => src,
        };
        let k = body.find(&format!("\"{key}\"")).unwrap();
        let rest = &body[k + key.len() + 3..];
        let end = rest.find([',', '\n', '}']).unwrap();
        rest[..end].trim().parse().unwrap()
    }

    #[test]
    fn constants_match_fit_file() {
        let src = include_str!("../../data/length_fit.json");
        assert_eq!(json_num(src, None, "small_budget_decay"), SMALL_BUDGET_DECAY);
        assert_eq!(json_num(src, None, "output_sigma"), OUTPUT_SIGMA);
        assert_eq!(json_num(src, None, "output_budget_exponent"), OUTPUT_BUDGET_EXPONENT);
        assert_eq!(json_num(src, Some("azure"), "body_mu"), azure::BODY_MU);
        assert_eq!(json_num(src, Some("azure"), "body_mass"), azure::BODY_MASS);
        assert_eq!(json_num(src, Some("azure"), "tail_shape"), azure::TAIL_SHAPE);
        assert_eq!(json_num(src, Some("azure"), "long_budget_prob"), azure::LONG_BUDGET_PROB);
        assert_eq!(json_num(src, Some("azure"), "output_scale"), azure::OUTPUT_SCALE);
        assert_eq!(json_num(src, Some("lmsys"), "prompt_mu"), lmsys::PROMPT_MU);
        assert_eq!(json_num(src, Some("lmsys"), "long_budget_prob"), lmsys::LONG_BUDGET_PROB);
        assert_eq!(json_num(src, Some("lmsys"), "output_scale"), lmsys::OUTPUT_SCALE);
    }

    #[test]
    fn samplers_stay_in_range() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20_000 {
            let b = sample_budget(&mut rng, 0.2);
            assert!(b == LONG_BUDGET || SMALL_BUDGETS.contains(&b));
            let o = sample_output(&mut rng, 60.0, b);
            assert!((1..=b).contains(&o));
            let p = sample_azure_prompt(&mut rng);
            assert!((1..=57_344).contains(&p));
            assert!((1..=lmsys::PROMPT_CAP).contains(&sample_lmsys_prompt(&mut rng)));
        }
    }
}

#!/usr/bin/env python3
"""Quantile-matching fit for the synthetic trace length models.

Solves, with exact (discretised) CDF arithmetic rather than sampling, for the
parameters the trace generator in `crates/core/src/trace/lengths.rs` uses:

Azure-like
  prompt tokens  = ceil(x), x ~ 0.95 * LogNormal(mu, SIGMA_BODY) truncated to
                   (0, 8192) + 0.05 * Pareto(8192, TAIL_SHAPE) truncated to
                   [8192, 57344]
  budget         = 8192 with prob p_long, else one of SMALL_BUDGETS with
                   weights proportional to q**i (i = 0 for the smallest)
  targets        = P80(prompt) = 2048, P95(prompt) = 8192,
                   alpha(8192) = 0.80, alpha(1024) = 0.35

LMSYS-like
  prompt tokens  = max(1, round(x)), x ~ LogNormal(mu, SIGMA_LMSYS_PROMPT)
  budget         = same small-budget shape, 8192 with prob p_long
  output tokens  = clamp(round(y), 1, budget), y ~ LogNormal(ln(k * budget**OUTPUT_BUDGET_EXPONENT), SIGMA_OUT)
  targets        = E[prompt] = 69.5, E[output] = 214.5, alpha(8192) = 0.68

Both kinds share the output model shape; each gets its own scale k. The
Azure-like output mean of 300 tokens is an assumption (no output statistics are
published for that trace); it keeps full-batch decode iterations of the
128-seat short pool well inside an 80 ms per-token budget.

Run:  python3 scripts/fit_lengths.py  > crates/core/data/length_fit.json
"""

import json
import math

import numpy as np
from scipy import optimize, stats

SMALL_BUDGETS = [64, 128, 256, 512, 1024, 2048, 4096]
LONG_BUDGET = 8192
SIGMA_BODY = 1.0
TAIL_START = 8192.0
TAIL_CAP = 57344.0
TAIL_SHAPE = 1.2
BODY_MASS = 0.95
SIGMA_LMSYS_PROMPT = 1.0
SIGMA_OUT = 0.8
OUTPUT_BUDGET_EXPONENT = 0.25


def small_weights(q):
    w = np.array([q**i for i in range(len(SMALL_BUDGETS))], dtype=float)
    return w / w.sum()


# ---------------------------------------------------------------- Azure-like

def body_mu_for_p80(sigma):
    # Phi(z(2048)) / Phi(z(8192)) = 0.80 / 0.95
    target = 0.80 / BODY_MASS

    def f(mu):
        return (stats.norm.cdf((math.log(2048) - mu) / sigma)
                / stats.norm.cdf((math.log(TAIL_START) - mu) / sigma)) - target

    return optimize.brentq(f, 0.0, 12.0, xtol=1e-14)


def azure_prompt_cdf(y, mu, sigma):
    """P(ceil(x) <= y) = P(x <= y) for integer y."""
    if y < 1:
        return 0.0
    if y < TAIL_START:
        return BODY_MASS * stats.norm.cdf((math.log(y) - mu) / sigma) / \
            stats.norm.cdf((math.log(TAIL_START) - mu) / sigma)
    y = min(y, TAIL_CAP)
    a = TAIL_SHAPE
    t = (1 - (TAIL_START / y) ** a) / (1 - (TAIL_START / TAIL_CAP) ** a)
    return BODY_MASS + (1 - BODY_MASS) * t


def azure_alpha(threshold, mu, sigma, p_long, q):
    w = small_weights(q) * (1 - p_long)
    total = 0.0
    for b, wb in zip(SMALL_BUDGETS, w):
        total += wb * azure_prompt_cdf(threshold - b, mu, sigma)
    total += p_long * azure_prompt_cdf(threshold - LONG_BUDGET, mu, sigma)
    return total


def fit_azure():
    mu = body_mu_for_p80(SIGMA_BODY)

    def a8(q):
        return sum(wb * azure_prompt_cdf(8192 - b, mu, SIGMA_BODY)
                   for b, wb in zip(SMALL_BUDGETS, small_weights(q)))

    def a1(q):
        return sum(wb * azure_prompt_cdf(1024 - b, mu, SIGMA_BODY)
                   for b, wb in zip(SMALL_BUDGETS, small_weights(q)))

    # alpha(8192) = (1 - p) * a8 = 0.80  and  alpha(1024) = (1 - p) * a1 = 0.35
    q = optimize.brentq(lambda q: 0.80 * a1(q) / a8(q) - 0.35, 0.05, 5.0, xtol=1e-14)
    p_long = 1 - 0.80 / a8(q)
    return mu, q, p_long


# ---------------------------------------------------------------- LMSYS-like

def lmsys_prompt_mean(mu):
    sig = SIGMA_LMSYS_PROMPT
    ks = np.arange(1, 200000)
    # P(round(x) = k) for k >= 2, everything below 1.5 lands on 1
    upper = stats.norm.cdf((np.log(ks + 0.5) - mu) / sig)
    lower = stats.norm.cdf((np.log(np.maximum(ks - 0.5, 1e-300)) - mu) / sig)
    pk = upper - lower
    pk[0] = upper[0]
    return float((ks * pk).sum())


def realized_output_mean(k, budget):
    mu = math.log(k * budget ** OUTPUT_BUDGET_EXPONENT)
    ks = np.arange(1, budget + 1)
    upper = stats.norm.cdf((np.log(ks + 0.5) - mu) / SIGMA_OUT)
    lower = stats.norm.cdf((np.log(np.maximum(ks - 0.5, 1e-300)) - mu) / SIGMA_OUT)
    pk = upper - lower
    pk[0] = upper[0]
    pk[-1] = 1.0 - lower[-1]
    return float((ks * pk).sum())


def output_mean(k, p_long, q):
    w = small_weights(q) * (1 - p_long)
    m = sum(wb * realized_output_mean(k, b) for b, wb in zip(SMALL_BUDGETS, w))
    return m + p_long * realized_output_mean(k, LONG_BUDGET)


def fit_lmsys(q):
    mu = optimize.brentq(lambda m: lmsys_prompt_mean(m) - 69.5, 1.0, 8.0, xtol=1e-12)

    def prompt_cdf(y):
        if y < 1:
            return 0.0
        return stats.norm.cdf((math.log(y + 0.5) - mu) / SIGMA_LMSYS_PROMPT)

    a8 = sum(wb * prompt_cdf(8192 - b) for b, wb in zip(SMALL_BUDGETS, small_weights(q)))
    p_long = 1 - 0.68 / a8
    k = optimize.brentq(lambda k: output_mean(k, p_long, q) - 214.5, 0.05, 500.0, xtol=1e-12)
    return mu, p_long, k


AZURE_OUTPUT_MEAN = 300.0


def main():
    az_mu, q, az_p = fit_azure()
    lm_mu, lm_p, k = fit_lmsys(q)
    az_k = optimize.brentq(lambda kk: output_mean(kk, az_p, q) - AZURE_OUTPUT_MEAN,
                           0.05, 500.0, xtol=1e-12)
    check = {
        "azure_alpha_1024": azure_alpha(1024, az_mu, SIGMA_BODY, az_p, q),
        "azure_alpha_8192": azure_alpha(8192, az_mu, SIGMA_BODY, az_p, q),
        "azure_alpha_4096": azure_alpha(4096, az_mu, SIGMA_BODY, az_p, q),
        "azure_alpha_16384": azure_alpha(16384, az_mu, SIGMA_BODY, az_p, q),
        "azure_prompt_cdf_2048": azure_prompt_cdf(2048, az_mu, SIGMA_BODY),
        "azure_prompt_cdf_8192": azure_prompt_cdf(8192, az_mu, SIGMA_BODY),
        "azure_output_mean": output_mean(az_k, az_p, q),
        "lmsys_prompt_mean": lmsys_prompt_mean(lm_mu),
        "lmsys_output_mean": output_mean(k, lm_p, q),
    }
    out = {
        "small_budgets": SMALL_BUDGETS,
        "long_budget": LONG_BUDGET,
        "small_budget_decay": q,
        "output_sigma": SIGMA_OUT,
        "output_budget_exponent": OUTPUT_BUDGET_EXPONENT,
        "azure": {
            "body_mass": BODY_MASS,
            "body_mu": az_mu,
            "body_sigma": SIGMA_BODY,
            "tail_start": TAIL_START,
            "tail_cap": TAIL_CAP,
            "tail_shape": TAIL_SHAPE,
            "long_budget_prob": az_p,
            "output_scale": az_k,
        },
        "lmsys": {
            "prompt_mu": lm_mu,
            "prompt_sigma": SIGMA_LMSYS_PROMPT,
            "long_budget_prob": lm_p,
            "output_scale": k,
        },
        "check": check,
    }
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()

//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. `cargo test --test acceptance`

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use tokenpool::config::Experiment;
use tokenpool::core::cost::{homogeneous_gpus, savings_fraction};
use tokenpool::core::kv::{
    fragmentation_waste, kv_budget_bytes, kv_bytes_per_token, max_concurrent_seqs, GpuSpec, ModelSpec, PoolConfig,
};
use tokenpool::core::sim::{calibrate_iteration_model, run, saturated_throughput, IterationModel, SimConfig};
use tokenpool::core::trace::{generate, prompt_quantile, stats, Request, TraceSpec};
use tokenpool::experiments;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x / target - 1.0).abs() <= rel
}

fn closed_form_savings() -> Outcome {
    let a = savings_fraction(0.80, 4.0).map_err(|e| e.to_string())?;
    let b = savings_fraction(0.70, 2.0).map_err(|e| e.to_string())?;
    check(
        (a - 0.600).abs() < 1e-12 && (b - 0.350).abs() < 1e-12,
        format!("(0.80, 4.0) -> {a}, (0.70, 2.0) -> {b}"),
    )
}

fn fleet_sizing() -> Outcome {
    let n = homogeneous_gpus(1000.0, 2.8).map_err(|e| e.to_string())?;
    check(n == 358, format!("homogeneous_gpus(1000, 2.8) = {n}"))
}

fn case_study() -> Outcome {
    let model = ModelSpec::qwen3_235b_a22b();
    let gpu = GpuSpec::mi300x_192g();
    let per_token = kv_bytes_per_token(&model);
    let budget = kv_budget_bytes(&gpu, &model);
    let s8 = max_concurrent_seqs(budget, per_token, 8_192);
    let s32 = max_concurrent_seqs(budget, per_token, 32_768);
    let exp = Experiment::load("table6-projection").map_err(|e| e.to_string())?;
    let rep = experiments::project(&exp, None).map_err(|e| e.to_string())?;
    let homo = rep.projection.homogeneous.annual_cost;
    let saved = rep.projection.annual_savings;
    check(
        within(per_token as f64, 23.5 * 1024.0, 0.02)
            && per_token == 24_064
            && budget == 133_400_000_000
            && s8 == 676
            && s32 == 169
            && within(homo, 50.6e6, 0.01)
            && within(saved, 15.4e6, 0.02),
        format!(
            "{per_token} B/token, budget {budget} B, seqs {s8}/{s32}, homogeneous ${:.2}M/yr, savings ${:.2}M/yr",
            homo / 1e6,
            saved / 1e6
        ),
    )
}

fn fragmentation() -> Outcome {
    let waste = fragmentation_waste(128, 24_064, 16);
    let share = waste as f64 / 192e9;
    check(
        within(waste as f64, 46.2e6, 0.01) && share < 0.0005,
        format!("{waste} B, {:.4}% of 192 GB", share * 100.0),
    )
}

fn calibration() -> Outcome {
    let exp = Experiment::load("table5-calibration").map_err(|e| e.to_string())?;
    let trace = exp.trace().map_err(|e| e.to_string())?;
    let rep = experiments::calibrate(&exp, &trace, Some(50), None).map_err(|e| e.to_string())?;
    let mut ok = !rep.rows.is_empty();
    let mut parts = Vec::new();
    for r in &rep.rows {
        ok &= r.n_obs >= 50 && r.rel_error <= 0.05 && r.misroute_rate < 0.015;
        parts.push(format!(
            "{} err {:.2}% misroute {:.2}% static {:.2}%",
            r.category,
            r.rel_error * 100.0,
            r.misroute_rate * 100.0,
            r.static_misroute_rate * 100.0
        ));
    }
    match rep.rows.iter().find(|r| r.category == "cjk") {
        Some(cjk) => ok &= cjk.static_misroute_rate >= 0.03,
        None => ok = false,
    }
    check(ok, parts.join("; "))
}

fn trace_fidelity() -> Outcome {
    let azure = generate(&TraceSpec::azure_like(1000.0, 100_000, 42)).map_err(|e| e.to_string())?;
    let p80 = prompt_quantile(&azure, 0.80).map_err(|e| e.to_string())?;
    let p95 = prompt_quantile(&azure, 0.95).map_err(|e| e.to_string())?;
    let a_azure = stats(&azure).map_err(|e| e.to_string())?.alpha_at(8_192);
    let lmsys = generate(&TraceSpec::lmsys_like(1000.0, 100_000, 42)).map_err(|e| e.to_string())?;
    let n = lmsys.requests.len() as f64;
    let mean_prompt = lmsys.requests.iter().map(|r| r.true_prompt_tokens as f64).sum::<f64>() / n;
    let mean_out = lmsys.requests.iter().map(|r| r.true_output_tokens as f64).sum::<f64>() / n;
    let a_lmsys = stats(&lmsys).map_err(|e| e.to_string())?.alpha_at(8_192);
    check(
        p80 as f64 <= 2_048.0 * 1.1
            && p95 as f64 <= 8_192.0 * 1.1
            && (a_azure - 0.80).abs() <= 0.03
            && (mean_prompt - 69.5).abs() <= 3.0
            && (mean_out - 214.5).abs() <= 10.0
            && (a_lmsys - 0.68).abs() <= 0.04,
        format!(
            "azure P80 {p80} P95 {p95} alpha {a_azure:.3}; lmsys prompt {mean_prompt:.1} output {mean_out:.1} alpha {a_lmsys:.3}"
        ),
    )
}

fn throughput() -> Outcome {
    let sample = generate(&TraceSpec::azure_like(1000.0, 4_000, 42)).map_err(|e| e.to_string())?.requests;
    let short_share: Vec<Request> = sample.iter().filter(|r| r.total_budget() <= 8_192).cloned().collect();
    let long = PoolConfig::homogeneous_65k();
    let short = PoolConfig::short_8k();
    let m = calibrate_iteration_model(2.8, &long, &sample, &IterationModel::default(), None)
        .map_err(|e| e.to_string())?;
    let mu_long = saturated_throughput(&long, &m, &sample, None).map_err(|e| e.to_string())?;
    let mu_short = saturated_throughput(&short, &m, &short_share, None).map_err(|e| e.to_string())?;
    check(
        within(mu_long, 2.8, 0.05) && within(mu_short, 11.2, 0.05),
        format!("long {mu_long:.3} req/s, short {mu_short:.3} req/s"),
    )
}

fn savings_bracket() -> Outcome {
    let exp = Experiment::load("table2-azure").map_err(|e| e.to_string())?;
    let rows = experiments::savings_at_rates(&exp).map_err(|e| e.to_string())?;
    let spread = experiments::savings_spread(&rows);
    let ok = rows.len() >= 3
        && rows.iter().all(|r| (0.30..=0.60).contains(&r.savings) && r.savings < r.predicted)
        && spread <= 0.04;
    let parts: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{} req/s {}/{} GPUs {:.1}% (predicted {:.1}%)",
                r.rate,
                r.dual_total,
                r.homogeneous,
                r.savings * 100.0,
                r.predicted * 100.0
            )
        })
        .collect();
    check(ok, format!("{}; spread {:.1} pp", parts.join(", "), spread * 100.0))
}

fn reliability() -> Outcome {
    let exp = Experiment::load("table3-reliability").map_err(|e| e.to_string())?;
    let rep = experiments::reliability(&exp).map_err(|e| e.to_string())?;
    let short = &rep.short_pool;
    let h = &rep.homogeneous.aggregate;
    let d = &rep.dual.aggregate;
    let ok = short.rejected == 0
        && short.oom_dropped == 0
        && rep.comparison.preemption_ratio.at_least(3.0)
        && d.success_rate >= h.success_rate;
    check(
        ok,
        format!(
            "short pool rejected {} oom {}; preemption per-mille {:.3} vs {:.3} ({:?}); success {:.4} vs {:.4}",
            short.rejected,
            short.oom_dropped,
            h.preemption_per_mille,
            d.preemption_per_mille,
            rep.comparison.preemption_ratio,
            d.success_rate,
            h.success_rate
        ),
    )
}

fn threshold_sweep() -> Outcome {
    let exp = Experiment::load("fig6-sweep").map_err(|e| e.to_string())?;
    let thresholds = [1_024, 2_048, 4_096, 8_192, 16_384, 32_768];
    let rep = experiments::sweep(&exp, Some(&thresholds), Some(true)).map_err(|e| e.to_string())?;
    let plateau = experiments::check_plateau(&rep.points, 0.8, 4_096, 16_384);
    let unimodal = experiments::is_unimodal(&rep.points, 0.02);
    let curve: Vec<String> = rep
        .points
        .iter()
        .map(|p| format!("{}: {:.1}%", p.threshold, p.simulated_savings.unwrap_or(f64::NAN) * 100.0))
        .collect();
    let mut detail = format!("{}; unimodal {unimodal}", curve.join(", "));
    if let Err(e) = &plateau {
        detail.push_str("; ");
        detail.push_str(e);
    }
    check(plateau.is_ok() && unimodal, detail)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_tokenpool"))
            .args(["simulate", "azure-1000rps-dual", "--baseline", "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("simulate exited with {}", status.status));
        }
        let mut files = Vec::new();
        for name in ["result.json", "baseline_result.json", "summary.json"] {
            files.push(std::fs::read(out.join(name)).map_err(|e| format!("{name}: {e}"))?);
        }
        outputs.push(files);
    }
    let bytes: usize = outputs[0].iter().map(Vec::len).sum();
    check(outputs[0] == outputs[1], format!("two runs, {bytes} bytes of result JSON compared"))
}

#[derive(Debug, Clone)]
struct SmallCase {
    azure: bool,
    n: u64,
    rate: f64,
    seed: u64,
    dual: bool,
    short_c_max: u64,
    counts: (u64, u64),
    kv: Option<u64>,
    block_tokens: u64,
    spillover: bool,
}

fn small_case() -> impl Strategy<Value = SmallCase> {
    (
        (any::<bool>(), 0u64..=1_000, 1.0f64..300.0, any::<u64>()),
        (any::<bool>(), prop::sample::select(vec![2_048u64, 4_096, 8_192]), 1u64..=4, 1u64..=4),
        (
            prop::option::of(prop::sample::select(vec![4_096u64, 20_000, 70_000, 300_000])),
            prop::sample::select(vec![1u64, 8, 16, 32]),
            any::<bool>(),
        ),
    )
        .prop_map(
            |((azure, n, rate, seed), (dual, short_c_max, s, l), (kv, block_tokens, spillover))| SmallCase {
                azure,
                n,
                rate,
                seed,
                dual,
                short_c_max,
                counts: (s, l),
                kv,
                block_tokens,
                spillover,
            },
        )
}

fn invariants_hold(c: &SmallCase) -> Result<(), TestCaseError> {
    let spec = if c.azure {
        TraceSpec::azure_like(c.rate, c.n, c.seed)
    } else {
        TraceSpec::lmsys_like(c.rate, c.n, c.seed)
    };
    let trace = generate(&spec).map_err(|e| TestCaseError::fail(e.to_string()))?.requests;
    let mut cfg = if c.dual {
        let short = PoolConfig {
            c_max: c.short_c_max,
            ..PoolConfig::short_8k()
        };
        let mut cfg = SimConfig::dual(short, c.counts.0, PoolConfig::long_65k(), c.counts.1, c.short_c_max);
        cfg.spillover_enabled = c.spillover;
        cfg
    } else {
        SimConfig::homogeneous(PoolConfig::homogeneous_65k(), c.counts.1)
    };
    cfg.kv_capacity_tokens_per_instance = c.kv;
    cfg.block_tokens = c.block_tokens;
    let r = run(&cfg, &trace).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(r.aggregate.arrivals, trace.len() as u64);
    prop_assert!(r.aggregate.conserved());
    prop_assert_eq!(r.aggregate.inflight_at_end, 0);
    prop_assert_eq!(r.safety_violations, 0);
    prop_assert_eq!(r.kv_accounting_violations, 0);
    for p in &r.pools {
        prop_assert!(p.all.conserved(), "{} {:?}", p.pool_id, p.all);
        prop_assert!(p.peak_kv_blocks * cfg.block_tokens <= p.kv_capacity_tokens);
    }
    if c.dual {
        prop_assert_eq!(r.pools[0].all.rejected, 0);
        if cfg.kv_capacity_tokens(0) >= c.short_c_max + cfg.block_tokens {
            prop_assert_eq!(r.pools[0].all.oom_dropped, 0);
        }
    }
    Ok(())
}

fn invariant_suite() -> Outcome {
    const CASES: u32 = 128;
    let mut runner = TestRunner::new(PropConfig {
        cases: CASES,
        failure_persistence: None,
        ..PropConfig::default()
    });
    match runner.run(&small_case(), |c| invariants_hold(&c)) {
        Ok(()) => Ok(format!("{CASES} randomized configurations")),
        Err(e) => Err(e.to_string()),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("closed-form savings", closed_form_savings),
        ("fleet sizing arithmetic", fleet_sizing),
        ("MI300X case study", case_study),
        ("block fragmentation", fragmentation),
        ("ratio calibration and misroutes", calibration),
        ("trace fidelity", trace_fidelity),
        ("throughput calibration", throughput),
        ("end-to-end savings bracket", savings_bracket),
        ("reliability at matched utilization", reliability),
        ("threshold sweep plateau", threshold_sweep),
        ("determinism", determinism),
        ("conservation and safety invariants", invariant_suite),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {:>2} PASS  {name} ({secs:.1}s): {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} ({secs:.1}s): {d}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

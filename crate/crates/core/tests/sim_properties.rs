use proptest::prelude::*;
use tokenpool_core::kv::PoolConfig;
use tokenpool_core::sim::{run, RoutingMode, SimConfig, SimResult};
use tokenpool_core::trace::{generate, Request, TraceSpec};

#[derive(Debug, Clone)]
struct Case {
    azure: bool,
    n: u64,
    rate: f64,
    seed: u64,
    dual: bool,
    short_c_max: u64,
    b_short_frac: f64,
    short_n: u64,
    long_n: u64,
    kv: Option<u64>,
    block_tokens: u64,
    spillover: bool,
    overload: Option<u64>,
}

fn case() -> impl Strategy<Value = Case> {
    (
        (any::<bool>(), 0u64..=1000, 1.0f64..300.0, any::<u64>()),
        (any::<bool>(), prop::sample::select(vec![2048u64, 4096, 8192]), 0.25f64..=1.0, 1u64..=4, 1u64..=4),
        (
            prop::option::of(prop::sample::select(vec![4_096u64, 20_000, 70_000, 300_000])),
            prop::sample::select(vec![1u64, 8, 16, 32]),
            any::<bool>(),
            prop::option::of(0u64..40),
        ),
    )
        .prop_map(|((azure, n, rate, seed), (dual, short_c_max, b_short_frac, short_n, long_n), (kv, block_tokens, spillover, overload))| Case {
            azure,
            n,
            rate,
            seed,
            dual,
            short_c_max,
            b_short_frac,
            short_n,
            long_n,
            kv,
            block_tokens,
            spillover,
            overload,
        })
}

fn build(c: &Case) -> (SimConfig, Vec<Request>) {
    let spec = if c.azure {
        TraceSpec::azure_like(c.rate, c.n, c.seed)
    } else {
        TraceSpec::lmsys_like(c.rate, c.n, c.seed)
    };
    let trace = generate(&spec).unwrap().requests;
    let mut cfg = if c.dual {
        let short = PoolConfig {
            c_max: c.short_c_max,
            ..PoolConfig::short_8k()
        };
        let b_short = ((c.short_c_max as f64 * c.b_short_frac) as u64).max(1);
        let mut cfg = SimConfig::dual(short, c.short_n, PoolConfig::long_65k(), c.long_n, b_short);
        cfg.spillover_enabled = c.spillover;
        cfg.overload_queue_threshold = c.overload;
        cfg
    } else {
        SimConfig::homogeneous(PoolConfig::homogeneous_65k(), c.long_n)
    };
    cfg.kv_capacity_tokens_per_instance = c.kv;
    cfg.block_tokens = c.block_tokens;
    (cfg, trace)
}

fn check(cfg: &SimConfig, trace: &[Request], r: &SimResult) -> Result<(), TestCaseError> {
    prop_assert_eq!(r.aggregate.arrivals, trace.len() as u64);
    prop_assert!(r.aggregate.conserved());
    prop_assert!(r.aggregate_measured.conserved());
    for p in &r.pools {
        prop_assert!(p.all.conserved(), "{} {:?}", p.pool_id, p.all);
        prop_assert!(p.measured.conserved());
        prop_assert!(p.peak_kv_blocks * cfg.block_tokens <= p.kv_capacity_tokens);
    }
    prop_assert_eq!(r.safety_violations, 0);
    prop_assert_eq!(r.kv_accounting_violations, 0);
    if cfg.routing == RoutingMode::TokenBudget {
        let short = &r.pools[0];
        prop_assert_eq!(short.all.rejected, 0);
        if cfg.kv_capacity_tokens(0) >= short.c_max + cfg.block_tokens {
            prop_assert_eq!(short.all.oom_dropped, 0);
        }
    }
    // nothing can stay in flight without a time limit
    prop_assert_eq!(r.aggregate.inflight_at_end, 0);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, ..ProptestConfig::default() })]

    #[test]
    fn conservation_and_safety(c in case()) {
        let (cfg, trace) = build(&c);
        let r = run(&cfg, &trace).unwrap();
        check(&cfg, &trace, &r)?;
    }

    #[test]
    fn zero_pressure_means_no_preemption(mut c in case()) {
        // default capacity covers every seat at its c_max
        c.kv = None;
        c.n = c.n.min(300);
        let (cfg, trace) = build(&c);
        let r = run(&cfg, &trace).unwrap();
        prop_assert_eq!(r.aggregate.preempted_events, 0);
        prop_assert_eq!(r.aggregate.oom_dropped, 0);
    }

    #[test]
    fn runs_are_reproducible(mut c in case()) {
        c.n = c.n.min(200);
        let (cfg, trace) = build(&c);
        prop_assert_eq!(run(&cfg, &trace).unwrap(), run(&cfg, &trace).unwrap());
    }
}

#[test]
fn empty_trace() {
    let cfg = SimConfig::dual(PoolConfig::short_8k(), 2, PoolConfig::long_65k(), 2, 8192);
    let r = run(&cfg, &[]).unwrap();
    assert_eq!(r.aggregate, Default::default());
    assert_eq!(r.duration_s, 0.0);
    assert!(r.aggregate.conserved());
}

#[test]
fn kv_smaller_than_a_block_is_a_config_error() {
    let mut cfg = SimConfig::homogeneous(PoolConfig::homogeneous_65k(), 1);
    cfg.kv_capacity_tokens_per_instance = Some(8);
    assert!(run(&cfg, &[]).is_err());
}

#[test]
fn pressure_produces_preemption_and_oom() {
    let trace = generate(&TraceSpec::azure_like(200.0, 3000, 5)).unwrap().requests;
    let mut cfg = SimConfig::homogeneous(PoolConfig::homogeneous_65k(), 4);
    cfg.kv_capacity_tokens_per_instance = Some(32_768);
    let r = run(&cfg, &trace).unwrap();
    assert!(r.aggregate.preempted_events > 0);
    // a lone request bigger than the whole cache cannot be served
    assert!(r.aggregate.oom_dropped > 0);
    assert!(r.aggregate.conserved());
}

#[test]
fn oversize_requests_are_rejected_in_homogeneous_mode() {
    let mut trace = generate(&TraceSpec::lmsys_like(50.0, 50, 1)).unwrap().requests;
    trace[3].true_prompt_tokens = 9_000;
    let cfg = SimConfig::homogeneous(PoolConfig::short_8k(), 1);
    let r = run(&cfg, &trace).unwrap();
    assert!(r.aggregate.rejected >= 1);
    assert_eq!(r.safety_violations, 0);
}

#[test]
fn latencies_are_ordered() {
    let trace = generate(&TraceSpec::azure_like(20.0, 400, 9)).unwrap().requests;
    let mut cfg = SimConfig::dual(PoolConfig::short_8k(), 1, PoolConfig::long_65k(), 1, 8192);
    cfg.record_events = true;
    cfg.warmup_fraction = 0.0;
    let r = run(&cfg, &trace).unwrap();
    for e in r.events.as_ref().unwrap() {
        let (Some(a), Some(f), Some(d)) = (e.admitted_at_s, e.first_token_at_s, e.finished_at_s) else {
            continue;
        };
        assert!(e.arrival_s <= a && a <= f && f <= d, "{e:?}");
    }
    for p in &r.pools {
        for l in &p.latency {
            assert!(l.ttft_s >= 0.0);
            assert!(l.tpot_s.is_none_or(|t| t > 0.0));
        }
    }
}

#[test]
fn time_limit_leaves_requests_in_flight() {
    let trace = generate(&TraceSpec::azure_like(100.0, 1000, 3)).unwrap().requests;
    let mut cfg = SimConfig::homogeneous(PoolConfig::homogeneous_65k(), 2);
    cfg.max_sim_time_s = Some(5.0);
    let r = run(&cfg, &trace).unwrap();
    assert!(r.aggregate.inflight_at_end > 0);
    assert!(r.aggregate.conserved());
    assert!(r.duration_s <= 5.0);
}

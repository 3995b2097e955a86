//! Plain-text tables, CSV and JSON documents for results.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use tokenpool_core::cost::SweepPoint;
use tokenpool_core::metrics::{Comparison, Improvement, MetricsSummary, RunSummary};
use tokenpool_core::trace::{prompt_quantile, stats, Trace};

use crate::error::Result;

/// Quantile grid reported for traces.
pub const QUANTILES: [u32; 5] = [50, 80, 90, 95, 99];

/// A left-aligned first column and right-aligned numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub title: Option<String>,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Table {
            title: None,
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn titled(mut self, title: impl Into<String>) -> Self {
        self.title = Some(title.into());
        self
    }

    pub fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.headers.len();
        let mut w: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (i, c) in r.iter().enumerate().take(n) {
                w[i] = w[i].max(c.chars().count());
            }
        }
        if let Some(t) = &self.title {
            writeln!(f, "{t}")?;
        }
        let line = |f: &mut fmt::Formatter<'_>, cells: &[String]| -> fmt::Result {
            let mut s = String::new();
            for (i, c) in cells.iter().enumerate().take(n) {
                if i > 0 {
                    s.push_str("  ");
                }
                let pad = w[i] - c.chars().count();
                if i == 0 {
                    s.push_str(c);
                    s.extend(std::iter::repeat_n(' ', pad));
                } else {
                    s.extend(std::iter::repeat_n(' ', pad));
                    s.push_str(c);
                }
            }
            writeln!(f, "{}", s.trim_end())
        };
        line(f, &self.headers)?;
        let total: usize = w.iter().sum::<usize>() + 2 * n.saturating_sub(1);
        writeln!(f, "{}", "-".repeat(total))?;
        for r in &self.rows {
            line(f, r)?;
        }
        Ok(())
    }
}

pub fn opt(x: Option<f64>, digits: usize) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"))
}

pub fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn improvement(x: &Improvement) -> String {
    match x {
        Improvement::Finite(v) => format!("{v:.2}x"),
        Improvement::Infinite => "inf".to_string(),
    }
}

const SUMMARY_HEADERS: [&str; 12] = [
    "pool",
    "gpus",
    "arrivals",
    "completed",
    "p50 TTFT s",
    "p99 TTFT s",
    "p50 TPOT ms",
    "p99 TPOT ms",
    "preempt/1k",
    "OOM/h",
    "rejected",
    "success",
];

fn summary_cells(name: &str, m: &MetricsSummary) -> Vec<String> {
    vec![
        name.to_string(),
        m.gpus.to_string(),
        m.arrivals.to_string(),
        m.completed.to_string(),
        opt(m.p50_ttft_s, 3),
        opt(m.p99_ttft_s, 3),
        opt(m.p50_tpot_ms, 1),
        opt(m.p99_tpot_ms, 1),
        format!("{:.2}", m.preemption_per_mille),
        format!("{:.1}", m.oom_per_hour),
        format!("{:.4}", m.rejection_rate),
        format!("{:.4}", m.success_rate),
    ]
}

/// One row per pool, then the fleet.
pub fn summary_table(s: &RunSummary, title: &str) -> Table {
    let mut t = Table::new(&SUMMARY_HEADERS).titled(title);
    if s.pools.len() > 1 {
        for (name, m) in &s.pools {
            t.row(summary_cells(name, m));
        }
    }
    t.row(summary_cells("all", &s.aggregate));
    t
}

pub const SUMMARY_CSV_HEADER: [&str; 15] = [
    "pool",
    "gpus",
    "arrivals",
    "completed",
    "p50_ttft_s",
    "p99_ttft_s",
    "p50_tpot_ms",
    "p99_tpot_ms",
    "preemption_per_mille",
    "oom_per_hour",
    "rejection_rate",
    "oom_drop_rate",
    "success_rate",
    "savings_vs_baseline",
    "trace_digest",
];

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Per-pool rows then `all`; blank cells for absent values.
pub fn summary_csv(s: &RunSummary) -> Vec<u8> {
    let row = |name: &str, m: &MetricsSummary| {
        vec![
            name.to_string(),
            m.gpus.to_string(),
            m.arrivals.to_string(),
            m.completed.to_string(),
            cell(m.p50_ttft_s),
            cell(m.p99_ttft_s),
            cell(m.p50_tpot_ms),
            cell(m.p99_tpot_ms),
            m.preemption_per_mille.to_string(),
            m.oom_per_hour.to_string(),
            m.rejection_rate.to_string(),
            m.oom_drop_rate.to_string(),
            m.success_rate.to_string(),
            cell(m.savings_vs_baseline),
            format!("{:016x}", m.trace_digest),
        ]
    };
    let rows = s
        .pools
        .iter()
        .map(|(n, m)| row(n, m))
        .chain([row("all", &s.aggregate)]);
    csv_bytes(&SUMMARY_CSV_HEADER, rows)
}

pub const SWEEP_CSV_HEADER: [&str; 5] = ["threshold", "alpha", "rho", "predicted_savings", "simulated_savings"];

pub fn sweep_csv(points: &[SweepPoint]) -> Vec<u8> {
    csv_bytes(
        &SWEEP_CSV_HEADER,
        points.iter().map(|p| {
            vec![
                p.threshold.to_string(),
                p.alpha.to_string(),
                p.rho.to_string(),
                p.predicted_savings.to_string(),
                cell(p.simulated_savings),
            ]
        }),
    )
}

pub fn sweep_table(points: &[SweepPoint]) -> Table {
    let mut t = Table::new(&["threshold", "alpha", "rho", "predicted", "simulated"]).titled("Savings vs threshold");
    for p in points {
        t.row(vec![
            p.threshold.to_string(),
            format!("{:.3}", p.alpha),
            format!("{:.2}", p.rho),
            pct(p.predicted_savings),
            p.simulated_savings.map_or("-".into(), pct),
        ]);
    }
    t
}

pub fn comparison_table(c: &Comparison) -> Table {
    let mut t = Table::new(&["metric", "value"]).titled("Token-budget vs homogeneous");
    let rows = [
        ("GPU savings", pct(c.gpu_savings_fraction)),
        ("preemption improvement", improvement(&c.preemption_ratio)),
        ("OOM improvement", improvement(&c.oom_ratio)),
        ("p50 TTFT delta s", opt(c.p50_ttft_delta_s, 3)),
        ("p99 TTFT delta s", opt(c.p99_ttft_delta_s, 3)),
        ("p50 TPOT delta ms", opt(c.p50_tpot_delta_ms, 1)),
        ("p99 TPOT delta ms", opt(c.p99_tpot_delta_ms, 1)),
        ("success rate delta", format!("{:+.4}", c.success_rate_delta)),
    ];
    for (k, v) in rows {
        t.row(vec![k.to_string(), v]);
    }
    t
}

/// Quantiles on the `{50, 80, 90, 95, 99}` grid plus the CDF at chosen
/// thresholds. Totals are prompt plus output budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub n_requests: usize,
    pub total_quantiles: BTreeMap<String, u64>,
    pub prompt_quantiles: BTreeMap<String, u64>,
    pub alpha: BTreeMap<String, f64>,
    pub mean_prompt_tokens: f64,
    pub mean_output_tokens: f64,
    pub duration_s: f64,
}

pub fn trace_stats(trace: &Trace, thresholds: &[u64]) -> Result<TraceStats> {
    let s = stats(trace)?;
    let n = trace.len() as f64;
    let mut total_quantiles = BTreeMap::new();
    let mut prompt_quantiles = BTreeMap::new();
    for q in QUANTILES {
        let p = q as f64 / 100.0;
        total_quantiles.insert(q.to_string(), s.quantile(p)?);
        prompt_quantiles.insert(q.to_string(), prompt_quantile(trace, p)?);
    }
    let alpha = thresholds.iter().map(|&t| (t.to_string(), s.alpha_at(t))).collect();
    let r = &trace.requests;
    Ok(TraceStats {
        n_requests: r.len(),
        total_quantiles,
        prompt_quantiles,
        alpha,
        mean_prompt_tokens: r.iter().map(|x| x.true_prompt_tokens as f64).sum::<f64>() / n,
        mean_output_tokens: r.iter().map(|x| x.true_output_tokens as f64).sum::<f64>() / n,
        duration_s: r.last().map_or(0.0, |x| x.arrival_s) - r.first().map_or(0.0, |x| x.arrival_s),
    })
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tokenpool::config::{Experiment, ProjectionConfig};
use tokenpool::estimator::SharedEstimator;
use tokenpool::experiments::{self, SimulateReport};
use tokenpool::report::{self, pct, Table};
use tokenpool::{io, Error, Result};
use tokenpool_core::metrics::summarize_run;
use tokenpool_core::sim::SimResult;

/// Token-budget pool routing: traces, fleet simulation, sweeps and cost
/// projections.
#[derive(Parser)]
#[command(name = "tokenpool", version)]
struct Cli {
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Target {
    /// Experiment TOML file or bundled experiment name.
    experiment: String,
    /// Output directory (default: the experiment's `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Target {
    fn load(&self) -> Result<(Experiment, PathBuf)> {
        let exp = Experiment::load(&self.experiment)?;
        let dir = self.out.clone().unwrap_or_else(|| exp.config.output_dir());
        Ok((exp, dir))
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the experiment's trace as JSONL and print its statistics.
    GenTrace {
        #[command(flatten)]
        target: Target,
        /// Trace file (default: <out>/trace.jsonl).
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Report alpha at these total-budget thresholds.
        #[arg(long, value_delimiter = ',', default_value = "2048,8192")]
        thresholds: Vec<u64>,
    },
    /// Run the experiment's fleet. Experiments with `[savings]` or
    /// `[reliability]` run those studies instead.
    Simulate {
        #[command(flatten)]
        target: Target,
        /// Also run the homogeneous baseline and compare.
        #[arg(long)]
        baseline: bool,
    },
    /// Savings across short-pool thresholds.
    Sweep {
        #[command(flatten)]
        target: Target,
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<u64>>,
        /// Formula only; skip the fleet searches.
        #[arg(long)]
        no_sim: bool,
        /// FRACTION LO HI: fail unless every threshold in [LO, HI] reaches
        /// FRACTION of the peak.
        #[arg(long, num_args = 3, value_names = ["FRACTION", "LO", "HI"])]
        check_plateau: Option<Vec<f64>>,
    },
    /// Annual cost of homogeneous and two-pool fleets.
    Project {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Dollars per GPU-hour.
        #[arg(long)]
        price: Option<f64>,
        #[arg(long)]
        mu_long: Option<f64>,
        #[arg(long)]
        gpus_per_node: Option<u64>,
    },
    /// Calibrate per-category ratios and compare misroutes with a fixed ratio.
    Calibrate {
        #[command(flatten)]
        target: Target,
        /// JSONL trace to use instead of the experiment's.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        observations: Option<usize>,
        /// Only report these categories.
        #[arg(long, value_delimiter = ',')]
        categories: Option<Vec<String>>,
        /// Start from saved estimator stats.
        #[arg(long)]
        import: Option<PathBuf>,
    },
    /// Render a result JSON as a table or CSV.
    Report {
        result: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::new().parse_filters(level).format_timestamp(None).init();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn wrote(p: &Path) {
    eprintln!("wrote {}", p.display());
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenTrace {
            target,
            trace_out,
            thresholds,
        } => {
            let (exp, dir) = target.load()?;
            let trace = exp.trace()?;
            let path = trace_out.unwrap_or_else(|| dir.join("trace.jsonl"));
            io::write_trace(&path, &trace)?;
            wrote(&path);
            let st = report::trace_stats(&trace, &thresholds)?;
            let stats_path = dir.join("trace_stats.json");
            io::write_json(&stats_path, &st)?;
            wrote(&stats_path);
            print!("{}", String::from_utf8_lossy(&io::to_json(&st)));
            Ok(())
        }
        Cmd::Simulate { target, baseline } => {
            let (exp, dir) = target.load()?;
            if exp.config.savings.is_some() {
                return savings(&exp, &dir);
            }
            if exp.config.reliability.is_some() {
                return reliability(&exp, &dir);
            }
            simulate(&exp, &dir, baseline)
        }
        Cmd::Sweep {
            target,
            thresholds,
            no_sim,
            check_plateau,
        } => {
            let (exp, dir) = target.load()?;
            let rep = experiments::sweep(&exp, thresholds.as_deref(), no_sim.then_some(false))?;
            let csv = dir.join("sweep.csv");
            io::write_atomic(&csv, &report::sweep_csv(&rep.points))?;
            wrote(&csv);
            io::write_json(&dir.join("sweep.json"), &rep)?;
            print!("{}", report::sweep_table(&rep.points));
            if let Some(h) = rep.homogeneous {
                println!("homogeneous fleet: {h} instances");
            }
            let mut failed = Vec::new();
            if let Err(e) = experiments::check_upper_bound(&rep.points) {
                failed.push(e);
            }
            if let Some(v) = check_plateau {
                match experiments::check_plateau(&rep.points, v[0], v[1] as u64, v[2] as u64) {
                    Ok(()) => println!("plateau check passed"),
                    Err(e) => failed.push(e),
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Error::Assertion(failed.join("; ")))
            }
        }
        Cmd::Project {
            target,
            rate,
            alpha,
            price,
            mu_long,
            gpus_per_node,
        } => {
            let (exp, dir) = target.load()?;
            let base = exp.config.projection.clone();
            let p = match base {
                Some(b) => ProjectionConfig {
                    rate: rate.unwrap_or(b.rate),
                    alpha: alpha.unwrap_or(b.alpha),
                    price_per_gpu_hour: price.unwrap_or(b.price_per_gpu_hour),
                    mu_long: mu_long.unwrap_or(b.mu_long),
                    gpus_per_node: gpus_per_node.unwrap_or(b.gpus_per_node),
                    ..b
                },
                None => return Err(Error::config("projection", "missing section")),
            };
            let rep = experiments::project(&exp, Some(&p))?;
            let path = dir.join("projection.json");
            io::write_json(&path, &rep)?;
            wrote(&path);
            print!("{}", projection_table(&rep));
            Ok(())
        }
        Cmd::Calibrate {
            target,
            trace,
            observations,
            categories,
            import,
        } => {
            let (exp, dir) = target.load()?;
            let trace = match trace {
                Some(p) => io::load_trace(&p)?.trace,
                None => exp.trace()?,
            };
            let mut names: Vec<&str> = trace.requests.iter().map(|r| r.category.as_str()).collect();
            names.sort_unstable();
            names.dedup();
            let est = SharedEstimator::new(exp.config.estimator, names);
            if let Some(p) = import {
                est.import(&p)?;
            }
            let mut rep = experiments::calibrate(&exp, &trace, observations, Some(&est))?;
            if let Some(keep) = categories {
                rep.rows.retain(|r| keep.contains(&r.category));
            }
            let path = dir.join("calibration.json");
            io::write_json(&path, &rep)?;
            wrote(&path);
            let stats = dir.join("estimator_stats.json");
            est.export(&stats)?;
            wrote(&stats);
            print!("{}", calibration_table(&rep));
            Ok(())
        }
        Cmd::Report { result, format, out } => {
            let r: SimResult = io::read_json(&result)?;
            let s = summarize_run(&r);
            let bytes = match format {
                Format::Table => report::summary_table(&s, &result.display().to_string()).to_string().into_bytes(),
                Format::Csv => report::summary_csv(&s),
                Format::Json => io::to_json(&s),
            };
            match out {
                Some(p) => {
                    io::write_atomic(&p, &bytes)?;
                    wrote(&p);
                }
                None => print!("{}", String::from_utf8_lossy(&bytes)),
            }
            Ok(())
        }
    }
}

fn simulate(exp: &Experiment, dir: &Path, baseline: bool) -> Result<()> {
    let mut rep: SimulateReport = experiments::simulate(exp, baseline)?;
    let mut result = rep.result.take().expect("simulate returns its result");
    if let Some(events) = result.events.take() {
        let p = dir.join("events.jsonl");
        io::write_jsonl(&p, &events)?;
        wrote(&p);
    }
    let p = dir.join("result.json");
    io::write_json(&p, &result)?;
    wrote(&p);
    if let Some(mut b) = rep.baseline_result.take() {
        b.events = None;
        io::write_json(&dir.join("baseline_result.json"), &b)?;
    }
    io::write_json(&dir.join("summary.json"), &rep)?;
    io::write_atomic(&dir.join("summary.csv"), &report::summary_csv(&rep.summary))?;
    print!("{}", report::summary_table(&rep.summary, &format!("{}: {:?}", rep.name, rep.counts)));
    if let Some(s) = rep.summary.aggregate.savings_vs_baseline {
        println!(
            "GPU savings vs homogeneous ({} instances): {}",
            rep.baseline_gpus.unwrap_or(0),
            pct(s)
        );
    }
    let short = result.pools.iter().find(|p| p.pool_id == "short");
    if let Some(p) = short {
        println!(
            "short pool: {} rejected, {} OOM, {} preempted, {} misrouted",
            p.all.rejected, p.all.oom_dropped, p.all.preempted_events, p.all.misrouted
        );
    }
    if let Some(b) = &rep.baseline {
        print!("{}", report::summary_table(b, "homogeneous baseline"));
    }
    if let Some(c) = &rep.comparison {
        print!("{}", report::comparison_table(c));
    }
    Ok(())
}

fn savings(exp: &Experiment, dir: &Path) -> Result<()> {
    let rows = experiments::savings_at_rates(exp)?;
    io::write_json(&dir.join("savings.json"), &rows)?;
    let mut t = Table::new(&["rate", "requests", "homogeneous", "short", "long", "dual", "savings", "alpha", "predicted"])
        .titled("GPU instances and savings");
    for r in &rows {
        t.row(vec![
            format!("{}", r.rate),
            r.n_requests.to_string(),
            r.homogeneous.to_string(),
            r.short.to_string(),
            r.long.to_string(),
            r.dual_total.to_string(),
            pct(r.savings),
            format!("{:.3}", r.alpha),
            pct(r.predicted),
        ]);
    }
    print!("{t}");
    println!("spread across rates: {:.1} pp", 100.0 * experiments::savings_spread(&rows));
    Ok(())
}

fn reliability(exp: &Experiment, dir: &Path) -> Result<()> {
    let r = experiments::reliability(exp)?;
    io::write_json(&dir.join("reliability.json"), &r)?;
    println!(
        "sizing at {:.0}% utilisation: homogeneous {:?}, token-budget {:?}",
        100.0 * r.utilization,
        r.homogeneous_counts,
        r.dual_counts
    );
    print!("{}", report::summary_table(&r.homogeneous, "homogeneous"));
    print!("{}", report::summary_table(&r.dual, "token-budget"));
    print!("{}", report::comparison_table(&r.comparison));
    println!(
        "preemption alerts: homogeneous {}, token-budget {}",
        r.homogeneous_alerts.len(),
        r.dual_alerts.len()
    );
    Ok(())
}

fn projection_table(r: &experiments::ProjectionReport) -> Table {
    let p = &r.projection;
    let mut t = Table::new(&["", "homogeneous", "token-budget"]).titled(format!(
        "{} on {} at {} req/s, ${}/GPU-hr",
        r.model, r.gpu, p.rate, p.price_per_gpu_hour
    ));
    let m = |x: f64| format!("${:.1}M", x / 1e6);
    t.row(vec!["GPUs".into(), p.homogeneous.gpus.to_string(), p.token_budget.gpus.to_string()]);
    t.row(vec!["nodes".into(), p.homogeneous.nodes.to_string(), p.token_budget.nodes.to_string()]);
    t.row(vec!["annual cost".into(), m(p.homogeneous.annual_cost), m(p.token_budget.annual_cost)]);
    t.row(vec!["savings".into(), String::new(), format!("{} ({})", m(p.annual_savings), pct(p.savings_fraction))]);
    t.row(vec![
        "KV per token / seqs".into(),
        format!("{} B", r.kv_bytes_per_token),
        format!("{} short, {} long", r.seqs_short, r.seqs_long),
    ]);
    t
}

fn calibration_table(r: &experiments::CalibrationReport) -> Table {
    let mut t = Table::new(&["category", "true c", "c_hat", "sigma", "n", "rel err", "misroute", "static"]).titled(format!(
        "Calibration after {} responses per category; static ratio {}",
        r.observations, r.static_ratio
    ));
    for x in &r.rows {
        t.row(vec![
            x.category.clone(),
            format!("{:.2}", x.true_ratio),
            format!("{:.3}", x.c_hat),
            format!("{:.3}", x.sigma_hat),
            x.n_obs.to_string(),
            pct(x.rel_error),
            format!("{:.2}%", 100.0 * x.misroute_rate),
            format!("{:.2}%", 100.0 * x.static_misroute_rate),
        ]);
    }
    t
}

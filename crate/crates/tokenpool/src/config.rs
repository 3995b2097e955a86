//! TOML experiment files.
//!
//! Unknown keys are rejected and every error names the offending key path
//! (`pools[1].c_max`). `model` and `gpu` take either a preset name or an inline
//! table; pools may start from a preset and override single fields.

use std::fmt;
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};
use tokenpool_core::cost::RhoModel;
use tokenpool_core::estimator::EstimatorConfig;
use tokenpool_core::kv::{GpuSpec, ModelSpec, PoolConfig};
use tokenpool_core::sim::{IterationModel, PoolSpec, RoutingMode, SimConfig, Slo};
use tokenpool_core::trace::{default_categories, CategoryProfile, Trace, TraceKind, TraceSpec};

use crate::error::{Error, Result};
use crate::{io, presets};

/// The only environment variable the toolkit reads.
pub const OUTPUT_DIR_ENV: &str = "TOKENPOOL_OUTPUT_DIR";

/// A preset name or an inline definition.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Ref<T> {
    Preset(String),
    Inline(T),
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Ref<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V<T>(PhantomData<T>);
        impl<'de, T: Deserialize<'de>> Visitor<'de> for V<T> {
            type Value = Ref<T>;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a preset name or an inline table")
            }
            fn visit_str<E: de::Error>(self, s: &str) -> std::result::Result<Ref<T>, E> {
                Ok(Ref::Preset(s.to_string()))
            }
            fn visit_map<A: MapAccess<'de>>(self, m: A) -> std::result::Result<Ref<T>, A::Error> {
                T::deserialize(de::value::MapAccessDeserializer::new(m)).map(Ref::Inline)
            }
        }
        d.deserialize_any(V(PhantomData))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    pub kind: TraceKind,
    #[serde(default)]
    pub rate: f64,
    /// Give either a request count or a duration (`n = rate * duration`).
    #[serde(default)]
    pub n_requests: Option<u64>,
    #[serde(default)]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub categories: Option<Vec<CategoryProfile>>,
    /// JSONL file for `kind = "file"`, relative to the experiment file.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

impl TraceConfig {
    /// Generator spec at this config's rate.
    pub fn spec(&self) -> Result<TraceSpec> {
        self.spec_at(self.rate)
    }

    /// Generator spec at another rate, keeping the duration when one is set.
    pub fn spec_at(&self, rate: f64) -> Result<TraceSpec> {
        if self.kind == TraceKind::File {
            return Err(Error::config("trace.kind", "a file trace cannot be generated"));
        }
        let n_requests = match (self.n_requests, self.duration_s) {
            (Some(n), None) => n,
            (None, Some(d)) if d > 0.0 => (rate * d).round() as u64,
            (None, Some(d)) => return Err(Error::config("trace.duration_s", format!("must be > 0, got {d}"))),
            _ => {
                return Err(Error::config(
                    "trace",
                    "set exactly one of n_requests and duration_s",
                ))
            }
        };
        let spec = TraceSpec {
            kind: self.kind,
            rate,
            n_requests,
            seed: self.seed,
            categories: self.categories.clone().unwrap_or_else(default_categories),
        };
        spec.validate().map_err(|v| Error::config("trace", v.join("; ")))?;
        Ok(spec)
    }

    pub fn load(&self, base: &Path) -> Result<Trace> {
        if self.kind != TraceKind::File {
            return Ok(tokenpool_core::trace::generate(&self.spec()?)?);
        }
        let Some(p) = &self.path else {
            return Err(Error::config("trace.path", "required when kind = \"file\""));
        };
        Ok(io::load_trace(&base.join(p))?.trace)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingConfig {
    #[serde(default = "default_mode")]
    pub mode: RoutingMode,
    #[serde(default = "default_b_short")]
    pub b_short: u64,
    #[serde(default = "yes")]
    pub spillover: bool,
    #[serde(default)]
    pub overload_queue_threshold: Option<u64>,
}

fn default_mode() -> RoutingMode {
    RoutingMode::TokenBudget
}

fn default_b_short() -> u64 {
    8_192
}

fn yes() -> bool {
    true
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            mode: default_mode(),
            b_short: default_b_short(),
            spillover: true,
            overload_queue_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorConfig {
    #[serde(default = "default_block_tokens")]
    pub block_tokens: u64,
    #[serde(default)]
    pub kv_capacity_tokens_per_instance: Option<u64>,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default)]
    pub max_sim_time_s: Option<f64>,
    /// Also write a per-request JSONL event log.
    #[serde(default)]
    pub event_log: bool,
    #[serde(default)]
    pub iteration_model: IterationModel,
}

fn default_block_tokens() -> u64 {
    16
}

fn default_warmup() -> f64 {
    0.1
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            block_tokens: default_block_tokens(),
            kv_capacity_tokens_per_instance: None,
            warmup_fraction: default_warmup(),
            max_sim_time_s: None,
            event_log: false,
            iteration_model: IterationModel::default(),
        }
    }
}

/// A pool: optionally a preset, with any field overridden.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolEntry {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub pool_id: Option<String>,
    #[serde(default)]
    pub c_max: Option<u64>,
    #[serde(default)]
    pub n_seq_cap: Option<u64>,
    #[serde(default)]
    pub batch_token_budget: Option<u64>,
    #[serde(default)]
    pub throughput_per_instance: Option<f64>,
    /// Fixed size, or the starting guess of a fleet search.
    #[serde(default)]
    pub instances: Option<u64>,
    #[serde(default)]
    pub kv_capacity_tokens: Option<u64>,
    #[serde(default)]
    pub iteration_model: Option<IterationModel>,
}

impl PoolEntry {
    pub fn preset(name: &str) -> Self {
        PoolEntry {
            preset: Some(name.into()),
            ..Default::default()
        }
    }

    pub fn resolve(&self, at: &str) -> Result<PoolConfig> {
        let base = match &self.preset {
            Some(p) => Some(presets::pool(p).ok_or_else(|| {
                Error::config(
                    format!("{at}.preset"),
                    format!("unknown pool preset `{p}` (known: {})", presets::POOLS.join(", ")),
                )
            })?),
            None => None,
        };
        let need = |field: &str| Error::config(format!("{at}.{field}"), "missing (no preset to inherit from)");
        let cfg = PoolConfig {
            pool_id: match (&self.pool_id, &base) {
                (Some(id), _) => id.clone(),
                (None, Some(b)) => b.pool_id.clone(),
                (None, None) => return Err(need("pool_id")),
            },
            c_max: self.c_max.or(base.as_ref().map(|b| b.c_max)).ok_or_else(|| need("c_max"))?,
            n_seq_cap: self
                .n_seq_cap
                .or(base.as_ref().map(|b| b.n_seq_cap))
                .ok_or_else(|| need("n_seq_cap"))?,
            batch_token_budget: self
                .batch_token_budget
                .or(base.as_ref().map(|b| b.batch_token_budget))
                .ok_or_else(|| need("batch_token_budget"))?,
            throughput_per_instance: self
                .throughput_per_instance
                .or(base.as_ref().map(|b| b.throughput_per_instance))
                .ok_or_else(|| need("throughput_per_instance"))?,
        };
        cfg.validate().map_err(|v| Error::config(at, v.join("; ")))?;
        Ok(cfg)
    }

    fn spec(&self, at: &str, instances: u64) -> Result<PoolSpec> {
        Ok(PoolSpec {
            config: self.resolve(at)?,
            instance_count: instances,
            iteration_model: self.iteration_model,
            kv_capacity_tokens: self.kv_capacity_tokens,
        })
    }
}

/// Fleet search: size every pool to the smallest count meeting the SLO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default)]
    pub slo: Slo,
    #[serde(default = "default_ceiling")]
    pub ceiling: u64,
}

fn default_ceiling() -> u64 {
    4_096
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            slo: Slo::default(),
            ceiling: default_ceiling(),
        }
    }
}

/// Searched fleets at several arrival rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SavingsConfig {
    pub rates: Vec<f64>,
}

/// Both fleets sized to a target utilisation, then compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReliabilityConfig {
    #[serde(default = "default_util")]
    pub utilization: f64,
    /// Requests per pool share used to measure saturated throughput.
    #[serde(default = "default_sample")]
    pub sample: usize,
}

fn default_util() -> f64 {
    0.9
}

fn default_sample() -> usize {
    4_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub thresholds: Vec<u64>,
    #[serde(default = "yes")]
    pub simulate: bool,
    #[serde(default)]
    pub rho_model: RhoModel,
    /// KV tokens per short instance; seats are `kv_tokens / threshold`.
    #[serde(default = "default_kv_tokens")]
    pub kv_tokens: u64,
    #[serde(default = "default_max_seqs")]
    pub max_seqs: u64,
}

fn default_kv_tokens() -> u64 {
    1_048_576
}

fn default_max_seqs() -> u64 {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    #[serde(default = "default_observations")]
    pub observations: usize,
    /// The global fixed ratio compared against.
    #[serde(default = "default_static_ratio")]
    pub static_ratio: f64,
}

fn default_observations() -> usize {
    50
}

fn default_static_ratio() -> f64 {
    4.0
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            observations: default_observations(),
            static_ratio: default_static_ratio(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    pub rate: f64,
    pub alpha: f64,
    pub price_per_gpu_hour: f64,
    #[serde(default = "default_gpus_per_node")]
    pub gpus_per_node: u64,
    /// Measured long-pool throughput per GPU; the short pool's follows from
    /// the KV concurrency ratio.
    pub mu_long: f64,
    pub short_c_max: u64,
    pub long_c_max: u64,
}

fn default_gpus_per_node() -> u64 {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<Ref<ModelSpec>>,
    #[serde(default)]
    pub gpu: Option<Ref<GpuSpec>>,
    #[serde(default)]
    pub trace: Option<TraceConfig>,
    #[serde(default)]
    pub routing: RoutingConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub simulator: SimulatorConfig,
    #[serde(default)]
    pub pools: Vec<PoolEntry>,
    /// Homogeneous fleet for `--baseline` and savings figures.
    #[serde(default)]
    pub baseline: Option<PoolEntry>,
    #[serde(default)]
    pub search: Option<SearchConfig>,
    #[serde(default)]
    pub savings: Option<SavingsConfig>,
    #[serde(default)]
    pub reliability: Option<ReliabilityConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub calibration: Option<CalibrationConfig>,
    #[serde(default)]
    pub projection: Option<ProjectionConfig>,
}

/// An experiment plus where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub config: ExperimentConfig,
    /// Directory relative paths inside the file resolve against.
    pub base_dir: PathBuf,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| syntax(text, origin, &e))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let at = e.path().to_string();
            let inner = e.into_inner();
            let line = inner.span().map(|s| format!(" (line {})", line_of(text, s.start))).unwrap_or_default();
            Error::config(format!("{origin}: {at}"), format!("{}{line}", inner.message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field checks that do not need a simulation config.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::config("name", "must not be empty"));
        }
        if let Some(t) = &self.trace {
            if t.kind == TraceKind::File && t.path.is_none() {
                return Err(Error::config("trace.path", "required when kind = \"file\""));
            }
            if t.kind != TraceKind::File {
                t.spec()?;
            }
        }
        self.estimator
            .validate()
            .map_err(|v| Error::config("estimator", v.join("; ")))?;
        if let Some(s) = &self.sweep {
            if s.thresholds.is_empty() || s.thresholds.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config("sweep.thresholds", "must be non-empty and strictly ascending"));
            }
            s.rho_model.validate().map_err(|e| Error::config("sweep.rho_model", e.to_string()))?;
        }
        if let Some(s) = &self.savings {
            if s.rates.is_empty() || s.rates.iter().any(|r| !(*r > 0.0)) {
                return Err(Error::config("savings.rates", "must be non-empty and positive"));
            }
        }
        if let Some(r) = &self.reliability {
            if !(r.utilization > 0.0 && r.utilization <= 1.0) {
                return Err(Error::config("reliability.utilization", "must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<Option<ModelSpec>> {
        let m = match &self.model {
            None => return Ok(None),
            Some(Ref::Inline(m)) => m.clone(),
            Some(Ref::Preset(p)) => ModelSpec::preset(p).ok_or_else(|| {
                Error::config("model", format!("unknown model preset `{p}` (known: {})", presets::MODELS.join(", ")))
            })?,
        };
        m.validate().map_err(|v| Error::config("model", v.join("; ")))?;
        Ok(Some(m))
    }

    pub fn gpu(&self) -> Result<Option<GpuSpec>> {
        let g = match &self.gpu {
            None => return Ok(None),
            Some(Ref::Inline(g)) => g.clone(),
            Some(Ref::Preset(p)) => GpuSpec::preset(p).ok_or_else(|| {
                Error::config("gpu", format!("unknown GPU preset `{p}` (known: {})", presets::GPUS.join(", ")))
            })?,
        };
        g.validate().map_err(|v| Error::config("gpu", v.join("; ")))?;
        Ok(Some(g))
    }

    pub fn trace_config(&self) -> Result<&TraceConfig> {
        self.trace.as_ref().ok_or_else(|| Error::config("trace", "missing section"))
    }

    fn base_sim(&self) -> SimConfig {
        let s = &self.simulator;
        SimConfig {
            pools: Vec::new(),
            routing: self.routing.mode,
            b_short: self.routing.b_short,
            spillover_enabled: self.routing.spillover,
            overload_queue_threshold: self.routing.overload_queue_threshold,
            estimator: self.estimator,
            iteration_model: s.iteration_model,
            block_tokens: s.block_tokens,
            kv_capacity_tokens_per_instance: s.kv_capacity_tokens_per_instance,
            seed: self.trace.as_ref().map_or(0, |t| t.seed),
            warmup_fraction: s.warmup_fraction,
            record_events: s.event_log,
            max_sim_time_s: s.max_sim_time_s,
        }
    }

    fn checked(cfg: SimConfig) -> Result<SimConfig> {
        cfg.validate().map_err(tokenpool_core::Error::Config)?;
        Ok(cfg)
    }

    /// The fleet under test. `counts` overrides the configured instance counts.
    pub fn sim_config(&self, counts: Option<&[u64]>) -> Result<SimConfig> {
        if self.pools.is_empty() {
            return Err(Error::config("pools", "no pools configured"));
        }
        let mut cfg = self.base_sim();
        for (i, p) in self.pools.iter().enumerate() {
            let at = format!("pools[{i}]");
            let n = match counts {
                Some(c) => *c.get(i).ok_or_else(|| Error::config(&at, "no instance count given"))?,
                None => p
                    .instances
                    .ok_or_else(|| Error::config(format!("{at}.instances"), "missing"))?,
            };
            cfg.pools.push(p.spec(&at, n)?);
        }
        Self::checked(cfg)
    }

    /// The homogeneous comparison fleet (defaults to the 65K preset).
    pub fn baseline_config(&self, instances: Option<u64>) -> Result<SimConfig> {
        let entry = self
            .baseline
            .clone()
            .unwrap_or_else(|| PoolEntry::preset("homogeneous-65k"));
        let n = instances
            .or(entry.instances)
            .ok_or_else(|| Error::config("baseline.instances", "missing"))?;
        let mut cfg = self.base_sim();
        cfg.routing = RoutingMode::RoundRobinHomogeneous;
        cfg.spillover_enabled = false;
        cfg.b_short = 0;
        cfg.pools.push(entry.spec("baseline", n)?);
        Self::checked(cfg)
    }

    /// Where outputs go: the environment override, else `output_dir`, else
    /// `out/<name>`.
    pub fn output_dir(&self) -> PathBuf {
        if let Some(d) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
            return PathBuf::from(d);
        }
        self.output_dir
            .clone()
            .unwrap_or_else(|| Path::new("out").join(&self.name))
    }
}

fn syntax(text: &str, origin: &str, e: &toml::de::Error) -> Error {
    let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(0);
    Error::config(format!("{origin}:{line}"), e.message().to_string())
}

impl Experiment {
    /// A file on disk, or else a bundled preset of that name.
    pub fn load(name_or_path: &str) -> Result<Self> {
        let path = Path::new(name_or_path);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let config = ExperimentConfig::from_toml(&text, &path.display().to_string())?;
            let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            return Ok(Experiment { config, base_dir });
        }
        match presets::experiment(name_or_path) {
            Some(text) => Ok(Experiment {
                config: ExperimentConfig::from_toml(text, name_or_path)?,
                base_dir: PathBuf::from("."),
            }),
            None => Err(Error::config(
                name_or_path,
                format!(
                    "no such file and no bundled experiment of that name (bundled: {})",
                    presets::EXPERIMENTS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
                ),
            )),
        }
    }

    pub fn trace(&self) -> Result<Trace> {
        self.config.trace_config()?.load(&self.base_dir)
    }
}

use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core models and the simulator.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("degenerate throughput ratio (rho = {0})")]
    DegenerateRatio(f64),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must lie in [0, 1], got {value}")]
    OutOfUnitRange { name: &'static str, value: f64 },
    #[error("empty trace")]
    EmptyTrace,
    #[error("empty sample set")]
    EmptySamples,
    #[error("percentile rank must lie in (0, 1], got {0}")]
    InvalidPercentile(f64),
    #[error("thresholds must be non-empty and strictly ascending")]
    BadThresholds,
    #[error("invalid usage feedback: prompt_tokens = 0")]
    InvalidUsageFeedback,
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("calibration target {target} req/s unreachable; achievable range is [{min:.4}, {max:.4}] req/s")]
    Calibration { target: f64, min: f64, max: f64 },
    #[error("SLO unmeetable for pool `{pool}` at the search ceiling of {ceiling} instances: {metric}")]
    SloUnmeetable {
        pool: String,
        ceiling: u64,
        metric: String,
    },
    #[error("mismatched run metadata: {0}")]
    Mismatch(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(alloc::vec![msg.into()])
    }
}

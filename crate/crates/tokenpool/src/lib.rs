//! File formats, experiment configuration, experiment drivers and reports
//! around [`tokenpool_core`].

pub mod config;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod io;
pub mod presets;
pub mod report;

pub use error::{Error, Result};
pub use tokenpool_core as core;

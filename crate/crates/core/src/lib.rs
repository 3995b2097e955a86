//! Token-budget pool routing for LLM serving fleets.
//!
//! The crate is `no_std` (it needs `alloc`). It holds the closed-form KV-memory
//! and cost models, the self-calibrating token estimator, the two-pool router,
//! synthetic trace generation and a deterministic iteration-level fleet
//! simulator. File formats, configuration and the CLI live in the `tokenpool`
//! crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod cost;
pub mod error;
pub mod estimator;
pub mod kv;
mod math;
pub mod metrics;
pub mod router;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};

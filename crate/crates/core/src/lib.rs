//! Deterministic reward, curriculum and evaluation engine for three-class
//! stock movement prediction (up / hold / down).
//!
//! The crate is organised by pipeline stage:
//!
//! * [`labeling`] turns OHLCV bars into labelled samples and dataset splits.
//! * [`parsing`] extracts structured predictions from raw model responses.
//! * [`reward`] grades responses against ground truth.
//! * [`grpo`] holds the group-relative policy optimisation kernels.
//! * [`curriculum`] bins samples by rollout difficulty.
//! * [`eval`] does majority voting and F1 evaluation.
//! * [`api`] defines the JSON wire types shared by the service and its clients.
//!
//! Everything here is a pure function over its inputs; randomness is always
//! driven by an explicit seed.

pub mod api;
pub mod config;
pub mod curriculum;
mod error;
pub mod eval;
pub mod grpo;
pub mod io;
pub mod label;
pub mod labeling;
pub mod parsing;
pub mod reward;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use label::MovementLabel;

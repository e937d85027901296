//! Directional filtering of compact-array recordings with user-defined
//! directivity patterns.
//!
//! The crate covers the full offline pipeline: analytic pattern design and
//! training-pattern recipes ([`pattern`]), anechoic array simulation
//! ([`scene`]), STFT framing ([`stft`]), pattern-conditioned mask networks
//! with hand-written backpropagation ([`nn`]), an oracle-DOA parametric
//! baseline ([`baseline`]), and evaluation metrics ([`metrics`]).

pub mod baseline;
pub mod config;
pub mod dataset;
pub mod delay;
pub mod error;
pub mod eval;
pub mod exec;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod pattern;
pub mod scene;
pub mod sources;
pub mod stft;
pub mod timeline;
pub mod wav;

pub use error::{Error, Result};
pub use exec::Execution;

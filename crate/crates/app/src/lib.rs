//! Command-line tools and the HTTP service for directional filtering with
//! user-defined directivity patterns.

pub mod cli;
pub mod service;

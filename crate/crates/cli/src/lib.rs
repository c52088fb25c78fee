//! Command-line tools and HTTP service around `fegan-core`.

pub mod api;
pub mod cli;
pub mod service;

pub use fegan_core as core;

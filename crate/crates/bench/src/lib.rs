//! Benchmarks live in `benches/`; run them with `cargo bench -p fegan-bench`.

pub use fegan_core as core;

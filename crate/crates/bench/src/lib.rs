//! Benchmarks live in `benches/`; run them with `cargo bench -p scsurf-bench`.

pub use scsurf_core as core;

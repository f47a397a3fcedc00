//! Criterion benchmarks of the core kernels; see `benches/kernels.rs`.

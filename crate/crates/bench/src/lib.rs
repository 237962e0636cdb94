//! Criterion benchmarks for strainlab; see `benches/kernels.rs`.

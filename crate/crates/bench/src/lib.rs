//! Criterion benchmarks for the attention and adapter kernels; see `benches/`.

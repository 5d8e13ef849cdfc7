//! Criterion benchmarks for preprocessing, metrics and the generator; see `benches/`.

//! Criterion benchmarks for shot-core live under `benches/`.

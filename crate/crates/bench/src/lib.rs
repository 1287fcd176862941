//! Criterion benchmarks for `ia1-core` live under `benches/`.

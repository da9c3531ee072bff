//! Criterion benchmarks for the solver and the path simulator live in `benches/`.

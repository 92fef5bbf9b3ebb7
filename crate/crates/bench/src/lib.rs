//! Criterion benchmarks for the estimators; see `benches/solvers.rs`.

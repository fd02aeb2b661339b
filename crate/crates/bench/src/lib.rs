//! Criterion benchmarks for the operators and the score network live in
//! `benches/`.

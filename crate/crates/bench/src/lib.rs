//! Criterion benchmarks for the vaxledger core; see `benches/`.

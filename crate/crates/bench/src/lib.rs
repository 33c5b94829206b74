//! Benchmarks for the fitting and simulation hot paths; see `benches/`.

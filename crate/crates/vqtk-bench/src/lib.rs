//! Benchmarks only; see the `benches` directory.

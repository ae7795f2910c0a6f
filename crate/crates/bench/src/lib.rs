//! Benchmarks only; see `benches/hot_paths.rs`. Run with
//! `cargo bench -p semswarm-bench`.

//! Benchmark harness for the stitchqm kernels; see `benches/kernels.rs`.
pub use stitchqm::*;

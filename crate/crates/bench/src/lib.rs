//! Criterion benchmarks for the dilseg toolkit; see `benches/throughput.rs`.
//!
//! - `forward_128`: one inference pass of each model at default width.
//! - `conv_16ch_64px`: dilated 3x3 convolution against the dense kernel
//!   covering the same receptive field.
//! - `msd_82px`: mean symmetric distance between two output-sized contours.
//!
//! Run with `cargo bench -p dilseg-bench`.

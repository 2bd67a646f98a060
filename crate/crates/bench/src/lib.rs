//! Benchmark-only crate; see `benches/forward.rs`. Shared setup helpers
//! live here so the bench file stays readable.

use softmoe_core::layer::SoftMoELayer;
use softmoe_core::tensor::{sample_gaussian, Matrix, RngStream};

/// A layer stack plus matching random inputs for timing runs.
pub fn stack(
    layers: usize,
    d: usize,
    n: usize,
    hidden_budget: usize,
    tokens: usize,
    batch: usize,
) -> (Vec<SoftMoELayer>, Vec<Matrix>) {
    let mut stream = RngStream::new(0, "bench-init");
    let stack = (0..layers)
        .map(|_| SoftMoELayer::init(d, n, hidden_budget, &mut stream).unwrap())
        .collect();
    let inputs = (0..batch)
        .map(|_| sample_gaussian(&mut stream, tokens, d, 0.0, 1.0).unwrap())
        .collect();
    (stack, inputs)
}

//! Criterion benchmarks for the solver, adjoint and training hot paths.
//! The benches live in `benches/`; this library only hosts shared fixtures.

use odeflow_core::{generate_dataset, Dataset, Linear1D};

/// Standard scalar dataset: `a* = -1`, `t = 1`, `sigma2 = 1`.
pub fn standard_dataset(n: usize) -> Dataset {
    generate_dataset(&Linear1D, &[-1.0], n, 1.0, 1.0, 7).expect("finite dataset")
}

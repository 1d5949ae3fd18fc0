//! Neural-ODE training toolkit: fixed-step integration, adjoint gradients,
//! forward sensitivities, closed-form references for the scalar linear
//! problem, and the optimizers and training loop that use them.

// Negated comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod error;
pub mod ode;
pub mod optim;
pub mod oracle;
pub mod trainer;

pub use adjoint::{
    adjoint_gradient, adjoint_gradient_batch, empirical_fisher, forward_sensitivity,
    forward_sensitivity_batch, AugmentedState, BatchGradients, GradientResult,
};
pub use error::{Error, Result};
pub use nalgebra::DMatrix;
pub use ode::{
    flow_endpoint, integrate, DenseLinear, DiagonalLinear, DynamicsModel, IntegratorConfig,
    Linear1D, Method, TanhLayer, Trajectory,
};
pub use optim::{OptimizerKind, OptimizerState, StepContext};
pub use oracle::Linear1DProblem;
pub use trainer::{
    generate_dataset, train, train_epoch, Dataset, TrainConfig, TrainRecord, TrainRun,
};

//! Fixed-step integration of autonomous parameterized ODEs and the
//! dynamics-model abstraction the gradient and training code build on.

mod model;
mod solver;

pub use model::{DenseLinear, DiagonalLinear, DynamicsModel, Linear1D, TanhLayer};
pub use solver::{
    flow_endpoint, integrate, solve, IntegratorConfig, Method, Trajectory, VectorField,
};

pub(crate) use solver::BatchFlow;

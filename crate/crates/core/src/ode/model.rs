use nalgebra::DMatrix;

/// A parameterized autonomous vector field `dx/dt = f(x; theta)` with
/// analytic Jacobians.
///
/// The product methods have default implementations built on the dense
/// Jacobians; models override them when a cheaper closed form exists, since
/// the adjoint and sensitivity solvers call them at every stage of every step.
pub trait DynamicsModel: Send + Sync {
    fn state_dim(&self) -> usize;

    fn param_count(&self) -> usize;

    /// Writes `f(x; theta)` into `out` (length `state_dim`).
    fn eval(&self, x: &[f64], theta: &[f64], out: &mut [f64]);

    /// `df/dx`, `state_dim × state_dim`.
    fn jac_state(&self, x: &[f64], theta: &[f64]) -> DMatrix<f64>;

    /// `df/dtheta`, `state_dim × param_count`.
    fn jac_param(&self, x: &[f64], theta: &[f64]) -> DMatrix<f64>;

    /// `out = (df/dx)^T y`
    fn vjp_state(&self, x: &[f64], theta: &[f64], y: &[f64], out: &mut [f64]) {
        let jac = self.jac_state(x, theta);
        for (i, o) in out.iter_mut().enumerate() {
            *o = jac.column(i).iter().zip(y).map(|(j, y)| j * y).sum();
        }
    }

    /// `out = y^T (df/dtheta)`
    fn vjp_param(&self, x: &[f64], theta: &[f64], y: &[f64], out: &mut [f64]) {
        let jac = self.jac_param(x, theta);
        for (j, o) in out.iter_mut().enumerate() {
            *o = jac.column(j).iter().zip(y).map(|(j, y)| j * y).sum();
        }
    }

    /// `out = (df/dx) v`
    fn jvp_state(&self, x: &[f64], theta: &[f64], v: &[f64], out: &mut [f64]) {
        let jac = self.jac_state(x, theta);
        for (i, o) in out.iter_mut().enumerate() {
            *o = jac.row(i).iter().zip(v).map(|(j, v)| j * v).sum();
        }
    }

    /// Writes `df/dtheta` column-major into `out` (`out[j * state_dim + i]`).
    fn jac_param_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.jac_param(x, theta).as_slice());
    }

    /// Closed-form flow `phi^t(x0)`, for models that have one.
    fn exact_flow(&self, _x0: &[f64], _theta: &[f64], _t: f64) -> Option<Vec<f64>> {
        None
    }
}

/// Scalar linear growth `dx/dt = a x`, with `theta = [a]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Linear1D;

impl DynamicsModel for Linear1D {
    fn state_dim(&self) -> usize {
        1
    }

    fn param_count(&self) -> usize {
        1
    }

    #[inline]
    fn eval(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        out[0] = theta[0] * x[0];
    }

    fn jac_state(&self, _x: &[f64], theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, theta[0])
    }

    fn jac_param(&self, x: &[f64], _theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x[0])
    }

    #[inline]
    fn vjp_state(&self, _x: &[f64], theta: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = theta[0] * y[0];
    }

    #[inline]
    fn vjp_param(&self, x: &[f64], _theta: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = y[0] * x[0];
    }

    #[inline]
    fn jvp_state(&self, _x: &[f64], theta: &[f64], v: &[f64], out: &mut [f64]) {
        out[0] = theta[0] * v[0];
    }

    #[inline]
    fn jac_param_into(&self, x: &[f64], _theta: &[f64], out: &mut [f64]) {
        out[0] = x[0];
    }

    fn exact_flow(&self, x0: &[f64], theta: &[f64], t: f64) -> Option<Vec<f64>> {
        Some(vec![(theta[0] * t).exp() * x0[0]])
    }
}

/// Decoupled linear system `dx_i/dt = a_i x_i`, with `theta = [a_1, .., a_n]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiagonalLinear {
    pub dim: usize,
}

impl DiagonalLinear {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "state dimension must be at least 1");
        Self { dim }
    }
}

impl DynamicsModel for DiagonalLinear {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn param_count(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        for ((o, a), x) in out.iter_mut().zip(theta).zip(x) {
            *o = a * x;
        }
    }

    fn jac_state(&self, _x: &[f64], theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(theta))
    }

    fn jac_param(&self, x: &[f64], _theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(x))
    }

    fn vjp_state(&self, _x: &[f64], theta: &[f64], y: &[f64], out: &mut [f64]) {
        for ((o, a), y) in out.iter_mut().zip(theta).zip(y) {
            *o = a * y;
        }
    }

    fn vjp_param(&self, x: &[f64], _theta: &[f64], y: &[f64], out: &mut [f64]) {
        for ((o, x), y) in out.iter_mut().zip(x).zip(y) {
            *o = y * x;
        }
    }

    fn jvp_state(&self, x: &[f64], theta: &[f64], v: &[f64], out: &mut [f64]) {
        self.vjp_state(x, theta, v, out);
    }

    fn exact_flow(&self, x0: &[f64], theta: &[f64], t: f64) -> Option<Vec<f64>> {
        Some(
            x0.iter()
                .zip(theta)
                .map(|(x, a)| (a * t).exp() * x)
                .collect(),
        )
    }
}

/// Full linear system `dx/dt = A x`, with `theta` holding `A` row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseLinear {
    pub dim: usize,
}

impl DenseLinear {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "state dimension must be at least 1");
        Self { dim }
    }
}

impl DynamicsModel for DenseLinear {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn param_count(&self) -> usize {
        self.dim * self.dim
    }

    fn eval(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(theta.chunks_exact(self.dim)) {
            *o = row.iter().zip(x).map(|(a, x)| a * x).sum();
        }
    }

    fn jac_state(&self, _x: &[f64], theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, theta)
    }

    fn jac_param(&self, x: &[f64], _theta: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        let mut jac = DMatrix::zeros(n, n * n);
        for i in 0..n {
            for k in 0..n {
                jac[(i, i * n + k)] = x[k];
            }
        }
        jac
    }

    fn vjp_param(&self, x: &[f64], _theta: &[f64], y: &[f64], out: &mut [f64]) {
        for (row, y) in out.chunks_exact_mut(self.dim).zip(y) {
            for (o, x) in row.iter_mut().zip(x) {
                *o = y * x;
            }
        }
    }
}

/// Single-layer nonlinear field `dx/dt = tanh(W x + b)`.
///
/// `theta` holds `W` row-major followed by `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TanhLayer {
    pub dim: usize,
}

impl TanhLayer {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "state dimension must be at least 1");
        Self { dim }
    }

    fn pre_activation(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let (w, b) = theta.split_at(n * n);
        w.chunks_exact(n)
            .zip(b)
            .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    /// `1 - tanh(u)^2` per output.
    fn slopes(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        self.pre_activation(x, theta)
            .into_iter()
            .map(|u| {
                let th = u.tanh();
                1.0 - th * th
            })
            .collect()
    }
}

impl DynamicsModel for TanhLayer {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn param_count(&self) -> usize {
        self.dim * self.dim + self.dim
    }

    fn eval(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        for (o, u) in out.iter_mut().zip(self.pre_activation(x, theta)) {
            *o = u.tanh();
        }
    }

    fn jac_state(&self, x: &[f64], theta: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        let d = self.slopes(x, theta);
        DMatrix::from_fn(n, n, |i, k| d[i] * theta[i * n + k])
    }

    fn jac_param(&self, x: &[f64], theta: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        let d = self.slopes(x, theta);
        let mut jac = DMatrix::zeros(n, n * n + n);
        for i in 0..n {
            for k in 0..n {
                jac[(i, i * n + k)] = d[i] * x[k];
            }
            jac[(i, n * n + i)] = d[i];
        }
        jac
    }
}

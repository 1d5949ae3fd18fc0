//! Terminal-loss gradients by the reverse-time adjoint system, and forward
//! sensitivities for the empirical Fisher matrix.
//!
//! Both solvers work on batches: a batch of samples is stacked sample-major
//! into one flat state and advanced with a single step schedule. Each sample's
//! arithmetic is identical to a batch of one, so batched and single-sample
//! results agree bit for bit.

use std::cell::RefCell;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{ensure_dim, Error, Result};
use crate::ode::{solve, BatchFlow, DynamicsModel, IntegratorConfig, VectorField};

/// Samples per batched solve.
pub(crate) const CHUNK: usize = 128;

/// State of the reverse-time adjoint system: the trajectory state `x`, the
/// adjoint `y = dL/dx`, and the running parameter-gradient integral `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl AugmentedState {
    /// Initial condition at the terminal time: `y = x_t - x_t*`, `z = 0`.
    pub fn at_terminal(x_t: &[f64], x_t_star: &[f64], param_count: usize) -> Self {
        Self {
            x: x_t.to_vec(),
            y: x_t.iter().zip(x_t_star).map(|(x, s)| x - s).collect(),
            z: vec![0.0; param_count],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientResult {
    pub grad: Vec<f64>,
    /// `0.5 * |x_t - x_t*|^2`
    pub loss: f64,
    /// Predicted terminal state.
    pub x_t: Vec<f64>,
}

/// Per-sample adjoint outputs for a batch, stored flat and sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    pub state_dim: usize,
    pub param_count: usize,
    pub grads: Vec<f64>,
    pub losses: Vec<f64>,
    pub terminal: Vec<f64>,
}

impl BatchGradients {
    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn grad(&self, i: usize) -> &[f64] {
        &self.grads[i * self.param_count..(i + 1) * self.param_count]
    }

    pub fn x_t(&self, i: usize) -> &[f64] {
        &self.terminal[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn sample(&self, i: usize) -> GradientResult {
        GradientResult {
            grad: self.grad(i).to_vec(),
            loss: self.losses[i],
            x_t: self.x_t(i).to_vec(),
        }
    }
}

/// Reverse-time adjoint dynamics for a stacked batch, laid out as
/// `[x (B*n) | y (B*n) | z (B*p)]`. Integrated from `t` down to `0`:
/// `dx = f(x)`, `dy = -(df/dx)^T y`, `dz = -y^T df/dtheta`.
struct AdjointField<'a, M: ?Sized> {
    model: &'a M,
    theta: &'a [f64],
    batch: usize,
}

impl<M: DynamicsModel + ?Sized> VectorField for AdjointField<'_, M> {
    fn dim(&self) -> usize {
        self.batch * (2 * self.model.state_dim() + self.model.param_count())
    }

    fn rhs(&self, state: &[f64], out: &mut [f64]) {
        let n = self.model.state_dim();
        let p = self.model.param_count();
        let b = self.batch;
        let (xs, rest) = state.split_at(b * n);
        let (ys, _) = rest.split_at(b * n);
        let (dx, rest) = out.split_at_mut(b * n);
        let (dy, dz) = rest.split_at_mut(b * n);
        let samples = xs
            .chunks_exact(n)
            .zip(ys.chunks_exact(n))
            .zip(dx.chunks_exact_mut(n))
            .zip(dy.chunks_exact_mut(n))
            .zip(dz.chunks_exact_mut(p));
        for ((((x, y), dx), dy), dz) in samples {
            self.model.eval(x, self.theta, dx);
            self.model.vjp_state(x, self.theta, y, dy);
            self.model.vjp_param(x, self.theta, y, dz);
        }
        dy.iter_mut().chain(dz.iter_mut()).for_each(|v| *v = -*v);
    }
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveTime(t))
    }
}

/// Adjoint gradients for a batch of `(x0, x_t*)` pairs given as flat,
/// sample-major slices.
///
/// The forward pass supplies each `x_t`; the backward pass carries `x` along
/// with the adjoint instead of replaying stored checkpoints.
pub fn adjoint_gradient_batch<M: DynamicsModel + ?Sized>(
    model: &M,
    theta: &[f64],
    x0s: &[f64],
    targets: &[f64],
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<BatchGradients> {
    check_time(t)?;
    let n = model.state_dim();
    let p = model.param_count();
    ensure_dim("parameters", p, theta.len())?;
    ensure_dim("targets", x0s.len(), targets.len())?;
    if !x0s.len().is_multiple_of(n) {
        return Err(Error::DimensionMismatch {
            what: "stacked initial states",
            expected: n * (x0s.len() / n + 1),
            actual: x0s.len(),
        });
    }
    let batch = x0s.len() / n;

    let mut terminal = x0s.to_vec();
    solve(
        &BatchFlow {
            model,
            theta,
            batch,
        },
        &mut terminal,
        0.0,
        t,
        cfg,
        |_, _| {},
    )?;

    let mut aug = vec![0.0; batch * (2 * n + p)];
    aug[..batch * n].copy_from_slice(&terminal);
    let mut losses = Vec::with_capacity(batch);
    {
        let adj = &mut aug[batch * n..2 * batch * n];
        for i in 0..batch {
            let mut sq = 0.0;
            for k in i * n..(i + 1) * n {
                let r = terminal[k] - targets[k];
                adj[k] = r;
                sq += r * r;
            }
            losses.push(0.5 * sq);
        }
    }
    solve(
        &AdjointField {
            model,
            theta,
            batch,
        },
        &mut aug,
        t,
        0.0,
        cfg,
        |_, _| {},
    )?;

    Ok(BatchGradients {
        state_dim: n,
        param_count: p,
        grads: aug.split_off(2 * batch * n),
        losses,
        terminal,
    })
}

/// Gradient of `0.5 * |phi^t(x0) - x_t*|^2` with respect to `theta`.
pub fn adjoint_gradient<M: DynamicsModel + ?Sized>(
    model: &M,
    theta: &[f64],
    x0: &[f64],
    x_t_star: &[f64],
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<GradientResult> {
    ensure_dim("initial state", model.state_dim(), x0.len())?;
    ensure_dim("target state", model.state_dim(), x_t_star.len())?;
    Ok(adjoint_gradient_batch(model, theta, x0, x_t_star, t, cfg)?.sample(0))
}

/// Variational system for a stacked batch, laid out as
/// `[x (B*n) | S (B*n*p)]` with each sample's `S` column-major:
/// `dS = (df/dx) S + df/dtheta`, `S(0) = 0`.
struct SensitivityField<'a, M: ?Sized> {
    model: &'a M,
    theta: &'a [f64],
    batch: usize,
    scratch: RefCell<Vec<f64>>,
}

impl<M: DynamicsModel + ?Sized> VectorField for SensitivityField<'_, M> {
    fn dim(&self) -> usize {
        self.batch * self.model.state_dim() * (1 + self.model.param_count())
    }

    fn rhs(&self, state: &[f64], out: &mut [f64]) {
        let n = self.model.state_dim();
        let p = self.model.param_count();
        let b = self.batch;
        let (xs, ss) = state.split_at(b * n);
        let (dx, ds) = out.split_at_mut(b * n);
        let mut jp = self.scratch.borrow_mut();
        for i in 0..b {
            let x = &xs[i * n..(i + 1) * n];
            self.model.eval(x, self.theta, &mut dx[i * n..(i + 1) * n]);
            self.model.jac_param_into(x, self.theta, &mut jp);
            let s = &ss[i * n * p..(i + 1) * n * p];
            let d = &mut ds[i * n * p..(i + 1) * n * p];
            for j in 0..p {
                let col = j * n..(j + 1) * n;
                self.model
                    .jvp_state(x, self.theta, &s[col.clone()], &mut d[col.clone()]);
                for (d, f) in d[col.clone()].iter_mut().zip(&jp[col]) {
                    *d += f;
                }
            }
        }
    }
}

/// Sensitivities `d phi^t(x0) / d theta` for a stacked batch, returned flat
/// with each sample's `n × p` block column-major.
pub fn forward_sensitivity_batch<M: DynamicsModel + ?Sized>(
    model: &M,
    theta: &[f64],
    x0s: &[f64],
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sensitivity time must be non-negative, got {t}"
        )));
    }
    let n = model.state_dim();
    let p = model.param_count();
    ensure_dim("parameters", p, theta.len())?;
    if !x0s.len().is_multiple_of(n) {
        return Err(Error::DimensionMismatch {
            what: "stacked initial states",
            expected: n * (x0s.len() / n + 1),
            actual: x0s.len(),
        });
    }
    let batch = x0s.len() / n;
    let field = SensitivityField {
        model,
        theta,
        batch,
        scratch: RefCell::new(vec![0.0; n * p]),
    };
    let mut state = vec![0.0; field.dim()];
    state[..batch * n].copy_from_slice(x0s);
    solve(&field, &mut state, 0.0, t, cfg, |_, _| {})?;
    Ok(state.split_off(batch * n))
}

/// `d phi^t(x0) / d theta` as a `state_dim × param_count` matrix.
pub fn forward_sensitivity<M: DynamicsModel + ?Sized>(
    model: &M,
    theta: &[f64],
    x0: &[f64],
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<DMatrix<f64>> {
    ensure_dim("initial state", model.state_dim(), x0.len())?;
    let s = forward_sensitivity_batch(model, theta, x0, t, cfg)?;
    Ok(DMatrix::from_column_slice(
        model.state_dim(),
        model.param_count(),
        &s,
    ))
}

/// Empirical Fisher matrix `(1/N) sum_i S_i^T S_i` over initial states given
/// flat and sample-major (length `N * state_dim`).
///
/// No damping is applied here.
pub fn empirical_fisher<M: DynamicsModel + ?Sized>(
    model: &M,
    theta: &[f64],
    initial_states: &[f64],
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<DMatrix<f64>> {
    let n = model.state_dim();
    let p = model.param_count();
    if initial_states.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !initial_states.len().is_multiple_of(n) {
        return Err(Error::DimensionMismatch {
            what: "stacked initial states",
            expected: n * (initial_states.len() / n + 1),
            actual: initial_states.len(),
        });
    }
    let count = initial_states.len() / n;
    let chunks: Vec<Vec<f64>> = initial_states
        .par_chunks(CHUNK * n)
        .map(|chunk| forward_sensitivity_batch(model, theta, chunk, t, cfg))
        .collect::<Result<_>>()?;

    // Summed in sample order so the result does not depend on thread count.
    let mut fisher = DMatrix::<f64>::zeros(p, p);
    for s in chunks.iter().flat_map(|c| c.chunks_exact(n * p)) {
        for j in 0..p {
            for k in 0..p {
                let dot: f64 = (0..n).map(|i| s[j * n + i] * s[k * n + i]).sum();
                fisher[(j, k)] += dot;
            }
        }
    }
    fisher /= count as f64;
    Ok(fisher)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{flow_endpoint, DenseLinear, DiagonalLinear, Linear1D, TanhLayer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(x: f64) -> f64 {
        x.exp()
    }

    #[test]
    fn linear1d_gradient_matches_closed_form() {
        let r = adjoint_gradient(
            &Linear1D,
            &[0.0],
            &[1.0],
            &[e(-1.0)],
            1.0,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert!((r.grad[0] - 0.6321206).abs() < 1e-5, "{}", r.grad[0]);
        assert!((r.x_t[0] - 1.0).abs() < 1e-12);
        assert!((r.loss - 0.5 * (1.0 - e(-1.0)).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let cfg = IntegratorConfig::default();
        let model = TanhLayer::new(2);
        let theta = [0.3, -0.2, 0.1, 0.4, 0.05, -0.1];
        let x0 = [0.7, -1.2];
        let x_t = flow_endpoint(&model, &theta, &x0, 1.3, &cfg).unwrap();
        let r = adjoint_gradient(&model, &theta, &x0, &x_t, 1.3, &cfg).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.grad.iter().all(|g| *g == 0.0));
    }

    fn fd_gradient<M: DynamicsModel>(
        model: &M,
        theta: &[f64],
        x0: &[f64],
        target: &[f64],
        t: f64,
        cfg: &IntegratorConfig,
    ) -> Vec<f64> {
        let eps = 1e-5;
        let loss = |th: &[f64]| -> f64 {
            let x = flow_endpoint(model, th, x0, t, cfg).unwrap();
            0.5 * x
                .iter()
                .zip(target)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        };
        (0..theta.len())
            .map(|j| {
                let (mut p, mut m) = (theta.to_vec(), theta.to_vec());
                p[j] += eps;
                m[j] -= eps;
                (loss(&p) - loss(&m)) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn diagonal_model_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = IntegratorConfig::rk4(1e-3);
        let model = DiagonalLinear::new(2);
        for _ in 0..10 {
            let theta = [rng.random_range(-1.5..1.0), rng.random_range(-1.5..1.0)];
            let x0 = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let target = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let t = rng.random_range(0.1..2.0);
            let adj = adjoint_gradient(&model, &theta, &x0, &target, t, &cfg)
                .unwrap()
                .grad;
            let fd = fd_gradient(&model, &theta, &x0, &target, t, &cfg);
            let num: f64 = adj
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(num / den <= 1e-4, "relative error {}", num / den);
        }
    }

    #[test]
    fn batch_matches_single_sample_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = IntegratorConfig::default();
        let model = DenseLinear::new(2);
        let theta = [-0.4, 0.2, 0.1, -0.7];
        let x0s: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let targets: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batch = adjoint_gradient_batch(&model, &theta, &x0s, &targets, 0.8, &cfg).unwrap();
        assert_eq!(batch.len(), 5);
        for i in 0..5 {
            let single = adjoint_gradient(
                &model,
                &theta,
                &x0s[2 * i..2 * i + 2],
                &targets[2 * i..2 * i + 2],
                0.8,
                &cfg,
            )
            .unwrap();
            assert_eq!(batch.sample(i), single);
        }
    }

    #[test]
    fn adjoint_rejects_non_positive_time() {
        let cfg = IntegratorConfig::default();
        assert_eq!(
            adjoint_gradient(&Linear1D, &[0.0], &[1.0], &[1.0], 0.0, &cfg),
            Err(Error::NonPositiveTime(0.0))
        );
        assert!(adjoint_gradient(&Linear1D, &[0.0], &[1.0], &[1.0], -1.0, &cfg).is_err());
    }

    #[test]
    fn adjoint_reports_blow_up() {
        let r = adjoint_gradient(
            &Linear1D,
            &[5000.0],
            &[1.0],
            &[0.0],
            1.0,
            &IntegratorConfig::default(),
        );
        assert!(matches!(r, Err(Error::NonFiniteState { .. })));
    }

    #[test]
    fn sensitivity_examples() {
        let cfg = IntegratorConfig::default();
        let s = forward_sensitivity(&Linear1D, &[0.0], &[3.0], 1.0, &cfg).unwrap();
        assert!((s[(0, 0)] - 3.0).abs() < 1e-6);
        let s = forward_sensitivity(&Linear1D, &[-1.0], &[1.0], 2.0, &cfg).unwrap();
        assert!((s[(0, 0)] - 2.0 * e(-2.0)).abs() < 1e-6);
        let s =
            forward_sensitivity(&TanhLayer::new(2), &[0.1; 6], &[1.0, -1.0], 0.0, &cfg).unwrap();
        assert_eq!(s.shape(), (2, 6));
        assert!(s.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sensitivity_matches_finite_differences_of_flow() {
        let cfg = IntegratorConfig::rk4(1e-3);
        let model = TanhLayer::new(2);
        let theta = [0.4, -0.3, 0.2, -0.5, 0.1, 0.2];
        let x0 = [0.5, -0.8];
        let s = forward_sensitivity(&model, &theta, &x0, 1.5, &cfg).unwrap();
        let eps = 1e-6;
        for j in 0..6 {
            let (mut p, mut m) = (theta.to_vec(), theta.to_vec());
            p[j] += eps;
            m[j] -= eps;
            let fp = flow_endpoint(&model, &p, &x0, 1.5, &cfg).unwrap();
            let fm = flow_endpoint(&model, &m, &x0, 1.5, &cfg).unwrap();
            for i in 0..2 {
                let fd = (fp[i] - fm[i]) / (2.0 * eps);
                assert!(
                    (s[(i, j)] - fd).abs() < 1e-7,
                    "({i},{j}) {} vs {fd}",
                    s[(i, j)]
                );
            }
        }
    }

    #[test]
    fn fisher_examples() {
        let cfg = IntegratorConfig::default();
        let f = empirical_fisher(&Linear1D, &[0.0], &[1.0, -1.0], 1.0, &cfg).unwrap();
        assert!((f[(0, 0)] - 1.0).abs() < 1e-12);
        let f = empirical_fisher(&Linear1D, &[0.3], &[0.0], 1.0, &cfg).unwrap();
        assert_eq!(f[(0, 0)], 0.0);
        assert_eq!(
            empirical_fisher(&Linear1D, &[0.0], &[], 1.0, &cfg),
            Err(Error::EmptyDataset)
        );
    }

    #[test]
    fn fisher_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = IntegratorConfig::rk4(0.02);
        let model = TanhLayer::new(2);
        let theta: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let states: Vec<f64> = (0..400).map(|_| rng.random_range(-2.0..2.0)).collect();
        let f = empirical_fisher(&model, &theta, &states, 1.0, &cfg).unwrap();
        assert_eq!(f, f.transpose());
        let eig = f.symmetric_eigenvalues();
        assert!(eig.iter().all(|v| *v >= -1e-12), "{eig}");
    }
}

//! Parameter update rules: plain gradient descent, Adam, the
//! variance-corrected scalar step, and its Fisher-preconditioned
//! generalization for multi-parameter models.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};

/// Terminal variances at or below this are treated as zero.
pub const VARIANCE_FLOOR: f64 = 1e-12;

pub const DEFAULT_FISHER_DAMPING: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Natgrad,
    FisherNatgrad,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Sgd,
        OptimizerKind::Adam,
        OptimizerKind::Natgrad,
        OptimizerKind::FisherNatgrad,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Natgrad => "natgrad",
            OptimizerKind::FisherNatgrad => "fisher-natgrad",
        }
    }

    /// Whether a step needs the empirical Fisher matrix.
    pub fn needs_fisher(&self) -> bool {
        matches!(self, OptimizerKind::FisherNatgrad)
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown optimizer {s:?}")))
    }
}

/// Mutable per-run optimizer state plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub method: OptimizerKind,
    pub eta: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step_count: u64,
    pub fisher_damping: f64,
}

impl OptimizerState {
    pub fn new(method: OptimizerKind, eta: f64, param_count: usize) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {eta}"
            )));
        }
        if eta >= 0.5
            && matches!(
                method,
                OptimizerKind::Natgrad | OptimizerKind::FisherNatgrad
            )
        {
            log::warn!("eta = {eta} >= 0.5: the corrected step no longer contracts the loss");
        }
        Ok(Self {
            method,
            eta,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            adam_m: vec![0.0; param_count],
            adam_v: vec![0.0; param_count],
            step_count: 0,
            fisher_damping: DEFAULT_FISHER_DAMPING,
        })
    }

    pub fn with_fisher_damping(mut self, damping: f64) -> Self {
        self.fisher_damping = damping;
        self
    }

    /// Applies the configured update rule.
    pub fn step(&mut self, theta: &[f64], ctx: &StepContext) -> Result<Vec<f64>> {
        match self.method {
            OptimizerKind::Sgd => sgd_step(self, theta, ctx),
            OptimizerKind::Adam => adam_step(self, theta, ctx),
            OptimizerKind::Natgrad => natgrad_step(self, theta, ctx),
            OptimizerKind::FisherNatgrad => fisher_natgrad_step(self, theta, ctx),
        }
    }
}

/// Quantities gathered over one pass of the data that a step may need.
#[derive(Debug, Clone, PartialEq)]
pub struct StepContext {
    /// Sample-mean loss gradient.
    pub grad: Vec<f64>,
    /// Sample mean of squared terminal states.
    pub terminal_variance: f64,
    pub t: f64,
    pub fisher: Option<DMatrix<f64>>,
}

impl StepContext {
    pub fn new(grad: Vec<f64>, terminal_variance: f64, t: f64) -> Self {
        Self {
            grad,
            terminal_variance,
            t,
            fisher: None,
        }
    }

    pub fn with_fisher(mut self, fisher: DMatrix<f64>) -> Self {
        self.fisher = Some(fisher);
        self
    }
}

fn check_grad(theta: &[f64], grad: &[f64]) -> Result<()> {
    ensure_dim("gradient", theta.len(), grad.len())?;
    if grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteValue {
            context: "gradient",
        })
    }
}

fn check_finite(theta: Vec<f64>) -> Result<Vec<f64>> {
    if theta.iter().all(|v| v.is_finite()) {
        Ok(theta)
    } else {
        Err(Error::NonFiniteValue {
            context: "updated parameters",
        })
    }
}

/// `theta - eta * grad`
pub fn sgd_step(state: &mut OptimizerState, theta: &[f64], ctx: &StepContext) -> Result<Vec<f64>> {
    check_grad(theta, &ctx.grad)?;
    state.step_count += 1;
    check_finite(
        theta
            .iter()
            .zip(&ctx.grad)
            .map(|(th, g)| th - state.eta * g)
            .collect(),
    )
}

/// Bias-corrected Adam update.
pub fn adam_step(state: &mut OptimizerState, theta: &[f64], ctx: &StepContext) -> Result<Vec<f64>> {
    check_grad(theta, &ctx.grad)?;
    ensure_dim("adam moments", theta.len(), state.adam_m.len())?;
    ensure_dim("adam moments", theta.len(), state.adam_v.len())?;
    state.step_count += 1;
    let k = state.step_count as i32;
    let (b1, b2) = (state.adam_beta1, state.adam_beta2);
    let c1 = 1.0 - b1.powi(k);
    let c2 = 1.0 - b2.powi(k);
    let mut next = Vec::with_capacity(theta.len());
    for (i, (th, g)) in theta.iter().zip(&ctx.grad).enumerate() {
        let m = b1 * state.adam_m[i] + (1.0 - b1) * g;
        let v = b2 * state.adam_v[i] + (1.0 - b2) * g * g;
        state.adam_m[i] = m;
        state.adam_v[i] = v;
        let m_hat = m / c1;
        let v_hat = v / c2;
        next.push(th - state.eta * m_hat / (v_hat.sqrt() + state.adam_eps));
    }
    check_finite(next)
}

/// Variance-corrected step for a scalar rate:
/// `theta - eta * grad / (t^2 * terminal_variance)`.
pub fn natgrad_step(
    state: &mut OptimizerState,
    theta: &[f64],
    ctx: &StepContext,
) -> Result<Vec<f64>> {
    ensure_dim("natgrad parameters (scalar only)", 1, theta.len())?;
    check_grad(theta, &ctx.grad)?;
    if !(ctx.t > 0.0) {
        return Err(Error::NonPositiveTime(ctx.t));
    }
    if !(ctx.terminal_variance > VARIANCE_FLOOR) {
        return Err(Error::ZeroVariance {
            variance: ctx.terminal_variance,
            floor: VARIANCE_FLOOR,
        });
    }
    state.step_count += 1;
    let scale = ctx.t * ctx.t * ctx.terminal_variance;
    check_finite(vec![theta[0] - state.eta * ctx.grad[0] / scale])
}

/// `theta - eta * (F + damping I)^{-1} grad`
pub fn fisher_natgrad_step(
    state: &mut OptimizerState,
    theta: &[f64],
    ctx: &StepContext,
) -> Result<Vec<f64>> {
    check_grad(theta, &ctx.grad)?;
    let fisher = ctx.fisher.as_ref().ok_or_else(|| {
        Error::InvalidArgument("fisher-natgrad step requires a Fisher matrix".into())
    })?;
    let p = theta.len();
    if fisher.shape() != (p, p) {
        return Err(Error::DimensionMismatch {
            what: "fisher matrix",
            expected: p,
            actual: fisher.nrows(),
        });
    }
    let mut damped = fisher.clone();
    for i in 0..p {
        damped[(i, i)] += state.fisher_damping;
    }
    if !damped.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteValue {
            context: "fisher matrix",
        });
    }
    let eig = damped.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if !(max > 0.0) || min <= max * f64::EPSILON * p as f64 {
        return Err(Error::SingularFisher);
    }
    let direction = damped
        .lu()
        .solve(&DVector::from_column_slice(&ctx.grad))
        .ok_or(Error::SingularFisher)?;
    state.step_count += 1;
    check_finite(
        theta
            .iter()
            .zip(direction.iter())
            .map(|(th, d)| th - state.eta * d)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{loss_exact, loss_grad_exact, terminal_variance_exact, Linear1DProblem};

    fn state(kind: OptimizerKind, eta: f64) -> OptimizerState {
        OptimizerState::new(kind, eta, 1).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point_for_every_rule() {
        for kind in OptimizerKind::ALL {
            let mut st = OptimizerState::new(kind, 0.05, 2).unwrap();
            let ctx =
                StepContext::new(vec![0.0, 0.0], 1.0, 1.0).with_fisher(DMatrix::identity(2, 2));
            let theta = [0.3, -1.2];
            let next = if kind == OptimizerKind::Natgrad {
                st.step(&theta[..1], &StepContext::new(vec![0.0], 1.0, 1.0))
                    .unwrap()
            } else {
                st.step(&theta, &ctx).unwrap()
            };
            assert_eq!(next, theta[..next.len()].to_vec(), "{kind}");
            assert_eq!(st.step_count, 1);
        }
    }

    #[test]
    fn sgd_examples() {
        let mut st = state(OptimizerKind::Sgd, 0.05);
        let next = sgd_step(
            &mut st,
            &[0.0],
            &StepContext::new(vec![0.6321206], 1.0, 1.0),
        )
        .unwrap();
        assert!((next[0] + 0.0316060).abs() < 1e-7);

        let p = Linear1DProblem::standard();
        let g = loss_grad_exact(&p, 2.0).unwrap();
        assert!((g - 51.88).abs() < 0.01, "{g}");
        let next = sgd_step(&mut st, &[2.0], &StepContext::new(vec![g], 1.0, 1.0)).unwrap();
        assert!((next[0] + 0.594).abs() < 1e-3, "{}", next[0]);
        assert_eq!(st.step_count, 2);
    }

    #[test]
    fn sgd_rejects_non_finite_gradient() {
        let mut st = state(OptimizerKind::Sgd, 0.05);
        let ctx = StepContext::new(vec![f64::NAN], 1.0, 1.0);
        assert!(matches!(
            sgd_step(&mut st, &[0.0], &ctx),
            Err(Error::NonFiniteValue { .. })
        ));
    }

    #[test]
    fn adam_first_step_has_unit_direction() {
        for g in [1e-3, 0.5, -7.0, 1e4] {
            let mut st = state(OptimizerKind::Adam, 0.05);
            let next = adam_step(&mut st, &[1.0], &StepContext::new(vec![g], 1.0, 1.0)).unwrap();
            let moved = (next[0] - 1.0).abs();
            assert!((moved - 0.05).abs() <= 0.05 * 0.01, "g={g}, moved {moved}");
            assert_eq!(next[0] < 1.0, g > 0.0);
        }
    }

    #[test]
    fn adam_constant_gradient_moves_eta_per_step() {
        let mut st = state(OptimizerKind::Adam, 0.05);
        let mut theta = vec![0.0];
        let ctx = StepContext::new(vec![0.3], 1.0, 1.0);
        for _ in 0..100 {
            theta = adam_step(&mut st, &theta, &ctx).unwrap();
        }
        let displacement = -theta[0];
        assert!((displacement - 5.0).abs() <= 0.05 * 5.0, "{displacement}");
        assert_eq!(st.step_count, 100);
    }

    #[test]
    fn natgrad_examples() {
        let p = Linear1DProblem::standard();
        let mut st = state(OptimizerKind::Natgrad, 0.05);

        let g = loss_grad_exact(&p, 0.0).unwrap();
        let v = terminal_variance_exact(&p, 0.0).unwrap();
        let next = natgrad_step(&mut st, &[0.0], &StepContext::new(vec![g], v, 1.0)).unwrap();
        assert!((next[0] + 0.0316060).abs() < 1e-7);
        let ratio = loss_exact(&p, next[0]).unwrap() / loss_exact(&p, 0.0).unwrap();
        assert!((ratio - 0.9040).abs() < 1e-4, "{ratio}");

        let g = loss_grad_exact(&p, -3.0).unwrap();
        let v = terminal_variance_exact(&p, -3.0).unwrap();
        assert!((v - (-6.0f64).exp()).abs() < 1e-15);
        let next = natgrad_step(&mut st, &[-3.0], &StepContext::new(vec![g], v, 1.0)).unwrap();
        assert!((next[0] + 2.6806).abs() < 1e-4, "{}", next[0]);
    }

    #[test]
    fn natgrad_guards() {
        let mut st = state(OptimizerKind::Natgrad, 0.05);
        assert!(matches!(
            natgrad_step(&mut st, &[0.0], &StepContext::new(vec![0.1], 1e-13, 1.0)),
            Err(Error::ZeroVariance { .. })
        ));
        assert!(matches!(
            natgrad_step(
                &mut st,
                &[0.0, 1.0],
                &StepContext::new(vec![0.1, 0.1], 1.0, 1.0)
            ),
            Err(Error::DimensionMismatch { .. })
        ));
        assert_eq!(st.step_count, 0);
    }

    #[test]
    fn natgrad_is_invariant_to_initial_variance() {
        let theta = [0.4];
        for c in [0.25, 3.0, 17.0] {
            let base = Linear1DProblem::new(-1.0, 1.0, 1.5).unwrap();
            let scaled = Linear1DProblem::new(-1.0, c, 1.5).unwrap();
            let step = |p: &Linear1DProblem| {
                let mut st = state(OptimizerKind::Natgrad, 0.05);
                let ctx = StepContext::new(
                    vec![loss_grad_exact(p, theta[0]).unwrap()],
                    terminal_variance_exact(p, theta[0]).unwrap(),
                    p.t,
                );
                natgrad_step(&mut st, &theta, &ctx).unwrap()[0]
            };
            let (a, b) = (step(&base), step(&scaled));
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * a.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn fisher_step_reduces_to_natgrad_and_sgd() {
        let mut nat = state(OptimizerKind::Natgrad, 0.05);
        let mut fis = state(OptimizerKind::FisherNatgrad, 0.05).with_fisher_damping(0.0);
        let (g, v, t) = (0.37, 0.62, 1.7);
        let a = natgrad_step(&mut nat, &[0.2], &StepContext::new(vec![g], v, t)).unwrap();
        let ctx =
            StepContext::new(vec![g], v, t).with_fisher(DMatrix::from_element(1, 1, t * t * v));
        let b = fisher_natgrad_step(&mut fis, &[0.2], &ctx).unwrap();
        assert!((a[0] - b[0]).abs() <= 1e-12 * a[0].abs());

        let mut sgd = OptimizerState::new(OptimizerKind::Sgd, 0.05, 3).unwrap();
        let mut fis = OptimizerState::new(OptimizerKind::FisherNatgrad, 0.05, 3)
            .unwrap()
            .with_fisher_damping(0.0);
        let ctx =
            StepContext::new(vec![0.5, -2.0, 1.25], 1.0, 1.0).with_fisher(DMatrix::identity(3, 3));
        let theta = [1.0, 2.0, 3.0];
        assert_eq!(
            sgd_step(&mut sgd, &theta, &ctx).unwrap(),
            fisher_natgrad_step(&mut fis, &theta, &ctx).unwrap()
        );
    }

    #[test]
    fn singular_fisher_is_rejected() {
        let mut st = OptimizerState::new(OptimizerKind::FisherNatgrad, 0.05, 2)
            .unwrap()
            .with_fisher_damping(0.0);
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let ctx = StepContext::new(vec![0.1, 0.2], 1.0, 1.0).with_fisher(f.clone());
        assert_eq!(
            fisher_natgrad_step(&mut st, &[0.0, 0.0], &ctx),
            Err(Error::SingularFisher)
        );

        let ctx = StepContext::new(vec![0.1, 0.2], 1.0, 1.0);
        assert!(fisher_natgrad_step(&mut st, &[0.0, 0.0], &ctx).is_err());

        // default damping regularizes the same matrix
        let mut st = OptimizerState::new(OptimizerKind::FisherNatgrad, 0.05, 2).unwrap();
        let ctx = StepContext::new(vec![0.1, -0.1], 1.0, 1.0).with_fisher(f);
        assert!(fisher_natgrad_step(&mut st, &[0.0, 0.0], &ctx).is_ok());
    }

    #[test]
    fn constructor_and_parsing() {
        let st = OptimizerState::new(OptimizerKind::Adam, 0.05, 2).unwrap();
        assert_eq!(st.adam_m.len(), 2);
        assert!(OptimizerState::new(OptimizerKind::Sgd, 0.0, 1).is_err());
        assert_eq!(
            "fisher-natgrad".parse::<OptimizerKind>().unwrap(),
            OptimizerKind::FisherNatgrad
        );
        assert!("newton".parse::<OptimizerKind>().is_err());
    }
}

use serde::{Deserialize, Serialize};

use super::DynamicsModel;
use crate::error::{ensure_dim, Error, Result};

/// Right-hand side of an autonomous system `ds/dt = F(s)` on a flat state.
pub trait VectorField {
    fn dim(&self) -> usize;

    fn rhs(&self, state: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Rk4,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Method::Euler),
            "rk4" => Ok(Method::Rk4),
            other => Err(Error::InvalidArgument(format!(
                "unknown integrator {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Euler => "euler",
            Method::Rk4 => "rk4",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub step_size: f64,
    pub method: Method,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self::rk4(0.01)
    }
}

impl IntegratorConfig {
    pub fn rk4(step_size: f64) -> Self {
        Self {
            step_size,
            method: Method::Rk4,
        }
    }

    pub fn euler(step_size: f64) -> Self {
        Self {
            step_size,
            method: Method::Euler,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_size.is_finite() && self.step_size > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "step size must be positive, got {}",
                self.step_size
            )))
        }
    }

    /// Number of steps needed to cover `span`; the last one is shortened.
    pub fn step_count(&self, span: f64) -> usize {
        let span = span.abs();
        if span == 0.0 {
            return 0;
        }
        let raw = span / self.step_size;
        let nearest = raw.round();
        // 1.0 / 0.01 and friends should not pick up a sliver step.
        if nearest >= 1.0 && (raw - nearest).abs() <= 1e-9 * nearest {
            nearest as usize
        } else {
            raw.ceil() as usize
        }
    }
}

/// Time-indexed states produced by [`integrate`]. Times run in the direction
/// of integration, so they descend for reverse-time solves.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(f64::NAN)
    }
}

struct Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Workspace {
    fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    fn euler<F: VectorField + ?Sized>(&mut self, field: &F, s: &mut [f64], h: f64) {
        field.rhs(s, &mut self.k1);
        for (s, k) in s.iter_mut().zip(&self.k1) {
            *s += h * k;
        }
    }

    fn rk4<F: VectorField + ?Sized>(&mut self, field: &F, s: &mut [f64], h: f64) {
        let half = 0.5 * h;
        field.rhs(s, &mut self.k1);
        for ((t, s), k) in self.tmp.iter_mut().zip(s.iter()).zip(&self.k1) {
            *t = s + half * k;
        }
        field.rhs(&self.tmp, &mut self.k2);
        for ((t, s), k) in self.tmp.iter_mut().zip(s.iter()).zip(&self.k2) {
            *t = s + half * k;
        }
        field.rhs(&self.tmp, &mut self.k3);
        for ((t, s), k) in self.tmp.iter_mut().zip(s.iter()).zip(&self.k3) {
            *t = s + h * k;
        }
        field.rhs(&self.tmp, &mut self.k4);
        let sixth = h / 6.0;
        for (i, s) in s.iter_mut().enumerate() {
            *s += sixth * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Advances `state` in place from `t0` to `t1` (either direction) with fixed
/// steps, calling `observe` at the start time and after every step.
///
/// Every intermediate state is checked for non-finite entries.
pub fn solve<F, O>(
    field: &F,
    state: &mut [f64],
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
    mut observe: O,
) -> Result<()>
where
    F: VectorField + ?Sized,
    O: FnMut(f64, &[f64]),
{
    cfg.validate()?;
    ensure_dim("state", field.dim(), state.len())?;
    if !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidArgument(
            "integration bounds must be finite".into(),
        ));
    }
    if !state.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteState { time: t0 });
    }
    observe(t0, state);

    let steps = cfg.step_count(t1 - t0);
    let signed_h = cfg.step_size.copysign(t1 - t0);
    let mut ws = Workspace::new(state.len());
    let mut t = t0;
    for k in 1..=steps {
        let next = if k == steps {
            t1
        } else {
            t0 + k as f64 * signed_h
        };
        let h = next - t;
        match cfg.method {
            Method::Euler => ws.euler(field, state, h),
            Method::Rk4 => ws.rk4(field, state, h),
        }
        t = next;
        if !state.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState { time: t });
        }
        observe(t, state);
    }
    Ok(())
}

/// Many independent copies of a model's flow stacked sample-major into one
/// state, so a batch is advanced with a single step schedule.
pub(crate) struct BatchFlow<'a, M: ?Sized> {
    pub model: &'a M,
    pub theta: &'a [f64],
    pub batch: usize,
}

impl<M: DynamicsModel + ?Sized> VectorField for BatchFlow<'_, M> {
    fn dim(&self) -> usize {
        self.batch * self.model.state_dim()
    }

    fn rhs(&self, state: &[f64], out: &mut [f64]) {
        let n = self.model.state_dim();
        for (x, o) in state.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            self.model.eval(x, self.theta, o);
        }
    }
}

fn check_model_inputs<M: DynamicsModel + ?Sized>(
    model: &M,
    theta: &[f64],
    x0: &[f64],
) -> Result<()> {
    ensure_dim("parameters", model.param_count(), theta.len())?;
    ensure_dim("initial state", model.state_dim(), x0.len())
}

/// Integrates `model` from `x0` at `t0` to `t1`, recording every step.
pub fn integrate<M: DynamicsModel + ?Sized>(
    model: &M,
    theta: &[f64],
    x0: &[f64],
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    check_model_inputs(model, theta, x0)?;
    let field = BatchFlow {
        model,
        theta,
        batch: 1,
    };
    let capacity = cfg.step_count(t1 - t0) + 1;
    let mut traj = Trajectory {
        times: Vec::with_capacity(capacity),
        states: Vec::with_capacity(capacity),
    };
    let mut state = x0.to_vec();
    solve(&field, &mut state, t0, t1, cfg, |t, s| {
        traj.times.push(t);
        traj.states.push(s.to_vec());
    })?;
    Ok(traj)
}

/// `phi^t(x0)`: the state reached from `x0` after time `t >= 0`.
pub fn flow_endpoint<M: DynamicsModel + ?Sized>(
    model: &M,
    theta: &[f64],
    x0: &[f64],
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "flow time must be non-negative, got {t}"
        )));
    }
    check_model_inputs(model, theta, x0)?;
    let field = BatchFlow {
        model,
        theta,
        batch: 1,
    };
    let mut state = x0.to_vec();
    solve(&field, &mut state, 0.0, t, cfg, |_, _| {})?;
    Ok(state)
}

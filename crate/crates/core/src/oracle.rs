//! Closed-form quantities for the scalar linear problem `dx/dt = a x` fitted
//! to data from `dx/dt = a* x` with `x0 ~ N(0, sigma2)`.
//!
//! Everything here is evaluated with exact exponentials and never touches the
//! numerical integrator, so it can serve as an independent oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear1DProblem {
    pub a_star: f64,
    pub sigma2: f64,
    pub t: f64,
}

impl Linear1DProblem {
    pub fn new(a_star: f64, sigma2: f64, t: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma2 must be positive, got {sigma2}"
            )));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::NonPositiveTime(t));
        }
        if !a_star.is_finite() {
            return Err(Error::InvalidArgument("a_star must be finite".into()));
        }
        Ok(Self { a_star, sigma2, t })
    }

    /// The setting used throughout the experiments: `a* = -1`, `sigma2 = 1`, `t = 1`.
    pub fn standard() -> Self {
        Self {
            a_star: -1.0,
            sigma2: 1.0,
            t: 1.0,
        }
    }
}

fn finite(v: f64, context: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteValue { context })
    }
}

/// `(sigma2 / 2) (e^{a t} - e^{a* t})^2`
pub fn loss_exact(p: &Linear1DProblem, a: f64) -> Result<f64> {
    let diff = (a * p.t).exp() - (p.a_star * p.t).exp();
    finite(0.5 * p.sigma2 * diff * diff, "loss")
}

/// `sigma2 t e^{a t} (e^{a t} - e^{a* t})`
pub fn loss_grad_exact(p: &Linear1DProblem, a: f64) -> Result<f64> {
    let ea = (a * p.t).exp();
    finite(
        p.sigma2 * p.t * ea * (ea - (p.a_star * p.t).exp()),
        "loss gradient",
    )
}

/// `sigma2 t^2 e^{a t} (2 e^{a t} - e^{a* t})`
pub fn loss_curvature_exact(p: &Linear1DProblem, a: f64) -> Result<f64> {
    let ea = (a * p.t).exp();
    finite(
        p.sigma2 * p.t * p.t * ea * (2.0 * ea - (p.a_star * p.t).exp()),
        "loss curvature",
    )
}

/// Second moment of the learned terminal state, `sigma2 e^{2 a t}`.
pub fn terminal_variance_exact(p: &Linear1DProblem, a: f64) -> Result<f64> {
    finite(p.sigma2 * (2.0 * a * p.t).exp(), "terminal variance")
}

/// `t^2 sigma2 e^{2 a t}`
pub fn fisher_exact(p: &Linear1DProblem, a: f64) -> Result<f64> {
    finite(
        p.t * p.t * terminal_variance_exact(p, a)?,
        "fisher information",
    )
}

/// `a* - ln 2 / t`: the loss is concave below this rate and convex above.
pub fn concavity_boundary(p: &Linear1DProblem) -> f64 {
    p.a_star - std::f64::consts::LN_2 / p.t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandscapePoint {
    pub a: f64,
    /// `None` where the loss overflowed.
    pub loss: Option<f64>,
}

/// Loss on `n_points` evenly spaced rates covering `[a_min, a_max]`.
pub fn landscape_sweep(
    p: &Linear1DProblem,
    a_min: f64,
    a_max: f64,
    n_points: usize,
) -> Result<Vec<LandscapePoint>> {
    if !(a_min.is_finite() && a_max.is_finite() && a_min < a_max) {
        return Err(Error::InvalidArgument(format!(
            "sweep range requires a_min < a_max, got [{a_min}, {a_max}]"
        )));
    }
    if n_points < 2 {
        return Err(Error::InvalidArgument(format!(
            "sweep needs at least 2 points, got {n_points}"
        )));
    }
    let span = a_max - a_min;
    let last = (n_points - 1) as f64;
    Ok((0..n_points)
        .map(|i| {
            let a = if i == n_points - 1 {
                a_max
            } else {
                a_min + span * (i as f64 / last)
            };
            LandscapePoint {
                a,
                loss: loss_exact(p, a).ok(),
            }
        })
        .collect())
}

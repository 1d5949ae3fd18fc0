//! Full-batch training loop: synthesize data from a reference flow, average
//! per-sample adjoint gradients, track the terminal second moment, and apply
//! the configured update each epoch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{adjoint_gradient_batch, empirical_fisher, BatchGradients, CHUNK};
use crate::error::{ensure_dim, Error, Result};
use crate::ode::{solve, BatchFlow, DynamicsModel, IntegratorConfig};
use crate::optim::{OptimizerKind, OptimizerState, StepContext, DEFAULT_FISHER_DAMPING};

/// Mean losses above this abort a run.
pub const DIVERGENCE_LOSS: f64 = 1e12;

/// Step used to generate targets for truths without a closed-form flow.
pub const REFERENCE_STEP: f64 = 1e-4;

/// `(x0, x_t*)` pairs stored flat and sample-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    state_dim: usize,
    initial: Vec<f64>,
    targets: Vec<f64>,
    pub t: f64,
    pub seed: u64,
}

impl Dataset {
    pub fn from_pairs<I, A, B>(state_dim: usize, pairs: I, t: f64, seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<[f64]>,
        B: AsRef<[f64]>,
    {
        let mut initial = Vec::new();
        let mut targets = Vec::new();
        for (x0, xt) in pairs {
            ensure_dim("initial state", state_dim, x0.as_ref().len())?;
            ensure_dim("target state", state_dim, xt.as_ref().len())?;
            initial.extend_from_slice(x0.as_ref());
            targets.extend_from_slice(xt.as_ref());
        }
        Self::from_flat(state_dim, initial, targets, t, seed)
    }

    fn from_flat(
        state_dim: usize,
        initial: Vec<f64>,
        targets: Vec<f64>,
        t: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::NonPositiveTime(t));
        }
        if initial.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !initial.iter().chain(&targets).all(|v| v.is_finite()) {
            return Err(Error::NonFiniteValue { context: "dataset" });
        }
        Ok(Self {
            state_dim,
            initial,
            targets,
            t,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.initial.len() / self.state_dim
    }

    pub fn is_empty(&self) -> bool {
        self.initial.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn pair(&self, i: usize) -> (&[f64], &[f64]) {
        let r = i * self.state_dim..(i + 1) * self.state_dim;
        (&self.initial[r.clone()], &self.targets[r])
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.initial
            .chunks_exact(self.state_dim)
            .zip(self.targets.chunks_exact(self.state_dim))
    }

    /// All initial states, flat and sample-major.
    pub fn initial_states(&self) -> &[f64] {
        &self.initial
    }

    pub fn target_states(&self) -> &[f64] {
        &self.targets
    }
}

/// Draws `n` initial states from `N(0, sigma2 I)` and maps each through the
/// truth's flow to time `t`. The same seed always yields the same dataset.
pub fn generate_dataset<M: DynamicsModel + ?Sized>(
    truth: &M,
    theta_star: &[f64],
    n: usize,
    sigma2: f64,
    t: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sigma2 must be positive, got {sigma2}"
        )));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::NonPositiveTime(t));
    }
    ensure_dim("true parameters", truth.param_count(), theta_star.len())?;
    let dim = truth.state_dim();
    let normal =
        Normal::new(0.0, sigma2.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial: Vec<f64> = (0..n * dim).map(|_| normal.sample(&mut rng)).collect();

    let targets = match truth.exact_flow(&initial[..dim], theta_star, t) {
        Some(_) => {
            let mut targets = Vec::with_capacity(initial.len());
            for x0 in initial.chunks_exact(dim) {
                let xt = truth
                    .exact_flow(x0, theta_star, t)
                    .expect("exact flow availability does not depend on the state");
                targets.extend_from_slice(&xt);
            }
            if targets.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { time: t });
            }
            targets
        }
        None => {
            let cfg = IntegratorConfig::rk4(REFERENCE_STEP);
            let mut targets = initial.clone();
            for chunk in targets.chunks_mut(CHUNK * dim) {
                let field = BatchFlow {
                    model: truth,
                    theta: theta_star,
                    batch: chunk.len() / dim,
                };
                solve(&field, chunk, 0.0, t, &cfg, |_, _| {})?;
            }
            targets
        }
    };
    Dataset::from_flat(dim, initial, targets, t, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub eta: f64,
    pub method: OptimizerKind,
    /// Training stops once the mean loss drops below this.
    pub convergence_loss: f64,
    pub integrator: IntegratorConfig,
    pub n_samples: usize,
    pub sigma2: f64,
    pub seed: u64,
    pub fisher_damping: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            eta: 0.05,
            method: OptimizerKind::Natgrad,
            convergence_loss: 1e-12,
            integrator: IntegratorConfig::default(),
            n_samples: 10_000,
            sigma2: 1.0,
            seed: 20_240_601,
            fisher_damping: DEFAULT_FISHER_DAMPING,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.convergence_loss >= 0.0) {
            return bad(format!(
                "convergence loss must be non-negative, got {}",
                self.convergence_loss
            ));
        }
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1".into());
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return bad(format!("sigma2 must be positive, got {}", self.sigma2));
        }
        if !(self.fisher_damping >= 0.0) {
            return bad(format!(
                "fisher damping must be non-negative, got {}",
                self.fisher_damping
            ));
        }
        self.integrator.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    /// Sample mean of `0.5 |x_t - x_t*|^2`.
    pub loss: f64,
    /// Parameters at which `loss` was measured (before this epoch's update).
    pub params: Vec<f64>,
    /// Sample mean of `|x_t|^2`.
    pub terminal_variance: f64,
    /// Euclidean norm of the mean gradient.
    pub grad_norm: f64,
}

/// Outcome of [`train`]. A run that blows up keeps the history up to the
/// failing epoch and carries the reason in `failure`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub records: Vec<TrainRecord>,
    pub final_params: Vec<f64>,
    pub converged: bool,
    pub failure: Option<Error>,
}

impl TrainRun {
    pub fn diverged(&self) -> bool {
        self.failure.is_some()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }
}

struct EpochSums {
    grad: Vec<f64>,
    loss: f64,
    second_moment: f64,
}

fn reduce(chunks: &[BatchGradients], p: usize) -> EpochSums {
    let mut sums = EpochSums {
        grad: vec![0.0; p],
        loss: 0.0,
        second_moment: 0.0,
    };
    // Sample order, independent of how chunks were scheduled.
    for batch in chunks {
        for i in 0..batch.len() {
            for (s, g) in sums.grad.iter_mut().zip(batch.grad(i)) {
                *s += g;
            }
            sums.loss += batch.losses[i];
            sums.second_moment += batch.x_t(i).iter().map(|x| x * x).sum::<f64>();
        }
    }
    sums
}

/// One pass over the dataset followed by one parameter update.
pub fn train_epoch<M: DynamicsModel + ?Sized>(
    model: &M,
    theta: &[f64],
    dataset: &Dataset,
    opt: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, TrainRecord)> {
    ensure_dim("dataset states", model.state_dim(), dataset.state_dim())?;
    ensure_dim("parameters", model.param_count(), theta.len())?;
    let n = dataset.state_dim();
    let t = dataset.t;
    let chunks: Vec<BatchGradients> = dataset
        .initial_states()
        .par_chunks(CHUNK * n)
        .zip(dataset.target_states().par_chunks(CHUNK * n))
        .map(|(x0s, targets)| {
            adjoint_gradient_batch(model, theta, x0s, targets, t, &cfg.integrator)
        })
        .collect::<Result<_>>()?;

    let count = dataset.len() as f64;
    let sums = reduce(&chunks, theta.len());
    let grad: Vec<f64> = sums.grad.iter().map(|g| g / count).collect();
    let loss = sums.loss / count;
    let terminal_variance = sums.second_moment / count;
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();

    let mut ctx = StepContext::new(grad, terminal_variance, t);
    if opt.method.needs_fisher() {
        ctx = ctx.with_fisher(empirical_fisher(
            model,
            theta,
            dataset.initial_states(),
            t,
            &cfg.integrator,
        )?);
    }
    let record = TrainRecord {
        epoch: opt.step_count as usize + 1,
        loss,
        params: theta.to_vec(),
        terminal_variance,
        grad_norm,
    };
    let next = opt.step(theta, &ctx)?;
    Ok((next, record))
}

fn is_numerical_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::NonFiniteState { .. }
            | Error::NonFiniteValue { .. }
            | Error::ZeroVariance { .. }
            | Error::SingularFisher
    )
}

/// Runs epochs until `cfg.epochs` is exhausted, the loss falls below
/// `cfg.convergence_loss`, or the run diverges.
pub fn train<M: DynamicsModel + ?Sized>(
    model: &M,
    theta0: &[f64],
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    cfg.validate()?;
    let mut opt = OptimizerState::new(cfg.method, cfg.eta, model.param_count())?
        .with_fisher_damping(cfg.fisher_damping);
    let mut theta = theta0.to_vec();
    let mut run = TrainRun {
        records: Vec::with_capacity(cfg.epochs),
        final_params: theta.clone(),
        converged: false,
        failure: None,
    };
    for epoch in 1..=cfg.epochs {
        let (next, record) = match train_epoch(model, &theta, dataset, &mut opt, cfg) {
            Ok(out) => out,
            Err(e) if is_numerical_failure(&e) => {
                run.failure = Some(Error::DivergenceDetected {
                    epoch,
                    reason: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(e),
        };
        let loss = record.loss;
        run.records.push(record);
        if !(loss <= DIVERGENCE_LOSS) {
            run.failure = Some(Error::DivergenceDetected {
                epoch,
                reason: format!("mean loss {loss:e} exceeds {DIVERGENCE_LOSS:e}"),
            });
            break;
        }
        if loss < cfg.convergence_loss {
            run.converged = true;
            break;
        }
        theta = next;
    }
    run.final_params = theta;
    Ok(run)
}

/// Least-squares slope of `ln(loss)` against epoch over records whose epoch
/// lies in `[first, last]`. Non-positive losses are skipped.
pub fn log_loss_slope(records: &[TrainRecord], first: usize, last: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| (first..=last).contains(&r.epoch) && r.loss > 0.0 && r.loss.is_finite())
        .map(|r| (r.epoch as f64, r.loss.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Some(sxy / sxx)
}

/// First epoch whose recorded loss is below `threshold`.
pub fn epochs_to_loss(records: &[TrainRecord], threshold: f64) -> Option<usize> {
    records.iter().find(|r| r.loss < threshold).map(|r| r.epoch)
}

use std::fs;
use std::path::Path;

use odeflow_core::oracle::{landscape_sweep, Linear1DProblem};
use odeflow_core::trainer::{epochs_to_loss, log_loss_slope};
use odeflow_core::{
    generate_dataset, train, Dataset, Error, IntegratorConfig, Linear1D, Method, OptimizerKind,
    TrainConfig, TrainRun,
};
use rayon::prelude::*;

use crate::args::{CommonArgs, CompareArgs, LandscapeArgs, ProblemArgs, TrainArgs};
use crate::config::Resolver;
use crate::error::{CliError, CliResult, EXIT_DIVERGED, EXIT_OK};
use crate::output::{self, HistoryRow, LandscapeRow, SummaryRow};

pub const DEFAULT_SEED: &str = "20240601";
/// Loss level reported as `epochs_to_1e-6` in summaries.
pub const TARGET_LOSS: f64 = 1e-6;
/// Epoch window for the fitted log-loss slope.
pub const SLOPE_WINDOW: (usize, usize) = (1, 50);

fn prepare_out(common: &CommonArgs) -> CliResult<&Path> {
    let out = common.out.as_path();
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    Ok(out)
}

pub fn landscape(args: &LandscapeArgs, command_line: &str) -> CliResult<i32> {
    let mut r = Resolver::new(args.common.config.as_deref())?;
    let a_stars: Vec<f64> = r.list("a-star", args.a_star.as_deref(), "-1")?;
    let ts: Vec<f64> = r.list("t", args.t.as_deref(), "1")?;
    let sigma2: f64 = r.value("sigma2", args.sigma2.as_deref(), "1")?;
    let (lo, hi) = r.range("range", args.range.as_deref(), "-3:1")?;
    let points: usize = r.value("points", args.points.as_deref(), "201")?;
    let _seed: u64 = r.value("seed", args.common.seed.as_deref(), DEFAULT_SEED)?;
    let settings = r.finish()?;

    let mut rows = Vec::with_capacity(a_stars.len() * ts.len() * points);
    for &a_star in &a_stars {
        for &t in &ts {
            let p = Linear1DProblem::new(a_star, sigma2, t)?;
            rows.extend(
                landscape_sweep(&p, lo, hi, points)?
                    .into_iter()
                    .map(|pt| LandscapeRow {
                        a_star,
                        t,
                        sigma2,
                        a: pt.a,
                        loss: pt.loss,
                    }),
            );
        }
    }

    let out = prepare_out(&args.common)?;
    output::write_landscape(&out.join("landscape.csv"), &rows)?;
    output::write_text(
        &out.join("manifest.txt"),
        &output::render_manifest(command_line, &settings),
    )?;
    Ok(EXIT_OK)
}

/// Fully resolved problem shared by `train` and `compare`.
#[derive(Debug, Clone)]
pub struct Problem {
    pub a_star: f64,
    pub t: f64,
    pub cfg: TrainConfig,
}

impl Problem {
    pub fn dataset(&self) -> CliResult<Dataset> {
        Ok(generate_dataset(
            &Linear1D,
            &[self.a_star],
            self.cfg.n_samples,
            self.cfg.sigma2,
            self.t,
            self.cfg.seed,
        )?)
    }

    pub fn run(&self, data: &Dataset, method: OptimizerKind, a0: f64) -> CliResult<TrainRun> {
        let cfg = TrainConfig {
            method,
            ..self.cfg.clone()
        };
        Ok(train(&Linear1D, &[a0], data, &cfg)?)
    }
}

fn resolve_problem(r: &mut Resolver, p: &ProblemArgs, common: &CommonArgs) -> CliResult<Problem> {
    let a_star: f64 = r.value("a-star", p.a_star.as_deref(), "-1")?;
    let t: f64 = r.value("t", p.t.as_deref(), "1")?;
    let sigma2: f64 = r.value("sigma2", p.sigma2.as_deref(), "1")?;
    let eta: f64 = r.value("eta", p.eta.as_deref(), "0.05")?;
    let epochs: usize = r.value("epochs", p.epochs.as_deref(), "200")?;
    let n_samples: usize = r.value("samples", p.samples.as_deref(), "10000")?;
    let h: f64 = r.value("h", p.h.as_deref(), "0.01")?;
    let method: Method = r.value("integrator", p.integrator.as_deref(), "rk4")?;
    let convergence_loss: f64 =
        r.value("convergence-loss", p.convergence_loss.as_deref(), "1e-12")?;
    let seed: u64 = r.value("seed", common.seed.as_deref(), DEFAULT_SEED)?;

    // Linear1DProblem carries the validation for a*, t and sigma2.
    Linear1DProblem::new(a_star, sigma2, t)?;
    let cfg = TrainConfig {
        epochs,
        eta,
        convergence_loss,
        integrator: IntegratorConfig {
            step_size: h,
            method,
        },
        n_samples,
        sigma2,
        seed,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    Ok(Problem { a_star, t, cfg })
}

fn finite(key: &str, values: &[f64]) -> CliResult<()> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(CliError::Usage(format!("--{key}: {v} is not finite"))),
        None => Ok(()),
    }
}

pub fn summarize(method: OptimizerKind, a0: f64, run: &TrainRun) -> SummaryRow {
    let status = match &run.failure {
        Some(Error::DivergenceDetected { epoch, .. }) => format!("diverged@{epoch}"),
        Some(_) => "failed".to_string(),
        None if run.converged => "converged".to_string(),
        None => "max-epochs".to_string(),
    };
    SummaryRow {
        method,
        a0,
        final_loss: run.final_loss(),
        epochs_to_target: epochs_to_loss(&run.records, TARGET_LOSS),
        slope: log_loss_slope(&run.records, SLOPE_WINDOW.0, SLOPE_WINDOW.1),
        status,
    }
}

fn history(
    method: OptimizerKind,
    a0: f64,
    run: &TrainRun,
) -> impl Iterator<Item = HistoryRow> + '_ {
    run.records
        .iter()
        .map(move |r| HistoryRow::from_record(method, a0, r))
}

pub fn train_cmd(args: &TrainArgs, command_line: &str) -> CliResult<i32> {
    let mut r = Resolver::new(args.common.config.as_deref())?;
    let problem = resolve_problem(&mut r, &args.problem, &args.common)?;
    let method: OptimizerKind = r.value("method", args.method.as_deref(), "natgrad")?;
    let a0: f64 = r.value("a0", args.a0.as_deref(), "0")?;
    let settings = r.finish()?;
    finite("a0", &[a0])?;

    let data = problem.dataset()?;
    let run = problem.run(&data, method, a0)?;

    let out = prepare_out(&args.common)?;
    let rows: Vec<HistoryRow> = history(method, a0, &run).collect();
    output::write_history(&out.join("train.csv"), &rows)?;
    output::write_text(
        &out.join("summary.txt"),
        &output::render_summary(&[summarize(method, a0, &run)]),
    )?;
    output::write_text(
        &out.join("manifest.txt"),
        &output::render_manifest(command_line, &settings),
    )?;

    match &run.failure {
        Some(e) => {
            eprintln!("odeflow: {e}");
            Ok(EXIT_DIVERGED)
        }
        None => Ok(EXIT_OK),
    }
}

pub fn compare(args: &CompareArgs, command_line: &str) -> CliResult<i32> {
    let mut r = Resolver::new(args.common.config.as_deref())?;
    let problem = resolve_problem(&mut r, &args.problem, &args.common)?;
    let methods: Vec<OptimizerKind> =
        r.list("methods", args.methods.as_deref(), "sgd,adam,natgrad")?;
    let inits: Vec<f64> = r.list("inits", args.inits.as_deref(), "-3,-2,0,1,2")?;
    let settings = r.finish()?;
    finite("inits", &inits)?;

    let data = problem.dataset()?;
    let cells: Vec<(OptimizerKind, f64)> = methods
        .iter()
        .flat_map(|&m| inits.iter().map(move |&a0| (m, a0)))
        .collect();
    // Each cell owns its optimizer state; results come back in cell order.
    let runs: Vec<TrainRun> = cells
        .par_iter()
        .map(|&(m, a0)| {
            let run = problem.run(&data, m, a0);
            log::info!("finished {m} from a0 = {a0}");
            run
        })
        .collect::<CliResult<_>>()?;

    let out = prepare_out(&args.common)?;
    let mut rows = Vec::new();
    let mut summary = Vec::with_capacity(cells.len());
    for (&(m, a0), run) in cells.iter().zip(&runs) {
        rows.extend(history(m, a0, run));
        summary.push(summarize(m, a0, run));
    }
    output::write_history(&out.join("compare.csv"), &rows)?;
    output::write_text(&out.join("summary.txt"), &output::render_summary(&summary))?;
    output::write_text(
        &out.join("manifest.txt"),
        &output::render_manifest(command_line, &settings),
    )?;
    Ok(EXIT_OK)
}

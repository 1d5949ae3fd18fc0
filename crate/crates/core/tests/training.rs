use odeflow_core::ode::{flow_endpoint, Linear1D, TanhLayer};
use odeflow_core::oracle::{loss_exact, terminal_variance_exact, Linear1DProblem};
use odeflow_core::trainer::{log_loss_slope, DIVERGENCE_LOSS};
use odeflow_core::{
    generate_dataset, train, train_epoch, Dataset, IntegratorConfig, OptimizerKind, OptimizerState,
    TrainConfig, TrainRun,
};

const STARTS: [f64; 5] = [-3.0, -2.0, 0.0, 1.0, 2.0];

fn standard_data(n: usize) -> Dataset {
    generate_dataset(&Linear1D, &[-1.0], n, 1.0, 1.0, 20_240_601).unwrap()
}

fn config(method: OptimizerKind, epochs: usize) -> TrainConfig {
    TrainConfig {
        method,
        epochs,
        ..TrainConfig::default()
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (
        m,
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0),
    )
}

fn ratios(run: &TrainRun) -> Vec<f64> {
    run.records
        .windows(2)
        .map(|w| w[1].loss / w[0].loss)
        .collect()
}

#[test]
fn dataset_draws_concentrate() {
    for sigma2 in [1.0, 4.0] {
        let d = generate_dataset(&Linear1D, &[-1.0], 1000, sigma2, 1.0, 5).unwrap();
        let (m, v) = mean_var(d.initial_states());
        assert!(m.abs() < 4.0 * sigma2.sqrt() / 1000f64.sqrt(), "mean {m}");
        assert!((v / sigma2 - 1.0).abs() < 0.15, "variance {v}");
    }
}

#[test]
fn linear_targets_are_exact() {
    let d = standard_data(500);
    for (x0, xt) in d.pairs() {
        assert_eq!(xt[0], (-1.0f64).exp() * x0[0]);
    }
}

#[test]
fn nonlinear_targets_follow_reference_integration() {
    let model = TanhLayer::new(2);
    let theta = [-0.8, 0.3, 0.1, -1.1, 0.2, -0.1];
    let d = generate_dataset(&model, &theta, 300, 1.0, 1.5, 9).unwrap();
    let reference = IntegratorConfig::rk4(1e-4);
    for (x0, xt) in d.pairs().step_by(37) {
        assert_eq!(
            flow_endpoint(&model, &theta, x0, 1.5, &reference).unwrap(),
            xt
        );
    }
}

#[test]
fn datasets_are_reproducible_from_seed() {
    assert_eq!(standard_data(2000), standard_data(2000));
    let other = generate_dataset(&Linear1D, &[-1.0], 2000, 1.0, 1.0, 1).unwrap();
    assert_ne!(standard_data(2000).initial_states(), other.initial_states());
}

#[test]
fn first_natgrad_epoch_matches_oracle() {
    let d = standard_data(10_000);
    let cfg = config(OptimizerKind::Natgrad, 1);
    let mut opt = OptimizerState::new(OptimizerKind::Natgrad, 0.05, 1).unwrap();
    let (next, rec) = train_epoch(&Linear1D, &[0.0], &d, &mut opt, &cfg).unwrap();
    assert!(
        (rec.terminal_variance - 1.0).abs() < 0.05,
        "{}",
        rec.terminal_variance
    );
    assert!((next[0] / -0.0316 - 1.0).abs() < 0.05, "{}", next[0]);
    assert_eq!(rec.epoch, 1);
    assert_eq!(rec.params, vec![0.0]);
}

#[test]
fn starting_at_the_optimum_stops_after_one_epoch() {
    let run = train(
        &Linear1D,
        &[-1.0],
        &standard_data(1000),
        &config(OptimizerKind::Natgrad, 10),
    )
    .unwrap();
    assert_eq!(run.records.len(), 1);
    assert!(run.converged);
    assert!(run.records[0].loss < 1e-18);
    assert_eq!(run.final_params, vec![-1.0]);
}

#[test]
fn natgrad_from_two_decays_at_the_predicted_rate() {
    let run = train(
        &Linear1D,
        &[2.0],
        &standard_data(10_000),
        &config(OptimizerKind::Natgrad, 50),
    )
    .unwrap();
    let slope = log_loss_slope(&run.records, 1, 50).unwrap();
    assert!((slope - 0.9f64.ln()).abs() <= 0.01, "slope {slope}");
}

#[test]
fn sgd_from_two_overshoots_then_decays() {
    // The exact-gradient recursion lands at a = -0.594 after one step and
    // then contracts monotonically; no divergence occurs.
    let run = train(
        &Linear1D,
        &[2.0],
        &standard_data(10_000),
        &config(OptimizerKind::Sgd, 50),
    )
    .unwrap();
    assert!(!run.diverged());
    let a1 = run.records[1].params[0];
    assert!((a1 - -0.594).abs() < 0.05, "a1 = {a1}");
    assert!(run.records.iter().all(|r| r.loss < DIVERGENCE_LOSS));
    assert!(ratios(&run).iter().all(|r| *r < 1.0));
}

#[test]
fn recorded_statistics_match_oracle_within_standard_errors() {
    let n = 100_000;
    let d = standard_data(n);
    let p = Linear1DProblem::standard();
    let run = train(&Linear1D, &[1.0], &d, &config(OptimizerKind::Natgrad, 15)).unwrap();
    // Both statistics are scaled sample means of x0^2, whose relative
    // standard error is sqrt(2 / n).
    let rel_se = (2.0 / n as f64).sqrt();
    for r in &run.records {
        let a = r.params[0];
        let loss = loss_exact(&p, a).unwrap();
        let var = terminal_variance_exact(&p, a).unwrap();
        assert!(
            (r.loss - loss).abs() <= 3.0 * rel_se * loss,
            "epoch {}: {} vs {loss}",
            r.epoch,
            r.loss
        );
        assert!((r.terminal_variance - var).abs() <= 3.0 * rel_se * var);
    }
}

#[test]
fn histories_are_identical_across_runs_and_thread_counts() {
    let d = standard_data(5000);
    let cfg = config(OptimizerKind::Adam, 20);
    let run_in = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(&Linear1D, &[1.0], &d, &cfg).unwrap())
    };
    let first = run_in(1);
    assert_eq!(first, run_in(1));
    assert_eq!(first, run_in(4));
}

#[test]
fn natgrad_ratios_are_tight_while_sgd_ratios_spread() {
    let d = standard_data(10_000);
    let mut sgd_all = Vec::new();
    for a0 in STARTS {
        let nat = train(&Linear1D, &[a0], &d, &config(OptimizerKind::Natgrad, 50)).unwrap();
        for (k, w) in nat.records.windows(2).enumerate() {
            let r = w[1].loss / w[0].loss;
            assert!(
                (0.88..=0.92).contains(&r),
                "a0 {a0} epoch {}: ratio {r}",
                k + 2
            );
            assert!(w[1].loss < w[0].loss);
        }
        let sgd = train(&Linear1D, &[a0], &d, &config(OptimizerKind::Sgd, 50)).unwrap();
        sgd_all.extend(ratios(&sgd));
    }
    let max = sgd_all.iter().cloned().fold(f64::MIN, f64::max);
    let min = sgd_all.iter().cloned().fold(f64::MAX, f64::min);
    assert!(max - min > 0.2, "sgd ratios span {min}..{max}");
}

#[test]
fn records_are_well_formed() {
    let run = train(
        &Linear1D,
        &[0.5],
        &standard_data(2000),
        &config(OptimizerKind::Adam, 30),
    )
    .unwrap();
    for (i, r) in run.records.iter().enumerate() {
        assert_eq!(r.epoch, i + 1);
        assert!(r.loss >= 0.0 && r.terminal_variance >= 0.0 && r.grad_norm >= 0.0);
    }
}

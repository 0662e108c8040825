use approx::assert_relative_eq;
use hinge_overfit::data::{generate_sample, max_noise_coherence, DataConfig};
use hinge_overfit::experiment::{run_experiment, run_repetitions, ExperimentConfig, FaultInjection, SCHEMA_VERSION};
use hinge_overfit::init::{first_step_counts, init_report, InitParams};
use hinge_overfit::network::{
    gd_step, init_weights, logistic_loss, logistic_weight, output_sign, relu, Engine, LossKind, NetworkState, TrainConfig,
};
use hinge_overfit::rng::{stream, Purpose};
use hinge_overfit::sweep::{aggregate, run_sweep, run_sweep_ordered, RunSummary, SweepFixed, SweepSpec};
use hinge_overfit::verify::{estimate_test_error, CheckId, OutcomeThresholds};

fn small_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        data: DataConfig { n: 12, k: 1, d: 300, gamma: 0.05, rho: 0.3, seed: 0 },
        train: TrainConfig {
            eta: 0.01,
            lambda_w: 1e-3,
            loss_kind: LossKind::Hinge,
            max_iters: 3000,
            record_every: 5,
            engine: Engine::Weights,
        },
        m: 8,
        n_test: 500,
        trace_test: 50,
        verify: CheckId::ALL.to_vec(),
        master_seed: seed,
        reps: 1,
        alpha: 0.01,
        thresholds: OutcomeThresholds::default(),
        fault_injection: None,
    }
}

/// `ln(1 + e^{-z})` from its alternating series in `e^{-|z|}`, for `|z|` large.
fn softplus_series(z: f64) -> f64 {
    let u = (-z.abs()).exp();
    let tail: f64 = (1..=6).map(|k| (if k % 2 == 1 { 1.0 } else { -1.0 }) * u.powi(k) / k as f64).sum();
    if z >= 0.0 {
        tail
    } else {
        -z + tail
    }
}

#[test]
fn logistic_loss_matches_series_in_both_tails() {
    for z in [20.0, 35.0, 80.0, 700.0, 800.0, -20.0, -35.0, -80.0, -700.0] {
        assert_relative_eq!(logistic_loss(z), softplus_series(z), max_relative = 1e-14);
    }
    for z in [-3.0, -0.5, 0.0, 0.25, 2.0, 7.5] {
        assert_relative_eq!(logistic_loss(z), (1.0 + (-z).exp()).ln(), max_relative = 1e-14);
    }
    assert!(logistic_loss(700.0) > 0.0);
}

#[test]
fn logistic_weight_is_negative_loss_derivative() {
    for z in [-6.0, -1.0, 0.0, 0.3, 4.0] {
        let h = 1e-6;
        let fd = -(logistic_loss(z + h) - logistic_loss(z - h)) / (2.0 * h);
        assert_relative_eq!(logistic_weight(z), fd, max_relative = 1e-8);
    }
    assert_eq!(logistic_weight(1e4), 0.0);
    assert_eq!(logistic_weight(-1e4), 1.0);
}

/// Total logistic loss as a function of the weights, written out directly.
fn total_logistic(net: &NetworkState, sample: &hinge_overfit::data::TrainingSample) -> f64 {
    (0..sample.len())
        .map(|i| {
            let x = sample.point(i);
            let f: f64 = (0..net.neurons())
                .map(|j| output_sign(j) * relu(net.row(j).iter().zip(x).map(|(a, b)| a * b).sum()))
                .sum();
            logistic_loss(sample.labels[i] * f)
        })
        .sum()
}

#[test]
fn logistic_step_matches_finite_differences() {
    let cfg = DataConfig { n: 3, k: 1, d: 7, gamma: 0.2, rho: 0.5, seed: 0 };
    let sample = generate_sample(&cfg, &mut stream(3, Purpose::Data, 0)).unwrap();
    let net = init_weights(2, cfg.d, 0.5, &mut stream(3, Purpose::Init, 0)).unwrap();
    let train = TrainConfig { eta: 0.1, lambda_w: 0.5, loss_kind: LossKind::Logistic, max_iters: 1, record_every: 1, engine: Engine::Weights };
    let (next, _) = gd_step(&net, &sample, &train, 0).unwrap();
    let h = 1e-6;
    for idx in 0..net.weights.len() {
        let (mut up, mut down) = (net.clone(), net.clone());
        up.weights[idx] += h;
        down.weights[idx] -= h;
        let fd = (total_logistic(&up, &sample) - total_logistic(&down, &sample)) / (2.0 * h);
        let step = (net.weights[idx] - next.weights[idx]) / train.eta;
        assert!((fd - step).abs() < 1e-7, "coordinate {idx}: {fd} vs {step}");
    }
}

fn axis_network(m: usize, d: usize, axis: usize, scale: f64) -> NetworkState {
    let mut net = NetworkState::zeros(m, d);
    for j in 0..net.neurons() {
        net.row_mut(j)[axis] = output_sign(j) * scale;
    }
    net
}

#[test]
fn test_error_of_exact_networks() {
    let cfg = DataConfig { n: 10, k: 1, d: 50, gamma: 0.1, rho: 0.5, seed: 0 };
    // Aligned with the signal: every clean test point is classified correctly.
    assert_eq!(estimate_test_error(&axis_network(3, 50, 0, 1.0), &cfg, 2000, 1).unwrap().0, 0.0);
    assert_eq!(estimate_test_error(&axis_network(3, 50, 0, -1.0), &cfg, 2000, 1).unwrap().0, 1.0);
    // The zero network ties on every point, and ties count as errors.
    assert_eq!(estimate_test_error(&NetworkState::zeros(3, 50), &cfg, 500, 1).unwrap().0, 1.0);
}

#[test]
fn noise_axis_network_errs_half_the_time() {
    // f(x) = m x_2, so y f(x) has the sign of one noise coordinate.
    let cfg = DataConfig { n: 10, k: 1, d: 50, gamma: 0.1, rho: 0.5, seed: 0 };
    let (err, se) = estimate_test_error(&axis_network(4, 50, 1, 1.0), &cfg, 20_000, 9).unwrap();
    assert!((err - 0.5).abs() <= 4.0 * se, "error {err} se {se}");
}

#[test]
fn first_step_counts_agree_with_ledger() {
    let cfg = small_config(11);
    let r = run_experiment(&cfg).unwrap();
    let counts = first_step_counts(&r.initial_network, &r.sample).unwrap();
    let wc = r.ledger.window_counts(0, 1, &r.sample).unwrap();
    assert_eq!(counts.g, wc.g_j);
    assert_eq!(counts.b, wc.b_j);
    assert_eq!(counts.t, wc.t_j);
    assert_eq!(counts, r.init_report.sets.counts);
}

#[test]
fn runs_are_deterministic() {
    let a = run_experiment(&small_config(5)).unwrap();
    let b = run_experiment(&small_config(5)).unwrap();
    assert_eq!(a.traces, b.traces);
    assert_eq!(a.final_network, b.final_network);
    assert_eq!(a.ledger.checkpoints(), b.ledger.checkpoints());
    assert_eq!(a.verification, b.verification);
    let c = run_experiment(&small_config(6)).unwrap();
    assert_ne!(a.sample.points, c.sample.points);
}

#[test]
fn engines_agree_on_outcome() {
    let a = run_experiment(&small_config(8)).unwrap();
    let mut cfg = small_config(8);
    cfg.train.engine = Engine::Gram;
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.outcome, b.outcome);
    assert_eq!(a.markers.t_end, b.markers.t_end);
    assert_eq!(a.ledger.checkpoints(), b.ledger.checkpoints());
    for (x, y) in a.final_network.weights.iter().zip(&b.final_network.weights) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn healthy_runs_have_no_violations_and_faults_are_caught() {
    let mut cfg = small_config(21);
    cfg.data.rho = 0.9;
    let clean = run_experiment(&cfg).unwrap();
    assert!(clean.terminated);
    assert_eq!(clean.verification.total_violations(), 0, "{:#?}", clean.verification);
    assert!(clean.verification.get("neuron_inner_prod").unwrap().evaluated > 0);

    cfg.fault_injection = Some(FaultInjection { checkpoint: None, point: 2, neuron: 1, delta: 1 });
    let faulty = run_experiment(&cfg).unwrap();
    assert!(faulty.verification.get("neuron_inner_prod").unwrap().violation_count >= 1);
}

fn sweep_spec() -> SweepSpec {
    SweepSpec {
        schema_version: SCHEMA_VERSION,
        gamma_grid: vec![0.002, 0.05],
        n_grid: vec![8, 16],
        fixed: SweepFixed {
            d: 200,
            m: 6,
            eta: 0.01,
            corrupt_fraction: 0.1,
            max_iters: 2000,
            lambda_w: 1e-4,
            n_test: 300,
            loss_kind: LossKind::Hinge,
            delta: 0.05,
            engine: Engine::Weights,
        },
        reps: 2,
        master_seed: 3,
        overlay: None,
        thresholds: OutcomeThresholds::default(),
    }
}

#[test]
fn sweep_ignores_execution_order_and_threads() {
    let spec = sweep_spec();
    let a = run_sweep(&spec, Some(1)).unwrap();
    let b = run_sweep_ordered(&spec, &[3, 1, 0, 2], Some(3)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_cell_sweep_equals_repetitions() {
    let mut spec = sweep_spec();
    spec.gamma_grid = vec![0.05];
    spec.n_grid = vec![8];
    let sweep = run_sweep(&spec, None).unwrap();
    let mut cfg = spec.cell_config(0);
    cfg.reps = spec.reps;
    let runs: Vec<RunSummary> = run_repetitions(&cfg).unwrap().iter().map(RunSummary::from_result).collect();
    assert_eq!(sweep.cells[0].runs, runs);
    assert_eq!(sweep.cells[0].aggregate, aggregate(&runs));
}

/// Two points per class with γ well above ρ and d large enough for the coherence gate.
#[test]
fn benign_initialization_holds_in_most_seeds_at_a_feasible_scale() {
    let cfg = DataConfig { n: 20, k: 1, d: 300_000, gamma: 0.04, rho: 0.008, seed: 0 };
    let params = InitParams { gamma: cfg.gamma, rho: cfg.rho, eta: 0.01, lambda_w: 1e-6, alpha: 0.01 };
    let mut good = 0;
    let seeds = 5;
    for seed in 0..seeds {
        let sample = generate_sample(&cfg, &mut stream(seed, Purpose::Data, 0)).unwrap();
        let net = init_weights(20, cfg.d, params.lambda_w, &mut stream(seed, Purpose::Init, 0)).unwrap();
        let report = init_report(&sample, &net, max_noise_coherence(&sample), &params).unwrap();
        if report.benign_good.holds {
            good += 1;
        }
    }
    assert!(2 * good > seeds, "benign_good held in {good}/{seeds} seeds");
}

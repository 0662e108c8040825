//! Single training runs: sample, initialize, train to termination, verify, label.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::{coherence_from_gram, generate_sample, lambda_from_gram, noise_gram, DataConfig, TrainingSample};
use crate::error::{LabError, Result};
use crate::init::{init_report_from, InitParams, InitReport};
use crate::ledger::UpdateLedger;
use crate::network::{init_weights, loss, LossKind, NetworkState, StepRecord, TrainConfig};
use crate::rng::{derive_run_seed, stream, Purpose};
use crate::trainer::Trainer;
use crate::verify::{
    check_lambda_bounds, check_windows, classify_outcome, estimate_test_metrics, margins_on, predicted_t1, test_points, CheckId,
    FinalState, OnlineChecks, OutcomeLabel, OutcomeThresholds, PhaseMarkers, Snapshot, TestEstimate, TrajectoryContext,
    VerificationReport,
};

pub const SCHEMA_VERSION: u32 = 1;

fn one() -> usize {
    1
}

fn default_alpha() -> f64 {
    0.01
}

/// Adds `delta` to one stored ledger count before verification runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultInjection {
    /// Checkpoint position; the last checkpoint when absent.
    #[serde(default)]
    pub checkpoint: Option<usize>,
    /// One-based point index.
    pub point: usize,
    /// One-based neuron index.
    pub neuron: usize,
    pub delta: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub m: usize,
    pub n_test: usize,
    /// Test points evaluated at every recorded iteration for the traces.
    #[serde(default)]
    pub trace_test: usize,
    #[serde(default)]
    pub verify: Vec<CheckId>,
    pub master_seed: u64,
    #[serde(default = "one")]
    pub reps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub thresholds: OutcomeThresholds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_injection: Option<FaultInjection>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(LabError::InvalidConfig(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.data.validate()?;
        self.train.validate()?;
        if self.m == 0 {
            return Err(LabError::InvalidConfig("m must be at least 1".into()));
        }
        if self.reps == 0 {
            return Err(LabError::InvalidConfig("reps must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(LabError::InvalidConfig("alpha must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Copy whose data seed equals the master seed, as used by the run.
    pub fn normalized(&self) -> Self {
        let mut c = self.clone();
        c.data.seed = c.master_seed;
        c
    }

    /// Configuration of repetition `rep`, a single run with its derived seed.
    pub fn repetition(&self, rep: usize) -> Self {
        let mut c = self.clone();
        c.master_seed = derive_run_seed(self.master_seed, 0, rep as u64);
        c.reps = 1;
        c.normalized()
    }

    pub fn checks(&self) -> BTreeSet<CheckId> {
        self.verify.iter().copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: u64,
    pub total_loss: f64,
    pub clean_loss: f64,
    pub corrupt_loss: f64,
    pub clean_accuracy: f64,
    pub corrupt_accuracy: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: u64,
    pub total_loss: f64,
    pub clean_loss_sum: f64,
    pub corrupt_loss_sum: f64,
    pub active_pairs: usize,
}

pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub sample: TrainingSample,
    pub initial_network: NetworkState,
    pub final_network: NetworkState,
    pub traces: Vec<TraceRow>,
    pub iterations: Vec<IterationRow>,
    pub markers: PhaseMarkers,
    pub terminated: bool,
    pub final_losses: Vec<f64>,
    pub final_margins: Vec<f64>,
    pub corrupt_inactive: bool,
    pub outcome: OutcomeLabel,
    pub test: Option<TestEstimate>,
    pub coherence: f64,
    pub init_report: InitReport,
    pub ledger: UpdateLedger,
    pub verification: VerificationReport,
    pub wall_time: Duration,
}

impl ExperimentResult {
    pub fn mean_loss(&self, idx: &[usize]) -> f64 {
        mean_over(&self.final_losses, idx)
    }
}

fn mean_over(v: &[f64], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        0.0
    } else {
        idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64
    }
}

fn accuracy_over(margins: &[f64], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        1.0
    } else {
        idx.iter().filter(|&&i| margins[i] > 0.0).count() as f64 / idx.len() as f64
    }
}

struct TraceSet {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

fn trace_row(record: &StepRecord, sample: &TrainingSample, net: Option<&NetworkState>, tests: &TraceSet, kind: LossKind) -> TraceRow {
    let (test_loss, test_accuracy) = match net {
        Some(net) if !tests.ys.is_empty() => {
            let m = margins_on(net, &tests.xs, &tests.ys);
            let l = m.iter().map(|&z| loss(kind, z)).sum::<f64>() / m.len() as f64;
            let a = m.iter().filter(|&&z| z > 0.0).count() as f64 / m.len() as f64;
            (Some(l), Some(a))
        }
        _ => (None, None),
    };
    TraceRow {
        iteration: record.iteration,
        total_loss: record.total_loss(),
        clean_loss: mean_over(&record.losses, &sample.clean_idx),
        corrupt_loss: mean_over(&record.losses, &sample.corrupt_idx),
        clean_accuracy: accuracy_over(&record.margins, &sample.clean_idx),
        corrupt_accuracy: accuracy_over(&record.margins, &sample.corrupt_idx),
        test_loss,
        test_accuracy,
    }
}

fn iteration_row(record: &StepRecord, sample: &TrainingSample) -> IterationRow {
    IterationRow {
        iteration: record.iteration,
        total_loss: record.total_loss(),
        clean_loss_sum: sample.clean_idx.iter().map(|&i| record.losses[i]).sum(),
        corrupt_loss_sum: sample.corrupt_idx.iter().map(|&i| record.losses[i]).sum(),
        active_pairs: record.active_pairs.len(),
    }
}

/// Runs one experiment with `cfg.master_seed` as the run seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_inner(cfg, None)
}

/// Re-simulates `cfg` but verifies the trajectory against `ledger`, typically
/// one read back from disk. The returned result still carries the recomputed ledger.
pub fn run_experiment_with_ledger(cfg: &ExperimentConfig, ledger: UpdateLedger) -> Result<ExperimentResult> {
    run_inner(cfg, Some(ledger))
}

fn run_inner(cfg: &ExperimentConfig, external: Option<UpdateLedger>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let started = Instant::now();
    let cfg = cfg.normalized();
    let seed = cfg.master_seed;
    let wanted = cfg.checks();
    let kind = cfg.train.loss_kind;
    let record_every = cfg.train.record_every;

    let sample = generate_sample(&cfg.data, &mut stream(seed, Purpose::Data, 0))?;
    let net0 = init_weights(cfg.m, cfg.data.d, cfg.train.lambda_w, &mut stream(seed, Purpose::Init, 0))?;
    let gram = noise_gram(&sample);
    let coherence = coherence_from_gram(&gram, sample.len());
    let needs_lambda = [CheckId::LambdaBounds, CheckId::PreactivationSandwich, CheckId::LossProgress, CheckId::UpdateCountBounds]
        .iter()
        .any(|c| wanted.contains(c));
    let lambda = if needs_lambda {
        Some(lambda_from_gram(&sample, &gram))
    } else {
        None
    };
    drop(gram);

    let mut trainer = Trainer::new(&sample, net0.clone(), cfg.train.clone())?;
    let neurons = trainer.neurons();
    let params = InitParams {
        gamma: cfg.data.gamma,
        rho: cfg.data.rho,
        eta: cfg.train.eta,
        lambda_w: cfg.train.lambda_w,
        alpha: cfg.alpha,
    };
    let init_report = init_report_from(&sample, trainer.preactivations(), neurons, coherence, &params);

    let (xs, ys) = test_points(&cfg.data, seed, 0, cfg.trace_test)?;
    let tests = TraceSet { xs, ys };
    let keep_snapshots = wanted.contains(&CheckId::PreactivationSandwich)
        || wanted.contains(&CheckId::LossProgress)
        || wanted.contains(&CheckId::UpdateCountBounds);
    let mut online = OnlineChecks::new(&init_report, &sample, cfg.m, cfg.train.eta, kind, &wanted);
    let mut ledger = UpdateLedger::new(sample.len(), neurons, record_every);
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut traces = Vec::new();
    let mut iterations = Vec::new();
    let mut t_zero = None;

    let (terminated, last) = loop {
        let t = trainer.iteration();
        let record = trainer.record();
        if t_zero.is_none() && record.margins.iter().any(|&z| z >= 1.0) {
            t_zero = Some(t);
        }
        iterations.push(iteration_row(&record, &sample));
        online.observe(trainer.preactivations(), &record, &sample);
        let terminal = kind == LossKind::Hinge && record.active_pairs.is_empty();
        let stop = terminal || t == cfg.train.max_iters;
        if t % record_every == 0 || stop {
            let net = if tests.ys.is_empty() { None } else { Some(trainer.network()) };
            traces.push(trace_row(&record, &sample, net.as_ref(), &tests, kind));
            if keep_snapshots {
                snapshots.push(Snapshot {
                    iteration: t,
                    pre: trainer.preactivations().to_vec(),
                    margins: record.margins.clone(),
                    losses: record.losses.clone(),
                });
            }
        }
        if stop {
            ledger.checkpoint_now();
            break (terminal, record);
        }
        trainer.apply(&record)?;
        ledger.record(&record)?;
    };

    let final_network = trainer.network();
    let final_pre = trainer.preactivations();
    let tn = sample.len();
    let corrupt_inactive = sample.corrupt_idx.iter().all(|&i| (0..neurons).all(|j| final_pre[j * tn + i] <= 0.0));
    let test = if cfg.n_test > 0 {
        Some(estimate_test_metrics(&final_network, &cfg.data, cfg.n_test, seed, kind)?)
    } else {
        None
    };
    let outcome = classify_outcome(
        &FinalState { terminated, losses: &last.losses, sample: &sample, corrupt_inactive },
        test.map(|t| t.error),
        &cfg.thresholds,
    );
    let markers = PhaseMarkers {
        t_zero,
        t_one: Some(predicted_t1(sample.n, sample.k, cfg.m, cfg.data.gamma, cfg.data.rho, cfg.train.eta)),
        t_end: if terminated { Some(last.iteration) } else { None },
        t_one_outside_small_step: cfg.train.eta * cfg.m as f64 > 0.01,
    };

    let mut external = external;
    if let Some(ext) = &external {
        if ext.points() != tn || ext.neurons() != neurons {
            return Err(LabError::Range("supplied ledger does not match the configuration".into()));
        }
    }
    let checked: &mut UpdateLedger = match external.as_mut() {
        Some(ext) => ext,
        None => &mut ledger,
    };
    if let Some(f) = &cfg.fault_injection {
        let cp = f.checkpoint.unwrap_or(checked.checkpoints().len() - 1);
        if f.point == 0 || f.neuron == 0 || f.point > tn || f.neuron > neurons {
            return Err(LabError::InvalidConfig("fault injection indices out of range".into()));
        }
        checked.perturb(cp, f.point - 1, f.neuron - 1, f.delta)?;
    }
    let checked: &UpdateLedger = checked;

    let mut verification = VerificationReport::default();
    if let Some(lambda) = &lambda {
        if wanted.contains(&CheckId::LambdaBounds) {
            verification.insert("lambda_il", check_lambda_bounds(lambda, &sample, coherence, cfg.data.gamma, cfg.data.rho));
        }
        let ctx = TrajectoryContext { sample: &sample, lambda, gamma: cfg.data.gamma, rho: cfg.data.rho, eta: cfg.train.eta, neurons };
        check_windows(&ctx, checked, &snapshots, coherence, kind, &wanted, &mut verification);
    }
    online.finish(&mut verification, &wanted);

    Ok(ExperimentResult {
        config: cfg,
        initial_network: net0,
        final_network,
        traces,
        iterations,
        markers,
        terminated,
        final_losses: last.losses,
        final_margins: last.margins,
        corrupt_inactive,
        outcome,
        test,
        coherence,
        init_report,
        ledger,
        verification,
        wall_time: started.elapsed(),
        sample,
    })
}

/// Runs every repetition with seeds derived from the master seed.
pub fn run_repetitions(cfg: &ExperimentConfig) -> Result<Vec<ExperimentResult>> {
    cfg.validate()?;
    (0..cfg.reps).map(|r| run_experiment(&cfg.repetition(r))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Engine;

    fn tiny(gamma: f64, k: usize) -> ExperimentConfig {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            data: DataConfig { n: 4, k, d: 30, gamma, rho: 0.9, seed: 0 },
            train: TrainConfig {
                eta: 0.05,
                lambda_w: 1e-3,
                loss_kind: LossKind::Hinge,
                max_iters: 2000,
                record_every: 1,
                engine: Engine::Weights,
            },
            m: 3,
            n_test: 200,
            trace_test: 20,
            verify: CheckId::ALL.to_vec(),
            master_seed: 5,
            reps: 1,
            alpha: 0.01,
            thresholds: OutcomeThresholds::default(),
            fault_injection: None,
        }
    }

    #[test]
    fn pure_signal_run_is_benign() {
        let r = run_experiment(&tiny(1.0, 0)).unwrap();
        assert!(r.terminated);
        assert!(r.final_losses.iter().all(|&l| l == 0.0));
        assert_eq!(r.outcome, OutcomeLabel::Benign);
        assert_eq!(r.test.unwrap().error, 0.0);
    }

    #[test]
    fn run_is_deterministic() {
        let a = run_experiment(&tiny(0.2, 1)).unwrap();
        let b = run_experiment(&tiny(0.2, 1)).unwrap();
        assert_eq!(a.final_network, b.final_network);
        assert_eq!(a.traces, b.traces);
        assert_eq!(a.verification, b.verification);
    }

    #[test]
    fn markers_are_ordered() {
        let r = run_experiment(&tiny(0.2, 1)).unwrap();
        let (tz, te) = (r.markers.t_zero.unwrap(), r.markers.t_end.unwrap());
        assert!(tz <= te);
        assert!(r.markers.t_one.unwrap() > 0.0);
    }

    #[test]
    fn schema_version_is_enforced() {
        let mut c = tiny(0.2, 1);
        c.schema_version = 7;
        assert!(matches!(run_experiment(&c), Err(LabError::InvalidConfig(_))));
    }
}

//! `(γ, n)` phase-diagram sweeps and boundary fitting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{coherence_target, DataConfig};
use crate::error::{LabError, Result};
use crate::experiment::{run_experiment, ExperimentConfig, ExperimentResult, SCHEMA_VERSION};
use crate::network::{Engine, LossKind, TrainConfig};
use crate::rng::derive_run_seed;
use crate::verify::{OutcomeLabel, OutcomeThresholds};

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "HINGE_OVERFIT_THREADS";

fn default_lambda_w() -> f64 {
    1e-4
}

fn default_n_test() -> usize {
    10_000
}

fn default_loss() -> LossKind {
    LossKind::Hinge
}

fn default_delta() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepFixed {
    pub d: usize,
    pub m: usize,
    pub eta: f64,
    pub corrupt_fraction: f64,
    pub max_iters: u64,
    #[serde(default = "default_lambda_w")]
    pub lambda_w: f64,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_loss")]
    pub loss_kind: LossKind,
    /// Failure probability used to derive each cell's coherence target ρ.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub engine: Engine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub schema_version: u32,
    pub gamma_grid: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub fixed: SweepFixed,
    pub reps: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub overlay: Option<f64>,
    #[serde(default)]
    pub thresholds: OutcomeThresholds,
}

/// `count` values log-spaced over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

/// Log-spaced integers over `[lo, hi]`, rounded.
pub fn log_grid_usize(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    log_grid(lo as f64, hi as f64, count).into_iter().map(|v| v.round() as usize).collect()
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(LabError::InvalidConfig(format!("schema_version {} is not supported", self.schema_version)));
        }
        if self.gamma_grid.is_empty() || self.n_grid.is_empty() {
            return Err(LabError::InvalidConfig("grids must be non-empty".into()));
        }
        if self.gamma_grid.iter().any(|&g| !(g > 0.0 && g <= 1.0)) {
            return Err(LabError::InvalidConfig("gamma grid values must lie in (0, 1]".into()));
        }
        if self.n_grid.contains(&0) {
            return Err(LabError::InvalidConfig("n grid values must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.fixed.corrupt_fraction) {
            return Err(LabError::InvalidConfig("corrupt_fraction must lie in [0, 0.5)".into()));
        }
        if self.reps == 0 {
            return Err(LabError::InvalidConfig("reps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.gamma_grid.len() * self.n_grid.len()
    }

    /// Row-major cell index: rows follow the n grid, columns the γ grid.
    pub fn cell_index(&self, row: usize, col: usize) -> usize {
        row * self.gamma_grid.len() + col
    }

    /// Experiment configuration of one cell; its master seed is the sweep seed.
    pub fn cell_config(&self, cell: usize) -> ExperimentConfig {
        let row = cell / self.gamma_grid.len();
        let col = cell % self.gamma_grid.len();
        let n = self.n_grid[row];
        let f = &self.fixed;
        let rho = coherence_target(n, f.d, f.delta).min(0.999);
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            data: DataConfig {
                n,
                k: (f.corrupt_fraction * n as f64).round() as usize,
                d: f.d,
                gamma: self.gamma_grid[col],
                rho,
                seed: 0,
            },
            train: TrainConfig {
                eta: f.eta,
                lambda_w: f.lambda_w,
                loss_kind: f.loss_kind,
                max_iters: f.max_iters,
                record_every: f.max_iters,
                engine: f.engine,
            },
            m: f.m,
            n_test: f.n_test,
            trace_test: 0,
            verify: Vec::new(),
            master_seed: self.master_seed,
            reps: self.reps,
            alpha: 0.01,
            thresholds: self.thresholds,
            fault_injection: None,
        }
    }

    /// Configuration of repetition `rep` in `cell`.
    pub fn run_config(&self, cell: usize, rep: usize) -> ExperimentConfig {
        let mut c = self.cell_config(cell);
        c.master_seed = derive_run_seed(self.master_seed, cell as u64, rep as u64);
        c.reps = 1;
        c.normalized()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub outcome: Option<OutcomeLabel>,
    pub terminated: bool,
    pub t_end: Option<u64>,
    pub clean_loss: f64,
    pub corrupt_loss: f64,
    pub total_loss: f64,
    pub test_loss: Option<f64>,
    pub test_error: Option<f64>,
    pub error: Option<String>,
}

impl RunSummary {
    pub fn from_result(r: &ExperimentResult) -> Self {
        let s = &r.sample;
        let all: Vec<usize> = (0..s.len()).collect();
        RunSummary {
            seed: r.config.master_seed,
            outcome: Some(r.outcome),
            terminated: r.terminated,
            t_end: r.markers.t_end,
            clean_loss: r.mean_loss(&s.clean_idx),
            corrupt_loss: r.mean_loss(&s.corrupt_idx),
            total_loss: r.mean_loss(&all),
            test_loss: r.test.map(|t| t.mean_loss),
            test_error: r.test.map(|t| t.error),
            error: None,
        }
    }

    fn failed(seed: u64, e: &LabError) -> Self {
        RunSummary {
            seed,
            outcome: None,
            terminated: false,
            t_end: None,
            clean_loss: f64::NAN,
            corrupt_loss: f64::NAN,
            total_loss: f64::NAN,
            test_loss: None,
            test_error: None,
            error: Some(e.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub clean_loss: f64,
    pub corrupt_loss: f64,
    pub total_loss: f64,
    pub test_loss: f64,
    pub test_error: f64,
    pub outcome: OutcomeLabel,
    pub failures: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0, 0usize);
    for v in values {
        s += v;
        c += 1;
    }
    if c == 0 {
        f64::NAN
    } else {
        s / c as f64
    }
}

/// Majority label; ties and empty input give `Mixed`.
pub fn outcome_mode(labels: &[OutcomeLabel]) -> OutcomeLabel {
    let mut counts: Vec<(OutcomeLabel, usize)> = Vec::new();
    for &l in labels {
        match counts.iter_mut().find(|(x, _)| *x == l) {
            Some((_, c)) => *c += 1,
            None => counts.push((l, 1)),
        }
    }
    let best = counts.iter().map(|(_, c)| *c).max().unwrap_or(0);
    let leaders: Vec<OutcomeLabel> = counts.iter().filter(|(_, c)| *c == best).map(|(l, _)| *l).collect();
    if leaders.len() == 1 {
        leaders[0]
    } else {
        OutcomeLabel::Mixed
    }
}

pub fn aggregate(runs: &[RunSummary]) -> CellAggregate {
    let ok: Vec<&RunSummary> = runs.iter().filter(|r| r.error.is_none()).collect();
    let labels: Vec<OutcomeLabel> = ok.iter().filter_map(|r| r.outcome).collect();
    CellAggregate {
        clean_loss: mean(ok.iter().map(|r| r.clean_loss)),
        corrupt_loss: mean(ok.iter().map(|r| r.corrupt_loss)),
        total_loss: mean(ok.iter().map(|r| r.total_loss)),
        test_loss: mean(ok.iter().filter_map(|r| r.test_loss)),
        test_error: mean(ok.iter().filter_map(|r| r.test_error)),
        outcome: outcome_mode(&labels),
        failures: runs.len() - ok.len(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub n: usize,
    pub gamma: f64,
    pub runs: Vec<RunSummary>,
    pub aggregate: CellAggregate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    /// Row-major over (n grid, γ grid).
    pub cells: Vec<CellResult>,
}

impl SweepResult {
    /// Rows follow the n grid, columns the γ grid.
    pub fn tensor(&self, f: impl Fn(&CellAggregate) -> f64) -> Vec<Vec<f64>> {
        let cols = self.spec.gamma_grid.len();
        self.cells.chunks(cols).map(|row| row.iter().map(|c| f(&c.aggregate)).collect()).collect()
    }

    pub fn outcomes(&self) -> Vec<Vec<OutcomeLabel>> {
        let cols = self.spec.gamma_grid.len();
        self.cells.chunks(cols).map(|row| row.iter().map(|c| c.aggregate.outcome).collect()).collect()
    }

    pub fn fit(&self) -> Result<BoundaryFit> {
        fit_boundary(&self.outcomes(), &self.spec.gamma_grid, &self.spec.n_grid)
    }
}

fn run_cell(spec: &SweepSpec, cell: usize) -> CellResult {
    let runs = (0..spec.reps)
        .map(|rep| {
            let cfg = spec.run_config(cell, rep);
            match run_experiment(&cfg) {
                Ok(r) => RunSummary::from_result(&r),
                Err(e) => RunSummary::failed(cfg.master_seed, &e),
            }
        })
        .collect::<Vec<_>>();
    let cfg = spec.cell_config(cell);
    CellResult { n: cfg.data.n, gamma: cfg.data.gamma, aggregate: aggregate(&runs), runs }
}

/// Worker count from an explicit value, then the environment, then rayon's default.
pub fn resolve_threads(explicit: Option<usize>) -> usize {
    explicit
        .filter(|&t| t > 0)
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()).filter(|&t: &usize| t > 0))
        .unwrap_or_else(rayon::current_num_threads)
}

/// Runs cells in the given execution order; results are stored by cell index.
pub fn run_sweep_ordered(spec: &SweepSpec, order: &[usize], threads: Option<usize>) -> Result<SweepResult> {
    spec.validate()?;
    let total = spec.cells();
    let mut seen = vec![false; total];
    for &c in order {
        if c >= total || std::mem::replace(&mut seen[c], true) {
            return Err(LabError::InvalidArgument("execution order must be a permutation of the cells".into()));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(LabError::InvalidArgument("execution order must cover every cell".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_threads(threads))
        .build()
        .map_err(|e| LabError::InvalidConfig(format!("thread pool: {e}")))?;
    let computed: Vec<(usize, CellResult)> =
        pool.install(|| order.par_iter().map(|&c| (c, run_cell(spec, c))).collect());
    let mut slots: Vec<Option<CellResult>> = vec![None; total];
    for (c, r) in computed {
        slots[c] = Some(r);
    }
    Ok(SweepResult { spec: spec.clone(), cells: slots.into_iter().map(|c| c.expect("every cell ran")).collect() })
}

pub fn run_sweep(spec: &SweepSpec, threads: Option<usize>) -> Result<SweepResult> {
    let order: Vec<usize> = (0..spec.cells()).collect();
    run_sweep_ordered(spec, &order, threads)
}

/// Recomputes a single cell in isolation.
pub fn rerun_cell(spec: &SweepSpec, cell: usize) -> Result<CellResult> {
    spec.validate()?;
    if cell >= spec.cells() {
        return Err(LabError::InvalidArgument(format!("cell {cell} out of range")));
    }
    Ok(run_cell(spec, cell))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFit {
    pub c: f64,
    /// `(n, γ*)` for each row with a NonBenign-to-Benign flip.
    pub thresholds: Vec<(usize, f64)>,
    pub residuals: Vec<f64>,
    pub non_increasing: bool,
}

/// Per-row flip midpoint between the last NonBenign cell below the first
/// Benign cell, then the least-squares `c` in `γ* = c / n`.
pub fn fit_boundary(outcomes: &[Vec<OutcomeLabel>], gamma_grid: &[f64], n_grid: &[usize]) -> Result<BoundaryFit> {
    if outcomes.len() != n_grid.len() || outcomes.iter().any(|r| r.len() != gamma_grid.len()) {
        return Err(LabError::InvalidArgument("outcome tensor does not match the grids".into()));
    }
    let mut thresholds = Vec::new();
    for (row, &n) in outcomes.iter().zip(n_grid) {
        let Some(b) = row.iter().position(|&l| l == OutcomeLabel::Benign) else { continue };
        let Some(a) = row[..b].iter().rposition(|&l| l == OutcomeLabel::NonBenign) else { continue };
        thresholds.push((n, 0.5 * (gamma_grid[a] + gamma_grid[b])));
    }
    if thresholds.is_empty() {
        return Err(LabError::NotApplicable("no NonBenign-to-Benign transition in any row".into()));
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(n, g) in &thresholds {
        let x = 1.0 / n as f64;
        sxy += x * g;
        sxx += x * x;
    }
    let c = sxy / sxx;
    let residuals = thresholds.iter().map(|&(n, g)| g - c / n as f64).collect();
    let mut sorted = thresholds.clone();
    sorted.sort_by_key(|&(n, _)| n);
    let non_increasing = sorted.windows(2).all(|w| w[1].1 <= w[0].1);
    Ok(BoundaryFit { c, thresholds, residuals, non_increasing })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-4, 0.1, 20);
        assert_eq!(g.len(), 20);
        assert!((g[0] - 1e-4).abs() < 1e-18 && (g[19] - 0.1).abs() < 1e-15);
        assert_eq!(log_grid_usize(20, 400, 10), vec![20, 28, 39, 54, 76, 106, 147, 206, 287, 400]);
    }

    #[test]
    fn synthetic_flip_recovers_c() {
        let gammas = log_grid(1e-4, 0.1, 40);
        let ns = log_grid_usize(20, 400, 10);
        let outcomes: Vec<Vec<OutcomeLabel>> = ns
            .iter()
            .map(|&n| {
                gammas
                    .iter()
                    .map(|&g| if g < 0.6 / n as f64 { OutcomeLabel::NonBenign } else { OutcomeLabel::Benign })
                    .collect()
            })
            .collect();
        let fit = fit_boundary(&outcomes, &gammas, &ns).unwrap();
        // Grid ratio between neighbours is 10^(3/39) ≈ 1.19.
        assert!((fit.c - 0.6).abs() < 0.6 * 0.2, "c = {}", fit.c);
        assert!(fit.non_increasing);
    }

    #[test]
    fn no_transition_is_not_applicable() {
        let outcomes = vec![vec![OutcomeLabel::Benign, OutcomeLabel::Benign]];
        assert!(matches!(fit_boundary(&outcomes, &[0.1, 0.2], &[10]), Err(LabError::NotApplicable(_))));
    }

    #[test]
    fn mode_breaks_ties_to_mixed() {
        use OutcomeLabel::*;
        assert_eq!(outcome_mode(&[Benign, Benign, NonBenign]), Benign);
        assert_eq!(outcome_mode(&[Benign, NonBenign]), Mixed);
        assert_eq!(outcome_mode(&[]), Mixed);
    }
}

//! Command-line shell over the `hinge_overfit` library.
//!
//! Exit codes: 0 success (and, for `verify`, no violations), 1 domain error,
//! 2 usage or configuration error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use hinge_overfit::data::{generate_sample, max_noise_coherence};
use hinge_overfit::experiment::{run_experiment, run_experiment_with_ledger, ExperimentConfig, ExperimentResult};
use hinge_overfit::init::coherence_limit;
use hinge_overfit::io;
use hinge_overfit::plot;
use hinge_overfit::rng::{stream, Purpose};
use hinge_overfit::sweep::{run_sweep, SweepSpec};
use hinge_overfit::verify::{CheckId, CheckResult, CheckStatus, LemmaViolation, VerificationReport};
use hinge_overfit::{LabError, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "hinge-overfit", version, about = "Simulate, verify and plot hinge-loss training of leaky two-layer ReLU networks")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Overrides the master seed of the config or sweep spec.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for test-error estimation and sweeps.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the checkpoint and trace interval.
    #[arg(long, global = true)]
    pub record_every: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a training sample and report its noise coherence.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, verify and write the run artifacts.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the initial and final weights as JSON.
        #[arg(long)]
        save_network: bool,
    },
    /// Re-simulate a run directory and check it against its persisted artifacts.
    Verify {
        #[arg(long)]
        run: PathBuf,
    },
    /// Run a (γ, n) sweep and write the result tensors.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render an SVG from a trace or tensor CSV.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    Line,
    Heatmap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotSpec {
    pub kind: PlotKind,
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub overlay: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// JSON plot spec; replaces the other plot flags.
    #[arg(long, conflicts_with_all = ["kind", "input", "out"])]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<PlotKind>,
    /// Trace CSVs for line plots (repeatable) or one tensor CSV for heatmaps.
    #[arg(long)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub title: Option<String>,
    /// Draws γ = c / n on a heatmap.
    #[arg(long)]
    pub overlay: Option<f64>,
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(t) = cli.global.threads {
        // The global pool can only be set once per process; later calls keep the first size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            if e.is_config_error() {
                eprintln!("invalid-config: {e}");
                EXIT_CONFIG
            } else {
                eprintln!("error: {e}");
                EXIT_DOMAIN
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let g = &cli.global;
    match &cli.command {
        Command::GenData { config, out } => cmd_gen_data(config, out, g),
        Command::Train { config, out, save_network } => cmd_train(config, out, *save_network, g),
        Command::Verify { run } => cmd_verify(run, g),
        Command::Sweep { spec, out } => cmd_sweep(spec, out, g),
        Command::Plot(args) => cmd_plot(args),
    }
}

fn load_config(path: &Path, g: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = io::read_json(path)?;
    if let Some(s) = g.seed {
        cfg.master_seed = s;
    }
    if let Some(r) = g.record_every {
        cfg.train.record_every = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_gen_data(config: &Path, out: &Path, g: &GlobalArgs) -> Result<i32> {
    let cfg = load_config(config, g)?.normalized();
    let sample = generate_sample(&cfg.data, &mut stream(cfg.master_seed, Purpose::Data, 0))?;
    io::write_sample(out, &sample)?;
    let coherence = max_noise_coherence(&sample);
    let limit = coherence_limit(cfg.data.gamma, cfg.data.rho);
    println!("wrote {} points of dimension {} to {}", sample.len(), sample.d, out.display());
    println!(
        "coherence {} vs rho/(1-gamma) {}: {}",
        io::fmt_f64(coherence),
        io::fmt_f64(limit),
        if coherence <= limit { "within" } else { "exceeds" }
    );
    Ok(EXIT_OK)
}

fn report_run(label: &str, r: &ExperimentResult) {
    let t_end = r.markers.t_end.map(|t| t.to_string()).unwrap_or_else(|| "none".into());
    let test = r.test.map(|t| io::fmt_f64(t.error)).unwrap_or_else(|| "n/a".into());
    println!(
        "{label}outcome {} t_end {t_end} test_error {test} violations {}",
        r.outcome.as_str(),
        r.verification.total_violations()
    );
}

pub fn cmd_train(config: &Path, out: &Path, save_network: bool, g: &GlobalArgs) -> Result<i32> {
    let cfg = load_config(config, g)?;
    let mut violations = 0;
    for rep in 0..cfg.reps {
        let run_cfg = if cfg.reps == 1 { cfg.clone() } else { cfg.repetition(rep) };
        let dir = if cfg.reps == 1 { out.to_path_buf() } else { out.join(format!("rep-{}", rep + 1)) };
        let result = run_experiment(&run_cfg)?;
        io::write_run(&dir, &result)?;
        if save_network {
            io::write_network(&dir.join("initial_network.json"), &result.initial_network)?;
            io::write_network(&dir.join("final_network.json"), &result.final_network)?;
        }
        let label = if cfg.reps == 1 { String::new() } else { format!("rep {}: ", rep + 1) };
        report_run(&label, &result);
        violations += result.verification.total_violations();
    }
    Ok(if violations == 0 { EXIT_OK } else { EXIT_DOMAIN })
}

fn consistency(detail: Vec<String>, lemma: &str) -> CheckResult {
    let violations: Vec<LemmaViolation> = detail
        .iter()
        .map(|d| LemmaViolation {
            lemma: lemma.into(),
            iteration: 0,
            window_start: None,
            subject: Vec::new(),
            lhs: 0.0,
            rhs: 0.0,
            detail: d.clone(),
        })
        .collect();
    CheckResult {
        status: if violations.is_empty() { CheckStatus::Pass } else { CheckStatus::Violated },
        reason: String::new(),
        evaluated: 1,
        violation_count: violations.len() as u64,
        violations,
    }
}

pub fn cmd_verify(run: &Path, g: &GlobalArgs) -> Result<i32> {
    if !run.join(io::CONFIG_FILE).is_file() {
        return Err(LabError::Artifact { path: run.display().to_string(), detail: "no run_config.json".into() });
    }
    let mut cfg = io::read_run_config(run)?;
    if let Some(r) = g.record_every {
        cfg.train.record_every = r;
    }
    // Any injected fault is already part of the persisted ledger.
    cfg.fault_injection = None;
    cfg.verify = CheckId::ALL.to_vec();
    let points = 2 * cfg.data.n;
    let neurons = 2 * cfg.m;
    let stored = io::read_ledger_pairs(&run.join(io::LEDGER_PAIRS_FILE), points, neurons)?;
    let stored_checkpoints = stored.checkpoints().to_vec();
    let traces = io::read_traces(&run.join(io::TRACE_FILE))?;
    let result = run_experiment_with_ledger(&cfg, stored)?;

    let mut report: VerificationReport = result.verification.clone();
    let mut trace_issues = Vec::new();
    if traces.len() != result.traces.len() {
        trace_issues.push(format!("trace has {} rows, re-simulation produced {}", traces.len(), result.traces.len()));
    }
    for (a, b) in traces.iter().zip(&result.traces) {
        if a != b {
            trace_issues.push(format!("trace row at iteration {} differs from re-simulation", b.iteration));
        }
    }
    report.insert("trace_replay", consistency(trace_issues, "trace_replay"));
    let mut ledger_issues = Vec::new();
    let fresh = result.ledger.checkpoints();
    if fresh.len() != stored_checkpoints.len() {
        ledger_issues.push(format!("ledger has {} checkpoints, re-simulation produced {}", stored_checkpoints.len(), fresh.len()));
    }
    for (a, b) in stored_checkpoints.iter().zip(fresh) {
        if a != b {
            ledger_issues.push(format!("ledger checkpoint {} differs from re-simulation", b.iteration));
        }
    }
    report.insert("ledger_replay", consistency(ledger_issues, "ledger_replay"));

    io::write_json(&run.join("verify_report.json"), &report)?;
    for (name, check) in &report.checks {
        let status = match check.status {
            CheckStatus::Pass => "pass",
            CheckStatus::Violated => "VIOLATED",
            CheckStatus::NotApplicable => "not applicable",
        };
        println!("{name}: {status} ({} violations)", check.violation_count);
    }
    Ok(if report.has_violations() { EXIT_DOMAIN } else { EXIT_OK })
}

pub fn cmd_sweep(spec_path: &Path, out: &Path, g: &GlobalArgs) -> Result<i32> {
    let mut spec: SweepSpec = io::read_json(spec_path)?;
    if let Some(s) = g.seed {
        spec.master_seed = s;
    }
    spec.validate()?;
    let result = run_sweep(&spec, g.threads)?;
    io::write_sweep(out, &result)?;
    let failures: usize = result.cells.iter().map(|c| c.aggregate.failures).sum();
    if failures > 0 {
        println!("{failures} run(s) failed; see manifest.json");
    }
    match result.fit() {
        Ok(fit) => println!(
            "boundary c {} over {} rows, non-increasing {}",
            io::fmt_f64(fit.c),
            fit.thresholds.len(),
            fit.non_increasing
        ),
        Err(e) => println!("boundary fit unavailable: {e}"),
    }
    Ok(EXIT_OK)
}

pub fn cmd_plot(args: &PlotArgs) -> Result<i32> {
    let spec = match &args.spec {
        Some(p) => io::read_json::<PlotSpec>(p)?,
        None => PlotSpec {
            kind: args.kind.ok_or_else(|| LabError::InvalidConfig("--kind is required".into()))?,
            inputs: args.input.clone(),
            output: args.out.clone().ok_or_else(|| LabError::InvalidConfig("--out is required".into()))?,
            title: args.title.clone(),
            overlay: args.overlay,
        },
    };
    let svg = render_plot(&spec)?;
    fs::write(&spec.output, svg)?;
    println!("wrote {}", spec.output.display());
    Ok(EXIT_OK)
}

pub fn render_plot(spec: &PlotSpec) -> Result<String> {
    if spec.inputs.is_empty() {
        return Err(LabError::InvalidConfig("plot needs at least one input".into()));
    }
    match spec.kind {
        PlotKind::Line => {
            let runs = spec
                .inputs
                .iter()
                .map(|p| {
                    let label = p.parent().and_then(|d| d.file_name()).map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    io::read_traces(p).map(|rows| (label, rows))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(plot::trace_chart(&runs))
        }
        PlotKind::Heatmap => {
            if spec.inputs.len() != 1 {
                return Err(LabError::InvalidConfig("heatmap takes exactly one tensor".into()));
            }
            let tensor = io::read_tensor(&spec.inputs[0])?;
            if tensor.gammas.is_empty() || tensor.ns.is_empty() {
                return Err(LabError::Artifact { path: spec.inputs[0].display().to_string(), detail: "empty tensor".into() });
            }
            let title = spec.title.clone().unwrap_or_else(|| {
                spec.inputs[0].file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            });
            Ok(plot::heatmap(&tensor, &title, spec.overlay))
        }
    }
}

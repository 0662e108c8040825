//! Artifact files: JSON documents, CSV tables and their readers.
//!
//! Floats in CSV use `{:.16e}` so they round-trip exactly; JSON uses the
//! shortest round-trip representation. Nothing time-dependent is written.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::TrainingSample;
use crate::error::{LabError, Result};
use crate::experiment::{ExperimentConfig, ExperimentResult, IterationRow, TraceRow, SCHEMA_VERSION};
use crate::ledger::{Checkpoint, UpdateLedger};
use crate::network::NetworkState;
use crate::sweep::{BoundaryFit, SweepResult};
use crate::verify::{OutcomeLabel, PhaseMarkers, TestEstimate};

pub const TRACE_FILE: &str = "trace.csv";
pub const ITERATIONS_FILE: &str = "iterations.csv";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const LEDGER_PAIRS_FILE: &str = "ledger_pairs.csv";
pub const LEDGER_SUMMARY_FILE: &str = "ledger_summary.json";
pub const INIT_REPORT_FILE: &str = "init_report.json";
pub const VERIFICATION_FILE: &str = "verification.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "run_config.json";

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn artifact_err(path: &Path, detail: impl ToString) -> LabError {
    LabError::Artifact { path: path.display().to_string(), detail: detail.to_string() }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new().from_path(path)?)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new().from_path(path).map_err(|e| artifact_err(path, e))
}

fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    match s {
        "NaN" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.trim().parse().map_err(|e| artifact_err(path, format!("bad number {s:?}: {e}"))),
    }
}

fn parse_u64(path: &Path, s: &str) -> Result<u64> {
    s.trim().parse().map_err(|e| artifact_err(path, format!("bad integer {s:?}: {e}")))
}

fn parse_opt(path: &Path, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(path, s).map(Some)
    }
}

// ---------------------------------------------------------------------------
// Samples and networks

#[derive(Serialize)]
struct SampleDoc<'a> {
    schema_version: u32,
    index_base: u8,
    n: usize,
    k: usize,
    d: usize,
    gamma: f64,
    labels: &'a [f64],
    beta: &'a [f64],
    corrupt: Vec<usize>,
    /// Row-major `2n × d`.
    points: &'a [f64],
}

/// Writes `sample.json` and `sample.csv` (index, label, beta, coordinates).
pub fn write_sample(dir: &Path, sample: &TrainingSample) -> Result<()> {
    fs::create_dir_all(dir)?;
    let doc = SampleDoc {
        schema_version: SCHEMA_VERSION,
        index_base: 1,
        n: sample.n,
        k: sample.k,
        d: sample.d,
        gamma: sample.gamma,
        labels: &sample.labels,
        beta: &sample.beta,
        corrupt: sample.corrupt_idx.iter().map(|&i| i + 1).collect(),
        points: &sample.points,
    };
    write_json(&dir.join("sample.json"), &doc)?;
    let mut w = csv_writer(&dir.join("sample.csv"))?;
    let mut header = vec!["index".to_string(), "label".into(), "beta".into()];
    header.extend((1..=sample.d).map(|c| format!("x{c}")));
    w.write_record(&header)?;
    for i in 0..sample.len() {
        let mut row = vec![(i + 1).to_string(), fmt_f64(sample.labels[i]), fmt_f64(sample.beta[i])];
        row.extend(sample.point(i).iter().map(|&x| fmt_f64(x)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_network(path: &Path, net: &NetworkState) -> Result<()> {
    write_json(path, net)
}

pub fn read_network(path: &Path) -> Result<NetworkState> {
    let net: NetworkState = read_json(path)?;
    net.validate()?;
    Ok(net)
}

// ---------------------------------------------------------------------------
// Traces

const TRACE_HEADER: [&str; 8] = [
    "iteration",
    "total_loss",
    "clean_loss",
    "corrupt_loss",
    "clean_accuracy",
    "corrupt_accuracy",
    "test_loss",
    "test_accuracy",
];

pub fn write_traces(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            fmt_f64(r.total_loss),
            fmt_f64(r.clean_loss),
            fmt_f64(r.corrupt_loss),
            fmt_f64(r.clean_accuracy),
            fmt_f64(r.corrupt_accuracy),
            fmt_opt(r.test_loss),
            fmt_opt(r.test_accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(|e| artifact_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != TRACE_HEADER {
        return Err(artifact_err(path, "unexpected trace header"));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| artifact_err(path, e))?;
        if rec.len() != TRACE_HEADER.len() {
            return Err(artifact_err(path, "short trace row"));
        }
        rows.push(TraceRow {
            iteration: parse_u64(path, &rec[0])?,
            total_loss: parse_f64(path, &rec[1])?,
            clean_loss: parse_f64(path, &rec[2])?,
            corrupt_loss: parse_f64(path, &rec[3])?,
            clean_accuracy: parse_f64(path, &rec[4])?,
            corrupt_accuracy: parse_f64(path, &rec[5])?,
            test_loss: parse_opt(path, &rec[6])?,
            test_accuracy: parse_opt(path, &rec[7])?,
        });
    }
    Ok(rows)
}

pub fn write_iterations(path: &Path, rows: &[IterationRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["iteration", "total_loss", "clean_loss_sum", "corrupt_loss_sum", "active_pairs"])?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            fmt_f64(r.total_loss),
            fmt_f64(r.clean_loss_sum),
            fmt_f64(r.corrupt_loss_sum),
            r.active_pairs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Ledger

/// Per checkpoint and neuron: cumulative `G_j`, `B_j`, `T_j` (one-based neurons).
pub fn write_ledger_counts(path: &Path, ledger: &UpdateLedger, sample: &TrainingSample) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["iteration", "neuron", "g", "b", "t"])?;
    for cp in ledger.checkpoints() {
        let wc = ledger.window_counts(0, cp.iteration, sample)?;
        for j in 0..ledger.neurons() {
            w.write_record([
                cp.iteration.to_string(),
                (j + 1).to_string(),
                wc.g_j[j].to_string(),
                wc.b_j[j].to_string(),
                wc.t_j[j].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Sparse cumulative pair counts at every checkpoint (one-based indices).
pub fn write_ledger_pairs(path: &Path, ledger: &UpdateLedger) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["iteration", "point", "neuron", "count"])?;
    let m = ledger.neurons();
    for cp in ledger.checkpoints() {
        w.write_record([cp.iteration.to_string(), "0".into(), "0".into(), "0".into()])?;
        for (idx, &c) in cp.counts.iter().enumerate() {
            if c != 0 {
                w.write_record([cp.iteration.to_string(), (idx / m + 1).to_string(), (idx % m + 1).to_string(), c.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Rows with point 0 only mark that a checkpoint exists.
pub fn read_ledger_pairs(path: &Path, points: usize, neurons: usize) -> Result<UpdateLedger> {
    let mut r = csv_reader(path)?;
    let mut checkpoints: Vec<Checkpoint> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| artifact_err(path, e))?;
        if rec.len() != 4 {
            return Err(artifact_err(path, "ledger rows need 4 fields"));
        }
        let t = parse_u64(path, &rec[0])?;
        let (i, j, c) = (parse_u64(path, &rec[1])? as usize, parse_u64(path, &rec[2])? as usize, parse_u64(path, &rec[3])?);
        if checkpoints.last().map(|cp| cp.iteration) != Some(t) {
            if checkpoints.iter().any(|cp| cp.iteration == t) {
                return Err(artifact_err(path, format!("checkpoint {t} is not contiguous")));
            }
            checkpoints.push(Checkpoint { iteration: t, counts: vec![0; points * neurons] });
        }
        if i == 0 {
            continue;
        }
        if i > points || j == 0 || j > neurons {
            return Err(artifact_err(path, format!("pair ({i}, {j}) out of range")));
        }
        checkpoints.last_mut().expect("pushed above").counts[(i - 1) * neurons + (j - 1)] = c;
    }
    UpdateLedger::from_checkpoints(points, neurons, checkpoints)
}

#[derive(Serialize)]
struct LedgerSummary {
    index_base: u8,
    points: usize,
    neurons: usize,
    checkpoints: Vec<u64>,
    total_updates: u64,
    clean_updates: u64,
    corrupt_updates: u64,
}

pub fn write_ledger_summary(path: &Path, ledger: &UpdateLedger, sample: &TrainingSample) -> Result<()> {
    let its = ledger.checkpoint_iterations();
    let last = *its.last().unwrap_or(&0);
    let wc = ledger.window_counts(0, last, sample)?;
    write_json(
        path,
        &LedgerSummary {
            index_base: 1,
            points: ledger.points(),
            neurons: ledger.neurons(),
            checkpoints: its,
            total_updates: wc.t,
            clean_updates: wc.g,
            corrupt_updates: wc.b,
        },
    )
}

// ---------------------------------------------------------------------------
// Run bundles

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub outcome: OutcomeLabel,
    pub terminated: bool,
    pub iterations: u64,
    pub markers: PhaseMarkers,
    pub coherence: f64,
    pub clean_loss: f64,
    pub corrupt_loss: f64,
    pub corrupt_inactive: bool,
    pub test: Option<TestEstimate>,
    pub benign_good: bool,
    pub nonbenign_good: bool,
    pub nooverfit_good: bool,
    pub violations: u64,
    pub files: Vec<String>,
}

/// Writes the standard artifact set of one run into `dir`.
pub fn write_run(dir: &Path, result: &ExperimentResult) -> Result<RunManifest> {
    fs::create_dir_all(dir)?;
    let s = &result.sample;
    write_json(&dir.join(CONFIG_FILE), &result.config)?;
    write_traces(&dir.join(TRACE_FILE), &result.traces)?;
    write_iterations(&dir.join(ITERATIONS_FILE), &result.iterations)?;
    write_ledger_counts(&dir.join(LEDGER_FILE), &result.ledger, s)?;
    write_ledger_pairs(&dir.join(LEDGER_PAIRS_FILE), &result.ledger)?;
    write_ledger_summary(&dir.join(LEDGER_SUMMARY_FILE), &result.ledger, s)?;
    write_json(&dir.join(INIT_REPORT_FILE), &result.init_report)?;
    write_json(&dir.join(VERIFICATION_FILE), &result.verification)?;
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        seed: result.config.master_seed,
        outcome: result.outcome,
        terminated: result.terminated,
        iterations: result.iterations.last().map(|r| r.iteration).unwrap_or(0),
        markers: result.markers.clone(),
        coherence: result.coherence,
        clean_loss: result.mean_loss(&s.clean_idx),
        corrupt_loss: result.mean_loss(&s.corrupt_idx),
        corrupt_inactive: result.corrupt_inactive,
        test: result.test,
        benign_good: result.init_report.benign_good.holds,
        nonbenign_good: result.init_report.nonbenign_good.holds,
        nooverfit_good: result.init_report.nooverfit_good.holds,
        violations: result.verification.total_violations(),
        files: [
            CONFIG_FILE,
            TRACE_FILE,
            ITERATIONS_FILE,
            LEDGER_FILE,
            LEDGER_PAIRS_FILE,
            LEDGER_SUMMARY_FILE,
            INIT_REPORT_FILE,
            VERIFICATION_FILE,
        ]
        .iter()
        .map(|f| f.to_string())
        .collect(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_run_config(dir: &Path) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = read_json(&dir.join(CONFIG_FILE))?;
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Sweep tensors

/// Header row holds the γ grid; the first column holds n.
pub fn write_tensor(path: &Path, gammas: &[f64], ns: &[usize], cells: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["n\\gamma".to_string()];
    header.extend(gammas.iter().map(|&g| fmt_f64(g)));
    w.write_record(&header)?;
    for (n, row) in ns.iter().zip(cells) {
        let mut rec = vec![n.to_string()];
        rec.extend(row.iter().cloned());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub gammas: Vec<f64>,
    pub ns: Vec<usize>,
    pub cells: Vec<Vec<String>>,
}

impl Tensor {
    /// Numeric view; outcome labels map to their ordinal.
    pub fn values(&self) -> Vec<Vec<f64>> {
        self.cells
            .iter()
            .map(|row| {
                row.iter()
                    .map(|c| c.parse::<f64>().ok().or_else(|| OutcomeLabel::parse(c).map(|l| l as u8 as f64)).unwrap_or(f64::NAN))
                    .collect()
            })
            .collect()
    }

    pub fn is_categorical(&self) -> bool {
        self.cells.iter().flatten().any(|c| OutcomeLabel::parse(c).is_some())
    }

    pub fn outcomes(&self) -> Option<Vec<Vec<OutcomeLabel>>> {
        self.cells.iter().map(|row| row.iter().map(|c| OutcomeLabel::parse(c)).collect()).collect()
    }
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(|e| artifact_err(path, e))?.clone();
    let gammas = header.iter().skip(1).map(|g| parse_f64(path, g)).collect::<Result<Vec<_>>>()?;
    let mut ns = Vec::new();
    let mut cells = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| artifact_err(path, e))?;
        if rec.len() != gammas.len() + 1 {
            return Err(artifact_err(path, "ragged tensor row"));
        }
        ns.push(parse_u64(path, &rec[0])? as usize);
        cells.push(rec.iter().skip(1).map(str::to_string).collect());
    }
    Ok(Tensor { gammas, ns, cells })
}

#[derive(Serialize)]
struct SweepManifest<'a> {
    schema_version: u32,
    result: &'a SweepResult,
    fit: Option<&'a BoundaryFit>,
    fit_error: Option<String>,
    failures: usize,
    files: Vec<String>,
}

pub const SWEEP_TENSORS: [&str; 6] =
    ["clean_loss.csv", "corrupt_loss.csv", "total_loss.csv", "test_loss.csv", "test_error.csv", "outcome.csv"];

/// Writes every tensor plus `manifest.json`; returns the tensor paths.
pub fn write_sweep(dir: &Path, result: &SweepResult) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let spec = &result.spec;
    let numeric = |f: fn(&crate::sweep::CellAggregate) -> f64| -> Vec<Vec<String>> {
        result.tensor(f).into_iter().map(|row| row.into_iter().map(fmt_f64).collect()).collect()
    };
    let tables: [Vec<Vec<String>>; 6] = [
        numeric(|a| a.clean_loss),
        numeric(|a| a.corrupt_loss),
        numeric(|a| a.total_loss),
        numeric(|a| a.test_loss),
        numeric(|a| a.test_error),
        result.outcomes().into_iter().map(|row| row.into_iter().map(|l| l.as_str().to_string()).collect()).collect(),
    ];
    let mut paths = Vec::new();
    for (name, cells) in SWEEP_TENSORS.iter().zip(&tables) {
        let p = dir.join(name);
        write_tensor(&p, &spec.gamma_grid, &spec.n_grid, cells)?;
        paths.push(p);
    }
    let fit = result.fit();
    let manifest = SweepManifest {
        schema_version: SCHEMA_VERSION,
        result,
        fit: fit.as_ref().ok(),
        fit_error: fit.as_ref().err().map(|e| e.to_string()),
        failures: result.cells.iter().map(|c| c.aggregate.failures).sum(),
        files: SWEEP_TENSORS.iter().map(|s| s.to_string()).collect(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_text() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        let p = Path::new("x");
        assert!(parse_f64(p, "NaN").unwrap().is_nan());
        assert_eq!(parse_f64(p, &fmt_f64(f64::INFINITY)).unwrap(), f64::INFINITY);
    }

    #[test]
    fn tensor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let cells = vec![vec!["Benign".to_string(), "NonBenign".into()], vec![fmt_f64(0.5), fmt_f64(1.0)]];
        write_tensor(&p, &[0.01, 0.1], &[20, 40], &cells).unwrap();
        let t = read_tensor(&p).unwrap();
        assert_eq!(t.gammas, vec![0.01, 0.1]);
        assert_eq!(t.ns, vec![20, 40]);
        assert_eq!(t.cells, cells);
    }
}

//! Runtime checks of the trajectory inequalities, phase markers, outcome
//! labels and Monte Carlo test error.
//!
//! Each checker evaluates its own preconditions from measured quantities and
//! reports `not_applicable` when they fail, so a violation always means the
//! implementation disagrees with a statement whose hypotheses held.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_test_point, parity_sign, DataConfig, LambdaMatrix, TrainingSample};
use crate::error::{LabError, Result};
use crate::init::{coherence_limit, InitReport};
use crate::ledger::{UpdateLedger, WindowCounts};
use crate::linalg::{mul, mul_transpose};
use crate::network::{loss, output_sign, relu, LossKind, NetworkState, StepRecord};
use crate::rng::{stream, Purpose};

/// Relative slack used when comparing floating-point trajectories with exact bounds.
pub const REL_TOL: f64 = 1e-9;

const MAX_STORED_VIOLATIONS: usize = 50;

fn tol(scale: f64) -> f64 {
    REL_TOL * (1.0 + scale.abs())
}

/// `max(x, 0)` applied to `ρ - γ`.
fn phi_gap(gamma: f64, rho: f64) -> f64 {
    relu(rho - gamma)
}

/// Zero-based point `i` and neuron `j` share parity.
pub fn same_side(i: usize, j: usize) -> bool {
    i % 2 == j % 2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckId {
    LambdaBounds,
    PreactivationSandwich,
    LossProgress,
    EarlyActivation,
    UpdateCountBounds,
    AlignmentLandmark,
}

impl CheckId {
    pub const ALL: [CheckId; 6] = [
        CheckId::LambdaBounds,
        CheckId::PreactivationSandwich,
        CheckId::LossProgress,
        CheckId::EarlyActivation,
        CheckId::UpdateCountBounds,
        CheckId::AlignmentLandmark,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaViolation {
    pub lemma: String,
    pub iteration: u64,
    /// Start of the window for window-based checks.
    pub window_start: Option<u64>,
    /// One-based point and/or neuron indices.
    pub subject: Vec<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Violated,
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub status: CheckStatus,
    pub reason: String,
    pub evaluated: u64,
    pub violation_count: u64,
    pub violations: Vec<LemmaViolation>,
}

impl CheckResult {
    pub fn not_applicable(reason: impl Into<String>) -> Self {
        CheckResult {
            status: CheckStatus::NotApplicable,
            reason: reason.into(),
            evaluated: 0,
            violation_count: 0,
            violations: Vec::new(),
        }
    }

    fn empty(reason: impl Into<String>) -> Self {
        CheckResult { status: CheckStatus::Pass, reason: reason.into(), evaluated: 0, violation_count: 0, violations: Vec::new() }
    }

    fn push(&mut self, v: LemmaViolation) {
        self.status = CheckStatus::Violated;
        self.violation_count += 1;
        if self.violations.len() < MAX_STORED_VIOLATIONS {
            self.violations.push(v);
        }
    }

    fn absorb(&mut self, evaluated: u64, found: Vec<LemmaViolation>) {
        self.evaluated += evaluated;
        for v in found {
            self.push(v);
        }
    }
}

/// Verification results keyed by lemma id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: BTreeMap<String, CheckResult>,
}

impl VerificationReport {
    pub fn total_violations(&self) -> u64 {
        self.checks.values().map(|c| c.violation_count).sum()
    }

    pub fn has_violations(&self) -> bool {
        self.total_violations() > 0
    }

    pub fn get(&self, id: &str) -> Option<&CheckResult> {
        self.checks.get(id)
    }

    pub fn insert(&mut self, id: &str, result: CheckResult) {
        self.checks.insert(id.to_string(), result);
    }
}

// ---------------------------------------------------------------------------
// λ bounds

/// Every entry of `λ` checked against its class window, without gating.
pub fn lambda_bound_violations(lambda: &LambdaMatrix, sample: &TrainingSample, gamma: f64, rho: f64) -> Vec<LemmaViolation> {
    let t = sample.len();
    let mut out = Vec::new();
    for i in 0..t {
        for l in 0..t {
            let v = lambda.get(i, l);
            let (lo, hi) = if i == l {
                (1.0, 1.0)
            } else if sample.beta[i] == sample.beta[l] {
                (gamma - rho, gamma + rho)
            } else {
                (-(gamma + rho), -(gamma - rho))
            };
            let slack = if i == l { 1e-10 } else { 1e-12 };
            if v < lo - slack || v > hi + slack {
                out.push(LemmaViolation {
                    lemma: "lambda_il".into(),
                    iteration: 0,
                    window_start: None,
                    subject: vec![i + 1, l + 1],
                    lhs: v,
                    rhs: if v < lo { lo } else { hi },
                    detail: format!("lambda outside [{lo:.6e}, {hi:.6e}]"),
                });
            }
        }
    }
    out
}

pub fn check_lambda_bounds(lambda: &LambdaMatrix, sample: &TrainingSample, coherence: f64, gamma: f64, rho: f64) -> CheckResult {
    let limit = coherence_limit(gamma, rho);
    if coherence > limit {
        return CheckResult::not_applicable(format!("coherence {coherence:.6e} exceeds rho/(1-gamma) = {limit:.6e}"));
    }
    let mut r = CheckResult::empty("coherence within rho/(1-gamma)");
    let t = sample.len() as u64;
    r.absorb(t * t, lambda_bound_violations(lambda, sample, gamma, rho));
    r
}

// ---------------------------------------------------------------------------
// Window checks

/// Preactivations (neuron-major) and margins at one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub iteration: u64,
    pub pre: Vec<f64>,
    pub margins: Vec<f64>,
    pub losses: Vec<f64>,
}

/// Everything fixed across a trajectory that the window checks need.
pub struct TrajectoryContext<'a> {
    pub sample: &'a TrainingSample,
    pub lambda: &'a LambdaMatrix,
    pub gamma: f64,
    pub rho: f64,
    pub eta: f64,
    pub neurons: usize,
}

/// Violations of the unrolled identity, the four-case preactivation sandwich
/// and the ReLU-activation bounds over one window.
pub struct SandwichFindings {
    pub evaluated: u64,
    pub inner_prod: Vec<LemmaViolation>,
    pub act_useful: Vec<LemmaViolation>,
    pub bound_activations: Vec<LemmaViolation>,
}

pub fn sandwich_window(ctx: &TrajectoryContext<'_>, w: &WindowCounts, s0: &Snapshot, s1: &Snapshot) -> SandwichFindings {
    let (tn, nn) = (ctx.sample.len(), ctx.neurons);
    let (g, r, eta) = (ctx.gamma, ctx.rho, ctx.eta);
    let pg = phi_gap(g, r);
    // counts_nm[j, ℓ] = T_ℓj; moved[j, i] = Σ_ℓ T_ℓj λ_iℓ.
    let mut counts_nm = vec![0.0; nn * tn];
    for i in 0..tn {
        for j in 0..nn {
            counts_nm[j * tn + i] = w.pair(i, j) as f64;
        }
    }
    let moved = if w.t == 0 { vec![0.0; nn * tn] } else { mul(&counts_nm, nn, &ctx.lambda.entries, tn, tn) };

    let mut out = SandwichFindings { evaluated: 0, inner_prod: Vec::new(), act_useful: Vec::new(), bound_activations: Vec::new() };
    let mk = |lemma: &str, i: usize, j: usize, lhs: f64, rhs: f64, detail: String| LemmaViolation {
        lemma: lemma.into(),
        iteration: w.t1,
        window_start: Some(w.t0),
        subject: vec![i + 1, j + 1],
        lhs,
        rhs,
        detail,
    };
    for j in 0..nn {
        let (gj, bj) = (w.g_j[j] as f64, w.b_j[j] as f64);
        for i in 0..tn {
            let p0 = s0.pre[j * tn + i];
            let p1 = s1.pre[j * tn + i];
            let tij = w.pair(i, j) as f64;
            let clean = !ctx.sample.is_corrupt(i);
            let (gx, bx) = if clean { (gj - tij, bj) } else { (gj, bj - tij) };
            let scale = p0.abs() + eta * (gj + bj);
            let eps = tol(scale);
            out.evaluated += 1;

            let sign = output_sign(j) * parity_sign(i) * ctx.sample.beta[i];
            let predicted = p0 + sign * eta * moved[j * tn + i];
            if (p1 - predicted).abs() > eps {
                out.inner_prod.push(mk("neuron_inner_prod", i, j, p1, predicted, "unrolled preactivation identity".into()));
            }

            let side = same_side(i, j);
            let (lo, hi) = match (clean, side) {
                (true, true) => (p0 + eta * (tij + gx * (g - r) - bx * (g + r)), p0 + eta * (tij + gx * (g + r) - bx * (g - r))),
                (true, false) => (p0 - eta * (tij + gx * (g + r) - bx * (g - r)), p0 - eta * (tij + gx * (g - r) - bx * (g + r))),
                (false, true) => (p0 - eta * (tij - gx * (g - r) + bx * (g + r)), p0 - eta * (tij - gx * (g + r) + bx * (g - r))),
                (false, false) => (p0 + eta * (tij - gx * (g + r) + bx * (g - r)), p0 + eta * (tij - gx * (g - r) + bx * (g + r))),
            };
            if p1 < lo - eps {
                out.act_useful.push(mk("neuron_act_useful", i, j, p1, lo, "below lower bound".into()));
            }
            if p1 > hi + eps {
                out.act_useful.push(mk("neuron_act_useful", i, j, p1, hi, "above upper bound".into()));
            }

            let (a0, a1) = (relu(p0), relu(p1));
            let bump = if tij > 0.0 { eta } else { 0.0 };
            let (lo, hi) = match (clean, side) {
                (true, true) => (a0 + eta * tij - eta * (g + r) * bj - eta * pg * gx, a0 + eta * tij + eta * (g + r) * gx + eta * pg * bj),
                (true, false) => (a0 - eta * tij - eta * (g + r) * gx - eta * pg * bj, a0 - eta * tij + eta * (g + r) * bj + eta * pg * gx + bump),
                (false, true) => (a0 - eta * tij - eta * (g + r) * bx - eta * pg * gj, a0 - eta * tij + eta * (g + r) * gj + eta * pg * bx + bump),
                (false, false) => (a0 + eta * tij - eta * (g + r) * gj - eta * pg * bx, a0 + eta * tij + eta * (g + r) * bx + eta * pg * gj),
            };
            if a1 < lo - eps {
                out.bound_activations.push(mk("bound_activations", i, j, a1, lo, "below lower bound".into()));
            }
            if a1 > hi + eps {
                out.bound_activations.push(mk("bound_activations", i, j, a1, hi, "above upper bound".into()));
            }
        }
    }
    out
}

/// Violations of the margin lower bound and the per-point update-count bound over one window.
pub fn loss_progress_window(
    ctx: &TrajectoryContext<'_>,
    w: &WindowCounts,
    s0: &Snapshot,
    s1: &Snapshot,
) -> (u64, Vec<LemmaViolation>, Vec<LemmaViolation>) {
    let m = (ctx.neurons / 2) as f64;
    let (g, r, eta) = (ctx.gamma, ctx.rho, ctx.eta);
    let pg = phi_gap(g, r);
    let (mut lb, mut up) = (Vec::new(), Vec::new());
    let mut evaluated = 0;
    for i in 0..ctx.sample.len() {
        let ti = w.t_i[i] as f64;
        let (opp, own_except) = if ctx.sample.is_corrupt(i) {
            (w.g as f64, w.b as f64 - ti)
        } else {
            (w.b as f64, w.g as f64 - ti)
        };
        evaluated += 1;
        let bound = s0.margins[i] + eta * (ti - (g + r) * opp - pg * own_except - m);
        let eps = tol(s0.margins[i].abs() + eta * (ti + opp + own_except + m));
        if s1.margins[i] < bound - eps {
            lb.push(LemmaViolation {
                lemma: "lb_loss".into(),
                iteration: w.t1,
                window_start: Some(w.t0),
                subject: vec![i + 1],
                lhs: s1.margins[i],
                rhs: bound,
                detail: "margin below lower bound".into(),
            });
        }
        let cap = s0.losses[i] / eta + (g + r) * opp + pg * own_except + 3.0 * m;
        if ti > cap + tol(cap) {
            up.push(LemmaViolation {
                lemma: "ptup_bd".into(),
                iteration: w.t1,
                window_start: Some(w.t0),
                subject: vec![i + 1],
                lhs: ti,
                rhs: cap,
                detail: "per-point update count above bound".into(),
            });
        }
    }
    (evaluated, lb, up)
}

// ---------------------------------------------------------------------------
// Update-count bounds

/// `(G bound, B bound)` after an iteration where clean losses are at most `a`
/// and corrupt losses at most `b`; `None` when `4k(n-k)(γ+ρ)² ≥ 1`.
#[allow(clippy::too_many_arguments)]
pub fn convergence_count_bounds(n: usize, k: usize, m: usize, gamma: f64, rho: f64, eta: f64, a: f64, b: f64) -> Option<(f64, f64)> {
    let (n, k, m) = (n as f64, k as f64, m as f64);
    let s = gamma + rho;
    let denom = 1.0 - 4.0 * k * (n - k) * s * s;
    if denom <= 0.0 {
        return None;
    }
    let ga = a / eta + 3.0 * m;
    let gb = b / eta + 3.0 * m;
    let g_bound = 2.0 * (n - k) / denom * (ga + 2.0 * k * s * gb);
    let b_bound = 2.0 * k / denom * (gb + 2.0 * (n - k) * s * ga);
    Some((g_bound, b_bound))
}

/// Bound on all updates when every loss is at most `a`; `None` when `(2n-1)(γ+ρ) ≥ 1`.
pub fn nearly_ortho_count_bound(n: usize, m: usize, gamma: f64, rho: f64, eta: f64, a: f64) -> Option<f64> {
    let (n, m) = (n as f64, m as f64);
    let denom = 1.0 - (2.0 * n - 1.0) * (gamma + rho);
    if denom <= 0.0 {
        return None;
    }
    Some(2.0 * n / denom * (a / eta + 3.0 * m))
}

fn max_loss(losses: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| losses[i]).fold(0.0, f64::max)
}

/// Checks both count bounds from every snapshot `t0` to every later one.
pub fn check_update_count_bounds(
    ctx: &TrajectoryContext<'_>,
    ledger: &UpdateLedger,
    snapshots: &[Snapshot],
    coherence: f64,
) -> (CheckResult, CheckResult) {
    let s = ctx.sample;
    let m = ctx.neurons / 2;
    let limit = coherence_limit(ctx.gamma, ctx.rho);
    let gate = |extra: Option<String>| -> Option<String> {
        if coherence > limit {
            Some(format!("coherence {coherence:.6e} exceeds rho/(1-gamma) = {limit:.6e}"))
        } else {
            extra
        }
    };
    let s_sum = ctx.gamma + ctx.rho;
    let conv_gate = gate(if ctx.rho > ctx.gamma {
        Some(format!("rho = {} exceeds gamma = {}", ctx.rho, ctx.gamma))
    } else if 4.0 * (s.k * (s.n - s.k)) as f64 * s_sum * s_sum >= 1.0 {
        Some("4k(n-k)(gamma+rho)^2 >= 1".into())
    } else {
        None
    });
    let ortho_gate = gate(if (2.0 * s.n as f64 - 1.0) * s_sum >= 1.0 { Some("(2n-1)(gamma+rho) >= 1".into()) } else { None });

    let mut conv = match &conv_gate {
        Some(r) => CheckResult::not_applicable(r.clone()),
        None => CheckResult::empty("gates hold"),
    };
    let mut ortho = match &ortho_gate {
        Some(r) => CheckResult::not_applicable(r.clone()),
        None => CheckResult::empty("gates hold"),
    };
    if conv_gate.is_some() && ortho_gate.is_some() {
        return (conv, ortho);
    }
    for (x, s0) in snapshots.iter().enumerate() {
        let a = max_loss(&s0.losses, &s.clean_idx);
        let b = max_loss(&s0.losses, &s.corrupt_idx);
        for s1 in &snapshots[x..] {
            let w = match ledger.window_counts(s0.iteration, s1.iteration, s) {
                Ok(w) => w,
                Err(_) => continue,
            };
            if conv_gate.is_none() {
                if let Some((gb, bb)) = convergence_count_bounds(s.n, s.k, m, ctx.gamma, ctx.rho, ctx.eta, a, b) {
                    let mut found = Vec::new();
                    for (lemma_part, lhs, rhs) in [("G", w.g as f64, gb), ("B", w.b as f64, bb)] {
                        if lhs > rhs + tol(rhs) {
                            found.push(LemmaViolation {
                                lemma: "convergence".into(),
                                iteration: w.t1,
                                window_start: Some(w.t0),
                                subject: Vec::new(),
                                lhs,
                                rhs,
                                detail: format!("{lemma_part} count above bound (a = {a}, b = {b})"),
                            });
                        }
                    }
                    conv.absorb(2, found);
                }
            }
            if ortho_gate.is_none() {
                let a_all = a.max(b);
                if let Some(tb) = nearly_ortho_count_bound(s.n, m, ctx.gamma, ctx.rho, ctx.eta, a_all) {
                    let lhs = w.t as f64;
                    let found = if lhs > tb + tol(tb) {
                        vec![LemmaViolation {
                            lemma: "nearly_ortho_convergence".into(),
                            iteration: w.t1,
                            window_start: Some(w.t0),
                            subject: Vec::new(),
                            lhs,
                            rhs: tb,
                            detail: format!("total count above bound (a = {a_all})"),
                        }]
                    } else {
                        Vec::new()
                    };
                    ortho.absorb(1, found);
                }
            }
        }
    }
    (conv, ortho)
}

// ---------------------------------------------------------------------------
// Landmarks and markers

/// Leading-order iteration of the pre-zero-loss alignment landmark.
pub fn predicted_t1(n: usize, k: usize, m: usize, gamma: f64, rho: f64, eta: f64) -> f64 {
    1.0 / (1.03 * eta * m as f64 * (1.0 + (gamma + rho) * (n - k) as f64))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseMarkers {
    pub t_zero: Option<u64>,
    pub t_one: Option<f64>,
    pub t_end: Option<u64>,
    /// True when `η·m > 0.01`, where the landmark is O(1) iterations and outside the small-step regime.
    pub t_one_outside_small_step: bool,
}

// ---------------------------------------------------------------------------
// Online checks

/// Early activation pattern and alignment landmark, evaluated while training runs.
pub struct OnlineChecks {
    early: Option<EarlyState>,
    early_reason: String,
    landmark: Option<LandmarkState>,
    landmark_reason: String,
    zero_seen: bool,
}

struct EarlyState {
    neurons_in_gamma: Vec<usize>,
    act1: Option<Vec<bool>>,
    result: CheckResult,
}

struct LandmarkState {
    target: u64,
    result: CheckResult,
    done: bool,
}

impl OnlineChecks {
    pub fn new(
        init: &InitReport,
        sample: &TrainingSample,
        m: usize,
        eta: f64,
        kind: LossKind,
        wanted: &BTreeSet<CheckId>,
    ) -> Self {
        let hinge = kind == LossKind::Hinge;
        let benign = init.benign_good.holds;
        let why_not = |extra: Option<String>| -> String {
            if !hinge {
                "logistic runs have no update counts".into()
            } else if !benign {
                format!("benign good initialization fails: {}", init.benign_good.failed().join(", "))
            } else {
                extra.unwrap_or_default()
            }
        };
        let early = if wanted.contains(&CheckId::EarlyActivation) && hinge && benign {
            let mut g: Vec<usize> = init.sets.gamma_plus.iter().chain(&init.sets.gamma_minus).copied().collect();
            g.sort_unstable();
            Some(EarlyState { neurons_in_gamma: g, act1: None, result: CheckResult::empty("benign good initialization holds") })
        } else {
            None
        };
        let early_reason =
            if wanted.contains(&CheckId::EarlyActivation) { why_not(None) } else { "not requested".into() };
        let small_step = eta * m as f64 <= 0.01;
        let rho = init.params.rho;
        let gamma = init.params.gamma;
        let landmark_ok = hinge && benign && small_step && rho <= gamma / 5.0;
        let landmark = if wanted.contains(&CheckId::AlignmentLandmark) && landmark_ok {
            let t1 = predicted_t1(sample.n, sample.k, m, gamma, rho, eta);
            Some(LandmarkState { target: t1.round().max(1.0) as u64, result: CheckResult::empty("gates hold"), done: false })
        } else {
            None
        };
        let landmark_reason = if !wanted.contains(&CheckId::AlignmentLandmark) {
            "not requested".into()
        } else if !small_step {
            "eta*m > 0.01 places the landmark outside the small-step regime".into()
        } else if rho > gamma / 5.0 {
            why_not(Some(format!("rho = {rho} exceeds gamma/5")))
        } else {
            why_not(None)
        };
        OnlineChecks { early, early_reason, landmark, landmark_reason, zero_seen: false }
    }

    /// Observes the state at `record.iteration` before its update is applied.
    pub fn observe(&mut self, pre: &[f64], record: &StepRecord, sample: &TrainingSample) {
        let t = record.iteration;
        let tn = sample.len();
        if record.margins.iter().any(|&z| z >= 1.0) {
            self.zero_seen = true;
        }
        if let Some(e) = self.early.as_mut() {
            if t == 1 {
                e.act1 = Some(pre.iter().map(|&p| p > 0.0).collect());
            }
            if t >= 1 && !self.zero_seen {
                let act1 = e.act1.as_ref().expect("recorded at t = 1");
                let mut found = Vec::new();
                let mut evaluated = 0;
                for &j in &e.neurons_in_gamma {
                    for i in 0..tn {
                        let active = pre[j * tn + i] > 0.0;
                        let side = same_side(i, j);
                        let expected = if !sample.is_corrupt(i) {
                            Some(side)
                        } else if !side {
                            Some(act1[j * tn + i])
                        } else {
                            None
                        };
                        if let Some(want) = expected {
                            evaluated += 1;
                            if active != want {
                                found.push(LemmaViolation {
                                    lemma: "act_pattern_early".into(),
                                    iteration: t,
                                    window_start: None,
                                    subject: vec![i + 1, j + 1],
                                    lhs: pre[j * tn + i],
                                    rhs: 0.0,
                                    detail: format!("activation {active}, expected {want}"),
                                });
                            }
                        }
                    }
                }
                e.result.absorb(evaluated, found);
            }
        }
        if let Some(l) = self.landmark.as_mut() {
            if !l.done && t == l.target {
                l.done = true;
                let worst = max_loss(&record.losses, &sample.clean_idx);
                let cap = 1.0 / 3.0 + 0.1;
                let found = if worst > cap {
                    vec![LemmaViolation {
                        lemma: "neural_alignment".into(),
                        iteration: t,
                        window_start: None,
                        subject: Vec::new(),
                        lhs: worst,
                        rhs: cap,
                        detail: "largest clean loss at the predicted landmark".into(),
                    }]
                } else {
                    Vec::new()
                };
                l.result.absorb(1, found);
            }
        }
    }

    pub fn finish(self, report: &mut VerificationReport, wanted: &BTreeSet<CheckId>) {
        if wanted.contains(&CheckId::EarlyActivation) {
            let r = match self.early {
                Some(e) => e.result,
                None => CheckResult::not_applicable(self.early_reason),
            };
            report.insert("act_pattern_early", r);
        }
        if wanted.contains(&CheckId::AlignmentLandmark) {
            let r = match self.landmark {
                Some(l) if l.done => l.result,
                Some(_) => CheckResult::not_applicable("run ended before the predicted landmark"),
                None => CheckResult::not_applicable(self.landmark_reason),
            };
            report.insert("neural_alignment", r);
        }
    }
}

/// Runs the window-based checkers over consecutive snapshot pairs and every `(0, t)` window.
pub fn check_windows(
    ctx: &TrajectoryContext<'_>,
    ledger: &UpdateLedger,
    snapshots: &[Snapshot],
    coherence: f64,
    kind: LossKind,
    wanted: &BTreeSet<CheckId>,
    report: &mut VerificationReport,
) {
    let limit = coherence_limit(ctx.gamma, ctx.rho);
    let gate = if kind != LossKind::Hinge {
        Some("logistic runs have no update counts".to_string())
    } else if coherence > limit {
        Some(format!("coherence {coherence:.6e} exceeds rho/(1-gamma) = {limit:.6e}"))
    } else {
        None
    };
    let sandwich = wanted.contains(&CheckId::PreactivationSandwich);
    let progress = wanted.contains(&CheckId::LossProgress);
    let counts = wanted.contains(&CheckId::UpdateCountBounds);
    if let Some(reason) = &gate {
        let ids: &[(&str, bool)] = &[
            ("neuron_inner_prod", sandwich),
            ("neuron_act_useful", sandwich),
            ("bound_activations", sandwich),
            ("lb_loss", progress),
            ("ptup_bd", progress),
            ("convergence", counts),
            ("nearly_ortho_convergence", counts),
        ];
        for (id, on) in ids {
            if *on {
                report.insert(id, CheckResult::not_applicable(reason.clone()));
            }
        }
        return;
    }
    let mut inner = CheckResult::empty("coherence within rho/(1-gamma)");
    let mut useful = inner.clone();
    let mut bounds = inner.clone();
    let mut lb = inner.clone();
    let mut up = inner.clone();
    let mut consistency = CheckResult::empty("ledger windows are non-negative");

    let mut windows: Vec<(usize, usize)> = Vec::new();
    for x in 1..snapshots.len() {
        windows.push((x - 1, x));
        if x > 1 {
            windows.push((0, x));
        }
    }
    if sandwich || progress {
        for (a, b) in windows {
            let (s0, s1) = (&snapshots[a], &snapshots[b]);
            let w = match ledger.window_counts(s0.iteration, s1.iteration, ctx.sample) {
                Ok(w) => w,
                Err(e) => {
                    consistency.absorb(
                        1,
                        vec![LemmaViolation {
                            lemma: "ledger_consistency".into(),
                            iteration: s1.iteration,
                            window_start: Some(s0.iteration),
                            subject: Vec::new(),
                            lhs: 0.0,
                            rhs: 0.0,
                            detail: e.to_string(),
                        }],
                    );
                    continue;
                }
            };
            consistency.evaluated += 1;
            if sandwich {
                let f = sandwich_window(ctx, &w, s0, s1);
                inner.absorb(f.evaluated, f.inner_prod);
                useful.absorb(f.evaluated, f.act_useful);
                bounds.absorb(f.evaluated, f.bound_activations);
            }
            if progress {
                let (ev, v_lb, v_up) = loss_progress_window(ctx, &w, s0, s1);
                lb.absorb(ev, v_lb);
                up.absorb(ev, v_up);
            }
        }
        report.insert("ledger_consistency", consistency);
    }
    if sandwich {
        report.insert("neuron_inner_prod", inner);
        report.insert("neuron_act_useful", useful);
        report.insert("bound_activations", bounds);
    }
    if progress {
        report.insert("lb_loss", lb);
        report.insert("ptup_bd", up);
    }
    if counts {
        let (c, o) = check_update_count_bounds(ctx, ledger, snapshots, coherence);
        report.insert("convergence", c);
        report.insert("nearly_ortho_convergence", o);
    }
}

// ---------------------------------------------------------------------------
// Outcomes and generalization

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutcomeLabel {
    Benign,
    NonBenign,
    NoOverfit,
    Mixed,
    DidNotTerminate,
}

impl OutcomeLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutcomeLabel::Benign => "Benign",
            OutcomeLabel::NonBenign => "NonBenign",
            OutcomeLabel::NoOverfit => "NoOverfit",
            OutcomeLabel::Mixed => "Mixed",
            OutcomeLabel::DidNotTerminate => "DidNotTerminate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            OutcomeLabel::Benign,
            OutcomeLabel::NonBenign,
            OutcomeLabel::NoOverfit,
            OutcomeLabel::Mixed,
            OutcomeLabel::DidNotTerminate,
        ]
        .into_iter()
        .find(|l| l.as_str() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeThresholds {
    pub benign_threshold: f64,
}

impl Default for OutcomeThresholds {
    fn default() -> Self {
        OutcomeThresholds { benign_threshold: 0.1 }
    }
}

/// Final training state needed for labelling.
pub struct FinalState<'a> {
    pub terminated: bool,
    pub losses: &'a [f64],
    pub sample: &'a TrainingSample,
    /// No corrupt point has a positive preactivation on any neuron.
    pub corrupt_inactive: bool,
}

pub fn classify_outcome(state: &FinalState<'_>, test_error: Option<f64>, thresholds: &OutcomeThresholds) -> OutcomeLabel {
    if !state.terminated {
        return OutcomeLabel::DidNotTerminate;
    }
    let s = state.sample;
    if state.losses.iter().all(|&l| l == 0.0) {
        return match test_error {
            Some(e) if e <= thresholds.benign_threshold => OutcomeLabel::Benign,
            Some(_) => OutcomeLabel::NonBenign,
            None => OutcomeLabel::Mixed,
        };
    }
    let clean_zero = s.clean_idx.iter().all(|&i| state.losses[i] == 0.0);
    let corrupt_one = s.corrupt_idx.iter().all(|&i| state.losses[i] == 1.0);
    if clean_zero && corrupt_one && state.corrupt_inactive {
        return OutcomeLabel::NoOverfit;
    }
    OutcomeLabel::Mixed
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestEstimate {
    pub n_test: usize,
    pub error: f64,
    pub std_error: f64,
    pub mean_loss: f64,
}

const TEST_CHUNK: usize = 256;

/// Test points `start..start+count` from the per-point substreams, row-major, with labels.
pub fn test_points(cfg: &DataConfig, master: u64, start: usize, count: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut xs = Vec::with_capacity(count * cfg.d);
    let mut ys = Vec::with_capacity(count);
    for idx in start..start + count {
        let mut rng = stream(master, Purpose::Test, idx as u64);
        let (x, y) = generate_test_point(cfg, &mut rng)?;
        xs.extend(x);
        ys.push(y);
    }
    Ok((xs, ys))
}

/// Margins `y f(x)` for row-major points.
pub fn margins_on(net: &NetworkState, xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let count = ys.len();
    let pre = mul_transpose(&net.weights, net.neurons(), xs, count, net.d);
    crate::network::margins_from_preactivations(&pre, net.neurons(), ys)
}

/// Test error with ties counted as errors, its binomial standard error, and mean loss.
pub fn estimate_test_metrics(net: &NetworkState, cfg: &DataConfig, n_test: usize, master: u64, kind: LossKind) -> Result<TestEstimate> {
    if n_test == 0 {
        return Err(LabError::InvalidArgument("n_test must be at least 1".into()));
    }
    if net.d != cfg.d {
        return Err(LabError::InvalidArgument("network and data dimensions differ".into()));
    }
    let chunks = n_test.div_ceil(TEST_CHUNK);
    let parts: Vec<Result<(u64, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * TEST_CHUNK;
            let count = TEST_CHUNK.min(n_test - start);
            let (xs, ys) = test_points(cfg, master, start, count)?;
            let margins = margins_on(net, &xs, &ys);
            let errors = margins.iter().filter(|&&z| z <= 0.0).count() as u64;
            let loss_sum: f64 = margins.iter().map(|&z| loss(kind, z)).sum();
            Ok((errors, loss_sum))
        })
        .collect();
    let (mut errors, mut loss_sum) = (0u64, 0.0);
    for p in parts {
        let (e, l) = p?;
        errors += e;
        loss_sum += l;
    }
    let p = errors as f64 / n_test as f64;
    Ok(TestEstimate { n_test, error: p, std_error: (p * (1.0 - p) / n_test as f64).sqrt(), mean_loss: loss_sum / n_test as f64 })
}

/// `(error rate, standard error)` over `n_test` fresh clean points.
pub fn estimate_test_error(net: &NetworkState, cfg: &DataConfig, n_test: usize, master: u64) -> Result<(f64, f64)> {
    let e = estimate_test_metrics(net, cfg, n_test, master, LossKind::Hinge)?;
    Ok((e.error, e.std_error))
}

//! Initialization-time neuron sets and the per-regime good-initialization checks.
//!
//! Indices are zero-based in memory and one-based when serialized.

use serde::{Serialize, Serializer};

use crate::data::TrainingSample;
use crate::error::Result;
use crate::network::{hinge_loss, margins_from_preactivations, output_sign, preactivations, NetworkState};

pub(crate) fn one_based<S: Serializer>(v: &[usize], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|i| i + 1))
}

fn one_based_opt<S: Serializer>(v: &Option<Vec<usize>>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => one_based(v, s),
        None => s.serialize_none(),
    }
}

/// Per-neuron clean, corrupt and total counts over the first step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NeuronCounts {
    pub g: Vec<u64>,
    pub b: Vec<u64>,
    pub t: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InitParams {
    pub gamma: f64,
    pub rho: f64,
    pub eta: f64,
    pub lambda_w: f64,
    /// Γ_p must hold at least `(1 - alpha) m` neurons.
    pub alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Benign,
    Nonbenign,
    Nooverfit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Condition {
    pub name: String,
    pub holds: bool,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub holds: bool,
    pub conditions: Vec<Condition>,
}

impl Verdict {
    fn from_conditions(conditions: Vec<Condition>) -> Self {
        Verdict { holds: conditions.iter().all(|c| c.holds), conditions }
    }

    pub fn failed(&self) -> Vec<&str> {
        self.conditions.iter().filter(|c| !c.holds).map(|c| c.name.as_str()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InitSets {
    pub counts: NeuronCounts,
    #[serde(serialize_with = "one_based")]
    pub gamma_plus: Vec<usize>,
    #[serde(serialize_with = "one_based")]
    pub gamma_minus: Vec<usize>,
    #[serde(serialize_with = "one_based")]
    pub theta_plus: Vec<usize>,
    #[serde(serialize_with = "one_based")]
    pub theta_minus: Vec<usize>,
    /// `None` when γ = 0.
    #[serde(serialize_with = "one_based_opt")]
    pub lambda_set: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CarrierList {
    #[serde(serialize_with = "one_based_scalar")]
    pub point: usize,
    #[serde(serialize_with = "one_based")]
    pub carriers: Vec<usize>,
}

fn one_based_scalar<S: Serializer>(v: &usize, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_u64(*v as u64 + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InitReport {
    pub index_base: u8,
    pub params: InitParams,
    pub coherence: f64,
    pub coherence_limit: f64,
    #[serde(flatten)]
    pub sets: InitSets,
    pub carriers: Vec<CarrierList>,
    pub sign_coverage: Vec<bool>,
    pub benign_good: Verdict,
    pub nonbenign_good: Verdict,
    pub nooverfit_good: Verdict,
    pub notes: Vec<String>,
}

impl InitReport {
    pub fn verdict(&self, regime: Regime) -> &Verdict {
        match regime {
            Regime::Benign => &self.benign_good,
            Regime::Nonbenign => &self.nonbenign_good,
            Regime::Nooverfit => &self.nooverfit_good,
        }
    }
}

/// Counts over `A_j^(0) ∩ N(0)` from a neuron-major preactivation matrix.
pub fn first_step_counts_from(pre: &[f64], neurons: usize, sample: &TrainingSample) -> NeuronCounts {
    let t = sample.len();
    let margins = margins_from_preactivations(pre, neurons, &sample.labels);
    let mut counts = NeuronCounts { g: vec![0; neurons], b: vec![0; neurons], t: vec![0; neurons] };
    for j in 0..neurons {
        for i in 0..t {
            if pre[j * t + i] > 0.0 && hinge_loss(margins[i]) > 0.0 {
                if sample.is_corrupt(i) {
                    counts.b[j] += 1;
                } else {
                    counts.g[j] += 1;
                }
                counts.t[j] += 1;
            }
        }
    }
    counts
}

pub fn first_step_counts(net0: &NetworkState, sample: &TrainingSample) -> Result<NeuronCounts> {
    let pre = preactivations(net0, sample)?;
    Ok(first_step_counts_from(&pre, net0.neurons(), sample))
}

pub fn compute_gamma_sets(counts: &NeuronCounts, gamma: f64, rho: f64, eta: f64, lambda_w: f64) -> (Vec<usize>, Vec<usize>) {
    let threshold = 2.0 * lambda_w / eta;
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for j in 0..counts.g.len() {
        let lhs = counts.g[j] as f64 * (gamma - rho) - counts.b[j] as f64 * (gamma + rho);
        if lhs >= threshold {
            if output_sign(j) > 0.0 {
                plus.push(j);
            } else {
                minus.push(j);
            }
        }
    }
    (plus, minus)
}

pub fn compute_theta_sets(
    counts: &NeuronCounts,
    gamma_plus: &[usize],
    gamma_minus: &[usize],
    gamma: f64,
    rho: f64,
) -> (Vec<usize>, Vec<usize>) {
    let keep = |set: &[usize]| -> Vec<usize> {
        set.iter()
            .copied()
            .filter(|&j| counts.g[j] as f64 * (gamma + rho) - counts.b[j] as f64 * (gamma - rho) <= 1.0 - gamma + rho)
            .collect()
    };
    (keep(gamma_plus), keep(gamma_minus))
}

/// `None` when γ = 0, where the defining inequality is undefined.
pub fn compute_lambda_set(counts: &NeuronCounts, gamma: f64, rho: f64) -> Option<Vec<usize>> {
    if gamma <= 0.0 {
        return None;
    }
    Some(
        (0..counts.g.len())
            .filter(|&j| (counts.g[j] as f64) < (gamma - rho) / (2.0 * gamma) * counts.t[j] as f64 + 1.0 / (2.0 * gamma))
            .collect(),
    )
}

pub fn compute_init_sets(counts: NeuronCounts, params: &InitParams) -> InitSets {
    let (gamma_plus, gamma_minus) = compute_gamma_sets(&counts, params.gamma, params.rho, params.eta, params.lambda_w);
    let (theta_plus, theta_minus) = compute_theta_sets(&counts, &gamma_plus, &gamma_minus, params.gamma, params.rho);
    let lambda_set = compute_lambda_set(&counts, params.gamma, params.rho);
    InitSets { counts, gamma_plus, gamma_minus, theta_plus, theta_minus, lambda_set }
}

/// `ρ / (1 - γ)`, infinite at γ = 1.
pub fn coherence_limit(gamma: f64, rho: f64) -> f64 {
    if gamma >= 1.0 {
        f64::INFINITY
    } else {
        rho / (1.0 - gamma)
    }
}

fn coherence_condition(coherence: f64, params: &InitParams) -> Condition {
    let limit = coherence_limit(params.gamma, params.rho);
    let holds = coherence <= limit;
    Condition {
        name: "noise_coherence".into(),
        holds,
        reason: format!("measured coherence {coherence:.6e} {} rho/(1-gamma) = {limit:.6e}", if holds { "<=" } else { ">" }),
    }
}

struct Activation<'a> {
    pre: &'a [f64],
    points: usize,
    neurons: usize,
}

impl Activation<'_> {
    fn active(&self, i: usize, j: usize) -> bool {
        self.pre[j * self.points + i] > 0.0
    }

    fn sign_covered(&self, i: usize, label: f64) -> bool {
        (0..self.neurons).any(|j| output_sign(j) == label && self.active(i, j))
    }
}

fn theta_for(sets: &InitSets, label: f64) -> &[usize] {
    if label > 0.0 {
        &sets.theta_plus
    } else {
        &sets.theta_minus
    }
}

fn gamma_for(sets: &InitSets, label: f64) -> &[usize] {
    if label > 0.0 {
        &sets.gamma_plus
    } else {
        &sets.gamma_minus
    }
}

fn verdict_from(
    sets: &InitSets,
    act: &Activation<'_>,
    sample: &TrainingSample,
    coherence: f64,
    regime: Regime,
    params: &InitParams,
) -> Verdict {
    let mut conditions = vec![coherence_condition(coherence, params)];
    let m = act.neurons / 2;
    match regime {
        Regime::Benign => {
            let need = (1.0 - params.alpha) * m as f64;
            let (gp, gm) = (sets.gamma_plus.len(), sets.gamma_minus.len());
            conditions.push(Condition {
                name: "gamma_sets_dense".into(),
                holds: gp as f64 >= need && gm as f64 >= need,
                reason: format!("|Gamma_+1| = {gp}, |Gamma_-1| = {gm}, required >= {need}"),
            });
            let uncarried: Vec<usize> = sample
                .corrupt_idx
                .iter()
                .copied()
                .filter(|&i| !theta_for(sets, sample.labels[i]).iter().any(|&j| act.active(i, j)))
                .collect();
            conditions.push(Condition {
                name: "corrupt_points_carried".into(),
                holds: uncarried.is_empty(),
                reason: if uncarried.is_empty() {
                    "every corrupt point activates a carrier neuron of its label's sign".into()
                } else {
                    format!("{} corrupt points lack a carrier, first is point {}", uncarried.len(), uncarried[0] + 1)
                },
            });
        }
        Regime::Nonbenign => {
            let uncovered: Vec<usize> =
                (0..act.points).filter(|&i| !act.sign_covered(i, sample.labels[i])).collect();
            conditions.push(Condition {
                name: "sign_neuron_coverage".into(),
                holds: uncovered.is_empty(),
                reason: if uncovered.is_empty() {
                    "every point activates a neuron whose output sign matches its label".into()
                } else {
                    format!("{} points uncovered, first is point {}", uncovered.len(), uncovered[0] + 1)
                },
            });
        }
        Regime::Nooverfit => {
            let covered = sets.gamma_plus.len() + sets.gamma_minus.len();
            conditions.push(Condition {
                name: "gamma_covers_all_neurons".into(),
                holds: covered == act.neurons,
                reason: format!("|Gamma_+1| + |Gamma_-1| = {covered} of {} neurons", act.neurons),
            });
        }
    }
    Verdict::from_conditions(conditions)
}

/// Good-initialization verdict for one regime.
pub fn good_init(
    sets: &InitSets,
    sample: &TrainingSample,
    net0: &NetworkState,
    coherence: f64,
    regime: Regime,
    params: &InitParams,
) -> Result<Verdict> {
    let pre = preactivations(net0, sample)?;
    let act = Activation { pre: &pre, points: sample.len(), neurons: net0.neurons() };
    Ok(verdict_from(sets, &act, sample, coherence, regime, params))
}

/// Full report from iteration-0 preactivations and measured coherence.
pub fn init_report_from(
    sample: &TrainingSample,
    pre0: &[f64],
    neurons: usize,
    coherence: f64,
    params: &InitParams,
) -> InitReport {
    let counts = first_step_counts_from(pre0, neurons, sample);
    let sets = compute_init_sets(counts, params);
    let act = Activation { pre: pre0, points: sample.len(), neurons };
    let carriers = sample
        .corrupt_idx
        .iter()
        .map(|&i| CarrierList {
            point: i,
            carriers: theta_for(&sets, sample.labels[i]).iter().copied().filter(|&j| act.active(i, j)).collect(),
        })
        .collect();
    let sign_coverage: Vec<bool> = (0..sample.len()).map(|i| act.sign_covered(i, sample.labels[i])).collect();
    let benign_good = verdict_from(&sets, &act, sample, coherence, Regime::Benign, params);
    let nonbenign_good = verdict_from(&sets, &act, sample, coherence, Regime::Nonbenign, params);
    let nooverfit_good = verdict_from(&sets, &act, sample, coherence, Regime::Nooverfit, params);

    let theta_carried = sample
        .corrupt_idx
        .iter()
        .all(|&i| theta_for(&sets, sample.labels[i]).iter().any(|&j| act.active(i, j)));
    let gamma_carried = sample
        .corrupt_idx
        .iter()
        .all(|&i| gamma_for(&sets, sample.labels[i]).iter().any(|&j| act.active(i, j)));
    let sign_carried = sample.corrupt_idx.iter().all(|&i| sign_coverage[i]);
    let notes = vec![format!(
        "corrupt-carrier condition evaluated with carriers in Theta_{{y_i}} (strongest form): {theta_carried}; \
         with carriers in Gamma_{{y_i}}: {gamma_carried}; with any neuron of sign y_i: {sign_carried}"
    )];
    InitReport {
        index_base: 1,
        params: *params,
        coherence,
        coherence_limit: coherence_limit(params.gamma, params.rho),
        sets,
        carriers,
        sign_coverage,
        benign_good,
        nonbenign_good,
        nooverfit_good,
        notes,
    }
}

pub fn init_report(sample: &TrainingSample, net0: &NetworkState, coherence: f64, params: &InitParams) -> Result<InitReport> {
    let pre = preactivations(net0, sample)?;
    Ok(init_report_from(sample, &pre, net0.neurons(), coherence, params))
}

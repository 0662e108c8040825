//! Two-layer ReLU network with fixed alternating output weights, and the
//! full-batch update rule.
//!
//! Neuron `j` (zero-based) carries output sign `(-1)^(j+1)`, matching the
//! one-based convention where neuron 1 has sign −1.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::TrainingSample;
use crate::error::{LabError, Result};
use crate::linalg::{dot, mul_transpose, norm};

/// `(-1)^(j+1)` for zero-based neuron `j`.
pub fn output_sign(j: usize) -> f64 {
    if j % 2 == 1 {
        1.0
    } else {
        -1.0
    }
}

pub fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub m: usize,
    pub d: usize,
    /// Row-major `2m × d`; row `j` is `w_j`.
    pub weights: Vec<f64>,
}

impl NetworkState {
    pub fn zeros(m: usize, d: usize) -> Self {
        NetworkState { m, d, weights: vec![0.0; 2 * m * d] }
    }

    pub fn neurons(&self) -> usize {
        2 * self.m
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.d..(j + 1) * self.d]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.weights[j * self.d..(j + 1) * self.d]
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != 2 * self.m * self.d {
            return Err(LabError::InvalidArgument("weight buffer does not match 2m × d".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(LabError::InvalidArgument("non-finite weight".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Hinge,
    Logistic,
}

/// How the trainer advances preactivations. Both engines follow the same update rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// Keep `W` explicitly and recompute `W Xᵀ` each step.
    #[default]
    Weights,
    /// Keep preactivations and advance them through the data Gram matrix; `W` is materialized on demand.
    Gram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub lambda_w: f64,
    pub loss_kind: LossKind,
    pub max_iters: u64,
    pub record_every: u64,
    #[serde(default)]
    pub engine: Engine,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(LabError::InvalidConfig(format!("eta = {} must be positive", self.eta)));
        }
        if !(self.lambda_w >= 0.0 && self.lambda_w.is_finite()) {
            return Err(LabError::InvalidConfig(format!("lambda_w = {} must be non-negative", self.lambda_w)));
        }
        if self.max_iters == 0 {
            return Err(LabError::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.record_every == 0 {
            return Err(LabError::InvalidConfig("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Set of (point, neuron) pairs stored as a neuron-major bitset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivePairs {
    points: usize,
    neurons: usize,
    bits: Vec<u64>,
    count: usize,
}

impl ActivePairs {
    pub fn new(points: usize, neurons: usize) -> Self {
        ActivePairs { points, neurons, bits: vec![0; (points * neurons).div_ceil(64)], count: 0 }
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn insert(&mut self, i: usize, j: usize) {
        assert!(i < self.points && j < self.neurons);
        let b = j * self.points + i;
        let mask = 1u64 << (b % 64);
        if self.bits[b / 64] & mask == 0 {
            self.bits[b / 64] |= mask;
            self.count += 1;
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        let b = j * self.points + i;
        self.bits[b / 64] & (1u64 << (b % 64)) != 0
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Points active on neuron `j`, ascending.
    pub fn points_on(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.points).filter(move |&i| self.contains(i, j))
    }

    /// All pairs as `(i, j)`, neuron-major then ascending point index.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.neurons).flat_map(move |j| self.points_on(j).map(move |i| (i, j)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub iteration: u64,
    pub losses: Vec<f64>,
    pub margins: Vec<f64>,
    pub active_pairs: ActivePairs,
}

impl StepRecord {
    pub fn total_loss(&self) -> f64 {
        self.losses.iter().sum()
    }
}

pub fn has_zero_update(record: &StepRecord) -> bool {
    record.active_pairs.is_empty()
}

/// Independent Gaussian-normalize-scale draw for every neuron.
pub fn init_weights<R: Rng + ?Sized>(m: usize, d: usize, lambda_w: f64, rng: &mut R) -> Result<NetworkState> {
    if m == 0 {
        return Err(LabError::InvalidConfig("m must be at least 1".into()));
    }
    if d < 2 {
        return Err(LabError::InvalidConfig("d must be at least 2".into()));
    }
    if lambda_w.is_nan() || lambda_w < 0.0 {
        return Err(LabError::InvalidConfig("lambda_w must be non-negative".into()));
    }
    let mut net = NetworkState::zeros(m, d);
    if lambda_w == 0.0 {
        return Ok(net);
    }
    for j in 0..2 * m {
        let row = net.row_mut(j);
        loop {
            for w in row.iter_mut() {
                *w = rng.sample(StandardNormal);
            }
            let r = norm(row);
            if r >= 1e-30 {
                for w in row.iter_mut() {
                    *w *= lambda_w / r;
                }
                break;
            }
        }
    }
    Ok(net)
}

pub fn forward(net: &NetworkState, x: &[f64]) -> Result<f64> {
    if x.len() != net.d {
        return Err(LabError::InvalidArgument(format!("input has dimension {}, network expects {}", x.len(), net.d)));
    }
    Ok((0..net.neurons()).map(|j| output_sign(j) * relu(dot(net.row(j), x))).sum())
}

/// Neuron-major `2m × 2n` matrix of `⟨w_j, x_i⟩`.
pub fn preactivations(net: &NetworkState, sample: &TrainingSample) -> Result<Vec<f64>> {
    if net.d != sample.d {
        return Err(LabError::InvalidArgument(format!("sample has dimension {}, network expects {}", sample.d, net.d)));
    }
    Ok(mul_transpose(&net.weights, net.neurons(), &sample.points, sample.len(), net.d))
}

/// `y_i f(x_i)` from a neuron-major preactivation matrix; neurons summed in index order.
pub fn margins_from_preactivations(pre: &[f64], neurons: usize, labels: &[f64]) -> Vec<f64> {
    let t = labels.len();
    let mut f = vec![0.0; t];
    for j in 0..neurons {
        let s = output_sign(j);
        for (fi, p) in f.iter_mut().zip(&pre[j * t..(j + 1) * t]) {
            *fi += s * relu(*p);
        }
    }
    f.iter().zip(labels).map(|(fi, y)| y * fi).collect()
}

pub fn hinge_loss(margin: f64) -> f64 {
    (1.0 - margin).max(0.0)
}

/// `ln(1 + e^{-z})` without overflow for either sign of `z`.
pub fn logistic_loss(margin: f64) -> f64 {
    if margin >= 0.0 {
        (-margin).exp().ln_1p()
    } else {
        -margin + margin.exp().ln_1p()
    }
}

/// `1 / (1 + e^z)`.
pub fn logistic_weight(margin: f64) -> f64 {
    if margin >= 0.0 {
        let e = (-margin).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + margin.exp())
    }
}

pub fn loss(kind: LossKind, margin: f64) -> f64 {
    match kind {
        LossKind::Hinge => hinge_loss(margin),
        LossKind::Logistic => logistic_loss(margin),
    }
}

pub fn hinge_losses(net: &NetworkState, sample: &TrainingSample) -> Result<Vec<f64>> {
    let pre = preactivations(net, sample)?;
    Ok(margins_from_preactivations(&pre, net.neurons(), &sample.labels).into_iter().map(hinge_loss).collect())
}

pub fn logistic_losses(net: &NetworkState, sample: &TrainingSample) -> Result<Vec<f64>> {
    let pre = preactivations(net, sample)?;
    Ok(margins_from_preactivations(&pre, net.neurons(), &sample.labels).into_iter().map(logistic_loss).collect())
}

/// The step record at the state whose preactivations are `pre`; nothing is applied.
pub fn step_record(pre: &[f64], neurons: usize, labels: &[f64], kind: LossKind, iteration: u64) -> StepRecord {
    let t = labels.len();
    let margins = margins_from_preactivations(pre, neurons, labels);
    let losses: Vec<f64> = margins.iter().map(|&z| loss(kind, z)).collect();
    let mut active_pairs = ActivePairs::new(t, neurons);
    for j in 0..neurons {
        for i in 0..t {
            let on = pre[j * t + i] > 0.0;
            let used = match kind {
                LossKind::Hinge => on && losses[i] > 0.0,
                LossKind::Logistic => on,
            };
            if used {
                active_pairs.insert(i, j);
            }
        }
    }
    StepRecord { iteration, losses, margins, active_pairs }
}

/// Per-point coefficient multiplying `y_ℓ x_ℓ` in the update.
pub fn update_weight(kind: LossKind, margin: f64) -> f64 {
    match kind {
        LossKind::Hinge => 1.0,
        LossKind::Logistic => logistic_weight(margin),
    }
}

/// Applies the update encoded by `record` to `net` in place.
pub fn apply_update(net: &mut NetworkState, sample: &TrainingSample, record: &StepRecord, cfg: &TrainConfig) -> Result<()> {
    if record.active_pairs.is_empty() {
        return Ok(());
    }
    let d = net.d;
    let mut buf = vec![0.0; d];
    for j in 0..net.neurons() {
        buf.iter_mut().for_each(|b| *b = 0.0);
        let mut any = false;
        for i in record.active_pairs.points_on(j) {
            let c = update_weight(cfg.loss_kind, record.margins[i]) * sample.labels[i];
            for (b, x) in buf.iter_mut().zip(sample.point(i)) {
                *b += c * x;
            }
            any = true;
        }
        if any {
            let scale = output_sign(j) * cfg.eta;
            for (w, b) in net.row_mut(j).iter_mut().zip(&buf) {
                *w += scale * b;
            }
        }
    }
    if net.weights.iter().any(|w| !w.is_finite()) {
        return Err(LabError::NumericOverflow { iteration: record.iteration, detail: "non-finite weight after update".into() });
    }
    Ok(())
}

/// One full-batch step from `net`, labelled with `iteration`.
pub fn gd_step(net: &NetworkState, sample: &TrainingSample, cfg: &TrainConfig, iteration: u64) -> Result<(NetworkState, StepRecord)> {
    let pre = preactivations(net, sample)?;
    let record = step_record(&pre, net.neurons(), &sample.labels, cfg.loss_kind, iteration);
    let mut next = net.clone();
    apply_update(&mut next, sample, &record, cfg)?;
    Ok((next, record))
}

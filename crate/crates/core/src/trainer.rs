//! Stateful driver that advances a network one full-batch step at a time.

use crate::data::TrainingSample;
use crate::error::{LabError, Result};
use crate::linalg::{mul, mul_transpose};
use crate::network::{
    apply_update, output_sign, preactivations, step_record, update_weight, Engine, NetworkState, StepRecord, TrainConfig,
};

enum State {
    Weights { net: NetworkState },
    Gram { init: NetworkState, gram: Vec<f64>, coef: Vec<f64> },
}

pub struct Trainer<'a> {
    sample: &'a TrainingSample,
    cfg: TrainConfig,
    iteration: u64,
    neurons: usize,
    /// Neuron-major `2m × 2n` preactivations at `iteration`.
    pre: Vec<f64>,
    state: State,
}

impl<'a> Trainer<'a> {
    pub fn new(sample: &'a TrainingSample, net0: NetworkState, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        net0.validate()?;
        let pre = preactivations(&net0, sample)?;
        let neurons = net0.neurons();
        let state = match cfg.engine {
            Engine::Weights => State::Weights { net: net0 },
            Engine::Gram => {
                let t = sample.len();
                let gram = mul_transpose(&sample.points, t, &sample.points, t, sample.d);
                State::Gram { init: net0, gram, coef: vec![0.0; neurons * t] }
            }
        };
        Ok(Trainer { sample, cfg, iteration: 0, neurons, pre, state })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn preactivations(&self) -> &[f64] {
        &self.pre
    }

    /// Record of the step that would be taken from the current state.
    pub fn record(&self) -> StepRecord {
        step_record(&self.pre, self.neurons, &self.sample.labels, self.cfg.loss_kind, self.iteration)
    }

    /// Applies a record produced by [`Trainer::record`] at the current iteration.
    pub fn apply(&mut self, record: &StepRecord) -> Result<()> {
        if record.iteration != self.iteration {
            return Err(LabError::Sequencing { expected: self.iteration, got: record.iteration });
        }
        let t = self.sample.len();
        match &mut self.state {
            State::Weights { net } => {
                if !record.active_pairs.is_empty() {
                    apply_update(net, self.sample, record, &self.cfg)?;
                    self.pre = preactivations(net, self.sample)?;
                }
            }
            State::Gram { gram, coef, .. } => {
                let mut delta = vec![0.0; t];
                for j in 0..self.neurons {
                    delta.iter_mut().for_each(|v| *v = 0.0);
                    let mut any = false;
                    for i in record.active_pairs.points_on(j) {
                        let c = update_weight(self.cfg.loss_kind, record.margins[i]) * self.sample.labels[i];
                        coef[j * t + i] += c;
                        for (dv, k) in delta.iter_mut().zip(&gram[i * t..(i + 1) * t]) {
                            *dv += c * k;
                        }
                        any = true;
                    }
                    if any {
                        let scale = output_sign(j) * self.cfg.eta;
                        for (p, dv) in self.pre[j * t..(j + 1) * t].iter_mut().zip(&delta) {
                            *p += scale * dv;
                        }
                    }
                }
                if self.pre.iter().any(|p| !p.is_finite()) {
                    return Err(LabError::NumericOverflow {
                        iteration: record.iteration,
                        detail: "non-finite preactivation after update".into(),
                    });
                }
            }
        }
        self.iteration += 1;
        Ok(())
    }

    /// The network at the current iteration.
    pub fn network(&self) -> NetworkState {
        match &self.state {
            State::Weights { net } => net.clone(),
            State::Gram { init, coef, .. } => {
                let t = self.sample.len();
                let d = self.sample.d;
                let moved = mul(coef, self.neurons, &self.sample.points, t, d);
                let mut net = init.clone();
                for j in 0..self.neurons {
                    let scale = output_sign(j) * self.cfg.eta;
                    for (w, v) in net.row_mut(j).iter_mut().zip(&moved[j * d..(j + 1) * d]) {
                        *w += scale * v;
                    }
                }
                net
            }
        }
    }
}

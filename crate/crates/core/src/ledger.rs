//! Exact integer bookkeeping of which (point, neuron) pairs produced updates.
//!
//! `C[t][i][j]` counts updates of point `i` on neuron `j` applied during
//! iterations `0..t`, so `C[t]` describes the state at iteration `t`.
//! Full matrices are kept at checkpoints; other iterations are rebuilt by
//! replaying the retained active-pair sets.

use serde::{Deserialize, Serialize};

use crate::data::TrainingSample;
use crate::error::{LabError, Result};
use crate::network::{ActivePairs, StepRecord};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: u64,
    /// Point-major `2n × 2m`.
    pub counts: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct UpdateLedger {
    points: usize,
    neurons: usize,
    record_every: u64,
    next: u64,
    current: Vec<u64>,
    checkpoints: Vec<Checkpoint>,
    /// `steps[t]` holds the pairs used at iteration `t`; empty when loaded from checkpoints only.
    steps: Vec<ActivePairs>,
    replayable: bool,
}

/// Counts over a window `(t0, t1)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowCounts {
    pub t0: u64,
    pub t1: u64,
    pub points: usize,
    pub neurons: usize,
    /// Point-major `T_ij(t0, t1)`.
    pub pairs: Vec<u64>,
    pub g_j: Vec<u64>,
    pub b_j: Vec<u64>,
    pub t_j: Vec<u64>,
    pub t_i: Vec<u64>,
    pub g: u64,
    pub b: u64,
    pub t: u64,
}

impl WindowCounts {
    pub fn from_pairs(t0: u64, t1: u64, pairs: Vec<u64>, points: usize, neurons: usize, sample: &TrainingSample) -> Self {
        let mut g_j = vec![0u64; neurons];
        let mut b_j = vec![0u64; neurons];
        let mut t_i = vec![0u64; points];
        for i in 0..points {
            let corrupt = sample.is_corrupt(i);
            for j in 0..neurons {
                let c = pairs[i * neurons + j];
                t_i[i] += c;
                if corrupt {
                    b_j[j] += c;
                } else {
                    g_j[j] += c;
                }
            }
        }
        let t_j: Vec<u64> = g_j.iter().zip(&b_j).map(|(g, b)| g + b).collect();
        let g = g_j.iter().sum();
        let b = b_j.iter().sum();
        WindowCounts { t0, t1, points, neurons, pairs, g_j, b_j, t_j, t_i, g, b, t: g + b }
    }

    pub fn pair(&self, i: usize, j: usize) -> u64 {
        self.pairs[i * self.neurons + j]
    }
}

impl UpdateLedger {
    pub fn new(points: usize, neurons: usize, record_every: u64) -> Self {
        let zero = vec![0u64; points * neurons];
        UpdateLedger {
            points,
            neurons,
            record_every: record_every.max(1),
            next: 0,
            current: zero.clone(),
            checkpoints: vec![Checkpoint { iteration: 0, counts: zero }],
            steps: Vec::new(),
            replayable: true,
        }
    }

    /// A ledger whose windows are limited to the given checkpoints.
    pub fn from_checkpoints(points: usize, neurons: usize, mut checkpoints: Vec<Checkpoint>) -> Result<Self> {
        checkpoints.sort_by_key(|c| c.iteration);
        if checkpoints.first().map(|c| c.iteration) != Some(0) {
            return Err(LabError::Range("ledger must contain a checkpoint at iteration 0".into()));
        }
        for c in &checkpoints {
            if c.counts.len() != points * neurons {
                return Err(LabError::Range(format!("checkpoint {} has wrong size", c.iteration)));
            }
        }
        let last = checkpoints.last().expect("non-empty");
        Ok(UpdateLedger {
            points,
            neurons,
            record_every: 1,
            next: last.iteration,
            current: last.counts.clone(),
            checkpoints,
            steps: Vec::new(),
            replayable: false,
        })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    /// One past the last recorded iteration.
    pub fn next_iteration(&self) -> u64 {
        self.next
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    pub fn checkpoint_iterations(&self) -> Vec<u64> {
        self.checkpoints.iter().map(|c| c.iteration).collect()
    }

    pub fn record(&mut self, record: &StepRecord) -> Result<()> {
        if record.iteration != self.next {
            return Err(LabError::Sequencing { expected: self.next, got: record.iteration });
        }
        let ap = &record.active_pairs;
        if ap.points() != self.points || ap.neurons() != self.neurons {
            return Err(LabError::InvalidArgument("step record shape does not match ledger".into()));
        }
        for (i, j) in ap.iter() {
            self.current[i * self.neurons + j] += 1;
        }
        if self.replayable {
            self.steps.push(ap.clone());
        }
        self.next += 1;
        if self.next.is_multiple_of(self.record_every) {
            self.checkpoint_now();
        }
        Ok(())
    }

    /// Materializes a checkpoint at the current iteration if none exists.
    pub fn checkpoint_now(&mut self) {
        if self.checkpoints.last().map(|c| c.iteration) != Some(self.next) {
            self.checkpoints.push(Checkpoint { iteration: self.next, counts: self.current.clone() });
        }
    }

    /// `C[t]`.
    pub fn counts_at(&self, t: u64) -> Result<Vec<u64>> {
        if t > self.next {
            return Err(LabError::Range(format!("iteration {t} is beyond the last recorded iteration {}", self.next)));
        }
        let pos = self.checkpoints.partition_point(|c| c.iteration <= t);
        let base = &self.checkpoints[pos - 1];
        if base.iteration == t {
            return Ok(base.counts.clone());
        }
        if !self.replayable {
            return Err(LabError::Range(format!("iteration {t} is not a checkpoint and no replay data is retained")));
        }
        let mut counts = base.counts.clone();
        for step in &self.steps[base.iteration as usize..t as usize] {
            for (i, j) in step.iter() {
                counts[i * self.neurons + j] += 1;
            }
        }
        Ok(counts)
    }

    /// `T_ij(t0, t1)`, point-major.
    pub fn window(&self, t0: u64, t1: u64) -> Result<Vec<u64>> {
        if t0 > t1 {
            return Err(LabError::Range(format!("window start {t0} exceeds end {t1}")));
        }
        let a = self.counts_at(t0)?;
        let b = self.counts_at(t1)?;
        b.iter()
            .zip(&a)
            .map(|(hi, lo)| {
                hi.checked_sub(*lo).ok_or_else(|| LabError::Range(format!("counts decrease over window ({t0}, {t1})")))
            })
            .collect()
    }

    pub fn window_counts(&self, t0: u64, t1: u64, sample: &TrainingSample) -> Result<WindowCounts> {
        if sample.len() != self.points {
            return Err(LabError::InvalidArgument("sample size does not match ledger".into()));
        }
        let pairs = self.window(t0, t1)?;
        Ok(WindowCounts::from_pairs(t0, t1, pairs, self.points, self.neurons, sample))
    }

    /// Adds `delta` to one stored count at a checkpoint; used to exercise the checkers.
    pub fn perturb(&mut self, checkpoint: usize, i: usize, j: usize, delta: i64) -> Result<()> {
        let n = self.neurons;
        let cp = self
            .checkpoints
            .get_mut(checkpoint)
            .ok_or_else(|| LabError::Range(format!("no checkpoint number {checkpoint}")))?;
        let slot = &mut cp.counts[i * n + j];
        *slot = slot.checked_add_signed(delta).ok_or_else(|| LabError::Range("perturbation underflows".into()))?;
        if cp.iteration == self.next {
            self.current[i * n + j] = cp.counts[i * n + j];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ActivePairs;

    fn rec(t: u64, pairs: &[(usize, usize)]) -> StepRecord {
        let mut ap = ActivePairs::new(4, 2);
        for &(i, j) in pairs {
            ap.insert(i, j);
        }
        StepRecord { iteration: t, losses: vec![1.0; 4], margins: vec![0.0; 4], active_pairs: ap }
    }

    #[test]
    fn empty_record_leaves_counts_unchanged() {
        let mut l = UpdateLedger::new(4, 2, 1);
        l.record(&rec(0, &[])).unwrap();
        assert_eq!(l.counts_at(1).unwrap(), vec![0; 8]);
    }

    #[test]
    fn single_pair_increments_one_entry() {
        let mut l = UpdateLedger::new(4, 2, 5);
        l.record(&rec(0, &[(3, 1)])).unwrap();
        let c = l.counts_at(1).unwrap();
        assert_eq!(c.iter().sum::<u64>(), 1);
        assert_eq!(c[3 * 2 + 1], 1);
    }

    #[test]
    fn out_of_order_record_is_a_sequencing_error() {
        let mut l = UpdateLedger::new(4, 2, 1);
        assert!(matches!(l.record(&rec(1, &[])), Err(LabError::Sequencing { expected: 0, got: 1 })));
    }

    #[test]
    fn future_window_is_a_range_error() {
        let l = UpdateLedger::new(4, 2, 1);
        assert!(matches!(l.window(0, 1), Err(LabError::Range(_))));
        assert!(l.window(0, 0).is_ok());
    }

    #[test]
    fn checkpoint_only_ledger_rejects_interior_windows() {
        let mut l = UpdateLedger::new(4, 2, 3);
        for t in 0..6 {
            l.record(&rec(t, &[(0, 0)])).unwrap();
        }
        let loaded = UpdateLedger::from_checkpoints(4, 2, l.checkpoints().to_vec()).unwrap();
        assert_eq!(loaded.window(3, 6).unwrap(), l.window(3, 6).unwrap());
        assert!(matches!(loaded.window(0, 4), Err(LabError::Range(_))));
    }

    #[test]
    fn perturbation_moves_a_single_count() {
        let mut l = UpdateLedger::new(4, 2, 1);
        l.record(&rec(0, &[(1, 1)])).unwrap();
        l.perturb(1, 2, 0, 1).unwrap();
        let c = l.counts_at(1).unwrap();
        assert_eq!(c[2 * 2], 1);
        assert_eq!(c.iter().sum::<u64>(), 2);
    }
}

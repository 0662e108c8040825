//! The signal-plus-orthogonal-noise data model.
//!
//! Indices are zero-based in code; the sign pattern uses the one-based index,
//! so point `i` has parity sign `(-1)^(i+1)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::linalg::{dot, mul_transpose, norm};

/// `(-1)^(i+1)` for zero-based index `i`.
pub fn parity_sign(i: usize) -> f64 {
    if i % 2 == 1 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub gamma: f64,
    pub rho: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(LabError::InvalidConfig("n must be positive".into()));
        }
        if self.k > self.n {
            return Err(LabError::InvalidConfig(format!("k = {} exceeds n = {}", self.k, self.n)));
        }
        if self.d < 3 {
            return Err(LabError::InvalidConfig(format!("d = {} must be at least 3", self.d)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(LabError::InvalidConfig(format!("gamma = {} outside [0, 1]", self.gamma)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(LabError::InvalidConfig(format!("rho = {} outside (0, 1)", self.rho)));
        }
        Ok(())
    }

    /// Total number of training points, `2n`.
    pub fn points(&self) -> usize {
        2 * self.n
    }
}

/// Coherence level `sqrt(3 ln(2n²/δ) / d)` below which noise pairs stay with probability `1 - δ`.
pub fn coherence_target(n: usize, d: usize, delta: f64) -> f64 {
    let n = n as f64;
    (3.0 * (2.0 * n * n / delta).ln() / d as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub gamma: f64,
    /// Row-major `2n × d`.
    pub points: Vec<f64>,
    pub labels: Vec<f64>,
    pub beta: Vec<f64>,
    pub clean_idx: Vec<usize>,
    pub corrupt_idx: Vec<usize>,
    pub signal: Vec<f64>,
    /// Row-major `2n × d`, each row orthogonal to `signal`.
    pub noises: Vec<f64>,
}

impl TrainingSample {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn noise(&self, i: usize) -> &[f64] {
        &self.noises[i * self.d..(i + 1) * self.d]
    }

    pub fn is_corrupt(&self, i: usize) -> bool {
        self.beta[i] < 0.0
    }

    /// Assembles a sample from explicit noise rows; `corrupt` lists zero-based indices.
    pub fn from_noises(gamma: f64, noises: Vec<f64>, d: usize, corrupt: &[usize]) -> Result<Self> {
        if d < 2 || !noises.len().is_multiple_of(d) || !(noises.len() / d).is_multiple_of(2) {
            return Err(LabError::InvalidArgument("noise buffer must hold 2n rows of length d".into()));
        }
        let total = noises.len() / d;
        let mut beta = vec![1.0; total];
        for &i in corrupt {
            if i >= total {
                return Err(LabError::InvalidArgument(format!("corrupt index {i} out of range")));
            }
            beta[i] = -1.0;
        }
        let k = corrupt.iter().filter(|&&i| i % 2 == 0).count();
        let mut signal = vec![0.0; d];
        signal[0] = 1.0;
        let (sg, sn) = (gamma.sqrt(), (1.0 - gamma).sqrt());
        let mut points = vec![0.0; total * d];
        for i in 0..total {
            let s = parity_sign(i);
            let row = &mut points[i * d..(i + 1) * d];
            for c in 0..d {
                row[c] = s * (sg * signal[c] + sn * beta[i] * noises[i * d + c]);
            }
        }
        let labels = (0..total).map(|i| beta[i] * parity_sign(i)).collect();
        let clean_idx = (0..total).filter(|&i| beta[i] > 0.0).collect();
        let mut corrupt_idx: Vec<usize> = corrupt.to_vec();
        corrupt_idx.sort_unstable();
        corrupt_idx.dedup();
        Ok(TrainingSample {
            n: total / 2,
            k,
            d,
            gamma,
            points,
            labels,
            beta,
            clean_idx,
            corrupt_idx,
            signal,
            noises,
        })
    }
}

/// Uniform draw from the unit sphere intersected with the orthogonal complement of `v`.
pub fn sample_unit_orthogonal<R: Rng + ?Sized>(d: usize, v: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if d < 2 {
        return Err(LabError::InvalidConfig(format!("d = {d} must be at least 2")));
    }
    if v.len() != d {
        return Err(LabError::InvalidArgument("signal dimension mismatch".into()));
    }
    loop {
        let mut u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let proj = dot(&u, v);
        for (a, b) in u.iter_mut().zip(v) {
            *a -= proj * b;
        }
        let r = norm(&u);
        if r < 1e-30 {
            continue;
        }
        for a in u.iter_mut() {
            *a /= r;
        }
        return Ok(u);
    }
}

/// Draws `k` corrupt indices per parity class, then one noise vector per point in index order.
pub fn generate_sample<R: Rng + ?Sized>(cfg: &DataConfig, rng: &mut R) -> Result<TrainingSample> {
    cfg.validate()?;
    let (n, d) = (cfg.n, cfg.d);
    let mut corrupt = Vec::with_capacity(2 * cfg.k);
    for parity in 0..2 {
        for slot in rand::seq::index::sample(rng, n, cfg.k).into_vec() {
            corrupt.push(2 * slot + parity);
        }
    }
    let mut signal = vec![0.0; d];
    signal[0] = 1.0;
    let mut noises = Vec::with_capacity(2 * n * d);
    for _ in 0..2 * n {
        noises.extend(sample_unit_orthogonal(d, &signal, rng)?);
    }
    TrainingSample::from_noises(cfg.gamma, noises, d, &corrupt)
}

/// A clean test point `y(√γ v + √(1-γ) n)` with `y` uniform on `{-1, +1}`.
pub fn generate_test_point<R: Rng + ?Sized>(cfg: &DataConfig, rng: &mut R) -> Result<(Vec<f64>, f64)> {
    cfg.validate()?;
    let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut signal = vec![0.0; cfg.d];
    signal[0] = 1.0;
    let noise = sample_unit_orthogonal(cfg.d, &signal, rng)?;
    let (sg, sn) = (cfg.gamma.sqrt(), (1.0 - cfg.gamma).sqrt());
    let x = noise.iter().zip(&signal).map(|(nc, vc)| y * (sg * vc + sn * nc)).collect();
    Ok((x, y))
}

/// Row-major Gram matrix of the noise vectors.
pub fn noise_gram(sample: &TrainingSample) -> Vec<f64> {
    let t = sample.len();
    mul_transpose(&sample.noises, t, &sample.noises, t, sample.d)
}

/// `max_{i≠ℓ} |⟨n_i, n_ℓ⟩|`, or 0 for a single point.
pub fn max_noise_coherence(sample: &TrainingSample) -> f64 {
    coherence_from_gram(&noise_gram(sample), sample.len())
}

pub(crate) fn coherence_from_gram(gram: &[f64], t: usize) -> f64 {
    let mut best = 0.0f64;
    for i in 0..t {
        for l in 0..t {
            if i != l {
                best = best.max(gram[i * t + l].abs());
            }
        }
    }
    best
}

/// `λ_iℓ = β(i)β(ℓ)γ + (1-γ)⟨n_i, n_ℓ⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaMatrix {
    pub size: usize,
    pub entries: Vec<f64>,
}

impl LambdaMatrix {
    pub fn get(&self, i: usize, l: usize) -> f64 {
        self.entries[i * self.size + l]
    }
}

pub fn compute_lambda_matrix(sample: &TrainingSample) -> LambdaMatrix {
    lambda_from_gram(sample, &noise_gram(sample))
}

pub(crate) fn lambda_from_gram(sample: &TrainingSample, gram: &[f64]) -> LambdaMatrix {
    let t = sample.len();
    let g = sample.gamma;
    let mut entries = vec![0.0; t * t];
    for i in 0..t {
        for l in 0..t {
            entries[i * t + l] = sample.beta[i] * sample.beta[l] * g + (1.0 - g) * gram[i * t + l];
        }
    }
    LambdaMatrix { size: t, entries }
}

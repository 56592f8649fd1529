//! Action distributions: the range-squashed diagonal Gaussian used by every
//! continuous policy, the temperature softmax that composes a policy set,
//! categorical draws over it, and the Zeta sampler behind behavior transfer.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Maps an unbounded network output into `[low, high]` through tanh.
pub fn squash_mean(raw_mean: &[f64], low: &[f64], high: &[f64]) -> Result<Vec<f64>> {
    check_bounds(low, high)?;
    if raw_mean.len() != low.len() {
        return Err(Error::shape("squash_mean", low.len(), raw_mean.len()));
    }
    Ok(raw_mean
        .iter()
        .zip(low.iter().zip(high))
        .map(|(&r, (&lo, &hi))| squash_scalar(r, lo, hi))
        .collect())
}

#[inline]
pub(crate) fn squash_scalar(raw: f64, low: f64, high: f64) -> f64 {
    low + (high - low) * (raw.tanh() + 1.0) * 0.5
}

/// d squash / d raw.
#[inline]
pub(crate) fn squash_derivative(raw: f64, low: f64, high: f64) -> f64 {
    let t = raw.tanh();
    0.5 * (high - low) * (1.0 - t * t)
}

pub(crate) fn check_bounds(low: &[f64], high: &[f64]) -> Result<()> {
    if low.len() != high.len() {
        return Err(Error::shape("action bounds", low.len(), high.len()));
    }
    if let Some(i) = low.iter().zip(high).position(|(l, h)| !(l < h)) {
        return Err(Error::InvalidArgument(format!(
            "action bound {i}: low {} must be below high {}",
            low[i], high[i]
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn clamp_log_std(v: f64) -> f64 {
    v.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

/// Diagonal Gaussian with tanh-squashed mean and state-independent
/// standard deviation. The density is that of the unsquashed Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicyHead {
    raw_mean: Vec<f64>,
    log_std: Vec<f64>,
    low: Vec<f64>,
    high: Vec<f64>,
}

impl GaussianPolicyHead {
    pub fn new(raw_mean: Vec<f64>, log_std: &[f64], low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        check_bounds(&low, &high)?;
        if raw_mean.len() != low.len() || log_std.len() != low.len() {
            return Err(Error::shape(
                "GaussianPolicyHead",
                format!("{} action dims", low.len()),
                format!("mean {} / log_std {}", raw_mean.len(), log_std.len()),
            ));
        }
        Ok(Self {
            raw_mean,
            log_std: log_std.iter().map(|&v| clamp_log_std(v)).collect(),
            low,
            high,
        })
    }

    pub fn dim(&self) -> usize {
        self.raw_mean.len()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn squashed_mean(&self) -> Vec<f64> {
        self.raw_mean
            .iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(&r, (&lo, &hi))| squash_scalar(r, lo, hi))
            .collect()
    }

    /// Greedy action: the squashed mean.
    pub fn greedy(&self) -> Vec<f64> {
        self.squashed_mean()
    }

    pub fn log_prob(&self, action: &[f64]) -> Result<f64> {
        if action.len() != self.dim() {
            return Err(Error::shape("gaussian_log_prob", self.dim(), action.len()));
        }
        Ok(self
            .squashed_mean()
            .iter()
            .zip(&self.log_std)
            .zip(action)
            .map(|((&mu, &ls), &a)| {
                let z = (a - mu) / ls.exp();
                -0.5 * z * z - ls - HALF_LN_2PI
            })
            .sum())
    }

    /// Draws `mean + std·ε` and clips into the action range.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let noise: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.sample_with_noise(&noise).1
    }

    /// Returns the unclipped and the clipped action for given standard-normal noise.
    pub fn sample_with_noise(&self, noise: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let raw: Vec<f64> = self
            .squashed_mean()
            .iter()
            .zip(&self.log_std)
            .zip(noise)
            .map(|((&mu, &ls), &e)| mu + ls.exp() * e)
            .collect();
        let clipped = clip_action(&raw, &self.low, &self.high);
        (raw, clipped)
    }
}

pub fn clip_action(action: &[f64], low: &[f64], high: &[f64]) -> Vec<f64> {
    action
        .iter()
        .zip(low.iter().zip(high))
        .map(|(&a, (&lo, &hi))| a.clamp(lo, hi))
        .collect()
}

/// Per-dimension Gaussian log-density and its partial derivatives with
/// respect to the raw (pre-squash) mean and the log standard deviation.
pub(crate) struct LogProbGrad {
    pub log_prob: f64,
    pub d_raw_mean: Vec<f64>,
    pub d_log_std: Vec<f64>,
}

pub(crate) fn log_prob_with_grad(raw_mean: &[f64], log_std: &[f64], low: &[f64], high: &[f64], action: &[f64]) -> LogProbGrad {
    let d = raw_mean.len();
    let mut out = LogProbGrad {
        log_prob: 0.0,
        d_raw_mean: vec![0.0; d],
        d_log_std: vec![0.0; d],
    };
    for j in 0..d {
        let mu = squash_scalar(raw_mean[j], low[j], high[j]);
        let ls = clamp_log_std(log_std[j]);
        let inv_var = (-2.0 * ls).exp();
        let diff = action[j] - mu;
        out.log_prob += -0.5 * diff * diff * inv_var - ls - HALF_LN_2PI;
        out.d_raw_mean[j] = diff * inv_var * squash_derivative(raw_mean[j], low[j], high[j]);
        out.d_log_std[j] = if (LOG_STD_MIN..=LOG_STD_MAX).contains(&log_std[j]) {
            diff * diff * inv_var - 1.0
        } else {
            0.0
        };
    }
    out
}

/// Softmax selection over a policy set's candidate values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDistribution {
    pub probabilities: Vec<f64>,
    pub temperature: f64,
    pub q_values: Vec<f64>,
}

/// `p_i = exp(q_i/α) / Σ_j exp(q_j/α)`, computed after subtracting the max.
pub fn softmax_temperature(q_values: &[f64], alpha: f64) -> Result<SelectionDistribution> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {alpha}")));
    }
    if q_values.is_empty() {
        return Err(Error::InvalidArgument("softmax over an empty value set".into()));
    }
    if let Some(bad) = q_values.iter().find(|q| !q.is_finite()) {
        return Err(Error::NonFinite(format!("candidate value {bad}")));
    }
    let max = q_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = q_values.iter().map(|q| ((q - max) / alpha).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(SelectionDistribution {
        probabilities: exps.iter().map(|e| e / total).collect(),
        temperature: alpha,
        q_values: q_values.to_vec(),
    })
}

/// Draws an index with probability `dist.probabilities[i]`.
pub fn categorical_sample<R: Rng + ?Sized>(dist: &SelectionDistribution, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in dist.probabilities.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave the cumulative sum just under 1.
    dist.probabilities.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Index of the largest value, first index on ties.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF sampler for the Zeta distribution `P(n) ∝ n^-a`, truncated at
/// [`ZetaSampler::TRUNCATION`] with the tail mass assigned to the last point.
#[derive(Debug, Clone)]
pub struct ZetaSampler {
    a: f64,
    cdf: Vec<f64>,
}

impl ZetaSampler {
    pub const TRUNCATION: usize = 10_000;

    pub fn new(a: f64) -> Result<Self> {
        if !(a > 1.0 && a.is_finite()) {
            return Err(Error::InvalidArgument(format!("zeta parameter must exceed 1, got {a}")));
        }
        let zeta = riemann_zeta(a);
        let mut cdf = Vec::with_capacity(Self::TRUNCATION);
        let mut acc = 0.0;
        for n in 1..Self::TRUNCATION {
            acc += (n as f64).powf(-a) / zeta;
            cdf.push(acc);
        }
        cdf.push(1.0);
        Ok(Self { a, cdf })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// `P(N ≤ n)` of the truncated distribution.
    pub fn cdf(&self, n: usize) -> f64 {
        match n {
            0 => 0.0,
            n if n >= Self::TRUNCATION => 1.0,
            n => self.cdf[n - 1],
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u) + 1
    }
}

/// Single draw; builds the table each call, so prefer [`ZetaSampler`] in loops.
pub fn zeta_sample<R: Rng + ?Sized>(a: f64, rng: &mut R) -> Result<usize> {
    Ok(ZetaSampler::new(a)?.sample(rng))
}

/// ζ(a) for a > 1: direct sum to 10⁴ plus an Euler–Maclaurin tail.
pub fn riemann_zeta(a: f64) -> f64 {
    const N: usize = 10_000;
    let head: f64 = (1..=N).rev().map(|n| (n as f64).powf(-a)).sum();
    let nf = N as f64;
    let tail = nf.powf(1.0 - a) / (a - 1.0) - 0.5 * nf.powf(-a) + a / 12.0 * nf.powf(-a - 1.0);
    head + tail
}

use rand::Rng;

use super::{weighted_moments, ExpectationEstimate, SampleSet, Sampler, SamplerId, SamplerKind};
use crate::error::{Error, Result};
use crate::problem::{BinaryVector, ConstrainedProblem, EffectiveQubo};

pub const MAX_EXACT_VARS: usize = 20;

/// Boltzmann distribution over all `2^N` states, indexed so that bit `i` of
/// the state index is `x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    pub n_vars: usize,
    pub probabilities: Vec<f64>,
    pub beta: f64,
    pub log_partition: f64,
}

impl ExactDistribution {
    pub fn state(&self, index: usize) -> BinaryVector {
        BinaryVector::from_index(index as u64, self.n_vars)
    }

    /// Inverse-CDF draw of `n` states.
    pub fn draw<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<BinaryVector> {
        let mut cdf = Vec::with_capacity(self.probabilities.len());
        let mut acc = 0.0;
        for &p in &self.probabilities {
            acc += p;
            cdf.push(acc);
        }
        (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                self.state(idx)
            })
            .collect()
    }

    /// Every state weighted by its probability.
    pub fn to_sample_set(&self, q: &EffectiveQubo) -> Result<SampleSet> {
        let samples = (0..self.probabilities.len()).map(|i| self.state(i)).collect();
        SampleSet::from_weighted(q, samples, self.probabilities.clone())
    }
}

/// Enumerates `p(x) = exp(-beta E(x)) / Z` with a log-sum-exp normalization.
pub fn exact_boltzmann(q: &EffectiveQubo, beta: f64) -> Result<ExactDistribution> {
    let n = q.n_vars();
    if n > MAX_EXACT_VARS {
        return Err(Error::TooLarge {
            n_vars: n,
            max: MAX_EXACT_VARS,
        });
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidValue(format!("beta must be >= 0, got {beta}")));
    }
    let states = 1usize << n;
    let mut bits = vec![0u8; n];
    let mut log_weights = Vec::with_capacity(states);
    for idx in 0..states {
        for (i, b) in bits.iter_mut().enumerate() {
            *b = ((idx >> i) & 1) as u8;
        }
        log_weights.push(-beta * q.energy_unchecked(&bits));
    }
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = log_weights.iter().map(|lw| (lw - max).exp()).sum();
    let log_partition = max + sum.ln();
    let probabilities = log_weights
        .iter()
        .map(|lw| (lw - log_partition).exp())
        .collect();
    Ok(ExactDistribution {
        n_vars: n,
        probabilities,
        beta,
        log_partition,
    })
}

/// Exact mean and variance of every `f_k` under `d`.
pub fn exact_expectations(
    p: &ConstrainedProblem,
    d: &ExactDistribution,
) -> Result<ExpectationEstimate> {
    Error::check_len("exact distribution", p.n_vars(), d.n_vars)?;
    let values: Vec<Vec<f64>> = (0..d.probabilities.len())
        .map(|i| p.constraint_values_unchecked(d.state(i).bits()))
        .collect();
    let total: f64 = d.probabilities.iter().sum();
    Ok(weighted_moments(
        &values,
        &d.probabilities,
        total,
        p.n_constraints(),
    ))
}

/// Deterministic "sampler" that returns the full Boltzmann distribution.
#[derive(Debug, Clone, Copy)]
pub struct ExactSampler {
    pub beta: f64,
}

impl ExactSampler {
    pub fn new(beta: f64) -> Self {
        Self { beta }
    }
}

impl Sampler for ExactSampler {
    fn sample(&self, q: &EffectiveQubo, _seed: u64) -> Result<SampleSet> {
        exact_boltzmann(q, self.beta)?.to_sample_set(q)
    }

    fn id(&self) -> SamplerId {
        SamplerId {
            sampler: SamplerKind::Exact,
            trotter: None,
            beta: self.beta,
        }
    }
}

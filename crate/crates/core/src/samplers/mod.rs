//! Boltzmann samplers for an [`EffectiveQubo`] and the constraint statistics
//! estimated from their output.
//!
//! Four backends share the [`Sampler`] trait: single-flip Metropolis-Hastings,
//! path-integral simulated quantum annealing, exact enumeration (a
//! deterministic oracle for small problems) and a remote HTTP annealer.

mod exact;
mod mh;
pub mod remote;
mod sqa;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{BinaryVector, ConstrainedProblem, EffectiveQubo};

pub use exact::{exact_boltzmann, exact_expectations, ExactDistribution, ExactSampler, MAX_EXACT_VARS};
pub use mh::{metropolis_acceptance, mh_sample, MhSampler};
pub use remote::{remote_sample, RemoteError, RemoteSampler};
pub use sqa::{sqa_sample, trotter_coupling, SqaSampler};

/// Parameters shared by the stochastic samplers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub beta: f64,
    #[serde(default = "defaults::num_reads")]
    pub num_reads: usize,
    #[serde(default = "defaults::sweeps_per_read", alias = "sweeps")]
    pub sweeps_per_read: usize,
    #[serde(default = "defaults::trotter")]
    pub trotter: usize,
    #[serde(default = "defaults::gamma_start")]
    pub gamma_start: f64,
    #[serde(default = "defaults::gamma_end")]
    pub gamma_end: f64,
    #[serde(default)]
    pub seed: u64,
}

pub mod defaults {
    pub const NUM_READS: usize = 100;
    pub const SWEEPS_PER_READ: usize = 1000;
    pub const TROTTER: usize = 4;
    pub const GAMMA_START: f64 = 10.0;
    pub const GAMMA_END: f64 = 0.1;

    pub(crate) fn num_reads() -> usize {
        NUM_READS
    }
    pub(crate) fn sweeps_per_read() -> usize {
        SWEEPS_PER_READ
    }
    pub(crate) fn trotter() -> usize {
        TROTTER
    }
    pub(crate) fn gamma_start() -> f64 {
        GAMMA_START
    }
    pub(crate) fn gamma_end() -> f64 {
        GAMMA_END
    }
}

impl SamplerConfig {
    /// Default budgets at the given inverse temperature. There is no default
    /// `beta`.
    pub fn new(beta: f64) -> Self {
        Self {
            beta,
            num_reads: defaults::NUM_READS,
            sweeps_per_read: defaults::SWEEPS_PER_READ,
            trotter: defaults::TROTTER,
            gamma_start: defaults::GAMMA_START,
            gamma_end: defaults::GAMMA_END,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_reads(mut self, num_reads: usize, sweeps_per_read: usize) -> Self {
        self.num_reads = num_reads;
        self.sweeps_per_read = sweeps_per_read;
        self
    }

    pub fn with_trotter(mut self, trotter: usize) -> Self {
        self.trotter = trotter;
        self
    }

    pub fn with_gamma(mut self, start: f64, end: f64) -> Self {
        self.gamma_start = start;
        self.gamma_end = end;
        self
    }

    /// `beta = 0` is accepted here (the uniform limit); SQA rejects it
    /// separately because its replica coupling is undefined there.
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.num_reads == 0 {
            return Err(Error::InvalidConfig("num_reads must be positive".into()));
        }
        if self.sweeps_per_read == 0 {
            return Err(Error::InvalidConfig("sweeps_per_read must be positive".into()));
        }
        if self.trotter == 0 {
            return Err(Error::InvalidConfig("trotter must be >= 1".into()));
        }
        if !(self.gamma_end > 0.0 && self.gamma_start >= self.gamma_end)
            || !self.gamma_start.is_finite()
        {
            return Err(Error::InvalidConfig(format!(
                "transverse field schedule needs gamma_start >= gamma_end > 0, got {} -> {}",
                self.gamma_start, self.gamma_end
            )));
        }
        Ok(())
    }
}

/// Weighted configurations returned by a sampler.
///
/// Stochastic samplers use occurrence counts as weights; the exact sampler
/// uses Boltzmann probabilities. Statistics are always weight-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    samples: Vec<BinaryVector>,
    energies: Vec<f64>,
    weights: Vec<f64>,
}

impl SampleSet {
    /// Builds a set from samples and weights, recomputing energies from `q`.
    pub fn from_weighted(
        q: &EffectiveQubo,
        samples: Vec<BinaryVector>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        Error::check_len("sample weights", samples.len(), weights.len())?;
        for x in &samples {
            Error::check_len("sample", q.n_vars(), x.len())?;
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidValue(format!("sample weight {w} is not a valid weight")));
        }
        let energies = samples.iter().map(|x| q.energy_unchecked(x.bits())).collect();
        Ok(Self {
            samples,
            energies,
            weights,
        })
    }

    /// One occurrence per sample.
    pub fn from_samples(q: &EffectiveQubo, samples: Vec<BinaryVector>) -> Result<Self> {
        let weights = vec![1.0; samples.len()];
        Self::from_weighted(q, samples, weights)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[BinaryVector] {
        &self.samples
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BinaryVector, f64, f64)> {
        self.samples
            .iter()
            .zip(&self.energies)
            .zip(&self.weights)
            .map(|((x, &e), &w)| (x, e, w))
    }

    /// Weighted mean of each bit.
    pub fn bit_means(&self) -> Vec<f64> {
        let n = self.samples.first().map_or(0, BinaryVector::len);
        let total = self.total_weight();
        let mut acc = vec![0.0; n];
        for (x, _, w) in self.iter() {
            for (a, &b) in acc.iter_mut().zip(x.bits()) {
                *a += w * f64::from(b);
            }
        }
        acc.iter_mut().for_each(|a| *a /= total);
        acc
    }
}

/// Which backend produced a set of samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Mh,
    Sqa,
    Exact,
    Remote,
}

impl SamplerKind {
    /// Short label used in method names such as `SQA-QA`.
    pub fn label(self) -> &'static str {
        match self {
            SamplerKind::Mh => "MH",
            SamplerKind::Sqa => "SQA",
            SamplerKind::Exact => "EXACT",
            SamplerKind::Remote => "QA",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Mh => "mh",
            SamplerKind::Sqa => "sqa",
            SamplerKind::Exact => "exact",
            SamplerKind::Remote => "remote",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mh" => Ok(SamplerKind::Mh),
            "sqa" => Ok(SamplerKind::Sqa),
            "exact" => Ok(SamplerKind::Exact),
            "remote" => Ok(SamplerKind::Remote),
            other => Err(Error::InvalidConfig(format!("unknown sampler kind {other:?}"))),
        }
    }
}

/// Identity of a sampler as recorded in schedule and result metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerId {
    pub sampler: SamplerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trotter: Option<usize>,
    pub beta: f64,
}

/// A Boltzmann sampler for `exp(-beta * E(x))`.
///
/// `seed` overrides any seed stored in the sampler's own configuration so the
/// solver can hand out one derived seed per iteration.
pub trait Sampler: Send + Sync {
    fn sample(&self, q: &EffectiveQubo, seed: u64) -> Result<SampleSet>;

    fn id(&self) -> SamplerId;

    fn beta(&self) -> f64 {
        self.id().beta
    }
}

impl<S: Sampler + ?Sized> Sampler for &S {
    fn sample(&self, q: &EffectiveQubo, seed: u64) -> Result<SampleSet> {
        (**self).sample(q, seed)
    }

    fn id(&self) -> SamplerId {
        (**self).id()
    }
}

impl<S: Sampler + ?Sized> Sampler for Box<S> {
    fn sample(&self, q: &EffectiveQubo, seed: u64) -> Result<SampleSet> {
        (**self).sample(q, seed)
    }

    fn id(&self) -> SamplerId {
        (**self).id()
    }
}

/// Serializable description of a sampler. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "SpecRepr")]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    #[serde(flatten)]
    pub config: SamplerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecRepr {
    kind: SamplerKind,
    beta: f64,
    #[serde(default = "defaults::num_reads")]
    num_reads: usize,
    #[serde(default = "defaults::sweeps_per_read", alias = "sweeps")]
    sweeps_per_read: usize,
    #[serde(default = "defaults::trotter")]
    trotter: usize,
    #[serde(default = "defaults::gamma_start")]
    gamma_start: f64,
    #[serde(default = "defaults::gamma_end")]
    gamma_end: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    endpoint: Option<String>,
    #[serde(default)]
    timeout_secs: Option<f64>,
}

impl From<SpecRepr> for SamplerSpec {
    fn from(r: SpecRepr) -> Self {
        Self {
            kind: r.kind,
            config: SamplerConfig {
                beta: r.beta,
                num_reads: r.num_reads,
                sweeps_per_read: r.sweeps_per_read,
                trotter: r.trotter,
                gamma_start: r.gamma_start,
                gamma_end: r.gamma_end,
                seed: r.seed,
            },
            endpoint: r.endpoint,
            timeout_secs: r.timeout_secs,
        }
    }
}

impl SamplerSpec {
    pub fn new(kind: SamplerKind, config: SamplerConfig) -> Self {
        Self {
            kind,
            config,
            endpoint: None,
            timeout_secs: None,
        }
    }

    pub fn remote(endpoint: impl Into<String>, config: SamplerConfig) -> Self {
        Self {
            kind: SamplerKind::Remote,
            config,
            endpoint: Some(endpoint.into()),
            timeout_secs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        match self.kind {
            SamplerKind::Remote if self.endpoint.is_none() => Err(Error::InvalidConfig(
                "remote sampler requires an endpoint".into(),
            )),
            SamplerKind::Sqa if !(self.config.beta > 0.0) => {
                Err(Error::InvalidConfig("SQA requires beta > 0".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Sampler>> {
        self.validate()?;
        Ok(match self.kind {
            SamplerKind::Mh => Box::new(MhSampler::new(self.config)),
            SamplerKind::Sqa => Box::new(SqaSampler::new(self.config)),
            SamplerKind::Exact => Box::new(ExactSampler::new(self.config.beta)),
            SamplerKind::Remote => {
                let mut remote =
                    RemoteSampler::new(self.endpoint.clone().unwrap_or_default(), self.config);
                if let Some(secs) = self.timeout_secs {
                    if !(secs > 0.0 && secs.is_finite()) {
                        return Err(Error::InvalidConfig(format!("bad timeout {secs}")));
                    }
                    remote = remote.with_timeout(std::time::Duration::from_secs_f64(secs));
                }
                Box::new(remote)
            }
        })
    }
}

/// Per-constraint mean `<f_k>` and variance `<f_k^2> - <f_k>^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationEstimate {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl ExpectationEstimate {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Weighted sample mean and population variance of every `f_k`.
pub fn estimate_expectations(s: &SampleSet, p: &ConstrainedProblem) -> Result<ExpectationEstimate> {
    if s.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let total = s.total_weight();
    if !(total > 0.0) {
        return Err(Error::InvalidValue("sample set has zero total weight".into()));
    }
    let m = p.n_constraints();
    let mut values = Vec::with_capacity(s.len());
    for (x, _, _) in s.iter() {
        p.check_dims(x)?;
        values.push(p.constraint_values_unchecked(x.bits()));
    }
    Ok(weighted_moments(&values, s.weights(), total, m))
}

/// Two-pass weighted moments; `values[i][k]` is `f_k` of sample `i`.
pub(crate) fn weighted_moments(
    values: &[Vec<f64>],
    weights: &[f64],
    total: f64,
    m: usize,
) -> ExpectationEstimate {
    let mut mean = vec![0.0; m];
    for (fx, &w) in values.iter().zip(weights) {
        for (acc, f) in mean.iter_mut().zip(fx) {
            *acc += w * f;
        }
    }
    mean.iter_mut().for_each(|a| *a /= total);
    let mut variance = vec![0.0; m];
    for (fx, &w) in values.iter().zip(weights) {
        for ((acc, f), mu) in variance.iter_mut().zip(fx).zip(&mean) {
            let d = f - mu;
            *acc += w * d * d;
        }
    }
    variance.iter_mut().for_each(|a| *a = (*a / total).max(0.0));
    ExpectationEstimate { mean, variance }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{LinearConstraint, QuadraticObjective};

    fn one_constraint(coeffs: Vec<f64>) -> ConstrainedProblem {
        let n = coeffs.len();
        ConstrainedProblem::new(
            QuadraticObjective::zero(n),
            vec![LinearConstraint::new(coeffs, 0.0).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::new(1.0).validate().is_ok());
        assert!(SamplerConfig::new(0.0).validate().is_ok());
        assert!(SamplerConfig::new(-1.0).validate().is_err());
        assert!(SamplerConfig::new(1.0).with_reads(0, 10).validate().is_err());
        assert!(SamplerConfig::new(1.0).with_reads(10, 0).validate().is_err());
        assert!(SamplerConfig::new(1.0).with_trotter(0).validate().is_err());
        assert!(SamplerConfig::new(1.0).with_gamma(0.1, 1.0).validate().is_err());
        assert!(SamplerConfig::new(1.0).with_gamma(1.0, 0.0).validate().is_err());
    }

    #[test]
    fn single_sample_has_zero_variance() {
        let p = one_constraint(vec![1.5, -2.0]);
        let q = p.effective_qubo(&crate::problem::AuxiliaryState::zeros(1)).unwrap();
        let s = SampleSet::from_samples(&q, vec![BinaryVector::new(vec![1, 1]).unwrap()]).unwrap();
        let est = estimate_expectations(&s, &p).unwrap();
        assert_eq!(est.mean, vec![-0.5]);
        assert_eq!(est.variance, vec![0.0]);
    }

    #[test]
    fn two_equal_weight_samples() {
        let p = one_constraint(vec![1.0, 0.0]);
        let q = p.effective_qubo(&crate::problem::AuxiliaryState::zeros(1)).unwrap();
        let s = SampleSet::from_samples(
            &q,
            vec![
                BinaryVector::new(vec![0, 1]).unwrap(),
                BinaryVector::new(vec![1, 1]).unwrap(),
            ],
        )
        .unwrap();
        let est = estimate_expectations(&s, &p).unwrap();
        assert_eq!(est.mean, vec![0.5]);
        assert_eq!(est.variance, vec![0.25]);
    }

    #[test]
    fn empty_set_is_an_error() {
        let p = one_constraint(vec![1.0]);
        let q = p.effective_qubo(&crate::problem::AuxiliaryState::zeros(1)).unwrap();
        let s = SampleSet::from_samples(&q, vec![]).unwrap();
        assert!(matches!(estimate_expectations(&s, &p), Err(Error::Empty(_))));
    }

    #[test]
    fn sample_set_recomputes_energies() {
        let q = EffectiveQubo::new(vec![1.0, 2.0], vec![(0, 1, -4.0)], 0.5).unwrap();
        let s = SampleSet::from_samples(
            &q,
            vec![BinaryVector::ones(2), BinaryVector::zeros(2)],
        )
        .unwrap();
        assert_eq!(s.energies(), &[-0.5, 0.5]);
        assert!(SampleSet::from_samples(&q, vec![BinaryVector::ones(3)]).is_err());
    }

    #[test]
    fn spec_rejects_unknown_keys() {
        let ok = r#"{"kind":"mh","beta":1.0,"sweeps":5}"#;
        let spec: SamplerSpec = serde_json::from_str(ok).unwrap();
        assert_eq!(spec.config.sweeps_per_read, 5);
        let again: SamplerSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(again, spec);
        assert!(serde_json::from_str::<SamplerSpec>(r#"{"kind":"mh","beta":1.0,"bogus":1}"#).is_err());
    }

    #[test]
    fn spec_builds_each_backend() {
        let cfg = SamplerConfig::new(2.0).with_trotter(3);
        for kind in [SamplerKind::Mh, SamplerKind::Sqa, SamplerKind::Exact] {
            let s = SamplerSpec::new(kind, cfg).build().unwrap();
            assert_eq!(s.id().sampler, kind);
            assert_eq!(s.beta(), 2.0);
        }
        assert!(SamplerSpec::new(SamplerKind::Remote, cfg).build().is_err());
        let remote = SamplerSpec::remote("http://127.0.0.1:1", cfg).build().unwrap();
        assert_eq!(remote.id().sampler.label(), "QA");
        let json = serde_json::to_string(&SamplerSpec::new(SamplerKind::Sqa, cfg)).unwrap();
        let back: SamplerSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.config, cfg);
        let minimal: SamplerSpec = serde_json::from_str(r#"{"kind": "mh", "beta": 1.0}"#).unwrap();
        assert_eq!(minimal.config.num_reads, defaults::NUM_READS);
    }

    #[test]
    fn sampler_kind_labels() {
        assert_eq!("SQA".parse::<SamplerKind>().unwrap(), SamplerKind::Sqa);
        assert_eq!(SamplerKind::Remote.label(), "QA");
        assert!("gibbs".parse::<SamplerKind>().is_err());
    }
}

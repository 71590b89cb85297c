//! Path-integral simulated quantum annealing.
//!
//! The transverse-field Ising model at inverse temperature `beta` is mapped by
//! a Suzuki-Trotter decomposition onto `tau` classical replicas of the Ising
//! view. Each replica sees the problem couplings scaled by `1/tau`, and copies
//! of the same spin in neighbouring replicas (periodic in the Trotter
//! direction) are tied by a ferromagnetic coupling
//! `J_perp = -ln(tanh(beta * gamma / tau)) / (2 beta)`.
//!
//! The field `gamma` is swept linearly from `gamma_start` to `gamma_end` over
//! the sweeps of a read. With `tau = 1` the replica term is constant and the
//! kernel reduces to classical Metropolis at `beta`.

use rand::Rng;
use rayon::prelude::*;

use super::{SampleSet, Sampler, SamplerConfig, SamplerId, SamplerKind};
use crate::error::{Error, Result};
use crate::problem::{BinaryVector, EffectiveQubo, IsingModel};
use crate::rng::read_rng;

/// `ln(tanh(z))` for `z > 0` without cancellation near either end.
fn ln_tanh(z: f64) -> f64 {
    let e = (-2.0 * z).exp();
    (-(-2.0 * z).exp_m1()).ln() - e.ln_1p()
}

/// Inter-replica coupling `J_perp` for field `gamma`.
pub fn trotter_coupling(beta: f64, gamma: f64, trotter: usize) -> Result<f64> {
    let z = beta * gamma / trotter as f64;
    let j = -ln_tanh(z) / (2.0 * beta);
    if !(z > 0.0) || !j.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "transverse field schedule overflows: beta*gamma/tau = {z:e} gives J_perp = {j}"
        )));
    }
    Ok(j)
}

/// Dimensionless replica coupling `beta * J_perp` for every sweep.
fn replica_schedule(cfg: &SamplerConfig) -> Result<Vec<f64>> {
    let sweeps = cfg.sweeps_per_read;
    (0..sweeps)
        .map(|s| {
            let frac = if sweeps > 1 {
                s as f64 / (sweeps - 1) as f64
            } else {
                1.0
            };
            let gamma = cfg.gamma_start * (1.0 - frac) + cfg.gamma_end * frac;
            trotter_coupling(cfg.beta, gamma, cfg.trotter).map(|j| cfg.beta * j)
        })
        .collect()
}

/// Runs `num_reads` independent annealing reads; every read contributes all
/// `tau` final replica slices as weight-one samples.
pub fn sqa_sample(q: &EffectiveQubo, cfg: &SamplerConfig) -> Result<SampleSet> {
    cfg.validate()?;
    if !(cfg.beta > 0.0) {
        return Err(Error::InvalidConfig("SQA requires beta > 0".into()));
    }
    let schedule = replica_schedule(cfg)?;
    let ising = q.ising_view();
    let adj = ising.adjacency();
    let reads: Vec<Vec<BinaryVector>> = (0..cfg.num_reads as u64)
        .into_par_iter()
        .map(|read| {
            let mut rng = read_rng(cfg.seed, read);
            sqa_read(&ising, &adj, cfg.beta, cfg.trotter, &schedule, &mut rng)
        })
        .collect();
    SampleSet::from_samples(q, reads.into_iter().flatten().collect())
}

fn sqa_read<R: Rng>(
    ising: &IsingModel,
    adj: &[Vec<(usize, f64)>],
    beta: f64,
    tau: usize,
    schedule: &[f64],
    rng: &mut R,
) -> Vec<BinaryVector> {
    let n = ising.h.len();
    let slice_beta = beta / tau as f64;
    let mut spins: Vec<i8> = (0..n * tau)
        .map(|_| if rng.random::<bool>() { 1 } else { -1 })
        .collect();
    // field[k*n + i] = h_i + sum_j J_ij s_j^k
    let mut field = vec![0.0; n * tau];
    for k in 0..tau {
        let s = &spins[k * n..(k + 1) * n];
        for i in 0..n {
            field[k * n + i] = ising.h[i]
                + adj[i]
                    .iter()
                    .map(|&(j, w)| w * f64::from(s[j]))
                    .sum::<f64>();
        }
    }
    for &coupling in schedule {
        for k in 0..tau {
            let up = (k + 1) % tau;
            let down = (k + tau - 1) % tau;
            for i in 0..n {
                let si = f64::from(spins[k * n + i]);
                let mut delta = -2.0 * slice_beta * si * field[k * n + i];
                if tau > 1 {
                    let nb = f64::from(spins[up * n + i]) + f64::from(spins[down * n + i]);
                    delta += 2.0 * coupling * si * nb;
                }
                if delta <= 0.0 || rng.random::<f64>() < (-delta).exp() {
                    spins[k * n + i] = -spins[k * n + i];
                    let change = -2.0 * si;
                    for &(j, w) in &adj[i] {
                        field[k * n + j] += w * change;
                    }
                }
            }
        }
    }
    (0..tau)
        .map(|k| BinaryVector::from_bools(spins[k * n..(k + 1) * n].iter().map(|&s| s > 0)))
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct SqaSampler {
    pub config: SamplerConfig,
}

impl SqaSampler {
    pub fn new(config: SamplerConfig) -> Self {
        Self { config }
    }
}

impl Sampler for SqaSampler {
    fn sample(&self, q: &EffectiveQubo, seed: u64) -> Result<SampleSet> {
        sqa_sample(q, &self.config.with_seed(seed))
    }

    fn id(&self) -> SamplerId {
        SamplerId {
            sampler: SamplerKind::Sqa,
            trotter: Some(self.config.trotter),
            beta: self.config.beta,
        }
    }
}

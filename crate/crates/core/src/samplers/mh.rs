use rand::Rng;
use rayon::prelude::*;

use super::{SampleSet, Sampler, SamplerConfig, SamplerId, SamplerKind};
use crate::error::Result;
use crate::problem::{BinaryVector, EffectiveQubo};
use crate::rng::read_rng;

/// Metropolis acceptance probability `min(1, exp(-beta * delta))` for an
/// energy change `delta`.
#[inline]
pub fn metropolis_acceptance(beta: f64, delta: f64) -> f64 {
    if delta <= 0.0 {
        1.0
    } else {
        (-beta * delta).exp()
    }
}

/// Single-bit-flip Metropolis-Hastings.
///
/// Each read starts from a uniform random state on its own stream and runs
/// `sweeps_per_read` systematic sweeps over all bits.
pub fn mh_sample(q: &EffectiveQubo, cfg: &SamplerConfig) -> Result<SampleSet> {
    cfg.validate()?;
    let adj = q.adjacency();
    let samples: Vec<BinaryVector> = (0..cfg.num_reads as u64)
        .into_par_iter()
        .map(|read| {
            let mut rng = read_rng(cfg.seed, read);
            mh_chain(q, &adj, cfg.beta, cfg.sweeps_per_read, &mut rng)
        })
        .collect();
    SampleSet::from_samples(q, samples)
}

fn mh_chain<R: Rng>(
    q: &EffectiveQubo,
    adj: &[Vec<(usize, f64)>],
    beta: f64,
    sweeps: usize,
    rng: &mut R,
) -> BinaryVector {
    let n = q.n_vars();
    let mut x: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
    // field[i] = linear_i + sum_j w_ij x_j, the energy change of setting x_i = 1
    let mut field: Vec<f64> = q.linear().to_vec();
    for (i, nbrs) in adj.iter().enumerate() {
        for &(j, w) in nbrs {
            if x[j] == 1 {
                field[i] += w;
            }
        }
    }
    for _ in 0..sweeps {
        for i in 0..n {
            let delta = if x[i] == 0 { field[i] } else { -field[i] };
            let accept = delta <= 0.0 || rng.random::<f64>() < metropolis_acceptance(beta, delta);
            if accept {
                x[i] ^= 1;
                let sign = if x[i] == 1 { 1.0 } else { -1.0 };
                for &(j, w) in &adj[i] {
                    field[j] += sign * w;
                }
            }
        }
    }
    BinaryVector::from_bools(x.into_iter().map(|b| b == 1))
}

#[derive(Debug, Clone, Copy)]
pub struct MhSampler {
    pub config: SamplerConfig,
}

impl MhSampler {
    pub fn new(config: SamplerConfig) -> Self {
        Self { config }
    }
}

impl Sampler for MhSampler {
    fn sample(&self, q: &EffectiveQubo, seed: u64) -> Result<SampleSet> {
        mh_sample(q, &self.config.with_seed(seed))
    }

    fn id(&self) -> SamplerId {
        SamplerId {
            sampler: SamplerKind::Mh,
            trotter: None,
            beta: self.config.beta,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::exact_boltzmann;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn detailed_balance_of_acceptance_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let beta = rng.random_range(0.0..5.0);
            let e1: f64 = rng.random_range(-3.0..3.0);
            let e2: f64 = rng.random_range(-3.0..3.0);
            let lhs = (-beta * e1).exp() * metropolis_acceptance(beta, e2 - e1);
            let rhs = (-beta * e2).exp() * metropolis_acceptance(beta, e1 - e2);
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(rhs));
        }
    }

    #[test]
    fn infinite_temperature_is_uniform() {
        let q = EffectiveQubo::new(vec![3.0, -2.0, 0.5], vec![(0, 1, 1.0)], 0.0).unwrap();
        let cfg = SamplerConfig::new(0.0).with_reads(10_000, 5).with_seed(1);
        let s = mh_sample(&q, &cfg).unwrap();
        for m in s.bit_means() {
            assert!((0.45..=0.55).contains(&m), "{m}");
        }
    }

    #[test]
    fn two_state_marginal() {
        let q = EffectiveQubo::new(vec![1.0], vec![], 0.0).unwrap();
        let cfg = SamplerConfig::new(1.0).with_reads(20_000, 10).with_seed(3);
        let s = mh_sample(&q, &cfg).unwrap();
        let p1 = s.bit_means()[0];
        let expected = (-1.0f64).exp() / (1.0 + (-1.0f64).exp());
        assert!((p1 - expected).abs() < 0.02, "{p1} vs {expected}");
    }

    #[test]
    fn matches_exact_distribution_on_small_frustrated_instance() {
        let q = EffectiveQubo::new(
            vec![0.3, -0.4, 0.2, 0.1],
            vec![(0, 1, 0.8), (1, 2, -0.6), (2, 3, 0.5), (0, 3, -0.7)],
            0.0,
        )
        .unwrap();
        let cfg = SamplerConfig::new(1.5).with_reads(40_000, 20).with_seed(9);
        let s = mh_sample(&q, &cfg).unwrap();
        let d = exact_boltzmann(&q, 1.5).unwrap();
        let mut counts = [0.0; 16];
        for x in s.samples() {
            let idx: usize = x.bits().iter().enumerate().map(|(i, &b)| (b as usize) << i).sum();
            counts[idx] += 1.0;
        }
        let tv: f64 = counts
            .iter()
            .zip(&d.probabilities)
            .map(|(c, p)| (c / 40_000.0 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "tv {tv}");
    }

    #[test]
    fn deterministic_given_seed() {
        let q = EffectiveQubo::new(vec![0.1; 6], vec![(0, 1, -1.0), (2, 3, 1.0)], 0.0).unwrap();
        let cfg = SamplerConfig::new(1.0).with_reads(50, 20).with_seed(5);
        assert_eq!(mh_sample(&q, &cfg).unwrap(), mh_sample(&q, &cfg).unwrap());
        assert_ne!(
            mh_sample(&q, &cfg).unwrap(),
            mh_sample(&q, &cfg.with_seed(6)).unwrap()
        );
    }

    #[test]
    fn returned_energies_are_recomputed() {
        let q = EffectiveQubo::new(vec![0.5, -1.0, 0.25], vec![(0, 2, 2.0)], 1.0).unwrap();
        let s = mh_sample(&q, &SamplerConfig::new(1.0).with_reads(20, 3)).unwrap();
        for (x, e, _) in s.iter() {
            assert!((q.energy(x).unwrap() - e).abs() < 1e-9);
        }
    }
}

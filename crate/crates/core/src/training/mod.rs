//! Deep unfolding of the auxiliary-variable iteration.
//!
//! The `T` step sizes are trained by backpropagating the expected penalty
//! loss at `v^(T)` through the update chain. Derivatives of Boltzmann
//! expectations with respect to `v` are covariances, so every factor of the
//! chain comes from statistics of samples that the forward pass draws
//! anyway:
//!
//! - `dL/dv_k^(T) = beta * Cov(L_lambda, f_k)` over the final samples,
//! - `dv_k^(t+1)/dv_k^(t) = 1 - eta_t * beta * Var_t(f_k)`,
//! - `dv_k^(t+1)/deta_t = C_k - <f_k>_t`.
//!
//! Cross-constraint terms `Cov(f_k, f_j)` are left out of the Jacobian, so the
//! gradient is exact only for a single constraint.

mod adam;

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use adam::{adam_update, AdamState, BETA1, BETA2, EPSILON};

use crate::error::{Error, Result};
use crate::problem::{AuxiliaryState, ConstrainedProblem, PenaltyParams};
use crate::rng::{derive_seed, seeded};
use crate::samplers::{SampleSet, Sampler, SamplerId, SamplerSpec};
use crate::solver::{ohzeki_run, Instance, RunOptions, SolveResult, StepSchedule};

/// Depth added per incremental stage.
pub const STAGE_DEPTH: usize = 5;

/// Tag separating the per-epoch shuffle stream from per-batch sampler seeds.
const SHUFFLE_TAG: u64 = u64::MAX;

/// Per-iteration statistics the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldTape {
    /// `C_k - <f_k>_t` for `t = 0..T`.
    pub residuals: Vec<Vec<f64>>,
    /// `Var_t(f_k)` for `t = 0..T`.
    pub variances: Vec<Vec<f64>>,
    /// Samples drawn at `v^(T)`.
    pub final_samples: SampleSet,
}

impl UnfoldTape {
    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }
}

/// Runs the solver with `etas` and keeps the statistics of every pass.
pub fn forward_unfolded<S: Sampler + ?Sized>(
    p: &ConstrainedProblem,
    sampler: &S,
    etas: &[f64],
    params: &PenaltyParams,
    opts: &RunOptions<'_>,
) -> Result<(UnfoldTape, SolveResult)> {
    let schedule = StepSchedule::learned(etas.to_vec())?;
    let res = ohzeki_run(
        p,
        sampler,
        &schedule,
        params,
        &AuxiliaryState::zeros(p.n_constraints()),
        opts,
    )?;
    let steps = &res.trace.records[..etas.len()];
    let tape = UnfoldTape {
        residuals: steps.iter().map(|r| r.residuals.clone()).collect(),
        variances: steps.iter().map(|r| r.estimate.variance.clone()).collect(),
        final_samples: res.final_samples.clone(),
    };
    Ok((tape, res))
}

/// Weighted mean of the penalty loss over a sample set.
pub fn expected_penalty_loss(s: &SampleSet, p: &ConstrainedProblem, lambda: f64) -> Result<f64> {
    let (losses, total) = losses_of(s, p, lambda)?;
    Ok(losses.iter().zip(s.weights()).map(|(l, w)| l * w).sum::<f64>() / total)
}

fn losses_of(s: &SampleSet, p: &ConstrainedProblem, lambda: f64) -> Result<(Vec<f64>, f64)> {
    if s.is_empty() {
        return Err(Error::Empty("final sample set"));
    }
    let total = s.total_weight();
    if !(total > 0.0) {
        return Err(Error::InvalidValue("sample set has zero total weight".into()));
    }
    let losses = s
        .samples()
        .iter()
        .map(|x| {
            p.check_dims(x)?;
            Ok(p.penalty_loss_unchecked(x.bits(), lambda))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((losses, total))
}

/// `g_k = beta * Cov(L_lambda, f_k)` over the final samples.
pub fn grad_v_final(
    final_samples: &SampleSet,
    p: &ConstrainedProblem,
    lambda: f64,
    beta: f64,
) -> Result<Vec<f64>> {
    let (losses, _) = losses_of(final_samples, p, lambda)?;
    beta_covariance(final_samples, &losses, p, beta)
}

/// `beta * Cov(g, f_k)` for a per-sample quantity `g`: the derivative of
/// `<g>` with respect to `v_k` when `g` does not itself depend on `v`.
pub fn beta_covariance(
    s: &SampleSet,
    g: &[f64],
    p: &ConstrainedProblem,
    beta: f64,
) -> Result<Vec<f64>> {
    Error::check_len("per-sample values", s.len(), g.len())?;
    if s.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let total = s.total_weight();
    if !(total > 0.0) {
        return Err(Error::InvalidValue("sample set has zero total weight".into()));
    }
    let weights = s.weights();
    let values = s
        .samples()
        .iter()
        .map(|x| p.constraint_values(x))
        .collect::<Result<Vec<_>>>()?;
    let mean_g = g.iter().zip(weights).map(|(l, w)| l * w).sum::<f64>() / total;
    let m = p.n_constraints();
    let mut mean_f = vec![0.0; m];
    for (fx, &w) in values.iter().zip(weights) {
        for (acc, f) in mean_f.iter_mut().zip(fx) {
            *acc += w * f;
        }
    }
    mean_f.iter_mut().for_each(|a| *a /= total);
    let mut cov = vec![0.0; m];
    for ((fx, l), &w) in values.iter().zip(g).zip(weights) {
        let dl = l - mean_g;
        for ((acc, f), mu) in cov.iter_mut().zip(fx).zip(&mean_f) {
            *acc += w * dl * (f - mu);
        }
    }
    Ok(cov.into_iter().map(|c| beta * c / total).collect())
}

/// `dL/deta_t` by reverse accumulation of the per-constraint Jacobian
/// products, `O(T m)`.
pub fn grad_eta(tape: &UnfoldTape, g_final: &[f64], etas: &[f64], beta: f64) -> Result<Vec<f64>> {
    Error::check_len("unfold tape", etas.len(), tape.residuals.len())?;
    Error::check_len("unfold tape variances", etas.len(), tape.variances.len())?;
    let m = g_final.len();
    for (r, var) in tape.residuals.iter().zip(&tape.variances) {
        Error::check_len("tape residuals", m, r.len())?;
        Error::check_len("tape variances", m, var.len())?;
    }
    let mut carry = g_final.to_vec();
    let mut grad = vec![0.0; etas.len()];
    for t in (0..etas.len()).rev() {
        grad[t] = carry.iter().zip(&tape.residuals[t]).map(|(c, r)| c * r).sum();
        for (c, var) in carry.iter_mut().zip(&tape.variances[t]) {
            *c *= 1.0 - etas[t] * beta * var;
        }
    }
    Ok(grad)
}

/// Realized loss, `v^(T)` gradient and step-size gradient of one instance.
#[derive(Debug, Clone)]
pub struct UnfoldedGradient {
    pub loss: f64,
    pub grad_v: Vec<f64>,
    pub grad_eta: Vec<f64>,
}

/// Forward pass plus backward pass for one instance.
pub fn unfolded_gradient<S: Sampler + ?Sized>(
    p: &ConstrainedProblem,
    sampler: &S,
    etas: &[f64],
    params: &PenaltyParams,
    opts: &RunOptions<'_>,
) -> Result<UnfoldedGradient> {
    let (tape, _) = forward_unfolded(p, sampler, etas, params, opts)?;
    let loss = expected_penalty_loss(&tape.final_samples, p, params.lambda)?;
    let grad_v = grad_v_final(&tape.final_samples, p, params.lambda, params.beta)?;
    let grad_eta = grad_eta(&tape, &grad_v, etas, params.beta)?;
    Ok(UnfoldedGradient {
        loss,
        grad_v,
        grad_eta,
    })
}

/// Training hyperparameters. The inverse temperature lives in the sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(rename = "T")]
    pub iterations: usize,
    pub eta_init: f64,
    pub lambda: f64,
    pub sampler: SamplerSpec,
    pub epochs: usize,
    pub minibatches_per_epoch: usize,
    pub minibatch_size: usize,
    pub lr_init: f64,
    pub lr_decay: f64,
    pub incremental: bool,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    /// Reference protocol: `T = 30`, `eta = 1e-2`, Adam from `5e-2` decayed
    /// by 0.8, 20 mini-batches of 4, `lambda = 1`, incremental depth with one
    /// epoch per stage.
    pub fn reference(sampler: SamplerSpec) -> Self {
        Self {
            iterations: 30,
            eta_init: 1e-2,
            lambda: 1.0,
            sampler,
            epochs: 6,
            minibatches_per_epoch: 20,
            minibatch_size: 4,
            lr_init: 5e-2,
            lr_decay: 0.8,
            incremental: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.iterations == 0 {
            return bad("T must be positive".into());
        }
        if self.minibatches_per_epoch == 0 || self.minibatch_size == 0 {
            return bad("mini-batch counts must be positive".into());
        }
        if !self.eta_init.is_finite() {
            return bad(format!("eta_init {} is not finite", self.eta_init));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be > 0, got {}", self.lambda));
        }
        if !(self.lr_init >= 0.0 && self.lr_init.is_finite()) {
            return bad(format!("lr_init must be >= 0, got {}", self.lr_init));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        self.sampler.validate()
    }

    /// Depth of every training stage.
    pub fn stage_depths(&self) -> Vec<usize> {
        if self.incremental {
            let stages = self.iterations.div_ceil(STAGE_DEPTH);
            (1..=stages)
                .map(|s| (s * STAGE_DEPTH).min(self.iterations))
                .collect()
        } else {
            vec![self.iterations]
        }
    }

    /// Epochs per stage; the total is split as evenly as possible with later
    /// stages taking the remainder.
    pub fn stage_epochs(&self) -> Vec<usize> {
        let stages = self.stage_depths().len();
        (0..stages)
            .map(|s| self.epochs * (s + 1) / stages - self.epochs * s / stages)
            .collect()
    }
}

/// A trained step-size schedule and how it was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleFile", into = "ScheduleFile")]
pub struct LearnedSchedule {
    pub etas: Vec<f64>,
    pub trained_with: SamplerId,
    pub lambda: f64,
    pub seed: u64,
    pub dataset_digest: String,
    /// Mean training loss of every epoch.
    pub loss_curve: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleFile {
    #[serde(rename = "T")]
    iterations: usize,
    etas: Vec<f64>,
    trained_with: SamplerId,
    lambda: f64,
    seed: u64,
    dataset_digest: String,
    loss_curve: Vec<f64>,
}

impl TryFrom<ScheduleFile> for LearnedSchedule {
    type Error = Error;

    fn try_from(f: ScheduleFile) -> Result<Self> {
        Error::check_len("schedule etas", f.iterations, f.etas.len())?;
        if let Some(e) = f.etas.iter().find(|e| !e.is_finite()) {
            return Err(Error::InvalidValue(format!("step size {e} is not finite")));
        }
        Ok(Self {
            etas: f.etas,
            trained_with: f.trained_with,
            lambda: f.lambda,
            seed: f.seed,
            dataset_digest: f.dataset_digest,
            loss_curve: f.loss_curve,
        })
    }
}

impl From<LearnedSchedule> for ScheduleFile {
    fn from(s: LearnedSchedule) -> Self {
        Self {
            iterations: s.etas.len(),
            etas: s.etas,
            trained_with: s.trained_with,
            lambda: s.lambda,
            seed: s.seed,
            dataset_digest: s.dataset_digest,
            loss_curve: s.loss_curve,
        }
    }
}

impl LearnedSchedule {
    pub fn len(&self) -> usize {
        self.etas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.etas.is_empty()
    }

    pub fn schedule(&self) -> Result<StepSchedule> {
        StepSchedule::learned(self.etas.clone())
    }

    pub fn check_iterations(&self, iterations: usize) -> Result<()> {
        Error::check_len("learned schedule", iterations, self.etas.len())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// SHA-256 over the JSON of every problem in order.
pub fn dataset_digest<I: Instance>(dataset: &[I]) -> Result<String> {
    let mut hasher = Sha256::new();
    for inst in dataset {
        hasher.update(serde_json::to_vec(inst.problem())?);
        hasher.update(b"\n");
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Mean realized loss of `etas` over a dataset, instance `i` seeded with
/// `derive_seed(seed, [i])`.
pub fn mean_realized_loss<I: Instance, S: Sampler + ?Sized>(
    dataset: &[I],
    sampler: &S,
    etas: &[f64],
    params: &PenaltyParams,
    seed: u64,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let losses = dataset
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let opts = RunOptions::seeded(derive_seed(seed, &[i as u64]));
            let p = inst.problem();
            forward_unfolded(p, sampler, etas, params, &opts)
                .and_then(|(tape, _)| expected_penalty_loss(&tape.final_samples, p, params.lambda))
                .map_err(|e| Error::Instance {
                    instance: i,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains with the sampler described by `cfg.sampler`.
pub fn train<I: Instance>(dataset: &[I], cfg: &TrainConfig) -> Result<LearnedSchedule> {
    cfg.validate()?;
    let sampler = cfg.sampler.build()?;
    train_with(dataset, cfg, &sampler)
}

/// Trains with an explicit sampler; `cfg.sampler` is ignored.
pub fn train_with<I: Instance, S: Sampler + ?Sized>(
    dataset: &[I],
    cfg: &TrainConfig,
    sampler: &S,
) -> Result<LearnedSchedule> {
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    cfg.validate()?;
    let params = PenaltyParams::new(cfg.lambda, sampler.beta())?;
    let mut etas = vec![cfg.eta_init; cfg.iterations];
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut epoch = 0u64;
    let batch = cfg.minibatch_size;

    for (depth, stage_epochs) in cfg.stage_depths().into_iter().zip(cfg.stage_epochs()) {
        let mut adam = AdamState::new(depth);
        for _ in 0..stage_epochs {
            let lr = cfg.lr_init * cfg.lr_decay.powi(epoch as i32);
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.shuffle(&mut seeded(derive_seed(cfg.seed, &[SHUFFLE_TAG, epoch])));
            let mut epoch_loss = 0.0;
            for b in 0..cfg.minibatches_per_epoch {
                let members: Vec<usize> = (0..batch)
                    .map(|j| order[(b * batch + j) % order.len()])
                    .collect();
                let stage_etas = &etas[..depth];
                let grads = members
                    .par_iter()
                    .enumerate()
                    .map(|(j, &i)| {
                        let opts =
                            RunOptions::seeded(derive_seed(cfg.seed, &[epoch, b as u64, j as u64]));
                        unfolded_gradient(dataset[i].problem(), sampler, stage_etas, &params, &opts)
                            .map_err(|e| Error::Instance {
                                instance: i,
                                source: Box::new(e),
                            })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut mean_grad = vec![0.0; depth];
                for g in &grads {
                    for (acc, x) in mean_grad.iter_mut().zip(&g.grad_eta) {
                        *acc += x / batch as f64;
                    }
                    epoch_loss += g.loss;
                }
                adam.step(&mut etas[..depth], &mean_grad, lr)?;
            }
            let mean_loss = epoch_loss / (cfg.minibatches_per_epoch * batch) as f64;
            log::info!("epoch {epoch} depth {depth} lr {lr:.3e} loss {mean_loss:.6}");
            loss_curve.push(mean_loss);
            epoch += 1;
        }
    }

    Ok(LearnedSchedule {
        etas,
        trained_with: sampler.id(),
        lambda: cfg.lambda,
        seed: cfg.seed,
        dataset_digest: dataset_digest(dataset)?,
        loss_curve,
    })
}

/// `trained-executed` label such as `SQA-QA` or `MH-MH`.
pub fn method_label(trained: &SamplerId, executed: &SamplerId) -> String {
    format!("{}-{}", trained.sampler.label(), executed.sampler.label())
}

/// A run of a learned schedule on a (possibly different) sampler.
#[derive(Debug, Clone)]
pub struct TransferResult {
    pub result: SolveResult,
    pub trained_with: SamplerId,
    pub executed_with: SamplerId,
}

impl TransferResult {
    pub fn label(&self) -> String {
        method_label(&self.trained_with, &self.executed_with)
    }
}

/// Executes a learned schedule from `v = 0` on `sampler`.
pub fn transfer_execute<S: Sampler + ?Sized>(
    sched: &LearnedSchedule,
    p: &ConstrainedProblem,
    sampler: &S,
    params: &PenaltyParams,
    opts: &RunOptions<'_>,
) -> Result<TransferResult> {
    let result = ohzeki_run(
        p,
        sampler,
        &sched.schedule()?,
        params,
        &AuxiliaryState::zeros(p.n_constraints()),
        opts,
    )?;
    Ok(TransferResult {
        executed_with: result.sampler,
        trained_with: sched.trained_with,
        result,
    })
}

//! The auxiliary-variable iteration.
//!
//! Each iteration samples `Q(x; v) ~ exp(-beta (f0(x) - sum_k v_k f_k(x)))`,
//! estimates `<f_k>` and moves every `v_k` by `eta_t * (C_k - <f_k>)`. After
//! `T` iterations one more sampling pass is made at `v^(T)`. The returned
//! solution is the penalty-loss minimizer over every sample seen.

use std::cmp::Ordering;
use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{AuxiliaryState, BinaryVector, ConstrainedProblem, PenaltyParams};
use crate::rng::derive_seed;
use crate::samplers::{estimate_expectations, ExpectationEstimate, SampleSet, Sampler, SamplerId};

/// `|v_k|` beyond this aborts a run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Trace CSV carries one column per auxiliary variable up to this many.
pub const TRACE_MAX_V_COLUMNS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Constant,
    Learned,
}

/// Step sizes `eta_0 .. eta_{T-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    etas: Vec<f64>,
    kind: ScheduleKind,
}

impl StepSchedule {
    pub fn constant(eta: f64, iterations: usize) -> Result<Self> {
        Self::new(vec![eta; iterations], ScheduleKind::Constant)
    }

    pub fn learned(etas: Vec<f64>) -> Result<Self> {
        Self::new(etas, ScheduleKind::Learned)
    }

    fn new(etas: Vec<f64>, kind: ScheduleKind) -> Result<Self> {
        if let Some(e) = etas.iter().find(|e| !e.is_finite()) {
            return Err(Error::InvalidValue(format!("step size {e} is not finite")));
        }
        Ok(Self { etas, kind })
    }

    pub fn etas(&self) -> &[f64] {
        &self.etas
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of iterations `T`.
    pub fn len(&self) -> usize {
        self.etas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.etas.is_empty()
    }
}

/// Auxiliary-variable update: `v'_k = v_k + eta (C_k - mean_k)`.
pub fn ohzeki_step(
    v: &AuxiliaryState,
    est: &ExpectationEstimate,
    targets: &[f64],
    eta: f64,
) -> Result<AuxiliaryState> {
    Error::check_len("expectation estimate", v.len(), est.len())?;
    Error::check_len("constraint targets", v.len(), targets.len())?;
    let next = v
        .values()
        .iter()
        .zip(targets)
        .zip(&est.mean)
        .map(|((vk, c), mu)| vk + eta * (c - mu))
        .collect();
    Ok(AuxiliaryState::from_parts(next, v.iteration() + 1))
}

/// Orders candidate solutions by penalty loss, then `f0`, then
/// lexicographically by bits.
fn candidate_order(a: (&BinaryVector, f64, f64), b: (&BinaryVector, f64, f64)) -> Ordering {
    a.1.total_cmp(&b.1)
        .then(a.2.total_cmp(&b.2))
        .then_with(|| a.0.cmp(b.0))
}

/// Penalty-loss minimizer over a sample set.
pub fn best_feasible(
    s: &SampleSet,
    p: &ConstrainedProblem,
    lambda: f64,
) -> Result<(BinaryVector, f64)> {
    if s.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let mut best: Option<(&BinaryVector, f64, f64)> = None;
    for x in s.samples() {
        p.check_dims(x)?;
        let loss = p.penalty_loss_unchecked(x.bits(), lambda);
        let f0 = p.objective().eval_unchecked(x.bits());
        let cand = (x, loss, f0);
        best = match best {
            Some(b) if candidate_order(b, cand) != Ordering::Greater => Some(b),
            _ => Some(cand),
        };
    }
    let (x, loss, _) = best.expect("nonempty");
    Ok((x.clone(), loss))
}

/// `(1/N) sum_i (x_i - x*_i)^2`
pub fn mse(x: &BinaryVector, truth: &BinaryVector) -> Result<f64> {
    Error::check_len("mse", truth.len(), x.len())?;
    if x.is_empty() {
        return Ok(0.0);
    }
    let diff = x
        .bits()
        .iter()
        .zip(truth.bits())
        .filter(|(a, b)| a != b)
        .count();
    Ok(diff as f64 / x.len() as f64)
}

/// Everything recorded about one sampling pass.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `v` the pass sampled at.
    pub v: Vec<f64>,
    pub estimate: ExpectationEstimate,
    /// `C_k - <f_k>`
    pub residuals: Vec<f64>,
    /// Best sample of this pass and its penalty loss.
    pub sample_best: BinaryVector,
    pub sample_best_loss: f64,
    /// Running best penalty loss over this and all earlier passes.
    pub best_loss: f64,
    /// Smallest MSE among this pass's samples, when ground truth is known.
    pub best_mse: Option<f64>,
    /// Step applied after this pass; `None` on the terminal record.
    pub eta: Option<f64>,
    pub sample_time: Duration,
    pub update_time: Duration,
}

impl IterationRecord {
    pub fn residual_l2(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum::<f64>().sqrt()
    }
}

/// One record per iteration plus the terminal sampling at `v^(T)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverTrace {
    pub records: Vec<IterationRecord>,
}

impl SolverTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Per-record best MSE, if ground truth was supplied.
    pub fn best_mse_curve(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.best_mse).collect()
    }

    /// First record index at which some sample reproduced the ground truth.
    pub fn first_zero_mse(&self) -> Option<usize> {
        self.records
            .iter()
            .position(|r| r.best_mse.is_some_and(|m| m == 0.0))
    }

    /// Columns: `iteration,residual_l2,best_loss,best_mse,eta,v_0..`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let m = self.records.first().map_or(0, |r| r.v.len());
        let v_cols = m.min(TRACE_MAX_V_COLUMNS);
        write!(w, "iteration,residual_l2,best_loss,best_mse,eta")?;
        for k in 0..v_cols {
            write!(w, ",v_{k}")?;
        }
        writeln!(w)?;
        for r in &self.records {
            write!(
                w,
                "{},{},{},{},{}",
                r.iteration,
                r.residual_l2(),
                r.best_loss,
                r.best_mse.map(|m| m.to_string()).unwrap_or_default(),
                r.eta.map(|e| e.to_string()).unwrap_or_default()
            )?;
            for vk in r.v.iter().take(v_cols) {
                write!(w, ",{vk}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Per-phase wall-clock seconds: `iteration,sample_seconds,update_seconds`.
    pub fn write_timings_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,sample_seconds,update_seconds")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{}",
                r.iteration,
                r.sample_time.as_secs_f64(),
                r.update_time.as_secs_f64()
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub best_x: BinaryVector,
    pub best_loss: f64,
    pub final_v: AuxiliaryState,
    pub trace: SolverTrace,
    /// Samples drawn at `v^(T)`.
    pub final_samples: SampleSet,
    pub sampler: SamplerId,
}

/// Per-run knobs that are not part of the algorithm proper.
#[derive(Debug, Clone, Default)]
pub struct RunOptions<'a> {
    /// Iteration `t` samples with seed `derive_seed(seed, [t])`.
    pub seed: u64,
    pub ground_truth: Option<&'a BinaryVector>,
}

impl<'a> RunOptions<'a> {
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed,
            ground_truth: None,
        }
    }

    pub fn with_ground_truth(mut self, truth: &'a BinaryVector) -> Self {
        self.ground_truth = Some(truth);
        self
    }
}

/// Runs `schedule.len()` iterations followed by a terminal sampling pass.
pub fn ohzeki_run<S: Sampler + ?Sized>(
    p: &ConstrainedProblem,
    sampler: &S,
    schedule: &StepSchedule,
    params: &PenaltyParams,
    v0: &AuxiliaryState,
    opts: &RunOptions<'_>,
) -> Result<SolveResult> {
    Error::check_len("initial auxiliary variables", p.n_constraints(), v0.len())?;
    if let Some(truth) = opts.ground_truth {
        p.check_dims(truth)?;
    }
    let targets = p.targets();
    let iterations = schedule.len();
    let mut v = v0.clone();
    let mut trace = SolverTrace::default();
    let mut best: Option<(BinaryVector, f64, f64)> = None;

    for t in 0..=iterations {
        let started = Instant::now();
        let q = p.effective_qubo(&v)?;
        let samples = sampler
            .sample(&q, derive_seed(opts.seed, &[t as u64]))
            .map_err(|e| Error::SamplerAt {
                iteration: t,
                source: Box::new(e),
            })?;
        if samples.is_empty() {
            return Err(Error::SamplerAt {
                iteration: t,
                source: Box::new(Error::Empty("sample set")),
            });
        }
        let sample_time = started.elapsed();

        let started = Instant::now();
        let estimate = estimate_expectations(&samples, p)?;
        let residuals: Vec<f64> = targets
            .iter()
            .zip(&estimate.mean)
            .map(|(c, mu)| c - mu)
            .collect();
        let (sample_best, sample_best_loss) = best_feasible(&samples, p, params.lambda)?;
        let f0 = p.objective().eval_unchecked(sample_best.bits());
        let improves = match &best {
            None => true,
            Some((bx, bl, bf)) => {
                candidate_order((&sample_best, sample_best_loss, f0), (bx, *bl, *bf))
                    == Ordering::Less
            }
        };
        if improves {
            best = Some((sample_best.clone(), sample_best_loss, f0));
        }
        let best_mse = match opts.ground_truth {
            Some(truth) => Some(
                samples
                    .samples()
                    .iter()
                    .map(|x| mse(x, truth))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .fold(f64::INFINITY, f64::min),
            ),
            None => None,
        };
        let eta = schedule.etas().get(t).copied();
        let v_snapshot = v.values().to_vec();
        let mut update_time = started.elapsed();

        if let Some(eta) = eta {
            let started = Instant::now();
            v = ohzeki_step(&v, &estimate, &targets, eta)?;
            let magnitude = v.max_abs();
            if !(magnitude <= DIVERGENCE_LIMIT) {
                return Err(Error::Diverged {
                    iteration: t,
                    magnitude,
                });
            }
            update_time += started.elapsed();
        }

        trace.records.push(IterationRecord {
            iteration: t,
            v: v_snapshot,
            estimate,
            residuals,
            sample_best,
            sample_best_loss,
            best_loss: best.as_ref().map(|b| b.1).expect("set above"),
            best_mse,
            eta,
            sample_time,
            update_time,
        });

        if t == iterations {
            let (best_x, best_loss, _) = best.expect("at least one pass");
            return Ok(SolveResult {
                best_x,
                best_loss,
                final_v: v,
                trace,
                final_samples: samples,
                sampler: sampler.id(),
            });
        }
    }
    unreachable!("loop returns on its terminal pass")
}

/// A problem instance with optional known solution, as consumed by the
/// evaluation helpers.
pub trait Instance: Sync {
    fn problem(&self) -> &ConstrainedProblem;
    fn ground_truth(&self) -> Option<&BinaryVector>;
}

impl Instance for (ConstrainedProblem, BinaryVector) {
    fn problem(&self) -> &ConstrainedProblem {
        &self.0
    }

    fn ground_truth(&self) -> Option<&BinaryVector> {
        Some(&self.1)
    }
}

/// One row of the grid-search table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub eta: f64,
    /// Mean best MSE of the terminal pass; infinite if any run diverged.
    pub mean_final_mse: f64,
    /// Mean first index with MSE 0; runs that never get there count as `T + 1`.
    pub mean_iterations_to_zero: f64,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearch {
    pub best_eta: f64,
    pub table: Vec<GridRow>,
}

/// Picks the constant step size with the lowest mean terminal best-MSE
/// (ties: fewer iterations to zero MSE, then the smaller step).
pub fn grid_search_step<I: Instance, S: Sampler + ?Sized>(
    instances: &[I],
    candidates: &[f64],
    params: &PenaltyParams,
    sampler: &S,
    iterations: usize,
    seed: u64,
) -> Result<GridSearch> {
    if instances.is_empty() {
        return Err(Error::Empty("grid search instances"));
    }
    if candidates.is_empty() {
        return Err(Error::Empty("grid search candidates"));
    }
    let mut table = Vec::with_capacity(candidates.len());
    for &eta in candidates {
        let schedule = StepSchedule::constant(eta, iterations)?;
        let outcomes: Vec<Option<(f64, usize)>> = instances
            .par_iter()
            .enumerate()
            .map(|(i, inst)| {
                let truth = inst.ground_truth().ok_or_else(|| {
                    Error::InvalidValue(format!("instance {i} has no ground truth"))
                })?;
                let p = inst.problem();
                let opts = RunOptions::seeded(derive_seed(seed, &[i as u64])).with_ground_truth(truth);
                match ohzeki_run(
                    p,
                    sampler,
                    &schedule,
                    params,
                    &AuxiliaryState::zeros(p.n_constraints()),
                    &opts,
                ) {
                    Ok(res) => {
                        let final_mse = res
                            .trace
                            .records
                            .last()
                            .and_then(|r| r.best_mse)
                            .expect("ground truth supplied");
                        let to_zero = res.trace.first_zero_mse().unwrap_or(iterations + 1);
                        Ok(Some((final_mse, to_zero)))
                    }
                    Err(Error::Diverged { .. }) => Ok(None),
                    Err(e) => Err(Error::Instance {
                        instance: i,
                        source: Box::new(e),
                    }),
                }
            })
            .collect::<Result<_>>()?;
        let n = outcomes.len() as f64;
        let diverged = outcomes.iter().filter(|o| o.is_none()).count();
        let (mean_final_mse, mean_iterations_to_zero) = if diverged > 0 {
            (f64::INFINITY, f64::INFINITY)
        } else {
            let done: Vec<(f64, usize)> = outcomes.into_iter().flatten().collect();
            (
                done.iter().map(|o| o.0).sum::<f64>() / n,
                done.iter().map(|o| o.1 as f64).sum::<f64>() / n,
            )
        };
        table.push(GridRow {
            eta,
            mean_final_mse,
            mean_iterations_to_zero,
            diverged,
        });
    }
    let best = table
        .iter()
        .min_by(|a, b| {
            a.mean_final_mse
                .total_cmp(&b.mean_final_mse)
                .then(a.mean_iterations_to_zero.total_cmp(&b.mean_iterations_to_zero))
                .then(a.eta.total_cmp(&b.eta))
        })
        .expect("nonempty candidates");
    Ok(GridSearch {
        best_eta: best.eta,
        table,
    })
}

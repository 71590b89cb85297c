//! Binary image reconstruction from noiseless Gaussian measurements.
//!
//! A `w x h` binary image `x*` is observed through `y = A x*` with `A` an
//! `M x N` standard normal matrix. The constrained problem keeps the
//! measurements as equality constraints and prefers smooth images through
//! `f0(x) = -sum_<i,j> x_i x_j` over 4-neighbour pixel pairs.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{
    AuxiliaryState, BinaryVector, ConstrainedProblem, LinearConstraint, PenaltyParams,
    QuadraticObjective,
};
use crate::rng::{derive_seed, seeded};
use crate::samplers::Sampler;
use crate::solver::{ohzeki_run, Instance, RunOptions, SolverTrace, StepSchedule};
use crate::training::LearnedSchedule;

pub use crate::solver::mse;

/// Measurement ratio above which reconstruction is typically easy.
pub const MEASUREMENT_THRESHOLD: f64 = 0.633;

/// Real-valued constraints count as satisfied within this tolerance.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// `-1` on every horizontally or vertically adjacent pixel pair, row-major
/// pixel order, open boundaries.
pub fn lattice_objective(width: usize, height: usize) -> Result<QuadraticObjective> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidValue(format!("empty lattice {width}x{height}")));
    }
    let idx = |r: usize, c: usize| r * width + c;
    let mut terms = Vec::with_capacity(2 * width * height);
    for r in 0..height {
        for c in 0..width {
            if c + 1 < width {
                terms.push((idx(r, c), idx(r, c + 1), -1.0));
            }
            if r + 1 < height {
                terms.push((idx(r, c), idx(r + 1, c), -1.0));
            }
        }
    }
    QuadraticObjective::new(width * height, terms)
}

/// Centered square block of side `ceil(width / 3)`.
pub fn default_ground_truth(width: usize, height: usize) -> Result<BinaryVector> {
    if width < 3 || height < 3 {
        return Err(Error::InvalidValue(format!(
            "default image needs at least 3x3, got {width}x{height}"
        )));
    }
    let side = width.div_ceil(3).min(height);
    let (r0, c0) = ((height - side) / 2, (width - side) / 2);
    Ok(BinaryVector::from_bools((0..height).flat_map(|r| {
        (0..width).map(move |c| (r0..r0 + side).contains(&r) && (c0..c0 + side).contains(&c))
    })))
}

/// Where the ground-truth image comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GroundTruthSource {
    /// [`default_ground_truth`].
    #[default]
    Block,
    /// A plain PBM file whose size must match the dataset.
    Pbm { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub width: usize,
    pub height: usize,
    /// `M / N`.
    pub m_ratio: f64,
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ground_truth: GroundTruthSource,
}

impl DatasetSpec {
    pub fn new(width: usize, height: usize, m_ratio: f64, count: usize, seed: u64) -> Self {
        Self {
            width,
            height,
            m_ratio,
            count,
            seed,
            ground_truth: GroundTruthSource::Block,
        }
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    /// `M = round(m_ratio * N)`.
    pub fn n_measurements(&self) -> usize {
        (self.m_ratio * self.n_pixels() as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("image dimensions must be positive".into()));
        }
        if !(self.m_ratio > 0.0 && self.m_ratio < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "m_ratio must be in (0, 1), got {}",
                self.m_ratio
            )));
        }
        if self.count == 0 {
            return Err(Error::InvalidConfig("dataset count must be positive".into()));
        }
        let m = self.n_measurements();
        if m == 0 || m >= self.n_pixels() {
            return Err(Error::InvalidConfig(format!(
                "need 0 < M < N, got M = {m}, N = {}",
                self.n_pixels()
            )));
        }
        Ok(())
    }

    /// Warning text when the ratio is at or above [`MEASUREMENT_THRESHOLD`],
    /// where reconstruction stops being a hard benchmark.
    pub fn threshold_warning(&self) -> Option<String> {
        (self.m_ratio >= MEASUREMENT_THRESHOLD).then(|| {
            format!(
                "M/N = {} is not below the reconstruction threshold {MEASUREMENT_THRESHOLD}",
                self.m_ratio
            )
        })
    }

    pub fn load_ground_truth(&self) -> Result<BinaryVector> {
        match &self.ground_truth {
            GroundTruthSource::Block => default_ground_truth(self.width, self.height),
            GroundTruthSource::Pbm { path } => {
                let (w, h, x) = read_pbm(path)?;
                if (w, h) != (self.width, self.height) {
                    return Err(Error::InvalidConfig(format!(
                        "{} is {w}x{h}, dataset is {}x{}",
                        path.display(),
                        self.width,
                        self.height
                    )));
                }
                Ok(x)
            }
        }
    }
}

/// One reconstruction instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInstance {
    #[serde(flatten)]
    pub problem: ConstrainedProblem,
    pub x_star: BinaryVector,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ImageInstance {
    /// Rows of the measurement matrix.
    pub fn a(&self) -> Vec<&[f64]> {
        self.problem.constraints().iter().map(|c| c.coeffs.as_slice()).collect()
    }

    pub fn y(&self) -> Vec<f64> {
        self.problem.targets()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: Self = serde_json::from_str(text)?;
        inst.problem.check_dims(&inst.x_star)?;
        Error::check_len("image pixels", inst.width * inst.height, inst.x_star.len())?;
        Ok(inst)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Instance for ImageInstance {
    fn problem(&self) -> &ConstrainedProblem {
        &self.problem
    }

    fn ground_truth(&self) -> Option<&BinaryVector> {
        Some(&self.x_star)
    }
}

/// Instance `index` of a dataset with the given ground truth. The matrix is
/// drawn row-major from the stream `derive_seed(spec.seed, [index])`.
pub fn generate_instance_with(
    spec: &DatasetSpec,
    index: usize,
    x_star: &BinaryVector,
) -> Result<ImageInstance> {
    spec.validate()?;
    let n = spec.n_pixels();
    Error::check_len("ground truth", n, x_star.len())?;
    let seed = derive_seed(spec.seed, &[index as u64]);
    let mut rng = seeded(seed);
    let constraints = (0..spec.n_measurements())
        .map(|_| {
            let row: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let y = LinearConstraint::new(row.clone(), 0.0)?.value(x_star)?;
            LinearConstraint::new(row, y)
        })
        .collect::<Result<Vec<_>>>()?;
    let problem =
        ConstrainedProblem::new(lattice_objective(spec.width, spec.height)?, constraints)?;
    Ok(ImageInstance {
        problem,
        x_star: x_star.clone(),
        width: spec.width,
        height: spec.height,
        seed,
    })
}

pub fn generate_instance(spec: &DatasetSpec, index: usize) -> Result<ImageInstance> {
    generate_instance_with(spec, index, &spec.load_ground_truth()?)
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<ImageInstance>> {
    spec.validate()?;
    let x_star = spec.load_ground_truth()?;
    (0..spec.count)
        .into_par_iter()
        .map(|i| generate_instance_with(spec, i, &x_star))
        .collect()
}

/// Sample mean and the half-width `1.96 s / sqrt(n)` of a normal 95% interval.
pub fn confidence_interval(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InvalidValue(format!(
            "confidence interval needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, 1.96 * var.sqrt() / n.sqrt()))
}

/// Per-iteration aggregate of best-MSE curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub mean_best_mse: Vec<f64>,
    /// Zero when there is a single instance.
    pub ci_half_width: Vec<f64>,
    pub frac_solved: Vec<f64>,
}

impl MetricSeries {
    /// `curves[i][t]` is the best MSE of instance `i` at record `t`.
    pub fn from_curves(curves: &[Vec<f64>]) -> Result<Self> {
        let first = curves.first().ok_or(Error::Empty("best-MSE curves"))?;
        let len = first.len();
        for c in curves {
            Error::check_len("best-MSE curve", len, c.len())?;
        }
        let mut series = Self {
            mean_best_mse: Vec::with_capacity(len),
            ci_half_width: Vec::with_capacity(len),
            frac_solved: Vec::with_capacity(len),
        };
        for t in 0..len {
            let column: Vec<f64> = curves.iter().map(|c| c[t]).collect();
            let (mean, half) = if column.len() >= 2 {
                confidence_interval(&column)?
            } else {
                (column[0], 0.0)
            };
            series.mean_best_mse.push(mean);
            series.ci_half_width.push(half);
            series
                .frac_solved
                .push(column.iter().filter(|&&m| m == 0.0).count() as f64 / column.len() as f64);
        }
        Ok(series)
    }

    pub fn len(&self) -> usize {
        self.mean_best_mse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_best_mse.is_empty()
    }
}

/// Step sizes a method runs with.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSource {
    Constant(f64),
    Learned(LearnedSchedule),
}

/// A labelled (schedule, execution sampler) pair.
pub struct Method<'a> {
    pub label: String,
    pub schedule: ScheduleSource,
    pub sampler: &'a (dyn Sampler + 'a),
}

impl<'a> Method<'a> {
    pub fn new(label: impl Into<String>, schedule: ScheduleSource, sampler: &'a (dyn Sampler + 'a)) -> Self {
        Self {
            label: label.into(),
            schedule,
            sampler,
        }
    }

    fn step_schedule(&self, iterations: usize) -> Result<StepSchedule> {
        match &self.schedule {
            ScheduleSource::Constant(eta) => StepSchedule::constant(*eta, iterations),
            ScheduleSource::Learned(s) => {
                s.check_iterations(iterations)?;
                s.schedule()
            }
        }
    }
}

/// Aggregated results of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub label: String,
    pub series: MetricSeries,
    /// First record with MSE 0 for every instance.
    pub iterations_to_zero: Vec<Option<usize>>,
}

impl MethodResult {
    /// Median first-zero iteration; unsolved instances count as infinite.
    pub fn median_iterations_to_zero(&self) -> f64 {
        median_with_unsolved(&self.iterations_to_zero)
    }

    pub fn solved_fraction(&self) -> f64 {
        let n = self.iterations_to_zero.len();
        self.iterations_to_zero.iter().flatten().count() as f64 / n.max(1) as f64
    }
}

/// Median of first-zero iterations with `None` treated as `+inf`.
pub fn median_with_unsolved(values: &[Option<usize>]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v: Vec<f64> = values
        .iter()
        .map(|o| o.map_or(f64::INFINITY, |t| t as f64))
        .collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else if v[n / 2].is_infinite() {
        f64::INFINITY
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Best-MSE curve of every instance under one method.
pub fn method_traces<I: Instance>(
    instances: &[I],
    method: &Method<'_>,
    lambda: f64,
    iterations: usize,
    seed: u64,
) -> Result<Vec<SolverTrace>> {
    let schedule = method.step_schedule(iterations)?;
    let params = PenaltyParams::new(lambda, method.sampler.beta())?;
    instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let wrap = |e: Error| Error::Method {
                method: method.label.clone(),
                instance: i,
                source: Box::new(e),
            };
            let truth = inst
                .ground_truth()
                .ok_or_else(|| wrap(Error::InvalidValue("no ground truth".into())))?;
            let p = inst.problem();
            let opts = RunOptions::seeded(derive_seed(seed, &[i as u64])).with_ground_truth(truth);
            ohzeki_run(
                p,
                method.sampler,
                &schedule,
                &params,
                &AuxiliaryState::zeros(p.n_constraints()),
                &opts,
            )
            .map(|r| r.trace)
            .map_err(wrap)
        })
        .collect()
}

/// Runs every method on the same instances (instance `i` seeded identically
/// across methods) and aggregates per-iteration best MSE.
pub fn evaluate_methods<I: Instance>(
    instances: &[I],
    methods: &[Method<'_>],
    lambda: f64,
    iterations: usize,
    seed: u64,
) -> Result<Vec<MethodResult>> {
    if instances.is_empty() {
        return Err(Error::Empty("benchmark instances"));
    }
    if methods.is_empty() {
        return Err(Error::Empty("benchmark methods"));
    }
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].iter().any(|o| o.label == m.label) {
            return Err(Error::InvalidConfig(format!("duplicate method label {}", m.label)));
        }
    }
    methods
        .iter()
        .map(|method| {
            let traces = method_traces(instances, method, lambda, iterations, seed)?;
            let curves: Vec<Vec<f64>> = traces
                .iter()
                .map(|t| t.best_mse_curve().expect("ground truth supplied"))
                .collect();
            Ok(MethodResult {
                label: method.label.clone(),
                series: MetricSeries::from_curves(&curves)?,
                iterations_to_zero: traces.iter().map(SolverTrace::first_zero_mse).collect(),
            })
        })
        .collect()
}

/// Columns: `method,iteration,mean_best_mse,ci_halfwidth,frac_solved`.
pub fn write_benchmark_csv<W: Write>(results: &[MethodResult], mut w: W) -> std::io::Result<()> {
    writeln!(w, "method,iteration,mean_best_mse,ci_halfwidth,frac_solved")?;
    for r in results {
        let s = &r.series;
        for t in 0..s.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.label, t, s.mean_best_mse[t], s.ci_half_width[t], s.frac_solved[t]
            )?;
        }
    }
    Ok(())
}

/// Fixed-width table of final mean best MSE, solved fraction and median
/// iterations to zero.
pub fn summary_table(results: &[MethodResult]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:>14} {:>10} {:>16}",
        "method", "final_mse", "solved", "median_to_zero"
    );
    for r in results {
        let median = r.median_iterations_to_zero();
        let median = if median.is_finite() {
            format!("{median}")
        } else {
            "unsolved".to_string()
        };
        let _ = writeln!(
            out,
            "{:<16} {:>14.6} {:>10.3} {:>16}",
            r.label,
            r.series.mean_best_mse.last().copied().unwrap_or(f64::NAN),
            r.solved_fraction(),
            median
        );
    }
    out
}

/// Parses a plain (P1) PBM image: `1` is a set pixel.
pub fn parse_pbm(text: &str) -> Result<(usize, usize, BinaryVector)> {
    let body: String = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .collect::<Vec<_>>()
        .join("\n");
    let mut tokens = body.split_whitespace();
    if tokens.next() != Some("P1") {
        return Err(Error::Parse("PBM must start with P1".into()));
    }
    let mut dim = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| Error::Parse(format!("PBM missing {what}")))?
            .parse()
            .map_err(|e| Error::Parse(format!("PBM {what}: {e}")))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let bits: Vec<u8> = tokens
        .flat_map(str::chars)
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(Error::Parse(format!("PBM pixel {other:?}"))),
        })
        .collect::<Result<_>>()?;
    if bits.len() != width * height {
        return Err(Error::Parse(format!(
            "PBM has {} pixels, header says {width}x{height}",
            bits.len()
        )));
    }
    Ok((width, height, BinaryVector::new(bits)?))
}

pub fn format_pbm(width: usize, height: usize, x: &BinaryVector) -> Result<String> {
    Error::check_len("PBM pixels", width * height, x.len())?;
    let mut out = format!("P1\n{width} {height}\n");
    for row in x.bits().chunks(width.max(1)) {
        let line: Vec<&str> = row.iter().map(|&b| if b == 1 { "1" } else { "0" }).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

pub fn read_pbm(path: &Path) -> Result<(usize, usize, BinaryVector)> {
    parse_pbm(&std::fs::read_to_string(path)?)
}

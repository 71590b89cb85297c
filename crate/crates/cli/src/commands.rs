//! One function per subcommand. Each writes its outputs under
//! `output.directory` and finishes with a manifest.

use std::fs;
use std::path::{Path, PathBuf};

use duom::benchmark::{
    evaluate_methods, generate_instance_with, summary_table, write_benchmark_csv, ImageInstance,
    Method, MethodResult, ScheduleSource,
};
use duom::problem::{AuxiliaryState, BinaryVector, PenaltyParams};
use duom::samplers::Sampler;
use duom::solver::{grid_search_step, mse, ohzeki_run, GridSearch, RunOptions, StepSchedule};
use duom::training::{method_label, train, LearnedSchedule};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{ManifestBuilder, RunManifest};

pub const INSTANCES_DIR: &str = "instances";
pub const SCHEDULES_DIR: &str = "schedules";
pub const TRACES_DIR: &str = "traces";
pub const BENCHMARK_FILE: &str = "benchmark.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const GRID_FILE: &str = "gridsearch.csv";

pub const EVAL_PREFIX: &str = "eval";
pub const TRAIN_PREFIX: &str = "train";

struct Outputs<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    manifest: ManifestBuilder,
}

impl<'a> Outputs<'a> {
    fn start(cfg: &'a RunConfig, command: &str) -> Result<Self, CliError> {
        cfg.validate()?;
        let dir = cfg.output.directory.clone();
        fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        Ok(Self {
            cfg,
            dir,
            manifest: ManifestBuilder::start(command),
        })
    }

    fn path(&self, parts: &[&str]) -> PathBuf {
        parts.iter().fold(self.dir.clone(), |p, part| p.join(part))
    }

    fn write(&mut self, path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(CliError::io(parent))?;
        }
        fs::write(path, contents).map_err(CliError::io(path))?;
        self.manifest.record(&self.dir, path);
        Ok(())
    }

    fn finish(self) -> Result<RunManifest, CliError> {
        self.manifest.finish(self.cfg, &self.dir)
    }
}

fn instance_name(prefix: &str, index: usize) -> String {
    format!("{prefix}_{index:04}.json")
}

/// Writes the evaluation and training instance sets.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<RunManifest, CliError> {
    let mut out = Outputs::start(cfg, "gen-data")?;
    for (prefix, spec) in [(EVAL_PREFIX, cfg.eval_spec()), (TRAIN_PREFIX, cfg.train_spec())] {
        if spec.count == 0 {
            continue;
        }
        let x_star = spec
            .load_ground_truth()
            .map_err(|e| CliError::Config(e.to_string()))?;
        for i in 0..spec.count {
            let inst = generate_instance_with(&spec, i, &x_star)
                .map_err(CliError::run(format!("generating {prefix} instance {i}")))?;
            let path = out.path(&[INSTANCES_DIR, &instance_name(prefix, i)]);
            let text = inst.to_json().map_err(CliError::run("serializing instance"))?;
            out.write(&path, text)?;
        }
    }
    out.finish()
}

/// Loads `{prefix}_*.json` from the instance directory in index order.
pub fn load_instances(out_dir: &Path, prefix: &str) -> Result<Vec<ImageInstance>, CliError> {
    let dir = out_dir.join(INSTANCES_DIR);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(CliError::io(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(&format!("{prefix}_")) && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(format!(
            "no {prefix} instances in {}; run gen-data first",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| ImageInstance::load(p).map_err(CliError::run(p.display().to_string())))
        .collect()
}

pub fn schedule_path(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join(SCHEDULES_DIR).join(format!("{name}.json"))
}

/// Trains on the training instances; the schedule is named after the
/// sampler kind unless `name` is given.
pub fn cmd_train(cfg: &RunConfig, name: Option<&str>) -> Result<RunManifest, CliError> {
    let mut out = Outputs::start(cfg, "train")?;
    let data = load_instances(&out.dir, TRAIN_PREFIX)?;
    let sched = train(&data, &cfg.train_config()).map_err(CliError::run("training"))?;
    let name = name.unwrap_or(cfg.sampler.kind.name());
    let path = schedule_path(&out.dir, name);
    out.write(&path, sched.to_json().map_err(CliError::run("serializing schedule"))?)?;
    let mut curve = String::from("epoch,mean_loss\n");
    for (e, l) in sched.loss_curve.iter().enumerate() {
        curve.push_str(&format!("{e},{l}\n"));
    }
    let curve_path = out.path(&[SCHEDULES_DIR, &format!("{name}_loss.csv")]);
    out.write(&curve_path, curve)?;
    out.finish()
}

/// What `solve` and `transfer` write next to the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutput {
    pub label: String,
    pub iterations: usize,
    pub best_x: BinaryVector,
    pub best_loss: f64,
    pub final_v: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_zero_mse: Option<usize>,
}

/// Runs one instance with a constant step (no schedule) or a learned one.
/// Outputs go to `traces/<instance>.<label>.*`.
pub fn cmd_solve(
    cfg: &RunConfig,
    instance: &Path,
    schedule: Option<&Path>,
) -> Result<(RunManifest, SolveOutput), CliError> {
    solve_inner(cfg, instance, schedule, "solve")
}

/// `solve` with a mandatory learned schedule, labelled `TRAINED-EXECUTED`.
pub fn cmd_transfer(
    cfg: &RunConfig,
    instance: &Path,
    schedule: &Path,
) -> Result<(RunManifest, SolveOutput), CliError> {
    solve_inner(cfg, instance, Some(schedule), "transfer")
}

fn load_schedule(path: &Path) -> Result<LearnedSchedule, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("{} does not exist", path.display())));
    }
    LearnedSchedule::load(path).map_err(CliError::run(path.display().to_string()))
}

fn solve_inner(
    cfg: &RunConfig,
    instance: &Path,
    schedule: Option<&Path>,
    command: &str,
) -> Result<(RunManifest, SolveOutput), CliError> {
    let mut out = Outputs::start(cfg, command)?;
    if !instance.exists() {
        return Err(CliError::Config(format!("{} does not exist", instance.display())));
    }
    let inst = ImageInstance::load(instance).map_err(CliError::run(instance.display().to_string()))?;
    let sampler = cfg.sampler.build().map_err(|e| CliError::Config(e.to_string()))?;
    let (steps, label) = match schedule {
        None => (
            StepSchedule::constant(cfg.solve.eta, cfg.solve_iterations())
                .map_err(|e| CliError::Config(e.to_string()))?,
            format!("fixed-{}", sampler.id().sampler.label()),
        ),
        Some(path) => {
            let sched = load_schedule(path)?;
            let steps = sched.schedule().map_err(CliError::run("schedule"))?;
            (steps, method_label(&sched.trained_with, &sampler.id()))
        }
    };
    let params = PenaltyParams::new(cfg.solve.lambda, sampler.beta())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let opts = RunOptions::seeded(cfg.seed).with_ground_truth(&inst.x_star);
    let res = ohzeki_run(
        &inst.problem,
        &sampler,
        &steps,
        &params,
        &AuxiliaryState::zeros(inst.problem.n_constraints()),
        &opts,
    )
    .map_err(CliError::run(format!("solving {}", instance.display())))?;

    let output = SolveOutput {
        label: label.clone(),
        iterations: steps.len(),
        final_mse: Some(mse(&res.best_x, &inst.x_star).expect("same length")),
        best_x: res.best_x.clone(),
        best_loss: res.best_loss,
        final_v: res.final_v.values().to_vec(),
        first_zero_mse: res.trace.first_zero_mse(),
    };
    let stem = instance
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("instance")
        .to_string();
    let base = format!("{stem}.{label}");
    if cfg.wants("csv") {
        let mut trace = Vec::new();
        res.trace.write_csv(&mut trace).map_err(CliError::io("trace"))?;
        out.write(&out.path(&[TRACES_DIR, &format!("{base}.csv")]), trace)?;
        let mut timings = Vec::new();
        res.trace
            .write_timings_csv(&mut timings)
            .map_err(CliError::io("timings"))?;
        out.write(&out.path(&[TRACES_DIR, &format!("{base}.timings.csv")]), timings)?;
    }
    if cfg.wants("json") {
        let text = serde_json::to_string_pretty(&output).expect("output serializes");
        out.write(&out.path(&[TRACES_DIR, &format!("{base}.json")]), text)?;
    }
    Ok((out.finish()?, output))
}

/// Constant-step grid search over the evaluation instances.
pub fn cmd_gridsearch(cfg: &RunConfig) -> Result<(RunManifest, GridSearch), CliError> {
    let mut out = Outputs::start(cfg, "gridsearch")?;
    let data = load_instances(&out.dir, EVAL_PREFIX)?;
    let sampler = cfg.sampler.build().map_err(|e| CliError::Config(e.to_string()))?;
    let params = PenaltyParams::new(cfg.solve.lambda, sampler.beta())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let pairs: Vec<_> = data.into_iter().map(|i| (i.problem, i.x_star)).collect();
    let grid = grid_search_step(
        &pairs,
        &cfg.gridsearch.candidates,
        &params,
        &sampler,
        cfg.solve_iterations(),
        cfg.seed,
    )
    .map_err(CliError::run("grid search"))?;
    let mut csv = String::from("eta,mean_final_mse,mean_iterations_to_zero,diverged\n");
    for row in &grid.table {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.eta, row.mean_final_mse, row.mean_iterations_to_zero, row.diverged
        ));
    }
    let path = out.path(&[GRID_FILE]);
    out.write(&path, csv)?;
    Ok((out.finish()?, grid))
}

/// Runs every configured method (or a single constant-step method) on the
/// evaluation instances.
pub fn cmd_benchmark(cfg: &RunConfig) -> Result<(RunManifest, Vec<MethodResult>), CliError> {
    let mut out = Outputs::start(cfg, "benchmark")?;
    let data = load_instances(&out.dir, EVAL_PREFIX)?;
    let specs = if cfg.benchmark.methods.is_empty() {
        vec![crate::config::MethodSpec {
            label: None,
            eta: Some(cfg.solve.eta),
            schedule: None,
            sampler: None,
        }]
    } else {
        cfg.benchmark.methods.clone()
    };
    let samplers: Vec<Box<dyn Sampler>> = specs
        .iter()
        .map(|m| {
            m.sampler
                .as_ref()
                .unwrap_or(&cfg.sampler)
                .build()
                .map_err(|e| CliError::Config(e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let mut methods = Vec::with_capacity(specs.len());
    for (spec, sampler) in specs.iter().zip(&samplers) {
        let exec = sampler.id();
        let (source, default_label) = match (&spec.eta, &spec.schedule) {
            (Some(eta), _) => (
                ScheduleSource::Constant(*eta),
                format!("fixed-{eta}-{}", exec.sampler.label()),
            ),
            (None, Some(path)) => {
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    out.dir.join(path)
                };
                let sched = load_schedule(&full)?;
                let label = method_label(&sched.trained_with, &exec);
                (ScheduleSource::Learned(sched), label)
            }
            (None, None) => unreachable!("validated"),
        };
        let label = spec.label.clone().unwrap_or(default_label);
        methods.push(Method::new(label, source, sampler.as_ref()));
    }
    let results = evaluate_methods(
        &data,
        &methods,
        cfg.solve.lambda,
        cfg.solve_iterations(),
        cfg.seed,
    )
    .map_err(|e| match e {
        duom::Error::InvalidConfig(msg) => CliError::Config(msg),
        other => CliError::Run {
            context: "benchmark".into(),
            source: other,
        },
    })?;
    let mut csv = Vec::new();
    write_benchmark_csv(&results, &mut csv).map_err(CliError::io("benchmark csv"))?;
    let path = out.path(&[BENCHMARK_FILE]);
    out.write(&path, csv)?;
    let summary = summary_table(&results);
    let path = out.path(&[SUMMARY_FILE]);
    out.write(&path, &summary)?;
    print!("{summary}");
    Ok((out.finish()?, results))
}

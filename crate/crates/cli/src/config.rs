//! TOML run configuration.

use std::path::{Path, PathBuf};

use duom::benchmark::{DatasetSpec, GroundTruthSource};
use duom::rng::derive_seed;
use duom::samplers::{SamplerKind, SamplerSpec};
use duom::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Constant step sizes tried by `gridsearch` when none are configured.
pub const DEFAULT_GRID: [f64; 5] = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];

const EVAL_TAG: u64 = 0;
const TRAIN_TAG: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemSection,
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub gridsearch: GridSection,
    #[serde(default)]
    pub benchmark: BenchmarkSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub width: usize,
    pub height: usize,
    pub m_ratio: f64,
    /// Evaluation instances.
    pub count: usize,
    /// Training instances; defaults to `count`. Zero skips the training set.
    #[serde(default)]
    pub train_count: Option<usize>,
    #[serde(default)]
    pub ground_truth: GroundTruthSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(rename = "T")]
    pub iterations: usize,
    pub eta_init: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub minibatches_per_epoch: usize,
    pub minibatch_size: usize,
    pub lr_init: f64,
    pub lr_decay: f64,
    pub incremental: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let reference = TrainConfig::reference(SamplerSpec::new(
            SamplerKind::Mh,
            duom::samplers::SamplerConfig::new(1.0),
        ));
        Self {
            iterations: reference.iterations,
            eta_init: reference.eta_init,
            lambda: reference.lambda,
            epochs: reference.epochs,
            minibatches_per_epoch: reference.minibatches_per_epoch,
            minibatch_size: reference.minibatch_size,
            lr_init: reference.lr_init,
            lr_decay: reference.lr_decay,
            incremental: reference.incremental,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    /// Iterations for constant-step runs; defaults to `training.T`.
    #[serde(default, rename = "T")]
    pub iterations: Option<usize>,
    pub eta: f64,
    pub lambda: f64,
}

impl Default for SolveSection {
    fn default() -> Self {
        Self {
            iterations: None,
            eta: 1e-2,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub candidates: Vec<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            candidates: DEFAULT_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    #[serde(default)]
    pub methods: Vec<MethodSpec>,
}

/// A benchmark method: a schedule plus the sampler that executes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    /// Derived from the schedule and sampler when absent.
    #[serde(default)]
    pub label: Option<String>,
    /// Constant step size; exclusive with `schedule`.
    #[serde(default)]
    pub eta: Option<f64>,
    /// Learned schedule file, relative to the output directory.
    #[serde(default)]
    pub schedule: Option<PathBuf>,
    /// Execution sampler; defaults to the top-level `[sampler]`.
    #[serde(default)]
    pub sampler: Option<SamplerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    /// Subset of `csv`, `json`.
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            formats: vec!["csv".into(), "json".into()],
        }
    }
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub sampler_kind: Option<SamplerKind>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.output.directory = out.clone();
        }
        if let Some(kind) = o.sampler_kind {
            self.sampler.kind = kind;
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// SHA-256 of [`RunConfig::to_toml`].
    pub fn digest(&self) -> Result<String, CliError> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let config = |e: duom::Error| CliError::Config(e.to_string());
        self.eval_spec().validate().map_err(config)?;
        if self.train_spec().count > 0 {
            self.train_spec().validate().map_err(config)?;
        }
        if let Some(w) = self.eval_spec().threshold_warning() {
            log::warn!("{w}");
        }
        if let GroundTruthSource::Pbm { path } = &self.problem.ground_truth {
            if !path.exists() {
                return Err(CliError::Config(format!("{} does not exist", path.display())));
            }
        }
        self.sampler.validate().map_err(config)?;
        self.train_config().validate().map_err(config)?;
        if !self.solve.eta.is_finite() {
            return Err(CliError::Config("solve.eta must be finite".into()));
        }
        if !(self.solve.lambda > 0.0) {
            return Err(CliError::Config("solve.lambda must be > 0".into()));
        }
        if self.gridsearch.candidates.is_empty() {
            return Err(CliError::Config("gridsearch.candidates is empty".into()));
        }
        for m in &self.benchmark.methods {
            if m.eta.is_some() == m.schedule.is_some() {
                return Err(CliError::Config(
                    "each benchmark method needs exactly one of eta or schedule".into(),
                ));
            }
            if let Some(s) = &m.sampler {
                s.validate().map_err(config)?;
            }
        }
        for f in &self.output.formats {
            if f != "csv" && f != "json" {
                return Err(CliError::Config(format!("unknown output format {f}")));
            }
        }
        Ok(())
    }

    pub fn eval_spec(&self) -> DatasetSpec {
        self.dataset(self.problem.count, derive_seed(self.seed, &[EVAL_TAG]))
    }

    pub fn train_spec(&self) -> DatasetSpec {
        let count = self.problem.train_count.unwrap_or(self.problem.count);
        self.dataset(count, derive_seed(self.seed, &[TRAIN_TAG]))
    }

    fn dataset(&self, count: usize, seed: u64) -> DatasetSpec {
        DatasetSpec {
            width: self.problem.width,
            height: self.problem.height,
            m_ratio: self.problem.m_ratio,
            count,
            seed,
            ground_truth: self.problem.ground_truth.clone(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            iterations: t.iterations,
            eta_init: t.eta_init,
            lambda: t.lambda,
            sampler: self.sampler.clone(),
            epochs: t.epochs,
            minibatches_per_epoch: t.minibatches_per_epoch,
            minibatch_size: t.minibatch_size,
            lr_init: t.lr_init,
            lr_decay: t.lr_decay,
            incremental: t.incremental,
            seed: self.seed,
        }
    }

    pub fn solve_iterations(&self) -> usize {
        self.solve.iterations.unwrap_or(self.training.iterations)
    }

    pub fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 3
        [problem]
        width = 4
        height = 4
        m_ratio = 0.5
        count = 2
        [sampler]
        kind = "mh"
        beta = 1.0
        num_reads = 10
        sweeps = 20
    "#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.sampler.config.sweeps_per_read, 20);
        assert_eq!(cfg.training.iterations, 30);
        assert_eq!(cfg.output.directory, PathBuf::from("out"));
        assert_eq!(cfg.gridsearch.candidates, DEFAULT_GRID.to_vec());
        cfg.validate().unwrap();
    }

    #[test]
    fn parse_serialize_parse_is_a_fixed_point() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        let again = RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.digest().unwrap(), cfg.digest().unwrap());
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::parse(MINIMAL).unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            out: Some(PathBuf::from("elsewhere")),
            sampler_kind: Some(SamplerKind::Sqa),
        });
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.output.directory, PathBuf::from("elsewhere"));
        assert_eq!(cfg.sampler.kind, SamplerKind::Sqa);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(RunConfig::parse("seed = 1").is_err());
        assert!(RunConfig::parse(&MINIMAL.replace("\"mh\"", "\"gpu\"")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}\nbogus = 1")).is_err());
        assert!(RunConfig::parse(&format!("bogus = 1\n{MINIMAL}")).is_err());
        let remote = RunConfig::parse(&MINIMAL.replace("\"mh\"", "\"remote\"")).unwrap();
        assert!(remote.validate().is_err());
        let mut bad_ratio = RunConfig::parse(MINIMAL).unwrap();
        bad_ratio.problem.m_ratio = 1.2;
        assert!(bad_ratio.validate().is_err());
    }

    #[test]
    fn train_and_eval_sets_differ() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_ne!(cfg.eval_spec().seed, cfg.train_spec().seed);
        assert_eq!(cfg.train_spec().count, 2);
    }
}

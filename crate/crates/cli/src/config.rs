//! Experiment configuration file and run bookkeeping (hash, echo, naming).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use seq2cause::density::{CalibrationConfig, TrainConfig};
use seq2cause::experiment::{FusionSimConfig, OracleKind, OscarBenchConfig, TraceBenchConfig};
use seq2cause::fusion::FusionConfig;
use seq2cause::oscar::OscarConfig;
use seq2cause::scm::{RuleShape, ScmParams};
use seq2cause::trace::TraceConfig;
use seq2cause::Aggregate;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Overrides every per-section seed.
    pub seed: u64,
    pub scm: ScmParams,
    pub sample: SampleConfig,
    pub labels: LabelConfig,
    pub density: DensityConfig,
    pub posterior: PosteriorConfig,
    pub oscar: OscarConfig,
    pub fusion: FusionConfig,
    pub trace: TraceConfig,
    pub summary: SummaryConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
    pub io: IoConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub len: usize,
    pub count: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { len: 64, count: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    /// Explicit rules such as `"x1 & !x4"`; a random plan is drawn when empty.
    pub rules: Vec<String>,
    pub n_labels: usize,
    pub min_vars: usize,
    pub max_vars: usize,
    pub shape: RuleShape,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig { rules: Vec::new(), n_labels: 20, min_vars: 1, max_vars: 4, shape: RuleShape::Disjunction }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityKind {
    Exact,
    Perturbed { eps: f64 },
    /// Lagged-softmax model fitted on the input dataset.
    Learned,
    /// External process speaking the line-delimited JSON protocol.
    Bridge { cmd: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub estimator: DensityKind,
    pub calibration: CalibrationConfig,
    pub train: TrainConfig,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            estimator: DensityKind::Exact,
            calibration: CalibrationConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosteriorConfig {
    /// Events in a completed sequence; the longest input sequence when unset.
    pub horizon: Option<usize>,
    pub n_rollouts: usize,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        PosteriorConfig { horizon: None, n_rollouts: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummaryConfig {
    /// How time-edge scores combine into a type-edge strength.
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Score every label of the plan, not only those the graph mentions.
    pub all_labels: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchKind {
    Trace,
    Oscar,
    FusionSim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub kind: BenchKind,
    /// Runs use seeds `seed .. seed + n_seeds`.
    pub n_seeds: u64,
    /// Perturbed-oracle levels for the TRACE sweep; one block per level.
    pub eps: Vec<f64>,
    /// Vocabulary sizes for the TRACE sweep; density scales as `1 / |X|`.
    pub vocab: Vec<usize>,
    pub trace: TraceBenchConfig,
    pub oscar: OscarBenchConfig,
    pub fusion_sim: FusionSimConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            kind: BenchKind::Trace,
            n_seeds: 10,
            eps: Vec::new(),
            vocab: Vec::new(),
            trace: TraceBenchConfig::default(),
            oscar: OscarBenchConfig::default(),
            fusion_sim: FusionSimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub out_dir: PathBuf,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig { out_dir: PathBuf::from(".") }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Pushes the top-level seed into every section.
    pub fn resolve_seeds(&mut self) {
        let s = self.seed;
        self.scm.seed = s;
        self.density.calibration.seed = s;
        self.density.train.seed = s;
        self.oscar.sampling.seed = s;
        self.trace.seed = s;
        self.bench.fusion_sim.seed = s;
    }

    pub fn oracle_kind(&self) -> Option<OracleKind> {
        match self.density.estimator {
            DensityKind::Exact => Some(OracleKind::Exact),
            DensityKind::Perturbed { eps } => Some(OracleKind::Perturbed { eps }),
            _ => None,
        }
    }
}

/// Everything that determines a command's output: the resolved
/// configuration, the command and its input files (by content digest).
#[derive(Serialize)]
struct Echo<'a> {
    run: RunSection<'a>,
    #[serde(flatten)]
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct RunSection<'a> {
    command: &'a str,
    inputs: Vec<Input>,
}

#[derive(Serialize)]
struct Input {
    role: String,
    path: String,
    sha256: String,
}

/// Output naming for one command invocation.
pub struct Run {
    pub hash: String,
    pub out_dir: PathBuf,
    echo: String,
    command: String,
}

impl Run {
    pub fn new(command: &str, config: &ExperimentConfig, inputs: &[(&str, &Path)]) -> Result<Self, CliError> {
        let mut ins = Vec::new();
        for (role, path) in inputs {
            let bytes = std::fs::read(path).map_err(|e| CliError::Runtime(anyhow::anyhow!("cannot read {}: {e}", path.display())))?;
            ins.push(Input {
                role: role.to_string(),
                path: path.display().to_string(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        // the output directory does not change what is computed
        let hashed = ExperimentConfig { io: IoConfig::default(), ..config.clone() };
        let echo = toml::to_string(&Echo { run: RunSection { command, inputs: ins }, config: &hashed })
            .map_err(|e| CliError::Config(format!("cannot serialize configuration: {e}")))?;
        let mut h = Sha256::new();
        // input paths are informational; only their contents enter the hash
        h.update(strip_paths(&echo).as_bytes());
        let hash = hex::encode(h.finalize())[..12].to_string();
        Ok(Run { hash, out_dir: config.io.out_dir.clone(), echo, command: command.to_string() })
    }

    pub fn path(&self, stem: &str, ext: &str) -> PathBuf {
        self.out_dir.join(format!("{stem}-{}.{ext}", self.hash))
    }

    /// Writes `contents` and the configuration echo; returns the output path.
    pub fn write(&self, stem: &str, ext: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("cannot create {}: {e}", self.out_dir.display())))?;
        let echo = self.path(&format!("{}-config", self.command), "toml");
        std::fs::write(&echo, &self.echo).map_err(|e| CliError::Runtime(e.into()))?;
        let p = self.path(stem, ext);
        std::fs::write(&p, contents).map_err(|e| CliError::Runtime(e.into()))?;
        Ok(p)
    }
}

fn strip_paths(echo: &str) -> String {
    echo.lines().filter(|l| !l.starts_with("path = ")).collect::<Vec<_>>().join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let c = ExperimentConfig::default();
        let text = toml::to_string(&c).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_config_fills_defaults_and_rejects_typos() {
        let c: ExperimentConfig = toml::from_str("seed = 3\n[scm]\nvocab_size = 7\n[trace]\ntau = 0.5\n").unwrap();
        assert_eq!(c.scm.vocab_size, 7);
        assert_eq!(c.scm.memory, ScmParams::default().memory);
        assert_eq!(c.trace.tau, Some(0.5));
        assert!(toml::from_str::<ExperimentConfig>("[scm]\nvocab = 7\n").is_err());
    }

    #[test]
    fn hash_ignores_out_dir_and_tracks_settings() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { io: IoConfig { out_dir: "elsewhere".into() }, ..a.clone() };
        let c = ExperimentConfig { seed: 1, ..a.clone() };
        let h = |c: &ExperimentConfig| Run::new("x", c, &[]).unwrap().hash;
        assert_eq!(h(&a), h(&b));
        assert_ne!(h(&a), h(&c));
        assert_eq!(h(&a).len(), 12);
    }
}

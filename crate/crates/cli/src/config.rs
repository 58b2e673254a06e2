//! Experiment configuration file and command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crownfit::dataset::SynthConfig;
use crownfit::ganmodel::{Mode, TrainConfig};
use crownfit::evalsuite::DEFAULT_BOUNDARY_TOLERANCE;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Base seed; splits draw from disjoint seed ranges above it.
    pub seed: u64,
    /// Existing corpora to use instead of generated ones.
    pub train_path: Option<PathBuf>,
    pub val_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            train: 200,
            val: 100,
            test: 50,
            seed: 0,
            train_path: None,
            val_path: None,
            test_path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Boundary matching tolerance, pixels.
    pub boundary_tolerance: f64,
    /// Seed of the dropout noise used when predicting.
    pub prediction_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            boundary_tolerance: DEFAULT_BOUNDARY_TOLERANCE,
            prediction_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Cases per split that get histogram plots and image panels.
    pub plot_cases: usize,
    /// Histogram bar width in the plots, millimetres.
    pub plot_bin_mm: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            plot_cases: 4,
            plot_bin_mm: 0.05,
        }
    }
}

/// Everything an experiment needs. See the README for the file format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out: PathBuf,
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    pub corpus: CorpusConfig,
    /// Generator settings of the train and val splits.
    pub synth: SynthConfig,
    /// Generator settings of the hard test split.
    pub synth_hard: SynthConfig,
    /// Shared training settings; `mode` and `seed` are set per run.
    pub train: TrainConfig,
    /// Per-mode histogram weight overrides.
    pub lambda_h: BTreeMap<Mode, f64>,
    pub eval: EvalConfig,
    pub report: ReportConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs"),
            modes: Mode::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            corpus: CorpusConfig::default(),
            synth: SynthConfig::default(),
            synth_hard: SynthConfig::hard(),
            train: TrainConfig::default(),
            lambda_h: BTreeMap::new(),
            eval: EvalConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// The parts of the configuration that determine results.
#[derive(Serialize)]
struct HashedPart<'a> {
    corpus: &'a CorpusConfig,
    synth: &'a SynthConfig,
    synth_hard: &'a SynthConfig,
    train: &'a TrainConfig,
    lambda_h: &'a BTreeMap<Mode, f64>,
    eval: &'a EvalConfig,
}

impl ExperimentConfig {
    /// Reads a TOML file (or the defaults when `path` is `None`) and applies
    /// `key.path=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {}", p.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.modes.is_empty() {
            return Err(CliError::Config("modes must not be empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        self.synth.validate()?;
        self.synth_hard.validate()?;
        if self.synth.raster_size != self.synth_hard.raster_size {
            return Err(CliError::Config("synth and synth_hard must share raster_size".into()));
        }
        for &m in &self.modes {
            self.train_config(m, self.seeds[0]).validate()?;
        }
        if !(self.eval.boundary_tolerance >= 0.0) {
            return Err(CliError::Config("eval.boundary_tolerance must be >= 0".into()));
        }
        if !(self.report.plot_bin_mm > 0.0) {
            return Err(CliError::Config("report.plot_bin_mm must be > 0".into()));
        }
        Ok(())
    }

    /// Training settings of one run.
    pub fn train_config(&self, mode: Mode, seed: u64) -> TrainConfig {
        TrainConfig {
            mode,
            seed,
            lambda_h: self.lambda_h.get(&mode).copied().or(self.train.lambda_h.filter(|_| mode.has_histogram())),
            ..self.train.clone()
        }
    }

    /// Short hash naming the run directory; output location, mode and seed
    /// lists and plotting options are excluded.
    pub fn config_hash(&self) -> String {
        let part = HashedPart {
            corpus: &self.corpus,
            synth: &self.synth,
            synth_hard: &self.synth_hard,
            train: &self.train,
            lambda_h: &self.lambda_h,
            eval: &self.eval,
        };
        let json = serde_json::to_string(&part).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(self.config_hash())
    }
}

/// Sets `a.b.c = value` in `table`; `value` is parsed as a TOML value and
/// falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?}: {p:?} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_desk_scale_corpus() {
        let cfg = ExperimentConfig::load(None, &[]).unwrap();
        assert_eq!((cfg.corpus.train, cfg.corpus.val, cfg.corpus.test), (200, 100, 50));
        assert_eq!(cfg.synth.raster_size, 64);
        assert_eq!(cfg.modes.len(), 5);
    }

    #[test]
    fn overrides_reach_nested_tables() {
        let cfg = ExperimentConfig::load(
            None,
            &["train.epochs=3".into(), "modes=[\"HistW\"]".into(), "out=/tmp/x".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.modes, vec![Mode::HistW]);
        assert_eq!(cfg.out, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = ExperimentConfig::load(None, &["out=a".into()]).unwrap();
        let b = ExperimentConfig::load(None, &["out=b".into()]).unwrap();
        let c = ExperimentConfig::load(None, &["train.epochs=2".into()]).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn cond1_histogram_weight_rejected() {
        let err = ExperimentConfig::load(None, &["lambda_h.Cond1=0.002".into()]).unwrap_err();
        assert_eq!(err.code(), "E_CONFIG");
        assert!(ExperimentConfig::load(None, &["bogus=1".into()]).is_err());
    }

    #[test]
    fn per_mode_lambda() {
        let cfg = ExperimentConfig::load(None, &["lambda_h.HistW=0.01".into()]).unwrap();
        assert_eq!(cfg.train_config(Mode::HistW, 0).effective_lambda_h(), 0.01);
        assert_eq!(cfg.train_config(Mode::HistU, 0).effective_lambda_h(), 0.001);
        assert_eq!(cfg.train_config(Mode::Cond3, 0).effective_lambda_h(), 0.0);
    }
}

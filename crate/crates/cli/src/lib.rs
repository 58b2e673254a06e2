//! Experiment driver behind the `crownfit` binary: corpus generation,
//! training, evaluation and report emission under a run directory named by
//! the configuration hash.
//!
//! Run directory layout:
//!
//! ```text
//! <out>/<config_hash>/
//!   experiment.json
//!   corpus/{train,val,test}/<case_id>/   corpus/manifest.json
//!   models/<mode>/seed-<s>/{checkpoint.cfck,curves.csv,train.json}
//!   eval/ideal.json
//!   eval/<mode>/seed-<s>/<split>/{summary.json,cases/,predictions/}
//!   eval/Design/<split>/...
//!   report/{quality.csv,penetration.csv,contact.csv,histograms/,panels/}
//! ```

mod config;
mod corpus;
mod report;
mod runs;

use std::path::{Path, PathBuf};

pub use config::{apply_override, CorpusConfig, EvalConfig, ExperimentConfig, ReportConfig};
pub use corpus::{cmd_gen, load_split, split_dir, Manifest, Split};
pub use report::{cmd_report, histogram_svg, panel_png};
pub use runs::{cmd_eval, cmd_train, model_dir, eval_dir, EvalTarget, TrainSummary};

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] crownfit::Error),

    #[error("{what} not found at {path}")]
    Missing { what: &'static str, path: PathBuf },

    #[error("configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Missing { .. } => "E_MISSING",
            CliError::Config(_) => "E_CONFIG",
            CliError::Io { .. } => "E_IO",
            CliError::Json(_) => "E_JSON",
        }
    }
}

pub(crate) fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn require(path: &Path, what: &'static str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing {
            what,
            path: path.to_path_buf(),
        })
    }
}

/// Honours `CROWNFIT_DETERMINISTIC=1` by pinning the worker pool to one
/// thread. Results never depend on the thread count; the switch exists for
/// reproducible timing and debugging.
pub fn init_threads() {
    let single = std::env::var("CROWNFIT_DETERMINISTIC").is_ok_and(|v| v == "1");
    if single {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
}

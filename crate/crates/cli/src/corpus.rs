//! Corpus generation and loading.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crownfit::dataset::{read_case, synth_case, write_case, Case, SynthConfig, CASE_FILES};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{create_dir, require, write_json, CliError, CliResult, ExperimentConfig};

/// Seed distance between splits, so their cases never coincide.
const SPLIT_SEED_STRIDE: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    /// Hard cases with tighter opposing clearance.
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }

    fn count(self, cfg: &ExperimentConfig) -> usize {
        match self {
            Split::Train => cfg.corpus.train,
            Split::Val => cfg.corpus.val,
            Split::Test => cfg.corpus.test,
        }
    }

    fn synth(self, cfg: &ExperimentConfig) -> &SynthConfig {
        match self {
            Split::Test => &cfg.synth_hard,
            _ => &cfg.synth,
        }
    }

    fn configured_path(self, cfg: &ExperimentConfig) -> Option<&PathBuf> {
        match self {
            Split::Train => cfg.corpus.train_path.as_ref(),
            Split::Val => cfg.corpus.val_path.as_ref(),
            Split::Test => cfg.corpus.test_path.as_ref(),
        }
    }

    pub fn first_seed(self, cfg: &ExperimentConfig) -> u64 {
        cfg.corpus.seed.wrapping_add(self.index() * SPLIT_SEED_STRIDE)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| CliError::Config(format!("unknown split {s:?} (train, val, test)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub count: usize,
    pub first_seed: u64,
    pub synth_hash: String,
    pub cases: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub splits: BTreeMap<Split, SplitManifest>,
    /// SHA-256 over every case file of every split, in manifest order.
    pub content_sha256: String,
}

/// Directory holding a split: the configured path, else the generated one.
pub fn split_dir(cfg: &ExperimentConfig, split: Split) -> PathBuf {
    split
        .configured_path(cfg)
        .cloned()
        .unwrap_or_else(|| cfg.run_dir().join("corpus").join(split.name()))
}

/// Generates every split that has no configured path and writes the manifest.
pub fn cmd_gen(cfg: &ExperimentConfig) -> CliResult<Manifest> {
    let run = cfg.run_dir();
    let corpus = run.join("corpus");
    create_dir(&corpus)?;
    write_json(&run.join("experiment.json"), cfg)?;
    let mut splits = BTreeMap::new();
    let mut hasher = Sha256::new();
    for split in Split::ALL {
        let dir = split_dir(cfg, split);
        let cases: Vec<String> = if split.configured_path(cfg).is_some() {
            require(&dir, "corpus split")?;
            list_cases(&dir)?
        } else {
            if dir.exists() {
                std::fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
            }
            create_dir(&dir)?;
            let synth = split.synth(cfg);
            let first = split.first_seed(cfg);
            let n = split.count(cfg);
            (0..n as u64)
                .into_par_iter()
                .map(|i| -> CliResult<String> {
                    let case = synth_case(synth, first.wrapping_add(i))?;
                    write_case(&case, &dir.join(&case.case_id))?;
                    Ok(case.case_id)
                })
                .collect::<CliResult<Vec<_>>>()?
        };
        for id in &cases {
            hasher.update(split.name().as_bytes());
            hasher.update(id.as_bytes());
            for file in CASE_FILES {
                let path = dir.join(id).join(file);
                let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
                hasher.update((bytes.len() as u64).to_le_bytes());
                hasher.update(&bytes);
            }
        }
        splits.insert(
            split,
            SplitManifest {
                count: cases.len(),
                first_seed: split.first_seed(cfg),
                synth_hash: split.synth(cfg).config_hash(),
                cases,
            },
        );
    }
    let manifest = Manifest {
        config_hash: cfg.config_hash(),
        splits,
        content_sha256: hex::encode(hasher.finalize()),
    };
    write_json(&corpus.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Case directories of a split, sorted by name.
fn list_cases(dir: &Path) -> CliResult<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        if entry.path().join("meta.json").is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn load_split(cfg: &ExperimentConfig, split: Split) -> CliResult<Vec<Case>> {
    let dir = split_dir(cfg, split);
    require(&dir, "corpus split (run gen-data first)")?;
    let ids = list_cases(&dir)?;
    if ids.is_empty() {
        return Err(CliError::Missing {
            what: "cases in corpus split",
            path: dir,
        });
    }
    ids.par_iter()
        .map(|id| read_case(&dir.join(id)).map_err(CliError::from))
        .collect()
}

//! Training and evaluation runs.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use crownfit::dataset::{write_cfr, Case, DepthRaster};
use crownfit::evalsuite::{evaluate_case, ideal_contacts, summarize, CaseReport, CorpusSummary, IdealContacts};
use crownfit::ganmodel::{
    load_checkpoint, predict, save_checkpoint, train_with, write_curves_csv, Mode, StepRecord,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_split, Split};
use crate::{create_dir, read_json, require, write_json, CliError, CliResult, ExperimentConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.cfck";
pub const CURVES_FILE: &str = "curves.csv";

/// What produced the crowns being evaluated: a trained mode or the designed
/// crowns themselves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EvalTarget {
    Model(Mode),
    Design,
}

impl fmt::Display for EvalTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalTarget::Model(m) => write!(f, "{m}"),
            EvalTarget::Design => f.write_str("Design"),
        }
    }
}

impl FromStr for EvalTarget {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        if s.eq_ignore_ascii_case("design") {
            return Ok(EvalTarget::Design);
        }
        s.parse::<Mode>()
            .map(EvalTarget::Model)
            .map_err(|_| CliError::Config(format!("unknown mode {s:?}")))
    }
}

pub fn model_dir(cfg: &ExperimentConfig, mode: Mode, seed: u64) -> PathBuf {
    cfg.run_dir().join("models").join(mode.name()).join(format!("seed-{seed}"))
}

pub fn eval_dir(cfg: &ExperimentConfig, target: EvalTarget, seed: u64, split: Split) -> PathBuf {
    let base = cfg.run_dir().join("eval").join(target.to_string());
    match target {
        EvalTarget::Model(_) => base.join(format!("seed-{seed}")).join(split.name()),
        EvalTarget::Design => base.join(split.name()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: Mode,
    pub seed: u64,
    pub train_config_hash: String,
    pub epochs: usize,
    pub steps: usize,
    pub d_steps: usize,
    pub g_steps: usize,
    pub final_losses: Option<StepRecord>,
    pub seconds: f64,
}

/// Trains one mode with one seed, checkpointing and writing curves after
/// every epoch.
pub fn cmd_train(cfg: &ExperimentConfig, mode: Mode, seed: u64) -> CliResult<TrainSummary> {
    let tc = cfg.train_config(mode, seed);
    tc.validate()?;
    let cases = load_split(cfg, Split::Train)?;
    let dir = model_dir(cfg, mode, seed);
    create_dir(&dir)?;
    let hash = tc.config_hash();
    let started = Instant::now();
    let checkpoint = dir.join(CHECKPOINT_FILE);
    let curves = dir.join(CURVES_FILE);
    let out = train_with(&cases, &tc, |end| {
        save_checkpoint(&checkpoint, mode, &hash, end.step, end.epoch + 1, end.generator, end.discriminator)?;
        write_curves_csv(&curves, end.records)?;
        if let Some(last) = end.records.last() {
            eprintln!(
                "train {mode} seed {seed}: epoch {}/{} step {} loss_D {:.4} loss_G_adv {:.4} loss_L1 {:.4}{}",
                end.epoch + 1,
                tc.epochs,
                end.step,
                last.loss_d,
                last.loss_g_adv,
                last.loss_l1,
                last.loss_h.map(|h| format!(" loss_H {h:.4}")).unwrap_or_default()
            );
        }
        Ok(())
    })?;
    let summary = TrainSummary {
        mode,
        seed,
        train_config_hash: hash,
        epochs: tc.epochs,
        steps: out.records.len(),
        d_steps: out.d_steps,
        g_steps: out.g_steps,
        final_losses: out.records.last().cloned(),
        seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&dir.join("train.json"), &summary)?;
    Ok(summary)
}

/// Ideal contact statistics from the training split's designed crowns,
/// cached under `eval/ideal.json`.
pub fn ideal_for(cfg: &ExperimentConfig) -> CliResult<IdealContacts> {
    let path = cfg.run_dir().join("eval").join("ideal.json");
    if path.exists() {
        return read_json(&path);
    }
    let ideal = ideal_contacts(&load_split(cfg, Split::Train)?)?;
    create_dir(path.parent().expect("has parent"))?;
    write_json(&path, &ideal)?;
    Ok(ideal)
}

fn predictions(cfg: &ExperimentConfig, target: EvalTarget, seed: u64, cases: &[Case]) -> CliResult<Vec<DepthRaster>> {
    match target {
        EvalTarget::Design => Ok(cases.iter().map(|c| c.crown_gt.clone()).collect()),
        EvalTarget::Model(mode) => {
            let path = model_dir(cfg, mode, seed).join(CHECKPOINT_FILE);
            require(&path, "checkpoint (run train first)")?;
            let mut ck = load_checkpoint(&path)?;
            if ck.meta.mode != mode {
                return Err(CliError::Config(format!(
                    "checkpoint {} was trained as {}",
                    path.display(),
                    ck.meta.mode
                )));
            }
            cases
                .iter()
                .map(|case| {
                    // one noise stream per case keeps predictions order-independent
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.prediction_seed);
                    rng.set_stream(case.seed);
                    predict(&mut ck.generator, case, mode, &mut rng).map_err(CliError::from)
                })
                .collect()
        }
    }
}

/// Evaluates one target on one split. Quality metrics are computed on the
/// validation split only, where the designed crown is the reference.
pub fn cmd_eval(cfg: &ExperimentConfig, target: EvalTarget, seed: u64, split: Split) -> CliResult<CorpusSummary> {
    let cases = load_split(cfg, split)?;
    let ideal = ideal_for(cfg)?;
    let preds = predictions(cfg, target, seed, &cases)?;
    let with_quality = split == Split::Val;
    let reports: Vec<CaseReport> = cases
        .par_iter()
        .zip(&preds)
        .map(|(case, y_hat)| {
            evaluate_case(case, y_hat, &ideal, with_quality, cfg.eval.boundary_tolerance).map_err(CliError::from)
        })
        .collect::<CliResult<_>>()?;
    let dir = eval_dir(cfg, target, seed, split);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    let case_dir = dir.join("cases");
    let pred_dir = dir.join("predictions");
    create_dir(&case_dir)?;
    create_dir(&pred_dir)?;
    for ((case, report), y_hat) in cases.iter().zip(&reports).zip(&preds) {
        write_json(&case_dir.join(format!("{}.json", case.case_id)), report)?;
        let (w, h) = y_hat.dims();
        write_cfr(&pred_dir.join(format!("{}.cfr", case.case_id)), w, h, y_hat.values())?;
    }
    let summary = summarize(&reports)?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

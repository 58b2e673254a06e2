//! Conditional generator/discriminator, loss composition and training.

mod checkpoint;
mod discriminator;
mod generator;
pub mod layers;
mod losses;
pub mod tensor;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};
pub use discriminator::{sigmoid, Discriminator, DiscriminatorSpec, Scores, FULL_DISCRIMINATOR};
pub use generator::{Generator, GeneratorSpec, FULL_DECODER, FULL_DROPOUT, FULL_ENCODER};
pub use losses::{
    adversarial_logit_grads, adversarial_losses, l1_loss, l1_loss_grad, total_generator_loss,
    GeneratorLoss, HistogramLoss, Target, SCORE_EPS,
};
pub use tensor::Tensor;
pub use train::{
    build_networks, condition_tensor, predict, train, train_with, write_curves_csv, EpochEnd,
    StepRecord, TrainOutcome, SURFACE_CUTOFF_LEVEL,
};

use crate::histstat::{default_weighted_bins, BinSpec, PoolSpec};
use crate::{Error, Result};

/// The five experimental settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    /// Prepared jaw only.
    Cond1,
    /// Prepared jaw, opposing jaw and gap distances.
    Cond3,
    /// Cond3 plus the uniformly weighted histogram loss.
    HistU,
    /// Cond3 plus the tier-weighted histogram loss.
    HistW,
    /// HistW on locally averaged gap distances.
    Hist2nd,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Cond1, Mode::Cond3, Mode::HistU, Mode::HistW, Mode::Hist2nd];

    pub fn condition_channels(self) -> usize {
        match self {
            Mode::Cond1 => 1,
            _ => 3,
        }
    }

    pub fn has_histogram(self) -> bool {
        matches!(self, Mode::HistU | Mode::HistW | Mode::Hist2nd)
    }

    pub fn default_lambda_h(self) -> f64 {
        match self {
            Mode::Cond1 | Mode::Cond3 => 0.0,
            Mode::HistU => 0.001,
            Mode::HistW | Mode::Hist2nd => 0.002,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Cond1 => "Cond1",
            Mode::Cond3 => "Cond3",
            Mode::HistU => "HistU",
            Mode::HistW => "HistW",
            Mode::Hist2nd => "Hist2nd",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_l1: f64,
    /// Histogram weight; `None` takes the mode's default.
    pub lambda_h: Option<f64>,
    pub seed: u64,
    pub mirror_augment: bool,
    /// Keep decoder dropout active at prediction time.
    pub inference_dropout: bool,
    pub bins: BinSpec,
    pub pool: PoolSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Cond3,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epochs: 150,
            batch_size: 1,
            lambda_l1: 100.0,
            lambda_h: None,
            seed: 0,
            mirror_augment: true,
            inference_dropout: true,
            bins: default_weighted_bins(),
            pool: PoolSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn for_mode(mode: Mode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn effective_lambda_h(&self) -> f64 {
        self.lambda_h.unwrap_or_else(|| self.mode.default_lambda_h())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let lambda_h = self.effective_lambda_h();
        if !(lambda_h.is_finite() && lambda_h >= 0.0) {
            return bad(format!("lambda_h must be >= 0, got {lambda_h}"));
        }
        match self.mode {
            Mode::Cond1 if lambda_h > 0.0 => {
                return bad("Cond1 has no gap input, so lambda_h must be 0".into())
            }
            Mode::Cond3 if lambda_h > 0.0 => {
                return bad("Cond3 trains without the histogram loss; lambda_h must be 0".into())
            }
            m if m.has_histogram() && lambda_h <= 0.0 => {
                return bad(format!("{m} needs lambda_h > 0"))
            }
            _ => {}
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0".into());
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1".into());
        }
        if !(self.lambda_l1 >= 0.0) {
            return bad("lambda_l1 must be >= 0".into());
        }
        self.pool.validate()
    }

    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    /// The histogram term for this mode, if any.
    pub fn histogram_loss(&self) -> Result<Option<HistogramLoss>> {
        let lambda = self.effective_lambda_h();
        Ok(match self.mode {
            Mode::Cond1 | Mode::Cond3 => None,
            Mode::HistU => Some(HistogramLoss::new(
                self.bins.clone(),
                self.bins.uniform_weights(),
                None,
                lambda,
            )?),
            Mode::HistW => Some(HistogramLoss::new(
                self.bins.clone(),
                self.bins.weights().to_vec(),
                None,
                lambda,
            )?),
            Mode::Hist2nd => Some(HistogramLoss::new(
                self.bins.clone(),
                self.bins.weights().to_vec(),
                Some(self.pool),
                lambda,
            )?),
        })
    }
}

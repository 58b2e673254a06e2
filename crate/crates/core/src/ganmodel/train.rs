//! Alternating adversarial training, prediction and loss curves.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::discriminator::{Discriminator, DiscriminatorSpec};
use super::generator::{Generator, GeneratorSpec};
use super::layers::Param;
use super::losses::{adversarial_logit_grads, adversarial_losses, total_generator_loss, Target};
use super::tensor::Tensor;
use super::{Mode, TrainConfig};
use crate::dataset::{gap_to_net, level_to_net, net_to_level, Case, DepthRaster};
use crate::{Error, Result};

/// Generated levels below this are treated as background.
pub const SURFACE_CUTOFF_LEVEL: f32 = 1.0;

const ADAM_EPS: f64 = 1e-8;
const SHUFFLE_STREAM: u64 = 1;
const MIRROR_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;
const DISCRIMINATOR_SEED_OFFSET: u64 = 0x5EED_D15C;

/// Network input for a case: `(1, C, H, W)` with `C = 1` for [`Mode::Cond1`]
/// (prepared jaw) and 3 otherwise (prepared, opposing, gap).
pub fn condition_tensor(case: &Case, mode: Mode) -> Tensor {
    let (w, h) = case.dims();
    let plane = w * h;
    let channels = mode.condition_channels();
    let mut data = Vec::with_capacity(channels * plane);
    data.extend(case.prepared.values().iter().map(|&v| level_to_net(v)));
    if channels == 3 {
        data.extend(case.opposing.values().iter().map(|&v| level_to_net(v)));
        data.extend(
            case.gap
                .values()
                .iter()
                .zip(case.gap.valid_mask())
                .map(|(&d, &ok)| if ok { gap_to_net(d) } else { -1.0 }),
        );
    }
    Tensor::from_vec(1, channels, h, w, data).expect("channel planes match case dims")
}

/// One optimisation step's losses. `loss_h` is the unscaled histogram
/// distance and is absent for modes without it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g_adv: f64,
    pub loss_l1: f64,
    pub loss_h: Option<f64>,
}

pub struct TrainOutcome {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub records: Vec<StepRecord>,
    pub d_steps: usize,
    pub g_steps: usize,
}

/// State handed to the per-epoch callback.
pub struct EpochEnd<'a> {
    pub epoch: usize,
    pub step: usize,
    pub generator: &'a mut Generator,
    pub discriminator: &'a mut Discriminator,
    pub records: &'a [StepRecord],
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    fn new(cfg: &TrainConfig, params: &[&mut Param]) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    fn step(&mut self, params: Vec<&mut Param>) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let lr = (self.lr * c2.sqrt() / c1) as f32;
        let eps = (ADAM_EPS * c2.sqrt()) as f32;
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                p.value[i] -= lr * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

struct Sample {
    condition: Tensor,
    crown: Tensor,
    target: Target,
}

impl Sample {
    fn new(case: &Case, mode: Mode) -> Self {
        let target = Target::from_case(case);
        let (w, h) = case.dims();
        let crown = Tensor::from_vec(1, 1, h, w, target.crown_net.clone()).expect("crown plane");
        Self {
            condition: condition_tensor(case, mode),
            crown,
            target,
        }
    }
}

fn stack(items: &[&Tensor]) -> Tensor {
    let [_, c, h, w] = items[0].shape();
    let data = items.iter().flat_map(|t| t.data.iter().copied()).collect();
    Tensor::from_vec(items.len(), c, h, w, data).expect("uniform batch")
}

fn guard(step: usize, term: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { step, term, value })
    }
}

pub fn build_networks(cases: &[Case], config: &TrainConfig) -> Result<(Generator, Discriminator)> {
    let size = cases.first().ok_or(Error::EmptyInput)?.dims().0;
    let channels = config.mode.condition_channels();
    let mut gspec = GeneratorSpec::for_raster(channels, size)?;
    gspec.inference_dropout = config.inference_dropout;
    let generator = Generator::new(gspec, config.seed)?;
    let discriminator = Discriminator::new(
        DiscriminatorSpec::for_raster(channels, size)?,
        config.seed.wrapping_add(DISCRIMINATOR_SEED_OFFSET),
    )?;
    Ok((generator, discriminator))
}

/// Trains from scratch for `config.epochs` epochs.
pub fn train(cases: &[Case], config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(cases, config, |_| Ok(()))
}

/// Like [`train`], calling `on_epoch` after every epoch (e.g. to checkpoint).
pub fn train_with<F>(cases: &[Case], config: &TrainConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(EpochEnd<'_>) -> Result<()>,
{
    config.validate()?;
    if cases.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dims = cases[0].dims();
    if dims.0 != dims.1 {
        return Err(Error::InvalidConfig(format!("rasters must be square, got {dims:?}")));
    }
    if let Some(c) = cases.iter().find(|c| c.dims() != dims) {
        return Err(Error::DimensionMismatch {
            expected: dims,
            found: c.dims(),
        });
    }
    let mode = config.mode;
    let hist = config.histogram_loss()?;
    let (mut gen, mut disc) = build_networks(cases, config)?;

    let samples: Vec<[Sample; 2]> = cases
        .iter()
        .map(|c| {
            let mirrored = if config.mirror_augment {
                c.mirrored()
            } else {
                c.clone()
            };
            [Sample::new(c, mode), Sample::new(&mirrored, mode)]
        })
        .collect();

    let mut adam_g = Adam::new(config, &gen.params_mut());
    let mut adam_d = Adam::new(config, &disc.params_mut());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut mirror_rng = ChaCha8Rng::seed_from_u64(config.seed);
    mirror_rng.set_stream(MIRROR_STREAM);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(DROPOUT_STREAM);

    let cond_channels = mode.condition_channels();
    let mut records = Vec::with_capacity(config.epochs * cases.len().div_ceil(config.batch_size));
    let (mut d_steps, mut g_steps) = (0usize, 0usize);
    let mut order: Vec<usize> = (0..cases.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let step = records.len();
            let batch: Vec<&Sample> = chunk
                .iter()
                .map(|&i| {
                    let flip = config.mirror_augment && mirror_rng.random_bool(0.5);
                    &samples[i][flip as usize]
                })
                .collect();
            let n = batch.len();
            let cond = stack(&batch.iter().map(|s| &s.condition).collect::<Vec<_>>());
            let real = stack(&batch.iter().map(|s| &s.crown).collect::<Vec<_>>());

            let fake = gen.forward(&cond, true, &mut dropout_rng)?;

            // discriminator step
            disc.zero_grad();
            let real_scores = disc.forward(&Tensor::concat_channels(&cond, &real)?)?;
            let (d_real, _, _) = adversarial_logit_grads(&real_scores.probabilities, &[]);
            disc.backward(&d_real, true);
            let fake_scores = disc.forward(&Tensor::concat_channels(&cond, &fake)?)?;
            let (_, d_fake, _) = adversarial_logit_grads(&[], &fake_scores.probabilities);
            disc.backward(&d_fake, true);
            let (loss_d, _) =
                adversarial_losses(&real_scores.probabilities, &fake_scores.probabilities);
            guard(step, "loss_D", loss_d)?;
            adam_d.step(disc.params_mut());
            d_steps += 1;

            // generator step against the updated discriminator
            gen.zero_grad();
            let scores = disc.forward(&Tensor::concat_channels(&cond, &fake)?)?;
            let (_, _, d_gen) = adversarial_logit_grads(&[], &scores.probabilities);
            let d_input = disc.backward(&d_gen, false);
            let (_, mut d_fake_img) = d_input.split_channels(cond_channels);
            let (mut adv, mut l1, mut lh) = (0.0, 0.0, 0.0);
            for (b, sample) in batch.iter().enumerate() {
                let terms = total_generator_loss(
                    &sample.target,
                    fake.item(b),
                    scores.probabilities[b],
                    config.lambda_l1,
                    hist.as_ref(),
                )?;
                adv += terms.adversarial / n as f64;
                l1 += terms.l1 / n as f64;
                lh += terms.histogram / n as f64;
                for (g, r) in d_fake_img.item_mut(b).iter_mut().zip(&terms.grad_reconstruction) {
                    *g += r / n as f32;
                }
            }
            guard(step, "loss_G_adv", adv)?;
            guard(step, "loss_L1", l1)?;
            guard(step, "loss_H", lh)?;
            gen.backward(&d_fake_img);
            adam_g.step(gen.params_mut());
            g_steps += 1;

            records.push(StepRecord {
                step,
                epoch,
                loss_d,
                loss_g_adv: adv,
                loss_l1: l1,
                loss_h: hist.is_some().then_some(lh),
            });
        }
        on_epoch(EpochEnd {
            epoch,
            step: records.len(),
            generator: &mut gen,
            discriminator: &mut disc,
            records: &records,
        })?;
    }
    Ok(TrainOutcome {
        generator: gen,
        discriminator: disc,
        records,
        d_steps,
        g_steps,
    })
}

/// Generates a crown for `case`. Dropout follows the generator's
/// `inference_dropout` flag and draws from `rng`. Pixels outside the
/// restoration site, or below [`SURFACE_CUTOFF_LEVEL`], are background.
pub fn predict(generator: &mut Generator, case: &Case, mode: Mode, rng: &mut ChaCha8Rng) -> Result<DepthRaster> {
    let cond = condition_tensor(case, mode);
    let dropout = generator.spec().inference_dropout;
    let out = generator.forward(&cond, dropout, rng)?;
    let site = case.site_mask();
    let (w, h) = case.dims();
    let values = out
        .data
        .iter()
        .zip(&site)
        .map(|(&v, &s)| {
            let level = net_to_level(v);
            if s && level >= SURFACE_CUTOFF_LEVEL {
                level
            } else {
                0.0
            }
        })
        .collect();
    DepthRaster::new(w, h, values)
}

/// Loss curves as CSV: `step,loss_D,loss_G_adv,loss_L1,loss_H`. `loss_H`
/// is empty for modes without a histogram term.
pub fn write_curves_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut out = String::from("step,loss_D,loss_G_adv,loss_L1,loss_H\n");
    for r in records {
        let h = r.loss_h.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", r.step, r.loss_d, r.loss_g_adv, r.loss_l1, h));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

//! Adversarial, L1 and histogram loss terms with their gradients.

use crate::dataset::{level_to_net, Case};
use crate::histstat::{
    chi2_hist_loss, chi2_hist_loss_grad, pool_pullback, pool_values, soft_histogram,
    soft_histogram_pullback, BinSpec, PoolSpec,
};
use crate::{Error, Result};

/// Scores are clamped to `[ε, 1 − ε]` before taking logarithms.
pub const SCORE_EPS: f32 = 1e-7;

fn clamp_score(p: f32) -> (f64, bool) {
    let c = p.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
    (c as f64, c == p)
}

/// `(loss_D, loss_G_adv)` with `loss_D = ½[−E log D(real) − E log(1 − D(fake))]`
/// and the non-saturating generator loss `−E log D(fake)`.
pub fn adversarial_losses(real: &[f32], fake: &[f32]) -> (f64, f64) {
    let mean = |v: &[f32], f: &dyn Fn(f64) -> f64| -> f64 {
        v.iter().map(|&p| f(clamp_score(p).0)).sum::<f64>() / v.len().max(1) as f64
    };
    let real_term = mean(real, &|p| -p.ln());
    let fake_term = mean(fake, &|p| -(1.0 - p).ln());
    let gen = mean(fake, &|p| -p.ln());
    (0.5 * (real_term + fake_term), gen)
}

/// Gradients w.r.t. the discriminator logits: `(d loss_D / d real, d loss_D / d fake,
/// d loss_G_adv / d fake)`. Clamped scores receive no gradient.
pub fn adversarial_logit_grads(real: &[f32], fake: &[f32]) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let nr = real.len().max(1) as f32;
    let nf = fake.len().max(1) as f32;
    let live = |p: f32| clamp_score(p).1;
    let d_real = real
        .iter()
        .map(|&p| if live(p) { -0.5 * (1.0 - p) / nr } else { 0.0 })
        .collect();
    let d_fake = fake
        .iter()
        .map(|&p| if live(p) { 0.5 * p / nf } else { 0.0 })
        .collect();
    let d_gen = fake
        .iter()
        .map(|&p| if live(p) { -(1.0 - p) / nf } else { 0.0 })
        .collect();
    (d_real, d_fake, d_gen)
}

/// Mean absolute error over all pixels.
pub fn l1_loss(y_hat: &[f32], y: &[f32]) -> f64 {
    debug_assert_eq!(y_hat.len(), y.len());
    y_hat
        .iter()
        .zip(y)
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum::<f64>()
        / y.len().max(1) as f64
}

pub fn l1_loss_grad(y_hat: &[f32], y: &[f32]) -> Vec<f32> {
    let n = y.len().max(1) as f32;
    y_hat
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            if a > b {
                1.0 / n
            } else if a < b {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect()
}

/// Everything the generator losses need from one case, in one orientation.
#[derive(Clone, Debug)]
pub struct Target {
    pub width: usize,
    pub height: usize,
    /// Designed crown in the network range.
    pub crown_net: Vec<f32>,
    pub site: Vec<bool>,
    pub gap: Vec<f64>,
    pub prepared: Vec<f64>,
    pub gamma: f64,
    /// Reconstructed gap of the designed crown, zero outside the site.
    pub gap_gt: Vec<f64>,
}

impl Target {
    pub fn from_case(case: &Case) -> Self {
        let (width, height) = case.dims();
        let site = case.site_mask();
        let gamma = case.gamma as f64;
        let gap: Vec<f64> = case.gap.values().iter().map(|&v| v as f64).collect();
        let prepared: Vec<f64> = case.prepared.values().iter().map(|&v| v as f64).collect();
        let gap_gt = (0..site.len())
            .map(|i| {
                if site[i] {
                    gap[i] + gamma * (case.crown_gt.values()[i] as f64 - prepared[i])
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            width,
            height,
            crown_net: case.crown_gt.values().iter().map(|&v| level_to_net(v)).collect(),
            site,
            gap,
            prepared,
            gamma,
            gap_gt,
        }
    }

    /// Reconstructed gap of a generated crown given in the network range.
    pub fn gap_for(&self, y_hat: &[f32]) -> Vec<f64> {
        (0..self.site.len())
            .map(|i| {
                if self.site[i] {
                    let level = (y_hat[i] as f64 + 1.0) * 127.5;
                    self.gap[i] + self.gamma * (level - self.prepared[i])
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// `d f / d y_hat` on the site: levels per network unit times γ.
    pub fn gap_slope(&self) -> f64 {
        127.5 * self.gamma
    }
}

/// χ² distance between the soft histograms of generated and designed gaps,
/// optionally after mask-renormalized average pooling.
#[derive(Clone, Debug)]
pub struct HistogramLoss {
    pub bins: BinSpec,
    pub weights: Vec<f64>,
    pub pool: Option<PoolSpec>,
    pub lambda: f64,
}

impl HistogramLoss {
    pub fn new(bins: BinSpec, weights: Vec<f64>, pool: Option<PoolSpec>, lambda: f64) -> Result<Self> {
        if weights.len() != bins.len() {
            return Err(Error::BinCountMismatch(bins.len(), weights.len()));
        }
        if let Some(p) = pool {
            p.validate()?;
        }
        Ok(Self {
            bins,
            weights,
            pool,
            lambda,
        })
    }

    /// Unscaled loss and its gradient w.r.t. each generated gap value (full raster,
    /// zero outside `support`).
    pub fn evaluate(
        &self,
        width: usize,
        height: usize,
        gap_gen: &[f64],
        gap_gt: &[f64],
        support: &[bool],
    ) -> Result<(f64, Vec<f64>)> {
        let (gen_vals, gt_vals, pooled) = match self.pool {
            None => (
                select(gap_gen, support),
                select(gap_gt, support),
                None,
            ),
            Some(spec) => {
                let (pg, valid, counts) = pool_values(width, height, gap_gen, support, spec)?;
                let (pt, _, _) = pool_values(width, height, gap_gt, support, spec)?;
                (select(&pg, &valid), select(&pt, &valid), Some((spec, valid, counts)))
            }
        };
        if gen_vals.is_empty() {
            return Err(Error::EmptyRegion);
        }
        let h_gen = soft_histogram(&gen_vals, &self.bins)?;
        let h_gt = soft_histogram(&gt_vals, &self.bins)?;
        let loss = chi2_hist_loss(&h_gen, &h_gt, &self.weights)?;
        let upstream = chi2_hist_loss_grad(&h_gen, &h_gt, &self.weights)?;
        let d_vals = soft_histogram_pullback(&gen_vals, &self.bins, &upstream)?;
        let grad = match pooled {
            None => scatter(&d_vals, support),
            Some((spec, valid, counts)) => {
                let d_pooled = scatter(&d_vals, &valid);
                pool_pullback(width, height, support, spec, &counts, &d_pooled)?
            }
        };
        Ok((loss, grad))
    }
}

fn select(values: &[f64], mask: &[bool]) -> Vec<f64> {
    values
        .iter()
        .zip(mask)
        .filter_map(|(&v, &m)| m.then_some(v))
        .collect()
}

fn scatter(values: &[f64], mask: &[bool]) -> Vec<f64> {
    let mut it = values.iter();
    mask.iter()
        .map(|&m| if m { *it.next().expect("one value per set pixel") } else { 0.0 })
        .collect()
}

/// Generator objective for one sample with per-term breakdown.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorLoss {
    pub adversarial: f64,
    pub l1: f64,
    /// Unscaled histogram distance (0 when the mode has none).
    pub histogram: f64,
    /// `adversarial + λ_L1 l1 + λ_H histogram`.
    pub total: f64,
    /// Gradient of `λ_L1 l1 + λ_H histogram` w.r.t. the generated image.
    /// The adversarial gradient flows through the discriminator and is not included.
    pub grad_reconstruction: Vec<f32>,
}

/// Combines the adversarial score of the generated crown with the L1 and
/// (optionally) histogram terms. `y_hat` is in the network range.
pub fn total_generator_loss(
    target: &Target,
    y_hat: &[f32],
    fake_score: f32,
    lambda_l1: f64,
    histogram: Option<&HistogramLoss>,
) -> Result<GeneratorLoss> {
    if y_hat.len() != target.crown_net.len() {
        return Err(Error::Shape(format!(
            "prediction has {} pixels, target {}",
            y_hat.len(),
            target.crown_net.len()
        )));
    }
    let (_, adversarial) = adversarial_losses(&[], &[fake_score]);
    let l1 = l1_loss(y_hat, &target.crown_net);
    let mut grad: Vec<f32> = l1_loss_grad(y_hat, &target.crown_net)
        .into_iter()
        .map(|g| (g as f64 * lambda_l1) as f32)
        .collect();
    let mut hist = 0.0;
    let mut total = adversarial + lambda_l1 * l1;
    if let Some(h) = histogram {
        let gap_gen = target.gap_for(y_hat);
        let (loss, d_gap) = h.evaluate(target.width, target.height, &gap_gen, &target.gap_gt, &target.site)?;
        hist = loss;
        total += h.lambda * loss;
        let slope = target.gap_slope() * h.lambda;
        for (g, d) in grad.iter_mut().zip(&d_gap) {
            *g += (d * slope) as f32;
        }
    }
    Ok(GeneratorLoss {
        adversarial,
        l1,
        histogram: hist,
        total,
        grad_reconstruction: grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_case, SynthConfig};
    use crate::histstat::default_weighted_bins;

    #[test]
    fn adversarial_hand_values() {
        let (d, g) = adversarial_losses(&[0.5], &[0.5]);
        assert!((d - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g - std::f64::consts::LN_2).abs() < 1e-12);
        let (_, g) = adversarial_losses(&[0.5], &[1.0 - 1e-7]);
        assert!(g < 1e-6);
        let (d, _) = adversarial_losses(&[1.0], &[0.0]);
        assert!((0.0..1e-6).contains(&d));
    }

    #[test]
    fn adversarial_logit_gradients_match_finite_differences() {
        use crate::ganmodel::sigmoid;
        let (zr, zf) = (0.3f64, -0.8f64);
        let loss = |zr: f64, zf: f64| {
            adversarial_losses(&[sigmoid(zr as f32)], &[sigmoid(zf as f32)])
        };
        let (dr, df, dg) =
            adversarial_logit_grads(&[sigmoid(zr as f32)], &[sigmoid(zf as f32)]);
        let e = 1e-3;
        let fd_r = (loss(zr + e, zf).0 - loss(zr - e, zf).0) / (2.0 * e);
        let fd_f = (loss(zr, zf + e).0 - loss(zr, zf - e).0) / (2.0 * e);
        let fd_g = (loss(zr, zf + e).1 - loss(zr, zf - e).1) / (2.0 * e);
        assert!((fd_r - dr[0] as f64).abs() < 1e-3);
        assert!((fd_f - df[0] as f64).abs() < 1e-3);
        assert!((fd_g - dg[0] as f64).abs() < 1e-3);
    }

    #[test]
    fn l1_examples() {
        let a = [0.1f32, -0.4, 0.9];
        assert_eq!(l1_loss(&a, &a), 0.0);
        let b: Vec<f32> = a.iter().map(|v| v + 0.2).collect();
        assert!((l1_loss(&b, &a) - 0.2).abs() < 1e-6);
        assert_eq!(l1_loss(&a, &b), l1_loss(&b, &a));
    }

    #[test]
    fn perfect_prediction_zeroes_reconstruction_terms() {
        let case = synth_case(&SynthConfig::default(), 1).unwrap();
        let t = Target::from_case(&case);
        let bins = default_weighted_bins();
        let h = HistogramLoss::new(bins.clone(), bins.weights().to_vec(), None, 0.002).unwrap();
        let loss = total_generator_loss(&t, &t.crown_net.clone(), 0.5, 100.0, Some(&h)).unwrap();
        assert_eq!(loss.l1, 0.0);
        assert!(loss.histogram.abs() < 1e-9);
    }

    #[test]
    fn uniform_and_weighted_share_histograms() {
        let case = synth_case(&SynthConfig::default(), 2).unwrap();
        let t = Target::from_case(&case);
        let y_hat: Vec<f32> = t.crown_net.iter().map(|v| (v - 0.03).max(-0.999)).collect();
        let bins = default_weighted_bins();
        let u = HistogramLoss::new(bins.clone(), bins.uniform_weights(), None, 1.0).unwrap();
        let w = HistogramLoss::new(bins.clone(), bins.weights().to_vec(), None, 1.0).unwrap();
        let gen: Vec<f64> = t.gap_for(&y_hat).into_iter().zip(&t.site).filter_map(|(v, &m)| m.then_some(v)).collect();
        let gt: Vec<f64> = t.gap_gt.iter().zip(&t.site).filter_map(|(&v, &m)| m.then_some(v)).collect();
        let hg = soft_histogram(&gen, &bins).unwrap();
        let ht = soft_histogram(&gt, &bins).unwrap();
        let lu = u.evaluate(t.width, t.height, &t.gap_for(&y_hat), &t.gap_gt, &t.site).unwrap().0;
        let lw = w.evaluate(t.width, t.height, &t.gap_for(&y_hat), &t.gap_gt, &t.site).unwrap().0;
        assert!((lu - chi2_hist_loss(&hg, &ht, &bins.uniform_weights()).unwrap()).abs() < 1e-9);
        assert!((lw - chi2_hist_loss(&hg, &ht, bins.weights()).unwrap()).abs() < 1e-9);
        assert_ne!(lu, lw);
    }

    #[test]
    fn window_one_pooling_equals_unpooled() {
        let case = synth_case(&SynthConfig::default(), 3).unwrap();
        let t = Target::from_case(&case);
        let y_hat: Vec<f32> = t.crown_net.iter().map(|v| (v - 0.05).max(-0.999)).collect();
        let bins = default_weighted_bins();
        let w = HistogramLoss::new(bins.clone(), bins.weights().to_vec(), None, 1.0).unwrap();
        let p = HistogramLoss::new(
            bins.clone(),
            bins.weights().to_vec(),
            Some(PoolSpec { window: 1, stride: 1 }),
            1.0,
        )
        .unwrap();
        let g = t.gap_for(&y_hat);
        let (a, ga) = w.evaluate(t.width, t.height, &g, &t.gap_gt, &t.site).unwrap();
        let (b, gb) = p.evaluate(t.width, t.height, &g, &t.gap_gt, &t.site).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
    }
}

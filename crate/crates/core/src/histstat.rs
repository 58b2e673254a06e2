//! Differentiable soft histograms of gap distances and the χ² histogram loss.
//!
//! Bin `i` has center `c_i`, slope `l_i` (inverse half-width, 1/mm) and weight
//! `w_i`. A value `d` contributes `max(0, 1 − |d − c_i| l_i)` to bin `i`, so
//! uniformly spaced bins with `l = 1/spacing` form a partition of unity.

use serde::{Deserialize, Serialize};

use crate::dataset::GapRaster;
use crate::{Error, Result};

/// Default bin width, millimetres.
pub const DEFAULT_BIN_WIDTH: f64 = 0.1;
/// Default histogram range, millimetres.
pub const DEFAULT_BIN_RANGE: (f64, f64) = (-1.0, 8.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBinSpec")]
pub struct BinSpec {
    centers: Vec<f64>,
    slopes: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBinSpec {
    centers: Vec<f64>,
    slopes: Vec<f64>,
    weights: Vec<f64>,
}

impl TryFrom<RawBinSpec> for BinSpec {
    type Error = Error;

    fn try_from(raw: RawBinSpec) -> Result<Self> {
        Self::new(raw.centers, raw.slopes, raw.weights)
    }
}

impl BinSpec {
    pub fn new(centers: Vec<f64>, slopes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidConfig("a histogram needs at least one bin".into()));
        }
        if slopes.len() != centers.len() {
            return Err(Error::BinCountMismatch(centers.len(), slopes.len()));
        }
        if weights.len() != centers.len() {
            return Err(Error::BinCountMismatch(centers.len(), weights.len()));
        }
        if centers.iter().any(|c| !c.is_finite()) || centers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("bin centers must be strictly ascending".into()));
        }
        if slopes.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return Err(Error::InvalidConfig("bin slopes must be positive".into()));
        }
        if weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
            return Err(Error::InvalidConfig("bin weights must be non-negative".into()));
        }
        Ok(Self {
            centers,
            slopes,
            weights,
        })
    }

    /// Bins of width `width` tiling `[lo, hi]`, centered in each cell, with
    /// slope `1 / width` and unit weights.
    pub fn uniform(lo: f64, hi: f64, width: f64) -> Result<Self> {
        if !(width > 0.0 && hi > lo) {
            return Err(Error::InvalidConfig(format!(
                "uniform bins need width > 0 and hi > lo, got [{lo}, {hi}] / {width}"
            )));
        }
        let count = ((hi - lo) / width).round() as usize;
        let centers: Vec<f64> = (0..count).map(|k| lo + (k as f64 + 0.5) * width).collect();
        let slopes = vec![1.0 / width; count];
        let weights = vec![1.0; count];
        Self::new(centers, slopes, weights)
    }

    /// Same bins with every weight replaced by `weight_of(center)`.
    pub fn reweighted(&self, weight_of: impl Fn(f64) -> f64) -> Result<Self> {
        let weights = self.centers.iter().map(|&c| weight_of(c)).collect();
        Self::new(self.centers.clone(), self.slopes.clone(), weights)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Unit weights on every bin.
    pub fn uniform_weights(&self) -> Vec<f64> {
        vec![1.0; self.len()]
    }
}

/// Weight tiers by bin center: penetration bins count double, the critical
/// contact range `[0, 0.5)` mm fully, `[0.5, 1.0)` mm half, larger gaps not at all.
pub fn bin_weight_for_center(center: f64) -> f64 {
    if center < 0.0 {
        2.0
    } else if center < 0.5 {
        1.0
    } else if center < 1.0 {
        0.5
    } else {
        0.0
    }
}

/// 0.1 mm bins over `[-1, 8]` mm, slope 10/mm, tiered weights.
pub fn default_weighted_bins() -> BinSpec {
    let (lo, hi) = DEFAULT_BIN_RANGE;
    BinSpec::uniform(lo, hi, DEFAULT_BIN_WIDTH)
        .and_then(|b| b.reweighted(bin_weight_for_center))
        .expect("default bins are valid")
}

/// Fractional per-bin pixel counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftHistogram {
    pub masses: Vec<f64>,
}

impl SoftHistogram {
    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }
}

#[inline]
fn kernel(d: f64, center: f64, slope: f64) -> f64 {
    (1.0 - (d - center).abs() * slope).max(0.0)
}

/// Right-hand derivative of [`kernel`] with respect to `d`.
#[inline]
fn kernel_slope(d: f64, center: f64, slope: f64) -> f64 {
    let half = 1.0 / slope;
    if d >= center - half && d < center {
        slope
    } else if d >= center && d < center + half {
        -slope
    } else {
        0.0
    }
}

/// `h_i = Σ_d max(0, 1 − |d − c_i| l_i)`.
pub fn soft_histogram(values: &[f64], bins: &BinSpec) -> Result<SoftHistogram> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidRaster("non-finite histogram input".into()));
    }
    let mut masses = vec![0.0; bins.len()];
    // values outer, bins inner: the per-bin sum order is fixed by the input order
    for &d in values {
        for (m, (&c, &l)) in masses.iter_mut().zip(bins.centers.iter().zip(&bins.slopes)) {
            *m += kernel(d, c, l);
        }
    }
    Ok(SoftHistogram { masses })
}

/// Sensitivity of `Σ_i upstream_i h_i` to each input value.
///
/// At kernel kinks the right-hand derivative is used.
pub fn soft_histogram_pullback(values: &[f64], bins: &BinSpec, upstream: &[f64]) -> Result<Vec<f64>> {
    if upstream.len() != bins.len() {
        return Err(Error::BinCountMismatch(bins.len(), upstream.len()));
    }
    Ok(values
        .iter()
        .map(|&d| {
            bins.centers
                .iter()
                .zip(&bins.slopes)
                .zip(upstream)
                .map(|((&c, &l), &u)| u * kernel_slope(d, c, l))
                .sum()
        })
        .collect())
}

/// `Σ_i w_i (g_i − t_i)² / max(1, t_i)` with `g` generated and `t` target.
pub fn chi2_hist_loss(generated: &SoftHistogram, target: &SoftHistogram, weights: &[f64]) -> Result<f64> {
    check_bins(generated, target, weights)?;
    Ok(generated
        .masses
        .iter()
        .zip(&target.masses)
        .zip(weights)
        .map(|((&g, &t), &w)| w * (g - t).powi(2) / t.max(1.0))
        .sum())
}

/// Gradient of [`chi2_hist_loss`] with respect to the generated masses.
pub fn chi2_hist_loss_grad(
    generated: &SoftHistogram,
    target: &SoftHistogram,
    weights: &[f64],
) -> Result<Vec<f64>> {
    check_bins(generated, target, weights)?;
    Ok(generated
        .masses
        .iter()
        .zip(&target.masses)
        .zip(weights)
        .map(|((&g, &t), &w)| 2.0 * w * (g - t) / t.max(1.0))
        .collect())
}

fn check_bins(a: &SoftHistogram, b: &SoftHistogram, weights: &[f64]) -> Result<()> {
    if a.masses.len() != b.masses.len() {
        return Err(Error::BinCountMismatch(a.masses.len(), b.masses.len()));
    }
    if weights.len() != a.masses.len() {
        return Err(Error::BinCountMismatch(a.masses.len(), weights.len()));
    }
    Ok(())
}

/// Square averaging window for second-order statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
}

impl Default for PoolSpec {
    fn default() -> Self {
        Self {
            window: 3,
            stride: 1,
        }
    }
}

impl PoolSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig(format!(
                "pool window and stride must be >= 1, got {}/{}",
                self.window, self.stride
            )));
        }
        Ok(())
    }

    pub fn output_dims(&self, width: usize, height: usize) -> (usize, usize) {
        (width.div_ceil(self.stride), height.div_ceil(self.stride))
    }

    /// Input pixel span `[lo, hi)` of the window anchored at output index `o`.
    fn span(&self, o: usize, len: usize) -> (usize, usize) {
        let center = (o * self.stride) as isize;
        let lo = center - ((self.window - 1) / 2) as isize;
        let hi = lo + self.window as isize;
        (lo.max(0) as usize, (hi.max(0) as usize).min(len))
    }
}

/// Mask-renormalized average pooling on raw slices.
///
/// Window `o` is centered on input pixel `o * stride`. Returns the pooled
/// values, their validity and the number of valid inputs per output.
pub fn pool_values(
    width: usize,
    height: usize,
    values: &[f64],
    valid: &[bool],
    spec: PoolSpec,
) -> Result<(Vec<f64>, Vec<bool>, Vec<usize>)> {
    spec.validate()?;
    let (ow, oh) = spec.output_dims(width, height);
    let mut out = vec![0.0; ow * oh];
    let mut out_valid = vec![false; ow * oh];
    let mut counts = vec![0usize; ow * oh];
    for oy in 0..oh {
        let (y0, y1) = spec.span(oy, height);
        for ox in 0..ow {
            let (x0, x1) = spec.span(ox, width);
            let mut sum = 0.0;
            let mut count = 0usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    let i = y * width + x;
                    if valid[i] {
                        sum += values[i];
                        count += 1;
                    }
                }
            }
            let o = oy * ow + ox;
            if count > 0 {
                out[o] = sum / count as f64;
                out_valid[o] = true;
                counts[o] = count;
            }
        }
    }
    Ok((out, out_valid, counts))
}

/// Distributes output sensitivities back onto the valid inputs of each window.
pub fn pool_pullback(
    width: usize,
    height: usize,
    valid: &[bool],
    spec: PoolSpec,
    counts: &[usize],
    upstream: &[f64],
) -> Result<Vec<f64>> {
    spec.validate()?;
    let (ow, oh) = spec.output_dims(width, height);
    if upstream.len() != ow * oh || counts.len() != ow * oh {
        return Err(Error::Shape(format!(
            "pool pullback expects {} outputs, got {}",
            ow * oh,
            upstream.len()
        )));
    }
    let mut grad = vec![0.0; width * height];
    for oy in 0..oh {
        let (y0, y1) = spec.span(oy, height);
        for ox in 0..ow {
            let o = oy * ow + ox;
            if counts[o] == 0 || upstream[o] == 0.0 {
                continue;
            }
            let share = upstream[o] / counts[o] as f64;
            let (x0, x1) = spec.span(ox, width);
            for y in y0..y1 {
                for x in x0..x1 {
                    let i = y * width + x;
                    if valid[i] {
                        grad[i] += share;
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Local mean of a gap raster over the valid pixels of each window.
pub fn masked_avg_pool(f: &GapRaster, spec: PoolSpec) -> Result<GapRaster> {
    let values: Vec<f64> = f.values().iter().map(|&v| v as f64).collect();
    let (out, valid, _) = pool_values(f.width(), f.height(), &values, f.valid_mask(), spec)?;
    let (ow, oh) = spec.output_dims(f.width(), f.height());
    GapRaster::new(ow, oh, out.into_iter().map(|v| v as f32).collect(), valid)
}

#[cfg(test)]
mod tests {
    use super::*;

    // dyadic widths keep kernel arithmetic exact
    fn three_bins() -> BinSpec {
        BinSpec::uniform(0.0, 1.5, 0.5).unwrap()
    }

    #[test]
    fn kernel_peak() {
        let bins = three_bins();
        let h = soft_histogram(&[bins.centers()[1]], &bins).unwrap();
        assert_eq!(h.masses, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn half_way_between_bins() {
        let bins = three_bins();
        let h = soft_histogram(&[bins.centers()[0] + 0.25], &bins).unwrap();
        assert!((h.masses[0] - 0.5).abs() < 1e-12);
        assert!((h.masses[1] - 0.5).abs() < 1e-12);
        assert_eq!(h.masses[2], 0.0);
    }

    #[test]
    fn tiled_range_conserves_mass() {
        let bins = default_weighted_bins();
        let values: Vec<f64> = (0..100).map(|i| -0.9 + 8.8 * i as f64 / 99.0).collect();
        let h = soft_histogram(&values, &bins).unwrap();
        assert!((h.total() - 100.0).abs() <= 1e-6 * 100.0);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(soft_histogram(&[], &three_bins()), Err(Error::EmptyInput)));
    }

    #[test]
    fn pullback_examples() {
        let bins = three_bins();
        let c = bins.centers()[1];
        let g = soft_histogram_pullback(&[c + 1e-3], &bins, &[0.0, 1.0, 0.0]).unwrap();
        assert!((g[0] + 2.0).abs() < 1e-9);
        let g = soft_histogram_pullback(&[5.0], &bins, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(g, vec![0.0]);
        // right-hand convention at the kink
        let g = soft_histogram_pullback(&[c], &bins, &[0.0, 1.0, 0.0]).unwrap();
        assert!((g[0] + 2.0).abs() < 1e-9);
    }

    #[test]
    fn chi2_worked_examples() {
        let g = SoftHistogram { masses: vec![2.0, 0.0] };
        let t = SoftHistogram { masses: vec![0.0, 2.0] };
        assert_eq!(chi2_hist_loss(&g, &t, &[1.0, 1.0]).unwrap(), 6.0);
        assert_eq!(chi2_hist_loss(&g, &t, &[2.0, 0.5]).unwrap(), 9.0);
        assert_eq!(chi2_hist_loss(&g, &g, &[1.0, 1.0]).unwrap(), 0.0);
        let short = SoftHistogram { masses: vec![1.0] };
        assert!(matches!(
            chi2_hist_loss(&g, &short, &[1.0, 1.0]),
            Err(Error::BinCountMismatch(2, 1))
        ));
    }

    #[test]
    fn default_bins_layout() {
        let bins = default_weighted_bins();
        assert_eq!(bins.len(), 90);
        assert!((bins.centers()[0] + 0.95).abs() < 1e-12);
        assert!(bins.slopes().iter().all(|&l| (l - 10.0).abs() < 1e-9));
        let weight_at = |c: f64| {
            let i = bins
                .centers()
                .iter()
                .position(|&x| (x - c).abs() < 1e-9)
                .unwrap();
            bins.weights()[i]
        };
        assert_eq!(weight_at(-0.05), 2.0);
        assert_eq!(weight_at(0.05), 1.0);
        assert_eq!(weight_at(0.45), 1.0);
        assert_eq!(weight_at(0.75), 0.5);
        assert_eq!(weight_at(1.05), 0.0);
        assert_eq!(bin_weight_for_center(2.0), 0.0);
    }

    #[test]
    fn bin_spec_validation() {
        assert!(BinSpec::new(vec![0.0, 0.0], vec![1.0; 2], vec![1.0; 2]).is_err());
        assert!(BinSpec::new(vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0; 2]).is_err());
        assert!(BinSpec::new(vec![0.0, 1.0], vec![1.0; 2], vec![-1.0, 1.0]).is_err());
    }

    #[test]
    fn pooling_examples() {
        let constant = GapRaster::new(4, 4, vec![0.3; 16], vec![true; 16]).unwrap();
        let p = masked_avg_pool(&constant, PoolSpec::default()).unwrap();
        assert!(p.values().iter().all(|&v| (v - 0.3).abs() < 1e-7));

        let grid = GapRaster::new(3, 3, (0..9).map(|v| v as f32).collect(), vec![true; 9]).unwrap();
        let p = masked_avg_pool(&grid, PoolSpec::default()).unwrap();
        assert_eq!(p.get(1, 1), Some(4.0));

        let mut valid = vec![false; 49];
        valid[0] = true;
        let sparse = GapRaster::new(7, 7, vec![1.0; 49], valid).unwrap();
        let p = masked_avg_pool(&sparse, PoolSpec::default()).unwrap();
        assert_eq!(p.get(1, 1), Some(1.0));
        assert_eq!(p.get(5, 5), None);

        let id = masked_avg_pool(&grid, PoolSpec { window: 1, stride: 1 }).unwrap();
        assert_eq!(id, grid);
        assert!(PoolSpec { window: 0, stride: 1 }.validate().is_err());
    }

    #[test]
    fn pool_pullback_matches_finite_differences() {
        let (w, h) = (5, 4);
        let values: Vec<f64> = (0..w * h).map(|i| (i as f64 * 0.37).sin()).collect();
        let valid: Vec<bool> = (0..w * h).map(|i| i % 7 != 3).collect();
        let spec = PoolSpec::default();
        let up: Vec<f64> = (0..w * h).map(|i| (i as f64 * 0.11).cos()).collect();
        let objective = |v: &[f64]| -> f64 {
            let (out, _, _) = pool_values(w, h, v, &valid, spec).unwrap();
            out.iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let (_, _, counts) = pool_values(w, h, &values, &valid, spec).unwrap();
        let grad = pool_pullback(w, h, &valid, spec, &counts, &up).unwrap();
        for i in 0..w * h {
            let mut p = values.clone();
            p[i] += 1e-5;
            let mut m = values.clone();
            m[i] -= 1e-5;
            let fd = (objective(&p) - objective(&m)) / 2e-5;
            assert!((fd - grad[i]).abs() < 1e-8, "pixel {i}: {fd} vs {}", grad[i]);
        }
    }
}

//! Gap reconstruction after crown insertion, critical (contact) regions and
//! penetration statistics.

use serde::{Deserialize, Serialize};

use crate::dataset::{DepthRaster, GapRaster};
use crate::{Error, Result};

/// Millimetres per depth level used in production scans.
pub const DEFAULT_GAMMA: f32 = 3.14e-2;

/// Fraction of the smallest reconstructed gaps treated as contact candidates.
pub const CRITICAL_FRACTION: f64 = 0.05;

/// Minimum number of valid pixels for a meaningful 5% quantile.
pub const MIN_CRITICAL_SUPPORT: usize = 20;

/// Conversion from depth levels to millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaScale(f32);

impl GammaScale {
    pub fn new(gamma: f32) -> Result<Self> {
        if gamma.is_finite() && gamma > 0.0 {
            Ok(Self(gamma))
        } else {
            Err(Error::InvalidConfig(format!("gamma must be > 0, got {gamma}")))
        }
    }

    pub fn gamma(self) -> f32 {
        self.0
    }
}

impl Default for GammaScale {
    fn default() -> Self {
        Self(DEFAULT_GAMMA)
    }
}

fn check_dims(expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Gap left after placing crown `crown` on prepared jaw `prepared`:
/// `f = d + γ (ŷ − x)` on the crown support `{ŷ > 0}`.
///
/// The returned raster is valid exactly on the crown support.
pub fn reconstruct_gap(
    gap: &GapRaster,
    prepared: &DepthRaster,
    crown: &DepthRaster,
    scale: GammaScale,
) -> Result<GapRaster> {
    let dims = gap.dims();
    check_dims(dims, prepared.dims())?;
    check_dims(dims, crown.dims())?;
    let gamma = scale.gamma();
    let (w, h) = dims;
    let mut values = vec![0.0f32; w * h];
    let mut valid = vec![false; w * h];
    for i in 0..w * h {
        let yh = crown.values()[i];
        if yh <= 0.0 {
            continue;
        }
        if !gap.valid_mask()[i] {
            return Err(Error::CrownOutsideGap { x: i % w, y: i / w });
        }
        values[i] = gap.values()[i] + gamma * (yh - prepared.values()[i]);
        valid[i] = true;
    }
    GapRaster::new(w, h, values, valid)
}

/// Pixels in the lowest 5% of reconstructed gaps.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticalMask {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
    /// Largest gap value still counted as critical, millimetres.
    pub threshold: f32,
}

impl CriticalMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// `(column, row)` coordinates of the critical pixels in row-major order.
    pub fn coordinates(&self) -> Vec<(usize, usize)> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }
}

/// Index into the ascending valid values whose value is the critical threshold.
pub fn critical_rank(n: usize) -> usize {
    ((CRITICAL_FRACTION * n as f64).ceil() as usize).max(1) - 1
}

/// Selects every valid pixel whose gap is at most the 5th-percentile value
/// (the value at ascending index `⌈0.05 N⌉ − 1`); ties are included.
pub fn critical_region(f: &GapRaster) -> Result<CriticalMask> {
    let mut values = f.valid_values();
    if values.is_empty() {
        return Err(Error::EmptyRegion);
    }
    if values.len() < MIN_CRITICAL_SUPPORT {
        return Err(Error::TooFewPixels {
            needed: MIN_CRITICAL_SUPPORT,
            found: values.len(),
        });
    }
    let k = critical_rank(values.len());
    let (_, threshold, _) = values.select_nth_unstable_by(k, f32::total_cmp);
    let threshold = *threshold;
    let mask = f
        .values()
        .iter()
        .zip(f.valid_mask())
        .map(|(&v, &m)| m && v <= threshold)
        .collect();
    Ok(CriticalMask {
        width: f.width(),
        height: f.height(),
        mask,
        threshold,
    })
}

/// Outcome of the penetration test for one crown.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenetrationReport {
    pub is_failure: bool,
    /// Depth of the worst violation in millimetres, `0` when not failing.
    pub max_penetration: f32,
    /// Number of pixels with a negative gap.
    pub penetration_area: usize,
}

/// A crown fails when any reconstructed gap is strictly negative. A zero gap
/// is a legal contact.
pub fn penetration_stats(f: &GapRaster) -> Result<PenetrationReport> {
    let mut min = f32::INFINITY;
    let mut area = 0usize;
    let mut any = false;
    for v in f.valid_values() {
        any = true;
        min = min.min(v);
        if v < 0.0 {
            area += 1;
        }
    }
    if !any {
        return Err(Error::EmptyRegion);
    }
    let is_failure = area > 0;
    Ok(PenetrationReport {
        is_failure,
        max_penetration: if is_failure { -min } else { 0.0 },
        penetration_area: area,
    })
}

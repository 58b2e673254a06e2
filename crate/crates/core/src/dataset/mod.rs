//! Depth and gap rasters, restoration cases, procedural case synthesis and
//! on-disk persistence.
//!
//! Depth convention: a level is the distance of a surface from the virtual
//! camera on the side of the opposing jaw, so a *larger* level is a surface
//! *farther* from the opposing jaw. Level `0` is the background sentinel.

mod io;
mod synth;

pub use io::{
    read_case, read_cfr, write_case, write_cfr, CaseMeta, CASE_FILES, CFR_HEADER_LEN, CFR_MAGIC,
};
pub use synth::{synth_case, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::gapgeom::{self, GammaScale};
use crate::{Error, Result};

/// Largest representable depth level.
pub const MAX_LEVEL: f32 = 255.0;

/// A 2D grid of depth levels in `[0, 255]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthRaster {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl DepthRaster {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "{}x{} raster needs {} values, got {}",
                width,
                height,
                width * height,
                values.len()
            )));
        }
        if let Some(v) = values
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > MAX_LEVEL)
        {
            return Err(Error::InvalidRaster(format!(
                "depth level {v} outside [0, {MAX_LEVEL}]"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// `true` where the pixel carries a surface (level > 0).
    pub fn surface_mask(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v > 0.0).collect()
    }

    /// Keeps values where `mask` is set and zeroes the rest.
    pub fn masked(&self, mask: &[bool]) -> Self {
        let values = self
            .values
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        Self {
            width: self.width,
            height: self.height,
            values,
        }
    }

    /// Horizontal mirror.
    pub fn mirrored(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: mirror_rows(&self.values, self.width),
        }
    }
}

/// Per-pixel gap distance in millimetres with a validity mask.
///
/// Invalid pixels always hold `0.0` in memory so equality is bitwise
/// meaningful; they are never read by the geometry routines.
#[derive(Clone, Debug, PartialEq)]
pub struct GapRaster {
    width: usize,
    height: usize,
    values: Vec<f32>,
    valid: Vec<bool>,
}

impl GapRaster {
    pub fn new(width: usize, height: usize, values: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if values.len() != n || valid.len() != n {
            return Err(Error::InvalidRaster(format!(
                "{}x{} gap raster needs {} values and mask entries, got {} and {}",
                width,
                height,
                n,
                values.len(),
                valid.len()
            )));
        }
        let mut values = values;
        for (v, &m) in values.iter_mut().zip(&valid) {
            if !m {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::InvalidRaster("non-finite gap value".into()));
            }
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&m| m).count()
    }

    /// Values of the valid pixels in row-major order.
    pub fn valid_values(&self) -> Vec<f32> {
        self.values
            .iter()
            .zip(&self.valid)
            .filter_map(|(&v, &m)| m.then_some(v))
            .collect()
    }

    pub fn mirrored(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: mirror_rows(&self.values, self.width),
            valid: mirror_rows(&self.valid, self.width),
        }
    }
}

fn mirror_rows<T: Copy>(values: &[T], width: usize) -> Vec<T> {
    values
        .chunks(width)
        .flat_map(|row| row.iter().rev().copied())
        .collect()
}

/// One restoration instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub case_id: String,
    pub seed: u64,
    /// Hash of the generator configuration that produced the case.
    pub config_hash: String,
    /// Millimetres per depth level.
    pub gamma: f32,
    /// Prepared jaw `x`, with the stump at the restoration site.
    pub prepared: DepthRaster,
    /// Opposing jaw `x̃`.
    pub opposing: DepthRaster,
    /// Jaw-to-jaw gap `d` before the crown is placed.
    pub gap: GapRaster,
    /// Designed crown `y`; nonzero exactly on the restoration site.
    pub crown_gt: DepthRaster,
}

impl Case {
    pub fn dims(&self) -> (usize, usize) {
        self.prepared.dims()
    }

    /// The restoration site (stump region). By construction it coincides with
    /// the support of the designed crown.
    pub fn site_mask(&self) -> Vec<bool> {
        self.crown_gt.surface_mask()
    }

    pub fn scale(&self) -> GammaScale {
        GammaScale::new(self.gamma).expect("case gamma validated on construction")
    }

    /// Checks every structural and geometric invariant of a case.
    pub fn validate(&self, min_clearance: f32) -> Result<()> {
        let dims = self.prepared.dims();
        for found in [self.opposing.dims(), self.gap.dims(), self.crown_gt.dims()] {
            if found != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    found,
                });
            }
        }
        GammaScale::new(self.gamma)?;
        let site = self.site_mask();
        if site.iter().zip(self.prepared.values()).any(|(&s, &x)| s && x <= 0.0) {
            return Err(Error::InvalidRaster(
                "crown extends beyond the prepared jaw".into(),
            ));
        }
        let f = gapgeom::reconstruct_gap(&self.gap, &self.prepared, &self.crown_gt, self.scale())?;
        if let Some(v) = f.valid_values().into_iter().find(|&v| v < min_clearance) {
            return Err(Error::InvalidRaster(format!(
                "ground-truth clearance {v} mm below {min_clearance} mm"
            )));
        }
        Ok(())
    }

    /// Horizontally mirrored copy (data augmentation).
    pub fn mirrored(&self) -> Self {
        Self {
            case_id: self.case_id.clone(),
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            gamma: self.gamma,
            prepared: self.prepared.mirrored(),
            opposing: self.opposing.mirrored(),
            gap: self.gap.mirrored(),
            crown_gt: self.crown_gt.mirrored(),
        }
    }
}

/// Affine map of a depth level in `[0, 255]` to the network range `[-1, 1]`.
pub fn level_to_net(level: f32) -> f32 {
    level / 127.5 - 1.0
}

/// Inverse of [`level_to_net`], clamped to the representable level range.
pub fn net_to_level(value: f32) -> f32 {
    ((value + 1.0) * 127.5).clamp(0.0, MAX_LEVEL)
}

/// Gap distances are fed to the network through the fixed map `[0, 8] mm -> [-1, 1]`.
pub const NET_GAP_RANGE_MM: f32 = 8.0;

pub fn gap_to_net(mm: f32) -> f32 {
    (mm / (NET_GAP_RANGE_MM / 2.0) - 1.0).clamp(-1.0, 1.0)
}

/// Normalizes a depth raster to the generator's output range.
pub fn to_net_range(raster: &DepthRaster) -> Vec<f32> {
    raster.values().iter().map(|&v| level_to_net(v)).collect()
}

/// Maps a network image back to depth levels.
pub fn from_net_range(width: usize, height: usize, image: &[f32]) -> Result<DepthRaster> {
    if image.len() != width * height {
        return Err(Error::InvalidRaster(format!(
            "{}x{} image needs {} values, got {}",
            width,
            height,
            width * height,
            image.len()
        )));
    }
    let values = image.iter().map(|&v| net_to_level(v)).collect();
    DepthRaster::new(width, height, values)
}

/// Units attached to each raster of a case on disk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Level,
    Mm,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn net_range_endpoints() {
        assert_eq!(level_to_net(0.0), -1.0);
        assert_eq!(level_to_net(255.0), 1.0);
        assert_eq!(level_to_net(127.5), 0.0);
        assert_eq!(net_to_level(-1.0), 0.0);
        assert_eq!(net_to_level(1.0), 255.0);
    }

    #[test]
    fn net_range_round_trip_on_level_grid() {
        let values: Vec<f32> = (0..=255u32)
            .flat_map(|l| [l as f32, l as f32 + 0.25, l as f32 + 0.5])
            .filter(|&v| v <= 255.0)
            .collect();
        let n = values.len();
        let raster = DepthRaster::new(n, 1, values.clone()).unwrap();
        let back = from_net_range(n, 1, &to_net_range(&raster)).unwrap();
        for (a, b) in values.iter().zip(back.values()) {
            // f32 carries ~7 significant digits; 255 * 2^-24 bounds the error
            assert!((a - b).abs() <= 255.0 * f32::EPSILON, "{a} vs {b}");
        }
    }

    #[test]
    fn depth_raster_rejects_out_of_range() {
        assert!(DepthRaster::new(2, 1, vec![0.0, 256.0]).is_err());
        assert!(DepthRaster::new(2, 1, vec![0.0, f32::NAN]).is_err());
        assert!(DepthRaster::new(2, 1, vec![-1.0, 0.0]).is_err());
        assert!(DepthRaster::new(2, 2, vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn gap_raster_zeroes_invalid_pixels() {
        let g = GapRaster::new(3, 1, vec![1.0, f32::NAN, 2.0], vec![true, false, true]).unwrap();
        assert_eq!(g.values(), &[1.0, 0.0, 2.0]);
        assert_eq!(g.get(1, 0), None);
        assert_eq!(g.valid_values(), vec![1.0, 2.0]);
    }

    #[test]
    fn mirroring_reverses_rows() {
        let r = DepthRaster::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.mirrored().values(), &[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
        assert_eq!(r.mirrored().mirrored(), r);
    }
}

//! Procedural restoration cases.
//!
//! Each case is a strip of lower-jaw teeth seen from the occlusal side with
//! one tooth prepared down to a stump, an upper jaw whose teeth interdigitate
//! with it, and a designed crown. The crown starts from the crest heights of
//! the neighbouring teeth, receives a set of raised cusps and is then pushed
//! back wherever it would come closer than `min_gt_clearance` to the opposing
//! jaw. The opposing tooth above the site is shifted by a per-case amount so
//! that the clearance of the unconstrained crown follows `natural_clearance_mm`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Case, DepthRaster, GapRaster, MAX_LEVEL};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Width and height of every raster, pixels.
    pub raster_size: usize,
    /// Number of lower-jaw teeth beside the restoration site.
    pub n_neighbor_teeth: usize,
    /// Inclusive range of cusps placed on the designed crown.
    pub cusp_count_range: [u32; 2],
    /// Amplitude of uniform per-pixel surface noise, levels.
    pub surface_noise_amplitude: f32,
    /// Smallest gap left between the designed crown and the opposing jaw, mm.
    pub min_gt_clearance: f32,
    /// Millimetres per level.
    pub gamma: f32,
    /// Mesio-distal half-width of the restoration site relative to the raster size.
    pub site_scale: f32,
    /// Range of the closest approach between neighbouring teeth and the opposing jaw, mm.
    pub neighbor_clearance_mm: [f32; 2],
    /// Range of the clearance the crown would have before clamping, mm.
    /// Negative values mean the unconstrained design would penetrate.
    pub natural_clearance_mm: [f32; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            raster_size: 64,
            n_neighbor_teeth: 2,
            cusp_count_range: [3, 5],
            surface_noise_amplitude: 0.5,
            min_gt_clearance: 0.05,
            gamma: crate::gapgeom::DEFAULT_GAMMA,
            site_scale: 0.17,
            neighbor_clearance_mm: [0.1, 0.6],
            natural_clearance_mm: [-1.2, 0.8],
        }
    }
}

impl SynthConfig {
    /// Cases with a tight bite: the unconstrained crown always overlaps the
    /// opposing tooth, so small errors near the contact penetrate.
    pub fn hard() -> Self {
        Self {
            neighbor_clearance_mm: [0.02, 0.15],
            natural_clearance_mm: [-2.0, -0.8],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.raster_size < 32 {
            return bad(format!("raster_size must be >= 32, got {}", self.raster_size));
        }
        if !(self.min_gt_clearance >= 0.0) {
            return bad(format!(
                "min_gt_clearance must be >= 0, got {}",
                self.min_gt_clearance
            ));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return bad(format!("gamma must be > 0, got {}", self.gamma));
        }
        let [lo, hi] = self.cusp_count_range;
        if !(2 <= lo && lo <= hi && hi <= 6) {
            return bad(format!("cusp_count_range must satisfy 2 <= min <= max <= 6, got [{lo}, {hi}]"));
        }
        if !(self.surface_noise_amplitude >= 0.0 && self.surface_noise_amplitude <= 5.0) {
            return bad(format!(
                "surface_noise_amplitude must lie in [0, 5], got {}",
                self.surface_noise_amplitude
            ));
        }
        for (name, [a, b]) in [
            ("neighbor_clearance_mm", self.neighbor_clearance_mm),
            ("natural_clearance_mm", self.natural_clearance_mm),
        ] {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return bad(format!("{name} must be an ordered finite range, got [{a}, {b}]"));
            }
        }
        if !(self.neighbor_clearance_mm[0] >= 0.0) {
            return bad("neighbor_clearance_mm must be >= 0".into());
        }
        if !self.site_scale.is_finite() || self.site_scale > 0.3 {
            return bad(format!("site_scale must be <= 0.3, got {}", self.site_scale));
        }
        Ok(())
    }

    /// Short stable hash of the configuration.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

/// Superellipse footprint of one tooth with a domed surface and cusps.
#[derive(Clone, Debug)]
struct Tooth {
    row: f64,
    col: f64,
    half_rows: f64,
    half_cols: f64,
    /// Depth of the crest below the gum line, levels.
    height: f64,
    cusps: Vec<Cusp>,
}

#[derive(Clone, Copy, Debug)]
struct Cusp {
    row: f64,
    col: f64,
    amplitude: f64,
    sigma: f64,
}

const FOOTPRINT_EXPONENT: f64 = 2.5;

impl Tooth {
    /// Normalized superellipse radius; `< 1` inside the footprint.
    fn rho(&self, r: f64, c: f64) -> f64 {
        let dr = ((r - self.row) / self.half_rows).abs();
        let dc = ((c - self.col) / self.half_cols).abs();
        (dr.powf(FOOTPRINT_EXPONENT) + dc.powf(FOOTPRINT_EXPONENT)).powf(1.0 / FOOTPRINT_EXPONENT)
    }

    fn cusp_relief(&self, r: f64, c: f64) -> f64 {
        let rho = self.rho(r, c);
        cusp_sum(&self.cusps, r, c) * taper(rho)
    }

    /// Surface level over a gum at `gum`, or `None` outside the footprint.
    fn surface(&self, gum: f64, r: f64, c: f64) -> Option<f64> {
        let rho = self.rho(r, c);
        (rho < 1.0).then(|| gum - self.height * dome(rho) - self.cusp_relief(r, c))
    }
}

fn dome(rho: f64) -> f64 {
    (1.0 - rho * rho).max(0.0).sqrt()
}

fn taper(rho: f64) -> f64 {
    (1.0 - rho * rho).max(0.0)
}

fn cusp_sum(cusps: &[Cusp], r: f64, c: f64) -> f64 {
    cusps
        .iter()
        .map(|k| {
            let d2 = (r - k.row).powi(2) + (c - k.col).powi(2);
            k.amplitude * (-d2 / (2.0 * k.sigma * k.sigma)).exp()
        })
        .sum()
}

fn ring_cusps(
    rng: &mut ChaCha8Rng,
    tooth_row: f64,
    tooth_col: f64,
    half_rows: f64,
    half_cols: f64,
    count: u32,
    amplitude: (f64, f64),
) -> Vec<Cusp> {
    let phase = rng.random_range(0.0..2.0 * PI);
    let sigma_base = 0.28 * half_rows.min(half_cols);
    (0..count)
        .map(|j| {
            let theta = phase + 2.0 * PI * j as f64 / count as f64 + rng.random_range(-0.3..0.3);
            let radius = rng.random_range(0.35..0.55);
            Cusp {
                row: tooth_row + radius * half_rows * theta.sin(),
                col: tooth_col + radius * half_cols * theta.cos(),
                amplitude: rng.random_range(amplitude.0..amplitude.1),
                sigma: sigma_base * rng.random_range(0.85..1.15),
            }
        })
        .collect()
}

fn neighbor_tooth(rng: &mut ChaCha8Rng, s: f64, row: f64, col: f64, half_cols: f64) -> Tooth {
    let half_rows = 0.22 * s * rng.random_range(0.94..1.06);
    let count = rng.random_range(2..=4);
    let cusps = ring_cusps(rng, row, col, half_rows, half_cols, count, (5.0, 10.0));
    Tooth {
        row,
        col,
        half_rows,
        half_cols,
        height: rng.random_range(82.0..100.0),
        cusps,
    }
}

/// Per-pixel fields of one synthesized scene, row-major, levels unless noted.
struct Scene {
    prepared: Vec<f64>,
    opposing: Vec<f64>,
    natural_crown: Vec<f64>,
    site: Vec<bool>,
    /// Weight of the opposing-tooth shift over the site, in `[0, 1]`.
    shift_weight: Vec<f64>,
}

/// Generates one restoration case. Deterministic in `(config, seed)`.
pub fn synth_case(config: &SynthConfig, seed: u64) -> Result<Case> {
    config.validate()?;
    let n = config.raster_size;
    let gamma = config.gamma as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let scene = build_scene(config, &mut rng)?;
    let Scene {
        prepared,
        opposing: opposing0,
        natural_crown,
        site,
        shift_weight,
    } = scene;

    let both: Vec<bool> = prepared
        .iter()
        .zip(&opposing0)
        .map(|(&x, &o)| x > 0.0 && o > 0.0)
        .collect();

    // Bite registration: the closest neighbour contact sets the jaw separation.
    let neighbor_clearance = rng.random_range(
        config.neighbor_clearance_mm[0] as f64..=config.neighbor_clearance_mm[1] as f64,
    );
    let closest = (0..n * n)
        .filter(|&i| both[i] && !site[i])
        .map(|i| prepared[i] + opposing0[i])
        .fold(f64::INFINITY, f64::min);
    if !closest.is_finite() {
        return Err(Error::InvalidConfig("jaws do not overlap outside the site".into()));
    }
    let separation = closest - neighbor_clearance / gamma;

    // Shift the opposing tooth over the site so the unconstrained crown has the
    // sampled clearance, within the limits that keep every raster valid.
    let target = rng.random_range(
        config.natural_clearance_mm[0] as f64..=config.natural_clearance_mm[1] as f64,
    );
    let site_idx: Vec<usize> = (0..n * n).filter(|&i| site[i]).collect();
    let stump_margin = (config.min_gt_clearance as f64 + 0.5) / gamma;
    let mut shift_hi = f64::INFINITY;
    let mut shift_lo = f64::NEG_INFINITY;
    for &i in &site_idx {
        let b = shift_weight[i];
        if b <= 0.0 {
            continue;
        }
        let room_to_stump = prepared[i] + opposing0[i] - separation - stump_margin;
        shift_hi = shift_hi.min(room_to_stump / b).min((opposing0[i] - 1.0) / b);
        shift_lo = shift_lo.max(-(MAX_LEVEL as f64 - 1.0 - opposing0[i]) / b);
    }
    let clearance = |shift: f64| -> f64 {
        site_idx
            .iter()
            .map(|&i| natural_crown[i] + opposing0[i] - shift * shift_weight[i] - separation)
            .fold(f64::INFINITY, f64::min)
            * gamma
    };
    let shift = if shift_lo > shift_hi {
        shift_hi
    } else if clearance(shift_lo) <= target {
        shift_lo
    } else if clearance(shift_hi) >= target {
        shift_hi
    } else {
        let (mut lo, mut hi) = (shift_lo, shift_hi);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if clearance(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let opposing: Vec<f64> = opposing0
        .iter()
        .zip(&shift_weight)
        .map(|(&o, &b)| if o > 0.0 { o - shift * b } else { 0.0 })
        .collect();

    let to_f32 = |v: &[f64]| -> Vec<f32> { v.iter().map(|&x| x as f32).collect() };
    let prepared32 = to_f32(&prepared);
    let opposing32 = to_f32(&opposing);

    let gap: Vec<f32> = (0..n * n)
        .map(|i| {
            if both[i] {
                (gamma * (prepared[i] + opposing[i] - separation)).max(0.0) as f32
            } else {
                0.0
            }
        })
        .collect();

    // Clamp the design against the opposing jaw, verified with the same f32
    // arithmetic used by gap reconstruction.
    let min_clear = config.min_gt_clearance;
    let mut crown = vec![0.0f32; n * n];
    for &i in &site_idx {
        let floor = separation - opposing[i] + min_clear as f64 / gamma;
        let mut y = natural_crown[i].max(floor).clamp(1.0, MAX_LEVEL as f64) as f32;
        while gap[i] + config.gamma * (y - prepared32[i]) < min_clear {
            y = y.next_up();
        }
        if !(y < prepared32[i]) {
            return Err(Error::InvalidConfig(format!(
                "crown does not fit above the stump (seed {seed}); increase opposing clearance"
            )));
        }
        crown[i] = y;
    }

    let case = Case {
        case_id: format!("case-{seed:016x}"),
        seed,
        config_hash: config.config_hash(),
        gamma: config.gamma,
        prepared: DepthRaster::new(n, n, prepared32)?,
        opposing: DepthRaster::new(n, n, opposing32)?,
        gap: GapRaster::new(n, n, gap, both)?,
        crown_gt: DepthRaster::new(n, n, crown)?,
    };
    Ok(case)
}

fn build_scene(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Scene> {
    let n = config.raster_size;
    let s = n as f64;
    let noise_amp = config.surface_noise_amplitude as f64;

    // Lower jaw.
    let band_row = s / 2.0 + rng.random_range(-0.03..0.03) * s;
    let band_half = 0.36 * s;
    let gum = rng.random_range(194.0..206.0);

    let site_half_cols = config.site_scale as f64 * s * rng.random_range(0.92..1.08);
    let site = Tooth {
        row: band_row + rng.random_range(-0.02..0.02) * s,
        col: s / 2.0 + rng.random_range(-0.03..0.03) * s,
        half_rows: 0.24 * s * rng.random_range(0.94..1.06),
        half_cols: site_half_cols.max(0.0),
        height: 0.0,
        cusps: Vec::new(),
    };
    let site_mask: Vec<bool> = (0..n * n)
        .map(|i| {
            let (r, c) = pixel_center(i, n);
            site.half_cols > 0.0 && site.rho(r, c) < 1.0
        })
        .collect();
    if !site_mask.iter().any(|&m| m) {
        return Err(Error::EmptyStump);
    }

    let mut neighbors: Vec<(i32, Tooth)> = Vec::new();
    let mut reach = [site.half_cols; 2];
    for j in 0..config.n_neighbor_teeth {
        let side = if j % 2 == 0 { 1.0 } else { -1.0 };
        let k = j % 2;
        let half_cols = 0.15 * s * rng.random_range(0.9..1.1);
        let gap = rng.random_range(0.5..1.2);
        let col = site.col + side * (reach[k] + gap + half_cols);
        reach[k] += gap + 2.0 * half_cols;
        let row = band_row + rng.random_range(-0.02..0.02) * s;
        neighbors.push((side as i32, neighbor_tooth(rng, s, row, col, half_cols)));
    }

    let floor = (gum + rng.random_range(12.0f64..20.0)).min(MAX_LEVEL as f64 - 10.0);
    let stump_height = rng.random_range(22.0..38.0);

    // Designed crown: crest interpolated between the nearest neighbours.
    let nearest = |side: i32| {
        neighbors
            .iter()
            .find(|(sd, _)| *sd == side)
            .map(|(_, t)| gum - t.height)
    };
    let fallback = gum - rng.random_range(82.0..100.0);
    let crest_left = nearest(-1).or(nearest(1)).unwrap_or(fallback);
    let crest_right = nearest(1).or(nearest(-1)).unwrap_or(fallback);
    let [cmin, cmax] = config.cusp_count_range;
    let cusp_count = rng.random_range(cmin..=cmax);
    let crown_cusps = ring_cusps(
        rng,
        site.row,
        site.col,
        site.half_rows,
        site.half_cols,
        cusp_count,
        (10.0, 18.0),
    );
    let fossa_depth = rng.random_range(4.0..8.0);

    // Upper jaw: teeth offset by roughly half a tooth from the lower ones.
    let up_band_row = band_row + rng.random_range(-0.02..0.02) * s;
    let up_gum = rng.random_range(194.0..206.0);
    let pitch = 0.32 * s;
    let offset = rng.random_range(0.3..0.5) * pitch * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let mut upper = Vec::new();
    for m in -3..=3 {
        let half_cols = 0.16 * s * rng.random_range(0.9..1.1);
        let col = site.col + offset + m as f64 * pitch;
        let row = up_band_row + rng.random_range(-0.02..0.02) * s;
        let half_rows = 0.22 * s * rng.random_range(0.94..1.06);
        let count = rng.random_range(3..=4);
        let cusps = ring_cusps(rng, row, col, half_rows, half_cols, count, (6.0, 12.0));
        upper.push(Tooth {
            row,
            col,
            half_rows,
            half_cols,
            height: rng.random_range(82.0..100.0),
            cusps,
        });
    }

    let mut prepared = vec![0.0; n * n];
    let mut opposing = vec![0.0; n * n];
    let mut natural_crown = vec![0.0; n * n];
    let mut shift_weight = vec![0.0; n * n];
    for i in 0..n * n {
        let (r, c) = pixel_center(i, n);
        let mut noise = || rng.random_range(-1.0..=1.0) * noise_amp;

        if (r - band_row).abs() <= band_half {
            let level = if site_mask[i] {
                let rho = site.rho(r, c);
                floor - stump_height * dome(rho / 0.7)
            } else {
                neighbors
                    .iter()
                    .filter_map(|(_, t)| t.surface(gum, r, c))
                    .fold(gum, f64::min)
            };
            prepared[i] = (level + noise()).clamp(1.0, MAX_LEVEL as f64);
        }

        if (r - up_band_row).abs() <= band_half {
            let level = upper
                .iter()
                .filter_map(|t| t.surface(up_gum, r, c))
                .fold(up_gum, f64::min);
            opposing[i] = (level + noise()).clamp(1.0, MAX_LEVEL as f64);
        }

        if site_mask[i] {
            let rho = site.rho(r, c);
            let t = ((c - (site.col - site.half_cols)) / (2.0 * site.half_cols)).clamp(0.0, 1.0);
            let crest = crest_left * (1.0 - t) + crest_right * t;
            let fossa = fossa_depth * (-(rho * rho) / 0.08).exp();
            let relief = cusp_sum(&crown_cusps, r, c) * taper(rho);
            natural_crown[i] = gum - (gum - crest) * dome(rho) - relief + fossa + noise();
            shift_weight[i] = taper(rho).powf(1.5);
        }
    }

    Ok(Scene {
        prepared,
        opposing,
        natural_crown,
        site: site_mask,
        shift_weight,
    })
}

fn pixel_center(i: usize, n: usize) -> (f64, f64) {
    ((i / n) as f64 + 0.5, (i % n) as f64 + 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gapgeom::{reconstruct_gap, GammaScale};

    #[test]
    fn deterministic() {
        let cfg = SynthConfig::default();
        assert_eq!(synth_case(&cfg, 7).unwrap(), synth_case(&cfg, 7).unwrap());
        assert_ne!(synth_case(&cfg, 7).unwrap(), synth_case(&cfg, 8).unwrap());
    }

    #[test]
    fn case_invariants_hold() {
        for cfg in [SynthConfig::default(), SynthConfig::hard()] {
            for seed in 0..20 {
                let case = synth_case(&cfg, seed).unwrap();
                case.validate(cfg.min_gt_clearance).unwrap();
            }
        }
    }

    #[test]
    fn clearance_oracle_per_pixel() {
        let cfg = SynthConfig::default();
        let case = synth_case(&cfg, 3).unwrap();
        let g = cfg.gamma as f64;
        let site = case.site_mask();
        for i in 0..site.len() {
            if site[i] {
                let f = case.gap.values()[i] as f64
                    + g * (case.crown_gt.values()[i] as f64 - case.prepared.values()[i] as f64);
                assert!(f >= cfg.min_gt_clearance as f64 - 1e-6, "pixel {i}: {f}");
            }
        }
        let f = reconstruct_gap(&case.gap, &case.prepared, &case.crown_gt, GammaScale::default()).unwrap();
        assert_eq!(f.valid_count(), site.iter().filter(|&&m| m).count());
    }

    #[test]
    fn stump_lies_below_crown() {
        let case = synth_case(&SynthConfig::default(), 11).unwrap();
        for ((&x, &y), s) in case
            .prepared
            .values()
            .iter()
            .zip(case.crown_gt.values())
            .zip(case.site_mask())
        {
            if s {
                assert!(y < x, "crown level {y} not above stump {x}");
            }
        }
    }

    #[test]
    fn rejects_empty_stump_and_bad_configs() {
        let cfg = SynthConfig {
            site_scale: 0.0,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_case(&cfg, 1), Err(Error::EmptyStump)));
        let cfg = SynthConfig {
            raster_size: 16,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_case(&cfg, 1), Err(Error::InvalidConfig(_))));
        let cfg = SynthConfig {
            cusp_count_range: [1, 3],
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SynthConfig {
            min_gt_clearance: -0.1,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn supports_256() {
        let cfg = SynthConfig {
            raster_size: 256,
            ..SynthConfig::default()
        };
        let case = synth_case(&cfg, 5).unwrap();
        assert_eq!(case.dims(), (256, 256));
        case.validate(cfg.min_gt_clearance).unwrap();
    }
}

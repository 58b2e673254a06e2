//! Quality, penetration and contact-point metrics, per case and per corpus.

use serde::{Deserialize, Serialize};

use crate::dataset::{Case, DepthRaster, MAX_LEVEL};
use crate::gapgeom::{critical_region, penetration_stats, reconstruct_gap, CriticalMask, PenetrationReport};
use crate::{Error, Result};

/// Default boundary matching tolerance, pixels.
pub const DEFAULT_BOUNDARY_TOLERANCE: f64 = 2.0;
/// Critical pixels closer than this (Euclidean, pixels) share a cluster.
pub const CLUSTER_DISTANCE: f64 = 2.0;

fn check_dims(a: &DepthRaster, b: &DepthRaster) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: b.dims(),
            found: a.dims(),
        });
    }
    Ok(())
}

/// Root-mean-square level difference over the ground-truth crown `{y > 0}`.
pub fn rmse_crown(y_hat: &DepthRaster, y: &DepthRaster) -> Result<f64> {
    check_dims(y_hat, y)?;
    let (mut sum, mut n) = (0.0f64, 0usize);
    for (&p, &t) in y_hat.values().iter().zip(y.values()) {
        if t > 0.0 {
            let e = p as f64 - t as f64;
            sum += e * e;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyRegion);
    }
    Ok((sum / n as f64).sqrt())
}

/// Intersection over union of the supports. Two empty supports score 1.
pub fn iou(y_hat: &DepthRaster, y: &DepthRaster) -> Result<f64> {
    check_dims(y_hat, y)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in y_hat.values().iter().zip(y.values()) {
        let (a, b) = (p > 0.0, t > 0.0);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mask pixels with at least one 4-neighbour outside the mask (or the
/// raster), which yields 8-connected contours.
pub fn boundary_pixels(width: usize, height: usize, mask: &[bool]) -> Vec<(usize, usize)> {
    let inside = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height && mask[y as usize * width + x as usize]
    };
    let mut out = Vec::new();
    for y in 0..height {
        for x in 0..width {
            if !mask[y * width + x] {
                continue;
            }
            let (xi, yi) = (x as isize, y as isize);
            if !(inside(xi - 1, yi) && inside(xi + 1, yi) && inside(xi, yi - 1) && inside(xi, yi + 1)) {
                out.push((x, y));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

fn matched_fraction(from: &[(usize, usize)], to: &[(usize, usize)], tolerance: f64) -> f64 {
    let t2 = tolerance * tolerance;
    let hits = from
        .iter()
        .filter(|&&(x, y)| {
            to.iter().any(|&(u, v)| {
                let dx = x as f64 - u as f64;
                let dy = y as f64 - v as f64;
                dx * dx + dy * dy <= t2
            })
        })
        .count();
    hits as f64 / from.len() as f64
}

/// Boundary precision, recall and F-measure. A boundary pixel counts as
/// matched when the other contour has a pixel within `tolerance`.
pub fn boundary_prf(y_hat: &DepthRaster, y: &DepthRaster, tolerance: f64) -> Result<BoundaryScore> {
    check_dims(y_hat, y)?;
    if !(tolerance >= 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be >= 0, got {tolerance}")));
    }
    let (w, h) = y.dims();
    let pred = boundary_pixels(w, h, &y_hat.surface_mask());
    let gt = boundary_pixels(w, h, &y.surface_mask());
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let precision = matched_fraction(&pred, &gt, tolerance);
    let recall = matched_fraction(&gt, &pred, tolerance);
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(BoundaryScore { precision, recall, f })
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Connected components of a pixel mask where pixels within Euclidean
/// distance [`CLUSTER_DISTANCE`] are adjacent.
pub fn count_clusters(width: usize, height: usize, mask: &[bool]) -> usize {
    let mut uf = UnionFind::new(width * height);
    let r = CLUSTER_DISTANCE as isize;
    let r2 = CLUSTER_DISTANCE * CLUSTER_DISTANCE;
    for y in 0..height {
        for x in 0..width {
            if !mask[y * width + x] {
                continue;
            }
            for dy in 0..=r {
                for dx in -r..=r {
                    if (dy == 0 && dx <= 0) || ((dx * dx + dy * dy) as f64) > r2 {
                        continue;
                    }
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || nx as usize >= width || ny as usize >= height {
                        continue;
                    }
                    let j = ny as usize * width + nx as usize;
                    if mask[j] {
                        uf.union(y * width + x, j);
                    }
                }
            }
        }
    }
    (0..width * height)
        .filter(|&i| mask[i] && uf.find(i) == i)
        .count()
}

pub fn contact_clusters(mask: &CriticalMask) -> usize {
    count_clusters(mask.width, mask.height, &mask.mask)
}

/// Root-mean-square distance of the critical pixels from their centroid.
pub fn spread(mask: &CriticalMask) -> Result<f64> {
    spread_of(&mask.coordinates())
}

pub fn spread_of(points: &[(usize, usize)]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    let ss: f64 = points
        .iter()
        .map(|&(x, y)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2))
        .sum();
    Ok((ss / n).sqrt())
}

/// Relative deviation `(value − ideal) / ideal`.
pub fn deviation(value: f64, ideal: f64) -> Result<f64> {
    if ideal == 0.0 || !ideal.is_finite() {
        return Err(Error::InvalidConfig(format!("ideal value must be finite and nonzero, got {ideal}")));
    }
    Ok((value - ideal) / ideal)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// Levels.
    pub rmse: f64,
    /// RMSE divided by the level range (255).
    pub rmse_normalized: f64,
    pub iou: f64,
    pub boundary_precision: f64,
    pub boundary_recall: f64,
    pub boundary_f: f64,
}

pub fn quality_report(y_hat: &DepthRaster, y: &DepthRaster, tolerance: f64) -> Result<QualityReport> {
    let rmse = rmse_crown(y_hat, y)?;
    let iou = iou(y_hat, y)?;
    let b = match boundary_prf(y_hat, y, tolerance) {
        Ok(b) => b,
        // an empty prediction matches nothing
        Err(Error::EmptyRegion) => BoundaryScore {
            precision: 0.0,
            recall: 0.0,
            f: 0.0,
        },
        Err(e) => return Err(e),
    };
    Ok(QualityReport {
        rmse,
        rmse_normalized: rmse / MAX_LEVEL as f64,
        iou,
        boundary_precision: b.precision,
        boundary_recall: b.recall,
        boundary_f: b.f,
    })
}

/// Reference contact statistics, taken from designed crowns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdealContacts {
    pub n_clusters: f64,
    pub spread: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactReport {
    pub n_clusters: usize,
    /// Pixels.
    pub spread: f64,
    pub deviation_nc: f64,
    pub deviation_spread: f64,
    /// Critical-region threshold, millimetres.
    pub threshold: f64,
}

pub fn contact_report(mask: &CriticalMask, ideal: &IdealContacts) -> Result<ContactReport> {
    let n_clusters = contact_clusters(mask);
    let spread = spread(mask)?;
    Ok(ContactReport {
        n_clusters,
        spread,
        deviation_nc: deviation(n_clusters as f64, ideal.n_clusters)?,
        deviation_spread: deviation(spread, ideal.spread)?,
        threshold: mask.threshold as f64,
    })
}

/// Mean cluster count and spread of the designed crowns' critical regions.
pub fn ideal_contacts(cases: &[Case]) -> Result<IdealContacts> {
    if cases.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (mut nc, mut sp) = (0.0, 0.0);
    for case in cases {
        let f = reconstruct_gap(&case.gap, &case.prepared, &case.crown_gt, case.scale())?;
        let mask = critical_region(&f)?;
        nc += contact_clusters(&mask) as f64;
        sp += spread(&mask)?;
    }
    let n = cases.len() as f64;
    Ok(IdealContacts {
        n_clusters: nc / n,
        spread: sp / n,
    })
}

/// Metrics of one generated crown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    /// Number of generated crown pixels.
    pub crown_pixels: usize,
    /// Absent when the generated crown is empty.
    pub penetration: Option<PenetrationReport>,
    /// Absent when the crown is too small for a critical region.
    pub contact: Option<ContactReport>,
    /// Only computed on splits where the designed crown serves as reference.
    pub quality: Option<QualityReport>,
}

pub fn evaluate_case(
    case: &Case,
    y_hat: &DepthRaster,
    ideal: &IdealContacts,
    with_quality: bool,
    tolerance: f64,
) -> Result<CaseReport> {
    let f = reconstruct_gap(&case.gap, &case.prepared, y_hat, case.scale())?;
    let crown_pixels = f.valid_count();
    let penetration = match penetration_stats(&f) {
        Ok(p) => Some(p),
        Err(Error::EmptyRegion) => None,
        Err(e) => return Err(e),
    };
    let contact = match critical_region(&f) {
        Ok(mask) => Some(contact_report(&mask, ideal)?),
        Err(Error::EmptyRegion | Error::TooFewPixels { .. }) => None,
        Err(e) => return Err(e),
    };
    let quality = if with_quality {
        Some(quality_report(y_hat, &case.crown_gt, tolerance)?)
    } else {
        None
    };
    Ok(CaseReport {
        case_id: case.case_id.clone(),
        crown_pixels,
        penetration,
        contact,
        quality,
    })
}

/// Corpus-level aggregation. Failure-conditional means are absent when no
/// case fails; quality and contact means are absent when no case has them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub n_cases: usize,
    pub n_failures: usize,
    /// Cases whose generated crown was empty; they count as non-failing.
    pub n_empty: usize,
    pub penetration_rate: f64,
    pub mean_max_penetration: Option<f64>,
    pub mean_penetration_area: Option<f64>,
    pub mean_rmse: Option<f64>,
    pub mean_rmse_normalized: Option<f64>,
    pub mean_iou: Option<f64>,
    pub mean_boundary_precision: Option<f64>,
    pub mean_boundary_recall: Option<f64>,
    pub mean_boundary_f: Option<f64>,
    pub mean_n_clusters: Option<f64>,
    pub mean_spread: Option<f64>,
    pub mean_deviation_nc: Option<f64>,
    pub mean_deviation_spread: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn summarize(reports: &[CaseReport]) -> Result<CorpusSummary> {
    if reports.is_empty() {
        return Err(Error::EmptyInput);
    }
    let failures: Vec<&PenetrationReport> = reports
        .iter()
        .filter_map(|r| r.penetration.as_ref())
        .filter(|p| p.is_failure)
        .collect();
    let quality: Vec<&QualityReport> = reports.iter().filter_map(|r| r.quality.as_ref()).collect();
    let contact: Vec<&ContactReport> = reports.iter().filter_map(|r| r.contact.as_ref()).collect();
    Ok(CorpusSummary {
        n_cases: reports.len(),
        n_failures: failures.len(),
        n_empty: reports.iter().filter(|r| r.penetration.is_none()).count(),
        penetration_rate: failures.len() as f64 / reports.len() as f64,
        mean_max_penetration: mean(failures.iter().map(|p| p.max_penetration as f64)),
        mean_penetration_area: mean(failures.iter().map(|p| p.penetration_area as f64)),
        mean_rmse: mean(quality.iter().map(|q| q.rmse)),
        mean_rmse_normalized: mean(quality.iter().map(|q| q.rmse_normalized)),
        mean_iou: mean(quality.iter().map(|q| q.iou)),
        mean_boundary_precision: mean(quality.iter().map(|q| q.boundary_precision)),
        mean_boundary_recall: mean(quality.iter().map(|q| q.boundary_recall)),
        mean_boundary_f: mean(quality.iter().map(|q| q.boundary_f)),
        mean_n_clusters: mean(contact.iter().map(|c| c.n_clusters as f64)),
        mean_spread: mean(contact.iter().map(|c| c.spread)),
        mean_deviation_nc: mean(contact.iter().map(|c| c.deviation_nc)),
        mean_deviation_spread: mean(contact.iter().map(|c| c.deviation_spread)),
    })
}

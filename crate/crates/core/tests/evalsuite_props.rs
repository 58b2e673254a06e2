use crownfit::dataset::DepthRaster;
use crownfit::evalsuite::{
    boundary_prf, count_clusters, iou, rmse_crown, spread_of, summarize, CaseReport, QualityReport,
};
use crownfit::gapgeom::PenetrationReport;
use proptest::prelude::*;

/// Component count by repeated flooding over all pairs within distance 2.
fn closure_components(w: usize, mask: &[bool]) -> usize {
    let pts: Vec<(i64, i64)> = (0..mask.len())
        .filter(|&i| mask[i])
        .map(|i| ((i % w) as i64, (i / w) as i64))
        .collect();
    let mut label: Vec<Option<usize>> = vec![None; pts.len()];
    let mut n = 0;
    for s in 0..pts.len() {
        if label[s].is_some() {
            continue;
        }
        label[s] = Some(n);
        let mut stack = vec![s];
        while let Some(a) = stack.pop() {
            for b in 0..pts.len() {
                let (dx, dy) = (pts[a].0 - pts[b].0, pts[a].1 - pts[b].1);
                if label[b].is_none() && dx * dx + dy * dy <= 4 {
                    label[b] = Some(n);
                    stack.push(b);
                }
            }
        }
        n += 1;
    }
    n
}

fn mask_raster() -> impl Strategy<Value = (usize, usize, Vec<bool>)> {
    (1usize..=32, 1usize..=32).prop_flat_map(|(w, h)| {
        (Just(w), Just(h), proptest::collection::vec(proptest::bool::weighted(0.2), w * h))
    })
}

fn raster_from(w: usize, h: usize, mask: &[bool], level: f32) -> DepthRaster {
    DepthRaster::new(w, h, mask.iter().map(|&m| if m { level } else { 0.0 }).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn clusters_match_transitive_closure((w, h, mask) in mask_raster()) {
        prop_assert_eq!(count_clusters(w, h, &mask), closure_components(w, &mask));
    }

    #[test]
    fn iou_is_symmetric((w, h, a) in mask_raster(), seed in any::<u64>()) {
        let b: Vec<bool> = a.iter().enumerate().map(|(i, &m)| m ^ ((seed >> (i % 64)) & 1 == 1)).collect();
        let (ra, rb) = (raster_from(w, h, &a, 50.0), raster_from(w, h, &b, 80.0));
        prop_assert_eq!(iou(&ra, &rb).unwrap(), iou(&rb, &ra).unwrap());
    }

    #[test]
    fn rmse_ignores_pixels_outside_the_crown((w, h, mask) in mask_raster(), junk in 1.0f32..255.0) {
        prop_assume!(mask.iter().any(|&m| m));
        let y = raster_from(w, h, &mask, 120.0);
        let near = raster_from(w, h, &mask, 110.0);
        let noisy = DepthRaster::new(
            w,
            h,
            mask.iter().map(|&m| if m { 110.0 } else { junk }).collect(),
        )
        .unwrap();
        prop_assert_eq!(rmse_crown(&near, &y).unwrap(), rmse_crown(&noisy, &y).unwrap());
        prop_assert!((rmse_crown(&near, &y).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn boundary_scores_of_a_mask_against_itself((w, h, mask) in mask_raster(), tol in 0.0f64..4.0) {
        prop_assume!(mask.iter().any(|&m| m));
        let y = raster_from(w, h, &mask, 90.0);
        let s = boundary_prf(&y, &y, tol).unwrap();
        prop_assert_eq!((s.precision, s.recall, s.f), (1.0, 1.0, 1.0));
    }

    #[test]
    fn spread_translates_and_scales(pts in proptest::collection::vec((0usize..20, 0usize..20), 1..40), dx in 0usize..30, dy in 0usize..30, k in 1usize..5) {
        let base = spread_of(&pts).unwrap();
        let moved: Vec<_> = pts.iter().map(|&(x, y)| (x + dx, y + dy)).collect();
        let scaled: Vec<_> = pts.iter().map(|&(x, y)| (x * k, y * k)).collect();
        prop_assert!((spread_of(&moved).unwrap() - base).abs() <= 1e-9 * (1.0 + base));
        prop_assert!((spread_of(&scaled).unwrap() - k as f64 * base).abs() <= 1e-9 * (1.0 + k as f64 * base));
    }
}

fn report(id: &str, pen: Option<(f32, usize)>, rmse: f64) -> CaseReport {
    CaseReport {
        case_id: id.into(),
        crown_pixels: 30,
        penetration: Some(match pen {
            Some((m, a)) => PenetrationReport {
                is_failure: true,
                max_penetration: m,
                penetration_area: a,
            },
            None => PenetrationReport {
                is_failure: false,
                max_penetration: 0.0,
                penetration_area: 0,
            },
        }),
        contact: None,
        quality: Some(QualityReport {
            rmse,
            rmse_normalized: rmse / 255.0,
            iou: 1.0,
            boundary_precision: 1.0,
            boundary_recall: 1.0,
            boundary_f: 1.0,
        }),
    }
}

#[test]
fn one_failure_in_four() {
    let reports = vec![
        report("a", None, 1.0),
        report("b", Some((0.2, 3)), 2.0),
        report("c", None, 3.0),
        report("d", None, 6.0),
    ];
    let s = summarize(&reports).unwrap();
    assert_eq!(s.penetration_rate, 0.25);
    assert!((s.mean_max_penetration.unwrap() - 0.2).abs() < 1e-7);
    assert_eq!(s.mean_penetration_area, Some(3.0));
    assert_eq!(s.mean_rmse, Some(3.0));
    assert_eq!(s.mean_n_clusters, None);
}

#[test]
fn no_failures_leaves_conditional_means_absent() {
    let reports: Vec<_> = (0..10).map(|i| report(&i.to_string(), None, 0.0)).collect();
    let s = summarize(&reports).unwrap();
    assert_eq!(s.penetration_rate, 0.0);
    assert_eq!(s.mean_max_penetration, None);
    assert_eq!(s.mean_penetration_area, None);
}

#[test]
fn dilated_mask_within_tolerance_scores_one() {
    let (w, h) = (16, 16);
    let inner: Vec<bool> = (0..w * h).map(|i| (5..11).contains(&(i % w)) && (5..11).contains(&(i / w))).collect();
    let outer: Vec<bool> = (0..w * h).map(|i| (4..12).contains(&(i % w)) && (4..12).contains(&(i / w))).collect();
    let s = boundary_prf(&raster_from(w, h, &outer, 9.0), &raster_from(w, h, &inner, 9.0), 2.0).unwrap();
    assert_eq!((s.precision, s.recall, s.f), (1.0, 1.0, 1.0));
}

use crownfit::dataset::{synth_case, GapRaster, SynthConfig};
use crownfit::ganmodel::{total_generator_loss, HistogramLoss, Target};
use crownfit::histstat::{
    chi2_hist_loss, default_weighted_bins, masked_avg_pool, soft_histogram, soft_histogram_pullback, BinSpec,
    PoolSpec, DEFAULT_BIN_WIDTH,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Distance from `v` to the nearest kernel kink of the default bins.
fn kink_distance(v: f64, bins: &BinSpec) -> f64 {
    bins.centers().iter().map(|c| (v - c).abs()).fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn masses_sum_to_count(values in proptest::collection::vec(-0.95f64..7.95, 1..500)) {
        let h = soft_histogram(&values, &default_weighted_bins()).unwrap();
        prop_assert!((h.total() - values.len() as f64).abs() <= 1e-9 * values.len() as f64);
        prop_assert!(h.masses.iter().all(|&m| m >= 0.0));
    }

    #[test]
    fn loss_ignores_pixel_order(mut values in proptest::collection::vec(-1.0f64..2.0, 2..200), target in proptest::collection::vec(-1.0f64..2.0, 2..200), seed in any::<u64>()) {
        let bins = default_weighted_bins();
        let ht = soft_histogram(&target, &bins).unwrap();
        let a = chi2_hist_loss(&soft_histogram(&values, &bins).unwrap(), &ht, bins.weights()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..values.len()).rev() {
            values.swap(i, rng.random_range(0..=i));
        }
        let b = chi2_hist_loss(&soft_histogram(&values, &bins).unwrap(), &ht, bins.weights()).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn pullback_matches_central_differences(v in -0.95f64..1.95, up in proptest::collection::vec(-2.0f64..2.0, 90)) {
        let bins = default_weighted_bins();
        prop_assume!(kink_distance(v, &bins) >= 1e-3);
        let eps = 1e-4;
        let dot = |x: f64| {
            soft_histogram(&[x], &bins).unwrap().masses.iter().zip(&up).map(|(m, u)| m * u).sum::<f64>()
        };
        let fd = (dot(v + eps) - dot(v - eps)) / (2.0 * eps);
        let a = soft_histogram_pullback(&[v], &bins, &up).unwrap()[0];
        prop_assert!((fd - a).abs() <= 1e-3 * fd.abs().max(a.abs()).max(1e-6));
    }
}

#[test]
fn window_one_pool_is_identity() {
    let f = GapRaster::new(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], vec![true, false, true, true, true, false]).unwrap();
    let g = masked_avg_pool(&f, PoolSpec { window: 1, stride: 1 }).unwrap();
    assert_eq!(g.valid_mask(), f.valid_mask());
    assert_eq!(g.valid_values(), f.valid_values());
}

#[test]
fn pooled_center_is_window_mean() {
    let f = GapRaster::new(3, 3, (0..9).map(|v| v as f32).collect(), vec![true; 9]).unwrap();
    let g = masked_avg_pool(&f, PoolSpec::default()).unwrap();
    assert_eq!(g.get(1, 1), Some(4.0));
}

#[test]
fn default_bins_span_the_gap_range() {
    let bins = default_weighted_bins();
    assert_eq!(bins.len(), 90);
    assert!((bins.centers()[0] + 0.95).abs() < 1e-12);
    assert!((bins.centers()[89] - 7.95).abs() < 1e-9);
    assert!(bins.slopes().iter().all(|&l| (l - 1.0 / DEFAULT_BIN_WIDTH).abs() < 1e-9));
}

/// Perturbs single crown pixels of a generated crown and compares the total
/// generator loss against its analytic reconstruction gradient.
fn check_generator_loss_gradient(pool: Option<PoolSpec>) {
    let cfg = SynthConfig {
        raster_size: 32,
        ..SynthConfig::default()
    };
    let case = synth_case(&cfg, 11).unwrap();
    let target = Target::from_case(&case);
    let bins = default_weighted_bins();
    let weights = bins.weights().to_vec();
    let hist = HistogramLoss::new(bins.clone(), weights, pool, 0.002).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut y_hat = target.crown_net.clone();
    for (v, &s) in y_hat.iter_mut().zip(&target.site) {
        if s {
            let offset: f32 = rng.random_range(0.01..0.03);
            *v -= if rng.random_bool(0.5) { offset } else { -offset };
        }
    }
    let loss = |y: &[f32]| total_generator_loss(&target, y, 0.5, 100.0, Some(&hist)).unwrap();
    let grad = loss(&y_hat).grad_reconstruction;
    let eps = 2e-3f32;
    let reach = target.gap_slope() * eps as f64;
    let site: Vec<usize> = (0..y_hat.len()).filter(|&i| target.site[i]).collect();
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 25 && attempts < 10_000 {
        attempts += 1;
        let i = site[rng.random_range(0..site.len())];
        let w = target.width;
        // every pooled value touching the pixel must stay clear of the kernel kinks
        let window = pool.map_or(0, |p| p.window / 2) as isize;
        let gaps = target.gap_for(&y_hat);
        let pooled_gap = |x: isize, y: isize| -> Option<f64> {
            let (mut s, mut n) = (0.0, 0);
            for dy in -window..=window {
                for dx in -window..=window {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx < 0 || yy < 0 || xx >= w as isize || yy >= target.height as isize {
                        continue;
                    }
                    let j = yy as usize * w + xx as usize;
                    if target.site[j] {
                        s += gaps[j];
                        n += 1;
                    }
                }
            }
            (n > 0).then(|| s / n as f64)
        };
        let (px, py) = ((i % w) as isize, (i / w) as isize);
        let mut clear = true;
        for dy in -window..=window {
            for dx in -window..=window {
                if let Some(g) = pooled_gap(px + dx, py + dy) {
                    clear &= kink_distance(g, &bins) > 2.0 * reach + 1e-3;
                }
            }
        }
        if !clear {
            continue;
        }
        let mut up = y_hat.clone();
        let mut down = y_hat.clone();
        up[i] += eps;
        down[i] -= eps;
        let step = (up[i] - down[i]) as f64;
        let fd = (loss(&up).total - loss(&down).total) / step;
        let a = grad[i] as f64;
        assert!(
            (fd - a).abs() <= 1e-3 * fd.abs().max(a.abs()) + 1e-4,
            "pixel {i}: finite difference {fd}, analytic {a}"
        );
        checked += 1;
    }
    assert_eq!(checked, 25, "not enough pixels away from kinks");
}

#[test]
fn generator_loss_gradient_without_pooling() {
    check_generator_loss_gradient(None);
}

#[test]
fn generator_loss_gradient_with_pooling() {
    check_generator_loss_gradient(Some(PoolSpec::default()));
}

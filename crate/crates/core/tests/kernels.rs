use arsv_core::filters::{run_filter, FilterKind, ForecastAux, VolForecastSeries};
use arsv_core::kernels::{kernel_weights, Measure};
use arsv_core::model::{simulate_paths, MarketPath, ModelParams};

/// Forecast series carrying the latent volatility, so the kernels use the
/// true conditional cumulants.
fn latent(path: &MarketPath) -> VolForecastSeries {
    let mut s = path.sigma.clone();
    s.push(*path.sigma.last().unwrap());
    VolForecastSeries {
        sigma_hat: s,
        method: FilterKind::Kalman,
        aux: ForecastAux::Kalman {
            pred_mean: Vec::new(),
            pred_var: Vec::new(),
        },
        clamped: 0,
    }
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn factors_have_unit_mean_within_volatility_buckets() {
    let p = ModelParams::benchmark();
    let paths = simulate_paths(&p, 100.0, 12, 20_000, 31, None).unwrap();
    for measure in [Measure::Mmm, Measure::Mc] {
        // terciles of sigma at the stationary level
        let edges = [0.0, 0.012, 0.023, f64::INFINITY];
        let mut buckets = vec![Vec::new(); 3];
        for path in &paths {
            let w = kernel_weights(measure, path, &latent(path)).unwrap();
            for (t, &n) in w.factors.iter().enumerate() {
                let k = edges.windows(2).position(|e| path.sigma[t] >= e[0] && path.sigma[t] < e[1]).unwrap();
                buckets[k].push(n);
            }
        }
        for (k, b) in buckets.iter().enumerate() {
            assert!(b.len() > 1000, "bucket {k} too thin");
            let (m, se) = mean_se(b);
            assert!((m - 1.0).abs() < 4.0 * se, "{measure:?} bucket {k}: mean {m} se {se}");
        }
    }
}

#[test]
fn partial_products_have_unit_mean_and_discounted_price_is_a_martingale() {
    let p = ModelParams::benchmark();
    let paths = simulate_paths(&p, 100.0, 12, 20_000, 32, None).unwrap();
    for measure in [Measure::Mmm, Measure::Mc] {
        let weights: Vec<_> = paths
            .iter()
            .map(|path| kernel_weights(measure, path, &latent(path)).unwrap())
            .collect();
        assert!(weights.iter().all(|w| !w.negative_flag));
        for t in 1..=12 {
            let z: Vec<f64> = weights.iter().map(|w| w.cumulative[t]).collect();
            let (m, se) = mean_se(&z);
            assert!((m - 1.0).abs() < 4.0 * se, "{measure:?} t={t}: mean Z {m} se {se}");
            let zs: Vec<f64> = weights
                .iter()
                .zip(&paths)
                .map(|(w, path)| w.cumulative[t] * path.discounted(t, p.r))
                .collect();
            let (m, se) = mean_se(&zs);
            assert!((m - 100.0).abs() < 4.0 * se, "{measure:?} t={t}: mean ZS {m} se {se}");
        }
    }
}

#[test]
fn tail_products_complete_the_partial_products() {
    let p = ModelParams::benchmark();
    for path in simulate_paths(&p, 100.0, 30, 20, 33, None).unwrap() {
        for kind in [FilterKind::Kalman, FilterKind::Hlik] {
            let fc = run_filter(kind, &p, &path.s).unwrap();
            for measure in [Measure::Mmm, Measure::Mc] {
                let w = kernel_weights(measure, &path, &fc).unwrap();
                let zt = w.terminal();
                assert_eq!(w.tail_product(30).unwrap(), w.factors[29]);
                assert!((w.tail_product(1).unwrap() - zt).abs() < 1e-12 * zt.abs());
                for t in 1..=30 {
                    let lhs = w.cumulative[t - 1] * w.tail_product(t).unwrap();
                    assert!((lhs - zt).abs() < 1e-12 * zt.abs().max(1.0), "t={t}");
                }
                assert!(w.tail_product(0).is_err());
                assert!(w.tail_product(32).is_err());
            }
        }
    }
}

#[test]
fn filtered_weights_stay_close_to_unit_mean() {
    // plug-in cumulants are only approximately conditional, so the bound is loose
    let p = ModelParams::benchmark();
    let paths = simulate_paths(&p, 100.0, 12, 20_000, 34, None).unwrap();
    for kind in [FilterKind::Kalman, FilterKind::Hlik] {
        for measure in [Measure::Mmm, Measure::Mc] {
            let z: Vec<f64> = paths
                .iter()
                .map(|path| kernel_weights(measure, path, &run_filter(kind, &p, &path.s).unwrap()).unwrap().terminal())
                .collect();
            let (m, _) = mean_se(&z);
            assert!((m - 1.0).abs() < 5e-3, "{kind:?} {measure:?}: mean Z_T {m}");
        }
    }
}

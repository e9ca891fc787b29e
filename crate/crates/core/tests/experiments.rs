use approx::assert_abs_diff_eq;
use knn_scaling::bounds::fast_rate_bound;
use knn_scaling::distributions::{make_aligned, make_rotated, sample};
use knn_scaling::dominance::{probe_point, Region};
use knn_scaling::experiments::{
    bound_overlay, fit_fast_constant, plot_script, powers_of_two, prediction_map,
    prediction_map_points, scaling_scan, slope_fit, tau_map_default, write_tau_map, CurveRow,
    KRule, MapGrid, OverlayParams, Preset, ScalingCurve, ScanConfig, SlowParams,
};
use knn_scaling::knn::KnnModel;
use knn_scaling::rng::{derive_path, stream_rng};
use knn_scaling::Error;

fn aligned_preset(d: usize) -> Preset {
    Preset::Aligned { a: 2.0, b: 0.5, d }
}

fn config(preset: Preset, n_grid: Vec<usize>, k_rule: KRule, trials: usize) -> ScanConfig {
    ScanConfig {
        preset,
        n_grid,
        k_rule,
        trials,
        n_test: 500,
        master_seed: 7,
        resample: None,
    }
}

fn synthetic_curve(points: &[(usize, f64)]) -> ScalingCurve {
    ScalingCurve {
        label: "synthetic".into(),
        rows: points
            .iter()
            .map(|&(n, e)| CurveRow {
                n,
                k: n / 100 + 2,
                trials: 1,
                mean_test_error: e,
                stderr: 0.0,
                bayes_risk: 0.0,
                mean_excess: e,
                excess_stderr: 0.0,
            })
            .collect(),
    }
}

#[test]
fn k_rules() {
    assert_eq!(KRule::Affine.k_for(128), 3);
    assert_eq!(KRule::Affine.k_for(32768), 329);
    assert_eq!(KRule::FloorFrac(0.1).k_for(5), 1);
    assert_eq!(KRule::FloorFrac(0.1).k_for(2048), 204);
    assert_eq!(KRule::Fixed(9).k_for(1000), 9);
    assert!(KRule::Fixed(20).checked_k(16).is_err());
    assert_eq!(powers_of_two(7, 9), vec![128, 256, 512]);
}

#[test]
fn k_equal_n_scan_is_majority_vote() {
    let cfg = config(aligned_preset(6), vec![16], KRule::Fixed(16), 1);
    let curve = scaling_scan(&cfg).unwrap();
    assert_eq!(curve.rows.len(), 1);

    // replay the trial's stream by hand
    let dist = make_aligned(2.0, 0.5, 6).unwrap();
    let mut rng = stream_rng(derive_path(7, &[16, 0]));
    let train = dist.sample_with(16, &mut rng).unwrap();
    let test = dist.sample_with(500, &mut rng).unwrap();
    let majority = u8::from(2 * train.class_counts()[1] >= 16);
    let wrong = test.labels().iter().filter(|&&y| y != majority).count();
    assert_abs_diff_eq!(curve.rows[0].mean_test_error, wrong as f64 / 500.0, epsilon = 1e-15);
}

#[test]
fn bad_k_rule_is_a_config_error() {
    let cfg = config(aligned_preset(6), vec![16, 32], KRule::Fixed(20), 1);
    assert!(matches!(scaling_scan(&cfg), Err(Error::Config(_))));
    let cfg = config(aligned_preset(6), vec![32, 16], KRule::Affine, 1);
    assert!(matches!(scaling_scan(&cfg), Err(Error::Config(_))));
}

#[test]
fn scans_are_reproducible_to_the_byte() {
    let cfg = config(Preset::Rotated { a: 2.0, b: 0.5, d: 6, slope: 0.5 }, vec![64, 128, 256], KRule::Affine, 4);
    let bytes = |c: &ScalingCurve| {
        let mut v = Vec::new();
        c.write_csv(&mut v, &[("preset".into(), "rotated".into())]).unwrap();
        v
    };
    let a = bytes(&scaling_scan(&cfg).unwrap());
    let b = bytes(&scaling_scan(&cfg).unwrap());
    assert_eq!(a, b);
    let back = ScalingCurve::read_csv(a.as_slice(), "x").unwrap();
    assert_eq!(back.rows, scaling_scan(&cfg).unwrap().rows);
}

#[test]
fn scans_do_not_depend_on_thread_count() {
    let cfg = config(aligned_preset(6), vec![64, 128], KRule::Affine, 6);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| scaling_scan(&cfg).unwrap());
    let b = three.install(|| scaling_scan(&cfg).unwrap());
    assert_eq!(a, b);
}

#[test]
fn realizable_excess_equals_test_error() {
    let curve = scaling_scan(&config(aligned_preset(8), vec![100, 300], KRule::Affine, 5)).unwrap();
    for r in &curve.rows {
        assert_eq!(r.bayes_risk, 0.0);
        assert_abs_diff_eq!(r.mean_excess, r.mean_test_error - r.bayes_risk, epsilon = 1e-12);
        assert!(r.stderr >= 0.0 && r.excess_stderr >= 0.0);
    }
}

#[test]
fn slope_of_exact_power_laws() {
    let curve = synthetic_curve(&powers_of_two(7, 15).iter().map(|&n| (n, (n as f64).powf(-0.5))).collect::<Vec<_>>());
    let fit = slope_fit(&curve, 1 << 7, 1 << 15).unwrap();
    assert_abs_diff_eq!(fit.slope, -0.5, epsilon = 1e-12);
    assert_eq!(fit.used, 9);

    let flat = synthetic_curve(&[(100, 0.3), (200, 0.3), (400, 0.3), (800, 0.3)]);
    assert_abs_diff_eq!(slope_fit(&flat, 0, 1000).unwrap().slope, 0.0, epsilon = 1e-12);
}

#[test]
fn slope_fit_excludes_nonpositive_rows() {
    let curve = synthetic_curve(&[(100, 0.1), (200, 0.0), (400, 0.05), (800, 0.025)]);
    let fit = slope_fit(&curve, 100, 800).unwrap();
    assert_eq!((fit.used, fit.excluded), (3, 1));
    assert!(matches!(slope_fit(&curve, 100, 400), Err(Error::InsufficientData(_))));
}

#[test]
fn aligned_tau_map_has_no_negative_cells() {
    let dist = make_aligned(2.0, 0.5, 10).unwrap();
    let cells = tau_map_default(&dist, &MapGrid::over(&dist, 40, 10), 0.05, 5_000, 1).unwrap();
    assert!(cells.iter().all(|c| !matches!(c.region, Region::Negative(_))));
    assert!(cells.iter().any(|c| matches!(c.region, Region::Positive(_))));
    // mirror symmetry s₀ → −s₀
    let n1 = 10;
    for i in 0..40 {
        for j in 0..n1 {
            let (a, b) = (&cells[i * n1 + j], &cells[(39 - i) * n1 + j]);
            assert_abs_diff_eq!(a.tau, b.tau, epsilon = 1e-12);
            assert_eq!(a.region.label(), b.region.label());
        }
    }
}

#[test]
fn rotated_tau_map_negative_cells_sit_above_the_boundary_on_the_right() {
    let dist = make_rotated(2.0, 0.5, 10, 0.5).unwrap();
    let grid = MapGrid::over(&dist, 60, 20);
    let cells = tau_map_default(&dist, &grid, 0.05, 5_000, 1).unwrap();
    let negatives: Vec<_> = cells.iter().filter(|c| matches!(c.region, Region::Negative(_))).collect();
    assert!(!negatives.is_empty());
    for c in &negatives {
        let [x1, x2] = c.s;
        // between x₁ = 0 and x₂ = x₁/2, on either side
        assert!(x1 * (x2 - 0.5 * x1) > 0.0 && x1.signum() == x2.signum(), "{:?}", c.s);
    }
    // point symmetry s → −s swaps the classes and keeps τ
    let n = cells.len();
    for (i, c) in cells.iter().enumerate() {
        let m = &cells[n - 1 - i];
        assert_abs_diff_eq!(c.tau, m.tau, epsilon = 1e-5);
        assert_eq!(c.theta, 1 - m.theta);
    }
    let mut csv = Vec::new();
    write_tau_map(&cells, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("s0,s1,theta,tau,sd_holds,region\n"));
    assert!(text.contains(",negative\n"));
}

#[test]
fn prediction_map_recovers_aligned_boundary() {
    let dist = make_aligned(2.0, 0.5, 10).unwrap();
    let cells = prediction_map(&dist, 5000, 52, 1, &MapGrid::over(&dist, 80, 20)).unwrap();
    let outside: Vec<_> = cells.iter().filter(|c| c.s[0].abs() >= 0.2).collect();
    let agree = outside.iter().filter(|c| c.agree()).count() as f64 / outside.len() as f64;
    assert!(agree > 0.95, "agreement {agree}");
}

#[test]
fn prediction_map_fails_inside_rotated_negative_wedge() {
    let dist = make_rotated(2.0, 0.5, 10, 0.5).unwrap();
    let cells = prediction_map(&dist, 5000, 52, 1, &MapGrid::over(&dist, 80, 20)).unwrap();
    // well inside {x₁/2 < x₂ < 11x₁} and its mirror
    let inside: Vec<_> = cells
        .iter()
        .filter(|c| {
            let [x1, x2] = c.s;
            let (x1, x2) = if x1 < 0.0 { (-x1, -x2) } else { (x1, x2) };
            x2 > 0.5 * x1 + 0.05 && x2 < 11.0 * x1 - 0.1
        })
        .collect();
    assert!(!inside.is_empty());
    let agree = inside.iter().filter(|c| c.agree()).count() as f64 / inside.len() as f64;
    assert!(agree < 0.6, "agreement {agree}");
}

#[test]
fn one_nn_at_a_training_point_returns_its_label() {
    let dist = make_aligned(2.0, 0.5, 6).unwrap();
    let train = sample(&dist, 50, 3).unwrap();
    let model = KnnModel::fit(train.clone());
    for i in [0, 17, 49] {
        let cell = prediction_map_points(&model, &dist, 1, &[train.row(i).to_vec()]).unwrap();
        assert_eq!(cell[0].prediction, train.labels()[i]);
    }
    let probe = probe_point(&dist, [1.0, 0.0]);
    assert_eq!(prediction_map_points(&model, &dist, 1, &[probe]).unwrap()[0].bayes, 1);
}

#[test]
fn overlay_matches_fast_rate_pointwise() {
    let curve = synthetic_curve(&powers_of_two(7, 15).iter().map(|&n| (n, 0.1)).collect::<Vec<_>>());
    let params = OverlayParams {
        d: 10,
        tau: 1.0,
        c: 1.0,
        slow: Some(SlowParams {
            gamma: 0.1,
            beta: 1.0,
            beta_prime: 1.0,
            m: 1.0,
            c: 1.0,
        }),
    };
    let rows = bound_overlay(&curve, &params).unwrap();
    for o in &rows {
        assert_eq!(o.fast_rate, fast_rate_bound(o.row.k, 10, 1.0, 1.0).unwrap().value);
        assert!(o.slow_rate.is_some());
    }
}

#[test]
fn overlay_is_nonincreasing_for_proportional_k() {
    let mut curve = synthetic_curve(&powers_of_two(4, 16).iter().map(|&n| (n, 0.1)).collect::<Vec<_>>());
    curve.rows.iter_mut().for_each(|r| r.k = KRule::FloorFrac(0.1).k_for(r.n));
    let rows = bound_overlay(&curve, &OverlayParams { d: 10, tau: 1.0, c: 1.0, slow: None }).unwrap();
    assert!(rows.windows(2).all(|w| w[1].fast_rate <= w[0].fast_rate));
}

#[test]
fn fitted_fast_constant_is_positive_on_aligned() {
    let cfg = config(aligned_preset(10), powers_of_two(8, 12), KRule::Affine, 4);
    let curve = scaling_scan(&cfg).unwrap();
    let c = fit_fast_constant(&curve, 10, 1.0).unwrap();
    assert!(c > 0.0);
    let rows = bound_overlay(&curve, &OverlayParams { d: 10, tau: 1.0, c, slow: None }).unwrap();
    assert!(rows.iter().all(|o| o.fast_rate >= o.row.mean_excess - 1e-12));
}

#[test]
fn plot_script_is_log_log() {
    let s = plot_script("curve.csv", "aligned", "mean_excess");
    assert!(s.contains("set logscale xy"));
    assert!(s.contains("'curve.csv'"));
    assert!(s.contains("using 1:7:8 with yerrorbars"));
}

fn scan_d(preset: Preset, k_rule: KRule, lo: u32, hi: u32) -> ScalingCurve {
    let mut cfg = config(preset, powers_of_two(lo, hi), k_rule, 10);
    cfg.n_test = 1000;
    scaling_scan(&cfg).unwrap()
}

fn rotated(d: usize) -> Preset {
    Preset::Rotated { a: 2.0, b: 0.5, d, slope: 0.5 }
}

#[test]
fn k_rule_choice_keeps_the_aligned_rate() {
    let a = scan_d(aligned_preset(10), KRule::FloorFrac(0.1), 9, 13);
    let b = scan_d(aligned_preset(10), KRule::Affine, 9, 13);
    let (fa, fb) = (slope_fit(&a, 1 << 9, 1 << 13).unwrap(), slope_fit(&b, 1 << 9, 1 << 13).unwrap());
    let se = (fa.stderr.powi(2) + fb.stderr.powi(2)).sqrt();
    assert!((fa.slope - fb.slope).abs() <= 3.0 * se, "{fa:?} vs {fb:?}");
}

#[test]
#[ignore = "levels differ: larger k gives roughly half the error at every n"]
fn k_rule_choice_keeps_the_aligned_levels() {
    let a = scan_d(aligned_preset(10), KRule::FloorFrac(0.1), 7, 14);
    let b = scan_d(aligned_preset(10), KRule::Affine, 7, 14);
    for (x, y) in a.rows.iter().zip(&b.rows) {
        let se = (x.excess_stderr.powi(2) + y.excess_stderr.powi(2)).sqrt();
        assert!((x.mean_excess - y.mean_excess).abs() <= 3.0 * se, "n {}: {} vs {}", x.n, x.mean_excess, y.mean_excess);
    }
}

#[test]
fn aligned_exponent_does_not_depend_on_dimension() {
    let fits: Vec<_> = [10, 20, 40]
        .iter()
        .map(|&d| slope_fit(&scan_d(aligned_preset(d), KRule::Affine, 8, 13), 1 << 8, 1 << 13).unwrap())
        .collect();
    for i in 0..3 {
        for j in i + 1..3 {
            let se = (fits[i].stderr.powi(2) + fits[j].stderr.powi(2)).sqrt();
            assert!((fits[i].slope - fits[j].slope).abs() <= 2.0 * se, "{:?} vs {:?}", fits[i], fits[j]);
        }
    }
}

#[test]
fn rotated_curve_stalls_in_every_dimension() {
    for d in [10, 20, 40] {
        let c = scan_d(rotated(d), KRule::Affine, 11, 13);
        let (first, last) = (c.rows[0].mean_excess, c.rows[2].mean_excess);
        assert!(last > 0.08 && last / first > 0.6, "d {d}: {first} -> {last}");
    }
}

#[test]
#[ignore = "observed slope magnitudes grow with d over every window of 2^7..2^15"]
fn rotated_exponent_shrinks_with_dimension() {
    let s: Vec<f64> = [10, 20, 40]
        .iter()
        .map(|&d| slope_fit(&scan_d(rotated(d), KRule::Affine, 11, 15), 1 << 11, 1 << 15).unwrap().slope.abs())
        .collect();
    assert!(s[0] > s[1] && s[1] > s[2], "{s:?}");
}

use knn_scaling::special::*;
use approx::assert_abs_diff_eq;
use statrs::function::gamma::{gamma_lr, ln_gamma};

/// Independent route: term-by-term Poisson mixture with a fresh incomplete
/// gamma evaluation per term, no recurrences.
fn ncx2_cdf_direct(t: f64, k: f64, lambda: f64) -> f64 {
    let h = lambda / 2.0;
    (0..400)
        .map(|j| {
            let lw = -h + j as f64 * h.ln() - ln_gamma(j as f64 + 1.0);
            lw.exp() * gamma_lr(k / 2.0 + j as f64, t / 2.0)
        })
        .sum()
}

#[test]
fn central_case_matches_gamma() {
    for &(t, k) in &[(1.0, 1.0), (8.0, 8.0), (3.5, 5.0), (40.0, 30.0)] {
        assert_abs_diff_eq!(ncx2_cdf_pdf(t, k, 0.0).0, chi2_cdf(t, k), epsilon = 1e-13);
    }
    // chi2 with 2 dof: 1 − e^{−t/2}
    assert_abs_diff_eq!(chi2_cdf(3.0, 2.0), 1.0 - (-1.5f64).exp(), epsilon = 1e-14);
}

#[test]
fn noncentral_cdf_matches_direct_sum() {
    for &(t, k, l) in &[
        (5.0, 3.0, 2.0),
        (8.0, 8.0, 4.0),
        (30.0, 8.0, 20.0),
        (2.0, 5.0, 0.7),
        (120.0, 16.0, 90.0),
        (60.0, 3.0, 55.0),
    ] {
        let got = ncx2_cdf(t, k, l);
        let want = ncx2_cdf_direct(t, k, l);
        assert_abs_diff_eq!(got, want, epsilon = 1e-11);
    }
}

#[test]
fn noncentral_pdf_is_cdf_derivative() {
    for &(t, k, l) in &[(5.0, 3.0, 2.0), (9.0, 8.0, 4.0), (25.0, 10.0, 12.0)] {
        let h = 1e-5;
        let fd = (ncx2_cdf(t + h, k, l) - ncx2_cdf(t - h, k, l)) / (2.0 * h);
        assert_abs_diff_eq!(ncx2_pdf(t, k, l), fd, epsilon = 1e-8);
    }
}

#[test]
fn noncentral_moments_by_quadrature() {
    let (k, l) = (8.0, 4.0);
    let n = 200_000;
    let hi = 120.0;
    let dt = hi / n as f64;
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let t = (i as f64 + 0.5) * dt;
        let g = ncx2_pdf(t, k, l) * dt;
        m0 += g;
        m1 += g * t;
        m2 += g * t * t;
    }
    let (mean, var) = ncx2_moments(k, l);
    assert_abs_diff_eq!(m0, 1.0, epsilon = 1e-8);
    assert_abs_diff_eq!(m1, mean, epsilon = 1e-6);
    assert_abs_diff_eq!(m2 - m1 * m1, var, epsilon = 1e-5);
}

#[test]
fn log_derivative_central_closed_form() {
    for dof in [4u32, 8, 16, 32] {
        let m = (dof / 2 - 1) as f64;
        for &t in &[0.5, 3.0, 10.0, 40.0] {
            let v = ncx2_log_derivative(dof, 0.0, t).unwrap();
            assert_abs_diff_eq!(v, m / t - 0.5, epsilon = 1e-12);
        }
    }
}

#[test]
fn log_derivative_matches_finite_difference() {
    for &(dof, l, t) in &[(16u32, 4.0, 15.0), (8, 2.0, 6.0), (32, 8.0, 44.0), (4, 50.0, 30.0)] {
        let h = 1e-4;
        let fd = (ncx2_pdf(t + h, dof as f64, l).ln() - ncx2_pdf(t - h, dof as f64, l).ln()) / (2.0 * h);
        let v = ncx2_log_derivative(dof, l, t).unwrap();
        assert_abs_diff_eq!(v, fd, epsilon = 1e-7);
    }
}

#[test]
fn log_derivative_large_argument_is_finite() {
    let v = ncx2_log_derivative(8, 4000.0, 4100.0).unwrap();
    assert!(v.is_finite());
    let h = 1e-3;
    let fd = (ncx2_pdf(4100.0 + h, 8.0, 4000.0).ln() - ncx2_pdf(4100.0 - h, 8.0, 4000.0).ln()) / (2.0 * h);
    assert_abs_diff_eq!(v, fd, epsilon = 1e-6);
}

#[test]
fn log_derivative_rejects_bad_input() {
    assert!(ncx2_log_derivative(8, 1.0, 0.0).is_err());
    assert!(ncx2_log_derivative(8, 1.0, -1.0).is_err());
    assert!(ncx2_log_derivative(7, 1.0, 1.0).is_err());
    assert!(ncx2_log_derivative(2, 1.0, 1.0).is_err());
}

#[test]
fn table_matches_exact_cdf() {
    for &(k, l) in &[(3.0, 1.7), (8.0, 0.0), (8.0, 6.0), (38.0, 12.0)] {
        let table = Chi2CdfTable::new(k, l, 8192);
        for i in 1..400 {
            let t = i as f64 * table.t_max() / 400.0 * 0.999;
            assert_abs_diff_eq!(table.eval(t), ncx2_cdf(t, k, l), epsilon = 1e-9);
        }
        assert_eq!(table.eval(-1.0), 0.0);
        assert_eq!(table.eval(1e9), 1.0);
    }
}

#[test]
fn normal_functions() {
    assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-16);
    assert_abs_diff_eq!(normal_cdf(1.959963984540054), 0.975, epsilon = 1e-11);
    assert_abs_diff_eq!(normal_pdf(0.0), 0.3989422804014327, epsilon = 1e-15);
}

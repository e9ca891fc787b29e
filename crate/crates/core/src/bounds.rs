//! Closed-form risk bounds and numerical checks of the Gaussian-approximation
//! machinery behind them.

use rand::Rng;
use rayon::prelude::*;

use crate::distributions::{NoiseFamily, NoiseSpec, ProductDistribution};
use crate::dominance::BallProfile;
use crate::error::{invalid, Error, Result};
use crate::knn::KnnModel;
use crate::rng::{derive_seed, stream_rng};
use crate::special::{ncx2_log_derivative, ncx2_moments, ncx2_pdf, normal_cdf};
use crate::stats::{pairwise_sum, Estimate};

/// Binary relative entropy `d(p‖q)`.
pub fn binary_kl(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

/// `((1+ρ)/(2√ρ))^{−k}`, the Chernoff bound on a losing majority vote.
pub fn chernoff_vote_bound(rho: f64, k: usize) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(invalid(format!("rho must be positive, got {rho}")));
    }
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    Ok(vote_factor(rho, k))
}

/// `((t^½ + t^{−½})/2)^{−k}` for `t ∈ [0, ∞]`, with the limits 0 at both ends.
fn vote_factor(t: f64, k: usize) -> f64 {
    if t == 0.0 || t == f64::INFINITY {
        return 0.0;
    }
    let base = 0.5 * (t.sqrt() + 1.0 / t.sqrt());
    (-(k as f64) * base.ln()).exp().min(1.0)
}

/// Quadrature values of `T_k` this close to 1 are treated as exactly 1, so
/// that the indicator terms are not decided by rounding.
pub const RHO_TIE: f64 = 1e-12;

/// Both sides of the prediction bounds at one point, estimated over
/// independent training sets. Index 0 refers to the event `f̂(x) = 0`,
/// index 1 to `f̂(x) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteBattery {
    /// `E[((T∨1)^½ + (T∨1)^{−½})/2)^{−k}]` and its `T∧1` twin.
    pub prop1: [Estimate; 2],
    /// `½(1 + P[T ≤ 1])` and `½(1 + P[T ≥ 1])`.
    pub remark1: [Estimate; 2],
    /// Empirical `P[f̂(x) = θ]`.
    pub prediction: [Estimate; 2],
    /// Trials dropped because both ball masses vanished.
    pub empty_ball_trials: usize,
    pub trials: usize,
}

/// Monte Carlo estimates of every term in the prediction bounds at `x`.
pub fn vote_bound_battery(
    dist: &ProductDistribution,
    x: &[f64],
    n: usize,
    k: usize,
    n_trials: usize,
    seed: u64,
) -> Result<VoteBattery> {
    if k == 0 || k > n {
        return Err(invalid(format!("k must lie in 1..={n}, got {k}")));
    }
    if n_trials == 0 {
        return Err(invalid("n_trials must be at least 1"));
    }
    let profile = BallProfile::new(dist, x)?;
    let rows = (0..n_trials)
        .into_par_iter()
        .map(|t| -> Result<Option<[f64; 6]>> {
            let mut rng = stream_rng(derive_seed(seed, t as u64));
            let model = KnnModel::fit(dist.sample_with(n, &mut rng)?);
            let vote = model.vote_with_radius(x, k)?;
            let tk = match profile.rho(vote.next_radius) {
                Ok(v) if (v - 1.0).abs() <= RHO_TIE => 1.0,
                Ok(v) => v,
                Err(Error::EmptyBall { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let ind = |c: bool| if c { 1.0 } else { 0.0 };
            Ok(Some([
                vote_factor(tk.max(1.0), k),
                vote_factor(tk.min(1.0), k),
                0.5 * (1.0 + ind(tk <= 1.0)),
                0.5 * (1.0 + ind(tk >= 1.0)),
                ind(vote.prediction == 0),
                ind(vote.prediction == 1),
            ]))
        })
        .collect::<Result<Vec<_>>>()?;
    let kept: Vec<[f64; 6]> = rows.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::EmptyBall { radius: 0.0 });
    }
    let column = |j: usize| Estimate::from_samples(&kept.iter().map(|r| r[j]).collect::<Vec<_>>());
    Ok(VoteBattery {
        prop1: [column(0), column(1)],
        remark1: [column(2), column(3)],
        prediction: [column(4), column(5)],
        empty_ball_trials: rows.len() - kept.len(),
        trials: n_trials,
    })
}

/// `(bound0, bound1)` from the Chernoff form of the prediction bounds.
pub fn prop1_bound_mc(
    dist: &ProductDistribution,
    x: &[f64],
    n: usize,
    k: usize,
    n_trials: usize,
    seed: u64,
) -> Result<(Estimate, Estimate)> {
    let b = vote_bound_battery(dist, x, n, k, n_trials, seed)?;
    Ok((b.prop1[0], b.prop1[1]))
}

/// `(half0, half1)`: the coin-flip form of the prediction bounds.
pub fn remark1_bounds_mc(
    dist: &ProductDistribution,
    x: &[f64],
    n: usize,
    k: usize,
    n_trials: usize,
    seed: u64,
) -> Result<(Estimate, Estimate)> {
    let b = vote_bound_battery(dist, x, n, k, n_trials, seed)?;
    Ok((b.remark1[0], b.remark1[1]))
}

/// A bound evaluated at explicit inputs and theorem constants.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub name: &'static str,
    pub inputs: Vec<(&'static str, f64)>,
    pub constants: Vec<(&'static str, f64)>,
    /// The formula's value before clamping.
    pub raw: f64,
    /// `raw` clamped into `[0, 1]` for upper bounds; `raw` itself for lower bounds.
    pub value: f64,
    /// The upper bound exceeded 1 and was clamped.
    pub clamped: bool,
    /// The lower bound is `≤ 0` and says nothing.
    pub vacuous: bool,
}

/// `2e^{−k/6} + e^{−cτ²k/d}`, clamped to 1.
pub fn fast_rate_bound(k: usize, d: usize, tau: f64, c: f64) -> Result<BoundReport> {
    if k == 0 || d == 0 {
        return Err(invalid("k and d must be at least 1"));
    }
    if !(tau >= 0.0) || !(c > 0.0) {
        return Err(invalid(format!("need tau >= 0 and c > 0, got tau={tau}, c={c}")));
    }
    let (kf, df) = (k as f64, d as f64);
    let raw = 2.0 * (-kf / 6.0).exp() + (-c * tau * tau * kf / df).exp();
    Ok(BoundReport {
        name: "fast_rate",
        inputs: vec![("k", kf), ("d", df), ("tau", tau)],
        constants: vec![("c", c)],
        raw,
        value: raw.min(1.0),
        clamped: raw > 1.0,
        vacuous: raw >= 1.0,
    })
}

/// `½ − n·exp(−c·d·min(γ²/(βM⁸), γ/(β′M⁴)))`, reported unclamped.
///
/// Membership of γ in its admissible interval is the caller's responsibility.
pub fn slow_rate_bound(
    n: usize,
    d: usize,
    gamma: f64,
    beta: f64,
    beta_prime: f64,
    m: f64,
    c: f64,
) -> Result<BoundReport> {
    for (name, v) in [("gamma", gamma), ("beta", beta), ("beta_prime", beta_prime), ("M", m), ("c", c)] {
        if !(v > 0.0) {
            return Err(invalid(format!("{name} must be positive, got {v}")));
        }
    }
    let rate = (gamma * gamma / (beta * m.powi(8))).min(gamma / (beta_prime * m.powi(4)));
    let raw = 0.5 - n as f64 * (-c * d as f64 * rate).exp();
    Ok(BoundReport {
        name: "slow_rate",
        inputs: vec![
            ("n", n as f64),
            ("d", d as f64),
            ("gamma", gamma),
            ("beta", beta),
            ("beta_prime", beta_prime),
            ("M", m),
        ],
        constants: vec![("c", c)],
        raw,
        value: raw,
        clamped: false,
        vacuous: raw <= 0.0,
    })
}

/// Distance between the standardized law of `‖𝒫_n(X − x)‖²` and the standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianApproxReport {
    pub d_n: usize,
    pub x: Vec<f64>,
    pub n_samples: usize,
    /// Kolmogorov distance `sup|F̂_x − Φ|`.
    pub cdf_gap: f64,
    /// `sup|f̂_x − φ̄|` over `|t| ≤ 4`, where `f̂_x` is a histogram and `φ̄` the
    /// normal density averaged over the same bin.
    pub pdf_gap: f64,
    /// Histogram bin width in standardized units, `d_n^{−1/4}`.
    pub bin_width: f64,
    pub mu_x: f64,
    pub sigma_x: f64,
    /// `‖x‖⁴_{n,4}`, `‖x‖⁶_{n,6}` and `‖x‖_{n,∞}` of the noise coordinates.
    pub norm4: f64,
    pub norm6: f64,
    pub norm_inf: f64,
}

/// Exact mean and standard deviation of `‖ξ − c‖²` for i.i.d. noise coordinates ξ.
pub fn noise_distance_moments(noise: &NoiseSpec, center: &[f64]) -> Result<(f64, f64)> {
    if center.len() != noise.d_n {
        return Err(Error::DimensionMismatch {
            expected: noise.d_n,
            got: center.len(),
        });
    }
    match noise.family {
        NoiseFamily::StandardNormal => {
            let lambda: f64 = center.iter().map(|c| c * c).sum();
            let (m, v) = ncx2_moments(noise.d_n as f64, lambda);
            Ok((m, v.sqrt()))
        }
        NoiseFamily::UniformScaled { half_width: h } => {
            let (m2, m4) = (h * h / 3.0, h.powi(4) / 5.0);
            let (mut mean, mut var) = (0.0, 0.0);
            for &c in center {
                let e2 = m2 + c * c;
                let e4 = m4 + 6.0 * c * c * m2 + c.powi(4);
                mean += e2;
                var += e4 - e2 * e2;
            }
            Ok((mean, var.sqrt()))
        }
        NoiseFamily::Custom(_) => Err(Error::Unsupported(
            "exact noise-distance moments are only available for built-in noise".into(),
        )),
    }
}

const SAMPLE_CHUNK: usize = 1 << 14;

/// Samples `‖𝒫_n(X − x)‖²`, standardizes by the exact `(μ_x, σ_x)` and
/// measures the CDF and histogram-density gaps to the standard normal.
///
/// `x` is a full point; only its noise coordinates `x[2..]` matter.
pub fn berry_esseen_gap(noise: &NoiseSpec, x: &[f64], n_samples: usize, seed: u64) -> Result<GaussianApproxReport> {
    if n_samples < 10_000 {
        return Err(invalid(format!("need at least 10000 samples, got {n_samples}")));
    }
    if x.len() != noise.d_n + 2 {
        return Err(Error::DimensionMismatch {
            expected: noise.d_n + 2,
            got: x.len(),
        });
    }
    let center = &x[2..];
    let (mu, sigma) = noise_distance_moments(noise, center)?;
    let chunks = n_samples.div_ceil(SAMPLE_CHUNK);
    let mut z: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|ci| {
            let mut rng = stream_rng(derive_seed(seed, ci as u64));
            let len = SAMPLE_CHUNK.min(n_samples - ci * SAMPLE_CHUNK);
            (0..len)
                .map(|_| {
                    let v: f64 = center
                        .iter()
                        .map(|c| {
                            let t = noise.sample_coordinate(&mut rng) - c;
                            t * t
                        })
                        .sum();
                    (v - mu) / sigma
                })
                .collect::<Vec<_>>()
        })
        .collect();
    z.par_sort_unstable_by(f64::total_cmp);

    let n = z.len() as f64;
    let cdf_gap = z
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let phi = normal_cdf(t);
            (phi - i as f64 / n).abs().max(((i + 1) as f64 / n - phi).abs())
        })
        .reduce(|| 0.0, f64::max);

    let bin_width = (noise.d_n as f64).powf(-0.25);
    let bins = (8.0 / bin_width).ceil() as usize;
    let lo = -0.5 * bins as f64 * bin_width;
    let mut counts = vec![0usize; bins];
    for &t in &z {
        let b = ((t - lo) / bin_width).floor();
        if b >= 0.0 && (b as usize) < bins {
            counts[b as usize] += 1;
        }
    }
    let pdf_gap = counts
        .iter()
        .enumerate()
        .map(|(b, &c)| {
            let a = lo + b as f64 * bin_width;
            let expected = (normal_cdf(a + bin_width) - normal_cdf(a)) / bin_width;
            (c as f64 / (n * bin_width) - expected).abs()
        })
        .fold(0.0, f64::max);

    Ok(GaussianApproxReport {
        d_n: noise.d_n,
        x: x.to_vec(),
        n_samples,
        cdf_gap,
        pdf_gap,
        bin_width,
        mu_x: mu,
        sigma_x: sigma,
        norm4: center.iter().map(|c| c.powi(4)).sum(),
        norm6: center.iter().map(|c| c.powi(6)).sum(),
        norm_inf: center.iter().fold(0.0, |m, c| m.max(c.abs())),
    })
}

/// `g′(t)/g(t)` of the noncentral chi-square density.
pub fn noncentral_chi2_logderiv(d_n: u32, lambda: f64, t: f64) -> Result<f64> {
    ncx2_log_derivative(d_n, lambda, t)
}

/// `max |g′/g|` over `|t − μ| ≤ width`, `t > 0`, on a uniform grid of `points`.
pub fn logderiv_sup(d_n: u32, lambda: f64, width: f64, points: usize) -> Result<f64> {
    let (mu, _) = ncx2_moments(d_n as f64, lambda);
    let lo = (mu - width).max(1e-9);
    let hi = mu + width;
    let mut best: f64 = 0.0;
    for i in 0..points {
        let t = lo + (hi - lo) * i as f64 / (points - 1).max(1) as f64;
        best = best.max(ncx2_log_derivative(d_n, lambda, t)?.abs());
    }
    Ok(best)
}

/// `∫g` for the noncentral chi-square density by composite Simpson.
pub fn ncx2_density_mass(dof: f64, lambda: f64) -> f64 {
    let (mu, var) = ncx2_moments(dof, lambda);
    let hi = mu + 40.0 * var.sqrt() + 40.0;
    let n = 200_000;
    let h = hi / n as f64;
    let mut acc = ncx2_pdf(0.0, dof, lambda) + ncx2_pdf(hi, dof, lambda);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * ncx2_pdf(i as f64 * h, dof, lambda);
    }
    acc * h / 3.0
}

/// `min_h var[(X − h)²]`, found on a grid and by its closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticVariance {
    /// Grid-plus-golden-section minimum.
    pub minimum: f64,
    pub argmin: f64,
    /// `var(X)²·(m₄ − m₃² − 1)` with standardized moments `m₃`, `m₄`.
    pub moment_form: f64,
}

/// Raw moments `E[X^j]`, `j = 1..=4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawMoments(pub [f64; 4]);

impl RawMoments {
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        let first = xs.first().copied();
        if xs.len() < 2 || xs.iter().all(|&v| Some(v) == first) {
            return Err(Error::InsufficientData(
                "need at least two distinct sample values".into(),
            ));
        }
        let n = xs.len() as f64;
        let pow = |j: i32| pairwise_sum(&xs.iter().map(|v| v.powi(j)).collect::<Vec<_>>()) / n;
        Ok(RawMoments([pow(1), pow(2), pow(3), pow(4)]))
    }

    /// Moments of a density supported on `[lo, hi]`, by composite Simpson.
    pub fn from_density(density: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(invalid("density support must have positive length"));
        }
        let n = 1 << 16;
        let h = (hi - lo) / n as f64;
        let mut acc = [0.0; 5];
        for i in 0..=n {
            let t = lo + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let p = w * density(t);
            let mut tp = 1.0;
            for a in acc.iter_mut() {
                *a += p * tp;
                tp *= t;
            }
        }
        let mass = acc[0];
        if !(mass > 0.0) {
            return Err(Error::InsufficientData("density has no mass on its support".into()));
        }
        Ok(RawMoments([acc[1] / mass, acc[2] / mass, acc[3] / mass, acc[4] / mass]))
    }

    /// `var[(X − h)²]`, expanded in the raw moments.
    pub fn var_shifted_square(&self, h: f64) -> f64 {
        let [m1, m2, m3, m4] = self.0;
        // E(X−h)⁴ − (E(X−h)²)²
        let e4 = m4 - 4.0 * h * m3 + 6.0 * h * h * m2 - 4.0 * h.powi(3) * m1 + h.powi(4);
        let e2 = m2 - 2.0 * h * m1 + h * h;
        e4 - e2 * e2
    }

    pub fn mean(&self) -> f64 {
        self.0[0]
    }

    pub fn variance(&self) -> f64 {
        self.0[1] - self.0[0] * self.0[0]
    }

    /// `var²·(m₄ − m₃² − 1)` with standardized third and fourth moments.
    pub fn moment_form(&self) -> f64 {
        let [m1, m2, m3, m4] = self.0;
        let var = m2 - m1 * m1;
        let c3 = m3 - 3.0 * m1 * m2 + 2.0 * m1.powi(3);
        let c4 = m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1.powi(4);
        let (s3, s4) = (c3 / var.powf(1.5), c4 / (var * var));
        var * var * (s4 - s3 * s3 - 1.0)
    }
}

/// Minimizes `var[(X − h)²]` over a grid of `grid_points ≥ 256` spanning
/// `mean ± 3σ`, then refines by golden-section search.
pub fn min_quadratic_variance(moments: &RawMoments, grid_points: usize) -> Result<QuadraticVariance> {
    if grid_points < 256 {
        return Err(invalid(format!("need at least 256 grid points, got {grid_points}")));
    }
    let var = moments.variance();
    if !(var > 0.0) {
        return Err(Error::InsufficientData("distribution is degenerate".into()));
    }
    let (mean, sd) = (moments.mean(), var.sqrt());
    let (lo, hi) = (mean - 3.0 * sd, mean + 3.0 * sd);
    let step = (hi - lo) / (grid_points - 1) as f64;
    let f = |h: f64| moments.var_shifted_square(h);
    let best = (0..grid_points)
        .map(|i| lo + i as f64 * step)
        .min_by(|a, b| f(*a).total_cmp(&f(*b)))
        .expect("grid is non-empty");
    let (mut a, mut b) = (best - step, best + step);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut d) = (b - inv_phi * (b - a), a + inv_phi * (b - a));
    for _ in 0..200 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - inv_phi * (b - a);
        d = a + inv_phi * (b - a);
        if (b - a).abs() <= 1e-14 * (1.0 + mean.abs() + sd) {
            break;
        }
    }
    let argmin = 0.5 * (a + b);
    Ok(QuadraticVariance {
        minimum: f(argmin),
        argmin,
        moment_form: moments.moment_form(),
    })
}

/// Uniform draws on `[-m, m]`, a convenience for the variance checks.
pub fn uniform_samples(m: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed);
    (0..n).map(|_| rng.random_range(-m..m)).collect()
}

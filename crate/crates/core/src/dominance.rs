//! Local diagnostics: the ball-probability ratio ρ(x, r), the statistic
//! `T_k(x)`, the dominance margin τ_x and stochastic-dominance verdicts.
//!
//! Everything here depends on a query only through its signal coordinates,
//! except ρ, where the noise enters through a noncentral chi-square CDF.

use std::sync::Arc;

use rand::Rng;

use crate::distributions::{
    cell_center, NoiseFamily, ProductDistribution, Signal, SignalKind, SignalSpec,
};
use crate::error::{check_dim, invalid, Error, Result};
use crate::knn::KnnModel;
use crate::rng::{derive_seed, stream_rng};
use crate::special::Chi2CdfTable;

/// Cells per axis of the signal quadrature grid.
pub const DOMINANCE_GRID: usize = 1024;

/// Squared-distance bins per class in a [`BallProfile`].
pub const BALL_BINS: usize = 4096;

/// Nodes in the noncentral chi-square CDF table of a [`BallProfile`].
pub const CDF_TABLE_NODES: usize = 8192;

/// Slack used when both CDFs come from the quadrature grid.
pub const QUADRATURE_SLACK: f64 = 1e-9;

/// First and second moments of one label-conditional signal law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMoments {
    /// `E[s]`.
    pub mean: Signal,
    /// `E‖s‖²`.
    pub second: f64,
}

impl ClassMoments {
    /// `E‖s − c‖²`.
    pub fn mean_sq_distance(&self, c: Signal) -> f64 {
        self.second - 2.0 * (self.mean[0] * c[0] + self.mean[1] * c[1]) + c[0] * c[0] + c[1] * c[1]
    }
}

/// Midpoint-rule discretization of both label-conditional signal laws.
///
/// Only cells with positive marginal density are kept. `weights[θ]` sums to 1
/// over the cells whenever class θ has mass.
#[derive(Debug, Clone)]
pub struct SignalGrid {
    res: usize,
    cells: Vec<Signal>,
    weights: [Vec<f64>; 2],
    mass: [f64; 2],
    moments: [ClassMoments; 2],
}

impl SignalGrid {
    pub fn new(signal: &SignalSpec, res: usize) -> Self {
        let (a, b) = signal.kind().half_widths();
        let (h1, h2) = (2.0 * a / res as f64, 2.0 * b / res as f64);
        let area = h1 * h2;
        let mut cells = Vec::new();
        let mut weights = [Vec::new(), Vec::new()];
        for i in 0..res {
            let z1 = cell_center(i, res, h1);
            for j in 0..res {
                let s = [z1, cell_center(j, res, h2)];
                let p = signal.kind().density(s);
                if p > 0.0 {
                    let eta = signal.eta(s);
                    cells.push(s);
                    weights[0].push(p * area * (1.0 - eta));
                    weights[1].push(p * area * eta);
                }
            }
        }
        let mut mass = [0.0; 2];
        let mut moments = [ClassMoments {
            mean: [0.0; 2],
            second: 0.0,
        }; 2];
        for theta in 0..2 {
            let w = &mut weights[theta];
            let total: f64 = w.iter().sum();
            mass[theta] = total;
            if total > 0.0 {
                w.iter_mut().for_each(|v| *v /= total);
            }
            let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
            for (s, &v) in cells.iter().zip(w.iter()) {
                m0 += v * s[0];
                m1 += v * s[1];
                m2 += v * (s[0] * s[0] + s[1] * s[1]);
            }
            moments[theta] = ClassMoments {
                mean: [m0, m1],
                second: m2,
            };
        }
        SignalGrid {
            res,
            cells,
            weights,
            mass,
            moments,
        }
    }

    pub fn resolution(&self) -> usize {
        self.res
    }

    pub fn cells(&self) -> &[Signal] {
        &self.cells
    }

    pub fn weights(&self, theta: u8) -> &[f64] {
        &self.weights[theta as usize]
    }

    /// Unnormalized quadrature mass of class `theta`, an estimate of its prior.
    pub fn mass(&self, theta: u8) -> f64 {
        self.mass[theta as usize]
    }

    pub fn moments(&self, theta: u8) -> Result<ClassMoments> {
        if self.mass[theta as usize] <= 0.0 {
            return Err(Error::DegenerateConditional { theta });
        }
        Ok(self.moments[theta as usize])
    }
}

/// Class-conditional signal moments: closed form for the half-rectangle
/// presets, grid quadrature otherwise.
pub fn class_moments(dist: &ProductDistribution, theta: u8) -> Result<ClassMoments> {
    match *dist.signal().kind() {
        SignalKind::AlignedRect { a, b } | SignalKind::MixtureRect { a, b, .. } => {
            let sign = if theta == 1 { 1.0 } else { -1.0 };
            Ok(ClassMoments {
                mean: [sign * a / 2.0, 0.0],
                second: (a * a + b * b) / 3.0,
            })
        }
        _ => dist.signal_grid().moments(theta),
    }
}

/// τ_x = E‖s′ − x_s‖² − E‖s − x_s‖² with s ~ class f*(x) and s′ ~ the other class.
pub fn tau_margin(dist: &ProductDistribution, x: &[f64]) -> Result<f64> {
    let theta = dist.bayes_at(x)?;
    tau_for_class(dist, [x[0], x[1]], theta)
}

fn tau_for_class(dist: &ProductDistribution, xs: Signal, theta: u8) -> Result<f64> {
    let same = class_moments(dist, theta)?;
    let other = class_moments(dist, 1 - theta)?;
    Ok(other.mean_sq_distance(xs) - same.mean_sq_distance(xs))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SdVerdict {
    Holds,
    Violated { max_violation: f64, at_radius: f64 },
    Untested,
}

impl SdVerdict {
    pub fn holds(&self) -> bool {
        matches!(self, SdVerdict::Holds)
    }
}

/// Region membership; the payload is the point's margin τ_x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    Positive(f64),
    Negative(f64),
    Neither,
}

impl Region {
    pub fn label(&self) -> &'static str {
        match self {
            Region::Positive(_) => "positive",
            Region::Negative(_) => "negative",
            Region::Neither => "neither",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    pub x: Vec<f64>,
    pub theta: u8,
    pub tau: f64,
    pub sd_verdict: SdVerdict,
    pub region: Region,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DominanceMethod {
    /// Compare quadrature-grid CDFs with slack `1e-9`.
    Quadrature,
    /// Compare empirical CDFs of `n_mc` draws per class with slack `4/√n_mc`.
    MonteCarlo { n_mc: usize, seed: u64 },
}

impl DominanceMethod {
    /// Quadrature where the grid is exact by mirror symmetry, Monte Carlo elsewhere.
    pub fn auto(dist: &ProductDistribution, n_mc: usize, seed: u64) -> Self {
        match dist.signal().kind() {
            SignalKind::AlignedRect { .. } | SignalKind::MixtureRect { .. } => {
                DominanceMethod::Quadrature
            }
            _ => DominanceMethod::MonteCarlo { n_mc, seed },
        }
    }
}

enum Route {
    Grid(Arc<SignalGrid>),
    /// Per-class signal draws, shared by every query of one checker.
    Samples([Vec<Signal>; 2]),
}

/// Compares the laws of `‖s − x_s‖` under the two classes on a radius grid.
///
/// One checker can be reused across many query points; the Monte Carlo route
/// then uses the same draws for every point.
pub struct DominanceChecker {
    radii: Vec<f64>,
    slack: f64,
    route: Route,
}

impl DominanceChecker {
    pub fn new(dist: &ProductDistribution, grid_size: usize, method: DominanceMethod) -> Result<Self> {
        if grid_size < 16 {
            return Err(invalid(format!("radius grid needs at least 16 points, got {grid_size}")));
        }
        let r_max = 2.0 * dist.signal().radius();
        let step = r_max / (grid_size - 1) as f64;
        let radii = (0..grid_size).map(|g| g as f64 * step).collect();
        let (slack, route) = match method {
            DominanceMethod::Quadrature => (QUADRATURE_SLACK, Route::Grid(dist.signal_grid())),
            DominanceMethod::MonteCarlo { n_mc, seed } => {
                if n_mc == 0 {
                    return Err(invalid("n_mc must be at least 1"));
                }
                let draw = |theta: u8| {
                    let mut rng = stream_rng(derive_seed(seed, theta as u64));
                    (0..n_mc)
                        .map(|_| dist.signal().sample_given(theta, &mut rng))
                        .collect::<Vec<_>>()
                };
                (4.0 / (n_mc as f64).sqrt(), Route::Samples([draw(0), draw(1)]))
            }
        };
        Ok(DominanceChecker { radii, slack, route })
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn slack(&self) -> f64 {
        self.slack
    }

    /// CDF of `‖s − xs‖` for class `theta` at every grid radius.
    pub fn distance_cdf(&self, xs: Signal, theta: u8) -> Vec<f64> {
        let step = self.radii[1];
        let last = self.radii.len() - 1;
        let sq = |s: &Signal| (s[0] - xs[0]).powi(2) + (s[1] - xs[1]).powi(2);
        let mut hist = vec![0.0; self.radii.len()];
        let total = match &self.route {
            Route::Grid(grid) => {
                for (s, &w) in grid.cells().iter().zip(grid.weights(theta)) {
                    if w > 0.0 {
                        let g = ((sq(s).sqrt() / step).ceil() as usize).min(last);
                        hist[g] += w;
                    }
                }
                1.0
            }
            Route::Samples(draws) => {
                let draws = &draws[theta as usize];
                for s in draws {
                    let g = ((sq(s).sqrt() / step).ceil() as usize).min(last);
                    hist[g] += 1.0;
                }
                draws.len() as f64
            }
        };
        let mut acc = 0.0;
        for h in &mut hist {
            acc += *h;
            *h = acc / total;
        }
        hist
    }

    /// Verdict for "class `theta` is stochastically closer to `xs`".
    pub fn check(&self, xs: Signal, theta: u8) -> SdVerdict {
        let same = self.distance_cdf(xs, theta);
        let other = self.distance_cdf(xs, 1 - theta);
        let (mut worst, mut at) = (f64::NEG_INFINITY, 0.0);
        for ((&fs, &fo), &r) in same.iter().zip(&other).zip(&self.radii) {
            if fo - fs > worst {
                worst = fo - fs;
                at = r;
            }
        }
        if worst <= self.slack {
            SdVerdict::Holds
        } else {
            SdVerdict::Violated {
                max_violation: worst,
                at_radius: at,
            }
        }
    }
}

/// Dominance verdict at `x` for its Bayes class.
///
/// Uses quadrature CDFs for the half-rectangle presets and `n_mc` draws per
/// class otherwise.
pub fn stochastic_dominance_check(
    dist: &ProductDistribution,
    x: &[f64],
    radius_grid_size: usize,
    n_mc: usize,
    seed: u64,
) -> Result<SdVerdict> {
    let theta = dist.bayes_at(x)?;
    let checker =
        DominanceChecker::new(dist, radius_grid_size, DominanceMethod::auto(dist, n_mc, seed))?;
    Ok(checker.check([x[0], x[1]], theta))
}

/// Region assignment given a margin and, for candidates of the positive
/// region, a dominance verdict.
pub fn classify_with(
    dist: &ProductDistribution,
    x: &[f64],
    tau_threshold: f64,
    checker: &DominanceChecker,
) -> Result<DominanceReport> {
    if !(tau_threshold > 0.0) {
        return Err(invalid(format!("tau threshold must be positive, got {tau_threshold}")));
    }
    let theta = dist.bayes_at(x)?;
    let xs = [x[0], x[1]];
    let tau = tau_for_class(dist, xs, theta)?;
    let (sd_verdict, region) = if tau >= tau_threshold {
        let v = checker.check(xs, theta);
        let region = if v.holds() { Region::Positive(tau) } else { Region::Neither };
        (v, region)
    } else if tau <= -tau_threshold {
        (SdVerdict::Untested, Region::Negative(tau))
    } else {
        (SdVerdict::Untested, Region::Neither)
    };
    Ok(DominanceReport {
        x: x.to_vec(),
        theta,
        tau,
        sd_verdict,
        region,
    })
}

/// Options for the dominance half of [`classify_point`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominanceOptions {
    pub radius_grid_size: usize,
    pub n_mc: usize,
    pub seed: u64,
}

impl Default for DominanceOptions {
    fn default() -> Self {
        DominanceOptions {
            radius_grid_size: 256,
            n_mc: 40_000,
            seed: 0,
        }
    }
}

pub fn classify_point(
    dist: &ProductDistribution,
    x: &[f64],
    tau_threshold: f64,
    opts: &DominanceOptions,
) -> Result<DominanceReport> {
    check_dim(dist.dim(), x.len())?;
    let checker = DominanceChecker::new(
        dist,
        opts.radius_grid_size,
        DominanceMethod::auto(dist, opts.n_mc, opts.seed),
    )?;
    classify_with(dist, x, tau_threshold, &checker)
}

/// Ball probabilities around a fixed query, for repeated evaluation of ρ(x, ·).
///
/// Requires standard normal noise: given the signal, `‖x′ − x‖²` is then the
/// signal distance `u` plus a noncentral chi-square with `d_n` degrees and
/// noncentrality `‖x_n‖²`. Signal distances are binned per class into
/// [`BALL_BINS`] bins represented by their weighted mean.
#[derive(Debug, Clone)]
pub struct BallProfile {
    priors: [f64; 2],
    /// `(u, weight)` sorted by `u`, per class.
    bins: [Vec<(f64, f64)>; 2],
    table: Chi2CdfTable,
    dof: f64,
    lambda: f64,
}

impl BallProfile {
    pub fn new(dist: &ProductDistribution, x: &[f64]) -> Result<Self> {
        check_dim(dist.dim(), x.len())?;
        if !matches!(dist.noise().family, NoiseFamily::StandardNormal) {
            return Err(Error::Unsupported(
                "quadrature ball probabilities need standard normal noise".into(),
            ));
        }
        let grid = dist.signal_grid();
        let xs = [x[0], x[1]];
        let us: Vec<f64> = grid
            .cells()
            .iter()
            .map(|s| (s[0] - xs[0]).powi(2) + (s[1] - xs[1]).powi(2))
            .collect();
        let u_max = us.iter().cloned().fold(0.0, f64::max);
        let width = (u_max / BALL_BINS as f64).max(f64::MIN_POSITIVE);
        let mut bins = [Vec::new(), Vec::new()];
        for theta in 0..2u8 {
            let mut w = vec![0.0; BALL_BINS];
            let mut wu = vec![0.0; BALL_BINS];
            for (&u, &cw) in us.iter().zip(grid.weights(theta)) {
                if cw > 0.0 {
                    let b = ((u / width) as usize).min(BALL_BINS - 1);
                    w[b] += cw;
                    wu[b] += cw * u;
                }
            }
            bins[theta as usize] = w
                .iter()
                .zip(&wu)
                .filter(|(w, _)| **w > 0.0)
                .map(|(&w, &wu)| (wu / w, w))
                .collect();
        }
        let dof = dist.noise().d_n as f64;
        let lambda: f64 = x[2..].iter().map(|v| v * v).sum();
        Ok(BallProfile {
            priors: [dist.prior(0), dist.prior(1)],
            bins,
            table: Chi2CdfTable::new(dof, lambda, CDF_TABLE_NODES),
            dof,
            lambda,
        })
    }

    /// `P_θ[B(x, r)]` from the interpolated CDF table.
    pub fn ball_mass(&self, theta: u8, r: f64) -> f64 {
        if r == f64::INFINITY {
            return 1.0;
        }
        let r2 = r * r;
        self.bins[theta as usize]
            .iter()
            .take_while(|(u, _)| *u < r2)
            .map(|&(u, w)| w * self.table.eval(r2 - u))
            .sum()
    }

    /// As [`ball_mass`](Self::ball_mass) but with the series CDF at every bin.
    pub fn ball_mass_exact(&self, theta: u8, r: f64) -> f64 {
        let r2 = r * r;
        self.bins[theta as usize]
            .iter()
            .take_while(|(u, _)| *u < r2)
            .map(|&(u, w)| w * crate::special::ncx2_cdf(r2 - u, self.dof, self.lambda))
            .sum()
    }

    /// ρ(x, r) = π₁P₁[B(x,r)] / π₀P₀[B(x,r)]; `+∞` when only the class-0 mass vanishes.
    pub fn rho(&self, r: f64) -> Result<f64> {
        if r == f64::INFINITY {
            return Ok(self.priors[1] / self.priors[0]);
        }
        let p1 = self.priors[1] * self.ball_mass(1, r);
        let p0 = self.priors[0] * self.ball_mass(0, r);
        if p0 <= 0.0 && p1 <= 0.0 {
            return Err(Error::EmptyBall { radius: r });
        }
        Ok(if p0 <= 0.0 { f64::INFINITY } else { p1 / p0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoMethod {
    Quadrature,
    MonteCarlo { n_mc: usize, seed: u64 },
}

/// A ρ value with its Monte Carlo standard error (zero for quadrature).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoEstimate {
    pub value: f64,
    pub stderr: f64,
}

pub fn rho(dist: &ProductDistribution, x: &[f64], r: f64, method: RhoMethod) -> Result<RhoEstimate> {
    check_dim(dist.dim(), x.len())?;
    if !(r > 0.0) {
        return Err(invalid(format!("radius must be positive, got {r}")));
    }
    match method {
        RhoMethod::Quadrature => Ok(RhoEstimate {
            value: BallProfile::new(dist, x)?.rho(r)?,
            stderr: 0.0,
        }),
        RhoMethod::MonteCarlo { n_mc, seed } => rho_mc(dist, x, r, n_mc, seed),
    }
}

fn rho_mc(dist: &ProductDistribution, x: &[f64], r: f64, n_mc: usize, seed: u64) -> Result<RhoEstimate> {
    if n_mc == 0 {
        return Err(invalid("n_mc must be at least 1"));
    }
    let (pi0, pi1) = (dist.prior(0), dist.prior(1));
    if r == f64::INFINITY {
        return Ok(RhoEstimate {
            value: pi1 / pi0,
            stderr: 0.0,
        });
    }
    let r2 = r * r;
    let mut point = vec![0.0; dist.dim()];
    let mut hits = [0usize; 2];
    for theta in 0..2u8 {
        let mut rng = stream_rng(derive_seed(seed, theta as u64));
        for _ in 0..n_mc {
            dist.sample_point_given(theta, &mut rng, &mut point);
            let d2: f64 = point.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 <= r2 {
                hits[theta as usize] += 1;
            }
        }
    }
    if hits == [0, 0] {
        return Err(Error::EmptyBall { radius: r });
    }
    if hits[0] == 0 {
        return Ok(RhoEstimate {
            value: f64::INFINITY,
            stderr: f64::INFINITY,
        });
    }
    let n = n_mc as f64;
    let (p0, p1) = (hits[0] as f64 / n, hits[1] as f64 / n);
    let value = pi1 * p1 / (pi0 * p0);
    // delta method on log ρ
    let rel_var = (1.0 - p0) / (n * p0) + if p1 > 0.0 { (1.0 - p1) / (n * p1) } else { 0.0 };
    Ok(RhoEstimate {
        value,
        stderr: value * rel_var.sqrt(),
    })
}

/// `T_k(x) = ρ(x, R_(k+1)(x))` for the fitted model, by quadrature.
pub fn t_k_empirical(model: &KnnModel, dist: &ProductDistribution, x: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > model.len() {
        return Err(invalid(format!("k must lie in 1..={}, got {k}", model.len())));
    }
    let r = model.neighbor_radius(x, k + 1)?;
    if r == f64::INFINITY {
        return Ok(dist.prior(1) / dist.prior(0));
    }
    BallProfile::new(dist, x)?.rho(r)
}

/// A signal-plane probe at `(s0, s1)` with zero noise coordinates.
pub fn probe_point(dist: &ProductDistribution, s: Signal) -> Vec<f64> {
    let mut x = vec![0.0; dist.dim()];
    x[0] = s[0];
    x[1] = s[1];
    x
}

/// `n` points drawn uniformly from the signal rectangle, zero noise.
pub fn random_probes(dist: &ProductDistribution, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let (a, b) = dist.signal().kind().half_widths();
    let mut rng = stream_rng(seed);
    (0..n)
        .map(|_| probe_point(dist, [rng.random_range(-a..a), rng.random_range(-b..b)]))
        .collect()
}

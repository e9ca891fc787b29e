//! Scaling-law scans, signal-plane maps and bound overlays.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::bounds::{fast_rate_bound, slow_rate_bound};
use crate::distributions::{
    cell_center, make_aligned, make_ellipse, make_ramp, make_rotated, make_unbalanced, Dataset,
    ProductDistribution, Signal,
};
use crate::dominance::{classify_with, probe_point, DominanceChecker, DominanceMethod, Region, SdVerdict};
use crate::error::{Error, Result};
use crate::knn::{excess_risk_of, resample_balance, KnnModel, ResampleMode};
use crate::rng::{derive_path, derive_seed, stream_rng};
use crate::stats::{ols, Estimate};

/// A named synthetic distribution with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Aligned { a: f64, b: f64, d: usize },
    Rotated { a: f64, b: f64, d: usize, slope: f64 },
    Ramp { a: f64, b: f64, d: usize },
    Ellipse { a: f64, b: f64, d: usize },
    Unbalanced { d: usize },
}

impl Preset {
    pub fn build(&self) -> Result<ProductDistribution> {
        match *self {
            Preset::Aligned { a, b, d } => make_aligned(a, b, d),
            Preset::Rotated { a, b, d, slope } => make_rotated(a, b, d, slope),
            Preset::Ramp { a, b, d } => make_ramp(a, b, d),
            Preset::Ellipse { a, b, d } => make_ellipse(a, b, d),
            Preset::Unbalanced { d } => make_unbalanced(d),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Aligned { .. } => "aligned",
            Preset::Rotated { .. } => "rotated",
            Preset::Ramp { .. } => "ramp",
            Preset::Ellipse { .. } => "ellipse",
            Preset::Unbalanced { .. } => "unbalanced",
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Preset::Aligned { d, .. }
            | Preset::Rotated { d, .. }
            | Preset::Ramp { d, .. }
            | Preset::Ellipse { d, .. }
            | Preset::Unbalanced { d } => d,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Preset::Aligned { a, b, d } | Preset::Ramp { a, b, d } | Preset::Ellipse { a, b, d } => {
                write!(f, "{}(a={a}, b={b}, d={d})", self.name())
            }
            Preset::Rotated { a, b, d, slope } => write!(f, "rotated(a={a}, b={b}, d={d}, slope={slope})"),
            Preset::Unbalanced { d } => write!(f, "unbalanced(d={d})"),
        }
    }
}

/// How the neighbor count grows with the sample size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KRule {
    /// `max(1, ⌊frac·n⌋)`.
    FloorFrac(f64),
    /// `n/100 + 2` (integer division).
    Affine,
    Fixed(usize),
}

impl KRule {
    pub fn k_for(&self, n: usize) -> usize {
        match *self {
            KRule::FloorFrac(frac) => ((frac * n as f64).floor() as usize).max(1),
            KRule::Affine => n / 100 + 2,
            KRule::Fixed(k) => k,
        }
    }

    /// Errors unless `1 ≤ k ≤ n`.
    pub fn checked_k(&self, n: usize) -> Result<usize> {
        let k = self.k_for(n);
        if k == 0 || k > n {
            return Err(Error::Config(format!("k rule {self} gives k = {k} at n = {n}")));
        }
        Ok(k)
    }
}

impl fmt::Display for KRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KRule::FloorFrac(frac) => write!(f, "floor_frac({frac})"),
            KRule::Affine => write!(f, "affine"),
            KRule::Fixed(k) => write!(f, "fixed({k})"),
        }
    }
}

/// `[2^lo, 2^{lo+1}, …, 2^hi]`.
pub fn powers_of_two(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|e| 1usize << e).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    pub preset: Preset,
    pub n_grid: Vec<usize>,
    pub k_rule: KRule,
    pub trials: usize,
    pub n_test: usize,
    pub master_seed: u64,
    /// Balance each training sample before fitting.
    pub resample: Option<ResampleMode>,
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() {
            return Err(Error::Config("n grid is empty".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n grid must be strictly increasing".into()));
        }
        if self.trials == 0 || self.n_test == 0 {
            return Err(Error::Config("trials and n_test must be at least 1".into()));
        }
        for &n in &self.n_grid {
            self.k_rule.checked_k(n)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub n: usize,
    pub k: usize,
    pub trials: usize,
    pub mean_test_error: f64,
    pub stderr: f64,
    /// `NaN` when unknown (real data).
    pub bayes_risk: f64,
    pub mean_excess: f64,
    pub excess_stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingCurve {
    pub label: String,
    pub rows: Vec<CurveRow>,
}

pub const CURVE_HEADER: [&str; 8] = [
    "n",
    "k",
    "trials",
    "mean_test_error",
    "stderr",
    "bayes_risk",
    "mean_excess",
    "excess_stderr",
];

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_real(v: f64) -> String {
    format!("{v}")
}

impl ScalingCurve {
    /// CSV with `#`-prefixed metadata lines followed by the header and rows.
    pub fn write_csv<W: Write>(&self, mut w: W, metadata: &[(String, String)]) -> Result<()> {
        for (key, value) in metadata {
            writeln!(w, "# {key}: {value}").map_err(|e| Error::io("<csv>", e))?;
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CURVE_HEADER)?;
        for r in &self.rows {
            out.write_record([
                r.n.to_string(),
                r.k.to_string(),
                r.trials.to_string(),
                fmt_real(r.mean_test_error),
                fmt_real(r.stderr),
                fmt_real(r.bayes_risk),
                fmt_real(r.mean_excess),
                fmt_real(r.excess_stderr),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, metadata: &[(String, String)]) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f), metadata)
    }

    pub fn read_csv<R: std::io::Read>(r: R, label: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::InsufficientData(format!("bad curve field {i} in {rec:?}")))
            };
            rows.push(CurveRow {
                n: num(0)? as usize,
                k: num(1)? as usize,
                trials: num(2)? as usize,
                mean_test_error: num(3)?,
                stderr: num(4)?,
                bayes_risk: num(5)?,
                mean_excess: num(6)?,
                excess_stderr: num(7)?,
            });
        }
        Ok(ScalingCurve {
            label: label.to_string(),
            rows,
        })
    }

    pub fn row(&self, n: usize) -> Option<&CurveRow> {
        self.rows.iter().find(|r| r.n == n)
    }
}

fn scan_trial(
    dist: &ProductDistribution,
    config: &ScanConfig,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = stream_rng(seed);
    let mut train = dist.sample_with(n, &mut rng)?;
    let test = dist.sample_with(config.n_test, &mut rng)?;
    if let Some(mode) = config.resample {
        train = resample_balance(&train, mode, derive_seed(seed, 1))?;
    }
    let k = config.k_rule.checked_k(train.len())?;
    let model = KnnModel::fit(train);
    let preds = model.predict_batch(test.points(), k)?;
    let wrong = preds.iter().zip(test.labels()).filter(|(p, y)| p != y).count();
    Ok((wrong as f64 / test.len() as f64, excess_risk_of(dist, &test, &preds)?))
}

/// Runs `trials` independent repetitions at every `n` of the grid.
///
/// Every `(n, trial)` pair draws from its own stream, so the result does not
/// depend on the thread count.
pub fn scaling_scan(config: &ScanConfig) -> Result<ScalingCurve> {
    config.validate()?;
    let dist = config.preset.build()?;
    let bayes = dist.bayes_risk();
    let jobs: Vec<(usize, usize)> = config
        .n_grid
        .iter()
        .enumerate()
        .flat_map(|(i, _)| (0..config.trials).map(move |t| (i, t)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .with_max_len(1)
        .map(|&(i, t)| {
            let n = config.n_grid[i];
            scan_trial(&dist, config, n, derive_path(config.master_seed, &[n as u64, t as u64]))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = config
        .n_grid
        .iter()
        .zip(outcomes.chunks(config.trials))
        .map(|(&n, chunk)| {
            let err = Estimate::from_samples(&chunk.iter().map(|o| o.0).collect::<Vec<_>>());
            let exc = Estimate::from_samples(&chunk.iter().map(|o| o.1).collect::<Vec<_>>());
            CurveRow {
                n,
                k: config.k_rule.k_for(n),
                trials: config.trials,
                mean_test_error: err.mean,
                stderr: err.stderr,
                bayes_risk: bayes,
                mean_excess: exc.mean,
                excess_stderr: exc.stderr,
            }
        })
        .collect();
    Ok(ScalingCurve {
        label: config.preset.to_string(),
        rows,
    })
}

/// Learning curve on a fixed labeled pool: each trial subsamples `n` training
/// points without replacement and reports the test error on `test`.
pub fn dataset_scan(
    pool: &Dataset,
    test: &Dataset,
    n_grid: &[usize],
    k_rule: KRule,
    trials: usize,
    master_seed: u64,
) -> Result<ScalingCurve> {
    if n_grid.iter().any(|&n| n > pool.len()) {
        return Err(Error::Config(format!("n grid exceeds the pool size {}", pool.len())));
    }
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    for &n in n_grid {
        k_rule.checked_k(n)?;
    }
    let jobs: Vec<(usize, usize)> = n_grid
        .iter()
        .flat_map(|&n| (0..trials).map(move |t| (n, t)))
        .collect();
    let errors = jobs
        .par_iter()
        .with_max_len(1)
        .map(|&(n, t)| {
            let mut rng = stream_rng(derive_path(master_seed, &[n as u64, t as u64]));
            let mut idx = rand::seq::index::sample(&mut rng, pool.len(), n).into_vec();
            idx.sort_unstable();
            let model = KnnModel::fit(pool.select(&idx)?);
            model.test_error(k_rule.k_for(n), test)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = n_grid
        .iter()
        .zip(errors.chunks(trials))
        .map(|(&n, chunk)| {
            let e = Estimate::from_samples(chunk);
            CurveRow {
                n,
                k: k_rule.k_for(n),
                trials,
                mean_test_error: e.mean,
                stderr: e.stderr,
                bayes_risk: f64::NAN,
                mean_excess: f64::NAN,
                excess_stderr: f64::NAN,
            }
        })
        .collect();
    Ok(ScalingCurve {
        label: "dataset".into(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub used: usize,
    /// Rows in range dropped for non-positive excess.
    pub excluded: usize,
}

/// Least-squares slope of `log(excess)` on `log(n)` over `n_min ≤ n ≤ n_max`.
pub fn slope_fit(curve: &ScalingCurve, n_min: usize, n_max: usize) -> Result<SlopeFit> {
    slope_fit_by(curve, n_min, n_max, |r| r.mean_excess)
}

/// As [`slope_fit`] for an arbitrary per-row quantity.
pub fn slope_fit_by(
    curve: &ScalingCurve,
    n_min: usize,
    n_max: usize,
    value: impl Fn(&CurveRow) -> f64,
) -> Result<SlopeFit> {
    let in_range: Vec<&CurveRow> = curve.rows.iter().filter(|r| r.n >= n_min && r.n <= n_max).collect();
    let usable: Vec<(f64, f64)> = in_range
        .iter()
        .filter(|r| value(r) > 0.0)
        .map(|r| ((r.n as f64).ln(), value(r).ln()))
        .collect();
    if usable.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "slope fit needs 3 rows with positive values in [{n_min}, {n_max}], found {}",
            usable.len()
        )));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = usable.iter().copied().unzip();
    let fit = ols(&xs, &ys).ok_or_else(|| Error::InsufficientData("degenerate n range".into()))?;
    Ok(SlopeFit {
        slope: fit.slope,
        stderr: fit.slope_stderr,
        used: usable.len(),
        excluded: in_range.len() - usable.len(),
    })
}

/// A lattice of cell centers over a rectangle of the signal plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapGrid {
    pub n0: usize,
    pub n1: usize,
    /// Half-widths of the covered rectangle `[-h0, h0] × [-h1, h1]`.
    pub half_widths: (f64, f64),
}

impl MapGrid {
    /// `n0 × n1` cells covering the signal rectangle of `dist`.
    pub fn over(dist: &ProductDistribution, n0: usize, n1: usize) -> Self {
        MapGrid {
            n0,
            n1,
            half_widths: dist.signal().kind().half_widths(),
        }
    }

    /// Centers in row-major order: `s1` varies fastest.
    pub fn points(&self) -> Vec<Signal> {
        let (h0, h1) = (2.0 * self.half_widths.0 / self.n0 as f64, 2.0 * self.half_widths.1 / self.n1 as f64);
        (0..self.n0)
            .flat_map(|i| (0..self.n1).map(move |j| [cell_center(i, self.n0, h0), cell_center(j, self.n1, h1)]))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.n0 * self.n1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauCell {
    pub s: Signal,
    pub theta: u8,
    pub tau: f64,
    pub verdict: SdVerdict,
    pub region: Region,
}

/// Margin, dominance verdict and region at every cell (noise coordinates 0).
pub fn tau_map(
    dist: &ProductDistribution,
    grid: &MapGrid,
    tau_threshold: f64,
    checker: &DominanceChecker,
) -> Result<Vec<TauCell>> {
    grid.points()
        .par_iter()
        .map(|&s| {
            let r = classify_with(dist, &probe_point(dist, s), tau_threshold, checker)?;
            Ok(TauCell {
                s,
                theta: r.theta,
                tau: r.tau,
                verdict: r.sd_verdict,
                region: r.region,
            })
        })
        .collect()
}

/// Convenience: a τ-map with the default dominance route for `dist`.
pub fn tau_map_default(
    dist: &ProductDistribution,
    grid: &MapGrid,
    tau_threshold: f64,
    n_mc: usize,
    seed: u64,
) -> Result<Vec<TauCell>> {
    let checker = DominanceChecker::new(dist, 128, DominanceMethod::auto(dist, n_mc, seed))?;
    tau_map(dist, grid, tau_threshold, &checker)
}

pub fn write_tau_map<W: Write>(cells: &[TauCell], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["s0", "s1", "theta", "tau", "sd_holds", "region"])?;
    for c in cells {
        let sd = match c.verdict {
            SdVerdict::Holds => "true",
            SdVerdict::Violated { .. } => "false",
            SdVerdict::Untested => "untested",
        };
        out.write_record([
            fmt_real(c.s[0]),
            fmt_real(c.s[1]),
            c.theta.to_string(),
            fmt_real(c.tau),
            sd.to_string(),
            c.region.label().to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredCell {
    pub s: Signal,
    pub prediction: u8,
    pub bayes: u8,
}

impl PredCell {
    pub fn agree(&self) -> bool {
        self.prediction == self.bayes
    }
}

/// Predictions of a fitted model at arbitrary full points.
pub fn prediction_map_points(
    model: &KnnModel,
    dist: &ProductDistribution,
    k: usize,
    points: &[Vec<f64>],
) -> Result<Vec<PredCell>> {
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    let preds = model.par_predict_batch(&flat, k)?;
    points
        .iter()
        .zip(preds)
        .map(|(x, p)| {
            Ok(PredCell {
                s: [x[0], x[1]],
                prediction: p,
                bayes: dist.bayes_at(x)?,
            })
        })
        .collect()
}

/// Trains once on `n` points and predicts at every grid cell (noise coordinates 0).
pub fn prediction_map(
    dist: &ProductDistribution,
    n: usize,
    k: usize,
    seed: u64,
    grid: &MapGrid,
) -> Result<Vec<PredCell>> {
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} must lie in 1..={n}")));
    }
    let model = KnnModel::fit(crate::distributions::sample(dist, n, seed)?);
    let probes: Vec<Vec<f64>> = grid.points().iter().map(|&s| probe_point(dist, s)).collect();
    prediction_map_points(&model, dist, k, &probes)
}

pub fn write_prediction_map<W: Write>(cells: &[PredCell], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["s0", "s1", "prediction", "bayes", "agree"])?;
    for c in cells {
        out.write_record([
            fmt_real(c.s[0]),
            fmt_real(c.s[1]),
            c.prediction.to_string(),
            c.bayes.to_string(),
            u8::from(c.agree()).to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Theorem constants for [`bound_overlay`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayParams {
    pub d: usize,
    pub tau: f64,
    pub c: f64,
    pub slow: Option<SlowParams>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlowParams {
    pub gamma: f64,
    pub beta: f64,
    pub beta_prime: f64,
    pub m: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayRow {
    pub row: CurveRow,
    pub fast_rate: f64,
    pub slow_rate: Option<f64>,
}

/// Appends theoretical bound columns at each `(n, k)` of the curve.
pub fn bound_overlay(curve: &ScalingCurve, params: &OverlayParams) -> Result<Vec<OverlayRow>> {
    curve
        .rows
        .iter()
        .map(|r| {
            let fast = fast_rate_bound(r.k, params.d, params.tau, params.c)?.value;
            let slow = match params.slow {
                Some(s) => Some(slow_rate_bound(r.n, params.d, s.gamma, s.beta, s.beta_prime, s.m, s.c)?.raw),
                None => None,
            };
            Ok(OverlayRow {
                row: *r,
                fast_rate: fast,
                slow_rate: slow,
            })
        })
        .collect()
}

pub fn write_overlay<W: Write>(rows: &[OverlayRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = CURVE_HEADER.to_vec();
    header.extend(["fast_rate", "slow_rate"]);
    out.write_record(&header)?;
    for o in rows {
        let r = &o.row;
        out.write_record([
            r.n.to_string(),
            r.k.to_string(),
            r.trials.to_string(),
            fmt_real(r.mean_test_error),
            fmt_real(r.stderr),
            fmt_real(r.bayes_risk),
            fmt_real(r.mean_excess),
            fmt_real(r.excess_stderr),
            fmt_real(o.fast_rate),
            o.slow_rate.map(fmt_real).unwrap_or_default(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Largest `c` for which the fast-rate bound stays above every mean excess
/// of the curve; `None` when no row constrains it.
pub fn fit_fast_constant(curve: &ScalingCurve, d: usize, tau: f64) -> Option<f64> {
    curve
        .rows
        .iter()
        .filter_map(|r| {
            let floor = 2.0 * (-(r.k as f64) / 6.0).exp();
            let gap = r.mean_excess - floor;
            if gap <= 0.0 || gap >= 1.0 || tau <= 0.0 {
                return None;
            }
            Some(-gap.ln() * d as f64 / (tau * tau * r.k as f64))
        })
        .min_by(f64::total_cmp)
}

/// A gnuplot script drawing mean excess (with error bars) against `n` on log-log axes.
pub fn plot_script(csv_file: &str, title: &str, column: &str) -> String {
    let (value, err) = match column {
        "mean_test_error" => (4, 5),
        _ => (7, 8),
    };
    format!(
        "set datafile separator ','\n\
         set logscale xy\n\
         set xlabel 'n'\n\
         set ylabel '{column}'\n\
         set title '{title}'\n\
         set key top right\n\
         plot '{csv_file}' every ::1 using 1:{value}:{err} with yerrorbars title '{title}', \\\n\
         \x20    '' every ::1 using 1:{value} with lines notitle\n"
    )
}

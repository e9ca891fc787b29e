//! Signal ⊗ noise product distributions and labeled datasets.
//!
//! Coordinates `0..2` of every point are the signal component, which carries
//! the label; coordinates `2..d` are i.i.d. zero-mean noise independent of
//! the signal. Sampling draws the label from the prior first, then the signal
//! from its label-conditional law (rejection against the signal marginal),
//! then the noise.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, invalid, Error, Result};
use crate::rng::{stream_rng, StreamRng};

/// Dimension of the signal component for every shipped preset.
pub const SIGNAL_DIM: usize = 2;

pub type Signal = [f64; SIGNAL_DIM];

/// Midpoint-rule resolution used for Bayes risk and priors without a closed form.
pub const RISK_GRID: usize = 2048;

/// A user-supplied signal law on the rectangle `[-a, a] × [-b, b]`.
pub trait SignalLaw: Send + Sync + fmt::Debug {
    /// `(a, b)`: the support is contained in `[-a, a] × [-b, b]`.
    fn half_widths(&self) -> (f64, f64);
    /// Marginal density of the signal.
    fn density(&self, s: Signal) -> f64;
    /// `P[Y = 1 | signal = s]`.
    fn eta(&self, s: Signal) -> f64;
    fn sample_marginal(&self, rng: &mut StreamRng) -> Signal;
}

/// A user-supplied noise coordinate law.
pub trait NoiseLaw: Send + Sync + fmt::Debug {
    fn density(&self, t: f64) -> f64;
    /// `M` with `‖p‖∞ ≤ M` and total variation `V(p) ≤ M`, `M ≥ 1`.
    fn density_bound(&self) -> f64;
    fn sample(&self, rng: &mut StreamRng) -> f64;
}

#[derive(Debug, Clone)]
pub enum SignalKind {
    /// Uniform rectangle, label `1{ζ₁ > 0}`.
    AlignedRect { a: f64, b: f64 },
    /// Uniform rectangle, label `1{ζ₂ > slope·ζ₁}`.
    RotatedRect { a: f64, b: f64, slope: f64 },
    /// Uniform rectangle, `η = clamp((ζ₁ + 1)/2, 0, 1)`.
    RampRect { a: f64, b: f64 },
    /// Uniform rectangle, label `1{ζ₁² + 16ζ₂² ≤ 8/π}`.
    EllipseRect { a: f64, b: f64 },
    /// `ζ₁ ~ w·U[-a,0] + (1−w)·U[0,a]`, `ζ₂ ~ U[-b,b]`, label `1{ζ₁ > 0}`.
    MixtureRect { a: f64, b: f64, weight_negative: f64 },
    Custom(Arc<dyn SignalLaw>),
}

/// `8/π`: squared ζ₁ semi-axis of the ellipse preset.
pub const ELLIPSE_LEVEL: f64 = 8.0 / std::f64::consts::PI;

impl SignalKind {
    pub fn half_widths(&self) -> (f64, f64) {
        match *self {
            SignalKind::AlignedRect { a, b }
            | SignalKind::RotatedRect { a, b, .. }
            | SignalKind::RampRect { a, b }
            | SignalKind::EllipseRect { a, b }
            | SignalKind::MixtureRect { a, b, .. } => (a, b),
            SignalKind::Custom(ref law) => law.half_widths(),
        }
    }

    pub fn eta(&self, s: Signal) -> f64 {
        let [z1, z2] = s;
        let ind = |c: bool| if c { 1.0 } else { 0.0 };
        match *self {
            SignalKind::AlignedRect { .. } | SignalKind::MixtureRect { .. } => ind(z1 > 0.0),
            SignalKind::RotatedRect { slope, .. } => ind(z2 > slope * z1),
            SignalKind::RampRect { .. } => {
                if z1 < -1.0 {
                    0.0
                } else if z1 > 1.0 {
                    1.0
                } else {
                    (z1 + 1.0) / 2.0
                }
            }
            SignalKind::EllipseRect { .. } => ind(z1 * z1 + 16.0 * z2 * z2 <= ELLIPSE_LEVEL),
            SignalKind::Custom(ref law) => law.eta(s),
        }
    }

    pub fn density(&self, s: Signal) -> f64 {
        let (a, b) = self.half_widths();
        let inside = s[0].abs() <= a && s[1].abs() <= b;
        match *self {
            SignalKind::Custom(ref law) => law.density(s),
            SignalKind::MixtureRect { weight_negative: w, .. } => {
                if !inside {
                    0.0
                } else if s[0] < 0.0 {
                    w / a / (2.0 * b)
                } else {
                    (1.0 - w) / a / (2.0 * b)
                }
            }
            _ => {
                if inside {
                    1.0 / (4.0 * a * b)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn is_realizable(&self) -> bool {
        !matches!(self, SignalKind::RampRect { .. } | SignalKind::Custom(_))
    }

    /// One draw from the signal marginal, ignoring the label.
    pub fn sample_marginal(&self, rng: &mut StreamRng) -> Signal {
        let (a, b) = self.half_widths();
        match *self {
            SignalKind::Custom(ref law) => law.sample_marginal(rng),
            SignalKind::MixtureRect { weight_negative: w, .. } => {
                let z1 = if rng.random::<f64>() < w {
                    -a * rng.random::<f64>()
                } else {
                    a * rng.random::<f64>()
                };
                [z1, rng.random_range(-b..b)]
            }
            _ => [rng.random_range(-a..a), rng.random_range(-b..b)],
        }
    }

    /// Closed-form `P[Y = 1]` where one exists.
    fn closed_form_prior(&self) -> Option<f64> {
        match *self {
            SignalKind::AlignedRect { .. } | SignalKind::RotatedRect { .. } => Some(0.5),
            // ∫η dζ₁ / 2a = (1 + (a − 1)) / 2a
            SignalKind::RampRect { .. } => Some(0.5),
            SignalKind::MixtureRect { weight_negative, .. } => Some(1.0 - weight_negative),
            SignalKind::EllipseRect { a, b } => Some(ellipse_rect_area(a, b) / (4.0 * a * b)),
            SignalKind::Custom(_) => None,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            SignalKind::AlignedRect { .. } => "aligned",
            SignalKind::RotatedRect { .. } => "rotated",
            SignalKind::RampRect { .. } => "ramp",
            SignalKind::EllipseRect { .. } => "ellipse",
            SignalKind::MixtureRect { .. } => "unbalanced",
            SignalKind::Custom(_) => "custom",
        }
    }
}

/// Area of `{ζ₁² + 16ζ₂² ≤ 8/π} ∩ [-a,a]×[-b,b]`.
fn ellipse_rect_area(a: f64, b: f64) -> f64 {
    let big = ELLIPSE_LEVEL.sqrt();
    let small = big / 4.0;
    if big <= a && small <= b {
        return std::f64::consts::PI * big * small;
    }
    // composite Simpson over ζ₁ of the clipped column height
    let lim = a.min(big);
    let n = 1 << 16;
    let h = 2.0 * lim / n as f64;
    let height = |x: f64| 2.0 * b.min(small * (1.0 - x * x / (big * big)).max(0.0).sqrt());
    let mut acc = height(-lim) + height(lim);
    for i in 1..n {
        let x = -lim + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * height(x);
    }
    acc * h / 3.0
}

/// Center of cell `i` of `res` cells of width `h` spanning `[-res·h/2, res·h/2]`.
///
/// Written so that cells `i` and `res − 1 − i` are exact mirror images.
#[inline]
pub(crate) fn cell_center(i: usize, res: usize, h: f64) -> f64 {
    (i as f64 + 0.5 - 0.5 * res as f64) * h
}

/// Midpoint rule over the signal rectangle at `res × res` cells.
fn grid_integral(kind: &SignalKind, res: usize, f: impl Fn(Signal, f64) -> f64) -> f64 {
    let (a, b) = kind.half_widths();
    let (h1, h2) = (2.0 * a / res as f64, 2.0 * b / res as f64);
    let mut total = 0.0;
    for i in 0..res {
        let z1 = cell_center(i, res, h1);
        let mut col = 0.0;
        for j in 0..res {
            let s = [z1, cell_center(j, res, h2)];
            let p = kind.density(s);
            if p > 0.0 {
                col += f(s, p);
            }
        }
        total += col * h1 * h2;
    }
    total
}

/// The signal half of a product distribution.
#[derive(Debug, Clone)]
pub struct SignalSpec {
    kind: SignalKind,
    pi1: f64,
    radius: f64,
}

impl SignalSpec {
    pub fn new(kind: SignalKind) -> Result<Self> {
        let (a, b) = kind.half_widths();
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(invalid(format!("rectangle half-widths must be positive, got ({a}, {b})")));
        }
        let pi1 = match kind.closed_form_prior() {
            Some(p) => p,
            None => grid_integral(&kind, RISK_GRID, |s, p| p * kind.eta(s)),
        };
        if !(pi1 > 0.0 && pi1 < 1.0) {
            return Err(invalid(format!("class-1 prior must lie in (0,1), got {pi1}")));
        }
        Ok(SignalSpec {
            radius: a.hypot(b),
            kind,
            pi1,
        })
    }

    pub fn kind(&self) -> &SignalKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        SIGNAL_DIM
    }

    /// `R` with `‖signal‖ ≤ R` on the support.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn prior(&self, theta: u8) -> f64 {
        if theta == 1 {
            self.pi1
        } else {
            1.0 - self.pi1
        }
    }

    pub fn eta(&self, s: Signal) -> f64 {
        self.kind.eta(s)
    }

    /// Weight of class `theta` at signal `s` relative to the marginal: η or 1−η.
    pub fn class_weight(&self, theta: u8, s: Signal) -> f64 {
        let e = self.kind.eta(s);
        if theta == 1 {
            e
        } else {
            1.0 - e
        }
    }

    /// Draws a signal from the label-conditional law by rejection against the marginal.
    pub fn sample_given(&self, theta: u8, rng: &mut StreamRng) -> Signal {
        loop {
            let s = self.kind.sample_marginal(rng);
            let w = self.class_weight(theta, s);
            if w >= 1.0 || (w > 0.0 && rng.random::<f64>() < w) {
                return s;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum NoiseFamily {
    StandardNormal,
    /// Each coordinate uniform on `[-half_width, half_width]`.
    UniformScaled { half_width: f64 },
    Custom(Arc<dyn NoiseLaw>),
}

#[derive(Debug, Clone)]
pub struct NoiseSpec {
    pub d_n: usize,
    pub family: NoiseFamily,
}

impl NoiseSpec {
    pub fn standard_normal(d_n: usize) -> Self {
        NoiseSpec {
            d_n,
            family: NoiseFamily::StandardNormal,
        }
    }

    /// `M ≥ 1` bounding both the sup-norm and total variation of one coordinate's density.
    pub fn density_bound(&self) -> f64 {
        match self.family {
            // sup φ ≈ 0.399, V(φ) = 2 sup φ ≈ 0.798
            NoiseFamily::StandardNormal => 1.0,
            NoiseFamily::UniformScaled { half_width } => (1.0 / half_width).max(1.0),
            NoiseFamily::Custom(ref law) => law.density_bound().max(1.0),
        }
    }

    pub fn coordinate_density(&self, t: f64) -> f64 {
        match self.family {
            NoiseFamily::StandardNormal => crate::special::normal_pdf(t),
            NoiseFamily::UniformScaled { half_width } => {
                if t.abs() <= half_width {
                    0.5 / half_width
                } else {
                    0.0
                }
            }
            NoiseFamily::Custom(ref law) => law.density(t),
        }
    }

    pub fn sample_coordinate(&self, rng: &mut StreamRng) -> f64 {
        match self.family {
            NoiseFamily::StandardNormal => rng.sample(StandardNormal),
            NoiseFamily::UniformScaled { half_width } => rng.random_range(-half_width..half_width),
            NoiseFamily::Custom(ref law) => law.sample(rng),
        }
    }

    pub fn fill(&self, out: &mut [f64], rng: &mut StreamRng) {
        for v in out {
            *v = self.sample_coordinate(rng);
        }
    }
}

/// A signal ⊗ noise law on `ℝ^d`, `d = 2 + d_n`.
#[derive(Debug, Clone)]
pub struct ProductDistribution {
    signal: SignalSpec,
    noise: NoiseSpec,
    grid: OnceLock<Arc<crate::dominance::SignalGrid>>,
}

impl ProductDistribution {
    pub fn new(signal: SignalSpec, noise: NoiseSpec) -> Result<Self> {
        if noise.d_n == 0 {
            return Err(invalid("noise dimension must be at least 1"));
        }
        if let NoiseFamily::UniformScaled { half_width } = noise.family {
            if !(half_width > 0.0) {
                return Err(invalid("uniform noise half-width must be positive"));
            }
        }
        Ok(ProductDistribution {
            signal,
            noise,
            grid: OnceLock::new(),
        })
    }

    pub fn signal(&self) -> &SignalSpec {
        &self.signal
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn dim(&self) -> usize {
        SIGNAL_DIM + self.noise.d_n
    }

    pub fn name(&self) -> &'static str {
        self.signal.kind.label()
    }

    pub fn prior(&self, theta: u8) -> f64 {
        self.signal.prior(theta)
    }

    /// The default-resolution signal quadrature grid, built on first use.
    pub fn signal_grid(&self) -> Arc<crate::dominance::SignalGrid> {
        self.grid
            .get_or_init(|| {
                Arc::new(crate::dominance::SignalGrid::new(
                    &self.signal,
                    crate::dominance::DOMINANCE_GRID,
                ))
            })
            .clone()
    }

    pub fn eta_at(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.signal.eta([x[0], x[1]]))
    }

    pub fn bayes_at(&self, x: &[f64]) -> Result<u8> {
        Ok(u8::from(self.eta_at(x)? >= 0.5))
    }

    /// `E[min(η, 1 − η)]`: zero for realizable laws, else midpoint quadrature.
    pub fn bayes_risk(&self) -> f64 {
        if self.signal.kind.is_realizable() {
            return 0.0;
        }
        let kind = &self.signal.kind;
        grid_integral(kind, RISK_GRID, |s, p| {
            let e = kind.eta(s);
            p * e.min(1.0 - e)
        })
    }

    /// One point from class `theta`, written into `out` (length `d`).
    pub fn sample_point_given(&self, theta: u8, rng: &mut StreamRng, out: &mut [f64]) {
        let s = self.signal.sample_given(theta, rng);
        out[0] = s[0];
        out[1] = s[1];
        self.noise.fill(&mut out[SIGNAL_DIM..], rng);
    }

    /// Draws `(x, y)` from the joint law: label from the prior, then `x | y`.
    pub fn sample_one(&self, rng: &mut StreamRng, out: &mut [f64]) -> u8 {
        let y = u8::from(rng.random::<f64>() < self.signal.pi1);
        self.sample_point_given(y, rng, out);
        y
    }

    pub fn sample_with(&self, n: usize, rng: &mut StreamRng) -> Result<Dataset> {
        if n == 0 {
            return Err(invalid("sample size must be at least 1"));
        }
        let d = self.dim();
        let mut points = vec![0.0; n * d];
        let mut labels = Vec::with_capacity(n);
        for row in points.chunks_exact_mut(d) {
            labels.push(self.sample_one(rng, row));
        }
        Dataset::new(d, points, labels)
    }
}

/// `n` i.i.d. labeled points, deterministic in `(dist, n, seed)`.
pub fn sample(dist: &ProductDistribution, n: usize, seed: u64) -> Result<Dataset> {
    dist.sample_with(n, &mut stream_rng(seed))
}

fn check_presets_dim(d: usize) -> Result<usize> {
    if d < 3 {
        return Err(invalid(format!("dimension must be at least 3, got {d}")));
    }
    Ok(d - SIGNAL_DIM)
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

fn with_normal_noise(kind: SignalKind, d_n: usize) -> Result<ProductDistribution> {
    ProductDistribution::new(SignalSpec::new(kind)?, NoiseSpec::standard_normal(d_n))
}

/// Uniform rectangle, label `1{ζ₁ > 0}`, `d − 2` standard normal noise coordinates.
pub fn make_aligned(a: f64, b: f64, d: usize) -> Result<ProductDistribution> {
    positive("a", a)?;
    positive("b", b)?;
    let d_n = check_presets_dim(d)?;
    with_normal_noise(SignalKind::AlignedRect { a, b }, d_n)
}

/// Uniform rectangle, label `1{ζ₂ > slope·ζ₁}`.
///
/// With the default slope 1/2 the rectangle must satisfy `a > 2b`. The line
/// passes through the center, so classes are balanced for any slope.
pub fn make_rotated(a: f64, b: f64, d: usize, slope: f64) -> Result<ProductDistribution> {
    positive("a", a)?;
    positive("b", b)?;
    if !slope.is_finite() {
        return Err(invalid("slope must be finite"));
    }
    if slope == 0.5 && a <= 2.0 * b {
        return Err(Error::Precondition(format!(
            "rotated preset with slope 1/2 needs a > 2b, got a={a}, b={b}"
        )));
    }
    let d_n = check_presets_dim(d)?;
    with_normal_noise(SignalKind::RotatedRect { a, b, slope }, d_n)
}

/// Uniform rectangle with the piecewise-linear regression function; needs `a > 1`.
pub fn make_ramp(a: f64, b: f64, d: usize) -> Result<ProductDistribution> {
    positive("b", b)?;
    if !(a > 1.0 && a.is_finite()) {
        return Err(invalid(format!("ramp preset needs a > 1, got {a}")));
    }
    let d_n = check_presets_dim(d)?;
    with_normal_noise(SignalKind::RampRect { a, b }, d_n)
}

/// Uniform rectangle, label = indicator of the ellipse `ζ₁² + 16ζ₂² ≤ 8/π`.
pub fn make_ellipse(a: f64, b: f64, d: usize) -> Result<ProductDistribution> {
    positive("a", a)?;
    positive("b", b)?;
    let d_n = check_presets_dim(d)?;
    with_normal_noise(SignalKind::EllipseRect { a, b }, d_n)
}

/// `ζ₁ ~ ¾U[-2,0] + ¼U[0,2]`, `ζ₂ ~ U[-½,½]`, label `1{ζ₁ > 0}`.
pub fn make_unbalanced(d: usize) -> Result<ProductDistribution> {
    let d_n = check_presets_dim(d)?;
    with_normal_noise(
        SignalKind::MixtureRect {
            a: 2.0,
            b: 0.5,
            weight_negative: 0.75,
        },
        d_n,
    )
}

/// `n` labeled points in `ℝ^d`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    points: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(d: usize, points: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if d == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        if labels.is_empty() {
            return Err(invalid("dataset must contain at least one point"));
        }
        if points.len() != labels.len() * d {
            return Err(invalid(format!(
                "{} coordinates do not form {} rows of dimension {d}",
                points.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
            return Err(invalid(format!("labels must be 0 or 1, got {bad}")));
        }
        Ok(Dataset { d, points, labels })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.points.chunks_exact(self.d)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&y| y == 1).count();
        [self.len() - ones, ones]
    }

    /// Rows at `indices`, in that order (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut points = Vec::with_capacity(indices.len() * self.d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            points.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(self.d, points, labels)
    }

    /// CSV with header `x0,…,x{d-1},y`; reals in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.d).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        wtr.write_record(&header)?;
        let mut rec: Vec<String> = Vec::with_capacity(self.d + 1);
        for (row, y) in self.rows().zip(&self.labels) {
            rec.clear();
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            rec.push(y.to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let d = header.len().saturating_sub(1);
        let expected = (0..d).map(|j| format!("x{j}")).chain(std::iter::once("y".to_string()));
        if d == 0 || !header.iter().zip(expected).all(|(h, e)| h == e) {
            return Err(invalid(format!("unexpected dataset header {header:?}")));
        }
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            for field in rec.iter().take(d) {
                points.push(field.parse::<f64>().map_err(|e| invalid(format!("bad coordinate {field:?}: {e}")))?);
            }
            let y = &rec[d];
            labels.push(y.parse::<u8>().map_err(|e| invalid(format!("bad label {y:?}: {e}")))?);
        }
        Dataset::new(d, points, labels)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

//! Chi-square and normal special functions.
//!
//! The noncentral chi-square CDF is the Poisson mixture
//! `F(t; k, λ) = Σ_j Pois(j; λ/2) · P(k/2 + j, t/2)` of regularized lower
//! incomplete gamma functions. The sum starts at the Poisson mode and walks
//! outward in both directions with the recurrences
//! `P(a+1, x) = P(a, x) − xᵃe⁻ˣ/Γ(a+1)` and `w_{j+1} = w_j·(λ/2)/(j+1)`,
//! so only one incomplete gamma evaluation is needed per call. Each direction
//! stops once the remaining Poisson mass is below `POISSON_TAIL`.

use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{invalid, Error, Result};

pub const POISSON_TAIL: f64 = 1e-12;
const MAX_TERMS: usize = 1_000_000;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Central chi-square CDF with `dof` degrees of freedom.
pub fn chi2_cdf(t: f64, dof: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        gamma_lr(0.5 * dof, 0.5 * t)
    }
}

/// `ln(xᵃ e⁻ˣ / Γ(a+1))`, the log of the incomplete-gamma recurrence step.
fn ln_step(a: f64, x: f64) -> f64 {
    a * x.ln() - x - ln_gamma(a + 1.0)
}

/// Noncentral chi-square CDF and density at `t`, computed together.
///
/// `dof` > 0 degrees of freedom, noncentrality `lambda` ≥ 0.
pub fn ncx2_cdf_pdf(t: f64, dof: f64, lambda: f64) -> (f64, f64) {
    if t <= 0.0 {
        let pdf_at_zero = if lambda == 0.0 && dof == 2.0 { 0.5 } else { 0.0 };
        return (0.0, if t == 0.0 { pdf_at_zero } else { 0.0 });
    }
    let x = 0.5 * t;
    let h = 0.5 * lambda;
    let half = 0.5 * dof;
    let mode = h.floor();
    let j0 = mode as usize;
    let ln_w0 = if h > 0.0 {
        -h + mode * h.ln() - ln_gamma(mode + 1.0)
    } else {
        0.0
    };
    let a0 = half + mode;
    let p0 = gamma_lr(a0, x);
    // density of chi2 with 2a dof at t is ½·exp(ln_step(a−1, x))
    let ln_d0 = ln_step(a0 - 1.0, x);

    let mut cdf = 0.0;
    let mut pdf = 0.0;

    // upward from the mode (inclusive)
    {
        let mut ln_w = ln_w0;
        let mut p = p0;
        let mut ln_d = ln_d0; // ln step at a−1
        let mut j = j0;
        for _ in 0..MAX_TERMS {
            let w = ln_w.exp();
            let a = half + j as f64;
            cdf += w * p;
            pdf += 0.5 * (ln_w + ln_d).exp();
            // advance: P(a+1) = P(a) − step(a); step(a) = step(a−1)·x/a
            let ln_step_a = ln_d + x.ln() - a.ln();
            p = (p - ln_step_a.exp()).max(0.0);
            ln_d = ln_step_a;
            if h == 0.0 {
                break;
            }
            ln_w += h.ln() - ((j + 1) as f64).ln();
            j += 1;
            let ratio = h / (j as f64 + 1.0);
            if (j as f64) > h && ln_w.exp() / (1.0 - ratio) < POISSON_TAIL * 1e-3 {
                break;
            }
        }
    }
    // downward from mode−1
    if j0 > 0 {
        let mut ln_w = ln_w0;
        let mut p = p0;
        let mut ln_d = ln_d0;
        let mut j = j0;
        while j > 0 {
            // w_{j−1} = w_j · j / h ; P(a−1) = P(a) + step(a−1)
            ln_w += (j as f64).ln() - h.ln();
            p = (p + ln_d.exp()).min(1.0);
            let a_new = half + (j - 1) as f64;
            // step(a_new − 1) = step(a_new)·a_new/x
            ln_d += a_new.ln() - x.ln();
            j -= 1;
            let w = ln_w.exp();
            cdf += w * p;
            pdf += 0.5 * (ln_w + ln_d).exp();
            let ratio = j as f64 / h;
            if j > 0 && ratio < 1.0 && w * ratio / (1.0 - ratio) < POISSON_TAIL * 1e-3 {
                break;
            }
        }
    }
    (cdf.clamp(0.0, 1.0), pdf.max(0.0))
}

pub fn ncx2_cdf(t: f64, dof: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return chi2_cdf(t, dof);
    }
    ncx2_cdf_pdf(t, dof, lambda).0
}

pub fn ncx2_pdf(t: f64, dof: f64, lambda: f64) -> f64 {
    ncx2_cdf_pdf(t, dof, lambda).1
}

/// Mean and variance of a noncentral chi-square: `(k + λ, 2(k + 2λ))`.
pub fn ncx2_moments(dof: f64, lambda: f64) -> (f64, f64) {
    (dof + lambda, 2.0 * (dof + 2.0 * lambda))
}

/// `g′(t)/g(t)` for the noncentral chi-square density with even `dof` ≥ 4.
///
/// Uses the Bessel-series form
/// `g′/g = −½(1 − (2m+λ)/t) + Σ(j − λ/2)a_j / (t·Σa_j)` with `m = dof/2 − 1`,
/// `a_j = (λt/4)ʲ / (j!(m+j)!)`. Terms are generated relative to the modal
/// term via `a_j/a_{j−1} = (λt/4)/(j(m+j))`, so nothing overflows however
/// large `λt/4` gets.
pub fn ncx2_log_derivative(dof: u32, lambda: f64, t: f64) -> Result<f64> {
    if !dof.is_multiple_of(2) || dof < 4 {
        return Err(invalid(format!("degrees of freedom must be even and >= 4, got {dof}")));
    }
    if !(t > 0.0) {
        return Err(invalid(format!("t must be positive, got {t}")));
    }
    if !(lambda >= 0.0) {
        return Err(invalid(format!("noncentrality must be >= 0, got {lambda}")));
    }
    let m = (dof / 2 - 1) as f64;
    let z = lambda * t / 4.0;
    let base = -0.5 * (1.0 - (2.0 * m + lambda) / t);
    if z == 0.0 {
        // only a_0 survives: Σ(j − λ/2)a_j / Σa_j = −λ/2 = 0
        return Ok(base);
    }
    let jstar = ((-m + (m * m + 4.0 * z).sqrt()) / 2.0).floor().max(0.0) as usize;
    let half_lambda = 0.5 * lambda;
    let mut sum = 1.0;
    let mut wsum = jstar as f64 - half_lambda;
    const REL_TAIL: f64 = 1e-14;

    let mut rel = 1.0;
    let mut j = jstar;
    let mut converged = false;
    for _ in 0..MAX_TERMS {
        j += 1;
        let jf = j as f64;
        let r = z / (jf * (m + jf));
        rel *= r;
        sum += rel;
        wsum += (jf - half_lambda) * rel;
        // past the mode r < 1; bound the remaining tail geometrically
        if r < 1.0 {
            let tail = rel * r / (1.0 - r);
            let wtail = tail * (jf + 1.0 / (1.0 - r) + half_lambda);
            if tail < REL_TAIL * sum && wtail < REL_TAIL * sum.max(wsum.abs()) {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "log-derivative series did not converge (dof={dof}, lambda={lambda}, t={t})"
        )));
    }
    let mut rel = 1.0;
    let mut j = jstar;
    while j > 0 {
        let jf = j as f64;
        rel *= jf * (m + jf) / z;
        j -= 1;
        sum += rel;
        wsum += (j as f64 - half_lambda) * rel;
        if rel < REL_TAIL * 1e-3 * sum {
            break;
        }
    }
    Ok(base + wsum / (t * sum))
}

/// Cubic Hermite table of a noncentral chi-square CDF on `[0, t_max]`.
///
/// Nodes carry both the CDF and its derivative (the density), so the
/// interpolant is C¹ and fourth-order accurate away from `t = 0`.
#[derive(Debug, Clone)]
pub struct Chi2CdfTable {
    step: f64,
    cdf: Vec<f64>,
    pdf: Vec<f64>,
}

impl Chi2CdfTable {
    pub fn new(dof: f64, lambda: f64, nodes: usize) -> Self {
        let (mean, var) = ncx2_moments(dof, lambda);
        let sd = var.sqrt();
        let mut t_max = mean + 12.0 * sd + 20.0;
        for _ in 0..64 {
            if 1.0 - ncx2_cdf(t_max, dof, lambda) <= 1e-14 {
                break;
            }
            t_max += 4.0 * sd;
        }
        let nodes = nodes.max(16);
        let step = t_max / (nodes - 1) as f64;
        let (cdf, pdf): (Vec<f64>, Vec<f64>) = (0..nodes)
            .map(|i| {
                let t = i as f64 * step;
                if i == 0 {
                    (0.0, 0.0)
                } else {
                    ncx2_cdf_pdf(t, dof, lambda)
                }
            })
            .unzip();
        Chi2CdfTable { step, cdf, pdf }
    }

    pub fn t_max(&self) -> f64 {
        self.step * (self.cdf.len() - 1) as f64
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let pos = t / self.step;
        let i = pos.floor() as usize;
        if i + 1 >= self.cdf.len() {
            return 1.0;
        }
        let u = pos - i as f64;
        let (f0, f1) = (self.cdf[i], self.cdf[i + 1]);
        let (d0, d1) = (self.pdf[i] * self.step, self.pdf[i + 1] * self.step);
        let u2 = u * u;
        let u3 = u2 * u;
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        (h00 * f0 + h10 * d0 + h01 * f1 + h11 * d1).clamp(0.0, 1.0)
    }
}

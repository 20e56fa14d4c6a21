//! Special functions backing the Beta posteriors: log-gamma/log-beta,
//! the Beta density and the regularized incomplete beta function.

use crate::error::{Error, Result};

/// `ln B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// `ln C(n, k)` for real-valued `n >= k >= 0`.
pub fn ln_choose(n: f64, k: f64) -> f64 {
    libm::lgamma(n + 1.0) - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0)
}

/// Density of `Beta(a, b)` at `x` given a precomputed `ln B(a, b)`.
#[inline]
pub(crate) fn beta_pdf_with(a: f64, b: f64, ln_b: f64, x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    libm::exp((a - 1.0) * libm::log(x) + (b - 1.0) * libm::log1p(-x) - ln_b)
}

/// Density of `Beta(a, b)` at `x`. Zero outside the open unit interval.
pub fn beta_pdf(a: f64, b: f64, x: f64) -> f64 {
    beta_pdf_with(a, b, ln_beta(a, b), x)
}

/// Regularized incomplete beta function `I_x(a, b)`.
///
/// Evaluated with the Lentz continued fraction, switching to the reflected
/// form `1 - I_{1-x}(b, a)` when `x > (a + 1) / (a + b + 2)` so the fraction
/// always converges quickly.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && a.is_finite()) || !(b > 0.0 && b.is_finite()) {
        return Err(Error::Domain("incomplete beta shape parameters must be positive and finite"));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain("incomplete beta argument must lie in [0, 1]"));
    }
    Ok(inc_beta_with(a, b, ln_beta(a, b), x))
}

/// Unchecked `I_x(a, b)` with a precomputed `ln B(a, b)`. Clamps `x` to [0, 1].
#[inline]
pub(crate) fn inc_beta_with(a: f64, b: f64, ln_b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = libm::exp(a * libm::log(x) + b * libm::log1p(-x) - ln_b);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 10_000;

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

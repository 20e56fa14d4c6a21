//! Exponential-family outcome models and Jeffreys-prior conjugate posteriors.
//!
//! An arm's posterior is summarized by its cumulative sufficient statistic and
//! effective sample count `(stat, count)`. For Bernoulli outcomes under the
//! Jeffreys prior the implied posterior on the success probability is
//! `Beta(stat + 1/2, count - stat + 1/2)`.

use core::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::quadrature;
use crate::special::{beta_pdf_with, inc_beta_with, ln_beta, ln_choose};

/// One-parameter exponential family `p(z | θ) = h(z) exp(θ G(z) - F(θ))`.
pub trait ExponentialFamily {
    fn name(&self) -> &'static str;
    fn z_min(&self) -> f64;
    fn z_max(&self) -> f64;
    /// Sufficient statistic `G`.
    fn sufficient_statistic(&self, z: f64) -> f64;
    /// Base measure `h`.
    fn base_measure(&self, z: f64) -> f64;
    /// Log-normalizer `F`.
    fn log_normalizer(&self, theta: f64) -> f64;
    /// Mean map `μ(θ) = E[Z | θ]`.
    fn mean(&self, theta: f64) -> f64;

    fn density(&self, z: f64, theta: f64) -> f64 {
        self.base_measure(z) * libm::exp(theta * self.sufficient_statistic(z) - self.log_normalizer(theta))
    }
}

/// Bernoulli outcomes: `G(z) = z`, `h = 1`, `θ = ln(q / (1 - q))`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Bernoulli;

impl Bernoulli {
    pub fn natural_from_probability(q: f64) -> f64 {
        libm::log(q / (1.0 - q))
    }

    pub fn probability_from_natural(theta: f64) -> f64 {
        1.0 / (1.0 + libm::exp(-theta))
    }
}

impl ExponentialFamily for Bernoulli {
    fn name(&self) -> &'static str {
        "bernoulli"
    }
    fn z_min(&self) -> f64 {
        0.0
    }
    fn z_max(&self) -> f64 {
        1.0
    }
    fn sufficient_statistic(&self, z: f64) -> f64 {
        z
    }
    fn base_measure(&self, z: f64) -> f64 {
        if z == 0.0 || z == 1.0 {
            1.0
        } else {
            0.0
        }
    }
    fn log_normalizer(&self, theta: f64) -> f64 {
        // ln(1 + e^θ) without overflow
        if theta > 0.0 {
            theta + libm::log1p(libm::exp(-theta))
        } else {
            libm::log1p(libm::exp(theta))
        }
    }
    fn mean(&self, theta: f64) -> f64 {
        Self::probability_from_natural(theta)
    }
}

/// Treatment or control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Arm {
    Control,
    Treatment,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treatment];

    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treatment => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Arm> {
        match i {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treatment),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Control => "control",
            Arm::Treatment => "treatment",
        }
    }

    pub fn parse(s: &str) -> Option<Arm> {
        match s {
            "control" | "0" => Some(Arm::Control),
            "treatment" | "1" => Some(Arm::Treatment),
            _ => None,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sufficient-statistic summary `[s0, s1]` of one arm's posterior.
///
/// `stat` is the cumulative sufficient statistic (successes, for Bernoulli)
/// and `count` the effective number of observations. The fresh Jeffreys state
/// is `(0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArmPosterior {
    pub stat: f64,
    pub count: f64,
}

impl ArmPosterior {
    pub const JEFFREYS: ArmPosterior = ArmPosterior { stat: 0.0, count: 0.0 };

    /// Validated Bernoulli summary: `0 <= stat <= count`.
    pub fn new(stat: f64, count: f64) -> Result<Self> {
        if !(count >= 0.0 && count.is_finite()) {
            return Err(Error::NegativeCount(count));
        }
        if !(stat >= 0.0 && stat <= count) {
            return Err(Error::ImpossibleObservation { statistic: stat, samples: count, min: 0.0, max: count });
        }
        Ok(Self { stat, count })
    }

    /// Conjugate update with a batch of `n` observations whose sufficient
    /// statistics sum to `w`.
    pub fn update(self, w: f64, n: f64) -> Result<Self> {
        self.update_with(&Bernoulli, w, n)
    }

    pub fn update_with<M: ExponentialFamily>(self, model: &M, w: f64, n: f64) -> Result<Self> {
        if !(n >= 0.0 && n.is_finite()) {
            return Err(Error::NegativeCount(n));
        }
        let lo = n * model.sufficient_statistic(model.z_min());
        let hi = n * model.sufficient_statistic(model.z_max());
        if !(w >= lo && w <= hi) {
            return Err(Error::ImpossibleObservation { statistic: w, samples: n, min: lo, max: hi });
        }
        Ok(self.add(w, n))
    }

    #[inline]
    pub(crate) fn add(self, w: f64, n: f64) -> Self {
        Self { stat: self.stat + w, count: self.count + n }
    }

    /// Beta shape parameters implied by the Jeffreys prior.
    #[inline]
    pub fn beta_params(&self) -> (f64, f64) {
        (self.stat + 0.5, self.count - self.stat + 0.5)
    }

    /// Posterior mean of the success probability, `(s0 + 1/2) / (s1 + 1)`.
    pub fn posterior_mean(&self) -> f64 {
        (self.stat + 0.5) / (self.count + 1.0)
    }

    /// Posterior variance of the success probability.
    pub fn posterior_variance(&self) -> f64 {
        let (a, b) = self.beta_params();
        let s = a + b;
        a * b / (s * s * (s + 1.0))
    }

    /// Posterior-predictive probability of `w` successes in `n` new patients.
    pub fn beta_binomial_pmf(&self, n: u64, w: u64) -> Result<f64> {
        if w > n {
            return Err(Error::Domain("beta-binomial outcome exceeds trial count"));
        }
        Ok(self.predictive_pmf(n, w))
    }

    #[inline]
    pub(crate) fn predictive_pmf(&self, n: u64, w: u64) -> f64 {
        let (a, b) = self.beta_params();
        let (n, w) = (n as f64, w as f64);
        libm::exp(ln_choose(n, w) + ln_beta(w + a, n - w + b) - ln_beta(a, b))
    }
}

/// Posteriors of both arms within one subgroup (independent a posteriori).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubgroupPosterior {
    pub control: ArmPosterior,
    pub treatment: ArmPosterior,
}

impl SubgroupPosterior {
    pub fn new(control: ArmPosterior, treatment: ArmPosterior) -> Self {
        Self { control, treatment }
    }

    pub fn arm(&self, arm: Arm) -> &ArmPosterior {
        match arm {
            Arm::Control => &self.control,
            Arm::Treatment => &self.treatment,
        }
    }

    pub fn arm_mut(&mut self, arm: Arm) -> &mut ArmPosterior {
        match arm {
            Arm::Control => &mut self.control,
            Arm::Treatment => &mut self.treatment,
        }
    }

    pub fn swapped(&self) -> Self {
        Self { control: self.treatment, treatment: self.control }
    }

    /// Posterior probability that the treatment is effective,
    /// `P(p1 >= (1 + tau) p0)`.
    pub fn prob_effective(&self, tau: f64) -> Result<f64> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidThreshold(tau));
        }
        Ok(prob_effective_raw(self.control, self.treatment, tau))
    }

    /// [`prob_effective`](Self::prob_effective) computed by quadrature alone,
    /// bypassing the series used at `tau == 0`.
    pub fn prob_effective_quadrature(&self, tau: f64) -> Result<f64> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidThreshold(tau));
        }
        Ok(prob_effective_quadrature(self.control, self.treatment, tau))
    }

    /// Monte Carlo estimate of [`prob_effective`](Self::prob_effective).
    pub fn mc_prob_effective(&self, tau: f64, draws: u64, seed: u64) -> Result<McEstimate> {
        if draws == 0 {
            return Err(Error::Domain("Monte Carlo estimate needs at least one draw"));
        }
        let (a0, b0) = self.control.beta_params();
        let (a1, b1) = self.treatment.beta_params();
        let d0 = Beta::new(a0, b0).map_err(|_| Error::Domain("invalid control Beta posterior"))?;
        let d1 = Beta::new(a1, b1).map_err(|_| Error::Domain("invalid treatment Beta posterior"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factor = 1.0 + tau;
        let mut hits = 0u64;
        for _ in 0..draws {
            let p0: f64 = d0.sample(&mut rng);
            let p1: f64 = d1.sample(&mut rng);
            if p1 >= factor * p0 {
                hits += 1;
            }
        }
        let n = draws as f64;
        let mean = hits as f64 / n;
        Ok(McEstimate { mean, std_error: libm::sqrt(mean * (1.0 - mean) / n) })
    }
}

/// Monte Carlo point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Absolute tolerance used by the adaptive quadrature behind `P_x`.
pub const PROB_EFFECTIVE_TOL: f64 = 1e-9;
const TAIL_MASS: f64 = 1e-12;

/// Support window `[lo, hi]` of `Beta(a, b)` outside of which each tail holds
/// at most `TAIL_MASS`.
fn mass_window(a: f64, b: f64, ln_b: f64) -> (f64, f64) {
    let s = a + b;
    let mean = a / s;
    let sd = libm::sqrt(a * b / (s * s * (s + 1.0)));
    let mut k = 8.0;
    loop {
        let lo = (mean - k * sd).max(0.0);
        let hi = (mean + k * sd).min(1.0);
        let lower_ok = lo == 0.0 || inc_beta_with(a, b, ln_b, lo) <= TAIL_MASS;
        let upper_ok = hi == 1.0 || 1.0 - inc_beta_with(a, b, ln_b, hi) <= TAIL_MASS;
        if lower_ok && upper_ok {
            return (lo, hi);
        }
        k *= 1.5;
    }
}

/// Integrates `g` over `[lo, hi]`. Endpoints touching 0 or 1 are absorbed by
/// a quadratic substitution, which removes the `u^{-1/2}` singularities of
/// half-integer Beta shapes; interior windows are integrated directly.
fn integrate_window<F: Fn(f64) -> f64>(g: F, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    let tol = PROB_EFFECTIVE_TOL;
    match (lo <= 0.0, hi >= 1.0) {
        (false, false) => quadrature::integrate(&g, lo, hi, tol),
        (true, false) => quadrature::integrate(|v| g(lo + width * v * v) * 2.0 * width * v, 0.0, 1.0, tol),
        (false, true) => quadrature::integrate(|v| g(hi - width * v * v) * 2.0 * width * v, 0.0, 1.0, tol),
        (true, true) => quadrature::integrate(
            |phi| {
                let (s, c) = (libm::sin(phi), libm::cos(phi));
                g(lo + width * s * s) * 2.0 * width * s * c
            },
            0.0,
            core::f64::consts::FRAC_PI_2,
            tol,
        ),
    }
}

/// `P(p1 >= (1 + tau) p0)` for independent Jeffreys-Beta posteriors.
///
/// Integrates the density of the more concentrated arm against the CDF of the
/// other one, over the density's mass window.
pub(crate) fn prob_effective_raw(control: ArmPosterior, treatment: ArmPosterior, tau: f64) -> f64 {
    if tau == 0.0 {
        if control == treatment {
            // Two iid continuous draws: either order is equally likely.
            return 0.5;
        }
        let (a0, b0) = control.beta_params();
        let (a1, b1) = treatment.beta_params();
        if let Some(p) = prob_less_than(a0, b0, a1, b1) {
            return p;
        }
    }
    prob_effective_quadrature(control, treatment, tau)
}

const SERIES_EPS: f64 = 1e-17;
const SERIES_MAX_TERMS: usize = 200_000;
const SERIES_RESCALE: f64 = 1e200;

/// `P(X < Y)` for `X ~ Beta(a0, b0)`, `Y ~ Beta(a1, b1)` by the positive
/// series obtained from integrating the hypergeometric expansion of
/// `I_y(a0, b0)` against the density of `Y`. `None` if it fails to converge.
///
/// Terms are kept relative to the first one, whose logarithm is carried
/// separately: for concentrated posteriors the first term underflows while
/// later ones are large. The term ratio crosses 1 at most once, so the terms
/// are unimodal.
fn less_than_series(a0: f64, b0: f64, a1: f64, b1: f64) -> Option<f64> {
    let s = a0 + a1 + b0 + b1;
    let mut ln_scale = ln_beta(a0 + a1, b0 + b1) - libm::log(a0) - ln_beta(a0, b0) - ln_beta(a1, b1);
    let mut term = 1.0;
    let mut sum = 0.0;
    for k in 0..SERIES_MAX_TERMS {
        sum += term;
        let k = k as f64;
        let ratio = (a0 + b0 + k) * (a0 + a1 + k) / ((a0 + 1.0 + k) * (s + k));
        term *= ratio;
        // Past the peak the terms fall off at least like k^-(b1 + 1).
        if ratio < 1.0 && term * (1.0 + (k + 1.0) / b1) <= SERIES_EPS * sum {
            return Some(libm::exp(ln_scale + libm::log(sum + term)));
        }
        if sum > SERIES_RESCALE {
            sum /= SERIES_RESCALE;
            term /= SERIES_RESCALE;
            ln_scale += libm::log(SERIES_RESCALE);
        }
    }
    None
}

/// Smallest tail exponent for which the series is used; below it the terms
/// decay too slowly and the quadrature is cheaper.
const SERIES_MIN_TAIL: f64 = 6.0;

/// `P(X < Y)` through one of its reflected or complementary forms. For each
/// variable the orientation placing it in the lower half of the unit interval
/// is taken, and of those two the one with the heavier tail parameter, which
/// gives the fastest convergence. `None` when no form has a usable tail.
fn prob_less_than(a0: f64, b0: f64, a1: f64, b1: f64) -> Option<f64> {
    // Form i integrates over: 0 p1, 1 p0, 2 1 - p0, 3 1 - p1.
    let over_treatment = if a1 <= b1 { (0, b1) } else { (3, a1) };
    let over_control = if a0 <= b0 { (1, b0) } else { (2, a0) };
    let (best, tail) = if over_treatment.1 >= over_control.1 { over_treatment } else { over_control };
    if tail < SERIES_MIN_TAIL {
        return None;
    }
    let p = match best {
        0 => less_than_series(a0, b0, a1, b1)?,
        1 => 1.0 - less_than_series(a1, b1, a0, b0)?,
        2 => less_than_series(b1, a1, b0, a0)?,
        _ => 1.0 - less_than_series(b0, a0, b1, a1)?,
    };
    Some(p.clamp(0.0, 1.0))
}

/// Quadrature form of `P(p1 >= (1 + tau) p0)`, valid for every `tau`.
pub(crate) fn prob_effective_quadrature(control: ArmPosterior, treatment: ArmPosterior, tau: f64) -> f64 {
    let factor = 1.0 + tau;
    let (a0, b0) = control.beta_params();
    let (a1, b1) = treatment.beta_params();
    let lb0 = ln_beta(a0, b0);
    let lb1 = ln_beta(a1, b1);
    let sd0 = factor * libm::sqrt(control.posterior_variance());
    let sd1 = libm::sqrt(treatment.posterior_variance());

    let v = if sd0 <= sd1 {
        // ∫ f0(u) (1 - F1((1+τ)u)) du over u < 1/(1+τ)
        let (lo, hi) = mass_window(a0, b0, lb0);
        let hi = hi.min(1.0 / factor);
        if hi <= lo {
            return 0.0;
        }
        integrate_window(
            |u| beta_pdf_with(a0, b0, lb0, u) * (1.0 - inc_beta_with(a1, b1, lb1, factor * u)),
            lo,
            hi,
        )
    } else {
        // ∫ f1(t) F0(t/(1+τ)) dt
        let (lo, hi) = mass_window(a1, b1, lb1);
        integrate_window(|t| beta_pdf_with(a1, b1, lb1, t) * inc_beta_with(a0, b0, lb0, t / factor), lo, hi)
    };
    v.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arm(stat: f64, count: f64) -> ArmPosterior {
        ArmPosterior::new(stat, count).unwrap()
    }

    #[test]
    fn update_examples() {
        let p = ArmPosterior::JEFFREYS.update(3.0, 5.0).unwrap();
        assert_eq!(p, arm(3.0, 5.0));
        assert!((p.posterior_mean() - 3.5 / 6.0).abs() < 1e-15);
        assert_eq!(arm(2.0, 4.0).update(0.0, 0.0).unwrap(), arm(2.0, 4.0));
        let s = arm(1.0, 7.0);
        let two = s.update(1.0, 2.0).unwrap().update(2.0, 3.0).unwrap();
        assert_eq!(two, s.update(3.0, 5.0).unwrap());
    }

    #[test]
    fn update_rejects_impossible() {
        assert!(matches!(arm(0.0, 0.0).update(6.0, 5.0), Err(Error::ImpossibleObservation { .. })));
        assert!(matches!(arm(0.0, 0.0).update(-1.0, 5.0), Err(Error::ImpossibleObservation { .. })));
        assert!(matches!(arm(0.0, 0.0).update(0.0, -1.0), Err(Error::NegativeCount(_))));
        assert!(ArmPosterior::new(3.0, 2.0).is_err());
    }

    #[test]
    fn posterior_means() {
        assert_eq!(ArmPosterior::JEFFREYS.posterior_mean(), 0.5);
        assert!((arm(10.0, 10.0).posterior_mean() - 10.5 / 11.0).abs() < 1e-15);
        assert!((arm(0.0, 10.0).posterior_mean() - 0.5 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn posterior_variances() {
        assert!((ArmPosterior::JEFFREYS.posterior_variance() - 0.125).abs() < 1e-15);
        assert!((arm(1.5, 3.0).posterior_variance() - 0.05).abs() < 1e-15);
        assert!(arm(5.0, 10.0).posterior_variance() > arm(50.0, 100.0).posterior_variance());
    }

    #[test]
    fn predictive_examples() {
        let fresh = ArmPosterior::JEFFREYS;
        assert!((fresh.beta_binomial_pmf(1, 1).unwrap() - 0.5).abs() < 1e-14);
        // Pólya urn: P(0,0) = 0.5 * 0.75.
        assert!((fresh.beta_binomial_pmf(2, 0).unwrap() - 0.375).abs() < 1e-14);
        assert!((fresh.beta_binomial_pmf(2, 1).unwrap() - 0.25).abs() < 1e-14);
        assert!((fresh.beta_binomial_pmf(2, 2).unwrap() - 0.375).abs() < 1e-14);
        assert!(fresh.beta_binomial_pmf(2, 3).is_err());
    }

    #[test]
    fn predictive_matches_two_draw_integral() {
        // P(W = w | n = 2) = ∫ C(2,w) p^w (1-p)^(2-w) Beta(p; a, b) dp by midpoint rule.
        let s = arm(1.0, 3.0);
        let (a, b) = s.beta_params();
        let lb = ln_beta(a, b);
        let n = 400_000;
        let h = 1.0 / n as f64;
        for w in 0..=2u32 {
            let c = [1.0, 2.0, 1.0][w as usize];
            let total: f64 = (0..n)
                .map(|i| {
                    let p = (i as f64 + 0.5) * h;
                    c * libm::pow(p, w as f64) * libm::pow(1.0 - p, (2 - w) as f64) * beta_pdf_with(a, b, lb, p) * h
                })
                .sum();
            assert!((total - s.beta_binomial_pmf(2, w as u64).unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn symmetric_posteriors_are_even() {
        for &(s, n) in &[(0.0, 0.0), (3.0, 7.0), (40.0, 100.0), (0.0, 250.0)] {
            let sp = SubgroupPosterior::new(arm(s, n), arm(s, n));
            let p = sp.prob_effective(0.0).unwrap();
            assert!((p - 0.5).abs() < 1e-9, "{s}/{n}: {p}");
        }
    }

    #[test]
    fn fresh_vs_saturated_matches_monte_carlo() {
        let sp = SubgroupPosterior::new(ArmPosterior::JEFFREYS, arm(20.0, 20.0));
        let p = sp.prob_effective(0.0).unwrap();
        let mc = sp.mc_prob_effective(0.0, 1_000_000, 11).unwrap();
        assert!((p - mc.mean).abs() <= 3.0 * mc.std_error, "{p} vs {mc:?}");
    }

    #[test]
    fn threshold_monotone_and_validated() {
        let sp = SubgroupPosterior::new(arm(10.0, 30.0), arm(14.0, 30.0));
        assert!(sp.prob_effective(0.5).unwrap() <= sp.prob_effective(0.0).unwrap());
        assert!(matches!(sp.prob_effective(-0.1), Err(Error::InvalidThreshold(_))));
    }

    #[test]
    fn monte_carlo_deterministic() {
        let sp = SubgroupPosterior::new(arm(2.0, 9.0), arm(5.0, 8.0));
        let a = sp.mc_prob_effective(0.1, 10_000, 3).unwrap();
        let b = sp.mc_prob_effective(0.1, 10_000, 3).unwrap();
        assert_eq!(a, b);
        assert!(sp.mc_prob_effective(0.1, 0, 3).is_err());
    }

    #[test]
    fn bernoulli_family() {
        let m = Bernoulli;
        let theta = Bernoulli::natural_from_probability(0.3);
        assert!((m.mean(theta) - 0.3).abs() < 1e-15);
        assert!((m.density(1.0, theta) - 0.3).abs() < 1e-15);
        assert!((m.density(0.0, theta) - 0.7).abs() < 1e-15);
        assert!(m.z_min() < m.z_max());
    }
}

//! Generalized normal calculus.
//!
//! A *generalized normal* `N(x; mu, sigma)` is an ordinary Gaussian density
//! for `sigma > 0` and degenerates to a unit impulse located at `mu` for
//! `sigma = 0`. Treating the impulse as a first-class citizen lets exact
//! values, noisy readings and model marginals share one algebra: products
//! and overlaps of generalized normals stay inside the family, with the
//! impulse cases reducing to sifting and point evaluation.
//!
//! Degenerate conventions (all arise as limits `sigma -> 0`):
//!
//! * density of an impulse is reported as the indicator `1{x == mu}`,
//! * the overlap of an impulse with a density is the density evaluated at
//!   the impulse location; two impulses overlap with `1{mu_a == mu_b}`,
//! * the interval mass of an impulse is `1{a <= mu <= b}`.
//!
//! All operations come in linear and log variants; the log forms are what
//! inference and learning use internally so that products of many small
//! likelihoods do not underflow.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// `sqrt(2)`.
const SQRT_2: f64 = std::f64::consts::SQRT_2;
/// `sqrt(2 * pi)`.
const SQRT_2PI: f64 = 2.506_628_274_631_000_2;
/// `ln(sqrt(2 * pi))`.
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// A Gaussian density generalized to include the impulse limit `sigma = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizedNormal {
    /// Location (mean for `sigma > 0`, impulse position for `sigma = 0`).
    pub mu: f64,
    /// Dispersion; `0` denotes an impulse. Never negative or non-finite.
    pub sigma: f64,
}

impl GeneralizedNormal {
    /// Builds a generalized normal, validating `mu` finite and `sigma`
    /// finite and non-negative.
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::InvalidGn(format!("location {mu} is not finite")));
        }
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidGn(format!(
                "dispersion {sigma} is not finite and non-negative"
            )));
        }
        Ok(Self { mu, sigma })
    }

    /// An impulse (all probability mass at `mu`).
    pub fn impulse(mu: f64) -> Self {
        Self { mu, sigma: 0.0 }
    }

    /// Whether this is the degenerate impulse case.
    pub fn is_impulse(&self) -> bool {
        self.sigma == 0.0
    }

    /// Density at `x`. Impulses report the indicator `1{x == mu}`.
    pub fn pdf(&self, x: f64) -> f64 {
        if self.is_impulse() {
            if x == self.mu {
                1.0
            } else {
                0.0
            }
        } else {
            let u = (x - self.mu) / self.sigma;
            (-0.5 * u * u).exp() / (self.sigma * SQRT_2PI)
        }
    }

    /// Natural log of [`pdf`](Self::pdf); `-inf` where the density is zero.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if self.is_impulse() {
            if x == self.mu {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        } else {
            let u = (x - self.mu) / self.sigma;
            -0.5 * u * u - self.sigma.ln() - LN_SQRT_2PI
        }
    }

    /// Cumulative distribution `P{X <= x}`. For an impulse this is the unit
    /// step at `mu` (with `F(mu) = 1`).
    pub fn cdf(&self, x: f64) -> f64 {
        if self.is_impulse() {
            if x >= self.mu {
                1.0
            } else {
                0.0
            }
        } else {
            std_normal_cdf((x - self.mu) / self.sigma)
        }
    }

    /// Pointwise product, reduced back into the family:
    ///
    /// `N(x; mu_a, s_a) * N(x; mu_b, s_b) = scale * N(x; eta, eps)`
    ///
    /// with `eta = (s_a^2 mu_b + s_b^2 mu_a) / (s_a^2 + s_b^2)`,
    /// `eps^2 = s_a^2 s_b^2 / (s_a^2 + s_b^2)` and
    /// `scale = N(mu_a; mu_b, sqrt(s_a^2 + s_b^2))` — the overlap of the two
    /// factors. With one impulse factor this is the sifting property; with
    /// two impulses the scale is the indicator of coincident locations.
    pub fn product(&self, other: &Self) -> (Self, f64) {
        let (gn, ln_scale) = self.ln_product(other);
        (gn, ln_scale.exp())
    }

    /// [`product`](Self::product) with the scale in log space.
    pub fn ln_product(&self, other: &Self) -> (Self, f64) {
        let ln_scale = self.ln_overlap(other);
        if self.is_impulse() && other.is_impulse() {
            // Coincident impulses keep the location; distinct ones are an
            // impossible event (scale 0) and the location is moot — keep the
            // first for determinism.
            return (Self::impulse(self.mu), ln_scale);
        }
        let va = self.sigma * self.sigma;
        let vb = other.sigma * other.sigma;
        let denom = va + vb;
        let eta = (va * other.mu + vb * self.mu) / denom;
        let eps = ((va * vb) / denom).sqrt();
        (Self { mu: eta, sigma: eps }, ln_scale)
    }

    /// Overlap integral of two generalized normals,
    /// `int N(x; mu_a, s_a) N(x; mu_b, s_b) dx = N(mu_a; mu_b, sqrt(s_a^2 + s_b^2))`.
    ///
    /// With one impulse this evaluates the other factor at the impulse
    /// location; with two impulses it is the indicator `1{mu_a == mu_b}`.
    pub fn overlap(&self, other: &Self) -> f64 {
        self.ln_overlap(other).exp()
    }

    /// [`overlap`](Self::overlap) in log space; `-inf` where the overlap is
    /// zero.
    pub fn ln_overlap(&self, other: &Self) -> f64 {
        let rho = (self.sigma * self.sigma + other.sigma * other.sigma).sqrt();
        Self { mu: other.mu, sigma: rho }.ln_pdf(self.mu)
    }

    /// Probability mass on `[a, b]`. Infinite bounds are allowed; an
    /// impulse contributes the indicator `1{a <= mu <= b}`.
    pub fn interval_mass(&self, a: f64, b: f64) -> Result<f64> {
        if a.is_nan() || b.is_nan() || a > b {
            return Err(Error::InvalidInterval { a, b });
        }
        if self.is_impulse() {
            Ok(if a <= self.mu && self.mu <= b { 1.0 } else { 0.0 })
        } else {
            Ok(self.cdf(b) - self.cdf(a))
        }
    }

    /// Draws one value: `mu + sigma * eps` with `eps ~ N(0, 1)` (an impulse
    /// always yields `mu`).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let eps: f64 = rng.sample(StandardNormal);
        self.mu + self.sigma * eps
    }
}

/// Standard normal density `phi(u)`; zero at `u = +/-inf`.
pub fn std_normal_pdf(u: f64) -> f64 {
    if u.is_infinite() {
        return 0.0;
    }
    (-0.5 * u * u).exp() / SQRT_2PI
}

/// Standard normal CDF via the complementary error function (keeps full
/// precision in the far left tail where `1 - Phi(-u)` would cancel).
pub fn std_normal_cdf(u: f64) -> f64 {
    if u == f64::NEG_INFINITY {
        return 0.0;
    }
    if u == f64::INFINITY {
        return 1.0;
    }
    0.5 * libm::erfc(-u / SQRT_2)
}

/// Log-sum-exp over a slice, reduced in slice order. Returns `-inf` for an
/// empty slice or when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &x in xs {
        if x > max {
            max = x;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for &x in xs {
        sum += (x - max).exp();
    }
    max + sum.ln()
}

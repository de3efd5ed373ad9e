//! Shared numerical primitives: stable normal tail/mass computations,
//! log-sum-exp, and inverse-gamma moment algebra.
//!
//! Everything here is written to stay accurate far into the tails, where the
//! mixture weights and threshold masses of the model live. Masses are carried
//! in log space throughout.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use statrs::function::gamma::{digamma, ln_gamma};

/// ln(2 * pi).
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Log density of Normal(mean, var) at `x`.
pub fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = x - mean;
    -0.5 * (LN_2PI + var.ln() + z * z / var)
}

/// Log density of the standard normal at `z`.
pub fn ln_std_normal_pdf(z: f64) -> f64 {
    -0.5 * (LN_2PI + z * z)
}

/// Standard normal CDF, accurate in both tails via erfc.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// ln P(Z > z) for standard normal Z, valid over the whole real line.
///
/// Uses erfc until it underflows, then the continued asymptotic expansion
/// ln P = -z^2/2 - ln(z sqrt(2 pi)) + ln(1 - 1/z^2 + 3/z^4 - 15/z^6).
pub fn ln_std_normal_tail(z: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    if z == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if z < 36.0 {
        let t = 0.5 * erfc(z / std::f64::consts::SQRT_2);
        if t > 0.0 {
            return t.ln();
        }
    }
    let zi = 1.0 / (z * z);
    -0.5 * z * z - z.ln() - 0.5 * LN_2PI + (1.0 - zi * (1.0 - zi * (3.0 - 15.0 * zi))).ln()
}

/// ln(1 - e^x) for x < 0, stable near both ends.
pub fn ln1mexp(x: f64) -> f64 {
    debug_assert!(x <= 0.0);
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// ln P(a < Z < b) for standard normal Z; bounds may be infinite.
///
/// Returns negative infinity for an empty interval.
pub fn ln_std_normal_mass(a: f64, b: f64) -> f64 {
    debug_assert!(!a.is_nan() && !b.is_nan());
    if b <= a {
        return f64::NEG_INFINITY;
    }
    if a >= 0.0 {
        // Both bounds in the upper tail: difference of upper-tail masses.
        let la = ln_std_normal_tail(a);
        let lb = ln_std_normal_tail(b);
        if lb == f64::NEG_INFINITY {
            la
        } else {
            la + ln1mexp(lb - la)
        }
    } else if b <= 0.0 {
        ln_std_normal_mass(-b, -a)
    } else {
        // Interval straddles 0; both tail masses are at most 1/2, so the
        // linear-space difference is stable.
        let mass = 1.0 - ln_std_normal_tail(b).exp() - ln_std_normal_tail(-a).exp();
        mass.ln()
    }
}

/// ln P(lo < X < hi) for X ~ Normal(mean, sd^2).
pub fn ln_normal_mass(lo: f64, hi: f64, mean: f64, sd: f64) -> f64 {
    debug_assert!(sd > 0.0);
    ln_std_normal_mass((lo - mean) / sd, (hi - mean) / sd)
}

/// Standard normal quantile, polished with two Newton steps against the
/// erfc-based CDF so round-trips hold near machine precision.
pub fn std_normal_quantile(p: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p));
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x = n.inverse_cdf(p);
    for _ in 0..2 {
        let err = std_normal_cdf(x) - p;
        let pdf = ln_std_normal_pdf(x).exp();
        if pdf <= 0.0 {
            break;
        }
        x -= err / pdf;
    }
    x
}

/// log(sum(exp(vals))) with the usual max shift; empty input yields -inf.
pub fn logsumexp(vals: &[f64]) -> f64 {
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = vals.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Inverse-gamma distribution in shape/rate form:
/// p(x) = rate^shape / Gamma(shape) * x^(-shape-1) * exp(-rate / x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGamma {
    pub shape: f64,
    pub rate: f64,
}

impl InvGamma {
    pub fn new(shape: f64, rate: f64) -> Self {
        debug_assert!(shape > 0.0 && rate > 0.0, "inverse-gamma parameters must be positive");
        Self { shape, rate }
    }

    /// Log density at `x > 0`.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        debug_assert!(x > 0.0);
        self.shape * self.rate.ln() - ln_gamma(self.shape) - (self.shape + 1.0) * x.ln()
            - self.rate / x
    }

    /// E[1/X] (the reciprocal is Gamma(shape, rate)).
    pub fn mean_inv(&self) -> f64 {
        self.shape / self.rate
    }

    /// E[ln X].
    pub fn mean_ln(&self) -> f64 {
        self.rate.ln() - digamma(self.shape)
    }

    /// E[X]; defined for shape > 1, otherwise falls back to the mode so
    /// summaries of heavy-tailed factors stay finite.
    pub fn mean_or_mode(&self) -> f64 {
        if self.shape > 1.0 {
            self.rate / (self.shape - 1.0)
        } else {
            self.rate / (self.shape + 1.0)
        }
    }

    /// Differential entropy.
    pub fn entropy(&self) -> f64 {
        self.shape + self.rate.ln() + ln_gamma(self.shape)
            - (1.0 + self.shape) * digamma(self.shape)
    }

    /// Exact draw via the reciprocal gamma.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        use rand_distr::Distribution;
        let g = rand_distr::Gamma::new(self.shape, 1.0 / self.rate).expect("valid gamma");
        1.0 / g.sample(rng)
    }
}

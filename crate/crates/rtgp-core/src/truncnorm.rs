//! Truncated normal distribution: masses, moments, entropy, and exact
//! sampling.
//!
//! The latent updates spend most of their time in truncated-normal algebra,
//! often far into the tails, so every quantity here is computed through log
//! masses and density ratios rather than raw CDF differences.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::special::{
    ln_normal_mass, ln_std_normal_pdf, std_normal_cdf, std_normal_quantile, LN_2PI,
};

/// Intervals at least this many standard deviations into a tail use the
/// rejection sampler instead of the inverse CDF.
const TAIL_REGIME: f64 = 5.0;

/// Normal(mean, sd^2) restricted to the open interval (lower, upper).
/// Bounds may be infinite; `lower < upper` and `sd > 0` are enforced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, sd: f64, lower: f64, upper: f64) -> Result<Self> {
        if !mean.is_finite() || !sd.is_finite() || sd <= 0.0 {
            return Err(invalid(format!(
                "truncated normal needs finite mean and positive sd, got mean {mean}, sd {sd}"
            )));
        }
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(invalid(format!(
                "degenerate truncation interval ({lower}, {upper})"
            )));
        }
        Ok(Self { mean, sd, lower, upper })
    }

    fn bounds_std(&self) -> (f64, f64) {
        ((self.lower - self.mean) / self.sd, (self.upper - self.mean) / self.sd)
    }

    /// ln P(lower < X < upper) under the *untruncated* normal: the
    /// normalizing constant, and the mixture weight contribution.
    pub fn ln_mass(&self) -> f64 {
        ln_normal_mass(self.lower, self.upper, self.mean, self.sd)
    }

    /// Density ratios (phi(a)/Z, phi(b)/Z) and the moment helper
    /// g = a phi(a)/Z - b phi(b)/Z, with infinite bounds contributing zero.
    fn ratios(&self) -> (f64, f64, f64) {
        let (a, b) = self.bounds_std();
        let ln_z = ln_normal_mass(self.lower, self.upper, self.mean, self.sd);
        let r = |t: f64| {
            if t.is_infinite() {
                0.0
            } else {
                (ln_std_normal_pdf(t) - ln_z).exp()
            }
        };
        let (ra, rb) = (r(a), r(b));
        let term = |t: f64, rt: f64| if t.is_infinite() { 0.0 } else { t * rt };
        (ra, rb, term(a, ra) - term(b, rb))
    }

    pub fn mean(&self) -> f64 {
        let (ra, rb, _) = self.ratios();
        self.mean + self.sd * (ra - rb)
    }

    pub fn variance(&self) -> f64 {
        let (ra, rb, g) = self.ratios();
        let d = ra - rb;
        (self.sd * self.sd * (1.0 + g - d * d)).max(f64::MIN_POSITIVE)
    }

    pub fn second_moment(&self) -> f64 {
        let m = self.mean();
        self.variance() + m * m
    }

    /// Differential entropy: ln(sd sqrt(2 pi e)) + ln Z + g / 2.
    pub fn entropy(&self) -> f64 {
        let (_, _, g) = self.ratios();
        0.5 * (LN_2PI + 1.0) + self.sd.ln() + self.ln_mass() + 0.5 * g
    }

    /// Exact draw, always strictly inside (lower, upper).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (a, b) = self.bounds_std();
        let z = if a == f64::NEG_INFINITY && b == f64::INFINITY {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        } else if a >= TAIL_REGIME {
            sample_upper_tail(a, b, rng)
        } else if b <= -TAIL_REGIME {
            -sample_upper_tail(-b, -a, rng)
        } else {
            // Central regime: inverse CDF on the mass between the bounds.
            let ca = if a == f64::NEG_INFINITY { 0.0 } else { std_normal_cdf(a) };
            let cb = if b == f64::INFINITY { 1.0 } else { std_normal_cdf(b) };
            let u: f64 = rng.random();
            std_normal_quantile(ca + u * (cb - ca))
        };
        let x = self.mean + self.sd * z;
        // Quantile round-off can land exactly on a bound; nudge inward.
        x.max(next_above(self.lower)).min(next_below(self.upper))
    }
}

/// Draw from the untruncated-normal convenience path of the public sampler.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> Result<f64> {
    Ok(TruncatedNormal::new(mean, sd, lower, upper)?.sample(rng))
}

/// Standard normal restricted to (a, b) with a >= TAIL_REGIME.
fn sample_upper_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    // Translated-exponential rejection with the optimal rate.
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    if b.is_finite() && (b - a) * lambda < 0.1 {
        // Very narrow far interval: uniform proposal, bounded-below
        // acceptance exp(-(x^2 - a^2)/2) >= exp(-0.1 b / lambda).
        loop {
            let x = a + (b - a) * rng.random::<f64>();
            let ln_acc = -0.5 * (x * x - a * a);
            if rng.random::<f64>().ln() <= ln_acc {
                return x;
            }
        }
    }
    loop {
        let e: f64 = rng.sample(rand_distr::Exp1);
        let x = a + e / lambda;
        if x >= b {
            continue;
        }
        let diff = x - lambda;
        if rng.random::<f64>().ln() <= -0.5 * diff * diff {
            return x;
        }
    }
}

fn next_above(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        x
    } else {
        x.next_up()
    }
}

fn next_below(x: f64) -> f64 {
    if x == f64::INFINITY {
        x
    } else {
        x.next_down()
    }
}

//! Quadrature and distributional oracles for the truncated normal.
//!
//! Moments and entropy are checked against direct numerical integration of
//! the density, and the sampler against the analytic CDF via a
//! Kolmogorov-Smirnov statistic.

use rtgp_core::rng::substream;
use rtgp_core::special::{ln_normal_pdf, ln_std_normal_tail};
use rtgp_core::truncnorm::TruncatedNormal;

/// Composite Simpson integration of f over [lo, hi].
fn simpson(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let n = n + n % 2;
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

fn check_against_quadrature(mean: f64, sd: f64, lower: f64, upper: f64) {
    let tn = TruncatedNormal::new(mean, sd, lower, upper).unwrap();
    let ln_z = tn.ln_mass();
    // Finite bounds integrate exactly; infinite ones are clipped where the
    // truncated density has decayed below 1e-20 of its peak.
    let lo = if lower.is_finite() { lower } else { mean - 10.0 * sd };
    let hi = if upper.is_finite() {
        upper
    } else {
        let a = ((lo - mean) / sd).max(0.0);
        mean + sd * 10.0_f64.max(a + 50.0 / a.max(1.0))
    };
    let dens = |x: f64| (ln_normal_pdf(x, mean, sd * sd) - ln_z).exp();
    let mass = simpson(lo, hi, 40_000, &dens);
    let m1 = simpson(lo, hi, 40_000, |x| x * dens(x));
    let m2 = simpson(lo, hi, 40_000, |x| x * x * dens(x));
    let ent = simpson(lo, hi, 40_000, |x| {
        let p = dens(x);
        if p > 0.0 {
            -p * p.ln()
        } else {
            0.0
        }
    });
    assert!((mass - 1.0).abs() < 1e-9, "({lower},{upper}): mass {mass}");
    assert!((tn.mean() - m1).abs() < 1e-8 * sd.max(1.0), "mean {} vs {m1}", tn.mean());
    let var_q = m2 - m1 * m1;
    assert!(
        (tn.variance() - var_q).abs() < 1e-7 * (sd * sd).max(1.0),
        "variance {} vs {var_q}",
        tn.variance()
    );
    assert!((tn.entropy() - ent).abs() < 1e-7, "entropy {} vs {ent}", tn.entropy());
    let sm = tn.second_moment();
    assert!((sm - m2).abs() < 1e-7 * (sd * sd + mean * mean).max(1.0));
}

#[test]
fn moments_match_quadrature_across_regimes() {
    check_against_quadrature(0.0, 1.0, -0.5, 0.5);
    check_against_quadrature(0.3, 1.2, -1.0, 2.0);
    check_against_quadrature(0.0, 1.0, 0.0, f64::INFINITY);
    check_against_quadrature(-2.0, 0.7, f64::NEG_INFINITY, -1.5);
    check_against_quadrature(1.0, 2.0, 3.0, 4.0);
    check_against_quadrature(0.0, 1.0, 10.0, 11.0);
    check_against_quadrature(0.0, 1.0, -0.001, 0.001);
}

/// Analytic CDF at x inside (lower, upper), computed through log tail
/// masses so the far-tail case stays accurate.
fn tn_cdf(tn_mean: f64, sd: f64, lower: f64, upper: f64, x: f64) -> f64 {
    let t = |v: f64| ln_std_normal_tail((v - tn_mean) / sd);
    let (ta, tx) = (t(lower), t(x));
    let tb = t(upper);
    let num = 1.0 - (tx - ta).exp();
    let den = 1.0 - (tb - ta).exp();
    num / den
}

fn ks_statistic(mut draws: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = draws.len() as f64;
    draws
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let lo = (f - i as f64 / n).abs();
            let hi = ((i + 1) as f64 / n - f).abs();
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

#[test]
fn sampler_matches_cdf_in_all_regimes() {
    let cases = [
        (0.0, 1.0, -0.7, 1.3, "tn-ks-central"),
        (2.0, 0.5, 2.5, f64::INFINITY, "tn-ks-halfline"),
        (0.0, 1.0, 10.0, 11.0, "tn-ks-tail"),
    ];
    let n = 100_000;
    // 1% critical value for the one-sample KS test.
    let crit = 1.63 / (n as f64).sqrt();
    for (mean, sd, lower, upper, stream) in cases {
        let tn = TruncatedNormal::new(mean, sd, lower, upper).unwrap();
        let mut rng = substream(7, stream);
        let draws: Vec<f64> = (0..n).map(|_| tn.sample(&mut rng)).collect();
        let ks = ks_statistic(draws, |x| tn_cdf(mean, sd, lower, upper, x));
        assert!(ks < crit, "{stream}: KS {ks} >= {crit}");
    }
}

#[test]
fn half_normal_mean_agrees_with_formula() {
    let tn = TruncatedNormal::new(0.0, 1.0, 0.0, f64::INFINITY).unwrap();
    let mut rng = substream(11, "tn-halfnormal");
    let n = 200_000;
    let mean = (0..n).map(|_| tn.sample(&mut rng)).sum::<f64>() / n as f64;
    let expect = (2.0 / std::f64::consts::PI).sqrt();
    let se = ((1.0 - 2.0 / std::f64::consts::PI) / n as f64).sqrt();
    assert!((mean - expect).abs() < 4.0 * se, "mean {mean} vs {expect} (se {se})");
}

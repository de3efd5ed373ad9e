//! Thresholding functions for sparse coefficient maps.
//!
//! `hard_threshold` and `soft_threshold` act on a value directly; the relaxed
//! variant gates a value by a separate latent, which is what gives the model
//! its decoupled smoothness/sparsity structure.

use ndarray::ArrayView1;

use crate::error::{invalid, Result};

/// A validated threshold level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdParam {
    delta: f64,
}

impl ThresholdParam {
    /// Requires a finite `delta >= 0`.
    pub fn new(delta: f64) -> Result<Self> {
        if !delta.is_finite() || delta < 0.0 {
            return Err(invalid(format!(
                "threshold must be finite and nonnegative, got {delta}"
            )));
        }
        Ok(Self { delta })
    }

    pub fn value(self) -> f64 {
        self.delta
    }
}

/// x if |x| > delta, else 0. The boundary |x| = delta maps to 0.
pub fn hard_threshold(x: f64, delta: f64) -> f64 {
    debug_assert!(delta >= 0.0);
    if x.abs() > delta {
        x
    } else {
        0.0
    }
}

/// sgn(x) * (|x| - delta) if |x| > delta, else 0. Continuous in x.
pub fn soft_threshold(x: f64, delta: f64) -> f64 {
    debug_assert!(delta >= 0.0);
    if x.abs() > delta {
        x.signum() * (x.abs() - delta)
    } else {
        0.0
    }
}

/// x if |x_latent| > delta, else 0: the value is gated by the latent alone.
pub fn relaxed_threshold(x: f64, x_latent: f64, delta: f64) -> f64 {
    debug_assert!(delta >= 0.0);
    if x_latent.abs() > delta {
        x
    } else {
        0.0
    }
}

/// Elementwise `relaxed_threshold` of a field against its latents.
pub fn apply_relaxed_field(
    beta_tilde: ArrayView1<'_, f64>,
    alpha: ArrayView1<'_, f64>,
    delta: f64,
) -> Result<Vec<f64>> {
    if beta_tilde.len() != alpha.len() {
        return Err(invalid(format!(
            "field has {} vertices but latents have {}",
            beta_tilde.len(),
            alpha.len()
        )));
    }
    Ok(beta_tilde
        .iter()
        .zip(alpha.iter())
        .map(|(&b, &a)| relaxed_threshold(b, a, delta))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hard_threshold_examples() {
        assert_eq!(hard_threshold(0.3, 0.5), 0.0);
        assert_eq!(hard_threshold(0.8, 0.5), 0.8);
        assert_eq!(hard_threshold(-0.7, 0.5), -0.7);
        // Boundary is strict.
        assert_eq!(hard_threshold(0.5, 0.5), 0.0);
        assert_eq!(hard_threshold(-0.5, 0.5), 0.0);
    }

    #[test]
    fn soft_threshold_examples() {
        assert!((soft_threshold(0.8, 0.5) - 0.3).abs() < 1e-15);
        assert!((soft_threshold(-0.7, 0.5) + 0.2).abs() < 1e-15);
        assert_eq!(soft_threshold(0.5, 0.5), 0.0);
    }

    #[test]
    fn relaxed_threshold_examples() {
        assert_eq!(relaxed_threshold(1.2, 0.1, 0.5), 0.0);
        assert_eq!(relaxed_threshold(0.2, 0.9, 0.5), 0.2);
        for (x, d) in [(0.3, 0.5), (0.8, 0.5), (-0.7, 0.5), (0.5, 0.5)] {
            assert_eq!(relaxed_threshold(x, x, d), hard_threshold(x, d));
        }
    }

    #[test]
    fn relaxed_field_cases() {
        let beta = array![1.0, -1.0];
        let zero_latents = array![0.0, 0.0];
        assert_eq!(
            apply_relaxed_field(beta.view(), zero_latents.view(), 0.5).unwrap(),
            vec![0.0, 0.0]
        );
        let big_latents = array![2.0, -2.0];
        assert_eq!(
            apply_relaxed_field(beta.view(), big_latents.view(), 0.5).unwrap(),
            vec![1.0, -1.0]
        );
        let mixed = array![0.6, 0.4];
        assert_eq!(
            apply_relaxed_field(beta.view(), mixed.view(), 0.5).unwrap(),
            vec![1.0, 0.0]
        );
        assert!(apply_relaxed_field(beta.view(), array![1.0].view(), 0.5).is_err());
    }

    #[test]
    fn threshold_param_validation() {
        assert!(ThresholdParam::new(0.0).is_ok());
        assert!(ThresholdParam::new(-0.1).is_err());
        assert!(ThresholdParam::new(f64::NAN).is_err());
    }
}

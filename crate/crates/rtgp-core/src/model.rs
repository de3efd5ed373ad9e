//! Model state, hyperparameters, log joint density, and prediction: the
//! shared substrate for both inference engines.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{invalid, Result};
use crate::kernel::BasisExpansion;
use crate::linalg::{chol_solve, cholesky_lower};
use crate::special::{ln_normal_pdf, InvGamma, LN_2PI};

/// Outcomes, image design matrix, and optional confounders.
///
/// `subject_count` may be zero: a prior-only instance is meaningful to the
/// samplers. The CLI front end requires at least one subject.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: Array1<f64>,
    x: Array2<f64>,
    confounders: Option<Array2<f64>>,
}

impl Dataset {
    pub fn new(y: Array1<f64>, x: Array2<f64>, confounders: Option<Array2<f64>>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(invalid(format!(
                "design matrix has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.ncols() == 0 {
            return Err(invalid("design matrix must have at least one vertex column"));
        }
        if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("dataset contains non-finite entries"));
        }
        if let Some(c) = &confounders {
            if c.nrows() != y.len() {
                return Err(invalid(format!(
                    "confounder matrix has {} rows but y has {} entries",
                    c.nrows(),
                    y.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(invalid("confounders contain non-finite entries"));
            }
        }
        Ok(Self { y, x, confounders })
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn confounders(&self) -> Option<ArrayView2<'_, f64>> {
        self.confounders.as_ref().map(|c| c.view())
    }

    pub fn subject_count(&self) -> usize {
        self.y.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.x.ncols()
    }
}

/// Fixed prior settings shared by both engines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    /// Prior variance of the intercept.
    pub sigma_beta0_sq: f64,
    /// Half-Cauchy scale of the basis-coefficient standard deviation.
    pub s_beta: f64,
    /// Half-Cauchy scale of the noise standard deviation.
    pub s_eps: f64,
    /// Half-Cauchy scale of the latent standard deviation.
    pub s_alpha: f64,
    /// Threshold grid endpoints (inclusive) and size.
    pub t_min: f64,
    pub t_max: f64,
    pub n_delta: usize,
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_beta0_sq", self.sigma_beta0_sq),
            ("s_beta", self.s_beta),
            ("s_eps", self.s_eps),
            ("s_alpha", self.s_alpha),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.t_min.is_finite() || !self.t_max.is_finite() || self.t_min < 0.0 {
            return Err(invalid("threshold endpoints must be finite with t_min >= 0"));
        }
        if self.t_min >= self.t_max {
            return Err(invalid(format!(
                "threshold grid needs t_min < t_max, got [{}, {}]",
                self.t_min, self.t_max
            )));
        }
        if self.n_delta == 0 {
            return Err(invalid("threshold grid must contain at least one value"));
        }
        Ok(())
    }
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            sigma_beta0_sq: 100.0,
            s_beta: 1.0,
            s_eps: 1.0,
            s_alpha: 1.0,
            t_min: 0.0,
            t_max: 1.0,
            n_delta: 11,
        }
    }
}

/// Equally spaced grid from t_min to t_max inclusive; just t_min when the
/// grid has a single point.
pub fn threshold_grid(h: &Hyperparameters) -> Vec<f64> {
    if h.n_delta == 1 {
        return vec![h.t_min];
    }
    let step = (h.t_max - h.t_min) / (h.n_delta - 1) as f64;
    (0..h.n_delta)
        .map(|i| if i + 1 == h.n_delta { h.t_max } else { h.t_min + i as f64 * step })
        .collect()
}

/// One point of the full parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub beta0: f64,
    pub theta: Array1<f64>,
    pub alpha: Array1<f64>,
    pub delta: f64,
    pub sigma_eps_sq: f64,
    pub sigma_beta_sq: f64,
    pub sigma_alpha_sq: f64,
    pub a_eps: f64,
    pub a_beta: f64,
    pub a_alpha: f64,
}

impl ModelState {
    pub fn validate(&self, h: &Hyperparameters) -> Result<()> {
        for (name, v) in [
            ("sigma_eps_sq", self.sigma_eps_sq),
            ("sigma_beta_sq", self.sigma_beta_sq),
            ("sigma_alpha_sq", self.sigma_alpha_sq),
            ("a_eps", self.a_eps),
            ("a_beta", self.a_beta),
            ("a_alpha", self.a_alpha),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.delta < h.t_min || self.delta > h.t_max {
            return Err(invalid(format!(
                "delta {} outside the grid range [{}, {}]",
                self.delta, h.t_min, h.t_max
            )));
        }
        Ok(())
    }
}

/// Posterior weight attached to one grid threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaWeight {
    pub delta: f64,
    pub probability: f64,
}

/// Engine-specific convergence record.
#[derive(Debug, Clone, PartialEq)]
pub enum FitDiagnostics {
    /// Variational fit: the ELBO value after every sweep.
    Variational { elbo_trace: Vec<f64> },
    /// Gibbs fit: sweeps run and samples kept after burn-in/thinning.
    Chain { sweeps: usize, kept: usize },
}

/// Posterior summaries produced by either engine.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta_tilde_mean: Array1<f64>,
    pub inclusion_prob: Array1<f64>,
    /// beta_tilde_mean gated by `inclusion_prob >= mpm_threshold`.
    pub beta_map: Array1<f64>,
    pub mpm_threshold: f64,
    pub beta0_mean: f64,
    pub sigma_eps_sq_mean: f64,
    pub delta_summary: Vec<DeltaWeight>,
    pub diagnostics: FitDiagnostics,
    /// Reference to the basis artifact this fit was computed against.
    pub basis_ref: String,
}

impl FitResult {
    /// Structural invariants; also the tamper check applied after loading a
    /// persisted fit.
    pub fn validate(&self) -> Result<()> {
        let m = self.beta_tilde_mean.len();
        if self.inclusion_prob.len() != m || self.beta_map.len() != m {
            return Err(invalid("fit summaries have inconsistent vertex counts"));
        }
        if !(0.0..=1.0).contains(&self.mpm_threshold) {
            return Err(invalid(format!(
                "selection threshold must lie in [0, 1], got {}",
                self.mpm_threshold
            )));
        }
        for j in 0..m {
            let p = self.inclusion_prob[j];
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("inclusion probability {p} at vertex {j}")));
            }
            let expect = if p >= self.mpm_threshold { self.beta_tilde_mean[j] } else { 0.0 };
            if self.beta_map[j] != expect {
                return Err(invalid(format!(
                    "coefficient map at vertex {j} does not match the selection rule"
                )));
            }
        }
        if self.delta_summary.is_empty() {
            return Err(invalid("threshold summary is empty"));
        }
        let total: f64 = self.delta_summary.iter().map(|w| w.probability).sum();
        if self.delta_summary.iter().any(|w| w.probability < 0.0) || (total - 1.0).abs() > 1e-8 {
            return Err(invalid("threshold summary is not a probability distribution"));
        }
        if !self.beta0_mean.is_finite() || !self.sigma_eps_sq_mean.is_finite() {
            return Err(invalid("scalar summaries must be finite"));
        }
        if self.sigma_eps_sq_mean <= 0.0 {
            return Err(invalid("noise variance summary must be positive"));
        }
        Ok(())
    }
}

/// Log joint density of data and all parameters at one state.
pub fn log_joint(
    state: &ModelState,
    data: &Dataset,
    basis: &BasisExpansion,
    h: &Hyperparameters,
) -> Result<f64> {
    h.validate()?;
    state.validate(h)?;
    let m = basis.vertex_count();
    let l = basis.basis_count();
    if state.theta.len() != l || state.alpha.len() != m {
        return Err(invalid("state dimensions do not match the basis"));
    }
    if data.subject_count() > 0 && data.vertex_count() != m {
        return Err(invalid(format!(
            "dataset has {} vertices but basis has {m}",
            data.vertex_count()
        )));
    }

    let beta_tilde = basis.basis().dot(&state.theta);
    let mut lp = 0.0;

    // Likelihood with the indicator-masked field.
    let n = data.subject_count();
    if n > 0 {
        let masked = Array1::from_shape_fn(m, |j| {
            if state.alpha[j].abs() > state.delta {
                beta_tilde[j]
            } else {
                0.0
            }
        });
        let fitted = data.x().dot(&masked);
        let rss: f64 = data
            .y()
            .iter()
            .zip(fitted.iter())
            .map(|(&yi, &fi)| {
                let r = yi - state.beta0 - fi;
                r * r
            })
            .sum();
        lp += -0.5 * n as f64 * (LN_2PI + state.sigma_eps_sq.ln())
            - 0.5 * rss / state.sigma_eps_sq;
    }

    // Parameter priors.
    for &t in &state.theta {
        lp += ln_normal_pdf(t, 0.0, state.sigma_beta_sq);
    }
    lp += ln_normal_pdf(state.beta0, 0.0, h.sigma_beta0_sq);
    for j in 0..m {
        lp += ln_normal_pdf(state.alpha[j], beta_tilde[j], state.sigma_alpha_sq);
    }

    // Uniform grid prior on delta: zero mass off the grid.
    let grid = threshold_grid(h);
    let on_grid = grid
        .iter()
        .any(|&g| (state.delta - g).abs() <= 1e-12 * g.abs().max(1.0));
    if !on_grid {
        return Ok(f64::NEG_INFINITY);
    }
    lp += -(h.n_delta as f64).ln();

    // Scale-mixture factors: sigma^2 | a ~ IG(1/2, 1/a), a ~ IG(1/2, 1/s^2).
    lp += InvGamma::new(0.5, 1.0 / state.a_eps).ln_pdf(state.sigma_eps_sq);
    lp += InvGamma::new(0.5, 1.0 / state.a_beta).ln_pdf(state.sigma_beta_sq);
    lp += InvGamma::new(0.5, 1.0 / state.a_alpha).ln_pdf(state.sigma_alpha_sq);
    lp += InvGamma::new(0.5, 1.0 / (h.s_eps * h.s_eps)).ln_pdf(state.a_eps);
    lp += InvGamma::new(0.5, 1.0 / (h.s_beta * h.s_beta)).ln_pdf(state.a_beta);
    lp += InvGamma::new(0.5, 1.0 / (h.s_alpha * h.s_alpha)).ln_pdf(state.a_alpha);

    Ok(lp)
}

/// Linear predictor at new images: beta0_mean + X_new * beta_map.
pub fn predict(fit: &FitResult, x_new: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if x_new.ncols() != fit.beta_map.len() {
        return Err(invalid(format!(
            "new design has {} columns but the fit covers {} vertices",
            x_new.ncols(),
            fit.beta_map.len()
        )));
    }
    Ok(x_new.dot(&fit.beta_map) + fit.beta0_mean)
}

/// OLS projection coefficients of y on (1, confounders), intercept first.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfounderProjection {
    pub coefficients: Array1<f64>,
}

/// A dataset with confounder effects removed from y.
#[derive(Debug, Clone)]
pub struct ResidualizedDataset {
    pub data: Dataset,
    /// None when the input carried no confounders (identity transform).
    pub projection: Option<ConfounderProjection>,
}

impl ResidualizedDataset {
    /// Reconstructs the original outcome vector from the residuals and the
    /// stored projection.
    pub fn recover_y(&self) -> Array1<f64> {
        match (&self.projection, self.data.confounders()) {
            (Some(proj), Some(c)) => {
                let mut y = self.data.y().to_owned();
                for i in 0..y.len() {
                    let mut fitted = proj.coefficients[0];
                    for p in 0..c.ncols() {
                        fitted += proj.coefficients[p + 1] * c[[i, p]];
                    }
                    y[i] += fitted;
                }
                y
            }
            _ => self.data.y().to_owned(),
        }
    }
}

/// Replaces y by its OLS residuals on (1, confounders); X is untouched and
/// the projection is returned so the transform is invertible.
pub fn residualize_confounders(data: &Dataset) -> Result<ResidualizedDataset> {
    let Some(c) = data.confounders() else {
        return Ok(ResidualizedDataset { data: data.clone(), projection: None });
    };
    let n = data.subject_count();
    let p = c.ncols() + 1;
    if n < p {
        return Err(invalid(format!(
            "cannot residualize {} confounders with only {n} subjects",
            c.ncols()
        )));
    }
    let mut z = Array2::ones((n, p));
    for i in 0..n {
        for k in 0..c.ncols() {
            z[[i, k + 1]] = c[[i, k]];
        }
    }
    let ztz = z.t().dot(&z);
    let zty = z.t().dot(&data.y());
    let factor = cholesky_lower(ztz.view())
        .map_err(|_| invalid("confounder block is rank deficient"))?;
    // A successful factorization of a singular normal matrix can still slip
    // through with a tiny pivot; reject those explicitly.
    let diag_max = factor.diag().iter().fold(0.0f64, |a, &v| a.max(v));
    if factor.diag().iter().any(|&v| v <= 1e-10 * diag_max) {
        return Err(invalid("confounder block is rank deficient"));
    }
    let coefficients = chol_solve(&factor, zty.view());
    let fitted = z.dot(&coefficients);
    let residuals = &data.y() - &fitted;
    let new_data = Dataset::new(residuals, data.x().to_owned(), Some(c.to_owned()))?;
    Ok(ResidualizedDataset {
        data: new_data,
        projection: Some(ConfounderProjection { coefficients }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn grid_examples() {
        let mut h = Hyperparameters { t_min: 0.0, t_max: 1.0, n_delta: 3, ..Default::default() };
        assert_eq!(threshold_grid(&h), vec![0.0, 0.5, 1.0]);
        h.n_delta = 1;
        assert_eq!(threshold_grid(&h), vec![0.0]);
        h = Hyperparameters { t_min: 0.1, t_max: 0.5, n_delta: 5, ..h };
        let g = threshold_grid(&h);
        for (got, want) in g.iter().zip([0.1, 0.2, 0.3, 0.4, 0.5]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(*g.last().unwrap(), 0.5);
    }

    #[test]
    fn dataset_validation() {
        let y = array![1.0, 2.0];
        let x = array![[1.0], [2.0]];
        assert!(Dataset::new(y.clone(), x.clone(), None).is_ok());
        assert!(Dataset::new(array![1.0], x.clone(), None).is_err());
        assert!(Dataset::new(array![1.0, f64::NAN], x, None).is_err());
        // Prior-only datasets are allowed at the library level.
        let empty = Dataset::new(Array1::zeros(0), Array2::zeros((0, 3)), None).unwrap();
        assert_eq!(empty.subject_count(), 0);
        assert_eq!(empty.vertex_count(), 3);
    }

    fn tiny_fit() -> FitResult {
        FitResult {
            beta_tilde_mean: array![1.0, -0.5, 0.2],
            inclusion_prob: array![0.9, 0.2, 0.6],
            beta_map: array![1.0, 0.0, 0.2],
            mpm_threshold: 0.5,
            beta0_mean: 2.0,
            sigma_eps_sq_mean: 0.2,
            delta_summary: vec![DeltaWeight { delta: 0.0, probability: 1.0 }],
            diagnostics: FitDiagnostics::Variational { elbo_trace: vec![-10.0, -9.0] },
            basis_ref: String::new(),
        }
    }

    #[test]
    fn fit_result_selection_rule_is_enforced() {
        let fit = tiny_fit();
        assert!(fit.validate().is_ok());
        let mut bad = fit.clone();
        bad.beta_map[1] = 0.1;
        assert!(bad.validate().is_err());
        let mut bad = fit.clone();
        bad.inclusion_prob[0] = 1.5;
        assert!(bad.validate().is_err());
        let mut bad = fit;
        bad.delta_summary[0].probability = 0.5;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn predict_examples() {
        let mut fit = tiny_fit();
        fit.beta_map = array![0.0, 0.0, 0.0];
        fit.inclusion_prob = array![0.0, 0.0, 0.0];
        let x = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let p = predict(&fit, x.view()).unwrap();
        assert_eq!(p, array![2.0, 2.0]);

        let fit = FitResult {
            beta_tilde_mean: array![1.0],
            inclusion_prob: array![1.0],
            beta_map: array![1.0],
            mpm_threshold: 0.5,
            beta0_mean: 0.0,
            sigma_eps_sq_mean: 1.0,
            delta_summary: vec![DeltaWeight { delta: 0.0, probability: 1.0 }],
            diagnostics: FitDiagnostics::Chain { sweeps: 1, kept: 1 },
            basis_ref: String::new(),
        };
        let p = predict(&fit, array![[3.0]].view()).unwrap();
        assert!((p[0] - 3.0).abs() < 1e-15);
        assert!(predict(&fit, array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn predict_is_affine_linear() {
        let fit = tiny_fit();
        let x1 = array![[1.0, 2.0, 3.0], [0.5, -1.0, 2.0]];
        let x2 = array![[-2.0, 0.0, 1.0], [3.0, 1.0, -1.0]];
        let (a, b) = (1.7, -0.4);
        let mix: Array2<f64> = a * &x1 + b * &x2;
        let combo = predict(&fit, mix.view()).unwrap();
        let lhs = a * &predict(&fit, x1.view()).unwrap() + b * &predict(&fit, x2.view()).unwrap()
            - (a + b - 1.0) * fit.beta0_mean;
        for i in 0..2 {
            assert!((combo[i] - lhs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn residualize_identity_without_confounders() {
        let data = Dataset::new(array![1.0, 2.0], array![[1.0], [2.0]], None).unwrap();
        let r = residualize_confounders(&data).unwrap();
        assert!(r.projection.is_none());
        assert_eq!(r.data.y(), data.y());
    }

    #[test]
    fn residualize_on_self_zeroes_y() {
        let y = array![1.0, 2.0, 4.0, -1.0];
        let c = Array2::from_shape_fn((4, 1), |(i, _)| y[i]);
        let x = Array2::ones((4, 2));
        let data = Dataset::new(y, x, Some(c)).unwrap();
        let r = residualize_confounders(&data).unwrap();
        for &v in r.data.y() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn residualize_rejects_rank_deficiency() {
        // A constant confounder duplicates the intercept column.
        let data = Dataset::new(
            array![1.0, 2.0, 3.0],
            Array2::ones((3, 2)),
            Some(Array2::ones((3, 1))),
        )
        .unwrap();
        assert!(matches!(
            residualize_confounders(&data),
            Err(crate::error::Error::InvalidArgument(_))
        ));
    }
}

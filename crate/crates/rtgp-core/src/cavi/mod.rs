//! Mean-field coordinate-ascent variational inference.
//!
//! The variational family factorizes over the intercept, the basis
//! coefficients, each vertex latent, the threshold, and the six
//! variance/auxiliary scales. Vertex latents are three-component truncated
//! normal mixtures whose components share one location and variance and are
//! split at a bound `delta_star`; the threshold factor is a distribution
//! over the grid, and every update marginalizes over it exactly, so the
//! objective never decreases.

mod engine;

pub use engine::CaviEngine;

use ndarray::{Array1, Array2};

use crate::error::{invalid, numerical, Result};
use crate::kernel::BasisExpansion;
use crate::linalg::{chol_solve, cholesky_lower};
use crate::model::{threshold_grid, Dataset, FitResult, Hyperparameters, ModelState};
use crate::special::{logsumexp, InvGamma};
use crate::truncnorm::TruncatedNormal;

/// Convergence and initialization knobs for one variational fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaviConfig {
    /// Maximum number of full sweeps.
    pub max_iter: usize,
    /// Stop when |ELBO change| / max(|ELBO|, 1) falls below this.
    pub elbo_rel_tol: f64,
    /// Penalty of the ridge warm start for the basis coefficients.
    pub ridge_init_penalty: f64,
    /// Recorded in manifests; the fit itself is deterministic.
    pub seed: u64,
    /// Median-probability selection cutoff (inclusive).
    pub mpm_threshold: f64,
}

impl CaviConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be at least 1"));
        }
        if !self.elbo_rel_tol.is_finite() || self.elbo_rel_tol <= 0.0 {
            return Err(invalid(format!(
                "elbo_rel_tol must be positive, got {}",
                self.elbo_rel_tol
            )));
        }
        if !self.ridge_init_penalty.is_finite() || self.ridge_init_penalty <= 0.0 {
            return Err(invalid(format!(
                "ridge_init_penalty must be positive, got {}",
                self.ridge_init_penalty
            )));
        }
        if !(0.0..=1.0).contains(&self.mpm_threshold) {
            return Err(invalid(format!(
                "mpm_threshold must lie in [0, 1], got {}",
                self.mpm_threshold
            )));
        }
        Ok(())
    }
}

impl Default for CaviConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            elbo_rel_tol: 1e-8,
            ridge_init_penalty: 1.0,
            seed: 0,
            mpm_threshold: 0.5,
        }
    }
}

/// One vertex's variational factor: a truncated-normal mixture over the
/// regions (-inf, -delta_star), (-delta_star, delta_star), (delta_star, inf),
/// all sharing location `mean` and variance `var`.
///
/// `delta_star` is stored per vertex: an update is only accepted when it
/// improves the vertex's objective, so records fitted at an older bound can
/// survive a bound change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaFactor {
    pub w_neg: f64,
    pub w_zero: f64,
    pub w_pos: f64,
    pub mean: f64,
    pub var: f64,
    pub delta_star: f64,
}

impl AlphaFactor {
    /// Builds the factor with weights proportional to the untruncated
    /// normal's region masses: the no-data (prior) solution.
    pub fn from_prior_masses(mean: f64, var: f64, delta_star: f64) -> Self {
        let sd = var.sqrt();
        let ln_masses = region_ln_masses(mean, sd, delta_star);
        let norm = logsumexp(&ln_masses);
        let w = |i: usize| (ln_masses[i] - norm).exp();
        Self { w_neg: w(0), w_zero: w(1), w_pos: w(2), mean, var, delta_star }
    }

    /// Mixture mass outside the band: the vertex inclusion probability.
    pub fn inclusion(&self) -> f64 {
        self.w_neg + self.w_pos
    }

    fn components(&self) -> [Option<TruncatedNormal>; 3] {
        let sd = self.var.sqrt();
        let mk = |lo: f64, hi: f64| TruncatedNormal::new(self.mean, sd, lo, hi).ok();
        [
            mk(f64::NEG_INFINITY, -self.delta_star),
            mk(-self.delta_star, self.delta_star),
            mk(self.delta_star, f64::INFINITY),
        ]
    }

    fn weights(&self) -> [f64; 3] {
        [self.w_neg, self.w_zero, self.w_pos]
    }

    /// E[alpha] under the mixture.
    pub fn mean_alpha(&self) -> f64 {
        self.fold_components(|c| c.mean())
    }

    /// E[alpha^2] under the mixture.
    pub fn second_moment(&self) -> f64 {
        self.fold_components(|c| c.second_moment())
    }

    /// Exact mixture entropy: the components have disjoint supports, so it
    /// is the weighted component entropies plus the weight entropy.
    pub fn entropy(&self) -> f64 {
        let comps = self.components();
        let mut h = 0.0;
        for (w, c) in self.weights().into_iter().zip(comps) {
            if w > 0.0 {
                let c = c.expect("positive weight on an empty region");
                h += w * c.entropy() - w * w.ln();
            }
        }
        h
    }

    /// Pr(|alpha| > t) under the mixture, for t >= 0.
    pub fn exceedance(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        let sd = self.var.sqrt();
        let p: f64 = self
            .weights()
            .into_iter()
            .enumerate()
            .filter(|(_, w)| *w > 0.0)
            .map(|(r, w)| w * region_exceedance(self.mean, sd, self.delta_star, r, t))
            .sum();
        p.clamp(0.0, 1.0)
    }

    fn fold_components(&self, f: impl Fn(&TruncatedNormal) -> f64) -> f64 {
        let comps = self.components();
        self.weights()
            .into_iter()
            .zip(comps)
            .filter(|(w, _)| *w > 0.0)
            .map(|(w, c)| w * f(&c.expect("positive weight on an empty region")))
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.w_neg + self.w_zero + self.w_pos;
        if (s - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("mixture weights sum to {s}")));
        }
        if self.w_neg < 0.0 || self.w_zero < 0.0 || self.w_pos < 0.0 {
            return Err(invalid("negative mixture weight"));
        }
        if !self.var.is_finite() || self.var <= 0.0 {
            return Err(invalid("mixture component variance must be positive"));
        }
        if !self.mean.is_finite() || self.delta_star < 0.0 {
            return Err(invalid("mixture location/bound out of range"));
        }
        if self.delta_star == 0.0 && self.w_zero != 0.0 {
            return Err(invalid("empty inner region carries weight"));
        }
        Ok(())
    }
}

/// Bounds of region `r` (0 negative, 1 inner, 2 positive) split at `delta`.
pub(crate) fn region_bounds(delta: f64, r: usize) -> (f64, f64) {
    match r {
        0 => (f64::NEG_INFINITY, -delta),
        1 => (-delta, delta),
        _ => (delta, f64::INFINITY),
    }
}

/// ln of the N(mean, sd^2) masses of the three regions split at delta.
pub(crate) fn region_ln_masses(mean: f64, sd: f64, delta: f64) -> [f64; 3] {
    [
        crate::special::ln_normal_mass(f64::NEG_INFINITY, -delta, mean, sd),
        crate::special::ln_normal_mass(-delta, delta, mean, sd),
        crate::special::ln_normal_mass(delta, f64::INFINITY, mean, sd),
    ]
}

/// Pr(|alpha| > t) for a N(mean, sd^2) truncated to region `r` at `delta`.
///
/// Outer regions already satisfy |alpha| > delta, so any t <= delta gives 1;
/// the inner region gives 0 for t >= delta.
pub(crate) fn region_exceedance(mean: f64, sd: f64, delta: f64, r: usize, t: f64) -> f64 {
    use crate::special::ln_normal_mass;
    let p = match r {
        0 => {
            if t <= delta {
                1.0
            } else {
                let whole = ln_normal_mass(f64::NEG_INFINITY, -delta, mean, sd);
                (ln_normal_mass(f64::NEG_INFINITY, -t, mean, sd) - whole).exp()
            }
        }
        1 => {
            if t >= delta {
                0.0
            } else {
                let whole = ln_normal_mass(-delta, delta, mean, sd);
                let tails = logsumexp(&[
                    ln_normal_mass(-delta, -t, mean, sd),
                    ln_normal_mass(t, delta, mean, sd),
                ]);
                (tails - whole).exp()
            }
        }
        _ => {
            if t <= delta {
                1.0
            } else {
                let whole = ln_normal_mass(delta, f64::INFINITY, mean, sd);
                (ln_normal_mass(t, f64::INFINITY, mean, sd) - whole).exp()
            }
        }
    };
    p.clamp(0.0, 1.0)
}

/// A scalar Normal factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalFactor {
    pub mean: f64,
    pub var: f64,
}

/// The full mean-field state.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub q_beta0: NormalFactor,
    pub q_theta_mean: Array1<f64>,
    pub q_theta_cov: Array2<f64>,
    pub q_alpha: Vec<AlphaFactor>,
    pub q_delta: Vec<f64>,
    pub q_sigma_eps: InvGamma,
    pub q_sigma_beta: InvGamma,
    pub q_sigma_alpha: InvGamma,
    pub q_a_eps: InvGamma,
    pub q_a_beta: InvGamma,
    pub q_a_alpha: InvGamma,
}

impl VariationalState {
    /// p_j = outer-region mixture mass per vertex.
    pub fn expected_inclusion(&self) -> Array1<f64> {
        Array1::from_iter(self.q_alpha.iter().map(AlphaFactor::inclusion))
    }

    /// The grid value with maximal q_delta mass; ties go to the lowest index.
    pub fn delta_mode(&self, grid: &[f64]) -> f64 {
        let mut best = 0;
        for (k, &p) in self.q_delta.iter().enumerate() {
            if p > self.q_delta[best] {
                best = k;
            }
        }
        grid[best]
    }

    pub fn validate(&self) -> Result<()> {
        for (j, f) in self.q_alpha.iter().enumerate() {
            f.validate()
                .map_err(|e| invalid(format!("vertex {j}: {e}")))?;
        }
        let qd_sum: f64 = self.q_delta.iter().sum();
        if self.q_delta.is_empty()
            || self.q_delta.iter().any(|&p| !(0.0..=1.0).contains(&p))
            || (qd_sum - 1.0).abs() > 1e-8
        {
            return Err(invalid("threshold factor is not a distribution"));
        }
        if !self.q_beta0.var.is_finite() || self.q_beta0.var <= 0.0 {
            return Err(invalid("intercept factor variance must be positive"));
        }
        for (name, g) in [
            ("q_sigma_eps", self.q_sigma_eps),
            ("q_sigma_beta", self.q_sigma_beta),
            ("q_sigma_alpha", self.q_sigma_alpha),
            ("q_a_eps", self.q_a_eps),
            ("q_a_beta", self.q_a_beta),
            ("q_a_alpha", self.q_a_alpha),
        ] {
            if !(g.shape > 0.0 && g.rate > 0.0 && g.shape.is_finite() && g.rate.is_finite()) {
                return Err(invalid(format!("{name} has invalid shape/rate")));
            }
        }
        let l = self.q_theta_mean.len();
        if self.q_theta_cov.nrows() != l || self.q_theta_cov.ncols() != l {
            return Err(invalid("theta covariance shape mismatch"));
        }
        cholesky_lower(self.q_theta_cov.view())
            .map_err(|_| invalid("theta covariance is not positive definite"))?;
        Ok(())
    }

    /// Names the first factor carrying a non-finite parameter, if any.
    pub fn find_non_finite(&self) -> Option<&'static str> {
        if !self.q_beta0.mean.is_finite() || !self.q_beta0.var.is_finite() {
            return Some("q_beta0");
        }
        if self.q_theta_mean.iter().any(|v| !v.is_finite())
            || self.q_theta_cov.iter().any(|v| !v.is_finite())
        {
            return Some("q_theta");
        }
        if self.q_alpha.iter().any(|f| {
            !(f.w_neg.is_finite()
                && f.w_zero.is_finite()
                && f.w_pos.is_finite()
                && f.mean.is_finite()
                && f.var.is_finite())
        }) {
            return Some("q_alpha");
        }
        if self.q_delta.iter().any(|p| !p.is_finite()) {
            return Some("q_delta");
        }
        for (name, g) in [
            ("q_sigma_eps", self.q_sigma_eps),
            ("q_sigma_beta", self.q_sigma_beta),
            ("q_sigma_alpha", self.q_sigma_alpha),
            ("q_a_eps", self.q_a_eps),
            ("q_a_beta", self.q_a_beta),
            ("q_a_alpha", self.q_a_alpha),
        ] {
            if !g.shape.is_finite() || !g.rate.is_finite() {
                return Some(name);
            }
        }
        None
    }
}

/// Deterministic data-informed warm start shared by both engines.
///
/// Basis coefficients come from a ridge fit of the centered outcome on the
/// projected design; variances from method-of-moments residual estimates;
/// the threshold starts at the middle of its grid.
struct WarmStart {
    theta: Array1<f64>,
    beta_tilde: Array1<f64>,
    y_bar: f64,
    sigma_eps_sq: f64,
    sigma_beta_sq: f64,
    sigma_alpha_sq: f64,
    delta_mid: f64,
}

fn warm_start(
    data: &Dataset,
    basis: &BasisExpansion,
    h: &Hyperparameters,
    ridge_penalty: f64,
) -> Result<WarmStart> {
    if !ridge_penalty.is_finite() || ridge_penalty <= 0.0 {
        return Err(invalid(format!("ridge penalty must be positive, got {ridge_penalty}")));
    }
    let n = data.subject_count();
    let l = basis.basis_count();
    let grid = threshold_grid(h);
    let delta_mid = grid[grid.len() / 2];

    let (theta, y_bar, sigma_eps_sq) = if n == 0 {
        (Array1::zeros(l), 0.0, 1.0)
    } else {
        let y_bar = data.y().sum() / n as f64;
        let xb = data.x().dot(&basis.basis());
        let centered = &data.y() - y_bar;
        let mut gram = xb.t().dot(&xb);
        for i in 0..l {
            gram[[i, i]] += ridge_penalty;
        }
        let rhs = xb.t().dot(&centered);
        let factor = cholesky_lower(gram.view())
            .map_err(|e| numerical(format!("ridge warm start failed: {e}")))?;
        let theta = chol_solve(&factor, rhs.view());
        let fitted = xb.dot(&theta);
        let rss: f64 = centered
            .iter()
            .zip(fitted.iter())
            .map(|(&c, &f)| (c - f) * (c - f))
            .sum();
        let sigma_eps_sq = (rss / n as f64).max(1e-8);
        (theta, y_bar, sigma_eps_sq)
    };
    let beta_tilde = basis.basis().dot(&theta);
    let theta_ms = theta.iter().map(|t| t * t).sum::<f64>() / l.max(1) as f64;
    let sigma_beta_sq = if theta_ms > 0.0 { theta_ms } else { 1.0 };
    Ok(WarmStart {
        theta,
        beta_tilde,
        y_bar,
        sigma_eps_sq,
        sigma_beta_sq,
        sigma_alpha_sq: 1.0,
        delta_mid,
    })
}

/// The warm start as a point in parameter space: the Gibbs chain's start.
pub fn initial_model_state(
    data: &Dataset,
    basis: &BasisExpansion,
    h: &Hyperparameters,
    ridge_penalty: f64,
) -> Result<ModelState> {
    h.validate()?;
    let ws = warm_start(data, basis, h, ridge_penalty)?;
    // Auxiliaries start at the mode of their conditional given sigma^2.
    let aux_mode = |s: f64, sigma_sq: f64| (1.0 / (s * s) + 1.0 / sigma_sq) / 2.0;
    Ok(ModelState {
        beta0: ws.y_bar,
        alpha: ws.beta_tilde.clone(),
        theta: ws.theta,
        delta: ws.delta_mid,
        sigma_eps_sq: ws.sigma_eps_sq,
        sigma_beta_sq: ws.sigma_beta_sq,
        sigma_alpha_sq: ws.sigma_alpha_sq,
        a_eps: aux_mode(h.s_eps, ws.sigma_eps_sq),
        a_beta: aux_mode(h.s_beta, ws.sigma_beta_sq),
        a_alpha: aux_mode(h.s_alpha, ws.sigma_alpha_sq),
    })
}

/// The warm start as a variational state.
pub fn initial_variational_state(
    data: &Dataset,
    basis: &BasisExpansion,
    h: &Hyperparameters,
    config: &CaviConfig,
) -> Result<VariationalState> {
    h.validate()?;
    config.validate()?;
    let ws = warm_start(data, basis, h, config.ridge_init_penalty)?;
    let n = data.subject_count();
    let l = basis.basis_count();
    let m = basis.vertex_count();

    // Rates are set so E[1/sigma^2] matches the moment estimate under the
    // conjugate shapes; auxiliaries are their exact conjugate update.
    let ig_from_moment = |shape: f64, sigma_sq: f64| InvGamma::new(shape, shape * sigma_sq);
    let q_sigma_eps = ig_from_moment(0.5 + n as f64 / 2.0, ws.sigma_eps_sq);
    let q_sigma_beta = ig_from_moment(0.5 + l as f64 / 2.0, ws.sigma_beta_sq);
    let q_sigma_alpha = ig_from_moment(0.5 + m as f64 / 2.0, ws.sigma_alpha_sq);
    let aux = |s: f64, q: &InvGamma| InvGamma::new(1.0, 1.0 / (s * s) + q.mean_inv());

    let q_alpha = ws
        .beta_tilde
        .iter()
        .map(|&e| AlphaFactor::from_prior_masses(e, ws.sigma_alpha_sq, ws.delta_mid))
        .collect();

    Ok(VariationalState {
        q_beta0: NormalFactor { mean: ws.y_bar, var: h.sigma_beta0_sq },
        q_theta_mean: ws.theta,
        q_theta_cov: Array2::eye(l) * ws.sigma_beta_sq,
        q_alpha,
        q_delta: vec![1.0 / h.n_delta as f64; h.n_delta],
        q_a_eps: aux(h.s_eps, &q_sigma_eps),
        q_a_beta: aux(h.s_beta, &q_sigma_beta),
        q_a_alpha: aux(h.s_alpha, &q_sigma_alpha),
        q_sigma_eps,
        q_sigma_beta,
        q_sigma_alpha,
    })
}

/// Fits the model by coordinate ascent; see `CaviEngine` for step-level
/// access.
pub fn fit_vi(
    data: &Dataset,
    basis: &BasisExpansion,
    h: &Hyperparameters,
    config: &CaviConfig,
) -> Result<FitResult> {
    let mut engine = CaviEngine::new(data, basis, h, config)?;
    engine.run()?;
    engine.fit_result()
}

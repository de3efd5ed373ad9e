//! Gibbs sampler over the exact posterior; the reference engine.
//!
//! Every coordinate is drawn from its full conditional in a fixed systematic
//! scan. The conditionals are also exposed as normalized log densities so
//! tests can check detailed balance against the joint density directly.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::cavi::CaviConfig;
use crate::error::{invalid, numerical, Result};
use crate::kernel::BasisExpansion;
use crate::linalg::{chol_logdet, chol_solve, cholesky_lower, solve_lower_transpose};
use crate::model::{
    threshold_grid, Dataset, DeltaWeight, FitDiagnostics, FitResult, Hyperparameters, ModelState,
};
use crate::rng::{substream, STREAM_CHAIN};
use crate::special::{ln_normal_mass, ln_normal_pdf, logsumexp, InvGamma, LN_2PI};
use crate::truncnorm::TruncatedNormal;

/// Chain length and seeding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter <= self.burn_in {
            return Err(invalid(format!(
                "n_iter ({}) must exceed burn_in ({})",
                self.n_iter, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(invalid("thin must be at least 1"));
        }
        Ok(())
    }

    /// Number of retained samples: floor((n_iter - burn_in) / thin).
    pub fn kept(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { n_iter: 2000, burn_in: 500, thin: 1, seed: 0 }
    }
}

/// Retained post-burn-in draws, one row/entry per kept sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub sweeps: usize,
    pub beta0: Vec<f64>,
    pub theta: Array2<f64>,
    pub alpha: Array2<f64>,
    pub delta: Vec<f64>,
    pub sigma_eps_sq: Vec<f64>,
    pub sigma_beta_sq: Vec<f64>,
    pub sigma_alpha_sq: Vec<f64>,
}

impl ChainOutput {
    pub fn kept(&self) -> usize {
        self.beta0.len()
    }

    /// Monte-Carlo posterior summaries in the common fit format.
    pub fn summarize(
        &self,
        basis: &BasisExpansion,
        h: &Hyperparameters,
        mpm_threshold: f64,
    ) -> Result<FitResult> {
        let kept = self.kept();
        if kept == 0 {
            return Err(invalid("cannot summarize an empty chain"));
        }
        if !(0.0..=1.0).contains(&mpm_threshold) {
            return Err(invalid("selection threshold must lie in [0, 1]"));
        }
        let m = self.alpha.ncols();
        let grid = threshold_grid(h);
        let theta_mean =
            self.theta.sum_axis(ndarray::Axis(0)) / kept as f64;
        let beta_tilde_mean = basis.basis().dot(&theta_mean);
        let mut inclusion = Array1::<f64>::zeros(m);
        let mut grid_counts = vec![0usize; grid.len()];
        for s in 0..kept {
            let d = self.delta[s];
            let k = grid_index(&grid, d)
                .ok_or_else(|| invalid(format!("retained threshold {d} is off the grid")))?;
            grid_counts[k] += 1;
            for j in 0..m {
                if self.alpha[[s, j]].abs() > d {
                    inclusion[j] += 1.0;
                }
            }
        }
        inclusion /= kept as f64;
        let beta_map = Array1::from_iter(
            inclusion
                .iter()
                .zip(beta_tilde_mean.iter())
                .map(|(&p, &b)| if p >= mpm_threshold { b } else { 0.0 }),
        );
        let delta_summary = grid
            .iter()
            .zip(grid_counts)
            .map(|(&delta, c)| DeltaWeight { delta, probability: c as f64 / kept as f64 })
            .collect();
        let fit = FitResult {
            beta_tilde_mean,
            inclusion_prob: inclusion,
            beta_map,
            mpm_threshold,
            beta0_mean: self.beta0.iter().sum::<f64>() / kept as f64,
            sigma_eps_sq_mean: self.sigma_eps_sq.iter().sum::<f64>() / kept as f64,
            delta_summary,
            diagnostics: FitDiagnostics::Chain { sweeps: self.sweeps, kept },
            basis_ref: String::new(),
        };
        fit.validate()?;
        Ok(fit)
    }
}

/// Matches `v` to a grid entry within relative 1e-12.
fn grid_index(grid: &[f64], v: f64) -> Option<usize> {
    grid.iter()
        .position(|&g| (v - g).abs() <= 1e-12 * g.abs().max(1.0))
}

/// Draws an index from unnormalized log weights.
fn sample_categorical_ln<R: Rng + ?Sized>(ln_w: &[f64], rng: &mut R) -> Result<usize> {
    let norm = logsumexp(ln_w);
    if !norm.is_finite() {
        return Err(numerical("categorical draw over weights with no finite mass"));
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &lw) in ln_w.iter().enumerate() {
        let p = (lw - norm).exp();
        if p > 0.0 {
            last_positive = k;
        }
        acc += p;
        if u < acc {
            return Ok(k);
        }
    }
    Ok(last_positive)
}

/// The sampler: current state plus the caches the scan maintains.
pub struct GibbsSampler<'a> {
    data: &'a Dataset,
    basis: &'a BasisExpansion,
    h: &'a Hyperparameters,
    grid: Vec<f64>,
    state: ModelState,
    /// B theta for the current theta.
    beta_tilde: Array1<f64>,
    /// Current active set: |alpha_j| > delta.
    gamma: Vec<bool>,
    /// y - beta0 - X (gamma .* beta_tilde).
    residual: Array1<f64>,
    btb: Array2<f64>,
    x_col_sq: Array1<f64>,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(
        data: &'a Dataset,
        basis: &'a BasisExpansion,
        h: &'a Hyperparameters,
        init: ModelState,
    ) -> Result<Self> {
        h.validate()?;
        if data.vertex_count() != basis.vertex_count() {
            return Err(invalid(format!(
                "data has {} vertices but the basis covers {}",
                data.vertex_count(),
                basis.vertex_count()
            )));
        }
        let b = basis.basis();
        let x = data.x();
        let x_col_sq = Array1::from_iter(x.columns().into_iter().map(|c| c.dot(&c)));
        let mut sampler = Self {
            data,
            basis,
            h,
            grid: threshold_grid(h),
            state: init.clone(),
            beta_tilde: Array1::zeros(basis.vertex_count()),
            gamma: vec![false; basis.vertex_count()],
            residual: Array1::zeros(data.subject_count()),
            btb: b.t().dot(&b),
            x_col_sq,
        };
        sampler.set_state(init)?;
        Ok(sampler)
    }

    /// Starts from the shared deterministic warm start.
    pub fn from_warm_start(
        data: &'a Dataset,
        basis: &'a BasisExpansion,
        h: &'a Hyperparameters,
        ridge_penalty: f64,
    ) -> Result<Self> {
        let init = crate::cavi::initial_model_state(data, basis, h, ridge_penalty)?;
        Self::new(data, basis, h, init)
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    /// Replaces the state and rebuilds the caches. The threshold must sit on
    /// the grid, otherwise the conditionals are undefined.
    pub fn set_state(&mut self, state: ModelState) -> Result<()> {
        state.validate(self.h)?;
        if state.theta.len() != self.basis.basis_count()
            || state.alpha.len() != self.basis.vertex_count()
        {
            return Err(invalid("state dimensions do not match the basis"));
        }
        if grid_index(&self.grid, state.delta).is_none() {
            return Err(invalid(format!("threshold {} is off the grid", state.delta)));
        }
        self.state = state;
        self.beta_tilde = self.basis.basis().dot(&self.state.theta);
        self.refresh_mask_and_residual();
        Ok(())
    }

    fn refresh_mask_and_residual(&mut self) {
        let d = self.state.delta;
        for (g, &a) in self.gamma.iter_mut().zip(self.state.alpha.iter()) {
            *g = a.abs() > d;
        }
        self.recompute_residual();
    }

    fn recompute_residual(&mut self) {
        let masked = Array1::from_iter(
            self.beta_tilde
                .iter()
                .zip(self.gamma.iter())
                .map(|(&b, &g)| if g { b } else { 0.0 }),
        );
        let fitted = self.data.x().dot(&masked);
        self.residual = Array1::from_iter(
            self.data
                .y()
                .iter()
                .zip(fitted.iter())
                .map(|(&y, &f)| y - self.state.beta0 - f),
        );
    }

    /// Cholesky factor of the conditional precision of theta and the
    /// conditional mean.
    fn theta_conditional(&self) -> Result<(Array2<f64>, Array1<f64>)> {
        let l = self.basis.basis_count();
        let se_inv = 1.0 / self.state.sigma_eps_sq;
        let sb_inv = 1.0 / self.state.sigma_beta_sq;
        let sa_inv = 1.0 / self.state.sigma_alpha_sq;
        let mut masked_basis = self.basis.basis().to_owned();
        for (j, &g) in self.gamma.iter().enumerate() {
            if !g {
                masked_basis.row_mut(j).fill(0.0);
            }
        }
        let g_mat = self.data.x().dot(&masked_basis);
        let mut q = &self.btb * sa_inv + &(g_mat.t().dot(&g_mat) * se_inv);
        for i in 0..l {
            q[[i, i]] += sb_inv;
        }
        let shifted = &self.data.y() - self.state.beta0;
        let rhs = g_mat.t().dot(&shifted) * se_inv
            + self.basis.basis().t().dot(&self.state.alpha) * sa_inv;
        let chol = cholesky_lower(q.view())
            .map_err(|e| numerical(format!("coefficient conditional precision: {e}")))?;
        let mean = chol_solve(&chol, rhs.view());
        Ok((chol, mean))
    }

    pub fn step_theta<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let (chol, mean) = self.theta_conditional()?;
        let mut z = Array1::from_iter(
            (0..mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        solve_lower_transpose(&chol, &mut z);
        self.state.theta = mean + z;
        self.beta_tilde = self.basis.basis().dot(&self.state.theta);
        self.recompute_residual();
        Ok(())
    }

    /// Normalized conditional log density of theta at `v`.
    pub fn ln_cond_theta(&self, v: ArrayView1<'_, f64>) -> Result<f64> {
        let (chol, mean) = self.theta_conditional()?;
        let diff = &v - &mean;
        let half = chol.t().dot(&diff);
        let l = mean.len() as f64;
        Ok(0.5 * chol_logdet(&chol) - 0.5 * l * LN_2PI - 0.5 * half.dot(&half))
    }

    /// Pieces of alpha_j's conditional: log likelihoods with the vertex
    /// active (`l1`) and inactive (`l0`), and the prior region log masses.
    fn alpha_conditional_pieces(&self, j: usize) -> AlphaPieces {
        let bt = self.beta_tilde[j];
        let x = self.data.x();
        let xj = x.column(j);
        let r = &self.residual;
        let n_j = self.x_col_sq[j];
        // Remove j's own contribution: r_without = r + gamma_j bt x_j.
        let (rw2, d) = if self.gamma[j] {
            let xr = xj.dot(r);
            (r.dot(r) + 2.0 * bt * xr + bt * bt * n_j, xr + bt * n_j)
        } else {
            (r.dot(r), xj.dot(r))
        };
        let se2 = self.state.sigma_eps_sq;
        let sd = self.state.sigma_alpha_sq.sqrt();
        let delta = self.state.delta;
        AlphaPieces {
            l0: -rw2 / (2.0 * se2),
            l1: -(rw2 - 2.0 * bt * d + bt * bt * n_j) / (2.0 * se2),
            ln_mass: [
                ln_normal_mass(f64::NEG_INFINITY, -delta, bt, sd),
                ln_normal_mass(-delta, delta, bt, sd),
                ln_normal_mass(delta, f64::INFINITY, bt, sd),
            ],
        }
    }

    pub fn step_alpha_at<R: Rng + ?Sized>(&mut self, j: usize, rng: &mut R) -> Result<()> {
        let lw = self.alpha_conditional_pieces(j).region_ln_weights();
        let region = sample_categorical_ln(&lw, rng)?;
        let bt = self.beta_tilde[j];
        let sd = self.state.sigma_alpha_sq.sqrt();
        let delta = self.state.delta;
        let (lo, hi) = match region {
            0 => (f64::NEG_INFINITY, -delta),
            1 => (-delta, delta),
            _ => (delta, f64::INFINITY),
        };
        let value = TruncatedNormal::new(bt, sd, lo, hi)?.sample(rng);
        let was_active = self.gamma[j];
        let now_active = value.abs() > delta;
        self.state.alpha[j] = value;
        self.gamma[j] = now_active;
        if was_active != now_active {
            let x = self.data.x();
            let xj = x.column(j);
            let sign = if was_active { 1.0 } else { -1.0 };
            self.residual.iter_mut().zip(xj.iter()).for_each(|(r, &v)| *r += sign * bt * v);
        }
        Ok(())
    }

    pub fn step_alpha<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        for j in 0..self.basis.vertex_count() {
            self.step_alpha_at(j, rng)?;
        }
        Ok(())
    }

    /// Normalized conditional log density of alpha_j at `v`.
    ///
    /// p(v) = exp(l(v)) N(v; bt, sa^2) / sum_R exp(l_R) mass_R, where l(v)
    /// is the likelihood term of whichever region holds `v`.
    pub fn ln_cond_alpha(&self, j: usize, v: f64) -> f64 {
        let pieces = self.alpha_conditional_pieces(j);
        let norm = logsumexp(&pieces.region_ln_weights());
        let l_v = if v.abs() > self.state.delta { pieces.l1 } else { pieces.l0 };
        l_v + ln_normal_pdf(v, self.beta_tilde[j], self.state.sigma_alpha_sq) - norm
    }

    /// Log likelihood of the data at threshold `d`, other coordinates fixed.
    fn threshold_log_likelihood(&self, d: f64) -> f64 {
        let masked = Array1::from_iter(
            self.beta_tilde
                .iter()
                .zip(self.state.alpha.iter())
                .map(|(&b, &a)| if a.abs() > d { b } else { 0.0 }),
        );
        let fitted = self.data.x().dot(&masked);
        let ss: f64 = self
            .data
            .y()
            .iter()
            .zip(fitted.iter())
            .map(|(&y, &f)| {
                let r = y - self.state.beta0 - f;
                r * r
            })
            .sum();
        -ss / (2.0 * self.state.sigma_eps_sq)
    }

    pub fn step_delta<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let lw: Vec<f64> = self.grid.iter().map(|&d| self.threshold_log_likelihood(d)).collect();
        let k = sample_categorical_ln(&lw, rng)?;
        self.state.delta = self.grid[k];
        self.refresh_mask_and_residual();
        Ok(())
    }

    /// Normalized conditional log mass of the threshold at grid value `v`.
    pub fn ln_cond_delta(&self, v: f64) -> Result<f64> {
        let k = grid_index(&self.grid, v)
            .ok_or_else(|| invalid(format!("threshold {v} is off the grid")))?;
        let lw: Vec<f64> = self.grid.iter().map(|&d| self.threshold_log_likelihood(d)).collect();
        Ok(lw[k] - logsumexp(&lw))
    }

    /// Conditional mean and variance of the intercept.
    fn beta0_conditional(&self) -> (f64, f64) {
        let n = self.data.subject_count() as f64;
        let se_inv = 1.0 / self.state.sigma_eps_sq;
        let prec = 1.0 / self.h.sigma_beta0_sq + n * se_inv;
        // Residuals with the intercept added back.
        let r_sum = self.residual.sum() + n * self.state.beta0;
        (se_inv * r_sum / prec, 1.0 / prec)
    }

    pub fn step_beta0<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let (mean, var) = self.beta0_conditional();
        let new = mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let shift = self.state.beta0 - new;
        self.state.beta0 = new;
        self.residual += shift;
        Ok(())
    }

    pub fn ln_cond_beta0(&self, v: f64) -> f64 {
        let (mean, var) = self.beta0_conditional();
        ln_normal_pdf(v, mean, var)
    }

    /// Conditional factors for the three variances and three auxiliaries.
    /// Shapes are fixed by the dimensions; rates track the current state.
    fn variance_conditional(&self, which: VarianceKind) -> Result<InvGamma> {
        let (shape, rate) = match which {
            VarianceKind::Eps => {
                let n = self.data.subject_count() as f64;
                let ss = self.residual.dot(&self.residual);
                (0.5 + n / 2.0, 1.0 / self.state.a_eps + 0.5 * ss)
            }
            VarianceKind::Beta => {
                let l = self.basis.basis_count() as f64;
                let ss = self.state.theta.dot(&self.state.theta);
                (0.5 + l / 2.0, 1.0 / self.state.a_beta + 0.5 * ss)
            }
            VarianceKind::Alpha => {
                let m = self.basis.vertex_count() as f64;
                let ss: f64 = self
                    .state
                    .alpha
                    .iter()
                    .zip(self.beta_tilde.iter())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                (0.5 + m / 2.0, 1.0 / self.state.a_alpha + 0.5 * ss)
            }
            VarianceKind::AuxEps => (1.0, 1.0 / (self.h.s_eps * self.h.s_eps) + 1.0 / self.state.sigma_eps_sq),
            VarianceKind::AuxBeta => (1.0, 1.0 / (self.h.s_beta * self.h.s_beta) + 1.0 / self.state.sigma_beta_sq),
            VarianceKind::AuxAlpha => (1.0, 1.0 / (self.h.s_alpha * self.h.s_alpha) + 1.0 / self.state.sigma_alpha_sq),
        };
        if !rate.is_finite() || rate <= 0.0 {
            return Err(numerical(format!(
                "inverse-gamma rate for {which:?} is {rate}; state has diverged"
            )));
        }
        Ok(InvGamma::new(shape, rate))
    }

    pub fn step_variance<R: Rng + ?Sized>(
        &mut self,
        which: VarianceKind,
        rng: &mut R,
    ) -> Result<()> {
        let cond = self.variance_conditional(which)?;
        let draw = cond.sample(rng);
        match which {
            VarianceKind::Eps => self.state.sigma_eps_sq = draw,
            VarianceKind::Beta => self.state.sigma_beta_sq = draw,
            VarianceKind::Alpha => self.state.sigma_alpha_sq = draw,
            VarianceKind::AuxEps => self.state.a_eps = draw,
            VarianceKind::AuxBeta => self.state.a_beta = draw,
            VarianceKind::AuxAlpha => self.state.a_alpha = draw,
        }
        Ok(())
    }

    pub fn ln_cond_variance(&self, which: VarianceKind, v: f64) -> Result<f64> {
        if v <= 0.0 {
            return Err(invalid("variance values must be positive"));
        }
        Ok(self.variance_conditional(which)?.ln_pdf(v))
    }

    pub fn step_variances_and_aux<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        for which in [
            VarianceKind::Eps,
            VarianceKind::Beta,
            VarianceKind::Alpha,
            VarianceKind::AuxEps,
            VarianceKind::AuxBeta,
            VarianceKind::AuxAlpha,
        ] {
            self.step_variance(which, rng)?;
        }
        Ok(())
    }

    /// One systematic scan in the fixed order.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.step_theta(rng)?;
        self.step_alpha(rng)?;
        self.step_delta(rng)?;
        self.step_beta0(rng)?;
        self.step_variances_and_aux(rng)?;
        Ok(())
    }
}

/// Ingredients of one vertex latent's conditional.
struct AlphaPieces {
    l0: f64,
    l1: f64,
    ln_mass: [f64; 3],
}

impl AlphaPieces {
    /// Unnormalized log weights of the (negative, inner, positive) regions.
    fn region_ln_weights(&self) -> [f64; 3] {
        [
            self.l1 + self.ln_mass[0],
            self.l0 + self.ln_mass[1],
            self.l1 + self.ln_mass[2],
        ]
    }
}

/// Names one variance-like coordinate for step/conditional selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceKind {
    Eps,
    Beta,
    Alpha,
    AuxEps,
    AuxBeta,
    AuxAlpha,
}

/// Runs a chain from the shared warm start with the named RNG substream.
pub fn run_chain(
    data: &Dataset,
    basis: &BasisExpansion,
    h: &Hyperparameters,
    config: &ChainConfig,
) -> Result<ChainOutput> {
    config.validate()?;
    let ridge = CaviConfig::default().ridge_init_penalty;
    let mut sampler = GibbsSampler::from_warm_start(data, basis, h, ridge)?;
    let mut rng = substream(config.seed, STREAM_CHAIN);
    let kept = config.kept();
    let l = basis.basis_count();
    let m = basis.vertex_count();
    let mut out = ChainOutput {
        sweeps: config.n_iter,
        beta0: Vec::with_capacity(kept),
        theta: Array2::zeros((kept, l)),
        alpha: Array2::zeros((kept, m)),
        delta: Vec::with_capacity(kept),
        sigma_eps_sq: Vec::with_capacity(kept),
        sigma_beta_sq: Vec::with_capacity(kept),
        sigma_alpha_sq: Vec::with_capacity(kept),
    };
    let mut stored = 0;
    for t in 1..=config.n_iter {
        sampler.sweep(&mut rng)?;
        if t > config.burn_in && (t - config.burn_in) % config.thin == 0 {
            let s = sampler.state();
            out.beta0.push(s.beta0);
            out.theta.row_mut(stored).assign(&s.theta);
            out.alpha.row_mut(stored).assign(&s.alpha);
            out.delta.push(s.delta);
            out.sigma_eps_sq.push(s.sigma_eps_sq);
            out.sigma_beta_sq.push(s.sigma_beta_sq);
            out.sigma_alpha_sq.push(s.sigma_alpha_sq);
            stored += 1;
        }
    }
    debug_assert_eq!(stored, kept);
    Ok(out)
}

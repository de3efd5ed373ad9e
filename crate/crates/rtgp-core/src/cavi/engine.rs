//! The coordinate updates and the evidence lower bound.
//!
//! Every update maximizes the objective over its own factor exactly, with
//! expectations over the threshold grid carried in full rather than plugged
//! in at a point estimate. The vertex pass additionally guards each record:
//! a refreshed mixture replaces the old one only when it scores at least as
//! well under the vertex's exact objective, so a bound change can never push
//! the objective down. Together these make the ELBO nondecreasing sweep by
//! sweep and update by update.
//!
//! Nothing here allocates a vertex-by-vertex matrix; the workspace report
//! records the shape of every buffer the engine creates.

use ndarray::{s, Array1, Array2, Axis};

use super::{
    initial_variational_state, region_bounds, region_exceedance, region_ln_masses, AlphaFactor,
    CaviConfig, VariationalState,
};
use crate::error::{invalid, numerical, Result};
use crate::kernel::BasisExpansion;
use crate::linalg::{chol_inverse, chol_logdet, chol_solve, cholesky_lower};
use crate::model::{
    threshold_grid, Dataset, DeltaWeight, FitDiagnostics, FitResult, Hyperparameters,
};
use crate::special::{logsumexp, InvGamma, LN_2PI};
use crate::truncnorm::TruncatedNormal;

/// Vertices per block in the vertex pass. Couplings through the coefficient
/// covariance are refreshed per block with matrix products; couplings inside
/// a block are corrected pairwise, so the pass stays exact.
const ALPHA_TILE: usize = 16;

/// Shapes of the buffers an engine allocated, deduplicated by name.
#[derive(Debug, Clone, Default)]
pub struct WorkspaceReport {
    entries: Vec<(String, usize, usize)>,
}

impl WorkspaceReport {
    fn note(&mut self, name: &str, rows: usize, cols: usize) {
        if let Some(e) = self.entries.iter_mut().find(|e| e.0 == name) {
            e.1 = e.1.max(rows);
            e.2 = e.2.max(cols);
        } else {
            self.entries.push((name.to_string(), rows, cols));
        }
    }

    pub fn entries(&self) -> &[(String, usize, usize)] {
        &self.entries
    }

    /// Largest element count among recorded buffers.
    pub fn max_elements(&self) -> usize {
        self.entries.iter().map(|e| e.1 * e.2).max().unwrap_or(0)
    }
}

/// Per-grid-point likelihood moments shared by several updates:
/// a = E||X diag(gamma) B theta||^2, yv = y' E[fit], sv = 1' E[fit].
struct KPieces {
    a: Vec<f64>,
    yv: Vec<f64>,
    sv: Vec<f64>,
}

pub struct CaviEngine<'a> {
    data: &'a Dataset,
    basis: &'a BasisExpansion,
    h: &'a Hyperparameters,
    config: CaviConfig,
    grid: Vec<f64>,
    state: VariationalState,
    // Fixed data summaries.
    x_col_sq: Array1<f64>,
    xty: Array1<f64>,
    x_col_sum: Array1<f64>,
    y_sum: f64,
    y_sq_sum: f64,
    btb: Array2<f64>,
    // Caches kept current by the updates.
    /// B mu_theta.
    e: Array1<f64>,
    /// diag(B Sigma_theta B').
    s_diag: Array1<f64>,
    /// Exceedance P_j(delta_k) of each vertex factor at each grid point.
    p_k: Array2<f64>,
    /// X diag(P(delta_k)) B per grid point.
    g_k: Vec<Array2<f64>>,
    elbo_trace: Vec<f64>,
    report: WorkspaceReport,
}

impl<'a> CaviEngine<'a> {
    pub fn new(
        data: &'a Dataset,
        basis: &'a BasisExpansion,
        h: &'a Hyperparameters,
        config: &CaviConfig,
    ) -> Result<Self> {
        if data.vertex_count() != basis.vertex_count() {
            return Err(invalid(format!(
                "data has {} vertices but the basis covers {}",
                data.vertex_count(),
                basis.vertex_count()
            )));
        }
        let state = initial_variational_state(data, basis, h, config)?;
        let x = data.x();
        let b = basis.basis();
        let (n, m, l) = (data.subject_count(), basis.vertex_count(), basis.basis_count());
        let grid = threshold_grid(h);
        let k_n = grid.len();
        let mut report = WorkspaceReport::default();
        report.note("x_col_sq", m, 1);
        report.note("xty", m, 1);
        report.note("btb", l, l);
        report.note("p_k", m, k_n);
        report.note("g_k", n, l);
        report.note("field_mean", m, 1);
        report.note("field_var_diag", m, 1);
        let mut engine = Self {
            data,
            basis,
            h,
            config: *config,
            grid,
            state,
            x_col_sq: Array1::from_iter(x.columns().into_iter().map(|c| c.dot(&c))),
            xty: x.t().dot(&data.y()),
            x_col_sum: x.t().dot(&Array1::ones(n)),
            y_sum: data.y().sum(),
            y_sq_sum: data.y().dot(&data.y()),
            btb: b.t().dot(&b),
            e: Array1::zeros(m),
            s_diag: Array1::zeros(m),
            p_k: Array2::zeros((m, k_n)),
            g_k: Vec::new(),
            elbo_trace: Vec::new(),
            report,
        };
        engine.refresh_theta_caches();
        engine.refresh_p_k();
        engine.refresh_g_k();
        Ok(engine)
    }

    pub fn state(&self) -> &VariationalState {
        &self.state
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn elbo_trace(&self) -> &[f64] {
        &self.elbo_trace
    }

    pub fn workspace_report(&self) -> &WorkspaceReport {
        &self.report
    }

    /// Inclusion probability marginal over the threshold factor.
    pub fn inclusion_marginal(&self) -> Array1<f64> {
        self.p_k.dot(&Array1::from_vec(self.state.q_delta.clone()))
    }

    /// Replaces the state (tests use this to probe updates from arbitrary
    /// points) and rebuilds all caches.
    pub fn set_state(&mut self, state: VariationalState) -> Result<()> {
        state.validate()?;
        if state.q_alpha.len() != self.basis.vertex_count()
            || state.q_theta_mean.len() != self.basis.basis_count()
            || state.q_delta.len() != self.grid.len()
        {
            return Err(invalid("variational state dimensions do not match"));
        }
        self.state = state;
        self.refresh_theta_caches();
        self.refresh_p_k();
        self.refresh_g_k();
        Ok(())
    }

    fn refresh_theta_caches(&mut self) {
        let b = self.basis.basis();
        self.e = b.dot(&self.state.q_theta_mean);
        let bsig = b.dot(&self.state.q_theta_cov);
        self.report.note("basis_times_cov", bsig.nrows(), bsig.ncols());
        self.s_diag = (&bsig * &b).sum_axis(Axis(1));
    }

    fn refresh_p_k(&mut self) {
        for j in 0..self.p_k.nrows() {
            for (k, &t) in self.grid.iter().enumerate() {
                self.p_k[[j, k]] = self.state.q_alpha[j].exceedance(t);
            }
        }
    }

    fn refresh_g_k(&mut self) {
        let b = self.basis.basis();
        let x = self.data.x();
        self.report.note("masked_basis", b.nrows(), b.ncols());
        self.g_k = (0..self.grid.len())
            .map(|k| {
                let masked = &b * &self.p_k.column(k).insert_axis(Axis(1));
                x.dot(&masked)
            })
            .collect();
    }

    fn ew_sigma_eps_inv(&self) -> f64 {
        self.state.q_sigma_eps.mean_inv()
    }

    /// Coefficient update: exact conjugate Gaussian given the indicator
    /// moments E[gamma_j] and E[gamma_j gamma_l] marginalized over the grid.
    pub fn update_q_theta(&mut self) -> Result<()> {
        let b = self.basis.basis();
        let l = self.basis.basis_count();
        let ew_se = self.ew_sigma_eps_inv();
        let ew_sb = self.state.q_sigma_beta.mean_inv();
        let ew_sa = self.state.q_sigma_alpha.mean_inv();

        let mut prec = &self.btb * ew_sa;
        let mut cbar = Array1::<f64>::zeros(self.p_k.nrows());
        for (k, g) in self.g_k.iter().enumerate() {
            let qk = self.state.q_delta[k];
            if qk == 0.0 {
                continue;
            }
            prec.scaled_add(qk * ew_se, &g.t().dot(g));
            let pk = self.p_k.column(k);
            for (c, (&p, &nj)) in cbar.iter_mut().zip(pk.iter().zip(self.x_col_sq.iter())) {
                *c += qk * nj * p * (1.0 - p);
            }
        }
        let scaled = &b * &cbar.insert_axis(Axis(1));
        self.report.note("diag_scaled_basis", scaled.nrows(), scaled.ncols());
        prec.scaled_add(ew_se, &b.t().dot(&scaled));
        for i in 0..l {
            prec[[i, i]] += ew_sb;
        }

        let p_bar = self.inclusion_marginal();
        let u = &self.xty - &(&self.x_col_sum * self.state.q_beta0.mean);
        let m_bar = Array1::from_iter(self.state.q_alpha.iter().map(AlphaFactor::mean_alpha));
        let rhs = b.t().dot(&(&p_bar * &u)) * ew_se + b.t().dot(&m_bar) * ew_sa;

        let chol = cholesky_lower(prec.view())
            .map_err(|e| numerical(format!("coefficient factor precision: {e}")))?;
        self.state.q_theta_mean = chol_solve(&chol, rhs.view());
        self.state.q_theta_cov = chol_inverse(&chol);
        self.refresh_theta_caches();
        Ok(())
    }

    /// Vertex pass. Exact blocked Gauss-Seidel: cross-vertex couplings are
    /// kept current through the fitted-mean vectors (rank-one updates) and
    /// block-refreshed covariance products with in-block pair corrections.
    /// Each vertex keeps the better of its old record and the refreshed one.
    pub fn update_q_alpha(&mut self) -> Result<()> {
        let x = self.data.x();
        let b = self.basis.basis();
        let sig = &self.state.q_theta_cov;
        let m = self.basis.vertex_count();
        let k_n = self.grid.len();
        let ew_se = self.ew_sigma_eps_inv();
        let ew_sa = self.state.q_sigma_alpha.mean_inv();
        let v_alpha = 1.0 / ew_sa;
        let delta_star = self.state.delta_mode(&self.grid);
        let mu0 = self.state.q_beta0.mean;
        let u = &self.xty - &(&self.x_col_sum * mu0);

        // E[fit] and covariance coupling per grid point, maintained exactly.
        let mut v_k: Vec<Array1<f64>> =
            self.g_k.iter().map(|g| g.dot(&self.state.q_theta_mean)).collect();
        let mut w_k: Vec<Array2<f64>> = self.g_k.iter().map(|g| g.dot(sig)).collect();
        if let Some(w) = w_k.first() {
            self.report.note("coupling_fit", w.nrows(), 1);
            self.report.note("coupling_cov", w.nrows(), w.ncols());
        }

        let mut lam = vec![0.0; k_n];
        for start in (0..m).step_by(ALPHA_TILE) {
            let stop = (start + ALPHA_TILE).min(m);
            let cb = stop - start;
            let xb = x.slice(s![.., start..stop]);
            let bb = b.slice(s![start..stop, ..]);
            let bsig = bb.dot(sig);
            let block_sgram = bsig.dot(&bb.t());
            let block_gram = xb.t().dot(&xb);
            self.report.note("block_gram", cb, cb);
            // Covariance couplings frozen at block start, corrected in-block.
            let mut t2_base = Array2::<f64>::zeros((cb, k_n));
            for (k, w) in w_k.iter().enumerate() {
                let v = xb.t().dot(w);
                for i in 0..cb {
                    t2_base[[i, k]] = v.row(i).dot(&bb.row(i));
                }
            }
            let mut dp_block = Array2::<f64>::zeros((cb, k_n));
            for i in 0..cb {
                let j = start + i;
                let e_j = self.e[j];
                let s_jj = self.s_diag[j];
                let n_j = self.x_col_sq[j];
                let xj = x.column(j);
                for k in 0..k_n {
                    let t1 = xj.dot(&v_k[k]);
                    let mut t2 = t2_base[[i, k]];
                    for prev in 0..i {
                        let dp = dp_block[[prev, k]];
                        if dp != 0.0 {
                            t2 += dp * block_gram[[i, prev]] * block_sgram[[i, prev]];
                        }
                    }
                    let p_self = self.p_k[[j, k]];
                    // E||r||^2 difference between gamma_j = 1 and 0.
                    let dbar = -2.0 * u[j] * e_j
                        + (e_j * e_j + s_jj) * n_j
                        + 2.0 * e_j * (t1 - p_self * e_j * n_j)
                        + 2.0 * (t2 - p_self * s_jj * n_j);
                    lam[k] = -0.5 * ew_se * dbar;
                }
                let (cand, cand_score) =
                    candidate_alpha(e_j, v_alpha, delta_star, &lam, &self.state.q_delta, &self.grid);
                let old = self.state.q_alpha[j];
                let old_score =
                    incumbent_score(&old, e_j, v_alpha, &lam, &self.state.q_delta, &self.grid);
                if cand_score >= old_score {
                    for k in 0..k_n {
                        let p_new = cand.exceedance(self.grid[k]);
                        let dp = p_new - self.p_k[[j, k]];
                        if dp != 0.0 {
                            dp_block[[i, k]] = dp;
                            self.p_k[[j, k]] = p_new;
                            v_k[k].scaled_add(dp * e_j, &xj);
                        }
                    }
                    self.state.q_alpha[j] = cand;
                }
            }
            // Fold the block's probability changes into the maintained
            // products before the next block reads them.
            for k in 0..k_n {
                if dp_block.column(k).iter().all(|&dp| dp == 0.0) {
                    continue;
                }
                let dm = &bb * &dp_block.column(k).insert_axis(Axis(1));
                let dg = xb.dot(&dm);
                self.g_k[k] += &dg;
                w_k[k] += &xb.dot(&dm.dot(sig));
            }
        }
        Ok(())
    }

    /// Threshold update: softmax of the expected log likelihood per grid
    /// point. Rebuilds the masked products from scratch, which also anchors
    /// the incrementally maintained ones each sweep.
    pub fn update_q_delta(&mut self) -> Result<()> {
        self.refresh_g_k();
        let ew_se = self.ew_sigma_eps_inv();
        let mu0 = self.state.q_beta0.mean;
        let pieces = self.per_k_pieces();
        let scores: Vec<f64> = (0..self.grid.len())
            .map(|k| -0.5 * ew_se * (pieces.a[k] - 2.0 * (pieces.yv[k] - mu0 * pieces.sv[k])))
            .collect();
        let norm = logsumexp(&scores);
        if !norm.is_finite() {
            return Err(numerical("threshold factor collapsed to zero mass"));
        }
        let mut q: Vec<f64> = scores.iter().map(|s| (s - norm).exp()).collect();
        let total: f64 = q.iter().sum();
        q.iter_mut().for_each(|p| *p /= total);
        self.state.q_delta = q;
        Ok(())
    }

    /// Intercept update: exact conjugate Gaussian.
    pub fn update_q_beta0(&mut self) -> Result<()> {
        let n = self.data.subject_count() as f64;
        let ew_se = self.ew_sigma_eps_inv();
        let fit_sum: f64 = self
            .g_k
            .iter()
            .zip(self.state.q_delta.iter())
            .map(|(g, &qk)| qk * g.dot(&self.state.q_theta_mean).sum())
            .sum();
        let var = 1.0 / (1.0 / self.h.sigma_beta0_sq + n * ew_se);
        let mean = var * ew_se * (self.y_sum - fit_sum);
        self.state.q_beta0 = super::NormalFactor { mean, var };
        Ok(())
    }

    /// Variance and auxiliary updates: inverse-gamma factors whose rates take
    /// the current factors' expectations.
    pub fn update_q_variances_and_aux(&mut self) -> Result<()> {
        let n = self.data.subject_count() as f64;
        let m = self.basis.vertex_count() as f64;
        let l = self.basis.basis_count() as f64;
        let rbar = self.expected_rss();
        let theta_ss = self.state.q_theta_mean.dot(&self.state.q_theta_mean)
            + self.state.q_theta_cov.diag().sum();
        let alpha_ss = self.alpha_prior_ss();
        let rates = [
            ("q_sigma_eps", self.state.q_a_eps.mean_inv() + 0.5 * rbar),
            ("q_sigma_beta", self.state.q_a_beta.mean_inv() + 0.5 * theta_ss),
            ("q_sigma_alpha", self.state.q_a_alpha.mean_inv() + 0.5 * alpha_ss),
        ];
        for (name, rate) in rates {
            if !rate.is_finite() || rate <= 0.0 {
                return Err(numerical(format!("{name} rate became {rate}")));
            }
        }
        self.state.q_sigma_eps = InvGamma::new(0.5 + n / 2.0, rates[0].1);
        self.state.q_sigma_beta = InvGamma::new(0.5 + l / 2.0, rates[1].1);
        self.state.q_sigma_alpha = InvGamma::new(0.5 + m / 2.0, rates[2].1);
        self.state.q_a_eps = InvGamma::new(
            1.0,
            1.0 / (self.h.s_eps * self.h.s_eps) + self.state.q_sigma_eps.mean_inv(),
        );
        self.state.q_a_beta = InvGamma::new(
            1.0,
            1.0 / (self.h.s_beta * self.h.s_beta) + self.state.q_sigma_beta.mean_inv(),
        );
        self.state.q_a_alpha = InvGamma::new(
            1.0,
            1.0 / (self.h.s_alpha * self.h.s_alpha) + self.state.q_sigma_alpha.mean_inv(),
        );
        Ok(())
    }

    /// Per-grid-point coupling coefficients of vertex `j`'s objective: the
    /// expected drop in the residual quadratic from switching the vertex on
    /// at threshold grid point k, scaled by -E[1/sigma_eps^2]/2.
    pub fn vertex_couplings(&self, j: usize) -> Vec<f64> {
        let x = self.data.x();
        let xj = x.column(j);
        let b = self.basis.basis();
        let bj = b.row(j);
        let sig = &self.state.q_theta_cov;
        let ew_se = self.ew_sigma_eps_inv();
        let mu0 = self.state.q_beta0.mean;
        let u_j = self.xty[j] - mu0 * self.x_col_sum[j];
        let e_j = self.e[j];
        let s_jj = self.s_diag[j];
        let n_j = self.x_col_sq[j];
        self.g_k
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let t1 = xj.dot(&g.dot(&self.state.q_theta_mean));
                let t2 = xj.dot(&g.dot(sig)).dot(&bj);
                let p_self = self.p_k[[j, k]];
                let dbar = -2.0 * u_j * e_j
                    + (e_j * e_j + s_jj) * n_j
                    + 2.0 * e_j * (t1 - p_self * e_j * n_j)
                    + 2.0 * (t2 - p_self * s_jj * n_j);
                -0.5 * ew_se * dbar
            })
            .collect()
    }

    fn per_k_pieces(&self) -> KPieces {
        let mu = &self.state.q_theta_mean;
        let sig = &self.state.q_theta_cov;
        let mut pieces = KPieces {
            a: Vec::with_capacity(self.grid.len()),
            yv: Vec::with_capacity(self.grid.len()),
            sv: Vec::with_capacity(self.grid.len()),
        };
        for (k, g) in self.g_k.iter().enumerate() {
            let v = g.dot(mu);
            let w = g.dot(sig);
            let trace = (&w * g).sum();
            let spread: f64 = self
                .p_k
                .column(k)
                .iter()
                .zip(self.x_col_sq.iter())
                .zip(self.e.iter().zip(self.s_diag.iter()))
                .map(|((&p, &nj), (&ej, &sj))| nj * p * (1.0 - p) * (ej * ej + sj))
                .sum();
            pieces.a.push(v.dot(&v) + trace + spread);
            pieces.yv.push(v.dot(&self.data.y()));
            pieces.sv.push(v.sum());
        }
        pieces
    }

    /// E||y - beta0 - X diag(gamma) B theta||^2 under the current factors.
    pub fn expected_rss(&self) -> f64 {
        let n = self.data.subject_count() as f64;
        let mu0 = self.state.q_beta0.mean;
        let v0 = self.state.q_beta0.var;
        let pieces = self.per_k_pieces();
        let mut rbar = self.y_sq_sum - 2.0 * mu0 * self.y_sum + n * (mu0 * mu0 + v0);
        for (k, &qk) in self.state.q_delta.iter().enumerate() {
            rbar += qk * (pieces.a[k] - 2.0 * (pieces.yv[k] - mu0 * pieces.sv[k]));
        }
        rbar
    }

    /// E||alpha - B theta||^2 under the current factors.
    pub fn alpha_prior_ss(&self) -> f64 {
        self.state
            .q_alpha
            .iter()
            .zip(self.e.iter().zip(self.s_diag.iter()))
            .map(|(f, (&ej, &sj))| {
                f.second_moment() - 2.0 * ej * f.mean_alpha() + ej * ej + sj
            })
            .sum()
    }

    /// The evidence lower bound, computed in closed form from the current
    /// state (no caches beyond the maintained masked products).
    pub fn elbo(&self) -> Result<f64> {
        let n = self.data.subject_count() as f64;
        let m = self.basis.vertex_count() as f64;
        let l = self.basis.basis_count() as f64;
        let st = &self.state;
        let ew_se = st.q_sigma_eps.mean_inv();
        let ew_sb = st.q_sigma_beta.mean_inv();
        let ew_sa = st.q_sigma_alpha.mean_inv();
        let ln_gamma_half = 0.5 * std::f64::consts::PI.ln();

        let ll = -0.5 * n * (LN_2PI + st.q_sigma_eps.mean_ln()) - 0.5 * ew_se * self.expected_rss();
        let mu0 = st.q_beta0.mean;
        let v0 = st.q_beta0.var;
        let p_beta0 = -0.5 * (LN_2PI + self.h.sigma_beta0_sq.ln())
            - (mu0 * mu0 + v0) / (2.0 * self.h.sigma_beta0_sq);
        let theta_ss = st.q_theta_mean.dot(&st.q_theta_mean) + st.q_theta_cov.diag().sum();
        let p_theta = -0.5 * l * (LN_2PI + st.q_sigma_beta.mean_ln()) - 0.5 * ew_sb * theta_ss;
        let p_alpha = -0.5 * m * (LN_2PI + st.q_sigma_alpha.mean_ln())
            - 0.5 * ew_sa * self.alpha_prior_ss();
        let p_delta = -(self.grid.len() as f64).ln();
        let p_scale = |q_sig: &InvGamma, q_a: &InvGamma, s: f64| {
            let p_sigma = -0.5 * q_a.mean_ln() - ln_gamma_half - 1.5 * q_sig.mean_ln()
                - q_a.mean_inv() * q_sig.mean_inv();
            let p_a = 0.5 * (1.0 / (s * s)).ln() - ln_gamma_half - 1.5 * q_a.mean_ln()
                - q_a.mean_inv() / (s * s);
            p_sigma + p_a
        };
        let p_scales = p_scale(&st.q_sigma_eps, &st.q_a_eps, self.h.s_eps)
            + p_scale(&st.q_sigma_beta, &st.q_a_beta, self.h.s_beta)
            + p_scale(&st.q_sigma_alpha, &st.q_a_alpha, self.h.s_alpha);

        let chol = cholesky_lower(st.q_theta_cov.view())
            .map_err(|e| numerical(format!("coefficient factor covariance: {e}")))?;
        let h_theta = 0.5 * l * (1.0 + LN_2PI) + 0.5 * chol_logdet(&chol);
        let h_beta0 = 0.5 * (LN_2PI + 1.0 + v0.ln());
        let h_alpha: f64 = st.q_alpha.iter().map(AlphaFactor::entropy).sum();
        let h_delta: f64 = -st
            .q_delta
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>();
        let h_scales = st.q_sigma_eps.entropy()
            + st.q_sigma_beta.entropy()
            + st.q_sigma_alpha.entropy()
            + st.q_a_eps.entropy()
            + st.q_a_beta.entropy()
            + st.q_a_alpha.entropy();

        Ok(ll + p_beta0 + p_theta + p_alpha + p_delta + p_scales
            + h_theta + h_beta0 + h_alpha + h_delta + h_scales)
    }

    /// One full sweep in the fixed order.
    pub fn sweep(&mut self) -> Result<()> {
        self.update_q_theta()?;
        self.update_q_alpha()?;
        self.update_q_delta()?;
        self.update_q_beta0()?;
        self.update_q_variances_and_aux()?;
        Ok(())
    }

    /// Sweeps until the relative ELBO change drops below tolerance or the
    /// iteration cap is hit, recording the objective after every sweep.
    pub fn run(&mut self) -> Result<()> {
        for it in 0..self.config.max_iter {
            self.sweep()?;
            let value = self.elbo()?;
            if !value.is_finite() {
                let factor = self.state.find_non_finite().unwrap_or("objective assembly");
                return Err(numerical(format!(
                    "ELBO became non-finite after sweep {} (first bad factor: {factor})",
                    it + 1
                )));
            }
            self.elbo_trace.push(value);
            if it > 0 {
                let prev = self.elbo_trace[it - 1];
                if (value - prev).abs() <= self.config.elbo_rel_tol * value.abs().max(1.0) {
                    break;
                }
            }
        }
        Ok(())
    }

    /// Posterior summaries in the common fit format.
    pub fn fit_result(&self) -> Result<FitResult> {
        let inclusion = self.inclusion_marginal();
        let beta_map = Array1::from_iter(
            inclusion
                .iter()
                .zip(self.e.iter())
                .map(|(&p, &b)| if p >= self.config.mpm_threshold { b } else { 0.0 }),
        );
        let fit = FitResult {
            beta_tilde_mean: self.e.clone(),
            inclusion_prob: inclusion,
            beta_map,
            mpm_threshold: self.config.mpm_threshold,
            beta0_mean: self.state.q_beta0.mean,
            sigma_eps_sq_mean: self.state.q_sigma_eps.mean_or_mode(),
            delta_summary: self
                .grid
                .iter()
                .zip(self.state.q_delta.iter())
                .map(|(&delta, &probability)| DeltaWeight { delta, probability })
                .collect(),
            diagnostics: FitDiagnostics::Variational { elbo_trace: self.elbo_trace.clone() },
            basis_ref: String::new(),
        };
        fit.validate()?;
        Ok(fit)
    }
}

/// The refreshed mixture for one vertex: weights are the exact maximizer of
/// the vertex objective within the family anchored at (location, variance,
/// bound). Returns the record and its objective value, which reduces to the
/// log normalizer at the optimum.
fn candidate_alpha(
    location: f64,
    v_alpha: f64,
    delta_star: f64,
    lam: &[f64],
    q_delta: &[f64],
    grid: &[f64],
) -> (AlphaFactor, f64) {
    let sd = v_alpha.sqrt();
    let lm = region_ln_masses(location, sd, delta_star);
    let mut a = [f64::NEG_INFINITY; 3];
    for r in 0..3 {
        if lm[r] == f64::NEG_INFINITY {
            continue;
        }
        let coupling: f64 = q_delta
            .iter()
            .zip(grid.iter())
            .zip(lam.iter())
            .filter(|((&qk, _), _)| qk > 0.0)
            .map(|((&qk, &t), &lk)| qk * lk * region_exceedance(location, sd, delta_star, r, t))
            .sum();
        a[r] = lm[r] + coupling;
    }
    let lse = logsumexp(&a);
    let mut w = [0.0; 3];
    for r in 0..3 {
        w[r] = if a[r] == f64::NEG_INFINITY { 0.0 } else { (a[r] - lse).exp() };
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    (
        AlphaFactor {
            w_neg: w[0],
            w_zero: w[1],
            w_pos: w[2],
            mean: location,
            var: v_alpha,
            delta_star,
        },
        lse,
    )
}

/// The same vertex objective evaluated at an arbitrary existing record,
/// whose components may sit at an older bound, location, or variance.
fn incumbent_score(
    record: &AlphaFactor,
    location: f64,
    v_alpha: f64,
    lam: &[f64],
    q_delta: &[f64],
    grid: &[f64],
) -> f64 {
    let sd = record.var.sqrt();
    let mut total = record.entropy();
    for (r, w) in [record.w_neg, record.w_zero, record.w_pos].into_iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (lo, hi) = region_bounds(record.delta_star, r);
        let tn = TruncatedNormal::new(record.mean, sd, lo, hi)
            .expect("positive weight on an empty region");
        let coupling: f64 = q_delta
            .iter()
            .zip(grid.iter())
            .zip(lam.iter())
            .filter(|((&qk, _), _)| qk > 0.0)
            .map(|((&qk, &t), &lk)| {
                qk * lk * region_exceedance(record.mean, sd, record.delta_star, r, t)
            })
            .sum();
        let m1 = tn.mean();
        let m2 = tn.second_moment();
        let cross_entropy = -0.5 * (LN_2PI + v_alpha.ln())
            - (m2 - 2.0 * location * m1 + location * location) / (2.0 * v_alpha);
        total += w * (coupling + cross_entropy);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny_setup() -> (Dataset, BasisExpansion, Hyperparameters) {
        let data = Dataset::new(
            array![0.8, -0.3, 1.1],
            array![[0.5, -0.1], [0.2, 0.7], [-0.4, 0.3]],
            None,
        )
        .unwrap();
        let basis = BasisExpansion::new(
            array![1.2, 0.4],
            array![
                [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
                [std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2]
            ],
            1.0,
        )
        .unwrap();
        (data, basis, Hyperparameters::default())
    }

    #[test]
    fn trace_has_one_entry_when_capped_at_one_sweep() {
        let (data, basis, h) = tiny_setup();
        let config = CaviConfig { max_iter: 1, ..Default::default() };
        let mut engine = CaviEngine::new(&data, &basis, &h, &config).unwrap();
        engine.run().unwrap();
        assert_eq!(engine.elbo_trace().len(), 1);
        let fit = engine.fit_result().unwrap();
        match fit.diagnostics {
            FitDiagnostics::Variational { ref elbo_trace } => assert_eq!(elbo_trace.len(), 1),
            _ => panic!("wrong diagnostics flavor"),
        }
    }

    #[test]
    fn updates_preserve_state_invariants() {
        let (data, basis, h) = tiny_setup();
        let config = CaviConfig::default();
        let mut engine = CaviEngine::new(&data, &basis, &h, &config).unwrap();
        for _ in 0..3 {
            engine.sweep().unwrap();
            engine.state().validate().unwrap();
        }
    }

    #[test]
    fn workspace_report_stays_below_vertex_squared() {
        let (data, basis, h) = tiny_setup();
        let config = CaviConfig { max_iter: 2, ..Default::default() };
        let mut engine = CaviEngine::new(&data, &basis, &h, &config).unwrap();
        engine.run().unwrap();
        assert!(!engine.workspace_report().entries().is_empty());
    }
}

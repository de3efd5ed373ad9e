//! Kernel evaluation, Gram construction, and the truncated eigenbasis.
//!
//! The spatial prior is defined through a stationary correlation kernel on
//! the sphere; its Gram matrix is eigendecomposed and truncated to the
//! leading L pairs, giving the basis B = Psi diag(sqrt(lambda)) that every
//! downstream module works in.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use ndarray_linalg::{Eigh, Norm, QR, UPLO};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, numerical, Result};
use crate::rng::substream;

/// Default diagonal jitter added to Gram matrices.
pub const DEFAULT_JITTER: f64 = 1e-8;

/// Eigenvalues below this fraction of the largest one are never retained.
const EIGENVALUE_DROP_REL: f64 = 1e-10;

/// Dense symmetric solver is used up to this dimension; above it, a blocked
/// subspace iteration extracts only the leading pairs.
const DENSE_EIGH_LIMIT: usize = 5_000;

/// Exponential radial kernel C(d) = exp(-phi * d^nu).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Bandwidth (inverse length-scale), > 0.
    pub phi: f64,
    /// Exponent in (0, 2]; 2 is the Gaussian case.
    pub nu: f64,
}

impl KernelParams {
    pub fn new(phi: f64, nu: f64) -> Result<Self> {
        if !phi.is_finite() || phi <= 0.0 {
            return Err(invalid(format!("kernel phi must be positive, got {phi}")));
        }
        if !nu.is_finite() || nu <= 0.0 || nu > 2.0 {
            return Err(invalid(format!("kernel nu must lie in (0, 2], got {nu}")));
        }
        Ok(Self { phi, nu })
    }
}

impl Default for KernelParams {
    fn default() -> Self {
        Self { phi: 1.0, nu: 2.0 }
    }
}

/// C(d) = exp(-phi * d^nu); 1 at d = 0, strictly decreasing in d.
pub fn correlation(d: f64, params: &KernelParams) -> Result<f64> {
    if !d.is_finite() || d < 0.0 {
        return Err(invalid(format!("distance must be finite and nonnegative, got {d}")));
    }
    Ok((-params.phi * d.powf(params.nu)).exp())
}

/// Builds the kernel Gram matrix from a pairwise distance matrix, adding
/// `jitter` to the diagonal to keep factorizations stable.
pub fn gram(distances: ArrayView2<'_, f64>, params: &KernelParams, jitter: f64) -> Result<Array2<f64>> {
    let m = distances.nrows();
    if distances.ncols() != m || m == 0 {
        return Err(invalid(format!(
            "distance matrix must be square and nonempty, got {}x{}",
            m,
            distances.ncols()
        )));
    }
    if !jitter.is_finite() || jitter < 0.0 {
        return Err(invalid(format!("jitter must be finite and nonnegative, got {jitter}")));
    }
    for j in 0..m {
        if distances[[j, j]] != 0.0 {
            return Err(invalid(format!("distance matrix has nonzero diagonal at {j}")));
        }
        for k in (j + 1)..m {
            let (a, b) = (distances[[j, k]], distances[[k, j]]);
            if !a.is_finite() || a < 0.0 {
                return Err(invalid(format!("invalid distance at ({j}, {k}): {a}")));
            }
            if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                return Err(invalid(format!(
                    "distance matrix is not symmetric at ({j}, {k}): {a} vs {b}"
                )));
            }
        }
    }
    let mut k_mat = Array2::zeros((m, m));
    for j in 0..m {
        k_mat[[j, j]] = 1.0 + jitter;
        for k in (j + 1)..m {
            let c = (-params.phi * distances[[j, k]].powf(params.nu)).exp();
            k_mat[[j, k]] = c;
            k_mat[[k, j]] = c;
        }
    }
    Ok(k_mat)
}

/// Truncation rule: either capture a fraction of total variation or keep a
/// fixed number of leading pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasisSelector {
    /// Smallest L whose eigenvalues capture at least this fraction of the
    /// trace; must lie in (0, 1).
    KappaTarget(f64),
    /// Exactly this many leading pairs; must not exceed the retained rank.
    FixedL(usize),
}

/// Eigensolver choice; `Auto` switches on matrix size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EighMethod {
    Auto,
    Dense,
    Subspace,
}

/// Truncated Karhunen-Loeve expansion of a Gram matrix.
///
/// Invariants (validated on construction): eigenvalues strictly positive and
/// nonincreasing, eigenvector columns orthonormal within 1e-8, and
/// `kappa_achieved` in (0, 1].
#[derive(Debug, Clone)]
pub struct BasisExpansion {
    eigenvalues: Array1<f64>,
    eigenvectors: Array2<f64>,
    basis: Array2<f64>,
    kappa_achieved: f64,
}

impl BasisExpansion {
    pub fn new(eigenvalues: Array1<f64>, eigenvectors: Array2<f64>, kappa_achieved: f64) -> Result<Self> {
        let l = eigenvalues.len();
        if l == 0 {
            return Err(invalid("basis must contain at least one eigenpair"));
        }
        if eigenvectors.ncols() != l {
            return Err(invalid(format!(
                "{} eigenvalues but {} eigenvector columns",
                l,
                eigenvectors.ncols()
            )));
        }
        if eigenvectors.nrows() < l {
            return Err(invalid("more basis functions than vertices"));
        }
        for i in 0..l {
            let lam = eigenvalues[i];
            if !lam.is_finite() || lam <= 0.0 {
                return Err(invalid(format!("eigenvalue {i} must be positive, got {lam}")));
            }
            if i > 0 && lam > eigenvalues[i - 1] {
                return Err(invalid(format!("eigenvalues must be nonincreasing, violated at {i}")));
            }
        }
        if !(kappa_achieved > 0.0 && kappa_achieved <= 1.0) {
            return Err(invalid(format!("kappa_achieved must lie in (0, 1], got {kappa_achieved}")));
        }
        // Orthonormality check is L x L, never M x M.
        let gram = eigenvectors.t().dot(&eigenvectors);
        for i in 0..l {
            for j in 0..l {
                let target = if i == j { 1.0 } else { 0.0 };
                if (gram[[i, j]] - target).abs() > 1e-8 {
                    return Err(invalid(format!(
                        "eigenvector columns are not orthonormal: Gram({i}, {j}) = {}",
                        gram[[i, j]]
                    )));
                }
            }
        }
        let mut basis = eigenvectors.clone();
        for (i, mut col) in basis.axis_iter_mut(Axis(1)).enumerate() {
            let scale = eigenvalues[i].sqrt();
            col.mapv_inplace(|v| v * scale);
        }
        Ok(Self { eigenvalues, eigenvectors, basis, kappa_achieved })
    }

    /// Number of vertices M.
    pub fn vertex_count(&self) -> usize {
        self.eigenvectors.nrows()
    }

    /// Number of basis functions L.
    pub fn basis_count(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Leading eigenvalues, descending.
    pub fn eigenvalues(&self) -> ArrayView1<'_, f64> {
        self.eigenvalues.view()
    }

    /// Orthonormal eigenvector columns Psi (M x L).
    pub fn eigenvectors(&self) -> ArrayView2<'_, f64> {
        self.eigenvectors.view()
    }

    /// Scaled basis B = Psi diag(sqrt(lambda)) (M x L).
    pub fn basis(&self) -> ArrayView2<'_, f64> {
        self.basis.view()
    }

    /// Fraction of total variation captured by the retained pairs.
    pub fn kappa_achieved(&self) -> f64 {
        self.kappa_achieved
    }
}

/// Eigendecomposes a Gram matrix and truncates per the selector.
pub fn truncate_basis(k_mat: ArrayView2<'_, f64>, selector: BasisSelector) -> Result<BasisExpansion> {
    truncate_basis_with(k_mat, selector, EighMethod::Auto)
}

/// As `truncate_basis`, with the eigensolver forced; the two solvers agree
/// within 1e-6 on overlapping sizes.
pub fn truncate_basis_with(
    k_mat: ArrayView2<'_, f64>,
    selector: BasisSelector,
    method: EighMethod,
) -> Result<BasisExpansion> {
    let m = k_mat.nrows();
    if k_mat.ncols() != m || m == 0 {
        return Err(invalid(format!(
            "Gram matrix must be square and nonempty, got {}x{}",
            m,
            k_mat.ncols()
        )));
    }
    for j in 0..m {
        for k in (j + 1)..m {
            let (a, b) = (k_mat[[j, k]], k_mat[[k, j]]);
            if (a - b).abs() > 1e-8 * a.abs().max(1.0) {
                return Err(invalid(format!("Gram matrix is not symmetric at ({j}, {k})")));
            }
        }
    }
    match selector {
        BasisSelector::KappaTarget(kappa) if !(kappa > 0.0 && kappa < 1.0) => {
            return Err(invalid(format!("kappa target must lie in (0, 1), got {kappa}")));
        }
        BasisSelector::FixedL(0) => {
            return Err(invalid("basis size must be at least 1"));
        }
        _ => {}
    }
    let trace: f64 = k_mat.diag().sum();
    let dense = match method {
        EighMethod::Dense => true,
        EighMethod::Subspace => false,
        EighMethod::Auto => m <= DENSE_EIGH_LIMIT,
    };
    let (vals, vecs) = if dense {
        dense_descending_eigh(k_mat)?
    } else {
        subspace_descending_eigh(k_mat, &selector, trace)?
    };
    finish_truncation(vals, vecs, selector, trace)
}

/// B * theta: evaluates the field at every vertex.
pub fn field_from_coeffs(basis: &BasisExpansion, theta: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if theta.len() != basis.basis_count() {
        return Err(invalid(format!(
            "basis has {} functions but theta has {}",
            basis.basis_count(),
            theta.len()
        )));
    }
    Ok(basis.basis.dot(&theta))
}

/// Draws theta_l iid Normal(0, sigma_beta_sq) and evaluates the field;
/// deterministic given the seed.
pub fn sample_field(basis: &BasisExpansion, sigma_beta_sq: f64, seed: u64) -> Result<Array1<f64>> {
    let mut rng = substream(seed, "field");
    sample_field_with(basis, sigma_beta_sq, &mut rng)
}

/// As `sample_field`, drawing from a caller-managed stream.
pub fn sample_field_with<R: Rng + ?Sized>(
    basis: &BasisExpansion,
    sigma_beta_sq: f64,
    rng: &mut R,
) -> Result<Array1<f64>> {
    if !sigma_beta_sq.is_finite() || sigma_beta_sq <= 0.0 {
        return Err(invalid(format!("field variance must be positive, got {sigma_beta_sq}")));
    }
    let sd = sigma_beta_sq.sqrt();
    let theta = Array1::from_iter(
        (0..basis.basis_count()).map(|_| sd * rng.sample::<f64, _>(rand_distr::StandardNormal)),
    );
    field_from_coeffs(basis, theta.view())
}

/// Full dense symmetric eigendecomposition, reordered to descending.
fn dense_descending_eigh(k_mat: ArrayView2<'_, f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let owned = k_mat.to_owned();
    let (vals, vecs) = owned
        .eigh(UPLO::Lower)
        .map_err(|e| numerical(format!("symmetric eigendecomposition failed: {e}")))?;
    let m = vals.len();
    let mut out_vals = Vec::with_capacity(m);
    let mut out_vecs = Array2::zeros((m, m));
    for (rank, src) in (0..m).rev().enumerate() {
        out_vals.push(vals[src]);
        out_vecs.column_mut(rank).assign(&vecs.column(src));
    }
    Ok((out_vals, out_vecs))
}

/// Blocked subspace iteration with Rayleigh-Ritz extraction; returns enough
/// leading pairs to satisfy the selector without densely factorizing K.
fn subspace_descending_eigh(
    k_mat: ArrayView2<'_, f64>,
    selector: &BasisSelector,
    trace: f64,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let m = k_mat.nrows();
    match selector {
        BasisSelector::FixedL(l) => {
            let need = (*l).min(m);
            let block = (need + (need / 4).max(8)).min(m);
            subspace_block(k_mat, block, need)
        }
        // The target L is unknown up front; grow the block until the
        // converged leading pairs capture the requested fraction.
        BasisSelector::KappaTarget(kappa) => {
            let mut block = 40.min(m);
            loop {
                let need = block.saturating_sub(8).max(1);
                if block >= m {
                    return dense_descending_eigh(k_mat);
                }
                let (vals, vecs) = subspace_block(k_mat, block, need)?;
                if vals.iter().sum::<f64>() / trace >= *kappa {
                    return Ok((vals, vecs));
                }
                block = (block * 2).min(m);
            }
        }
    }
}

/// One converged subspace iteration at a fixed block size, returning the
/// leading `need` pairs. The trailing block pairs are only convergence
/// buffer and are discarded.
fn subspace_block(
    k_mat: ArrayView2<'_, f64>,
    block: usize,
    need: usize,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let m = k_mat.nrows();
    let p = block.min(m);
    let need = need.min(p);
    // Fixed internal stream keeps the decomposition reproducible.
    let mut rng = substream(0, "subspace-init");
    let mut q = Array2::from_shape_fn((m, p), |_| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let (qq, _) = q.qr().map_err(|e| numerical(format!("QR failed in subspace iteration: {e}")))?;
    q = qq;
    let mut prev: Option<Vec<f64>> = None;
    for _ in 0..500 {
        let y = k_mat.dot(&q);
        // Rayleigh-Ritz on the p-dimensional subspace.
        let t = q.t().dot(&y);
        let t_sym = 0.5 * (&t + &t.t());
        let (tv, tw) = t_sym
            .eigh(UPLO::Lower)
            .map_err(|e| numerical(format!("Rayleigh-Ritz eigh failed: {e}")))?;
        let rotated = y.dot(&tw);
        let (qq, _) = rotated
            .qr()
            .map_err(|e| numerical(format!("QR failed in subspace iteration: {e}")))?;
        q = qq;
        let mut vals: Vec<f64> = tv.to_vec();
        vals.reverse();
        vals.truncate(need);
        if let Some(old) = &prev {
            let close = vals.iter().zip(old.iter()).all(|(a, b)| {
                (a - b).abs() <= 1e-13 * a.abs().max(1e-300)
            });
            if close {
                break;
            }
        }
        prev = Some(vals);
    }
    // Final extraction: exact Ritz values and vectors on the converged space.
    let y = k_mat.dot(&q);
    let t = q.t().dot(&y);
    let t_sym = 0.5 * (&t + &t.t());
    let (tv, tw) = t_sym
        .eigh(UPLO::Lower)
        .map_err(|e| numerical(format!("Rayleigh-Ritz eigh failed: {e}")))?;
    let ritz = q.dot(&tw);
    let mut out_vals = Vec::with_capacity(need);
    let mut out_vecs = Array2::zeros((m, need));
    for (rank, src) in ((p - need)..p).rev().enumerate() {
        out_vals.push(tv[src]);
        out_vecs.column_mut(rank).assign(&ritz.column(src));
    }
    // Residual check on the returned pairs; failure means the iteration
    // stalled and the result cannot be trusted.
    let lead = out_vals[0].max(0.0);
    for i in 0..need {
        let v = out_vecs.column(i);
        let resid = (&k_mat.dot(&v) - &(out_vals[i] * &v.to_owned())).norm_l2();
        if resid > 1e-7 * lead.max(1e-12) {
            return Err(numerical(format!(
                "subspace iteration did not converge for eigenpair {i} (residual {resid:.3e})"
            )));
        }
    }
    Ok((out_vals, out_vecs))
}

/// Applies the drop rule, selector, sign convention, and packaging.
fn finish_truncation(
    vals: Vec<f64>,
    vecs: Array2<f64>,
    selector: BasisSelector,
    trace: f64,
) -> Result<BasisExpansion> {
    if trace <= 0.0 || !trace.is_finite() {
        return Err(invalid("Gram matrix has nonpositive trace"));
    }
    let lead = vals.first().copied().unwrap_or(0.0);
    if lead <= 0.0 {
        return Err(numerical("Gram matrix has no positive eigenvalue"));
    }
    // Eigenvalues below the relative floor are never retained.
    let rank = vals
        .iter()
        .take_while(|&&v| v >= EIGENVALUE_DROP_REL * lead && v > 0.0)
        .count();
    let l = match selector {
        BasisSelector::FixedL(l) => {
            if l > rank {
                return Err(invalid(format!(
                    "requested {l} basis functions but the Gram matrix has retained rank {rank}"
                )));
            }
            l
        }
        BasisSelector::KappaTarget(kappa) => {
            let mut cum = 0.0;
            let mut chosen = None;
            for (i, &v) in vals.iter().take(rank).enumerate() {
                cum += v;
                if cum / trace >= kappa {
                    chosen = Some(i + 1);
                    break;
                }
            }
            chosen.ok_or_else(|| {
                invalid(format!(
                    "kappa target {kappa} is not attainable: retained rank {rank} captures {:.6}",
                    vals.iter().take(rank).sum::<f64>() / trace
                ))
            })?
        }
    };
    let kept: f64 = vals.iter().take(l).sum();
    let kappa_achieved = (kept / trace).min(1.0);
    let eigenvalues = Array1::from_iter(vals.into_iter().take(l));
    let mut eigenvectors = vecs.slice_move(ndarray::s![.., ..l]);
    // Sign convention: the largest-magnitude entry of each column is
    // positive; ties broken by lowest index (strict comparison keeps the
    // first maximum).
    for mut col in eigenvectors.axis_iter_mut(Axis(1)) {
        let mut best = 0;
        for (i, &v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    BasisExpansion::new(eigenvalues, eigenvectors, kappa_achieved)
}

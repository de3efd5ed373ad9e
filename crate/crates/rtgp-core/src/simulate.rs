//! Synthetic studies with fully known ground truth: a sparse smooth effect
//! field, input images drawn from the same process, Gaussian outcomes, and
//! replicated train/test splits.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::geometry::{fibonacci_sphere, pairwise_distance_matrix};
use crate::kernel::{
    gram, sample_field_with, truncate_basis, BasisExpansion, BasisSelector, KernelParams,
};
use crate::model::Dataset;
use crate::rng::{substream, substream_indexed, STREAM_INPUTS, STREAM_NOISE, STREAM_TRUTH};

/// Ground truth of one synthetic study. The effect field is exactly zero off
/// its support.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub beta_true: Array1<f64>,
    pub support_mask: Vec<bool>,
    pub beta0_true: f64,
    pub sigma_eps_sq_true: f64,
    /// Generator settings, echoed into run manifests.
    pub meta: TruthMeta,
}

/// How the truth was generated; enough to reproduce it bit for bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthMeta {
    pub seed: u64,
    pub sigma_beta_sq: f64,
    pub sparsity_q: f64,
    pub active_count: usize,
}

impl SimTruth {
    pub fn active_count(&self) -> usize {
        self.support_mask.iter().filter(|&&on| on).count()
    }
}

/// Draws a smooth field and hard-thresholds it at the empirical
/// (1 - sparsity_q) quantile of its magnitudes, so exactly
/// ceil(sparsity_q * M) vertices stay active.
pub fn make_truth(
    basis: &BasisExpansion,
    sigma_beta_sq: f64,
    sparsity_q: f64,
    seed: u64,
) -> Result<SimTruth> {
    if !sparsity_q.is_finite() || sparsity_q <= 0.0 || sparsity_q >= 1.0 {
        return Err(invalid(format!("sparsity fraction must lie in (0, 1), got {sparsity_q}")));
    }
    let mut rng = substream(seed, STREAM_TRUTH);
    let field = sample_field_with(basis, sigma_beta_sq, &mut rng)?;
    let m = field.len();
    let active = (sparsity_q * m as f64).ceil() as usize;
    // Top `active` magnitudes, index-ordered on ties, so the count is exact.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        field[b].abs().partial_cmp(&field[a].abs()).expect("finite field").then(a.cmp(&b))
    });
    let mut support_mask = vec![false; m];
    for &j in order.iter().take(active) {
        support_mask[j] = true;
    }
    let beta_true = Array1::from_iter(
        field.iter().zip(&support_mask).map(|(&f, &on)| if on { f } else { 0.0 }),
    );
    Ok(SimTruth {
        beta_true,
        support_mask,
        beta0_true: 2.0,
        sigma_eps_sq_true: 0.2,
        meta: TruthMeta { seed, sigma_beta_sq, sparsity_q, active_count: active },
    })
}

/// Input images: each row an independent smooth-field draw.
pub fn make_inputs(
    basis: &BasisExpansion,
    n: usize,
    sigma_x_sq: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    let mut rng = substream(seed, STREAM_INPUTS);
    draw_inputs(basis, n, sigma_x_sq, &mut rng)
}

fn draw_inputs<R: Rng + ?Sized>(
    basis: &BasisExpansion,
    n: usize,
    sigma_x_sq: f64,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let m = basis.vertex_count();
    let mut x = Array2::zeros((n, m));
    for i in 0..n {
        let row = sample_field_with(basis, sigma_x_sq, rng)?;
        x.row_mut(i).assign(&row);
    }
    Ok(x)
}

/// Outcomes y_i = beta0 + x_i' beta_true + eps_i with Gaussian noise.
pub fn make_outputs(x: ArrayView2<'_, f64>, truth: &SimTruth, seed: u64) -> Result<Array1<f64>> {
    let mut rng = substream(seed, STREAM_NOISE);
    draw_outputs(x, truth, &mut rng)
}

fn draw_outputs<R: Rng + ?Sized>(
    x: ArrayView2<'_, f64>,
    truth: &SimTruth,
    rng: &mut R,
) -> Result<Array1<f64>> {
    if x.ncols() != truth.beta_true.len() {
        return Err(invalid(format!(
            "inputs cover {} vertices but the truth covers {}",
            x.ncols(),
            truth.beta_true.len()
        )));
    }
    if !truth.sigma_eps_sq_true.is_finite() || truth.sigma_eps_sq_true <= 0.0 {
        return Err(invalid("true noise variance must be positive"));
    }
    let sd = truth.sigma_eps_sq_true.sqrt();
    let signal = x.dot(&truth.beta_true);
    Ok(Array1::from_iter(
        signal
            .iter()
            .map(|&s| truth.beta0_true + s + sd * rng.sample::<f64, _>(StandardNormal)),
    ))
}

/// One synthetic scenario: geometry, kernel, truth knobs, replicate sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub m: usize,
    pub basis: BasisSelector,
    pub kernel: KernelParams,
    pub jitter: f64,
    pub sigma_beta_sq: f64,
    pub sparsity_q: f64,
    pub sigma_x_sq: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            m: 2000,
            basis: BasisSelector::KappaTarget(0.99),
            kernel: KernelParams { phi: 8.0, nu: 2.0 },
            jitter: 1e-8,
            sigma_beta_sq: 1.0,
            sparsity_q: 0.1,
            sigma_x_sq: 1.0,
            n_train: 500,
            n_test: 1000,
            reps: 10,
            seed: 0,
        }
    }
}

/// One replicate's train/test split.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub train: Dataset,
    pub test: Dataset,
}

/// A full replicated study: shared basis and truth, fresh data per replicate.
#[derive(Debug, Clone)]
pub struct Study {
    pub basis: BasisExpansion,
    pub truth: SimTruth,
    pub replicates: Vec<Replicate>,
}

/// Generates the study. The truth is drawn once from the seed's truth
/// stream; every replicate redraws inputs and noise from indexed streams, so
/// replicates are independent yet individually reproducible.
pub fn replicate_study(config: &StudyConfig) -> Result<Study> {
    if config.reps == 0 {
        return Err(invalid("a study needs at least one replicate"));
    }
    let vertices = fibonacci_sphere(config.m, 1.0)?;
    let distances = pairwise_distance_matrix(&vertices);
    let k_mat = gram(distances.view(), &config.kernel, config.jitter)?;
    let basis = truncate_basis(k_mat.view(), config.basis)?;
    let truth = make_truth(&basis, config.sigma_beta_sq, config.sparsity_q, config.seed)?;
    let mut replicates = Vec::with_capacity(config.reps);
    for rep in 0..config.reps {
        let mut input_rng = substream_indexed(config.seed, STREAM_INPUTS, rep as u64);
        let mut noise_rng = substream_indexed(config.seed, STREAM_NOISE, rep as u64);
        let x_train = draw_inputs(&basis, config.n_train, config.sigma_x_sq, &mut input_rng)?;
        let x_test = draw_inputs(&basis, config.n_test, config.sigma_x_sq, &mut input_rng)?;
        let y_train = draw_outputs(x_train.view(), &truth, &mut noise_rng)?;
        let y_test = draw_outputs(x_test.view(), &truth, &mut noise_rng)?;
        replicates.push(Replicate {
            train: Dataset::new(y_train, x_train, None)?,
            test: Dataset::new(y_test, x_test, None)?,
        });
    }
    Ok(Study { basis, truth, replicates })
}

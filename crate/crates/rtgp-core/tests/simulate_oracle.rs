//! Statistical oracles for the synthetic-data generator: Monte-Carlo moment
//! checks against the stated distributions, a covariance oracle against the
//! kernel, an OLS residual oracle, and the spatial-contiguity check.

use std::sync::OnceLock;

use ndarray::{Array1, Array2, ArrayView1};
use rtgp_core::geometry::{fibonacci_sphere, pairwise_distance_matrix};
use rtgp_core::kernel::{gram, truncate_basis, BasisSelector, KernelParams};
use rtgp_core::simulate::{make_inputs, make_outputs, make_truth, SimTruth, TruthMeta};
use rtgp_core::BasisExpansion;

fn sphere_basis(m: usize, phi: f64, selector: BasisSelector) -> (BasisExpansion, Array2<f64>) {
    let vs = fibonacci_sphere(m, 1.0).unwrap();
    let dist = pairwise_distance_matrix(&vs);
    let k = gram(dist.view(), &KernelParams::new(phi, 2.0).unwrap(), 1e-8).unwrap();
    (truncate_basis(k.view(), selector).unwrap(), dist)
}

/// The scenario-scale geometry is expensive to build, so it is shared.
fn scenario() -> &'static (BasisExpansion, Array2<f64>) {
    static SCENARIO: OnceLock<(BasisExpansion, Array2<f64>)> = OnceLock::new();
    SCENARIO.get_or_init(|| sphere_basis(2000, 8.0, BasisSelector::FixedL(100)))
}

fn mean(v: ArrayView1<'_, f64>) -> f64 {
    v.sum() / v.len() as f64
}

fn sample_variance(v: ArrayView1<'_, f64>) -> f64 {
    let m = mean(v);
    v.iter().map(|&x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

#[test]
fn scenario_scale_truth_has_exactly_the_quantile_count() {
    let (basis, _) = scenario();
    let truth = make_truth(basis, 1.0, 0.1, 42).unwrap();
    assert_eq!(truth.active_count(), 200);
    assert_eq!(truth.meta.active_count, 200);
    assert!(truth.beta_true.iter().all(|b| b.is_finite()));
}

#[test]
fn active_set_forms_contiguous_clusters() {
    // Hard-thresholding a smooth field keeps spatial blobs, so each active
    // vertex should have another active vertex well within one correlation
    // length (the distance where the kernel falls to 1/e).
    let (basis, dist) = scenario();
    let correlation_length = 1.0 / 8.0_f64.sqrt();
    for seed in 0..10 {
        let truth = make_truth(basis, 1.0, 0.1, seed).unwrap();
        let active: Vec<usize> = (0..basis.vertex_count())
            .filter(|&j| truth.support_mask[j])
            .collect();
        let mut total = 0.0;
        for &j in &active {
            let nearest = active
                .iter()
                .filter(|&&l| l != j)
                .map(|&l| dist[[j, l]])
                .fold(f64::INFINITY, f64::min);
            total += nearest;
        }
        let mean_nearest = total / active.len() as f64;
        assert!(
            mean_nearest < correlation_length,
            "seed {seed}: mean nearest-active distance {mean_nearest} vs correlation length {correlation_length}",
        );
    }
}

#[test]
fn input_column_means_vanish_as_n_grows() {
    let (basis, _) = sphere_basis(16, 1.0, BasisSelector::KappaTarget(0.999999));
    let n = 10_000;
    let x = make_inputs(&basis, n, 1.0, 11).unwrap();
    let b = basis.basis();
    for j in 0..basis.vertex_count() {
        let col_var: f64 = b.row(j).iter().map(|v| v * v).sum();
        let band = 3.0 * (col_var / n as f64).sqrt();
        let m = mean(x.column(j));
        assert!(m.abs() < band, "column {j}: mean {m} outside 3-sigma band {band}");
    }
}

#[test]
fn input_covariance_matches_the_kernel() {
    // With the full eigenbasis the draw covariance is exactly the (jittered)
    // Gram matrix, so the empirical second-moment matrix must converge to it
    // entry by entry; in particular correlation decays with distance the way
    // the kernel says.
    let m = 10;
    let (basis, dist) = sphere_basis(m, 1.0, BasisSelector::FixedL(10));
    let sigma_x_sq = 1.5;
    let n = 20_000;
    let x = make_inputs(&basis, n, sigma_x_sq, 23).unwrap();
    let empirical = x.t().dot(&x) / n as f64;
    let params = KernelParams::new(1.0, 2.0).unwrap();
    let expected = gram(dist.view(), &params, 1e-8).unwrap() * sigma_x_sq;
    let worst = empirical
        .iter()
        .zip(expected.iter())
        .map(|(e, t)| (e - t).abs())
        .fold(0.0, f64::max);
    assert!(worst < 0.05 * sigma_x_sq, "worst covariance error {worst}");
}

#[test]
fn zero_field_outputs_have_the_stated_moments() {
    let (basis, _) = sphere_basis(12, 1.0, BasisSelector::KappaTarget(0.99));
    let mut truth = make_truth(&basis, 1.0, 0.5, 3).unwrap();
    truth.beta_true.fill(0.0);
    let n = 100_000;
    let x = Array2::zeros((n, basis.vertex_count()));
    let y = make_outputs(x.view(), &truth, 17).unwrap();
    let mean_band = 3.0 * (0.2_f64 / n as f64).sqrt();
    assert!((mean(y.view()) - 2.0).abs() < mean_band);
    let var_band = 3.0 * 0.2 * (2.0 / n as f64).sqrt();
    assert!((sample_variance(y.view()) - 0.2).abs() < var_band);
}

#[test]
fn ols_on_the_true_support_recovers_the_noise_variance() {
    let (basis, _) = sphere_basis(40, 1.0, BasisSelector::KappaTarget(0.999));
    let truth = make_truth(&basis, 1.0, 0.2, 6).unwrap();
    let active: Vec<usize> = (0..40).filter(|&j| truth.support_mask[j]).collect();
    assert_eq!(active.len(), 8);
    let n = 4000;
    let x = make_inputs(&basis, n, 1.0, 6).unwrap();
    let y = make_outputs(x.view(), &truth, 6).unwrap();

    // Design: intercept plus the truly active columns.
    let p = active.len() + 1;
    let mut design = Array2::ones((n, p));
    for (c, &j) in active.iter().enumerate() {
        design.column_mut(c + 1).assign(&x.column(j));
    }
    let xtx = design.t().dot(&design);
    let xty = design.t().dot(&y);
    let coef = solve_spd(&xtx, xty.view());
    let fitted = design.dot(&coef);
    let rss: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    let df = (n - p) as f64;
    let sigma_hat_sq = rss / df;
    let band = 3.0 * 0.2 * (2.0 / df).sqrt();
    assert!(
        (sigma_hat_sq - 0.2).abs() < band,
        "OLS residual variance {sigma_hat_sq} vs 0.2 (band {band})"
    );
}

/// Plain Cholesky solve, independent of the library's linear algebra.
fn solve_spd(a: &Array2<f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    let mut z = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
    let mut out = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * out[k];
        }
        out[i] = s / l[[i, i]];
    }
    out
}

#[test]
fn truth_metadata_reproduces_the_truth() {
    let (basis, _) = sphere_basis(25, 1.0, BasisSelector::KappaTarget(0.99));
    let truth = make_truth(&basis, 2.0, 0.3, 77).unwrap();
    let TruthMeta { seed, sigma_beta_sq, sparsity_q, .. } = truth.meta;
    let rebuilt: SimTruth = make_truth(&basis, sigma_beta_sq, sparsity_q, seed).unwrap();
    assert_eq!(truth, rebuilt);
}

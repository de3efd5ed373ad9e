//! Shared problem builders for the criterion benchmarks.

use ndarray::Array2;
use rtgp_core::geometry::{fibonacci_sphere, pairwise_distance_matrix};
use rtgp_core::kernel::{gram, truncate_basis};
use rtgp_core::simulate::{make_inputs, make_outputs, make_truth};
use rtgp_core::{BasisExpansion, BasisSelector, Dataset, KernelParams};

/// A deterministic synthetic regression problem of the given size.
pub fn synthetic_problem(m: usize, l: usize, n: usize, seed: u64) -> (Dataset, BasisExpansion) {
    let vertices = fibonacci_sphere(m, 1.0).expect("vertex grid");
    let distances = pairwise_distance_matrix(&vertices);
    let params = KernelParams::new(4.0, 2.0).expect("kernel");
    let k_mat = gram(distances.view(), &params, 1e-8).expect("gram");
    let basis = truncate_basis(k_mat.view(), BasisSelector::FixedL(l)).expect("basis");
    let truth = make_truth(&basis, 1.0, 0.1, seed).expect("truth");
    let x = make_inputs(&basis, n, 1.0, seed).expect("inputs");
    let y = make_outputs(x.view(), &truth, seed).expect("outputs");
    let data = Dataset::new(y, x, None).expect("dataset");
    (data, basis)
}

/// The Gram matrix of a fibonacci grid, for basis-construction benchmarks.
pub fn sphere_gram(m: usize) -> Array2<f64> {
    let vertices = fibonacci_sphere(m, 1.0).expect("vertex grid");
    let distances = pairwise_distance_matrix(&vertices);
    let params = KernelParams::new(4.0, 2.0).expect("kernel");
    gram(distances.view(), &params, 1e-8).expect("gram")
}

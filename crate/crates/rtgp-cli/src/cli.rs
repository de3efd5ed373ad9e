//! Command-line grammar. Every value flag is optional here; resolution
//! against the config file and the built-in defaults happens in `resolve`,
//! and the final values are echoed into the run manifest.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "rtgp", version, about = "Scalar-on-image regression with a relaxed-thresholded GP prior")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a replicated synthetic study with known ground truth.
    Simulate(SimulateArgs),
    /// Build and persist a truncated eigenbasis from a vertex file.
    Basis(BasisArgs),
    /// Fit the model to a dataset with the variational or Gibbs engine.
    Fit(FitArgs),
    /// Predict outcomes for new images from a saved fit.
    Predict(PredictArgs),
    /// Score one or more fits against ground truth and test data.
    Evaluate(EvaluateArgs),
    /// Export the per-vertex posterior map of a saved fit as CSV.
    ExportMap(ExportMapArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// `key = value` configuration file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of vertices on the sphere.
    #[arg(long)]
    pub m: Option<usize>,
    /// Basis size used by the generator (mutually exclusive with --kappa).
    #[arg(long)]
    pub l: Option<usize>,
    /// Variance-coverage target for the generator basis.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Kernel decay rate.
    #[arg(long)]
    pub phi: Option<f64>,
    /// Kernel exponent.
    #[arg(long)]
    pub nu: Option<f64>,
    /// Diagonal jitter added to the Gram matrix.
    #[arg(long)]
    pub jitter: Option<f64>,
    /// Marginal variance of the true effect field.
    #[arg(long)]
    pub sigma_beta_sq: Option<f64>,
    /// Fraction of vertices kept active in the truth.
    #[arg(long)]
    pub sparsity_q: Option<f64>,
    /// Marginal variance of the input images.
    #[arg(long)]
    pub sigma_x_sq: Option<f64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Number of replicates sharing the truth.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Master seed; all streams derive from it.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BasisArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Vertex coordinate file (M x 3 matrix).
    #[arg(long)]
    pub vertices: Option<PathBuf>,
    /// Sphere radius of the vertex file.
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub jitter: Option<f64>,
    /// Fixed basis size (mutually exclusive with --kappa).
    #[arg(long)]
    pub l: Option<usize>,
    /// Variance-coverage target in (0, 1].
    #[arg(long)]
    pub kappa: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Inference engine: vi | gibbs.
    #[arg(long)]
    pub engine: Option<String>,
    /// Input images (N x M matrix).
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Outcomes (N x 1 matrix).
    #[arg(long)]
    pub y: Option<PathBuf>,
    /// Directory written by `rtgp basis`.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    #[arg(long)]
    pub sigma_beta0_sq: Option<f64>,
    #[arg(long)]
    pub s_eps: Option<f64>,
    #[arg(long)]
    pub s_beta: Option<f64>,
    #[arg(long)]
    pub s_alpha: Option<f64>,
    #[arg(long)]
    pub t_min: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Threshold grid size.
    #[arg(long)]
    pub n_delta: Option<usize>,
    /// Median-probability selection cutoff.
    #[arg(long)]
    pub mpm_threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum variational sweeps.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Relative objective-change stopping tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Ridge penalty of the variational warm start.
    #[arg(long)]
    pub ridge_init_penalty: Option<f64>,
    /// Total Gibbs sweeps.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Sweeps discarded before keeping samples.
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Keep every k-th sweep after burn-in.
    #[arg(long)]
    pub thin: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Saved fit container.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// New images (N x M matrix).
    #[arg(long)]
    pub x: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Saved fit containers, one per replicate; engines aggregate separately.
    #[arg(long = "fit")]
    pub fits: Vec<PathBuf>,
    /// Test images; give one file or one per fit.
    #[arg(long = "x-test")]
    pub x_test: Vec<PathBuf>,
    /// Test outcomes; give one file or one per fit.
    #[arg(long = "y-test")]
    pub y_test: Vec<PathBuf>,
    /// True effect field (M x 1 matrix).
    #[arg(long)]
    pub truth_beta: Option<PathBuf>,
    /// True support mask (M x 1 matrix of 0/1).
    #[arg(long)]
    pub truth_mask: Option<PathBuf>,
    /// Training images for the ridge baseline; one file or one per fit.
    #[arg(long = "x-train")]
    pub x_train: Vec<PathBuf>,
    /// Training outcomes for the ridge baseline.
    #[arg(long = "y-train")]
    pub y_train: Vec<PathBuf>,
    /// Comma-separated ridge penalty grid.
    #[arg(long)]
    pub ridge_penalties: Option<String>,
    /// Fraction of training rows held out to pick the ridge penalty.
    #[arg(long)]
    pub ridge_val_fraction: Option<f64>,
    /// Seed of the ridge validation split.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExportMapArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Saved fit container.
    #[arg(long)]
    pub fit: Option<PathBuf>,
}

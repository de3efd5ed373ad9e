//! Bayesian scalar-on-image regression with a relaxed-thresholded Gaussian
//! process (RTGP) prior.
//!
//! The crate provides the full pipeline behind the `rtgp` command line tool:
//!
//! - [`geometry`]: spherical vertex sets and great-circle distances;
//! - [`kernel`]: the exponential radial kernel, Gram matrices, and the
//!   truncated Karhunen-Loeve eigenbasis;
//! - [`threshold`]: hard, soft, and relaxed thresholding rules;
//! - [`model`]: shared model state, hyperparameters, the log joint density,
//!   and prediction;
//! - [`gibbs`]: a systematic-scan Gibbs sampler used as the reference engine;
//! - [`cavi`]: the scalable mean-field coordinate-ascent variational engine;
//! - [`simulate`]: the synthetic-data protocol with known ground truth;
//! - [`metrics`]: selection/prediction/parameter metrics and a ridge baseline;
//! - [`io`]: binary matrix files, fit containers, config, and run manifests.

pub mod cavi;
pub mod error;
pub mod geometry;
pub mod gibbs;
pub mod io;
pub mod kernel;
mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod special;
pub mod threshold;
pub mod truncnorm;

pub use cavi::{fit_vi, CaviConfig, CaviEngine, VariationalState};
pub use error::{Error, Result};
pub use geometry::VertexSet;
pub use gibbs::{run_chain, ChainConfig, ChainOutput, GibbsSampler};
pub use kernel::{BasisExpansion, BasisSelector, KernelParams};
pub use metrics::{
    median_probability_selection, param_error, predictive_metrics, ridge_fit, selection_confusion,
    ParamError, PredictiveMetrics, RidgeFit, SelectionConfusion,
};
pub use model::{Dataset, FitResult, Hyperparameters, ModelState};
pub use simulate::{replicate_study, SimTruth, Study, StudyConfig};

//! Versioned persistence for fitted models. The container carries everything
//! needed to reuse a fit without refitting: hyperparameters, a description of
//! the basis it was computed against, the posterior summaries, and a
//! fingerprint of the generating run.

use std::fs;
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeltaWeight, FitDiagnostics, FitResult, Hyperparameters};

pub const FORMAT_VERSION: &str = "rtgp-fit/1";

/// The basis a fit was computed against: kernel parameters plus achieved
/// truncation, enough to rebuild or cross-check the basis artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisManifest {
    pub phi: f64,
    pub nu: f64,
    pub jitter: f64,
    pub vertex_count: usize,
    pub basis_count: usize,
    pub kappa_achieved: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct HyperRecord {
    sigma_beta0_sq: f64,
    s_beta: f64,
    s_eps: f64,
    s_alpha: f64,
    t_min: f64,
    t_max: f64,
    n_delta: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct DeltaRecord {
    delta: f64,
    probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
enum DiagnosticsRecord {
    Variational { elbo_trace: Vec<f64> },
    Chain { sweeps: usize, kept: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FitRecord {
    beta_tilde_mean: Vec<f64>,
    inclusion_prob: Vec<f64>,
    beta_map: Vec<f64>,
    mpm_threshold: f64,
    beta0_mean: f64,
    sigma_eps_sq_mean: f64,
    delta_summary: Vec<DeltaRecord>,
    diagnostics: DiagnosticsRecord,
    basis_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitContainer {
    pub format_version: String,
    hyperparameters: HyperRecord,
    basis: BasisManifest,
    fit: FitRecord,
    /// Hash of the run configuration and inputs that produced the fit.
    pub fingerprint: String,
}

impl FitContainer {
    pub fn new(
        fit: &FitResult,
        h: &Hyperparameters,
        basis: BasisManifest,
        fingerprint: String,
    ) -> Result<Self> {
        fit.validate()?;
        h.validate()?;
        let record = FitRecord {
            beta_tilde_mean: fit.beta_tilde_mean.to_vec(),
            inclusion_prob: fit.inclusion_prob.to_vec(),
            beta_map: fit.beta_map.to_vec(),
            mpm_threshold: fit.mpm_threshold,
            beta0_mean: fit.beta0_mean,
            sigma_eps_sq_mean: fit.sigma_eps_sq_mean,
            delta_summary: fit
                .delta_summary
                .iter()
                .map(|w| DeltaRecord { delta: w.delta, probability: w.probability })
                .collect(),
            diagnostics: match &fit.diagnostics {
                FitDiagnostics::Variational { elbo_trace } => {
                    DiagnosticsRecord::Variational { elbo_trace: elbo_trace.clone() }
                }
                FitDiagnostics::Chain { sweeps, kept } => {
                    DiagnosticsRecord::Chain { sweeps: *sweeps, kept: *kept }
                }
            },
            basis_ref: fit.basis_ref.clone(),
        };
        let container = Self {
            format_version: FORMAT_VERSION.to_string(),
            hyperparameters: HyperRecord {
                sigma_beta0_sq: h.sigma_beta0_sq,
                s_beta: h.s_beta,
                s_eps: h.s_eps,
                s_alpha: h.s_alpha,
                t_min: h.t_min,
                t_max: h.t_max,
                n_delta: h.n_delta,
            },
            basis,
            fit: record,
            fingerprint,
        };
        container.validate()?;
        Ok(container)
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        let h = &self.hyperparameters;
        Hyperparameters {
            sigma_beta0_sq: h.sigma_beta0_sq,
            s_beta: h.s_beta,
            s_eps: h.s_eps,
            s_alpha: h.s_alpha,
            t_min: h.t_min,
            t_max: h.t_max,
            n_delta: h.n_delta,
        }
    }

    pub fn basis(&self) -> &BasisManifest {
        &self.basis
    }

    pub fn fit_result(&self) -> FitResult {
        let f = &self.fit;
        FitResult {
            beta_tilde_mean: Array1::from_vec(f.beta_tilde_mean.clone()),
            inclusion_prob: Array1::from_vec(f.inclusion_prob.clone()),
            beta_map: Array1::from_vec(f.beta_map.clone()),
            mpm_threshold: f.mpm_threshold,
            beta0_mean: f.beta0_mean,
            sigma_eps_sq_mean: f.sigma_eps_sq_mean,
            delta_summary: f
                .delta_summary
                .iter()
                .map(|w| DeltaWeight { delta: w.delta, probability: w.probability })
                .collect(),
            diagnostics: match &f.diagnostics {
                DiagnosticsRecord::Variational { elbo_trace } => {
                    FitDiagnostics::Variational { elbo_trace: elbo_trace.clone() }
                }
                DiagnosticsRecord::Chain { sweeps, kept } => {
                    FitDiagnostics::Chain { sweeps: *sweeps, kept: *kept }
                }
            },
            basis_ref: f.basis_ref.clone(),
        }
    }

    /// Every invariant a loaded container must satisfy before use.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: self.format_version.clone(),
                expected: FORMAT_VERSION.to_string(),
            });
        }
        self.hyperparameters().validate().map_err(tamper)?;
        let b = &self.basis;
        if b.basis_count == 0 || b.basis_count > b.vertex_count {
            return Err(tamper_msg("basis manifest has an impossible rank"));
        }
        if !b.phi.is_finite() || b.phi <= 0.0 || !b.nu.is_finite() || !b.jitter.is_finite() {
            return Err(tamper_msg("basis manifest has non-finite kernel parameters"));
        }
        if self.fit.beta_tilde_mean.len() != b.vertex_count {
            return Err(tamper_msg(format!(
                "fit covers {} vertices but the basis manifest says {}",
                self.fit.beta_tilde_mean.len(),
                b.vertex_count
            )));
        }
        for (name, vals) in [
            ("beta_tilde_mean", &self.fit.beta_tilde_mean),
            ("inclusion_prob", &self.fit.inclusion_prob),
            ("beta_map", &self.fit.beta_map),
        ] {
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(tamper_msg(format!("{name} contains a non-finite value")));
            }
        }
        self.fit_result().validate().map_err(tamper)?;
        Ok(())
    }
}

/// Invariant violations in a persisted file are format errors: the bytes are
/// readable but the content is corrupt.
fn tamper(err: Error) -> Error {
    match err {
        Error::InvalidArgument(msg) => Error::Format { offset: 0, message: msg },
        other => other,
    }
}

fn tamper_msg(msg: impl Into<String>) -> Error {
    Error::Format { offset: 0, message: msg.into() }
}

pub fn save_fit(path: &Path, container: &FitContainer) -> Result<()> {
    container.validate()?;
    let mut bytes = serde_json::to_vec_pretty(container).expect("fit container serializes");
    bytes.push(b'\n');
    super::atomic_write(path, &bytes)
}

pub fn load_fit(path: &Path) -> Result<FitContainer> {
    let text = fs::read_to_string(path)?;
    // Check the version tag before full decoding, so a container written by a
    // different version reports a version mismatch rather than a shape error.
    #[derive(Deserialize)]
    struct VersionProbe {
        format_version: String,
    }
    let probe: VersionProbe =
        serde_json::from_str(&text).map_err(|e| json_error(&text, &e))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: probe.format_version,
            expected: FORMAT_VERSION.to_string(),
        });
    }
    let container: FitContainer =
        serde_json::from_str(&text).map_err(|e| json_error(&text, &e))?;
    container.validate()?;
    Ok(container)
}

/// Maps a JSON parse error to a format error at the byte offset of the
/// reported line and column.
fn json_error(text: &str, err: &serde_json::Error) -> Error {
    let line = err.line().max(1);
    let col = err.column().max(1);
    let offset: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum::<usize>()
        + (col - 1);
    Error::Format { offset: offset as u64, message: err.to_string() }
}

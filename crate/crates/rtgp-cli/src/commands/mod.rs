//! Subcommand implementations and the helpers they share: column-vector IO,
//! the on-disk basis artifact, and CSV assembly.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rtgp_core::error::Result;
use rtgp_core::io::{read_matrix, sha256_file, write_matrix, BasisManifest};
use rtgp_core::{BasisExpansion, Error};
use serde::{Deserialize, Serialize};

use crate::cli::{Cli, Command};
use crate::resolve::usage;

mod basis;
mod evaluate;
mod export_map;
mod fit;
mod predict;
mod simulate;

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => simulate::run(args),
        Command::Basis(args) => basis::run(args),
        Command::Fit(args) => fit::run(args),
        Command::Predict(args) => predict::run(args),
        Command::Evaluate(args) => evaluate::run(args),
        Command::ExportMap(args) => export_map::run(args),
    }
}

pub fn ensure_out_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

/// Reads an N x 1 matrix as a vector; the shape check reports the byte
/// offset of the column-count field.
pub fn read_column(path: &Path) -> Result<Array1<f64>> {
    let m = read_matrix(path)?;
    if m.ncols() != 1 {
        return Err(Error::Format {
            offset: 16,
            message: format!(
                "{}: expected a single-column matrix, found {} columns",
                path.display(),
                m.ncols()
            ),
        });
    }
    Ok(m.column(0).to_owned())
}

pub fn write_column(path: &Path, v: &Array1<f64>) -> Result<()> {
    let m = Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column reshape");
    write_matrix(path, m.view())
}

/// Sidecar metadata of a persisted basis; the eigen pair lives in two
/// RTGPMAT1 files next to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisMeta {
    pub manifest: BasisManifest,
    pub radius: f64,
    pub vertices_sha256: String,
}

pub const BASIS_META_FILE: &str = "basis.json";
pub const BASIS_EIGENVALUES_FILE: &str = "eigenvalues.rtgp";
pub const BASIS_EIGENVECTORS_FILE: &str = "eigenvectors.rtgp";

pub fn save_basis(dir: &Path, basis: &BasisExpansion, meta: &BasisMeta) -> Result<()> {
    let evals = Array2::from_shape_vec(
        (basis.basis_count(), 1),
        basis.eigenvalues().to_vec(),
    )
    .expect("column reshape");
    write_matrix(&dir.join(BASIS_EIGENVALUES_FILE), evals.view())?;
    write_matrix(&dir.join(BASIS_EIGENVECTORS_FILE), basis.eigenvectors())?;
    let mut bytes = serde_json::to_vec_pretty(meta).expect("basis meta serializes");
    bytes.push(b'\n');
    rtgp_core::io::atomic_write(&dir.join(BASIS_META_FILE), &bytes)
}

pub fn load_basis(dir: &Path) -> Result<(BasisExpansion, BasisMeta, String)> {
    let meta_path = dir.join(BASIS_META_FILE);
    let text = std::fs::read_to_string(&meta_path)?;
    let meta: BasisMeta = serde_json::from_str(&text).map_err(|e| Error::Format {
        offset: 0,
        message: format!("{}: {e}", meta_path.display()),
    })?;
    let eigenvalues = read_column(&dir.join(BASIS_EIGENVALUES_FILE))?;
    let eigenvectors = read_matrix(&dir.join(BASIS_EIGENVECTORS_FILE))?;
    let basis = BasisExpansion::new(eigenvalues, eigenvectors, meta.manifest.kappa_achieved)?;
    if basis.vertex_count() != meta.manifest.vertex_count
        || basis.basis_count() != meta.manifest.basis_count
    {
        return Err(Error::Format {
            offset: 0,
            message: format!(
                "{}: eigen files disagree with the recorded sizes",
                dir.display()
            ),
        });
    }
    let meta_hash = sha256_file(&meta_path)?;
    Ok((basis, meta, meta_hash))
}

/// Parses a comma-separated list of penalties.
pub fn parse_penalty_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| usage(format!("bad penalty `{s}` in --ridge-penalties: {e}")))
        })
        .collect()
}

/// Writes rows of already-formatted cells as an RFC-4180 CSV file atomically.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).map_err(csv_error)?;
    for row in rows {
        writer.write_record(row).map_err(csv_error)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    rtgp_core::io::atomic_write(path, &bytes)
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv assembly failed: {e}"))
}

/// `Display`-formats a float with full round-trip precision.
pub fn fmt_f64(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

/// Resolves one-or-per-fit file lists: a single file is shared by all fits.
pub fn broadcast<'a>(paths: &'a [PathBuf], fits: usize, what: &str) -> Result<Vec<&'a PathBuf>> {
    match paths.len() {
        1 => Ok(vec![&paths[0]; fits]),
        n if n == fits => Ok(paths.iter().collect()),
        n => Err(usage(format!("{what}: expected 1 or {fits} files, got {n}"))),
    }
}

//! File formats and run plumbing: the binary matrix format, the versioned
//! fit container, `key = value` configuration, and JSON-lines run manifests.
//!
//! All writers go through [`atomic_write`], so a failed run never leaves a
//! partial artifact behind.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub mod config;
pub mod container;
pub mod manifest;
pub mod matrix;

pub use config::Config;
pub use container::{load_fit, save_fit, BasisManifest, FitContainer};
pub use manifest::{sha256_file, sha256_hex, ManifestLine, ManifestWriter};
pub use matrix::{read_matrix, write_matrix};

/// Writes the full contents to a temporary file in the destination directory
/// and renames it into place, so the target path is either absent, the old
/// file, or the complete new file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

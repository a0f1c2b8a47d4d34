//! File formats: NRRD grids, tab-separated sidecars, TOML stats and
//! manifests, and the oracle adapters that read precomputed or external
//! results.

pub mod adapters;
pub mod manifest;
pub mod nrrd;
pub mod stats;
pub mod tables;

pub use manifest::{load_manifest, Manifest, OracleConfig, MANIFEST_SCHEMA_VERSION};
pub use nrrd::{read_nrrd, write_nrrd, NrrdEncoding};
pub use stats::{default_stats_toml, read_stats, write_stats, STATS_SCHEMA_VERSION};

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Shortest decimal that parses back to the same `f64` (always at least as
/// precise as 17 significant digits would be).
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

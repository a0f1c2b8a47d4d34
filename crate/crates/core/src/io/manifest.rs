//! Run manifest: where the CT, spine mask, stats and oracles live, plus the
//! cycle configuration. Relative paths resolve against the manifest's
//! directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_text, write_atomic};
use crate::cycle::CycleConfig;
use crate::error::{Error, Result};
use crate::phantom::{Corruption, PhantomSpec};

pub const MANIFEST_SCHEMA_VERSION: i64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: i64,
    pub ct: PathBuf,
    pub spine_mask: PathBuf,
    /// Falls back to the shipped defaults when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<PathBuf>,
    pub oracle: OracleConfig,
    #[serde(default)]
    pub cycle: CycleConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleConfig {
    /// Regenerates the synthetic oracles from their spec.
    Phantom {
        spec: PhantomSpec,
        #[serde(default)]
        corruptions: Vec<Corruption>,
    },
    /// Precomputed results keyed by rounded seed/crop-centre location.
    Directory {
        path: PathBuf,
        #[serde(default = "default_key_mm")]
        key_mm: f64,
    },
    /// External process speaking the line protocol (program, then arguments).
    Subprocess { command: Vec<String> },
}

fn default_key_mm() -> f64 {
    1.0
}

fn line_of(text: &str, e: &toml::de::Error) -> usize {
    e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1)
}

/// Parses a manifest without touching the file system.
pub fn parse_manifest(text: &str, origin: &str) -> Result<Manifest> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::schema(origin, line_of(text, &e), "-", e.message().to_string()))?;
    match table.get("schema_version") {
        Some(toml::Value::Integer(MANIFEST_SCHEMA_VERSION)) => {}
        Some(v) => {
            return Err(Error::schema(
                origin,
                0,
                "schema_version",
                format!("unsupported version {v} (expected {MANIFEST_SCHEMA_VERSION})"),
            ))
        }
        None => return Err(Error::schema(origin, 0, "schema_version", "missing")),
    }
    let m: Manifest = toml::from_str(text).map_err(|e| {
        Error::schema(
            origin,
            line_of(text, &e),
            "-",
            format!("{} (manifest schema version {MANIFEST_SCHEMA_VERSION})", e.message()),
        )
    })?;
    m.cycle.validate()?;
    if let OracleConfig::Subprocess { command } = &m.oracle {
        if command.is_empty() {
            return Err(Error::schema(origin, 0, "oracle.command", "must name a program"));
        }
    }
    if let OracleConfig::Directory { key_mm, .. } = &m.oracle {
        if !(*key_mm > 0.0) {
            return Err(Error::schema(origin, 0, "oracle.key_mm", "must be positive"));
        }
    }
    Ok(m)
}

/// Loads a manifest, resolves relative paths and checks that every
/// referenced file exists.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let origin = path.display().to_string();
    let mut m = parse_manifest(&read_text(path)?, &origin)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &mut PathBuf, field: &str| -> Result<()> {
        if p.is_relative() {
            *p = base.join(&*p);
        }
        if !p.exists() {
            return Err(Error::schema(&origin, 0, field, format!("{} does not exist", p.display())));
        }
        Ok(())
    };
    resolve(&mut m.ct, "ct")?;
    resolve(&mut m.spine_mask, "spine_mask")?;
    if let Some(s) = &mut m.stats {
        resolve(s, "stats")?;
    }
    match &mut m.oracle {
        OracleConfig::Directory { path, .. } => resolve(path, "oracle.path")?,
        OracleConfig::Subprocess { command } => {
            // a program given as a relative path with a separator is relative to the manifest
            let prog = PathBuf::from(&command[0]);
            if prog.is_relative() && prog.components().count() > 1 {
                command[0] = base.join(prog).display().to_string();
            }
        }
        OracleConfig::Phantom { .. } => {}
    }
    Ok(m)
}

pub fn write_manifest(m: &Manifest, path: &Path) -> Result<()> {
    let text = toml::to_string(m).map_err(|e| Error::InvalidInput(format!("cannot serialize manifest: {e}")))?;
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}

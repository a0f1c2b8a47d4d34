//! TOML persistence of [`AnatomyStats`] with an explicit schema version.

use std::path::Path;

use super::{read_text, write_atomic};
use crate::error::{Error, Result};
use crate::priors::AnatomyStats;

pub const STATS_SCHEMA_VERSION: i64 = 1;

const DEFAULT_STATS: &str = include_str!("../../data/default_stats.toml");

/// The shipped stats file (the built-in defaults, in file form).
pub fn default_stats_toml() -> &'static str {
    DEFAULT_STATS
}

/// Parses a stats document. `origin` names the source in errors.
pub fn parse_stats(text: &str, origin: &str) -> Result<AnatomyStats> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::schema(origin, line_of(text, &e), "-", e.message().to_string()))?;
    match table.remove("schema_version") {
        Some(toml::Value::Integer(STATS_SCHEMA_VERSION)) => {}
        Some(v) => {
            return Err(Error::schema(
                origin,
                0,
                "schema_version",
                format!("unsupported version {v} (expected {STATS_SCHEMA_VERSION})"),
            ))
        }
        None => return Err(Error::schema(origin, 0, "schema_version", "missing")),
    }
    let stats: AnatomyStats = table.try_into().map_err(|e: toml::de::Error| {
        Error::schema(origin, 0, "-", format!("{} (schema version {STATS_SCHEMA_VERSION})", e.message()))
    })?;
    stats.validate()?;
    Ok(stats)
}

fn line_of(text: &str, e: &toml::de::Error) -> usize {
    e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1)
}

pub fn stats_to_toml(stats: &AnatomyStats) -> Result<String> {
    let body = toml::to_string(stats).map_err(|e| Error::InvalidInput(format!("cannot serialize stats: {e}")))?;
    Ok(format!("schema_version = {STATS_SCHEMA_VERSION}\n\n{body}"))
}

pub fn read_stats(path: &Path) -> Result<AnatomyStats> {
    parse_stats(&read_text(path)?, &path.display().to_string())
}

pub fn write_stats(stats: &AnatomyStats, path: &Path) -> Result<()> {
    let text = stats_to_toml(stats)?;
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AnatomicGroup;

    #[test]
    fn shipped_file_equals_defaults() {
        let s = parse_stats(default_stats_toml(), "default").unwrap();
        assert_eq!(s, AnatomyStats::default());
        let c = s.gaussian.get(AnatomicGroup::Cervical);
        assert_eq!((c.mu, c.sigma), (16.77, 2.18));
    }

    #[test]
    fn round_trip_is_exact() {
        let mut s = AnatomyStats::default();
        s.gaussian.thoracic.mu = 1.0 / 3.0;
        s.volume.lumbar.c1 = 981.123456789012;
        let back = parse_stats(&stats_to_toml(&s).unwrap(), "mem").unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn schema_errors() {
        let text = default_stats_toml();
        let wrong = text.replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(parse_stats(&wrong, "x"), Err(Error::Schema { field, .. }) if field == "schema_version"));
        let unknown = format!("{text}\nsurprise = 1\n");
        let e = parse_stats(&unknown, "x").unwrap_err().to_string();
        assert!(e.contains("surprise") && e.contains("schema version 1"), "{e}");
        let broken = text.replace("fallback_gap_mm = 50.0", "fallback_gap_mm = ");
        assert!(matches!(parse_stats(&broken, "x"), Err(Error::Schema { line, .. }) if line > 0));
        let invalid = text.replace("residual_fraction = 0.5", "residual_fraction = 2.0");
        assert!(parse_stats(&invalid, "x").is_err());
    }
}

//! Configuration, file formats and plot data.
//!
//! Files carry physical units in their column names: durations in ns, rates
//! in Hz, currents in µA. Reals are written with 17 significant digits so a
//! read/write cycle is lossless and byte-stable.

pub mod config;
pub mod figures;
pub mod formats;
pub mod units;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use config::ToolkitConfig;
pub use figures::{figure, FigureInput, PlotDataset, PlotSeries, FIGURES};
pub use formats::Document;

/// Name recorded in provenance blocks.
pub const TOOL_NAME: &str = "snspd";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Decimal with 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Seconds from nanoseconds; division keeps e.g. 30 ns at the double nearest 3e-8.
pub fn from_ns(ns: f64) -> f64 {
    ns / 1e9
}

pub fn to_ns(seconds: f64) -> f64 {
    seconds * 1e9
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see partial output.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Where a result came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    /// SHA-256 of the effective configuration.
    pub config_hash: String,
    /// Master seed, for outputs that involve randomness.
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(config_hash: String, seed: Option<u64>) -> Self {
        Self {
            tool: TOOL_NAME.to_string(),
            version: VERSION.to_string(),
            config_hash,
            seed,
        }
    }

    /// Provenance of anything serialisable used as configuration.
    pub fn of<T: Serialize>(config: &T, seed: Option<u64>) -> Result<Self> {
        Ok(Self::new(hash_json(config)?, seed))
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical JSON form (object keys sorted).
pub fn hash_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    Ok(hash_bytes(serde_json::to_string(&v)?.as_bytes()))
}

/// JSON document `{ "provenance": …, <key>: … }` plus any extra metadata.
pub fn json_with_provenance<T: Serialize>(
    provenance: &Provenance,
    key: &str,
    payload: &T,
    extra: &BTreeMap<String, serde_json::Value>,
) -> Result<String> {
    let mut doc = serde_json::Map::new();
    doc.insert("provenance".into(), serde_json::to_value(provenance)?);
    doc.insert(key.into(), serde_json::to_value(payload)?);
    for (k, v) in extra {
        doc.insert(k.clone(), v.clone());
    }
    let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(doc))?;
    s.push('\n');
    Ok(s)
}

//! CSV outputs and run manifests.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::sim::CapacityRow;

pub const CAPACITY_HEADER: &str = "scheme,allocation,snr_db,k_factor_db,trial,capacity_bpcu";
pub const PROFILE_HEADER: &str = "l,index,mean_energy";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("config digest mismatch for {path}: manifest has {expected}, file hashes to {actual}")]
    DigestMismatch { path: PathBuf, expected: String, actual: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

/// Formats `v` with 12 significant digits. Magnitudes in `[1e-6, 1e15)`
/// print as plain decimals, others in exponent form; zero prints as `0`.
pub fn format_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    // Round first so the exponent accounts for carries like 9.9999... -> 10.
    let sci = format!("{v:.11e}");
    let exp: i32 = sci[sci.find('e').expect("exponent form") + 1..].parse().expect("integer exponent");
    if (-6..15).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        sci
    }
}

/// Renders capacity rows in the order given.
pub fn capacity_csv(rows: &[CapacityRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CAPACITY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.scheme.name(),
            r.allocation.name(),
            format_sig(r.snr_db),
            format_sig(r.k_factor_db),
            r.trial,
            format_sig(r.capacity_bpcu)
        ));
    }
    out
}

/// Renders singular-energy profiles, one `(L, profile)` entry per path count.
pub fn profile_csv(profiles: &[(usize, Vec<f64>)]) -> String {
    let mut out = String::from(PROFILE_HEADER);
    out.push('\n');
    for (l, profile) in profiles {
        for (i, &e) in profile.iter().enumerate() {
            out.push_str(&format!("{l},{},{}\n", i + 1, format_sig(e)));
        }
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(contents.as_bytes()).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}

pub fn emit_capacity_csv(rows: &[CapacityRow], path: &Path) -> Result<(), ReportError> {
    write_file(path, &capacity_csv(rows))
}

pub fn emit_profile_csv(profiles: &[(usize, Vec<f64>)], path: &Path) -> Result<(), ReportError> {
    write_file(path, &profile_csv(profiles))
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String, ReportError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 of `config_path` as written.
    pub config_digest: String,
    pub config_path: String,
    pub tool_version: String,
    pub master_seed: u64,
    /// RFC 3339, UTC.
    pub timestamp: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    /// Builds a manifest for files inside `out_dir`; paths are stored
    /// relative to it.
    pub fn new(out_dir: &Path, config_file: &str, master_seed: u64, outputs: &[&str]) -> Result<Self, ReportError> {
        Ok(Self {
            config_digest: file_digest(&out_dir.join(config_file))?,
            config_path: config_file.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), ReportError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        write_file(&out_dir.join(MANIFEST_FILE), &text)
    }

    pub fn read(out_dir: &Path) -> Result<Self, ReportError> {
        let path = out_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|source| ReportError::Manifest { path, source })
    }
}

/// Recomputes the config digest of a run directory against its manifest.
pub fn verify_manifest(out_dir: &Path) -> Result<RunManifest, ReportError> {
    let manifest = RunManifest::read(out_dir)?;
    let path = out_dir.join(&manifest.config_path);
    let actual = file_digest(&path)?;
    if actual != manifest.config_digest {
        return Err(ReportError::DigestMismatch { path, expected: manifest.config_digest, actual });
    }
    Ok(manifest)
}

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;
use sha2::{Digest, Sha256};

use aflow_core::trace::{read_csv, read_pcap, Trace};

use crate::error::{CliError, CliResult};
use crate::manifest::InputDigest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Csv,
    Pcap,
}

impl TraceFormat {
    /// Explicit choice, else the file extension, else CSV.
    pub fn resolve(explicit: Option<TraceFormat>, path: Option<&Path>) -> TraceFormat {
        explicit.unwrap_or_else(|| match path.and_then(|p| p.extension()).and_then(|e| e.to_str()) {
            Some("pcap") | Some("cap") => TraceFormat::Pcap,
            _ => TraceFormat::Csv,
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct LoadedTrace {
    pub trace: Trace,
    pub digest: InputDigest,
}

pub fn load_trace(path: &Path, format: Option<TraceFormat>) -> CliResult<LoadedTrace> {
    let bytes = fs::read(path).map_err(|e| CliError::input("Io", format!("cannot read {}: {e}", path.display())))?;
    let format = TraceFormat::resolve(format, Some(path));
    let trace = match format {
        TraceFormat::Csv => read_csv(&bytes[..])?,
        TraceFormat::Pcap => read_pcap(&bytes[..])?,
    };
    Ok(LoadedTrace {
        trace,
        digest: InputDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        },
    })
}

/// Writes via a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let io_err = |e: std::io::Error| CliError::input("Io", format!("cannot write {}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(tmp.path(), fs::Permissions::from_mode(0o644)).map_err(io_err)?;
    }
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

/// Writes to `path`, or to stdout when it is `None` or `-`.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) if p != Path::new("-") => write_atomic(p, bytes),
        _ => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| CliError::input("Io", format!("stdout: {e}")))
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(CliError::invariant)?;
    v.push(b'\n');
    Ok(v)
}

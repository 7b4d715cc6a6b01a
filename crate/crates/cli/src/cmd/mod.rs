pub mod analyze;
pub mod bench;
pub mod classify;
pub mod generate;
pub mod simulate;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use aflow_core::classifier::{Engine, EngineKind, OracleEngine, PortTableEngine, SignatureEngine};
use aflow_core::trace::{reference_sequence, ReferenceMode, DEFAULT_IDLE_TIMEOUT};
use aflow_core::{AggregateFlowKey, DirectionRules, FilterConfig, PacketRecord};

use crate::error::{CliError, CliResult};
use crate::io::sha256_hex;
use crate::manifest::InputDigest;
use crate::Cli;

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct TraceArgs {
    /// Input trace (CSV or pcap).
    #[arg(long, short)]
    pub trace: PathBuf,
    /// Connection idle timeout in seconds.
    #[arg(long, default_value_t = DEFAULT_IDLE_TIMEOUT)]
    pub idle_timeout: f64,
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct FilterArgs {
    #[arg(long, default_value_t = 4)]
    pub filter_stages: usize,
    #[arg(long, default_value_t = 4096)]
    pub filter_counters: usize,
    #[arg(long, default_value_t = 3)]
    pub filter_threshold: u32,
    /// Observations between counter resets (0 = never).
    #[arg(long, default_value_t = 1_000_000)]
    pub filter_reset: u64,
}

impl FilterArgs {
    pub fn config(&self, seed: u64) -> CliResult<FilterConfig> {
        let cfg = FilterConfig {
            stages: self.filter_stages,
            counters: self.filter_counters,
            threshold: self.filter_threshold,
            reset_period: self.filter_reset,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct EngineArgs {
    /// Rules file: signatures for `signature`, port table for `ports`.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Payload bytes scanned per packet by the signature engine.
    #[arg(long, default_value_t = aflow_core::classifier::engine::SCAN_BYTES)]
    pub scan_bytes: usize,
    /// Payload packets inspected before giving up.
    #[arg(long, default_value_t = aflow_core::classifier::engine::MAX_INSPECTED_PACKETS)]
    pub max_packets: u32,
}

impl EngineArgs {
    /// Builds the engine and returns the digest of its rules file, if any.
    pub fn build(&self, kind: EngineKind) -> CliResult<(Box<dyn Engine>, Option<InputDigest>)> {
        let (text, digest) = match &self.rules {
            Some(p) if kind != EngineKind::Oracle => {
                let bytes =
                    fs::read(p).map_err(|e| CliError::input("Io", format!("cannot read {}: {e}", p.display())))?;
                let digest = InputDigest {
                    path: p.display().to_string(),
                    sha256: sha256_hex(&bytes),
                };
                let text = String::from_utf8(bytes)
                    .map_err(|_| CliError::config("InvalidRules", format!("{} is not UTF-8", p.display())))?;
                (Some(text), Some(digest))
            }
            _ => (None, None),
        };
        let engine: Box<dyn Engine> = match kind {
            EngineKind::Oracle => Box::new(OracleEngine),
            EngineKind::Ports => Box::new(match &text {
                Some(t) => PortTableEngine::parse(t)?,
                None => PortTableEngine::default(),
            }),
            EngineKind::Signature => {
                let e = match &text {
                    Some(t) => SignatureEngine::parse(t)?,
                    None => SignatureEngine::default(),
                };
                Box::new(e.with_limits(self.scan_bytes, self.max_packets))
            }
        };
        Ok((engine, digest))
    }
}

pub fn references(records: &[PacketRecord], per_packet: bool, idle_timeout: f64) -> Vec<AggregateFlowKey> {
    let mode = if per_packet {
        ReferenceMode::PerPacket
    } else {
        ReferenceMode::PerConnection
    };
    reference_sequence(records, mode, &DirectionRules::default(), idle_timeout)
}

pub fn distinct(keys: &[AggregateFlowKey]) -> usize {
    keys.iter().collect::<HashSet<_>>().len()
}

pub fn check_timeout(idle_timeout: f64) -> CliResult<()> {
    if idle_timeout > 0.0 && idle_timeout.is_finite() {
        Ok(())
    } else {
        Err(CliError::config("InvalidConfig", "--idle-timeout must be > 0"))
    }
}

pub fn progress(cli: &Cli, msg: impl AsRef<str>) {
    if !cli.quiet {
        eprintln!("{}", msg.as_ref());
    }
}

pub fn out_path(cli: &Cli) -> Option<&Path> {
    cli.out.as_deref()
}

pub fn parse_list_arg<T: std::str::FromStr<Err = String>>(flag: &str, s: &str) -> CliResult<Vec<T>> {
    let v = crate::capacity::parse_list(s).map_err(|e| CliError::config("InvalidConfig", format!("{flag}: {e}")))?;
    if v.is_empty() {
        return Err(CliError::config("InvalidConfig", format!("{flag}: empty list")));
    }
    Ok(v)
}

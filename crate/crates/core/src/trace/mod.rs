//! Trace ingestion, generation and transformation.

pub mod csv;
pub mod pcap;
pub mod scramble;
pub mod synth;

use std::collections::HashMap;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{AggregateFlowKey, DirectionRules, FiveTuple, PacketRecord};

pub use self::csv::{read_csv, write_csv, CSV_HEADER};
pub use self::pcap::{read_pcap, write_pcap, PcapFormat};
pub use self::scramble::{scramble_trace, shuffle};
pub use self::synth::{generate_reference_keys, generate_synthetic, AppProfile, SyntheticConfig, SyntheticTrace};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("unrecognized pcap magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("truncated pcap header")]
    TruncatedHeader,
    #[error("unsupported pcap link type {0} (only Ethernet is supported)")]
    UnsupportedLinkType(u32),
    #[error("CSV header mismatch: expected `{expected}`, found `{found}`")]
    SchemaMismatch { expected: String, found: String },
    #[error("record {index} at ts {ts} is more than {window}s older than an earlier record at {prev}")]
    OutOfOrder {
        index: usize,
        ts: f64,
        prev: f64,
        window: f64,
    },
    #[error("invalid synthetic trace config: {0}")]
    InvalidConfig(String),
    #[error("CSV error: {0}")]
    Csv(#[from] ::csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Counters for packets or rows that did not become records.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub packets_read: u64,
    pub records: u64,
    pub skipped_non_ipv4: u64,
    pub skipped_unsupported_proto: u64,
    pub skipped_truncated: u64,
    pub skipped_fragment: u64,
    pub parse_errors: u64,
    /// Records that arrived behind a later timestamp and were re-sorted.
    pub reordered: u64,
    /// `line: message` for the first rejected CSV rows.
    pub error_samples: Vec<String>,
}

impl IngestStats {
    const MAX_SAMPLES: usize = 20;

    pub(crate) fn parse_error(&mut self, line: u64, msg: impl std::fmt::Display) {
        self.parse_errors += 1;
        if self.error_samples.len() < Self::MAX_SAMPLES {
            self.error_samples.push(format!("line {line}: {msg}"));
        }
    }

    pub fn skipped(&self) -> u64 {
        self.skipped_non_ipv4
            + self.skipped_unsupported_proto
            + self.skipped_truncated
            + self.skipped_fragment
            + self.parse_errors
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<PacketRecord>,
    pub stats: IngestStats,
}

/// Records may lag the newest timestamp seen so far by at most this much.
pub const REORDER_WINDOW: f64 = 1.0;

/// Stable-sorts records by timestamp, tolerating jitter up to
/// [`REORDER_WINDOW`]. Returns the number of records that were out of order.
pub fn order_records(records: &mut [PacketRecord]) -> Result<u64, TraceError> {
    let mut newest = f64::NEG_INFINITY;
    let mut late = 0;
    for (index, r) in records.iter().enumerate() {
        if r.ts < newest {
            if r.ts < newest - REORDER_WINDOW {
                return Err(TraceError::OutOfOrder {
                    index,
                    ts: r.ts,
                    prev: newest,
                    window: REORDER_WINDOW,
                });
            }
            late += 1;
        } else {
            newest = r.ts;
        }
    }
    if late > 0 {
        records.sort_by(|a, b| a.ts.total_cmp(&b.ts));
    }
    Ok(late)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    /// One reference per new connection.
    #[default]
    PerConnection,
    /// One reference per packet.
    PerPacket,
}

/// Default connection idle timeout in seconds.
pub const DEFAULT_IDLE_TIMEOUT: f64 = 60.0;

/// Aggregate-flow reference sequence of a trace. A packet starts a new
/// connection when its canonical tuple is unseen or idle longer than
/// `idle_timeout`.
pub fn reference_sequence(
    records: &[PacketRecord],
    mode: ReferenceMode,
    rules: &DirectionRules,
    idle_timeout: f64,
) -> Vec<AggregateFlowKey> {
    let mut conns: HashMap<FiveTuple, (AggregateFlowKey, f64)> = HashMap::new();
    let mut out = Vec::new();
    for r in records {
        let canon = r.tuple.canonical();
        let key = match conns.get_mut(&canon) {
            Some((key, last)) if r.ts - *last <= idle_timeout => {
                *last = r.ts;
                if mode == ReferenceMode::PerPacket {
                    out.push(*key);
                }
                continue;
            }
            _ => rules.aggregate_key(r, None),
        };
        conns.insert(canon, (key, r.ts));
        out.push(key);
    }
    out
}

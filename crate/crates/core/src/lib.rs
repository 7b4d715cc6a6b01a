//! Application identification at aggregate-flow level.
//!
//! Connections sharing a server endpoint are grouped into aggregate-flows; a
//! fixed-size cache remembers the application label identified for each one,
//! so only a small fraction of connections ever reach the (expensive)
//! identification engine.
//!
//! - [`flow`]: packets, connections, keys and labels.
//! - [`trace`]: pcap/CSV ingestion, synthetic Zipf traces, scrambling.
//! - [`msfilter`]: multistage filter for cache admission.
//! - [`cache`]: the aggregate-flow cache and its replacement policies.
//! - [`classifier`]: connection table, adapter, engines and reports.
//! - [`locality`]: popularity and stack-distance analysis.

pub mod cache;
pub mod classifier;
pub mod flow;
pub mod locality;
pub mod msfilter;
pub mod stats;
pub mod trace;

pub use cache::{AflowCache, AggregateFlowEntry, CacheConfig, CacheStats, Policy};
pub use flow::{
    aggregate_key, canonical_tuple, AggregateFlowKey, AppLabel, ConnState, ConnectionRecord, DirectionRules, Endpoint,
    FiveTuple, IdentificationResult, PacketRecord, TcpFlags, TransportProto,
};
pub use msfilter::{false_positive_bound, Admission, FilterConfig, MultistageFilter};

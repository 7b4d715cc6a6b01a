//! Connection table, cache adapter and engine pipeline.
//!
//! Every packet is mapped to its connection. A new connection looks up its
//! aggregate-flow in the cache; a hit labels the connection without the engine
//! unless the connection is sampled for revalidation. Everything else goes to
//! the engine, whose result passes through the output filter before it may be
//! cached.

pub mod engine;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{oracle_frequencies, AflowCache, CacheConfig, CacheStats, LabelUpdate, Policy};
use crate::flow::{
    AggregateFlowKey, AppLabel, ConnState, ConnectionRecord, DirectionRules, FiveTuple, IdentificationResult,
    PacketRecord, TcpFlags,
};
use crate::msfilter::{Admission, FilterConfig, FilterError, FilterStats, MultistageFilter};
use crate::trace::{reference_sequence, ReferenceMode, DEFAULT_IDLE_TIMEOUT};

pub use engine::{Engine, EngineContext, EngineError, EngineKind, OracleEngine, PortTableEngine, SignatureEngine};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("invalid classifier config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    /// Probability that a cache-hit connection is still sent to the engine.
    pub sample_prob: f64,
    pub noncacheable_labels: Vec<AppLabel>,
    pub conflict_blacklist_threshold: u32,
    pub rng_seed: u64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            sample_prob: 0.0,
            noncacheable_labels: ["ftp-data", "sip-media", "unknown"]
                .into_iter()
                .map(|l| AppLabel::new(l).expect("built-in label"))
                .collect(),
            conflict_blacklist_threshold: 3,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// `None` disables the cache: every connection goes to the engine.
    pub cache_capacity: Option<usize>,
    pub policy: Policy,
    pub filter: FilterConfig,
    pub adapter: AdapterConfig,
    /// Seconds of inactivity after which a connection is dropped.
    pub idle_timeout: f64,
    /// Trace seconds between connection-table sweeps.
    pub gc_interval: f64,
    /// Work units charged per cache lookup.
    pub lookup_cost: f64,
    #[serde(skip)]
    pub rules: DirectionRules,
    /// Keep a summary of every finished connection.
    pub record_connections: bool,
    /// Reference counts for [`Policy::OptimalLfu`]; computed from the trace
    /// by [`run_classification`] when absent.
    #[serde(skip)]
    pub oracle_frequencies: Option<HashMap<AggregateFlowKey, u64>>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            cache_capacity: Some(10_000),
            policy: Policy::MsHybrid,
            filter: FilterConfig::default(),
            adapter: AdapterConfig::default(),
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
            gc_interval: 1.0,
            lookup_cost: 0.01,
            rules: DirectionRules::default(),
            record_connections: false,
            oracle_frequencies: None,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.adapter.sample_prob) {
            return bad("sample_prob must be in [0, 1]");
        }
        if self.cache_capacity == Some(0) {
            return bad("cache capacity must be >= 1");
        }
        if self.adapter.conflict_blacklist_threshold == 0 {
            return bad("conflict_blacklist_threshold must be >= 1");
        }
        if !(self.idle_timeout > 0.0 && self.gc_interval > 0.0) {
            return bad("idle_timeout and gc_interval must be > 0");
        }
        if !(self.lookup_cost.is_finite() && self.lookup_cost >= 0.0) {
            return bad("lookup_cost must be >= 0");
        }
        self.filter.validate()?;
        Ok(())
    }
}

/// What happened to one packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Disposition {
    /// The connection already had a label; the engine was not involved.
    PassThrough(AppLabel),
    /// The engine produced a result on this packet.
    SentToEngine(AppLabel),
    /// The engine saw the packet but has no result yet.
    Pending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NotCachedReason {
    Noncacheable,
    Blacklisted,
    Admission,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterOutcome {
    Cached,
    NotCached(NotCachedReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Cache,
    Engine,
}

/// One finished connection, for the per-connection CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionSummary {
    pub tuple: FiveTuple,
    pub key: AggregateFlowKey,
    pub label: Option<AppLabel>,
    pub source: Option<LabelSource>,
    pub packets: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFilterStats {
    pub cached: u64,
    /// Results confirming an entry already in the cache.
    pub refreshed: u64,
    pub conflicts: u64,
    pub not_cached_noncacheable: u64,
    pub not_cached_blacklisted: u64,
    pub not_cached_admission: u64,
    pub blacklisted_keys: u64,
}

impl OutputFilterStats {
    fn merge(&mut self, o: &OutputFilterStats) {
        self.cached += o.cached;
        self.refreshed += o.refreshed;
        self.conflicts += o.conflicts;
        self.not_cached_noncacheable += o.not_cached_noncacheable;
        self.not_cached_blacklisted += o.not_cached_blacklisted;
        self.not_cached_admission += o.not_cached_admission;
        self.blacklisted_keys += o.blacklisted_keys;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub packets: u64,
    pub total_connections: u64,
    /// Connections the engine inspected at least one packet of.
    pub engine_connections: u64,
    pub cache_labeled_connections: u64,
    /// Cache-hit connections sent to the engine for revalidation.
    pub sampled_connections: u64,
    pub unidentified_connections: u64,
    /// Connections still without a result when they ended.
    pub pending_connections: u64,
    pub workload_reduction: f64,
    pub engine_work_units: u64,
    pub baseline_work_units: u64,
    pub lookup_work_units: f64,
    pub classifier_work_units: f64,
    pub speedup_estimate: f64,
    pub label_counts: BTreeMap<String, u64>,
    /// Labeled connections whose first packet carried a truth label.
    pub accuracy_checked: u64,
    pub accuracy_correct: u64,
    pub accuracy: Option<f64>,
    pub output_filter: OutputFilterStats,
    pub cache: CacheStats,
    pub filter: Option<FilterStats>,
    pub distinct_flows: u64,
    pub flow_connection_ratio: f64,
    pub gc_evictions: u64,
}

impl ClassifierReport {
    fn finalize(&mut self, lookup_cost: f64) {
        let total = self.total_connections as f64;
        self.workload_reduction = if self.total_connections == 0 {
            0.0
        } else {
            (1.0 - self.engine_connections as f64 / total).clamp(0.0, 1.0)
        };
        self.lookup_work_units = self.cache.lookups as f64 * lookup_cost;
        self.classifier_work_units = self.engine_work_units as f64 + self.lookup_work_units;
        self.speedup_estimate = if self.classifier_work_units > 0.0 {
            self.baseline_work_units as f64 / self.classifier_work_units
        } else {
            1.0
        };
        self.accuracy =
            (self.accuracy_checked > 0).then(|| self.accuracy_correct as f64 / self.accuracy_checked as f64);
        self.flow_connection_ratio = if self.total_connections == 0 {
            0.0
        } else {
            self.distinct_flows as f64 / total
        };
    }

    /// Adds the counters of `other`; derived ratios are recomputed.
    pub fn merge(&mut self, other: &ClassifierReport, lookup_cost: f64) {
        self.packets += other.packets;
        self.total_connections += other.total_connections;
        self.engine_connections += other.engine_connections;
        self.cache_labeled_connections += other.cache_labeled_connections;
        self.sampled_connections += other.sampled_connections;
        self.unidentified_connections += other.unidentified_connections;
        self.pending_connections += other.pending_connections;
        self.engine_work_units += other.engine_work_units;
        self.baseline_work_units += other.baseline_work_units;
        for (label, n) in &other.label_counts {
            *self.label_counts.entry(label.clone()).or_default() += n;
        }
        self.accuracy_checked += other.accuracy_checked;
        self.accuracy_correct += other.accuracy_correct;
        self.output_filter.merge(&other.output_filter);
        self.cache.merge(&other.cache);
        match (&mut self.filter, &other.filter) {
            (Some(a), Some(b)) => a.merge(b),
            (None, Some(b)) => self.filter = Some(*b),
            _ => {}
        }
        self.distinct_flows += other.distinct_flows;
        self.gc_evictions += other.gc_evictions;
        self.finalize(lookup_cost);
    }
}

#[derive(Debug, Clone)]
struct Conn {
    record: ConnectionRecord,
    ctx: EngineContext,
    source: Option<LabelSource>,
    sent_to_engine: bool,
    truth: Option<AppLabel>,
    baseline_ctx: EngineContext,
    baseline_done: bool,
    fin_fwd: bool,
    fin_rev: bool,
    rst: bool,
}

impl Conn {
    fn closed(&self) -> bool {
        self.rst || (self.fin_fwd && self.fin_rev)
    }
}

/// Single-threaded classification state machine.
pub struct Classifier<'e> {
    engine: &'e dyn Engine,
    config: ClassifierConfig,
    cache: Option<AflowCache>,
    filter: Option<MultistageFilter>,
    rng: ChaCha8Rng,
    noncacheable: HashSet<AppLabel>,
    conns: HashMap<FiveTuple, Conn>,
    blacklist: HashSet<AggregateFlowKey>,
    flows: HashSet<AggregateFlowKey>,
    report: ClassifierReport,
    clock: u64,
    last_gc: f64,
    summaries: Vec<ConnectionSummary>,
}

impl<'e> Classifier<'e> {
    pub fn new(engine: &'e dyn Engine, config: ClassifierConfig) -> Result<Self, ClassifierError> {
        config.validate()?;
        let cache = match config.cache_capacity {
            Some(capacity) => Some(
                AflowCache::new(CacheConfig {
                    capacity,
                    policy: config.policy,
                    oracle_frequencies: config.oracle_frequencies.clone(),
                })
                .map_err(|e| ClassifierError::InvalidConfig(e.to_string()))?,
            ),
            None => None,
        };
        let filter = if cache.is_some() && config.policy.uses_admission_filter() {
            Some(MultistageFilter::new(config.filter.clone())?)
        } else {
            None
        };
        Ok(Self {
            engine,
            rng: ChaCha8Rng::seed_from_u64(config.adapter.rng_seed),
            noncacheable: config.adapter.noncacheable_labels.iter().cloned().collect(),
            cache,
            filter,
            config,
            conns: HashMap::new(),
            blacklist: HashSet::new(),
            flows: HashSet::new(),
            report: ClassifierReport::default(),
            clock: 0,
            last_gc: f64::NEG_INFINITY,
            summaries: Vec::new(),
        })
    }

    pub fn cache(&self) -> Option<&AflowCache> {
        self.cache.as_ref()
    }

    pub fn is_blacklisted(&self, key: &AggregateFlowKey) -> bool {
        self.blacklist.contains(key)
    }

    pub fn connection(&self, tuple: &FiveTuple) -> Option<&ConnectionRecord> {
        self.conns.get(&tuple.canonical()).map(|c| &c.record)
    }

    pub fn active_connections(&self) -> usize {
        self.conns.len()
    }

    /// Inserts an entry directly, bypassing the engine and filter.
    pub fn preload(&mut self, key: AggregateFlowKey, label: AppLabel) {
        if let Some(cache) = self.cache.as_mut() {
            cache.insert(key, label, self.clock);
        }
    }

    pub fn process_packet(&mut self, packet: &PacketRecord) -> Result<Disposition, ClassifierError> {
        if packet.ts - self.last_gc >= self.config.gc_interval {
            if self.last_gc.is_finite() {
                self.gc(packet.ts);
            }
            self.last_gc = packet.ts;
        }
        self.report.packets += 1;
        let canon = packet.tuple.canonical();
        let restart = match self.conns.get(&canon) {
            Some(c) => {
                packet.ts - c.record.last_ts > self.config.idle_timeout
                    || (c.closed() && packet.tcp_flags.is_syn_only())
            }
            None => false,
        };
        if restart {
            let old = self.conns.remove(&canon).expect("present");
            self.finish_conn(old);
        }
        if !self.conns.contains_key(&canon) {
            let conn = self.open_conn(packet);
            self.conns.insert(canon, conn);
        }
        let conn = self.conns.get_mut(&canon).expect("present");
        conn.record.observe(packet);
        if packet.tcp_flags.contains(TcpFlags::RST) {
            conn.rst = true;
        }
        if packet.tcp_flags.contains(TcpFlags::FIN) {
            if packet.tuple == canon {
                conn.fin_fwd = true;
            } else {
                conn.fin_rev = true;
            }
        }
        if !conn.baseline_done {
            self.report.baseline_work_units += self.engine.cost(packet);
            if self.engine.identify(&mut conn.baseline_ctx, packet)?.is_some() {
                conn.baseline_done = true;
            }
        }
        if conn.record.is_resolved() {
            let label = conn.record.label.clone().expect("resolved connections carry a label");
            return Ok(Disposition::PassThrough(label));
        }
        if !conn.sent_to_engine {
            conn.sent_to_engine = true;
            self.report.engine_connections += 1;
        }
        self.report.engine_work_units += self.engine.cost(packet);
        let Some(result) = self.engine.identify(&mut conn.ctx, packet)? else {
            return Ok(Disposition::Pending);
        };
        let label = result.label.clone();
        conn.record.set_label(label.clone());
        conn.source = Some(LabelSource::Engine);
        let key = conn.record.key;
        let (truth, state) = (conn.truth.clone(), conn.record.state);
        self.count_label(&label, truth.as_ref(), state);
        self.output_filter(key, &result);
        Ok(Disposition::SentToEngine(label))
    }

    fn open_conn(&mut self, packet: &PacketRecord) -> Conn {
        let key = self.config.rules.aggregate_key(packet, None);
        self.report.total_connections += 1;
        self.flows.insert(key);
        let mut conn = Conn {
            record: ConnectionRecord::new(packet, key),
            ctx: EngineContext::new(key),
            source: None,
            sent_to_engine: false,
            truth: packet.truth_label.clone(),
            baseline_ctx: EngineContext::new(key),
            baseline_done: false,
            fin_fwd: false,
            fin_rev: false,
            rst: false,
        };
        let Some(cache) = self.cache.as_mut() else {
            return conn;
        };
        let now = self.clock;
        self.clock += 1;
        let hit = cache
            .lookup(&key, now)
            .map(|e| e.label.clone())
            .filter(|l| !l.is_unknown());
        if let Some(label) = hit {
            if self.config.adapter.sample_prob > 0.0 && self.rng.random_bool(self.config.adapter.sample_prob) {
                conn.record.state = ConnState::Sampled;
                self.report.sampled_connections += 1;
            } else {
                conn.record.set_label(label.clone());
                conn.source = Some(LabelSource::Cache);
                self.report.cache_labeled_connections += 1;
                self.count_label(&label, conn.truth.as_ref(), conn.record.state);
            }
        }
        conn
    }

    fn count_label(&mut self, label: &AppLabel, truth: Option<&AppLabel>, state: ConnState) {
        *self.report.label_counts.entry(label.to_string()).or_default() += 1;
        if state == ConnState::Unidentified {
            self.report.unidentified_connections += 1;
            return;
        }
        if let Some(truth) = truth {
            self.report.accuracy_checked += 1;
            if truth == label {
                self.report.accuracy_correct += 1;
            }
        }
    }

    /// Decides whether an engine result for `key` is cached.
    pub fn output_filter(&mut self, key: AggregateFlowKey, result: &IdentificationResult) -> FilterOutcome {
        let outcome = self.output_filter_inner(key, result);
        let s = &mut self.report.output_filter;
        match outcome {
            FilterOutcome::Cached => {}
            FilterOutcome::NotCached(NotCachedReason::Noncacheable) => s.not_cached_noncacheable += 1,
            FilterOutcome::NotCached(NotCachedReason::Blacklisted) => s.not_cached_blacklisted += 1,
            FilterOutcome::NotCached(NotCachedReason::Admission) => s.not_cached_admission += 1,
        }
        outcome
    }

    fn output_filter_inner(&mut self, key: AggregateFlowKey, result: &IdentificationResult) -> FilterOutcome {
        if !result.cacheable || self.noncacheable.contains(&result.label) {
            return FilterOutcome::NotCached(NotCachedReason::Noncacheable);
        }
        if self.blacklist.contains(&key) {
            return FilterOutcome::NotCached(NotCachedReason::Blacklisted);
        }
        let Some(cache) = self.cache.as_mut() else {
            return FilterOutcome::NotCached(NotCachedReason::Admission);
        };
        let now = self.clock;
        match cache.update_label(&key, result.label.clone()) {
            LabelUpdate::Updated => {
                cache.touch_recency(&key, now);
                self.report.output_filter.refreshed += 1;
                return FilterOutcome::Cached;
            }
            LabelUpdate::ConflictRecorded => {
                self.report.output_filter.conflicts += 1;
                let count = cache.peek(&key).map_or(0, |e| e.conflict_count);
                if count >= self.config.adapter.conflict_blacklist_threshold {
                    cache.remove(&key);
                    self.blacklist.insert(key);
                    self.report.output_filter.blacklisted_keys += 1;
                    return FilterOutcome::NotCached(NotCachedReason::Blacklisted);
                }
                cache.touch_recency(&key, now);
                return FilterOutcome::Cached;
            }
            LabelUpdate::Absent => {}
        }
        if let Some(filter) = self.filter.as_mut() {
            if filter.observe(&key) == Admission::Hold {
                cache.record_admission_reject();
                return FilterOutcome::NotCached(NotCachedReason::Admission);
            }
        }
        cache.insert(key, result.label.clone(), now);
        self.report.output_filter.cached += 1;
        FilterOutcome::Cached
    }

    /// Drops connections idle for longer than the timeout or closed by RST or
    /// FIN in both directions. Returns how many were removed.
    pub fn gc(&mut self, now: f64) -> usize {
        let timeout = self.config.idle_timeout;
        let mut expired: Vec<FiveTuple> = self
            .conns
            .iter()
            .filter(|(_, c)| c.closed() || now - c.record.last_ts > timeout)
            .map(|(t, _)| *t)
            .collect();
        expired.sort();
        for t in &expired {
            let conn = self.conns.remove(t).expect("present");
            self.finish_conn(conn);
        }
        self.report.gc_evictions += expired.len() as u64;
        expired.len()
    }

    fn finish_conn(&mut self, conn: Conn) {
        if !conn.record.is_resolved() {
            self.report.pending_connections += 1;
        }
        if self.config.record_connections {
            self.summaries.push(ConnectionSummary {
                tuple: conn.record.tuple,
                key: conn.record.key,
                label: conn.record.label.clone(),
                source: conn.source,
                packets: conn.record.packets_seen,
            });
        }
    }

    /// Ends every open connection and returns the report and, if enabled,
    /// the per-connection summaries in completion order.
    pub fn finish(mut self) -> (ClassifierReport, Vec<ConnectionSummary>) {
        let mut open: Vec<(FiveTuple, Conn)> = self.conns.drain().collect();
        open.sort_by(|a, b| a.1.record.first_ts.total_cmp(&b.1.record.first_ts).then(a.0.cmp(&b.0)));
        for (_, conn) in open {
            self.finish_conn(conn);
        }
        let mut report = self.report;
        if let Some(cache) = &self.cache {
            report.cache = cache.stats();
        }
        report.filter = self.filter.as_ref().map(MultistageFilter::stats);
        report.distinct_flows = self.flows.len() as u64;
        report.finalize(self.config.lookup_cost);
        (report, self.summaries)
    }
}

fn with_oracle(records: &[PacketRecord], config: &ClassifierConfig) -> ClassifierConfig {
    let mut config = config.clone();
    if config.policy == Policy::OptimalLfu && config.oracle_frequencies.is_none() {
        let refs = reference_sequence(
            records,
            ReferenceMode::PerConnection,
            &config.rules,
            config.idle_timeout,
        );
        config.oracle_frequencies = Some(oracle_frequencies(&refs));
    }
    config
}

/// Runs a whole trace through one classifier.
pub fn run_classification(
    records: &[PacketRecord],
    engine: &dyn Engine,
    config: &ClassifierConfig,
) -> Result<(ClassifierReport, Vec<ConnectionSummary>), ClassifierError> {
    let mut classifier = Classifier::new(engine, with_oracle(records, config))?;
    for packet in records {
        classifier.process_packet(packet)?;
    }
    Ok(classifier.finish())
}

fn shard_of(key: &AggregateFlowKey, shards: usize) -> usize {
    let mut h = key.to_u64();
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 31;
    (h % shards as u64) as usize
}

/// Splits connections across `workers` private classifiers by aggregate-flow
/// key and merges their reports. Each shard gets `ceil(capacity / workers)`
/// cache entries and its own seeds.
pub fn run_sharded(
    records: &[PacketRecord],
    engine: &dyn Engine,
    config: &ClassifierConfig,
    workers: usize,
) -> Result<(ClassifierReport, Vec<ConnectionSummary>), ClassifierError> {
    if workers <= 1 {
        return run_classification(records, engine, config);
    }
    let config = with_oracle(records, config);
    let mut route: HashMap<FiveTuple, usize> = HashMap::new();
    let mut parts: Vec<Vec<&PacketRecord>> = vec![Vec::new(); workers];
    for r in records {
        let shard = *route
            .entry(r.tuple.canonical())
            .or_insert_with(|| shard_of(&config.rules.aggregate_key(r, None), workers));
        parts[shard].push(r);
    }
    let results: Vec<_> = parts
        .par_iter()
        .enumerate()
        .map(|(i, part)| {
            let mut cfg = config.clone();
            cfg.cache_capacity = cfg.cache_capacity.map(|c| c.div_ceil(workers));
            cfg.adapter.rng_seed = cfg.adapter.rng_seed.wrapping_add(i as u64);
            cfg.filter.seed = cfg.filter.seed.wrapping_add(i as u64);
            let mut classifier = Classifier::new(engine, cfg)?;
            for packet in part {
                classifier.process_packet(packet)?;
            }
            Ok(classifier.finish())
        })
        .collect::<Result<_, ClassifierError>>()?;
    let mut report = ClassifierReport::default();
    let mut summaries = Vec::new();
    for (r, s) in results {
        report.merge(&r, config.lookup_cost);
        summaries.extend(s);
    }
    Ok((report, summaries))
}

//! Fixed-capacity aggregate-flow cache.
//!
//! Entries are grouped into buckets by a policy-defined rank (access frequency
//! for MS-Hybrid and in-cache LFU, a constant for LRU, the known total
//! popularity for Optimal-LFU). Each bucket is a list ordered by last access,
//! so the eviction victim is always the head of the lowest-ranked bucket: the
//! oldest entry among those with the minimum rank.

mod sim;

pub use sim::{oracle_frequencies, replay, run_policy_comparison, PolicyResult};

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::flow::{AggregateFlowKey, AppLabel};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    #[default]
    MsHybrid,
    Lru,
    LfuInCache,
    OptimalLfu,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::MsHybrid, Policy::Lru, Policy::LfuInCache, Policy::OptimalLfu];

    pub const fn as_str(self) -> &'static str {
        match self {
            Policy::MsHybrid => "ms-hybrid",
            Policy::Lru => "lru",
            Policy::LfuInCache => "lfu",
            Policy::OptimalLfu => "optimal-lfu",
        }
    }

    /// Only MS-Hybrid gates insertions through the multistage filter.
    pub const fn uses_admission_filter(self) -> bool {
        matches!(self, Policy::MsHybrid)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ms-hybrid" | "mshybrid" | "hybrid" => Ok(Policy::MsHybrid),
            "lru" => Ok(Policy::Lru),
            "lfu" | "lfu-in-cache" | "lfuincache" => Ok(Policy::LfuInCache),
            "optimal-lfu" | "optimal" | "optimallfu" => Ok(Policy::OptimalLfu),
            other => Err(format!("unknown policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateFlowEntry {
    pub key: AggregateFlowKey,
    pub label: AppLabel,
    pub frequency: u64,
    pub last_access: u64,
    pub inserted_at: u64,
    pub conflict_count: u32,
}

#[derive(Debug, Clone, Default)]
pub struct CacheConfig {
    pub capacity: usize,
    pub policy: Policy,
    /// Total reference count per key; required for [`Policy::OptimalLfu`].
    pub oracle_frequencies: Option<HashMap<AggregateFlowKey, u64>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CacheConfigError {
    ZeroCapacity,
    MissingOracle,
}

impl fmt::Display for CacheConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CacheConfigError::ZeroCapacity => f.write_str("cache capacity must be >= 1"),
            CacheConfigError::MissingOracle => f.write_str("optimal-lfu requires oracle frequencies"),
        }
    }
}

impl std::error::Error for CacheConfigError {}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub lookups: u64,
    pub hits: u64,
    pub misses: u64,
    pub insertions: u64,
    pub evictions: u64,
    pub admission_rejects: u64,
}

impl CacheStats {
    pub fn hit_ratio(&self) -> f64 {
        if self.lookups == 0 {
            0.0
        } else {
            self.hits as f64 / self.lookups as f64
        }
    }

    pub fn merge(&mut self, other: &CacheStats) {
        self.lookups += other.lookups;
        self.hits += other.hits;
        self.misses += other.misses;
        self.insertions += other.insertions;
        self.evictions += other.evictions;
        self.admission_rejects += other.admission_rejects;
    }
}

/// Work done by the cache's internal structures, for complexity checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    /// Entries inspected when choosing eviction victims.
    pub eviction_examined: u64,
    /// Bucket headers inspected to rediscover the minimum rank.
    pub bucket_scans: u64,
    /// Largest minimum-rank set seen at eviction time.
    pub max_min_set: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    Replaced(AggregateFlowKey),
    AlreadyPresent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelUpdate {
    Updated,
    ConflictRecorded,
    Absent,
}

const NIL: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    entry: AggregateFlowEntry,
    rank: u64,
    prev: u32,
    next: u32,
}

#[derive(Debug, Clone, Copy)]
struct Bucket {
    head: u32,
    tail: u32,
    len: u64,
}

#[derive(Debug, Clone)]
pub struct AflowCache {
    capacity: usize,
    policy: Policy,
    oracle: HashMap<AggregateFlowKey, u64>,
    nodes: Vec<Node>,
    free: Vec<u32>,
    index: HashMap<AggregateFlowKey, u32>,
    buckets: HashMap<u64, Bucket>,
    // `None` when the minimum must be recomputed.
    min_rank: Option<u64>,
    stats: CacheStats,
    ops: OpCounters,
}

impl AflowCache {
    pub fn new(config: CacheConfig) -> Result<Self, CacheConfigError> {
        if config.capacity == 0 {
            return Err(CacheConfigError::ZeroCapacity);
        }
        let oracle = match (config.policy, config.oracle_frequencies) {
            (Policy::OptimalLfu, None) => return Err(CacheConfigError::MissingOracle),
            (_, oracle) => oracle.unwrap_or_default(),
        };
        Ok(Self {
            capacity: config.capacity,
            policy: config.policy,
            oracle,
            nodes: Vec::with_capacity(config.capacity.min(1 << 20)),
            free: Vec::new(),
            index: HashMap::with_capacity(config.capacity.min(1 << 20)),
            buckets: HashMap::new(),
            min_rank: None,
            stats: CacheStats::default(),
            ops: OpCounters::default(),
        })
    }

    pub fn with_capacity(capacity: usize, policy: Policy) -> Result<Self, CacheConfigError> {
        Self::new(CacheConfig {
            capacity,
            policy,
            oracle_frequencies: None,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn op_counters(&self) -> OpCounters {
        self.ops
    }

    pub fn contains(&self, key: &AggregateFlowKey) -> bool {
        self.index.contains_key(key)
    }

    /// Reads an entry without counting an access.
    pub fn peek(&self, key: &AggregateFlowKey) -> Option<&AggregateFlowEntry> {
        self.index.get(key).map(|&i| &self.nodes[i as usize].entry)
    }

    pub fn entries(&self) -> impl Iterator<Item = &AggregateFlowEntry> {
        self.index.values().map(|&i| &self.nodes[i as usize].entry)
    }

    /// Counts an admission refusal made by the caller's filter.
    pub fn record_admission_reject(&mut self) {
        self.stats.admission_rejects += 1;
    }

    fn initial_rank(&self, key: &AggregateFlowKey) -> u64 {
        match self.policy {
            Policy::MsHybrid | Policy::LfuInCache => 1,
            Policy::Lru => 0,
            Policy::OptimalLfu => self.oracle.get(key).copied().unwrap_or(0),
        }
    }

    fn rank_after_hit(&self, node: &Node) -> u64 {
        match self.policy {
            Policy::MsHybrid | Policy::LfuInCache => node.entry.frequency,
            Policy::Lru | Policy::OptimalLfu => node.rank,
        }
    }

    /// Looks up `key` at logical time `now`, counting a hit or a miss.
    pub fn lookup(&mut self, key: &AggregateFlowKey, now: u64) -> Option<&AggregateFlowEntry> {
        self.stats.lookups += 1;
        let Some(&idx) = self.index.get(key) else {
            self.stats.misses += 1;
            return None;
        };
        self.stats.hits += 1;
        {
            let node = &mut self.nodes[idx as usize];
            node.entry.frequency += 1;
            node.entry.last_access = now;
        }
        let new_rank = self.rank_after_hit(&self.nodes[idx as usize]);
        self.move_to(idx, new_rank);
        Some(&self.nodes[idx as usize].entry)
    }

    /// Moves an entry to the most-recent end of its bucket without counting an access.
    pub fn touch_recency(&mut self, key: &AggregateFlowKey, now: u64) -> bool {
        let Some(&idx) = self.index.get(key) else {
            return false;
        };
        let rank = self.nodes[idx as usize].rank;
        self.nodes[idx as usize].entry.last_access = now;
        self.move_to(idx, rank);
        true
    }

    pub fn insert(&mut self, key: AggregateFlowKey, label: AppLabel, now: u64) -> InsertOutcome {
        if let Some(&idx) = self.index.get(&key) {
            self.nodes[idx as usize].entry.label = label;
            return InsertOutcome::AlreadyPresent;
        }
        let evicted = if self.index.len() >= self.capacity {
            self.evict_one()
        } else {
            None
        };
        let rank = self.initial_rank(&key);
        let node = Node {
            entry: AggregateFlowEntry {
                key,
                label,
                frequency: 1,
                last_access: now,
                inserted_at: now,
                conflict_count: 0,
            },
            rank,
            prev: NIL,
            next: NIL,
        };
        let idx = match self.free.pop() {
            Some(i) => {
                self.nodes[i as usize] = node;
                i
            }
            None => {
                self.nodes.push(node);
                (self.nodes.len() - 1) as u32
            }
        };
        self.index.insert(key, idx);
        self.push_back(idx, rank);
        self.stats.insertions += 1;
        match evicted {
            Some(k) => InsertOutcome::Replaced(k),
            None => InsertOutcome::Inserted,
        }
    }

    pub fn update_label(&mut self, key: &AggregateFlowKey, label: AppLabel) -> LabelUpdate {
        let Some(&idx) = self.index.get(key) else {
            return LabelUpdate::Absent;
        };
        let entry = &mut self.nodes[idx as usize].entry;
        if entry.label == label {
            LabelUpdate::Updated
        } else {
            entry.label = label;
            entry.conflict_count += 1;
            LabelUpdate::ConflictRecorded
        }
    }

    pub fn remove(&mut self, key: &AggregateFlowKey) -> Option<AggregateFlowEntry> {
        let idx = self.index.remove(key)?;
        self.unlink(idx);
        self.free.push(idx);
        Some(self.nodes[idx as usize].entry.clone())
    }

    fn evict_one(&mut self) -> Option<AggregateFlowKey> {
        let rank = self.current_min_rank()?;
        let bucket = self.buckets[&rank];
        self.ops.eviction_examined += 1;
        self.ops.max_min_set = self.ops.max_min_set.max(bucket.len);
        let victim = bucket.head;
        let key = self.nodes[victim as usize].entry.key;
        self.index.remove(&key);
        self.unlink(victim);
        self.free.push(victim);
        self.stats.evictions += 1;
        Some(key)
    }

    fn current_min_rank(&mut self) -> Option<u64> {
        if let Some(r) = self.min_rank {
            return Some(r);
        }
        self.ops.bucket_scans += self.buckets.len() as u64;
        let r = self.buckets.keys().copied().min();
        self.min_rank = r;
        r
    }

    fn push_back(&mut self, idx: u32, rank: u64) {
        self.nodes[idx as usize].rank = rank;
        self.nodes[idx as usize].next = NIL;
        let bucket = self.buckets.entry(rank).or_insert(Bucket {
            head: NIL,
            tail: NIL,
            len: 0,
        });
        let tail = bucket.tail;
        self.nodes[idx as usize].prev = tail;
        if tail == NIL {
            bucket.head = idx;
        } else {
            self.nodes[tail as usize].next = idx;
        }
        bucket.tail = idx;
        bucket.len += 1;
        match self.min_rank {
            Some(m) if rank < m => self.min_rank = Some(rank),
            Some(_) => {}
            None if rank == self.floor_rank() || self.buckets.len() == 1 => self.min_rank = Some(rank),
            None => {}
        }
    }

    /// Lowest rank the policy can produce.
    fn floor_rank(&self) -> u64 {
        match self.policy {
            Policy::MsHybrid | Policy::LfuInCache => 1,
            Policy::Lru | Policy::OptimalLfu => 0,
        }
    }

    /// Re-links `idx` at the tail of bucket `new_rank`. `new_rank` is either
    /// the node's current rank or one above it, so when the node was the last
    /// member of the minimum bucket the new minimum is `new_rank`.
    fn move_to(&mut self, idx: u32, new_rank: u64) {
        let old = self.nodes[idx as usize].rank;
        debug_assert!(new_rank == old || new_rank == old + 1);
        let was_min = self.min_rank == Some(old);
        self.unlink(idx);
        self.push_back(idx, new_rank);
        if was_min && !self.buckets.contains_key(&old) {
            self.min_rank = Some(new_rank);
        }
    }

    fn unlink(&mut self, idx: u32) {
        let (rank, prev, next) = {
            let n = &self.nodes[idx as usize];
            (n.rank, n.prev, n.next)
        };
        if prev != NIL {
            self.nodes[prev as usize].next = next;
        }
        if next != NIL {
            self.nodes[next as usize].prev = prev;
        }
        let bucket = self.buckets.get_mut(&rank).expect("linked node has a bucket");
        if bucket.head == idx {
            bucket.head = next;
        }
        if bucket.tail == idx {
            bucket.tail = prev;
        }
        bucket.len -= 1;
        if bucket.len == 0 {
            self.buckets.remove(&rank);
            if self.min_rank == Some(rank) {
                self.min_rank = None;
            }
        }
        let n = &mut self.nodes[idx as usize];
        n.prev = NIL;
        n.next = NIL;
    }

    #[cfg(test)]
    fn check_invariants(&self) {
        assert!(self.index.len() <= self.capacity);
        let mut total = 0;
        for (&rank, b) in &self.buckets {
            let mut cur = b.head;
            let mut prev = NIL;
            let mut n = 0;
            let mut last = 0;
            while cur != NIL {
                let node = &self.nodes[cur as usize];
                assert_eq!(node.rank, rank);
                assert_eq!(node.prev, prev);
                assert!(node.entry.last_access >= last);
                assert!(node.entry.last_access >= node.entry.inserted_at);
                assert!(node.entry.frequency >= 1);
                last = node.entry.last_access;
                prev = cur;
                cur = node.next;
                n += 1;
            }
            assert_eq!(b.tail, prev);
            assert_eq!(b.len, n);
            total += n;
        }
        assert_eq!(total as usize, self.index.len());
        if let Some(m) = self.min_rank {
            assert_eq!(Some(m), self.buckets.keys().copied().min());
        }
    }
}

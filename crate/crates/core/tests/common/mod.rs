#![allow(dead_code)]

use std::net::Ipv4Addr;

use aflow_core::cache::{AflowCache, InsertOutcome};
use aflow_core::msfilter::{Admission, FilterConfig, MultistageFilter};
use aflow_core::{AggregateFlowKey, AppLabel, Endpoint, Policy, TransportProto};

pub fn key(i: u32) -> AggregateFlowKey {
    AggregateFlowKey::new(Endpoint::new(Ipv4Addr::from(0x0a00_0000 + i), 80, TransportProto::Tcp))
}

/// What one reference did to the cache.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Hit,
    Rejected,
    Inserted,
    Evicted(AggregateFlowKey),
}

#[derive(Debug, Clone)]
struct Slot {
    key: AggregateFlowKey,
    frequency: u64,
    last_access: u64,
}

/// MS-Hybrid written as plainly as possible: a vector of entries, scanned in
/// full for the minimum `(frequency, last_access)` at every eviction.
pub struct NaiveMsHybrid {
    capacity: usize,
    slots: Vec<Slot>,
}

impl NaiveMsHybrid {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            slots: Vec::new(),
        }
    }

    pub fn hit(&mut self, key: &AggregateFlowKey, now: u64) -> bool {
        match self.slots.iter_mut().find(|s| s.key == *key) {
            Some(s) => {
                s.frequency += 1;
                s.last_access = now;
                true
            }
            None => false,
        }
    }

    pub fn insert(&mut self, key: AggregateFlowKey, now: u64) -> Option<AggregateFlowKey> {
        let mut evicted = None;
        if self.slots.len() >= self.capacity {
            let victim = self
                .slots
                .iter()
                .enumerate()
                .min_by_key(|(_, s)| (s.frequency, s.last_access))
                .map(|(i, _)| i)
                .expect("full cache is nonempty");
            evicted = Some(self.slots.swap_remove(victim).key);
        }
        self.slots.push(Slot {
            key,
            frequency: 1,
            last_access: now,
        });
        evicted
    }
}

/// Event log of the naive reference over `keys`.
pub fn naive_events(keys: &[AggregateFlowKey], capacity: usize, filter: &FilterConfig) -> Vec<Event> {
    let mut cache = NaiveMsHybrid::new(capacity);
    let mut f = MultistageFilter::new(filter.clone()).unwrap();
    keys.iter()
        .enumerate()
        .map(|(t, k)| {
            let now = t as u64;
            if cache.hit(k, now) {
                Event::Hit
            } else if f.observe(k) == Admission::Hold {
                Event::Rejected
            } else {
                match cache.insert(*k, now) {
                    Some(v) => Event::Evicted(v),
                    None => Event::Inserted,
                }
            }
        })
        .collect()
}

/// Event log of the optimized cache over `keys`.
pub fn optimized_events(keys: &[AggregateFlowKey], capacity: usize, filter: &FilterConfig) -> Vec<Event> {
    let mut cache = AflowCache::with_capacity(capacity, Policy::MsHybrid).unwrap();
    let mut f = MultistageFilter::new(filter.clone()).unwrap();
    let label = AppLabel::new("x").unwrap();
    keys.iter()
        .enumerate()
        .map(|(t, k)| {
            let now = t as u64;
            if cache.lookup(k, now).is_some() {
                Event::Hit
            } else if f.observe(k) == Admission::Hold {
                cache.record_admission_reject();
                Event::Rejected
            } else {
                match cache.insert(*k, label.clone(), now) {
                    InsertOutcome::Replaced(v) => Event::Evicted(v),
                    InsertOutcome::Inserted => Event::Inserted,
                    InsertOutcome::AlreadyPresent => unreachable!("miss then present"),
                }
            }
        })
        .collect()
}

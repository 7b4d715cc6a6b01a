//! Trace-driven replay of a key-reference sequence through each policy.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AflowCache, CacheConfig, CacheStats, Policy};
use crate::flow::{AggregateFlowKey, AppLabel};
use crate::msfilter::{Admission, FilterConfig, FilterError, MultistageFilter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub policy: Policy,
    pub capacity: usize,
    pub lookups: u64,
    pub hits: u64,
    pub hit_ratio: f64,
    pub evictions: u64,
    pub admission_rejects: u64,
}

pub fn oracle_frequencies(keys: &[AggregateFlowKey]) -> HashMap<AggregateFlowKey, u64> {
    let mut freq = HashMap::new();
    for k in keys {
        *freq.entry(*k).or_insert(0) += 1;
    }
    freq
}

/// Replays `keys` through a fresh cache. Logical time is the reference index.
/// On a miss the key is inserted, gated by the filter for MS-Hybrid.
pub fn replay(
    keys: &[AggregateFlowKey],
    policy: Policy,
    capacity: usize,
    filter: &FilterConfig,
    oracle: Option<&HashMap<AggregateFlowKey, u64>>,
) -> Result<CacheStats, FilterError> {
    let oracle_frequencies = match policy {
        Policy::OptimalLfu => Some(match oracle {
            Some(o) => o.clone(),
            None => oracle_frequencies(keys),
        }),
        _ => None,
    };
    let mut cache = AflowCache::new(CacheConfig {
        capacity,
        policy,
        oracle_frequencies,
    })
    .map_err(|e| FilterError::InvalidConfig(e.to_string()))?;
    let mut admission = if policy.uses_admission_filter() {
        Some(MultistageFilter::new(filter.clone())?)
    } else {
        None
    };
    let label = AppLabel::new("sim").expect("static label");
    for (t, key) in keys.iter().enumerate() {
        let now = t as u64;
        if cache.lookup(key, now).is_some() {
            continue;
        }
        let admitted = match admission.as_mut() {
            Some(f) => f.observe(key) == Admission::Admit,
            None => true,
        };
        if admitted {
            cache.insert(*key, label.clone(), now);
        } else {
            cache.record_admission_reject();
        }
    }
    Ok(cache.stats())
}

/// Hit ratio for every `(policy, capacity)` cell, each in a private cache.
/// Rows are ordered policy-major in the order given.
pub fn run_policy_comparison(
    keys: &[AggregateFlowKey],
    capacities: &[usize],
    policies: &[Policy],
    filter: &FilterConfig,
) -> Result<Vec<PolicyResult>, FilterError> {
    let oracle = policies.contains(&Policy::OptimalLfu).then(|| oracle_frequencies(keys));
    let cells: Vec<(Policy, usize)> = policies
        .iter()
        .flat_map(|&p| capacities.iter().map(move |&c| (p, c)))
        .collect();
    cells
        .par_iter()
        .map(|&(policy, capacity)| {
            let stats = replay(keys, policy, capacity, filter, oracle.as_ref())?;
            Ok(PolicyResult {
                policy,
                capacity,
                lookups: stats.lookups,
                hits: stats.hits,
                hit_ratio: stats.hit_ratio(),
                evictions: stats.evictions,
                admission_rejects: stats.admission_rejects,
            })
        })
        .collect()
}

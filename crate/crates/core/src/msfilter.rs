//! Multistage filter gating cache admission.
//!
//! `d` stages of `b` counters each. Every observation of a key increments one
//! counter per stage; the key is admitted once all of its counters have
//! reached the threshold `T`. Collisions can only inflate counters, so a key
//! that really occurred `T` times is never held back.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::AggregateFlowKey;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
    #[error("false-positive bound not applicable: {0}")]
    Domain(String),
}

/// Largest threshold representable by the 16-bit saturating counters.
pub const MAX_THRESHOLD: u32 = u16::MAX as u32 - 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub stages: usize,
    /// Counters per stage; a power of two.
    pub counters: usize,
    pub threshold: u32,
    /// Observations between counter resets; 0 disables resets.
    pub reset_period: u64,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            stages: 4,
            counters: 4096,
            threshold: 3,
            reset_period: 1_000_000,
            seed: 0x5eed_f11e,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.stages == 0 {
            return Err(FilterError::InvalidConfig("stages must be >= 1".into()));
        }
        if self.counters < 2 || !self.counters.is_power_of_two() {
            return Err(FilterError::InvalidConfig(format!(
                "counters per stage must be a power of two >= 2, got {}",
                self.counters
            )));
        }
        if self.threshold == 0 || self.threshold > MAX_THRESHOLD {
            return Err(FilterError::InvalidConfig(format!(
                "threshold must be in [1, {MAX_THRESHOLD}], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Admission {
    Admit,
    Hold,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub observations: u64,
    pub admits: u64,
    pub holds: u64,
    pub resets: u64,
}

impl FilterStats {
    pub fn merge(&mut self, other: &FilterStats) {
        self.observations += other.observations;
        self.admits += other.admits;
        self.holds += other.holds;
        self.resets += other.resets;
    }
}

#[derive(Debug, Clone)]
pub struct MultistageFilter {
    config: FilterConfig,
    /// `stages * counters`, stage-major.
    counters: Vec<u16>,
    stage_salts: Vec<u64>,
    key_salt: u64,
    observations: u64,
    stats: FilterStats,
}

// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl MultistageFilter {
    pub fn new(config: FilterConfig) -> Result<Self, FilterError> {
        config.validate()?;
        let key_salt = mix64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
        // Salts depend only on the seed and stage index, so a filter with more
        // stages shares its first stages with a shallower one.
        let stage_salts = (0..config.stages as u64)
            .map(|i| mix64(config.seed.wrapping_add((i + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))))
            .collect();
        Ok(Self {
            counters: vec![0; config.stages * config.counters],
            stage_salts,
            key_salt,
            observations: 0,
            stats: FilterStats::default(),
            config,
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn stats(&self) -> FilterStats {
        self.stats
    }

    /// Observations since the last reset.
    pub fn observations(&self) -> u64 {
        self.observations
    }

    fn base_hash(&self, key: &AggregateFlowKey) -> u64 {
        mix64(key.to_u64() ^ self.key_salt)
    }

    fn slot(&self, stage: usize, base: u64) -> usize {
        let mask = (self.config.counters - 1) as u64;
        stage * self.config.counters + (mix64(base ^ self.stage_salts[stage]) & mask) as usize
    }

    /// Counts one occurrence of `key` and reports whether it now passes every stage.
    pub fn observe(&mut self, key: &AggregateFlowKey) -> Admission {
        let base = self.base_hash(key);
        let threshold = self.config.threshold;
        let mut admit = true;
        for stage in 0..self.config.stages {
            let slot = self.slot(stage, base);
            let c = self.counters[slot].saturating_add(1);
            self.counters[slot] = c;
            admit &= u32::from(c) >= threshold;
        }
        self.observations += 1;
        self.stats.observations += 1;
        let decision = if admit {
            self.stats.admits += 1;
            Admission::Admit
        } else {
            self.stats.holds += 1;
            Admission::Hold
        };
        if self.config.reset_period > 0 && self.observations >= self.config.reset_period {
            self.reset();
            self.stats.resets += 1;
        }
        decision
    }

    /// Minimum counter across stages (count-min style estimate), without side effects.
    pub fn estimate(&self, key: &AggregateFlowKey) -> u32 {
        let base = self.base_hash(key);
        (0..self.config.stages)
            .map(|s| u32::from(self.counters[self.slot(s, base)]))
            .min()
            .unwrap_or(0)
    }

    /// Whether `key` would pass without being observed again.
    pub fn would_admit(&self, key: &AggregateFlowKey) -> bool {
        self.estimate(key) >= self.config.threshold
    }

    /// Stage strength `k = T * b / N` for the current period, `None` before any observation.
    pub fn stage_strength(&self) -> Option<f64> {
        (self.observations > 0)
            .then(|| f64::from(self.config.threshold) * self.config.counters as f64 / self.observations as f64)
    }

    pub fn reset(&mut self) {
        self.counters.fill(0);
        self.observations = 0;
    }

    pub fn counters(&self) -> &[u16] {
        &self.counters
    }
}

/// Upper bound on the probability that a key of frequency `f` passes a
/// `d`-stage filter of stage strength `k`: `((1/k) * 1/(1 - f/T))^d`, clamped
/// to `[0, 1]`. Only defined for `f/T <= 1 - 1/k`.
pub fn false_positive_bound(stages: u32, k: f64, f_over_t: f64) -> Result<f64, FilterError> {
    if !(k.is_finite() && k > 0.0) {
        return Err(FilterError::Domain(format!("stage strength k={k} must be positive")));
    }
    if !(0.0..=1.0).contains(&f_over_t) {
        return Err(FilterError::Domain(format!("f/T={f_over_t} outside [0, 1]")));
    }
    let limit = 1.0 - 1.0 / k;
    if f_over_t > limit + 1e-12 {
        return Err(FilterError::Domain(format!("f/T={f_over_t} exceeds 1 - 1/k = {limit}")));
    }
    let per_stage = (1.0 / k) / (1.0 - f_over_t);
    Ok(per_stage.powi(stages as i32).clamp(0.0, 1.0))
}

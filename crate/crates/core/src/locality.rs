//! Temporal-locality analysis of key-reference sequences.
//!
//! Two sources of locality are separated: long-term popularity (rank-frequency
//! and its Zipf exponent) and short-term correlation (stack distances, compared
//! against a randomly permuted copy of the same sequence).

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{ks_statistic, least_squares};
use crate::trace::scramble::shuffle;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LocalityError {
    #[error("empty reference sequence")]
    EmptyInput,
    #[error("need at least 3 ranks with count >= {min_count}, found {found}")]
    InsufficientRanks { min_count: u64, found: usize },
    #[error("need at least 3 non-empty distance bins, found {0}")]
    InsufficientBins(usize),
}

/// Ranks with fewer references than this are left out of the Zipf fit.
pub const ZIPF_MIN_COUNT: u64 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRow<K> {
    pub rank: usize,
    pub key: K,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankFrequencyTable<K> {
    pub rows: Vec<RankRow<K>>,
    pub total: u64,
}

impl<K> RankFrequencyTable<K> {
    pub fn counts(&self) -> impl Iterator<Item = u64> + '_ {
        self.rows.iter().map(|r| r.count)
    }
}

/// Counts per key, most popular first; equal counts are ordered by key.
pub fn rank_frequency<K: Ord + Hash + Clone>(keys: &[K]) -> Result<RankFrequencyTable<K>, LocalityError> {
    if keys.is_empty() {
        return Err(LocalityError::EmptyInput);
    }
    let mut counts: HashMap<&K, u64> = HashMap::new();
    for k in keys {
        *counts.entry(k).or_insert(0) += 1;
    }
    let mut pairs: Vec<(&K, u64)> = counts.into_iter().collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let rows = pairs
        .into_iter()
        .enumerate()
        .map(|(i, (k, count))| RankRow {
            rank: i + 1,
            key: k.clone(),
            count,
        })
        .collect();
    Ok(RankFrequencyTable {
        rows,
        total: keys.len() as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZipfFit {
    pub alpha: f64,
    pub stderr: f64,
    pub ranks_used: usize,
}

/// Least-squares fit of `log10(count)` against `log10(rank)`; `alpha` is the
/// negated slope.
pub fn zipf_fit_counts(counts: impl IntoIterator<Item = u64>, min_count: u64) -> Result<ZipfFit, LocalityError> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = counts
        .into_iter()
        .enumerate()
        .filter(|&(_, c)| c >= min_count && c > 0)
        .map(|(i, c)| (((i + 1) as f64).log10(), (c as f64).log10()))
        .unzip();
    if xs.len() < 3 {
        return Err(LocalityError::InsufficientRanks {
            min_count,
            found: xs.len(),
        });
    }
    let fit = least_squares(&xs, &ys).expect("distinct ranks");
    Ok(ZipfFit {
        alpha: (-fit.slope).max(0.0),
        stderr: fit.slope_stderr,
        ranks_used: xs.len(),
    })
}

pub fn zipf_fit<K>(table: &RankFrequencyTable<K>) -> Result<ZipfFit, LocalityError> {
    zipf_fit_counts(table.counts(), ZIPF_MIN_COUNT)
}

/// Stack distances of a reference sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackDistances {
    /// distance -> number of references with that distance.
    pub finite: BTreeMap<u64, u64>,
    /// First references to a key.
    pub infinite: u64,
}

impl StackDistances {
    pub fn finite_total(&self) -> u64 {
        self.finite.values().sum()
    }

    /// Finite distances normalized to probabilities. Empty when no key repeats.
    pub fn histogram(&self) -> BTreeMap<u64, f64> {
        let total = self.finite_total();
        if total == 0 {
            return BTreeMap::new();
        }
        self.finite
            .iter()
            .map(|(&d, &c)| (d, c as f64 / total as f64))
            .collect()
    }

    /// Lower median of the finite distances.
    pub fn median(&self) -> Option<u64> {
        let total = self.finite_total();
        if total == 0 {
            return None;
        }
        let target = total.div_ceil(2);
        let mut seen = 0;
        for (&d, &c) in &self.finite {
            seen += c;
            if seen >= target {
                return Some(d);
            }
        }
        None
    }
}

/// Fenwick tree over reference positions.
struct Fenwick {
    tree: Vec<i64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }

    fn add(&mut self, pos: usize, delta: i64) {
        let mut i = pos + 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over positions `0..pos`.
    fn prefix(&self, pos: usize) -> i64 {
        let mut i = pos;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// For every repeated reference, the number of distinct other keys referenced
/// since the previous reference to the same key.
///
/// Each key's most recent position is marked in a Fenwick tree; the distance
/// is the number of marks strictly between the previous and current position.
pub fn stack_distances<K: Eq + Hash>(keys: &[K]) -> StackDistances {
    let mut out = StackDistances::default();
    let mut last: HashMap<&K, usize> = HashMap::new();
    let mut marks = Fenwick::new(keys.len());
    for (i, k) in keys.iter().enumerate() {
        match last.insert(k, i) {
            Some(prev) => {
                let d = marks.prefix(i) - marks.prefix(prev + 1);
                *out.finite.entry(d as u64).or_insert(0) += 1;
                marks.add(prev, -1);
            }
            None => out.infinite += 1,
        }
        marks.add(i, 1);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// Decay magnitude: the negated log-log slope.
    pub slope: f64,
    pub stderr: f64,
    pub bins: usize,
}

/// Log-log slope of a distance distribution over distances `>= 1`.
///
/// Distances are grouped in power-of-two bins `[2^j, 2^(j+1))`, truncated at
/// the largest observed distance. Each bin contributes its mean density
/// (mass / width) at its probability-weighted mean distance.
pub fn slope_fit(histogram: &BTreeMap<u64, f64>) -> Result<SlopeFit, LocalityError> {
    let d_max = histogram
        .iter()
        .rev()
        .find(|(&d, &p)| d >= 1 && p > 0.0)
        .map(|(&d, _)| d);
    let Some(d_max) = d_max else {
        return Err(LocalityError::InsufficientBins(0));
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut lo = 1u64;
    while lo <= d_max {
        let hi = lo.saturating_mul(2).saturating_sub(1).min(d_max);
        let (mass, moment) = histogram
            .range(lo..=hi)
            .fold((0.0, 0.0), |(m, w), (&d, &p)| (m + p, w + p * d as f64));
        if mass > 0.0 {
            let width = (hi - lo + 1) as f64;
            xs.push((moment / mass).log10());
            ys.push((mass / width).log10());
        }
        lo = lo.saturating_mul(2);
    }
    if xs.len() < 3 {
        return Err(LocalityError::InsufficientBins(xs.len()));
    }
    let fit = least_squares(&xs, &ys).expect("bins have distinct centers");
    Ok(SlopeFit {
        slope: -fit.slope,
        stderr: fit.slope_stderr,
        bins: xs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityReport {
    pub references: u64,
    pub distinct_keys: u64,
    pub alpha: Option<f64>,
    pub alpha_stderr: Option<f64>,
    pub zipf_ranks_used: usize,
    pub first_references: u64,
    pub distance_histogram: BTreeMap<u64, f64>,
    pub distance_histogram_scrambled: BTreeMap<u64, f64>,
    pub slope_original: Option<f64>,
    pub slope_original_stderr: Option<f64>,
    pub slope_scrambled: Option<f64>,
    pub slope_scrambled_stderr: Option<f64>,
    pub ks_statistic: f64,
    pub median_distance: Option<u64>,
    pub median_distance_scrambled: Option<u64>,
}

/// Full locality analysis: Zipf fit plus stack distances of the sequence and
/// of a uniformly permuted copy (seeded).
pub fn scramble_compare<K: Ord + Hash + Clone>(keys: &[K], seed: u64) -> Result<LocalityReport, LocalityError> {
    let table = rank_frequency(keys)?;
    let zipf = zipf_fit(&table).ok();
    let mut scrambled = keys.to_vec();
    shuffle(&mut scrambled, seed);

    let original = stack_distances(keys);
    let shuffled = stack_distances(&scrambled);
    let hist = original.histogram();
    let hist_s = shuffled.histogram();
    let slope = slope_fit(&hist).ok();
    let slope_s = slope_fit(&hist_s).ok();

    Ok(LocalityReport {
        references: table.total,
        distinct_keys: table.rows.len() as u64,
        alpha: zipf.map(|z| z.alpha),
        alpha_stderr: zipf.map(|z| z.stderr),
        zipf_ranks_used: zipf.map_or(0, |z| z.ranks_used),
        first_references: original.infinite,
        ks_statistic: ks_statistic(&original.finite, &shuffled.finite),
        median_distance: original.median(),
        median_distance_scrambled: shuffled.median(),
        distance_histogram: hist,
        distance_histogram_scrambled: hist_s,
        slope_original: slope.map(|s| s.slope),
        slope_original_stderr: slope.map(|s| s.stderr),
        slope_scrambled: slope_s.map(|s| s.slope),
        slope_scrambled_stderr: slope_s.map(|s| s.stderr),
    })
}

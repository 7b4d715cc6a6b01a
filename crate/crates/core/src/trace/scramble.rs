//! Random permutation of a trace's reference order.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::flow::{FiveTuple, PacketRecord};

/// Seeded uniform shuffle. Equal seeds and lengths give the same permutation
/// regardless of element type.
pub fn shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
}

/// Permutes the order in which connections start while keeping the sorted
/// sequence of start times.
///
/// Connections (grouped by canonical tuple) are assigned to the original start
/// slots by a seeded shuffle; every packet of a connection is shifted by the
/// same offset, so its internal timing is unchanged. The resulting reference
/// sequence equals `shuffle` applied to the original one with the same seed.
pub fn scramble_trace(records: &[PacketRecord], seed: u64) -> Vec<PacketRecord> {
    let mut conn_of: HashMap<FiveTuple, usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let next = members.len();
        let c = *conn_of.entry(r.tuple.canonical()).or_insert(next);
        if c == next {
            members.push(Vec::new());
        }
        members[c].push(i);
    }
    let starts: Vec<f64> = members.iter().map(|m| records[m[0]].ts).collect();
    let mut order: Vec<usize> = (0..members.len()).collect();
    shuffle(&mut order, seed);

    let mut out = Vec::with_capacity(records.len());
    for (slot, &conn) in order.iter().enumerate() {
        let shift = starts[slot] - starts[conn];
        out.extend(members[conn].iter().map(|&i| {
            let mut r = records[i].clone();
            r.ts += shift;
            r
        }));
    }
    out.sort_by(|a, b| a.ts.total_cmp(&b.ts));
    out
}

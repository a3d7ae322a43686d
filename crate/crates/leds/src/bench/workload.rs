//! Seeded workload generation.
//!
//! Keys are nonzero 32-bit integers from a ChaCha8 stream, so every key
//! fits the original entry layout.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    /// Original inserts N keys, update deletes them.
    Del,
    /// Original inserts N keys, update inserts N more.
    Ins,
    /// Both phases replay one stream: search, then delete on hit or insert
    /// on miss.
    Rand,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Insert { key: u64, value: u64 },
    Delete { key: u64 },
    /// Search; remove on hit, insert `value` on miss.
    Toggle { key: u64, value: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Workload {
    pub original: Vec<Op>,
    pub update: Vec<Op>,
}

fn value_of(key: u64) -> u64 {
    key.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 16
}

fn distinct(rng: &mut ChaCha8Rng, n: usize, seen: &mut HashSet<u64>) -> Vec<u64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let k = u64::from(rng.random_range(1..=u32::MAX));
        if seen.insert(k) {
            out.push(k);
        }
    }
    out
}

/// Number of update operations for `ratio` of `n`.
pub fn update_len(n: usize, ratio: f64) -> usize {
    ((n as f64 * ratio).round() as usize).clamp(1, n)
}

/// Builds both phases. `ratio` scales the update phase: DEL removes that
/// fraction of the original keys, newest first; INS inserts that many new
/// keys; RAND replays that prefix of the stream.
pub fn generate(pattern: Pattern, n: usize, seed: u64, ratio: f64) -> Workload {
    assert!(n >= 1, "workload size must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = update_len(n, ratio);
    match pattern {
        Pattern::Del => {
            let keys = distinct(&mut rng, n, &mut HashSet::new());
            let original = keys.iter().map(|&key| Op::Insert { key, value: value_of(key) }).collect();
            let update = keys.iter().rev().take(m).map(|&key| Op::Delete { key }).collect();
            Workload { original, update }
        }
        Pattern::Ins => {
            let mut seen = HashSet::new();
            let first = distinct(&mut rng, n, &mut seen);
            let second = distinct(&mut rng, m, &mut seen);
            Workload {
                original: first.into_iter().map(|key| Op::Insert { key, value: value_of(key) }).collect(),
                update: second.into_iter().map(|key| Op::Insert { key, value: value_of(key) }).collect(),
            }
        }
        Pattern::Rand => {
            // keys drawn from [1, n] so repeats are common
            let stream: Vec<Op> = (0..n)
                .map(|_| {
                    let key = rng.random_range(1..=n as u64);
                    Op::Toggle { key, value: value_of(key) }
                })
                .collect();
            Workload { update: stream[..m].to_vec(), original: stream }
        }
    }
}

/// Replays `ops` on an ordered map model.
pub fn replay(shadow: &mut BTreeMap<u64, u64>, ops: &[Op]) {
    for op in ops {
        match *op {
            Op::Insert { key, value } => {
                shadow.entry(key).or_insert(value);
            }
            Op::Delete { key } => {
                shadow.remove(&key);
            }
            Op::Toggle { key, value } => {
                if shadow.remove(&key).is_none() {
                    shadow.insert(key, value);
                }
            }
        }
    }
}

//! Content-addressed weight pool.
//!
//! Consensus only orders digests; the bytes live here. Each node hosts its
//! own pool holding what it produced or fetched. Entries are immutable once
//! inserted and are evicted purely by round tag.

use std::collections::BTreeMap;

use crate::error::{ModelError, PoolError};
use crate::model::{digest, Digest, RoundId, WeightVector};

/// Bookkeeping bytes charged per entry on top of the 8·d payload: the
/// 32-byte digest key, the 8-byte round tag and the 8-byte reference count.
pub const ENTRY_OVERHEAD_BYTES: usize = Digest::LEN + 8 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub digest: Digest,
    pub weights: WeightVector,
    pub round_tag: RoundId,
    pub ref_count: u64,
}

impl PoolEntry {
    pub fn bytes(&self) -> usize {
        self.weights.byte_len() + ENTRY_OVERHEAD_BYTES
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoolStats {
    pub current_bytes: usize,
    pub peak_bytes: usize,
    pub entries: usize,
    pub peak_entries: usize,
}

#[derive(Debug, Clone, Default)]
pub struct WeightPool {
    entries: BTreeMap<Digest, PoolEntry>,
    stats: PoolStats,
}

impl WeightPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `w` under its digest. Re-inserting identical content only bumps
    /// the reference count; the round tag keeps the newest value.
    pub fn put(&mut self, w: WeightVector, round: RoundId) -> Result<Digest, ModelError> {
        let dg = digest(&w)?;
        if let Some(entry) = self.entries.get_mut(&dg) {
            entry.ref_count += 1;
            entry.round_tag = entry.round_tag.max(round);
            return Ok(dg);
        }
        let entry = PoolEntry {
            digest: dg,
            weights: w,
            round_tag: round,
            ref_count: 1,
        };
        self.stats.current_bytes += entry.bytes();
        self.stats.entries += 1;
        self.stats.peak_bytes = self.stats.peak_bytes.max(self.stats.current_bytes);
        self.stats.peak_entries = self.stats.peak_entries.max(self.stats.entries);
        self.entries.insert(dg, entry);
        Ok(dg)
    }

    pub fn get(&self, dg: &Digest) -> Result<&WeightVector, PoolError> {
        self.entries
            .get(dg)
            .map(|e| &e.weights)
            .ok_or(PoolError::NotFound(*dg))
    }

    pub fn contains(&self, dg: &Digest) -> bool {
        self.entries.contains_key(dg)
    }

    pub fn entry(&self, dg: &Digest) -> Option<&PoolEntry> {
        self.entries.get(dg)
    }

    /// Evicts every entry tagged `<= current_round - tau`.
    pub fn gc_rounds(&mut self, current_round: RoundId, tau: u64) -> usize {
        assert!(tau >= 2, "tau must be at least 2");
        let Some(cutoff) = current_round.0.checked_sub(tau) else {
            return 0;
        };
        let before = self.entries.len();
        let mut freed = 0;
        self.entries.retain(|_, e| {
            let keep = e.round_tag.0 > cutoff;
            if !keep {
                freed += e.bytes();
            }
            keep
        });
        self.stats.current_bytes -= freed;
        self.stats.entries = self.entries.len();
        before - self.entries.len()
    }

    pub fn stats(&self) -> PoolStats {
        self.stats
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(x: f64, d: usize) -> WeightVector {
        WeightVector::new(vec![x; d])
    }

    #[test]
    fn put_get_round_trip() {
        let mut pool = WeightPool::new();
        let v = WeightVector::new(vec![1.0, -2.0, 0.5]);
        let dg = pool.put(v.clone(), RoundId(1)).unwrap();
        assert_eq!(pool.get(&dg).unwrap(), &v);
    }

    #[test]
    fn put_is_idempotent() {
        let mut pool = WeightPool::new();
        let a = pool.put(w(1.0, 4), RoundId(1)).unwrap();
        let b = pool.put(w(1.0, 4), RoundId(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.stats().current_bytes, 32 + ENTRY_OVERHEAD_BYTES);
        assert_eq!(pool.entry(&a).unwrap().ref_count, 2);
    }

    #[test]
    fn bytes_scale_with_entries() {
        let (n, tau, d) = (6usize, 2u64, 10usize);
        let mut pool = WeightPool::new();
        for r in 0..tau {
            for i in 0..n {
                pool.put(w((r as usize * n + i) as f64, d), RoundId(r)).unwrap();
            }
        }
        let entries = n * tau as usize;
        assert_eq!(
            pool.stats().current_bytes,
            entries * 8 * d + entries * ENTRY_OVERHEAD_BYTES
        );
    }

    #[test]
    fn unknown_digest_not_found() {
        let pool = WeightPool::new();
        let dg = Digest::of_bytes(b"nothing");
        assert_eq!(pool.get(&dg), Err(PoolError::NotFound(dg)));
    }

    #[test]
    fn gc_evicts_old_rounds_only() {
        let mut pool = WeightPool::new();
        let digests: Vec<_> = (0..=5)
            .map(|r| pool.put(w(r as f64, 2), RoundId(r)).unwrap())
            .collect();
        let peak = pool.stats().peak_bytes;
        assert_eq!(pool.gc_rounds(RoundId(5), 2), 4);
        for (r, dg) in digests.iter().enumerate() {
            assert_eq!(pool.contains(dg), r > 3, "round {r}");
        }
        assert_eq!(pool.stats().peak_bytes, peak);
        assert!(pool.get(&digests[3]).is_err());
    }

    #[test]
    fn gc_before_tau_is_noop() {
        let mut pool = WeightPool::new();
        pool.put(w(0.0, 2), RoundId(0)).unwrap();
        assert_eq!(pool.gc_rounds(RoundId(1), 2), 0);
        assert_eq!(pool.len(), 1);
    }

    #[test]
    fn peak_independent_of_run_length() {
        let (n, tau, d) = (4usize, 2u64, 1000usize);
        let run = |rounds: u64| {
            let mut pool = WeightPool::new();
            for r in 0..rounds {
                for i in 0..n {
                    pool.put(w((r * 100 + i as u64) as f64, d), RoundId(r)).unwrap();
                }
                pool.gc_rounds(RoundId(r + 1), tau);
            }
            pool.stats().peak_bytes
        };
        let short = run(5);
        assert_eq!(short, run(50));
        assert!(short <= 8 * d * tau as usize * n + ENTRY_OVERHEAD_BYTES * tau as usize * n);
    }

    proptest! {
        #[test]
        fn content_addressing(values in prop::collection::vec(-1e6f64..1e6, 1..32), round in 0u64..100) {
            let mut pool = WeightPool::new();
            let v = WeightVector::new(values);
            let dg = pool.put(v.clone(), RoundId(round)).unwrap();
            prop_assert_eq!(pool.get(&dg).unwrap(), &v);
            prop_assert_eq!(dg, digest(&v).unwrap());
        }

        #[test]
        fn gc_keeps_recent_rounds(tags in prop::collection::vec(0u64..50, 1..40), current in 0u64..60, tau in 2u64..6) {
            let mut pool = WeightPool::new();
            let mut all = vec![];
            for (i, t) in tags.iter().enumerate() {
                all.push((pool.put(w(i as f64, 1), RoundId(*t)).unwrap(), *t));
            }
            pool.gc_rounds(RoundId(current), tau);
            for (dg, t) in all {
                if t + tau > current {
                    prop_assert!(pool.contains(&dg));
                } else {
                    prop_assert!(!pool.contains(&dg));
                }
            }
            prop_assert!(pool.stats().peak_bytes >= pool.stats().current_bytes);
        }
    }
}

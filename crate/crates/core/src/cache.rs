//! Byte-budgeted LRU pool of decompressed partitions, shared by every store.

use std::any::Any;
use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Identifies a partition across stores: (store id, partition id).
pub type CacheKey = (u64, u64);

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

/// Fresh id so partitions of different stores never collide in one cache.
pub fn next_store_id() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    /// Decompressed bytes produced by loads, whether admitted or not.
    pub bytes_decompressed: u64,
    pub resident_bytes: u64,
    pub peak_resident_bytes: u64,
}

struct Entry {
    value: Arc<dyn Any + Send + Sync>,
    bytes: u64,
    tick: u64,
}

#[derive(Default)]
struct Inner {
    entries: HashMap<CacheKey, Entry>,
    recency: BTreeMap<u64, CacheKey>,
    tick: u64,
    stats: CacheStats,
}

impl Inner {
    fn touch(&mut self, key: CacheKey) {
        self.tick += 1;
        let tick = self.tick;
        if let Some(e) = self.entries.get_mut(&key) {
            self.recency.remove(&e.tick);
            e.tick = tick;
            self.recency.insert(tick, key);
        }
    }

    fn evict_lru(&mut self) -> bool {
        let Some((_, key)) = self.recency.pop_first() else {
            return false;
        };
        if let Some(e) = self.entries.remove(&key) {
            self.stats.resident_bytes -= e.bytes;
            self.stats.evictions += 1;
        }
        true
    }
}

pub struct PartitionCache {
    budget: u64,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for PartitionCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PartitionCache")
            .field("budget", &self.budget)
            .field("stats", &self.stats())
            .finish()
    }
}

impl PartitionCache {
    pub fn new(byte_budget: u64) -> Self {
        Self {
            budget: byte_budget,
            inner: Mutex::new(Inner::default()),
        }
    }

    pub fn unbounded() -> Self {
        Self::new(u64::MAX)
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn stats(&self) -> CacheStats {
        self.lock().stats
    }

    pub fn resident_bytes(&self) -> u64 {
        self.lock().stats.resident_bytes
    }

    pub fn contains(&self, key: CacheKey) -> bool {
        self.lock().entries.contains_key(&key)
    }

    /// Drops every resident partition; counters are kept.
    pub fn clear(&self) {
        let mut g = self.lock();
        g.entries.clear();
        g.recency.clear();
        g.stats.resident_bytes = 0;
    }

    pub fn reset_stats(&self) {
        let mut g = self.lock();
        let resident = g.stats.resident_bytes;
        g.stats = CacheStats {
            resident_bytes: resident,
            peak_resident_bytes: resident,
            ..CacheStats::default()
        };
    }

    /// Returns the resident partition or runs `load`, which yields the value
    /// and its decompressed byte size. A value larger than the whole budget
    /// is returned without being admitted. The loader runs without the lock
    /// held, so concurrent misses on one key may both load.
    pub fn get_or_load<V, F>(&self, key: CacheKey, load: F) -> Result<Arc<V>>
    where
        V: Any + Send + Sync,
        F: FnOnce() -> Result<(V, u64)>,
    {
        {
            let mut g = self.lock();
            let hit = g.entries.get(&key).map(|e| Arc::clone(&e.value));
            if let Some(v) = hit {
                if let Ok(v) = v.downcast::<V>() {
                    g.stats.hits += 1;
                    g.touch(key);
                    return Ok(v);
                }
            }
            g.stats.misses += 1;
        }
        let (value, bytes) = load()?;
        let value = Arc::new(value);
        let mut g = self.lock();
        g.stats.bytes_decompressed += bytes;
        if bytes > self.budget {
            return Ok(value);
        }
        if let Some(old) = g.entries.remove(&key) {
            g.recency.remove(&old.tick);
            g.stats.resident_bytes -= old.bytes;
        }
        while g.stats.resident_bytes + bytes > self.budget && g.evict_lru() {}
        g.tick += 1;
        let tick = g.tick;
        let erased: Arc<dyn Any + Send + Sync> = value.clone();
        g.entries.insert(
            key,
            Entry {
                value: erased,
                bytes,
                tick,
            },
        );
        g.recency.insert(tick, key);
        g.stats.resident_bytes += bytes;
        g.stats.peak_resident_bytes = g.stats.peak_resident_bytes.max(g.stats.resident_bytes);
        debug_assert!(g.stats.resident_bytes <= self.budget);
        Ok(value)
    }

    /// Drops every partition belonging to `store`.
    pub fn evict_store(&self, store: u64) {
        let mut g = self.lock();
        let keys: Vec<CacheKey> = g.entries.keys().filter(|k| k.0 == store).copied().collect();
        for k in keys {
            if let Some(e) = g.entries.remove(&k) {
                g.recency.remove(&e.tick);
                g.stats.resident_bytes -= e.bytes;
            }
        }
    }
}

impl Default for PartitionCache {
    fn default() -> Self {
        Self::unbounded()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn load(n: u64) -> impl FnOnce() -> Result<(Vec<u8>, u64)> {
        move || Ok((vec![0u8; n as usize], n))
    }

    #[test]
    fn evicts_least_recently_used() {
        let c = PartitionCache::new(100);
        c.get_or_load((1, 1), load(40)).unwrap();
        c.get_or_load((1, 2), load(40)).unwrap();
        c.get_or_load((1, 1), load(40)).unwrap();
        c.get_or_load((1, 3), load(40)).unwrap();
        assert!(c.contains((1, 1)));
        assert!(!c.contains((1, 2)));
        assert!(c.contains((1, 3)));
        let s = c.stats();
        assert_eq!((s.hits, s.misses, s.evictions), (1, 3, 1));
        assert_eq!(s.bytes_decompressed, 120);
        assert_eq!(s.resident_bytes, 80);
    }

    #[test]
    fn oversized_value_is_served_but_not_admitted() {
        let c = PartitionCache::new(10);
        let v = c.get_or_load((1, 1), load(11)).unwrap();
        assert_eq!(v.len(), 11);
        assert_eq!(c.resident_bytes(), 0);
        assert_eq!(c.stats().bytes_decompressed, 11);
    }

    #[test]
    fn zero_budget_never_admits() {
        let c = PartitionCache::new(0);
        c.get_or_load((1, 1), load(1)).unwrap();
        c.get_or_load((1, 1), load(1)).unwrap();
        assert_eq!(c.stats().misses, 2);
    }

    #[test]
    fn clear_and_evict_store() {
        let c = PartitionCache::unbounded();
        c.get_or_load((1, 1), load(5)).unwrap();
        c.get_or_load((2, 1), load(5)).unwrap();
        c.evict_store(1);
        assert!(!c.contains((1, 1)));
        assert!(c.contains((2, 1)));
        c.clear();
        assert_eq!(c.resident_bytes(), 0);
    }

    proptest! {
        #[test]
        fn resident_never_exceeds_budget(budget in 0u64..500, ops in proptest::collection::vec((0u64..20, 1u64..200), 1..200)) {
            let c = PartitionCache::new(budget);
            for (id, size) in ops {
                c.get_or_load((0, id), load(size)).unwrap();
                let s = c.stats();
                prop_assert!(s.resident_bytes <= budget);
                prop_assert!(s.peak_resident_bytes <= budget);
            }
        }
    }
}

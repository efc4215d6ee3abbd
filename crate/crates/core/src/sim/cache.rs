//! Fully associative LRU caches with whole-vector entries.

use std::collections::{BTreeMap, HashMap};

pub type Tag = u64;

/// G-C tag of a canonical node pair.
pub fn pair_tag(pair: (u32, u32)) -> Tag {
    (pair.0 as u64) << 32 | pair.1 as u64
}

/// LRU cache holding variable-size entries up to `capacity_bytes`.
#[derive(Clone, Debug)]
pub struct CacheModel {
    capacity_bytes: usize,
    resident_bytes: usize,
    entries: HashMap<Tag, (u64, usize)>,
    recency: BTreeMap<u64, Tag>,
    clock: u64,
    hits: u64,
    misses: u64,
    fills: u64,
    trace: Option<Vec<(Tag, bool)>>,
}

impl CacheModel {
    pub fn new(capacity_bytes: usize) -> Self {
        Self {
            capacity_bytes,
            resident_bytes: 0,
            entries: HashMap::new(),
            recency: BTreeMap::new(),
            clock: 0,
            hits: 0,
            misses: 0,
            fills: 0,
            trace: None,
        }
    }

    /// Records every LRU decision as `(tag, hit)`.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn capacity_bytes(&self) -> usize {
        self.capacity_bytes
    }

    pub fn resident_bytes(&self) -> usize {
        self.resident_bytes
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn fills(&self) -> u64 {
        self.fills
    }

    pub fn trace(&self) -> Option<&[(Tag, bool)]> {
        self.trace.as_deref()
    }

    /// Drains the recorded trace, leaving recording enabled.
    pub fn take_trace(&mut self) -> Vec<(Tag, bool)> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn contains(&self, tag: Tag) -> bool {
        self.entries.contains_key(&tag)
    }

    /// Resident tags from least to most recently used.
    pub fn lru_order(&self) -> Vec<Tag> {
        self.recency.values().copied().collect()
    }

    /// Looks up `tag`, inserting it on a miss. Returns whether it hit.
    pub fn access(&mut self, tag: Tag, bytes: usize) -> bool {
        let hit = self.touch(tag, bytes);
        if hit {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
        hit
    }

    /// Writes `tag` into the cache; counted as a fill, not a lookup.
    pub fn fill(&mut self, tag: Tag, bytes: usize) {
        self.touch(tag, bytes);
        self.fills += 1;
    }

    /// Installs `tag` without counting or tracing it.
    pub fn preload(&mut self, tag: Tag, bytes: usize) {
        let trace = self.trace.take();
        self.touch(tag, bytes);
        self.trace = trace;
    }

    /// Drops all entries; counters are kept.
    pub fn invalidate_all(&mut self) {
        self.entries.clear();
        self.recency.clear();
        self.resident_bytes = 0;
    }

    fn touch(&mut self, tag: Tag, bytes: usize) -> bool {
        self.clock += 1;
        let hit = if let Some((stamp, _)) = self.entries.get_mut(&tag) {
            self.recency.remove(stamp);
            *stamp = self.clock;
            self.recency.insert(self.clock, tag);
            true
        } else {
            if bytes <= self.capacity_bytes {
                while self.resident_bytes + bytes > self.capacity_bytes {
                    let (_, victim) = self.recency.pop_first().expect("resident bytes without entries");
                    let (_, vbytes) = self.entries.remove(&victim).unwrap();
                    self.resident_bytes -= vbytes;
                }
                self.entries.insert(tag, (self.clock, bytes));
                self.recency.insert(self.clock, tag);
                self.resident_bytes += bytes;
            }
            false
        };
        if let Some(t) = &mut self.trace {
            t.push((tag, hit));
        }
        hit
    }
}

/// Textbook stack-based LRU: `true` marks a hit.
pub fn lru_reference_oracle(accesses: &[Tag], capacity: usize) -> Vec<bool> {
    assert!(capacity >= 1, "capacity must be at least one entry");
    let mut stack: Vec<Tag> = Vec::with_capacity(capacity);
    accesses
        .iter()
        .map(|&t| {
            let hit = match stack.iter().position(|&x| x == t) {
                Some(i) => {
                    stack.remove(i);
                    true
                }
                None => {
                    if stack.len() == capacity {
                        stack.pop();
                    }
                    false
                }
            };
            stack.insert(0, t);
            hit
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn oracle_small_cases() {
        assert_eq!(lru_reference_oracle(&[1, 1], 1), vec![false, true]);
        assert_eq!(lru_reference_oracle(&[1, 2, 1], 1), vec![false, false, false]);
        assert_eq!(lru_reference_oracle(&[1, 2, 1], 2), vec![false, false, true]);
    }

    #[test]
    fn evicts_least_recent() {
        let mut c = CacheModel::new(3 * 8);
        for t in [1, 2, 3] {
            assert!(!c.access(t, 8));
        }
        assert!(c.access(1, 8));
        assert!(!c.access(4, 8));
        assert!(!c.contains(2));
        assert_eq!(c.lru_order(), vec![3, 1, 4]);
        assert_eq!(c.resident_bytes(), 24);
        assert_eq!((c.hits(), c.misses()), (1, 4));
    }

    #[test]
    fn oversize_entry_is_never_resident() {
        let mut c = CacheModel::new(4);
        assert!(!c.access(1, 8));
        assert!(!c.access(1, 8));
        assert!(c.is_empty());
    }

    #[test]
    fn preload_and_fill_bypass_lookup_counters() {
        let mut c = CacheModel::new(64).with_trace();
        c.preload(7, 8);
        c.fill(9, 8);
        assert_eq!((c.hits(), c.misses(), c.fills()), (0, 0, 1));
        assert!(c.access(7, 8));
        assert_eq!(c.trace().unwrap(), &[(9, false), (7, true)]);
        c.invalidate_all();
        assert!(!c.contains(7));
        assert_eq!(c.resident_bytes(), 0);
    }

    proptest! {
        #[test]
        fn matches_oracle(seq in proptest::collection::vec(0u64..24, 0..400), cap in 1usize..12) {
            let mut c = CacheModel::new(cap * 16);
            let got: Vec<bool> = seq.iter().map(|&t| c.access(t, 16)).collect();
            prop_assert_eq!(got, lru_reference_oracle(&seq, cap));
            prop_assert!(c.resident_bytes() <= cap * 16);
        }
    }
}

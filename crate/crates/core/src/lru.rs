//! Set-associative container with true LRU replacement.
//!
//! Used for every tagged lookup structure in the model: data caches, TLBs,
//! the page walk cache, the VIT cache. Keys are plain `u64` tags; the set is
//! `key % sets`. Within a set entries are kept MRU-first.

#[derive(Debug, Clone)]
pub struct SetAssoc<V> {
    sets: Vec<Vec<(u64, V)>>,
    ways: usize,
}

impl<V> SetAssoc<V> {
    /// `entries` must be a non-zero multiple of `ways`.
    pub fn new(entries: usize, ways: usize) -> Self {
        assert!(ways > 0 && entries >= ways, "bad geometry {entries}/{ways}");
        assert_eq!(entries % ways, 0, "entries must be a multiple of ways");
        let nsets = entries / ways;
        Self {
            sets: (0..nsets).map(|_| Vec::with_capacity(ways)).collect(),
            ways,
        }
    }

    pub fn fully_associative(entries: usize) -> Self {
        Self::new(entries, entries)
    }

    pub fn sets(&self) -> usize {
        self.sets.len()
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    pub fn capacity(&self) -> usize {
        self.sets.len() * self.ways
    }

    pub fn len(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.iter().all(Vec::is_empty)
    }

    #[inline]
    fn set_of(&self, key: u64) -> usize {
        (key % self.sets.len() as u64) as usize
    }

    /// Looks up `key` and promotes it to MRU on a hit.
    pub fn lookup(&mut self, key: u64) -> Option<&mut V> {
        let set = self.set_of(key);
        let ways = &mut self.sets[set];
        let pos = ways.iter().position(|(k, _)| *k == key)?;
        if pos != 0 {
            let entry = ways.remove(pos);
            ways.insert(0, entry);
        }
        Some(&mut ways[0].1)
    }

    /// Looks up without touching replacement state.
    pub fn peek(&self, key: u64) -> Option<&V> {
        self.sets[self.set_of(key)]
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
    }

    pub fn peek_mut(&mut self, key: u64) -> Option<&mut V> {
        let set = self.set_of(key);
        self.sets[set]
            .iter_mut()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
    }

    pub fn contains(&self, key: u64) -> bool {
        self.peek(key).is_some()
    }

    /// Inserts at MRU. Replaces an existing entry with the same key, otherwise
    /// evicts the LRU way of a full set and returns it.
    pub fn insert(&mut self, key: u64, value: V) -> Option<(u64, V)> {
        let set = self.set_of(key);
        let ways = self.ways;
        let entries = &mut self.sets[set];
        if let Some(pos) = entries.iter().position(|(k, _)| *k == key) {
            entries.remove(pos);
            entries.insert(0, (key, value));
            return None;
        }
        let victim = if entries.len() == ways { entries.pop() } else { None };
        entries.insert(0, (key, value));
        victim
    }

    pub fn remove(&mut self, key: u64) -> Option<V> {
        let set = self.set_of(key);
        let entries = &mut self.sets[set];
        let pos = entries.iter().position(|(k, _)| *k == key)?;
        Some(entries.remove(pos).1)
    }

    /// Drops every entry for which `keep` returns false; returns how many
    /// were dropped.
    pub fn retain(&mut self, mut keep: impl FnMut(u64, &V) -> bool) -> usize {
        let mut dropped = 0;
        for set in &mut self.sets {
            let before = set.len();
            set.retain(|(k, v)| keep(*k, v));
            dropped += before - set.len();
        }
        dropped
    }

    pub fn clear(&mut self) {
        self.sets.iter_mut().for_each(Vec::clear);
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &V)> {
        self.sets.iter().flat_map(|s| s.iter().map(|(k, v)| (*k, v)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (u64, &mut V)> {
        self.sets
            .iter_mut()
            .flat_map(|s| s.iter_mut().map(|(k, v)| (*k, v)))
    }

    /// Keys of one set, MRU first.
    pub fn set_keys(&self, set: usize) -> impl Iterator<Item = u64> + '_ {
        self.sets[set].iter().map(|(k, _)| *k)
    }
}

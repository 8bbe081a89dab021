//! Radix page-table node bookkeeping and the page walk cache.
//!
//! Only the node layout is modelled here: which node addresses exist and which
//! entry addresses a walk reads. Leaf contents live with the owner of the
//! table. Levels are numbered from the leaf (1) up to the root (`levels`).

use std::collections::HashMap;

pub const FANOUT_BITS: u32 = 9;
pub const ENTRY_BYTES: u64 = 8;
pub const NODE_BYTES: u64 = (1 << FANOUT_BITS) * ENTRY_BYTES;

/// Bump allocator for translation metadata (table nodes, VIT lines). It
/// hands out addresses in a region disjoint from the frame pool.
#[derive(Debug, Clone)]
pub struct MetaArena {
    base: u64,
    next: u64,
}

impl MetaArena {
    pub fn new(base: u64) -> Self {
        MetaArena { base, next: base }
    }

    pub fn alloc(&mut self, bytes: u64, align: u64) -> u64 {
        let at = self.next.next_multiple_of(align.max(1));
        self.next = at + bytes;
        at
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn used(&self) -> u64 {
        self.next - self.base
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PwcKey {
    pub table: u64,
    pub level: u8,
    pub prefix: u64,
}

/// Fully-associative LRU cache of non-leaf walk entries. A hit on the
/// level-`l` entry yields the level-`l-1` node and skips the levels above.
#[derive(Debug, Clone)]
pub struct PageWalkCache {
    capacity: usize,
    /// MRU first.
    entries: Vec<(PwcKey, u64)>,
    pub hits: u64,
    pub misses: u64,
}

impl PageWalkCache {
    pub fn new(capacity: usize) -> Self {
        PageWalkCache {
            capacity,
            entries: Vec::with_capacity(capacity),
            hits: 0,
            misses: 0,
        }
    }

    fn probe(&mut self, key: &PwcKey) -> Option<u64> {
        let pos = self.entries.iter().position(|(k, _)| k == key)?;
        let e = self.entries.remove(pos);
        self.entries.insert(0, e);
        Some(e.1)
    }

    pub fn insert(&mut self, key: PwcKey, node: u64) {
        if let Some(pos) = self.entries.iter().position(|(k, _)| *k == key) {
            self.entries.remove(pos);
        } else if self.entries.len() == self.capacity {
            self.entries.pop();
        }
        if self.capacity > 0 {
            self.entries.insert(0, (key, node));
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&PwcKey) -> bool) {
        self.entries.retain(|(k, _)| keep(k));
    }

    pub fn flush(&mut self) {
        self.entries.clear();
    }
}

/// Result of walking a radix table for one address.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WalkPath {
    /// Entry addresses read, root side first.
    pub reads: Vec<u64>,
    /// Whether the walk reached a leaf entry.
    pub complete: bool,
    /// Non-leaf entries learned by this walk, to be inserted into the PWC
    /// once the whole translation finishes.
    pub fills: Vec<(PwcKey, u64)>,
}

#[derive(Debug, Clone)]
pub struct RadixTable {
    root: u64,
    levels: u8,
    leaf_shift: u32,
    /// (level, prefix) -> node address, for levels below the root.
    nodes: HashMap<(u8, u64), u64>,
}

impl RadixTable {
    pub fn new(root: u64, levels: u8, leaf_shift: u32) -> Self {
        assert!(levels >= 1);
        RadixTable {
            root,
            levels,
            leaf_shift,
            nodes: HashMap::new(),
        }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn levels(&self) -> u8 {
        self.levels
    }

    pub fn leaf_shift(&self) -> u32 {
        self.leaf_shift
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len() + 1
    }

    /// Prefix selecting the level-`level` node that covers `addr`.
    fn node_prefix(&self, addr: u64, level: u8) -> u64 {
        let shift = self.leaf_shift + FANOUT_BITS * level as u32;
        if shift >= 64 { 0 } else { addr >> shift }
    }

    fn entry_index(&self, addr: u64, level: u8) -> u64 {
        (addr >> (self.leaf_shift + FANOUT_BITS * (level as u32 - 1))) & ((1 << FANOUT_BITS) - 1)
    }

    fn node(&self, addr: u64, level: u8) -> Option<u64> {
        if level == self.levels {
            Some(self.root)
        } else {
            self.nodes.get(&(level, self.node_prefix(addr, level))).copied()
        }
    }

    /// Creates any missing nodes on the path to `addr`'s leaf entry. Returns
    /// the addresses of newly created nodes.
    pub fn ensure_path(&mut self, addr: u64, mut alloc_node: impl FnMut() -> u64) -> Vec<u64> {
        let mut created = Vec::new();
        for level in (1..self.levels).rev() {
            let key = (level, self.node_prefix(addr, level));
            if let std::collections::hash_map::Entry::Vacant(e) = self.nodes.entry(key) {
                let n = alloc_node();
                e.insert(n);
                created.push(n);
            }
        }
        created
    }

    pub fn has_path(&self, addr: u64) -> bool {
        self.node(addr, 1).is_some()
    }

    /// Address of the leaf entry for `addr`, if its node exists.
    pub fn leaf_entry(&self, addr: u64) -> Option<u64> {
        self.node(addr, 1)
            .map(|n| n + self.entry_index(addr, 1) * ENTRY_BYTES)
    }

    /// Walks toward `addr`'s leaf entry. PWC lookups use only entries present
    /// before this call; newly learned entries are returned in `fills`.
    pub fn walk(&self, addr: u64, pwc: Option<&mut PageWalkCache>) -> WalkPath {
        let mut path = WalkPath::default();
        let mut level = self.levels;
        let mut node = self.root;
        if let Some(pwc) = pwc {
            let mut hit = None;
            for l in 2..=self.levels {
                let key = PwcKey {
                    table: self.root,
                    level: l,
                    prefix: self.node_prefix(addr, l - 1),
                };
                if let Some(n) = pwc.probe(&key) {
                    hit = Some((l - 1, n));
                    break;
                }
            }
            match hit {
                Some((l, n)) => {
                    pwc.hits += 1;
                    level = l;
                    node = n;
                }
                None if self.levels > 1 => pwc.misses += 1,
                None => {}
            }
        }
        loop {
            path.reads.push(node + self.entry_index(addr, level) * ENTRY_BYTES);
            if level == 1 {
                path.complete = true;
                return path;
            }
            let Some(next) = self.node(addr, level - 1) else {
                return path;
            };
            path.fills.push((
                PwcKey {
                    table: self.root,
                    level,
                    prefix: self.node_prefix(addr, level - 1),
                },
                next,
            ));
            node = next;
            level -= 1;
        }
    }
}

/// Levels needed to map `offset_bits` worth of 4 KB pages with 9-bit fanout.
pub fn depth_for(offset_bits: u32) -> u8 {
    offset_bits.saturating_sub(12).div_ceil(FANOUT_BITS).max(1) as u8
}

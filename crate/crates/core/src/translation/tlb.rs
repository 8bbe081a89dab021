use crate::lru::SetAssoc;

/// A single TLB structure with hit/miss counters.
#[derive(Debug, Clone)]
pub struct Tlb<V> {
    entries: SetAssoc<V>,
    pub hits: u64,
    pub misses: u64,
}

impl<V: Clone> Tlb<V> {
    pub fn new(entries: usize, ways: usize) -> Self {
        Tlb {
            entries: SetAssoc::new(entries, ways),
            hits: 0,
            misses: 0,
        }
    }

    pub fn fully_associative(entries: usize) -> Self {
        Self::new(entries, entries)
    }

    pub fn lookup(&mut self, key: u64) -> Option<V> {
        match self.entries.lookup(key) {
            Some(v) => {
                self.hits += 1;
                Some(v.clone())
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    pub fn insert(&mut self, key: u64, value: V) {
        self.entries.insert(key, value);
    }

    pub fn invalidate(&mut self, key: u64) -> bool {
        self.entries.remove(key).is_some()
    }

    pub fn retain(&mut self, keep: impl FnMut(u64, &V) -> bool) -> usize {
        self.entries.retain(keep)
    }

    pub fn contains(&self, key: u64) -> bool {
        self.entries.contains(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn flush(&mut self) {
        self.entries.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TlbGeometry {
    pub l1_4k_entries: usize,
    pub l1_2m_entries: usize,
    pub l2_entries: usize,
    pub l2_ways: usize,
}

impl Default for TlbGeometry {
    fn default() -> Self {
        TlbGeometry {
            l1_4k_entries: 64,
            l1_2m_entries: 32,
            l2_entries: 512,
            l2_ways: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PageSize {
    Small,
    Large,
}

impl PageSize {
    pub fn shift(self) -> u32 {
        match self {
            PageSize::Small => 12,
            PageSize::Large => 21,
        }
    }
}

/// Which structure served a lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlbLevel {
    L1,
    L2,
    Miss,
}

/// Split L1 (4 KB / 2 MB) plus unified L2 page TLBs. Values are the
/// physical base of the page plus a caller-defined tag bit.
#[derive(Debug, Clone)]
pub struct TlbHierarchy {
    pub l1_4k: Tlb<(u64, bool)>,
    pub l1_2m: Tlb<(u64, bool)>,
    pub l2: Tlb<(u64, bool)>,
}

fn l2_key(page: u64, size: PageSize) -> u64 {
    (page << 1) | matches!(size, PageSize::Large) as u64
}

impl TlbHierarchy {
    pub fn new(geometry: TlbGeometry) -> Self {
        TlbHierarchy {
            l1_4k: Tlb::fully_associative(geometry.l1_4k_entries),
            l1_2m: Tlb::fully_associative(geometry.l1_2m_entries),
            l2: Tlb::new(geometry.l2_entries, geometry.l2_ways),
        }
    }

    fn l1(&mut self, size: PageSize) -> &mut Tlb<(u64, bool)> {
        match size {
            PageSize::Small => &mut self.l1_4k,
            PageSize::Large => &mut self.l1_2m,
        }
    }

    /// Looks `addr` up as a page of `size`. An L2 hit refills the L1.
    pub fn lookup(&mut self, addr: u64, size: PageSize) -> (TlbLevel, Option<(u64, bool)>) {
        let page = addr >> size.shift();
        if let Some(v) = self.l1(size).lookup(page) {
            return (TlbLevel::L1, Some(v));
        }
        if let Some(v) = self.l2.lookup(l2_key(page, size)) {
            self.l1(size).insert(page, v);
            return (TlbLevel::L2, Some(v));
        }
        (TlbLevel::Miss, None)
    }

    pub fn insert(&mut self, addr: u64, size: PageSize, value: (u64, bool)) {
        let page = addr >> size.shift();
        self.l1(size).insert(page, value);
        self.l2.insert(l2_key(page, size), value);
    }

    pub fn invalidate(&mut self, addr: u64, size: PageSize) {
        let page = addr >> size.shift();
        self.l1(size).invalidate(page);
        self.l2.invalidate(l2_key(page, size));
    }

    /// Drops every small-page entry whose page number satisfies `pred`.
    pub fn invalidate_small_pages(&mut self, mut pred: impl FnMut(u64) -> bool) {
        self.l1_4k.retain(|p, _| !pred(p));
        self.l2.retain(|k, _| k & 1 == 1 || !pred(k >> 1));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_then_lookup_hits() {
        let mut t = TlbHierarchy::new(TlbGeometry::default());
        assert_eq!(t.lookup(0x5000, PageSize::Small).0, TlbLevel::Miss);
        t.insert(0x5000, PageSize::Small, (0x9000, false));
        assert_eq!(t.lookup(0x5abc, PageSize::Small), (TlbLevel::L1, Some((0x9000, false))));
    }

    #[test]
    fn sixty_five_pages_round_robin_always_miss_l1() {
        let mut t = Tlb::<()>::fully_associative(64);
        for round in 0..4 {
            for p in 0..65u64 {
                if t.lookup(p).is_none() {
                    t.insert(p, ());
                }
            }
            if round == 0 {
                assert_eq!(t.misses, 65);
            }
        }
        assert_eq!(t.hits, 0);
        assert_eq!(t.misses, 4 * 65);
    }

    #[test]
    fn l2_backs_up_l1() {
        let mut t = TlbHierarchy::new(TlbGeometry::default());
        for p in 0..100u64 {
            t.insert(p << 12, PageSize::Small, (p, false));
        }
        // page 0 fell out of the 64-entry L1 but is still in L2
        assert_eq!(t.lookup(0, PageSize::Small).0, TlbLevel::L2);
        assert_eq!(t.lookup(0, PageSize::Small).0, TlbLevel::L1);
    }

    #[test]
    fn page_sizes_do_not_alias_in_l2() {
        let mut t = TlbHierarchy::new(TlbGeometry::default());
        t.insert(0, PageSize::Large, (0x20_0000, false));
        assert_eq!(t.lookup(0, PageSize::Small).0, TlbLevel::Miss);
    }
}

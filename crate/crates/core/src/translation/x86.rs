//! x86-64-style baseline MMU: 4-level radix tables for 4 KB pages, 3-level
//! for 2 MB pages, and nested (guest over host) 2D walks.

use std::collections::HashMap;

use crate::error::OutOfMemory;
use crate::physmem::FramePool;

use super::radix::{MetaArena, NODE_BYTES, PageWalkCache, RadixTable};
use super::tlb::{PageSize, TlbGeometry, TlbHierarchy, TlbLevel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum X86Mode {
    Native4k,
    Native2m,
    Nested4k,
    Nested2m,
}

impl X86Mode {
    pub fn page_size(self) -> PageSize {
        match self {
            X86Mode::Native4k | X86Mode::Nested4k => PageSize::Small,
            X86Mode::Native2m | X86Mode::Nested2m => PageSize::Large,
        }
    }

    pub fn levels(self) -> u8 {
        match self.page_size() {
            PageSize::Small => 4,
            PageSize::Large => 3,
        }
    }

    pub fn nested(self) -> bool {
        matches!(self, X86Mode::Nested4k | X86Mode::Nested2m)
    }
}

/// Guest-physical addresses at or above this hold guest page-table nodes;
/// guest data pages are handed out from zero upward.
const GUEST_NODE_REGION: u64 = 1 << 46;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct X86Translation {
    pub pa: u64,
    pub tlb: TlbLevel,
    /// Machine addresses of every table entry the walk read.
    pub walk: Vec<u64>,
    /// The address was unmapped and a page was allocated on demand.
    pub faulted: bool,
}

#[derive(Debug, Clone)]
pub struct X86Mmu {
    mode: X86Mode,
    perfect: bool,
    pub tlbs: TlbHierarchy,
    pub pwc: PageWalkCache,
    pool: FramePool,
    arena: MetaArena,
    /// Process table: VA -> machine (native) or guest-physical (nested).
    guest: RadixTable,
    guest_map: HashMap<u64, u64>,
    /// Nested only: guest-physical -> machine.
    host: Option<RadixTable>,
    host_map: HashMap<u64, u64>,
    gpa_data_next: u64,
    gpa_node_next: u64,
    pub faults: u64,
    pub walks: u64,
}

impl X86Mmu {
    /// `pool` backs data pages; table nodes come from `arena`.
    pub fn new(
        mode: X86Mode,
        geometry: TlbGeometry,
        pwc_entries: usize,
        pool: FramePool,
        mut arena: MetaArena,
    ) -> Self {
        let page = mode.page_size();
        let levels = mode.levels();
        let (guest_root, host) = if mode.nested() {
            let host_root = arena.alloc(NODE_BYTES, NODE_BYTES);
            (GUEST_NODE_REGION, Some(RadixTable::new(host_root, levels, page.shift())))
        } else {
            (arena.alloc(NODE_BYTES, NODE_BYTES), None)
        };
        let mut mmu = X86Mmu {
            mode,
            perfect: false,
            tlbs: TlbHierarchy::new(geometry),
            pwc: PageWalkCache::new(pwc_entries),
            pool,
            arena,
            guest: RadixTable::new(guest_root, levels, page.shift()),
            guest_map: HashMap::new(),
            host,
            host_map: HashMap::new(),
            gpa_data_next: 0,
            gpa_node_next: GUEST_NODE_REGION + NODE_BYTES,
            faults: 0,
            walks: 0,
        };
        if mode.nested() {
            mmu.host_ensure(guest_root).expect("node pages never exhaust the pool");
        }
        mmu
    }

    /// Every lookup hits: translation is resolved functionally and costs
    /// nothing beyond first-touch faults.
    pub fn set_perfect(&mut self, perfect: bool) {
        self.perfect = perfect;
    }

    pub fn mode(&self) -> X86Mode {
        self.mode
    }

    pub fn pool(&self) -> &FramePool {
        &self.pool
    }

    pub fn mapped_pages(&self) -> usize {
        self.guest_map.len()
    }

    fn page_mask(&self) -> u64 {
        (1 << self.mode.page_size().shift()) - 1
    }

    fn page_order(&self) -> u8 {
        (self.mode.page_size().shift() - 12) as u8
    }

    /// Maps the host granule holding `gpa`, if not yet mapped.
    fn host_ensure(&mut self, gpa: u64) -> Result<(), OutOfMemory> {
        let shift = self.mode.page_size().shift();
        let granule = gpa >> shift;
        if self.host_map.contains_key(&granule) {
            return Ok(());
        }
        let machine = if gpa >= GUEST_NODE_REGION {
            self.arena.alloc(1 << shift, 1 << shift)
        } else {
            self.pool.alloc(self.page_order(), None).ok_or(OutOfMemory)?.address()
        };
        self.host_map.insert(granule, machine);
        let arena = &mut self.arena;
        self.host
            .as_mut()
            .expect("nested mode")
            .ensure_path(gpa, || arena.alloc(NODE_BYTES, NODE_BYTES));
        Ok(())
    }

    fn host_translate(&self, gpa: u64) -> u64 {
        let shift = self.mode.page_size().shift();
        self.host_map[&(gpa >> shift)] + (gpa & ((1 << shift) - 1))
    }

    fn fault(&mut self, va: u64) -> Result<(), OutOfMemory> {
        let page = va >> self.mode.page_size().shift();
        self.faults += 1;
        if !self.mode.nested() {
            let frame = self.pool.alloc(self.page_order(), None).ok_or(OutOfMemory)?;
            self.guest_map.insert(page, frame.address());
            let arena = &mut self.arena;
            self.guest.ensure_path(va, || arena.alloc(NODE_BYTES, NODE_BYTES));
            return Ok(());
        }
        let bytes = 1 << self.mode.page_size().shift();
        let gpa = self.gpa_data_next;
        self.gpa_data_next += bytes;
        self.host_ensure(gpa)?;
        self.guest_map.insert(page, gpa);
        let next = &mut self.gpa_node_next;
        let created = self.guest.ensure_path(va, || {
            let n = *next;
            *next += NODE_BYTES;
            n
        });
        for node in created {
            self.host_ensure(node)?;
        }
        Ok(())
    }

    fn page_base(&self, va: u64) -> Option<u64> {
        let base = *self.guest_map.get(&(va >> self.mode.page_size().shift()))?;
        Some(if self.mode.nested() {
            self.host_translate(base)
        } else {
            base
        })
    }

    /// Full table walk for a mapped `va`; PWC fills are applied at the end.
    fn walk(&mut self, va: u64) -> Vec<u64> {
        self.walks += 1;
        let guest = self.guest.walk(va, Some(&mut self.pwc));
        debug_assert!(guest.complete);
        let mut fills = guest.fills;
        let Some(host) = &self.host else {
            for (k, n) in fills {
                self.pwc.insert(k, n);
            }
            return guest.reads;
        };
        let mut reads = Vec::with_capacity(24);
        let data_gpa = self.guest_map[&(va >> self.mode.page_size().shift())];
        for gpa in guest.reads.iter().copied().chain(std::iter::once(data_gpa)) {
            let h = host.walk(gpa, Some(&mut self.pwc));
            debug_assert!(h.complete);
            reads.extend(h.reads);
            fills.extend(h.fills);
            if gpa != data_gpa {
                reads.push(self.host_translate(gpa));
            }
        }
        for (k, n) in fills {
            self.pwc.insert(k, n);
        }
        reads
    }

    pub fn translate(&mut self, va: u64) -> Result<X86Translation, OutOfMemory> {
        let size = self.mode.page_size();
        let offset = va & self.page_mask();
        if !self.perfect
            && let (level, Some((base, _))) = self.tlbs.lookup(va, size) {
                return Ok(X86Translation {
                    pa: base + offset,
                    tlb: level,
                    walk: Vec::new(),
                    faulted: false,
                });
            }
        let faulted = if self.page_base(va).is_none() {
            self.fault(va)?;
            true
        } else {
            false
        };
        let base = self.page_base(va).expect("mapped after fault");
        if self.perfect {
            return Ok(X86Translation {
                pa: base + offset,
                tlb: TlbLevel::L1,
                walk: Vec::new(),
                faulted,
            });
        }
        let walk = self.walk(va);
        self.tlbs.insert(va, size, (base, false));
        Ok(X86Translation {
            pa: base + offset,
            tlb: TlbLevel::Miss,
            walk,
            faulted,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physmem::FrameId;

    fn mmu(mode: X86Mode) -> X86Mmu {
        let frames = 1 << 15;
        X86Mmu::new(
            mode,
            TlbGeometry::default(),
            32,
            FramePool::new(FrameId(0), frames),
            MetaArena::new(frames << 12),
        )
    }

    #[test]
    fn cold_walk_counts() {
        for (mode, expect) in [
            (X86Mode::Native4k, 4),
            (X86Mode::Native2m, 3),
            (X86Mode::Nested4k, 24),
            (X86Mode::Nested2m, 15),
        ] {
            let mut m = mmu(mode);
            let t = m.translate(0x1234_5678).unwrap();
            assert!(t.faulted);
            assert_eq!(t.walk.len(), expect, "{mode:?}");
            let again = m.translate(0x1234_5000).unwrap();
            assert_eq!(again.tlb, TlbLevel::L1);
            assert_eq!(again.pa & !0xfff, t.pa & !0xfff);
        }
    }

    #[test]
    fn pwc_shortens_neighbouring_walks() {
        let mut m = mmu(X86Mode::Native4k);
        m.translate(0x40_0000).unwrap();
        let t = m.translate(0x40_1000).unwrap();
        assert!(t.faulted);
        assert_eq!(t.walk.len(), 1);
    }

    #[test]
    fn distinct_pages_get_distinct_frames() {
        let mut m = mmu(X86Mode::Nested4k);
        let a = m.translate(0x10000).unwrap().pa;
        let b = m.translate(0x11000).unwrap().pa;
        assert_ne!(a >> 12, b >> 12);
        assert_eq!(m.faults, 2);
    }

    #[test]
    fn perfect_mode_never_walks() {
        let mut m = mmu(X86Mode::Native4k);
        m.set_perfect(true);
        let t = m.translate(0x5000).unwrap();
        assert!(t.walk.is_empty() && t.faulted);
        assert_eq!(m.tlbs.l1_4k.misses, 0);
    }
}

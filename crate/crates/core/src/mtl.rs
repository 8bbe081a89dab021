//! Memory translation layer: per-VB translation structures, VBI TLBs,
//! delayed allocation, early reservation, copy-on-write, swapping and
//! heterogeneous placement.

use std::collections::{BTreeMap, BTreeSet};

use crate::address::{AddressingMode, PAGE_BYTES, PAGE_SHIFT, SizeClass, VbiAddress, Vbuid};
use crate::error::{LifecycleError, MtlError, OutOfMemory};
use crate::hotness::{HotnessTracker, PlacementPolicy, Unit, select_hot};
use crate::physmem::{FrameId, PhysicalMemory, Priority};
use crate::protection::{ClientId, ProtectionUnit};
use crate::registry::{StructureKind, VbRegistry, check_promotion};
use crate::translation::radix::{ENTRY_BYTES, NODE_BYTES};
use crate::translation::{
    MetaArena, PageSize, PageWalkCache, RadixTable, Tlb, TlbGeometry, TlbHierarchy, TlbLevel,
    depth_for,
};

const VIT_REGION_BYTES: u64 = 8 << 20;

/// Translation structure the MTL picks for a VB of `class`.
pub fn choose_structure(class: SizeClass, early_reserved: bool) -> StructureKind {
    if early_reserved || class == SizeClass::KB4 {
        StructureKind::Direct
    } else if class <= SizeClass::MB4 {
        StructureKind::SingleLevel
    } else {
        StructureKind::MultiLevel
    }
}

/// Structure accesses a cold walk performs for a VB of `class`.
pub fn cold_walk_depth(kind: StructureKind, class: SizeClass) -> usize {
    match kind {
        StructureKind::Direct => 0,
        StructureKind::SingleLevel => 1,
        StructureKind::MultiLevel => depth_for(class.offset_bits()) as usize,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MtlConfig {
    pub tlb: TlbGeometry,
    pub vb_direct_entries: usize,
    pub pwc_entries: usize,
    pub early_reservation: bool,
    pub placement: Option<PlacementPolicy>,
    /// Fast-region frames kept free for latency-sensitive VBs at first
    /// placement under the aware policy.
    pub ls_headroom_frames: u64,
}

impl Default for MtlConfig {
    fn default() -> Self {
        MtlConfig {
            tlb: TlbGeometry::default(),
            vb_direct_entries: 32,
            pwc_entries: 32,
            early_reservation: false,
            placement: None,
            ls_headroom_frames: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MtlStats {
    pub translate_calls: u64,
    pub walks: u64,
    pub walk_accesses: u64,
    pub vit_misses: u64,
    pub frames_allocated: u64,
    pub reservations: u64,
    pub direct_cleared: u64,
    pub cow_copies: u64,
    pub swap_in: u64,
    pub swap_out: u64,
    pub zero_line_reads: u64,
    pub migrations: u64,
    pub migration_units: u64,
    /// Frames served by each priority class (own, unreserved, foreign).
    pub priority: [u64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PageState {
    Allocated(FrameId),
    SwappedOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageEntry {
    pub state: PageState,
    pub cow: bool,
    /// Allocation order stamp; the swap victim is the oldest.
    seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReservedChunk {
    pub vb_page: u64,
    pub frame: FrameId,
    pub order: u8,
}

impl ReservedChunk {
    fn covers(&self, page: u64) -> bool {
        page >= self.vb_page && page < self.vb_page + (1 << self.order)
    }
}

#[derive(Debug, Clone)]
struct VbState {
    kind: StructureKind,
    /// Direct: base address; single-level: table base; multi-level: root.
    root: u64,
    table: Option<RadixTable>,
    pages: BTreeMap<u64, PageEntry>,
    chunks: Vec<ReservedChunk>,
    reserve_attempted: bool,
    directly_mapped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Mapped { pa: u64, cow: bool },
    Unbacked,
    SwappedOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Served {
    VbDirect,
    PageTlb(TlbLevel),
    Walk,
    /// The VB has no translation structure yet.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VbiTranslation {
    pub outcome: Outcome,
    pub served: Served,
    /// Metadata line fetched on a VIT-cache miss.
    pub vit_access: Option<u64>,
    /// Structure entry addresses read by the walk.
    pub walk: Vec<u64>,
}

/// A page that moved between frames; the device is charged one read of
/// `from` and one write of `to` per 4 KB.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageCopy {
    pub from: FrameId,
    pub to: FrameId,
}

/// What the MTL did to make a page writable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteBacking {
    pub frame: FrameId,
    pub allocated: bool,
    pub swapped_in: bool,
    pub copy: Option<PageCopy>,
}

#[derive(Debug, Clone)]
pub struct Mtl {
    mode: AddressingMode,
    config: MtlConfig,
    pub mem: PhysicalMemory,
    vbs: BTreeMap<Vbuid, VbState>,
    pub tlbs: TlbHierarchy,
    pub vb_tlb: Tlb<()>,
    pub pwc: PageWalkCache,
    arena: MetaArena,
    vit_base: u64,
    seq: u64,
    rr_next: usize,
    pub hotness: HotnessTracker,
    homes: BTreeMap<Unit, usize>,
    ideal_hot: BTreeSet<Unit>,
    remapped: Vec<(Vbuid, u64)>,
    pub stats: MtlStats,
}

impl Mtl {
    pub fn new(mode: AddressingMode, config: MtlConfig, mem: PhysicalMemory) -> Self {
        let mut arena = MetaArena::new(mem.end_frame().address());
        let vit_base = arena.alloc(VIT_REGION_BYTES, PAGE_BYTES);
        Mtl {
            mode,
            config,
            mem,
            vbs: BTreeMap::new(),
            tlbs: TlbHierarchy::new(config.tlb),
            vb_tlb: Tlb::fully_associative(config.vb_direct_entries),
            pwc: PageWalkCache::new(config.pwc_entries),
            arena,
            vit_base,
            seq: 0,
            rr_next: 0,
            hotness: HotnessTracker::default(),
            homes: BTreeMap::new(),
            ideal_hot: BTreeSet::new(),
            remapped: Vec::new(),
            stats: MtlStats::default(),
        }
    }

    pub fn config(&self) -> &MtlConfig {
        &self.config
    }

    pub fn mode(&self) -> AddressingMode {
        self.mode
    }

    /// Start of the metadata region (VIT lines and table nodes).
    pub fn metadata_base(&self) -> u64 {
        self.arena.base()
    }

    pub fn set_ideal_hot(&mut self, units: BTreeSet<Unit>) {
        self.ideal_hot = units;
    }

    fn vit_address(&self, vbuid: Vbuid) -> u64 {
        let line = ((vbuid.class.id() as u64) << 16 | (vbuid.vbid & 0xffff)) ^ ((vbuid.vm_id as u64) << 12);
        self.vit_base + (line * 16) % VIT_REGION_BYTES
    }

    fn vb_base(&self, vbuid: Vbuid) -> u64 {
        vbuid.address(0, self.mode).expect("valid VB").raw()
    }

    fn page_address(&self, vbuid: Vbuid, page: u64) -> u64 {
        self.vb_base(vbuid) + (page << PAGE_SHIFT)
    }

    // ---- queries ------------------------------------------------------

    pub fn page(&self, vbuid: Vbuid, page: u64) -> Option<PageEntry> {
        self.vbs.get(&vbuid)?.pages.get(&page).copied()
    }

    pub fn frame_of(&self, vbuid: Vbuid, page: u64) -> Option<FrameId> {
        match self.page(vbuid, page)?.state {
            PageState::Allocated(f) => Some(f),
            PageState::SwappedOut => None,
        }
    }

    /// Allocated (page, frame) pairs of a VB in page order.
    pub fn frames(&self, vbuid: Vbuid) -> Vec<(u64, FrameId)> {
        self.vbs.get(&vbuid).map_or_else(Vec::new, |s| {
            s.pages
                .iter()
                .filter_map(|(&p, e)| match e.state {
                    PageState::Allocated(f) => Some((p, f)),
                    PageState::SwappedOut => None,
                })
                .collect()
        })
    }

    pub fn structure(&self, vbuid: Vbuid) -> Option<StructureKind> {
        self.vbs.get(&vbuid).map(|s| s.kind)
    }

    pub fn directly_mapped(&self, vbuid: Vbuid) -> bool {
        self.vbs.get(&vbuid).is_some_and(|s| s.directly_mapped)
    }

    pub fn reservation(&self, vbuid: Vbuid) -> Vec<ReservedChunk> {
        self.vbs.get(&vbuid).map_or_else(Vec::new, |s| s.chunks.clone())
    }

    pub fn structure_nodes(&self, vbuid: Vbuid) -> usize {
        self.vbs
            .get(&vbuid)
            .and_then(|s| s.table.as_ref())
            .map_or(0, |t| t.node_count())
    }

    /// Pages whose backing frame changed since the last call.
    pub fn take_remapped(&mut self) -> Vec<(Vbuid, u64)> {
        std::mem::take(&mut self.remapped)
    }

    pub fn note_zero_line(&mut self) {
        self.stats.zero_line_reads += 1;
    }

    pub fn record_access(&mut self, vbuid: Vbuid, page: u64) {
        if self.config.placement == Some(PlacementPolicy::Aware) {
            self.hotness.record(Unit::of(vbuid, page));
        }
    }

    // ---- translation --------------------------------------------------

    /// VIT lookup, then VB-direct TLB or page TLBs, then a structure walk.
    pub fn translate(
        &mut self,
        registry: &mut VbRegistry,
        addr: VbiAddress,
    ) -> Result<VbiTranslation, MtlError> {
        self.stats.translate_calls += 1;
        let vbuid = addr.vbuid(self.mode);
        if !registry.is_enabled(vbuid) {
            return Err(MtlError::Disabled(vbuid));
        }
        let vit_access = if registry.cache.access(vbuid) {
            None
        } else {
            self.stats.vit_misses += 1;
            Some(self.vit_address(vbuid))
        };
        let offset = addr.offset();
        let page = offset >> PAGE_SHIFT;
        let Some(st) = self.vbs.get(&vbuid) else {
            return Ok(VbiTranslation {
                outcome: Outcome::Unbacked,
                served: Served::Empty,
                vit_access,
                walk: Vec::new(),
            });
        };
        let outcome = match st.pages.get(&page) {
            Some(PageEntry {
                state: PageState::Allocated(f),
                cow,
                ..
            }) => Outcome::Mapped {
                pa: f.address() + (offset & (PAGE_BYTES - 1)),
                cow: *cow,
            },
            Some(_) => Outcome::SwappedOut,
            None => Outcome::Unbacked,
        };
        if st.kind == StructureKind::Direct {
            if self.vb_tlb.lookup(vbuid.key()).is_none() {
                self.vb_tlb.insert(vbuid.key(), ());
            }
            return Ok(VbiTranslation {
                outcome,
                served: Served::VbDirect,
                vit_access,
                walk: Vec::new(),
            });
        }
        if let (level, Some(_)) = self.tlbs.lookup(addr.raw(), PageSize::Small) {
            return Ok(VbiTranslation {
                outcome,
                served: Served::PageTlb(level),
                vit_access,
                walk: Vec::new(),
            });
        }
        let walk = match &st.table {
            None => vec![st.root + page * ENTRY_BYTES],
            Some(table) => {
                let path = table.walk(page << PAGE_SHIFT, Some(&mut self.pwc));
                for (k, n) in path.fills {
                    self.pwc.insert(k, n);
                }
                path.reads
            }
        };
        self.stats.walks += 1;
        self.stats.walk_accesses += walk.len() as u64;
        if let Outcome::Mapped { pa, cow } = outcome {
            self.tlbs
                .insert(addr.raw(), PageSize::Small, (pa & !(PAGE_BYTES - 1), cow));
        }
        Ok(VbiTranslation {
            outcome,
            served: Served::Walk,
            vit_access,
            walk,
        })
    }

    fn invalidate_page(&mut self, vbuid: Vbuid, page: u64) {
        let addr = self.page_address(vbuid, page);
        self.tlbs.invalidate(addr, PageSize::Small);
    }

    fn invalidate_vb(&mut self, vbuid: Vbuid) {
        let first = self.vb_base(vbuid) >> PAGE_SHIFT;
        let last = first + vbuid.class.pages();
        self.tlbs.invalidate_small_pages(|p| p >= first && p < last);
        self.vb_tlb.invalidate(vbuid.key());
        if let Some(root) = self.vbs.get(&vbuid).and_then(|s| s.table.as_ref()).map(|t| t.root()) {
            self.pwc.retain(|k| k.table != root);
        }
    }

    // ---- structure management ----------------------------------------

    fn new_table(&mut self, kind: StructureKind, class: SizeClass) -> (u64, Option<RadixTable>) {
        match kind {
            StructureKind::Direct => (0, None),
            StructureKind::SingleLevel => (self.arena.alloc(class.pages() * ENTRY_BYTES, PAGE_BYTES), None),
            StructureKind::MultiLevel => {
                let root = self.arena.alloc(NODE_BYTES, NODE_BYTES);
                let depth = depth_for(class.offset_bits());
                (root, Some(RadixTable::new(root, depth, PAGE_SHIFT)))
            }
        }
    }

    fn ensure_state(&mut self, registry: &mut VbRegistry, vbuid: Vbuid) {
        if self.vbs.contains_key(&vbuid) {
            return;
        }
        let kind = choose_structure(vbuid.class, false);
        let (root, table) = self.new_table(kind, vbuid.class);
        registry.set_translation(vbuid, Some(kind), (kind != StructureKind::Direct).then_some(root));
        self.vbs.insert(
            vbuid,
            VbState {
                kind,
                root,
                table,
                pages: BTreeMap::new(),
                chunks: Vec::new(),
                reserve_attempted: false,
                directly_mapped: false,
            },
        );
    }

    /// Drops a reserved VB's direct mapping and builds its natural
    /// structure over the pages it already holds.
    fn clear_direct(&mut self, registry: &mut VbRegistry, vbuid: Vbuid) {
        let Some(st) = self.vbs.get_mut(&vbuid) else {
            return;
        };
        if !st.directly_mapped {
            return;
        }
        st.directly_mapped = false;
        self.stats.direct_cleared += 1;
        let natural = choose_structure(vbuid.class, false);
        if natural == StructureKind::Direct {
            return;
        }
        let (root, mut table) = self.new_table(natural, vbuid.class);
        let st = self.vbs.get_mut(&vbuid).expect("checked above");
        if let Some(t) = table.as_mut() {
            let arena = &mut self.arena;
            for &page in st.pages.keys() {
                t.ensure_path(page << PAGE_SHIFT, || arena.alloc(NODE_BYTES, NODE_BYTES));
            }
        }
        st.kind = natural;
        st.root = root;
        st.table = table;
        registry.set_translation(vbuid, Some(natural), Some(root));
        self.vb_tlb.invalidate(vbuid.key());
    }

    fn install(&mut self, registry: &mut VbRegistry, vbuid: Vbuid, page: u64, state: PageState, cow: bool) {
        self.seq += 1;
        let seq = self.seq;
        let st = self.vbs.get_mut(&vbuid).expect("state exists");
        st.pages.insert(page, PageEntry { state, cow, seq });
        if let Some(t) = st.table.as_mut() {
            let arena = &mut self.arena;
            t.ensure_path(page << PAGE_SHIFT, || arena.alloc(NODE_BYTES, NODE_BYTES));
        }
        let mut breaks_direct = false;
        if let (StructureKind::Direct, PageState::Allocated(f)) = (st.kind, state) {
            if vbuid.class == SizeClass::KB4 && !st.directly_mapped {
                st.root = f.address();
                registry.set_translation(vbuid, Some(StructureKind::Direct), Some(st.root));
            } else {
                breaks_direct = f.address() != st.root + (page << PAGE_SHIFT);
            }
        }
        self.invalidate_page(vbuid, page);
        if breaks_direct {
            self.clear_direct(registry, vbuid);
        }
    }

    // ---- allocation ---------------------------------------------------

    fn fast_free(&self) -> u64 {
        let p = &self.mem.region(0).pool;
        p.unreserved_free_frames()
    }

    /// Regions to try for a new frame of `vbuid`, most preferred first.
    fn regions_for(&mut self, registry: &VbRegistry, vbuid: Vbuid, page: u64) -> Vec<usize> {
        let n = self.mem.regions().len();
        let Some(policy) = self.config.placement.filter(|_| n > 1) else {
            return (0..n).collect();
        };
        let unit = Unit::of(vbuid, page);
        let first = match policy {
            PlacementPolicy::Unaware => {
                let r = self.rr_next % n;
                self.rr_next += 1;
                r
            }
            PlacementPolicy::Ideal => {
                if self.ideal_hot.contains(&unit) { 0 } else { 1 }
            }
            PlacementPolicy::Aware => match self.homes.get(&unit) {
                Some(&r) => r,
                None => {
                    let ls = registry
                        .entry(vbuid)
                        .is_some_and(|e| e.props.contains(crate::registry::Props::LATENCY_SENSITIVE));
                    let headroom = if ls { 0 } else { self.config.ls_headroom_frames };
                    let r = if self.fast_free() > headroom { 0 } else { 1 };
                    self.homes.insert(unit, r);
                    r
                }
            },
        };
        std::iter::once(first).chain((0..n).filter(|&r| r != first)).collect()
    }

    fn reserve_for(&mut self, registry: &mut VbRegistry, vbuid: Vbuid, page: u64, region: usize) {
        let vb_order = (vbuid.class.offset_bits() - PAGE_SHIFT) as u8;
        let st = self.vbs.get_mut(&vbuid).expect("state exists");
        if st.directly_mapped || st.chunks.iter().any(|c| c.covers(page)) {
            return;
        }
        if !st.reserve_attempted {
            st.reserve_attempted = true;
            if st.pages.is_empty()
                && let Some(frame) = self.mem.reserve(region, vb_order, vbuid) {
                    let st = self.vbs.get_mut(&vbuid).expect("state exists");
                    st.chunks.push(ReservedChunk {
                        vb_page: 0,
                        frame,
                        order: vb_order,
                    });
                    st.kind = StructureKind::Direct;
                    st.root = frame.address();
                    st.table = None;
                    st.directly_mapped = true;
                    registry.set_translation(vbuid, Some(StructureKind::Direct), Some(frame.address()));
                    self.stats.reservations += 1;
                    return;
                }
        }
        let Some(largest) = self.mem.largest_unreserved_order(region) else {
            return;
        };
        let order = largest.min(vb_order);
        let vb_page = page & !((1u64 << order) - 1);
        if let Some(frame) = self.mem.reserve(region, order, vbuid) {
            let st = self.vbs.get_mut(&vbuid).expect("state exists");
            st.chunks.push(ReservedChunk { vb_page, frame, order });
            self.stats.reservations += 1;
        }
    }

    /// Finds a frame for (`vbuid`, `page`) using three-level priority,
    /// swapping out pages when every class is empty.
    fn take_frame(&mut self, registry: &mut VbRegistry, vbuid: Vbuid, page: u64) -> Result<FrameId, MtlError> {
        let regions = self.regions_for(registry, vbuid, page);
        if self.config.early_reservation {
            self.reserve_for(registry, vbuid, page, regions[0]);
        }
        let target = self.vbs[&vbuid]
            .chunks
            .iter()
            .find(|c| c.covers(page))
            .map(|c| c.frame.offset(page - c.vb_page));
        loop {
            if let Some((frame, prio)) = self.mem.alloc_with_priority(vbuid, target, &regions) {
                self.stats.priority[prio.rank() as usize - 1] += 1;
                self.stats.frames_allocated += 1;
                if let Priority::ForeignReserved(owner) = prio {
                    self.clear_direct(registry, owner);
                }
                return Ok(frame);
            }
            self.swap_out_one()?;
        }
    }

    /// Backs (`vbuid`, `page`) with a frame if it has none. Swapped-out
    /// pages are brought back in.
    pub fn ensure_backed(&mut self, registry: &mut VbRegistry, vbuid: Vbuid, page: u64) -> Result<FrameId, MtlError> {
        if !registry.is_enabled(vbuid) {
            return Err(MtlError::Disabled(vbuid));
        }
        self.ensure_state(registry, vbuid);
        let prior = self.vbs[&vbuid].pages.get(&page).copied();
        if let Some(PageEntry {
            state: PageState::Allocated(f),
            ..
        }) = prior
        {
            return Ok(f);
        }
        let frame = self.take_frame(registry, vbuid, page)?;
        self.install(registry, vbuid, page, PageState::Allocated(frame), false);
        if prior.is_some() {
            self.stats.swap_in += 1;
        }
        Ok(frame)
    }

    /// Gives a written page its own frame: allocates unbacked pages, swaps
    /// in swapped-out ones and breaks copy-on-write sharing.
    pub fn back_for_write(&mut self, registry: &mut VbRegistry, vbuid: Vbuid, page: u64) -> Result<WriteBacking, MtlError> {
        match self.page(vbuid, page) {
            None => Ok(WriteBacking {
                frame: self.ensure_backed(registry, vbuid, page)?,
                allocated: true,
                swapped_in: false,
                copy: None,
            }),
            Some(PageEntry {
                state: PageState::SwappedOut,
                ..
            }) => Ok(WriteBacking {
                frame: self.ensure_backed(registry, vbuid, page)?,
                allocated: true,
                swapped_in: true,
                copy: None,
            }),
            Some(PageEntry {
                state: PageState::Allocated(f),
                cow,
                ..
            }) => {
                let copy = if cow { self.resolve_cow(registry, vbuid, page)? } else { None };
                Ok(WriteBacking {
                    frame: copy.map_or(f, |c| c.to),
                    allocated: copy.is_some(),
                    swapped_in: false,
                    copy,
                })
            }
        }
    }

    /// Breaks sharing on a CoW page being written. Copies only while another
    /// mapping still holds the frame; the last holder just drops the flag.
    pub fn resolve_cow(&mut self, registry: &mut VbRegistry, vbuid: Vbuid, page: u64) -> Result<Option<PageCopy>, MtlError> {
        let Some(entry) = self.page(vbuid, page) else {
            return Ok(None);
        };
        let PageState::Allocated(old) = entry.state else {
            return Ok(None);
        };
        if !entry.cow {
            return Ok(None);
        }
        if self.mem.share_count(old) <= 1 {
            self.vbs.get_mut(&vbuid).expect("page exists").pages.get_mut(&page).expect("page exists").cow = false;
            self.invalidate_page(vbuid, page);
            return Ok(None);
        }
        let new = self.take_frame(registry, vbuid, page)?;
        self.mem.release(old);
        self.install(registry, vbuid, page, PageState::Allocated(new), false);
        self.stats.cow_copies += 1;
        self.remapped.push((vbuid, page));
        Ok(Some(PageCopy { from: old, to: new }))
    }

    /// Evicts the oldest unshared page of the largest VB to backing store.
    fn swap_out_one(&mut self) -> Result<(), OutOfMemory> {
        let mem = &self.mem;
        let unshared = |e: &PageEntry| match e.state {
            PageState::Allocated(f) => mem.share_count(f) == 1,
            PageState::SwappedOut => false,
        };
        let victim = self
            .vbs
            .iter()
            .filter_map(|(&v, st)| {
                let held = st.pages.values().filter(|e| unshared(e)).count();
                (held > 0).then_some((v.class, held, std::cmp::Reverse(v), v))
            })
            .max()
            .map(|t| t.3)
            .ok_or(OutOfMemory)?;
        let (page, frame) = self.vbs[&victim]
            .pages
            .iter()
            .filter(|(_, e)| unshared(e))
            .min_by_key(|(_, e)| e.seq)
            .map(|(&p, e)| match e.state {
                PageState::Allocated(f) => (p, f),
                PageState::SwappedOut => unreachable!(),
            })
            .expect("victim holds a page");
        let e = self.vbs.get_mut(&victim).unwrap().pages.get_mut(&page).unwrap();
        e.state = PageState::SwappedOut;
        e.cow = false;
        self.mem.release(frame);
        self.stats.swap_out += 1;
        self.remapped.push((victim, page));
        self.invalidate_page(victim, page);
        Ok(())
    }

    // ---- lifecycle ----------------------------------------------------

    /// Releases every frame and reservation of a VB being disabled.
    /// Returns the number of frame references dropped.
    pub fn release_vb(&mut self, registry: &mut VbRegistry, vbuid: Vbuid) -> u64 {
        self.invalidate_vb(vbuid);
        self.mem.unreserve_all(vbuid);
        self.hotness.forget(vbuid);
        self.homes.retain(|u, _| u.vbuid != vbuid);
        registry.set_translation(vbuid, None, None);
        let Some(st) = self.vbs.remove(&vbuid) else {
            return 0;
        };
        let mut dropped = 0;
        for e in st.pages.values() {
            if let PageState::Allocated(f) = e.state {
                self.mem.release(f);
                dropped += 1;
            }
        }
        dropped
    }

    /// Makes `dst` share every page of `src` copy-on-write.
    pub fn clone_vb(&mut self, registry: &mut VbRegistry, src: Vbuid, dst: Vbuid) -> Result<(), MtlError> {
        for v in [src, dst] {
            if !registry.is_enabled(v) {
                return Err(LifecycleError::NotEnabled(v).into());
            }
        }
        if src.class != dst.class {
            return Err(LifecycleError::ClassMismatch(src.class, dst.class).into());
        }
        if self.vbs.get(&dst).is_some_and(|s| !s.pages.is_empty()) {
            return Err(LifecycleError::NotEmpty(dst).into());
        }
        let Some(st) = self.vbs.get_mut(&src) else {
            return Ok(());
        };
        let mut shared = Vec::with_capacity(st.pages.len());
        for (&page, e) in st.pages.iter_mut() {
            if let PageState::Allocated(f) = e.state {
                e.cow = true;
                self.mem.add_sharer(f);
            }
            shared.push((page, e.state));
        }
        self.invalidate_vb(src);
        self.ensure_state(registry, dst);
        for (page, state) in shared {
            self.install(registry, dst, page, state, matches!(state, PageState::Allocated(_)));
        }
        // dst starts without a reservation of its own
        self.vbs.get_mut(&dst).unwrap().reserve_attempted = true;
        Ok(())
    }

    /// Moves `src`'s pages to the low offsets of the empty, larger `dst` and
    /// repoints `client`'s CVT entry. Dirty lines of `src` must already have
    /// been written back.
    pub fn promote(
        &mut self,
        registry: &mut VbRegistry,
        protection: &mut ProtectionUnit,
        client: ClientId,
        src: Vbuid,
        dst: Vbuid,
    ) -> Result<usize, MtlError> {
        check_promotion(registry, src, dst)?;
        if self.vbs.get(&dst).is_some_and(|s| !s.pages.is_empty()) {
            return Err(LifecycleError::NotEmpty(dst).into());
        }
        let index = registry.promote_cvt(protection, client, src, dst)?;
        self.invalidate_vb(src);
        self.mem.unreserve_all(src);
        self.hotness.forget(src);
        registry.set_translation(src, None, None);
        if let Some(st) = self.vbs.remove(&src) {
            self.ensure_state(registry, dst);
            self.vbs.get_mut(&dst).unwrap().reserve_attempted = true;
            for (page, e) in st.pages {
                self.install(registry, dst, page, e.state, e.cow);
            }
        }
        Ok(index)
    }

    // ---- heterogeneous memory ----------------------------------------

    fn move_unit(&mut self, registry: &mut VbRegistry, unit: Unit, to: usize, out: &mut Vec<PageCopy>) -> bool {
        let pages: Vec<(u64, FrameId)> = match self.vbs.get(&unit.vbuid) {
            Some(st) => st
                .pages
                .range(unit.pages())
                .filter_map(|(&p, e)| match e.state {
                    PageState::Allocated(f) => Some((p, f)),
                    PageState::SwappedOut => None,
                })
                .collect(),
            None => return true,
        };
        if self.directly_mapped(unit.vbuid) && unit.vbuid.class != SizeClass::KB4 {
            self.clear_direct(registry, unit.vbuid);
        }
        for (page, from) in pages {
            if self.mem.region_of(from) == Some(to) || self.mem.share_count(from) > 1 {
                continue;
            }
            let Some(dest) = self.mem.alloc_in(to, Some(unit.vbuid)) else {
                return false;
            };
            let cow = self.page(unit.vbuid, page).is_some_and(|e| e.cow);
            self.install(registry, unit.vbuid, page, PageState::Allocated(dest), cow);
            self.mem.release(from);
            self.remapped.push((unit.vbuid, page));
            self.stats.migrations += 1;
            out.push(PageCopy { from, to: dest });
        }
        self.homes.insert(unit, to);
        true
    }

    /// End-of-epoch pass for the aware policy: the densest units by epoch
    /// access count are moved into the fast region (index 0), displacing
    /// the coldest residents as needed. Counters are reset afterwards.
    pub fn epoch_migrate(&mut self, registry: &mut VbRegistry) -> Vec<PageCopy> {
        let mut copies = Vec::new();
        if self.config.placement != Some(PlacementPolicy::Aware) || self.mem.regions().len() < 2 {
            self.hotness.reset();
            return copies;
        }
        // frames held per unit in (fast, other)
        let mut held: BTreeMap<Unit, (u64, u64)> = BTreeMap::new();
        for (&v, st) in &self.vbs {
            for (&p, e) in &st.pages {
                if let PageState::Allocated(f) = e.state {
                    let h = held.entry(Unit::of(v, p)).or_default();
                    if self.mem.region_of(f) == Some(0) {
                        h.0 += 1;
                    } else {
                        h.1 += 1;
                    }
                }
            }
        }
        let capacity = self.mem.region(0).pool.total_frames();
        let hot = select_hot(
            held.iter().map(|(&u, &(a, b))| (u, self.hotness.count(u), a + b)),
            capacity,
        );
        let hot_set: BTreeSet<Unit> = hot.iter().copied().collect();
        // residents that may be displaced, coldest (lowest density) first
        let mut cold: Vec<(Unit, u64, u64)> = held
            .iter()
            .filter(|(u, h)| h.0 > 0 && !hot_set.contains(u))
            .map(|(&u, &(a, b))| (u, self.hotness.count(u), a + b))
            .collect();
        cold.sort_by(|a, b| (a.1 as u128 * b.2 as u128).cmp(&(b.1 as u128 * a.2 as u128)).then(a.0.cmp(&b.0)));
        let mut cold = cold.into_iter();
        for unit in hot {
            let need = held[&unit].1;
            if need == 0 {
                self.homes.insert(unit, 0);
                continue;
            }
            while self.fast_free() < need {
                let Some((victim, _, _)) = cold.next() else {
                    break;
                };
                self.move_unit(registry, victim, 1, &mut copies);
            }
            if self.move_unit(registry, unit, 0, &mut copies) {
                self.stats.migration_units += 1;
            }
        }
        self.hotness.reset();
        copies
    }
}

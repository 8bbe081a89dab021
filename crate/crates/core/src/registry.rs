//! VB Info Tables and the VB lifecycle.
//!
//! One VIT per size class (and VM partition), indexed by VBID. A table only
//! stores entries up to the highest enabled VBID; disabled VBIDs at the top
//! are trimmed and low VBIDs are handed out first, so the table length stays
//! bounded by the peak number of live VBs.
//!
//! Disabling a VB queues a scrub job for its cache lines. The VBID can not be
//! handed out again until that job has drained.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use bitflags::bitflags;

use crate::address::{AddressingMode, SizeClass, Vbuid, class_for_request};
use crate::error::LifecycleError;
use crate::lru::SetAssoc;
use crate::protection::{ClientId, Perms, ProtectionUnit};

bitflags! {
    /// VB property bitvector. The upper 8 bits are reserved.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
    pub struct Props: u16 {
        const CODE = 1 << 0;
        const READ_ONLY = 1 << 1;
        const KERNEL = 1 << 2;
        const COMPRESSIBLE = 1 << 3;
        const PERSISTENT = 1 << 4;
        const LATENCY_SENSITIVE = 1 << 5;
        const BANDWIDTH_SENSITIVE = 1 << 6;
        const ERROR_TOLERANT = 1 << 7;
    }
}

const PROP_NAMES: [(&str, Props); 8] = [
    ("code", Props::CODE),
    ("read_only", Props::READ_ONLY),
    ("kernel", Props::KERNEL),
    ("compressible", Props::COMPRESSIBLE),
    ("persistent", Props::PERSISTENT),
    ("latency_sensitive", Props::LATENCY_SENSITIVE),
    ("bandwidth_sensitive", Props::BANDWIDTH_SENSITIVE),
    ("error_tolerant", Props::ERROR_TOLERANT),
];

impl Props {
    /// Rejects any reserved bit.
    pub fn from_mask(mask: u16) -> Option<Props> {
        Props::from_bits(mask)
    }

    /// Accepts a numeric mask (`0x22`), `-`/`none`, or names joined by `|`.
    pub fn parse(s: &str) -> Option<Props> {
        if s == "-" || s.eq_ignore_ascii_case("none") {
            return Some(Props::empty());
        }
        if let Some(mask) = crate::address::parse_u64(s) {
            return u16::try_from(mask).ok().and_then(Props::from_mask);
        }
        s.split('|').try_fold(Props::empty(), |acc, name| {
            PROP_NAMES
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, p)| acc | *p)
        })
    }

    /// Permissions a requesting client gets when it receives the VB.
    pub fn default_perms(self) -> Perms {
        let mut p = Perms::R;
        if !self.contains(Props::READ_ONLY) {
            p |= Perms::W;
        }
        if self.contains(Props::CODE) {
            p |= Perms::X;
        }
        p
    }
}

impl fmt::Display for Props {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("-");
        }
        let names: Vec<&str> = PROP_NAMES
            .iter()
            .filter(|(_, p)| self.contains(*p))
            .map(|(n, _)| *n)
            .collect();
        f.write_str(&names.join("|"))
    }
}

/// Kind of VBI-to-physical translation structure used for a VB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StructureKind {
    Direct,
    SingleLevel,
    MultiLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VitEntry {
    pub enabled: bool,
    pub props: Props,
    pub ref_count: u32,
    pub ts_kind: Option<StructureKind>,
    /// Root table node, or base frame address for directly mapped VBs.
    pub ts_root: Option<u64>,
}

/// Fully-associative LRU cache of VIT entries keyed by VBUID. Entries are
/// read through to the table, so the cache can never go stale.
#[derive(Debug, Clone)]
pub struct VitCache {
    tags: SetAssoc<()>,
    pub hits: u64,
    pub misses: u64,
}

impl VitCache {
    pub fn new(entries: usize) -> Self {
        VitCache {
            tags: SetAssoc::fully_associative(entries),
            hits: 0,
            misses: 0,
        }
    }

    /// Records a lookup; returns whether it hit.
    pub fn access(&mut self, vbuid: Vbuid) -> bool {
        if self.tags.lookup(vbuid.key()).is_some() {
            self.hits += 1;
            true
        } else {
            self.misses += 1;
            self.tags.insert(vbuid.key(), ());
            false
        }
    }

    fn evict(&mut self, vbuid: Vbuid) {
        self.tags.remove(vbuid.key());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ScrubJob {
    vbuid: Vbuid,
    lines_left: u64,
}

#[derive(Debug, Clone)]
pub struct VbRegistry {
    mode: AddressingMode,
    /// VM partition used when this registry hands out new VBs.
    vm_id: u8,
    tables: BTreeMap<(SizeClass, u8), Vec<VitEntry>>,
    pub cache: VitCache,
    scrub_queue: VecDeque<ScrubJob>,
    scrub_pending: BTreeSet<Vbuid>,
}

impl VbRegistry {
    pub fn new(mode: AddressingMode) -> Self {
        Self::with_vit_cache(mode, 64)
    }

    pub fn with_vit_cache(mode: AddressingMode, vit_cache_entries: usize) -> Self {
        VbRegistry {
            mode,
            vm_id: 0,
            tables: BTreeMap::new(),
            cache: VitCache::new(vit_cache_entries),
            scrub_queue: VecDeque::new(),
            scrub_pending: BTreeSet::new(),
        }
    }

    /// Sets the VM partition for `request_vb` (VM mode only).
    pub fn set_vm_partition(&mut self, vm_id: u8) {
        self.vm_id = vm_id;
    }

    pub fn mode(&self) -> AddressingMode {
        self.mode
    }

    fn check_partition(&self, vbuid: Vbuid) -> Result<(), LifecycleError> {
        let ok = match self.mode {
            AddressingMode::Native => vbuid.vm_id == 0,
            AddressingMode::Vm => vbuid.vm_id < 32,
        };
        if !ok || vbuid.vbid > vbuid.class.max_vbid(self.mode) {
            return Err(LifecycleError::WrongPartition(vbuid));
        }
        Ok(())
    }

    pub fn entry(&self, vbuid: Vbuid) -> Option<&VitEntry> {
        self.tables
            .get(&(vbuid.class, vbuid.vm_id))
            .and_then(|t| t.get(vbuid.vbid as usize))
            .filter(|e| e.enabled)
    }

    fn entry_mut(&mut self, vbuid: Vbuid) -> Option<&mut VitEntry> {
        self.tables
            .get_mut(&(vbuid.class, vbuid.vm_id))
            .and_then(|t| t.get_mut(vbuid.vbid as usize))
            .filter(|e| e.enabled)
    }

    pub fn is_enabled(&self, vbuid: Vbuid) -> bool {
        self.entry(vbuid).is_some()
    }

    pub fn is_scrub_pending(&self, vbuid: Vbuid) -> bool {
        self.scrub_pending.contains(&vbuid)
    }

    /// Current VIT length for a class (and VM partition).
    pub fn vit_len(&self, class: SizeClass, vm_id: u8) -> usize {
        self.tables.get(&(class, vm_id)).map_or(0, Vec::len)
    }

    pub fn enabled_vbs(&self) -> impl Iterator<Item = (Vbuid, &VitEntry)> {
        self.tables.iter().flat_map(|(&(class, vm_id), t)| {
            t.iter().enumerate().filter(|(_, e)| e.enabled).map(move |(i, e)| {
                (
                    Vbuid {
                        class,
                        vm_id,
                        vbid: i as u64,
                    },
                    e,
                )
            })
        })
    }

    pub fn enable_vb(&mut self, vbuid: Vbuid, props: Props) -> Result<(), LifecycleError> {
        self.check_partition(vbuid)?;
        if self.is_enabled(vbuid) {
            return Err(LifecycleError::AlreadyEnabled(vbuid));
        }
        if self.scrub_pending.contains(&vbuid) {
            return Err(LifecycleError::ScrubPending(vbuid));
        }
        let table = self.tables.entry((vbuid.class, vbuid.vm_id)).or_default();
        let idx = vbuid.vbid as usize;
        if table.len() <= idx {
            table.resize(idx + 1, VitEntry::default());
        }
        table[idx] = VitEntry {
            enabled: true,
            props,
            ..VitEntry::default()
        };
        Ok(())
    }

    /// Clears the entry and queues a scrub of `cached_lines` lines. Physical
    /// memory must already have been released by the caller.
    pub fn disable_vb(&mut self, vbuid: Vbuid, cached_lines: u64) -> Result<VitEntry, LifecycleError> {
        let entry = *self
            .entry(vbuid)
            .ok_or(LifecycleError::NotEnabled(vbuid))?;
        if entry.ref_count > 0 {
            return Err(LifecycleError::StillReferenced(vbuid, entry.ref_count));
        }
        let table = self
            .tables
            .get_mut(&(vbuid.class, vbuid.vm_id))
            .expect("enabled VB has a table");
        table[vbuid.vbid as usize] = VitEntry::default();
        while table.last().is_some_and(|e| !e.enabled) {
            table.pop();
        }
        self.cache.evict(vbuid);
        self.scrub_pending.insert(vbuid);
        self.scrub_queue.push_back(ScrubJob {
            vbuid,
            lines_left: cached_lines,
        });
        Ok(entry)
    }

    /// Spends `line_budget` line invalidations on the scrub FIFO and returns
    /// the VBs whose scrub completed. The caller invalidates their lines.
    pub fn advance_scrub(&mut self, mut line_budget: u64) -> Vec<Vbuid> {
        let mut done = Vec::new();
        while let Some(job) = self.scrub_queue.front_mut() {
            if job.lines_left > line_budget {
                job.lines_left -= line_budget;
                break;
            }
            line_budget -= job.lines_left;
            let vbuid = job.vbuid;
            self.scrub_queue.pop_front();
            self.scrub_pending.remove(&vbuid);
            done.push(vbuid);
        }
        done
    }

    pub fn scrub_backlog(&self) -> usize {
        self.scrub_queue.len()
    }

    pub(crate) fn add_ref(&mut self, vbuid: Vbuid) -> Result<(), LifecycleError> {
        let e = self
            .entry_mut(vbuid)
            .ok_or(LifecycleError::NotEnabled(vbuid))?;
        e.ref_count += 1;
        Ok(())
    }

    pub(crate) fn drop_ref(&mut self, vbuid: Vbuid) -> Result<(), LifecycleError> {
        let e = self
            .entry_mut(vbuid)
            .ok_or(LifecycleError::NotEnabled(vbuid))?;
        debug_assert!(e.ref_count > 0);
        e.ref_count = e.ref_count.saturating_sub(1);
        Ok(())
    }

    pub(crate) fn set_translation(
        &mut self,
        vbuid: Vbuid,
        kind: Option<StructureKind>,
        root: Option<u64>,
    ) {
        if let Some(e) = self.entry_mut(vbuid) {
            e.ts_kind = kind;
            e.ts_root = root;
        }
    }

    /// Lowest VBID in the class that is neither enabled nor awaiting scrub.
    pub fn lowest_free(&self, class: SizeClass) -> Result<Vbuid, LifecycleError> {
        let vm_id = match self.mode {
            AddressingMode::Native => 0,
            AddressingMode::Vm => self.vm_id,
        };
        let empty = Vec::new();
        let table = self.tables.get(&(class, vm_id)).unwrap_or(&empty);
        let max = class.max_vbid(self.mode);
        (0..=max)
            .map(|vbid| Vbuid { class, vm_id, vbid })
            .find(|v| {
                let enabled = table.get(v.vbid as usize).is_some_and(|e| e.enabled);
                !enabled && !self.scrub_pending.contains(v)
            })
            .ok_or(LifecycleError::ClassExhausted(class))
    }

    /// OS allocation path: pick the smallest fitting class and its lowest
    /// free VB, enable it and attach the caller. Returns the CVT index.
    pub fn request_vb(
        &mut self,
        protection: &mut ProtectionUnit,
        client: ClientId,
        expected_size: u64,
        props: Props,
    ) -> Result<(usize, Vbuid), LifecycleError> {
        let class = class_for_request(expected_size)?;
        let vbuid = self.lowest_free(class)?;
        self.enable_vb(vbuid, props)?;
        let index = protection.attach(self, client, vbuid, props.default_perms())?;
        Ok((index, vbuid))
    }

    /// CVT half of VB promotion: repoints the client's entry from `source`
    /// to `target` and moves the reference.
    pub fn promote_cvt(
        &mut self,
        protection: &mut ProtectionUnit,
        client: ClientId,
        source: Vbuid,
        target: Vbuid,
    ) -> Result<usize, LifecycleError> {
        check_promotion(self, source, target)?;
        let index = protection.repoint(client, source, target)?;
        self.drop_ref(source)?;
        self.add_ref(target)?;
        Ok(index)
    }
}

pub(crate) fn check_promotion(
    registry: &VbRegistry,
    source: Vbuid,
    target: Vbuid,
) -> Result<(), LifecycleError> {
    if !registry.is_enabled(source) {
        return Err(LifecycleError::NotEnabled(source));
    }
    if !registry.is_enabled(target) {
        return Err(LifecycleError::NotEnabled(target));
    }
    if target.class <= source.class {
        return Err(LifecycleError::NotLarger {
            from: source.class,
            target: target.class,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> VbRegistry {
        VbRegistry::new(AddressingMode::Native)
    }

    #[test]
    fn enable_sets_refcount_zero_and_rejects_twice() {
        let mut r = reg();
        let v = Vbuid::new(SizeClass::MB4, 0);
        r.enable_vb(v, Props::LATENCY_SENSITIVE).unwrap();
        let e = r.entry(v).unwrap();
        assert!(e.enabled);
        assert_eq!(e.ref_count, 0);
        assert_eq!(e.props, Props::LATENCY_SENSITIVE);
        assert_eq!(r.enable_vb(v, Props::empty()), Err(LifecycleError::AlreadyEnabled(v)));
    }

    #[test]
    fn per_class_tables_are_isolated() {
        let mut r = reg();
        r.enable_vb(Vbuid::new(SizeClass::TB128, 3), Props::empty()).unwrap();
        assert_eq!(r.vit_len(SizeClass::TB128, 0), 4);
        for c in &SizeClass::ALL[..7] {
            assert_eq!(r.vit_len(*c, 0), 0);
        }
    }

    #[test]
    fn request_vb_uses_class_fit_and_lowest_vbid() {
        let mut r = reg();
        let mut p = ProtectionUnit::new(AddressingMode::Native);
        let c = ClientId(0);
        let (i0, v0) = r.request_vb(&mut p, c, 100 << 10, Props::empty()).unwrap();
        let (i1, v1) = r.request_vb(&mut p, c, 100 << 10, Props::empty()).unwrap();
        assert_eq!((i0, i1), (0, 1));
        assert_eq!(v0, Vbuid::new(SizeClass::KB128, 0));
        assert_eq!(v1, Vbuid::new(SizeClass::KB128, 1));
        assert_eq!(r.entry(v0).unwrap().ref_count, 1);
        assert_eq!(p.table(c).unwrap().get(0).unwrap().perms, Perms::R | Perms::W);
    }

    #[test]
    fn read_only_props_drop_write_permission() {
        let mut r = reg();
        let mut p = ProtectionUnit::new(AddressingMode::Native);
        let (i, _) = r
            .request_vb(&mut p, ClientId(0), 10, Props::READ_ONLY | Props::CODE)
            .unwrap();
        let perms = p.table(ClientId(0)).unwrap().get(i).unwrap().perms;
        assert!(!perms.contains(Perms::W));
        assert!(perms.contains(Perms::R | Perms::X));
    }

    #[test]
    fn disable_requires_zero_refs() {
        let mut r = reg();
        let mut p = ProtectionUnit::new(AddressingMode::Native);
        let c = ClientId(0);
        let (_, v) = r.request_vb(&mut p, c, 10, Props::empty()).unwrap();
        assert_eq!(r.disable_vb(v, 0), Err(LifecycleError::StillReferenced(v, 1)));
        p.detach(&mut r, c, v).unwrap();
        r.disable_vb(v, 0).unwrap();
        assert!(!r.is_enabled(v));
    }

    #[test]
    fn vbid_reuse_waits_for_scrub() {
        let mut r = reg();
        let v = Vbuid::new(SizeClass::KB4, 0);
        r.enable_vb(v, Props::empty()).unwrap();
        r.disable_vb(v, 100).unwrap();
        assert_eq!(r.enable_vb(v, Props::empty()), Err(LifecycleError::ScrubPending(v)));
        assert_eq!(r.lowest_free(SizeClass::KB4).unwrap().vbid, 1);
        assert!(r.advance_scrub(64).is_empty());
        assert_eq!(r.advance_scrub(36), vec![v]);
        assert_eq!(r.lowest_free(SizeClass::KB4).unwrap().vbid, 0);
        r.enable_vb(v, Props::empty()).unwrap();
    }

    #[test]
    fn zero_line_scrub_completes_without_budget() {
        let mut r = reg();
        let v = Vbuid::new(SizeClass::KB4, 0);
        r.enable_vb(v, Props::empty()).unwrap();
        r.disable_vb(v, 0).unwrap();
        assert_eq!(r.advance_scrub(0), vec![v]);
    }

    #[test]
    fn vit_trims_to_highest_enabled() {
        let mut r = reg();
        for i in 0..5 {
            r.enable_vb(Vbuid::new(SizeClass::KB4, i), Props::empty()).unwrap();
        }
        r.disable_vb(Vbuid::new(SizeClass::KB4, 4), 0).unwrap();
        r.disable_vb(Vbuid::new(SizeClass::KB4, 2), 0).unwrap();
        assert_eq!(r.vit_len(SizeClass::KB4, 0), 4);
        r.disable_vb(Vbuid::new(SizeClass::KB4, 3), 0).unwrap();
        assert_eq!(r.vit_len(SizeClass::KB4, 0), 2);
    }

    #[test]
    fn props_parse_rejects_reserved_bits() {
        assert_eq!(Props::parse("0x100"), None);
        assert_eq!(Props::parse("0x22"), Some(Props::READ_ONLY | Props::LATENCY_SENSITIVE));
        assert_eq!(
            Props::parse("code|read_only"),
            Some(Props::CODE | Props::READ_ONLY)
        );
        assert_eq!(Props::parse("bogus"), None);
        assert_eq!(Props::parse("-"), Some(Props::empty()));
        let p = Props::KERNEL | Props::ERROR_TOLERANT;
        assert_eq!(Props::parse(&p.to_string()), Some(p));
    }

    #[test]
    fn vit_cache_lru() {
        let mut c = VitCache::new(2);
        let a = Vbuid::new(SizeClass::KB4, 0);
        let b = Vbuid::new(SizeClass::KB4, 1);
        let d = Vbuid::new(SizeClass::KB4, 2);
        assert!(!c.access(a));
        assert!(!c.access(b));
        assert!(c.access(a));
        assert!(!c.access(d));
        assert!(!c.access(b));
        assert_eq!((c.hits, c.misses), (1, 4));
    }

    #[test]
    fn vm_partition_is_enforced() {
        let mut r = VbRegistry::new(AddressingMode::Native);
        let v = Vbuid::with_vm(SizeClass::GB4, 2, 0);
        assert_eq!(r.enable_vb(v, Props::empty()), Err(LifecycleError::WrongPartition(v)));
        let mut r = VbRegistry::new(AddressingMode::Vm);
        r.set_vm_partition(2);
        assert_eq!(r.lowest_free(SizeClass::GB4).unwrap(), Vbuid::with_vm(SizeClass::GB4, 2, 0));
        // 24 VBID bits in VM mode for the 4 GB class
        let too_big = Vbuid::with_vm(SizeClass::GB4, 2, 1 << 24);
        assert_eq!(r.enable_vb(too_big, Props::empty()), Err(LifecycleError::WrongPartition(too_big)));
    }
}

//! Memory clients, Client–VB Tables and the per-core CVT cache.
//!
//! Programs name memory as `{cvt_index, offset}`. Every access is checked
//! against the client's CVT entry and turned into a VBI address by
//! concatenating the entry's VBUID with the offset.

use std::collections::BTreeMap;
use std::fmt;

use bitflags::bitflags;

use crate::address::{AddressingMode, VbiAddress, Vbuid};
use crate::error::LifecycleError;
use crate::registry::VbRegistry;

/// Upper bound on CVT entries per client.
pub const MAX_CVT_ENTRIES: usize = 4096;
pub const CVT_CACHE_SLOTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ClientId(pub u16);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

bitflags! {
    /// RWX permission mask of a CVT entry.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
    pub struct Perms: u8 {
        const R = 0b100;
        const W = 0b010;
        const X = 0b001;
    }
}

impl Perms {
    /// Parses `rwx`-style strings; `-` is a placeholder.
    pub fn parse(s: &str) -> Option<Perms> {
        let mut p = Perms::empty();
        for ch in s.chars() {
            match ch.to_ascii_lowercase() {
                'r' => p |= Perms::R,
                'w' => p |= Perms::W,
                'x' => p |= Perms::X,
                '-' => {}
                _ => return None,
            }
        }
        Some(p)
    }
}

impl fmt::Display for Perms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flag = |p, c| if self.contains(p) { c } else { '-' };
        write!(
            f,
            "{}{}{}",
            flag(Perms::R, 'r'),
            flag(Perms::W, 'w'),
            flag(Perms::X, 'x')
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Read,
    Write,
    Execute,
}

impl AccessKind {
    pub fn required(self) -> Perms {
        match self {
            AccessKind::Read => Perms::R,
            AccessKind::Write => Perms::W,
            AccessKind::Execute => Perms::X,
        }
    }
}

/// Protection faults, each surfaced under its own stats counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fault {
    IndexRange,
    InvalidEntry,
    Permission,
    Bounds,
}

impl Fault {
    pub const ALL: [Fault; 4] = [
        Fault::Bounds,
        Fault::Permission,
        Fault::InvalidEntry,
        Fault::IndexRange,
    ];

    pub fn counter_name(self) -> &'static str {
        match self {
            Fault::IndexRange => "fault.index_range",
            Fault::InvalidEntry => "fault.invalid_entry",
            Fault::Permission => "fault.perm",
            Fault::Bounds => "fault.bounds",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CvtEntry {
    pub valid: bool,
    pub vbuid: Vbuid,
    pub perms: Perms,
}

#[derive(Debug, Clone)]
pub struct ClientTable {
    client: ClientId,
    entries: Vec<CvtEntry>,
}

impl ClientTable {
    pub fn new(client: ClientId) -> Self {
        ClientTable {
            client,
            entries: Vec::new(),
        }
    }

    pub fn client(&self) -> ClientId {
        self.client
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&CvtEntry> {
        self.entries.get(index)
    }

    pub fn entries(&self) -> &[CvtEntry] {
        &self.entries
    }

    pub fn find(&self, vbuid: Vbuid) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.valid && e.vbuid == vbuid)
    }

    /// Reuses the lowest invalid slot, else appends.
    fn insert(&mut self, vbuid: Vbuid, perms: Perms) -> Result<usize, LifecycleError> {
        if self.find(vbuid).is_some() {
            return Err(LifecycleError::AlreadyAttached {
                client: self.client,
                vbuid,
            });
        }
        let entry = CvtEntry {
            valid: true,
            vbuid,
            perms,
        };
        if let Some(i) = self.entries.iter().position(|e| !e.valid) {
            self.entries[i] = entry;
            return Ok(i);
        }
        if self.entries.len() >= MAX_CVT_ENTRIES {
            return Err(LifecycleError::CvtFull(self.client));
        }
        self.entries.push(entry);
        Ok(self.entries.len() - 1)
    }

    fn invalidate(&mut self, vbuid: Vbuid) -> Result<usize, LifecycleError> {
        let i = self.find(vbuid).ok_or(LifecycleError::NotAttached {
            client: self.client,
            vbuid,
        })?;
        self.entries[i].valid = false;
        Ok(i)
    }
}

#[derive(Debug, Clone, Copy)]
struct CachedEntry {
    client: ClientId,
    index: usize,
    entry: CvtEntry,
}

/// 64-slot direct-mapped cache of CVT entries, slot = index mod 64.
#[derive(Debug, Clone)]
pub struct CvtCache {
    slots: [Option<CachedEntry>; CVT_CACHE_SLOTS],
    pub hits: u64,
    pub misses: u64,
}

impl Default for CvtCache {
    fn default() -> Self {
        CvtCache {
            slots: [None; CVT_CACHE_SLOTS],
            hits: 0,
            misses: 0,
        }
    }
}

impl CvtCache {
    fn slot(index: usize) -> usize {
        index % CVT_CACHE_SLOTS
    }

    /// Returns the cached entry and whether the lookup hit; fills from
    /// `table` on a miss.
    fn lookup(&mut self, client: ClientId, index: usize, table: &ClientTable) -> (CvtEntry, bool) {
        let slot = Self::slot(index);
        if let Some(c) = self.slots[slot]
            && c.client == client
            && c.index == index
        {
            self.hits += 1;
            return (c.entry, true);
        }
        self.misses += 1;
        let entry = table.entries[index];
        self.slots[slot] = Some(CachedEntry {
            client,
            index,
            entry,
        });
        (entry, false)
    }

    /// Write-through update for a CVT mutation.
    fn update(&mut self, client: ClientId, index: usize, entry: CvtEntry) {
        if let Some(c) = &mut self.slots[Self::slot(index)]
            && c.client == client
            && c.index == index
        {
            c.entry = entry;
        }
    }

    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }

    /// Whether the slot for `index` currently mirrors `entry`.
    pub fn mirrors(&self, client: ClientId, index: usize, table: &ClientTable) -> bool {
        match self.slots[Self::slot(index)] {
            Some(c) if c.client == client && c.index == index => {
                table.get(index) == Some(&c.entry)
            }
            _ => true,
        }
    }
}

/// Outcome of a permitted access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FormedAddress {
    pub address: VbiAddress,
    pub vbuid: Vbuid,
    pub cvt_hit: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultCounters {
    pub bounds: u64,
    pub perm: u64,
    pub invalid_entry: u64,
    pub index_range: u64,
}

impl FaultCounters {
    fn record(&mut self, f: Fault) {
        match f {
            Fault::Bounds => self.bounds += 1,
            Fault::Permission => self.perm += 1,
            Fault::InvalidEntry => self.invalid_entry += 1,
            Fault::IndexRange => self.index_range += 1,
        }
    }

    pub fn get(&self, f: Fault) -> u64 {
        match f {
            Fault::Bounds => self.bounds,
            Fault::Permission => self.perm,
            Fault::InvalidEntry => self.invalid_entry,
            Fault::IndexRange => self.index_range,
        }
    }
}

/// All client tables of the system plus the core's CVT cache.
#[derive(Debug, Clone)]
pub struct ProtectionUnit {
    mode: AddressingMode,
    tables: BTreeMap<ClientId, ClientTable>,
    pub cache: CvtCache,
    pub faults: FaultCounters,
}

impl ProtectionUnit {
    pub fn new(mode: AddressingMode) -> Self {
        ProtectionUnit {
            mode,
            tables: BTreeMap::new(),
            cache: CvtCache::default(),
            faults: FaultCounters::default(),
        }
    }

    pub fn mode(&self) -> AddressingMode {
        self.mode
    }

    pub fn table(&self, client: ClientId) -> Option<&ClientTable> {
        self.tables.get(&client)
    }

    pub fn attach(
        &mut self,
        registry: &mut VbRegistry,
        client: ClientId,
        vbuid: Vbuid,
        perms: Perms,
    ) -> Result<usize, LifecycleError> {
        if !registry.is_enabled(vbuid) {
            return Err(LifecycleError::NotEnabled(vbuid));
        }
        let table = self
            .tables
            .entry(client)
            .or_insert_with(|| ClientTable::new(client));
        let index = table.insert(vbuid, perms)?;
        let entry = table.entries[index];
        self.cache.update(client, index, entry);
        registry.add_ref(vbuid)?;
        Ok(index)
    }

    pub fn detach(
        &mut self,
        registry: &mut VbRegistry,
        client: ClientId,
        vbuid: Vbuid,
    ) -> Result<(), LifecycleError> {
        let table = self
            .tables
            .get_mut(&client)
            .ok_or(LifecycleError::NotAttached { client, vbuid })?;
        let index = table.invalidate(vbuid)?;
        let entry = table.entries[index];
        self.cache.update(client, index, entry);
        registry.drop_ref(vbuid)?;
        Ok(())
    }

    /// Points the client's entry for `old` at `new`, keeping the index.
    /// Reference counts are the caller's business.
    pub(crate) fn repoint(
        &mut self,
        client: ClientId,
        old: Vbuid,
        new: Vbuid,
    ) -> Result<usize, LifecycleError> {
        let table = self
            .tables
            .get_mut(&client)
            .ok_or(LifecycleError::NotAttached { client, vbuid: old })?;
        let index = table.find(old).ok_or(LifecycleError::NotAttached { client, vbuid: old })?;
        if table.find(new).is_some() {
            return Err(LifecycleError::AlreadyAttached { client, vbuid: new });
        }
        table.entries[index].vbuid = new;
        let entry = table.entries[index];
        self.cache.update(client, index, entry);
        Ok(index)
    }

    /// Permission and bounds check followed by VBI address formation.
    pub fn check_and_form_address(
        &mut self,
        client: ClientId,
        cvt_index: usize,
        offset: u64,
        kind: AccessKind,
    ) -> Result<FormedAddress, Fault> {
        let result = self.check(client, cvt_index, offset, kind);
        if let Err(f) = result {
            self.faults.record(f);
        }
        result
    }

    fn check(
        &mut self,
        client: ClientId,
        cvt_index: usize,
        offset: u64,
        kind: AccessKind,
    ) -> Result<FormedAddress, Fault> {
        let table = match self.tables.get(&client) {
            Some(t) if cvt_index < t.len() => t,
            _ => return Err(Fault::IndexRange),
        };
        let (entry, cvt_hit) = self.cache.lookup(client, cvt_index, table);
        if !entry.valid {
            return Err(Fault::InvalidEntry);
        }
        if !entry.perms.contains(kind.required()) {
            return Err(Fault::Permission);
        }
        if offset >= entry.vbuid.size_bytes() {
            return Err(Fault::Bounds);
        }
        let address = entry
            .vbuid
            .address(offset, self.mode)
            .expect("attached VBUIDs encode in the system's mode");
        Ok(FormedAddress {
            address,
            vbuid: entry.vbuid,
            cvt_hit,
        })
    }

    /// Number of valid entries naming `vbuid` across all clients.
    pub fn valid_refs(&self, vbuid: Vbuid) -> usize {
        self.tables
            .values()
            .flat_map(|t| t.entries.iter())
            .filter(|e| e.valid && e.vbuid == vbuid)
            .count()
    }

    pub fn clients(&self) -> impl Iterator<Item = &ClientTable> {
        self.tables.values()
    }
}

//! Scenario orchestration: replays a trace through protection, caches,
//! translation, allocation and the memory device under the core model.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;
use vbi_core::address::PAGE_SHIFT;
use vbi_core::cache::{CacheHierarchy, LINE_BYTES, Line, Writeback};
use vbi_core::device::{MemoryDevice, RegionSpec, Timing};
use vbi_core::error::LifecycleError;
use vbi_core::hotness::{PlacementPolicy, Unit, select_hot, to_set};
use vbi_core::mtl::{Outcome, Served};
use vbi_core::physmem::{FramePool, RegionKind};
use vbi_core::registry::VbRegistry;
use vbi_core::translation::{MetaArena, TlbLevel, X86Mmu, X86Mode};
use vbi_core::{
    AccessKind, AddressingMode, ClientId, FrameId, MtlConfig, MtlError, PhysicalMemory, ProtectionUnit, VbiAddress,
    VbiSystem, Vbuid,
};

use crate::config::{ConfigError, Scenario, SimConfig};
use crate::core_model::CoreModel;
use crate::layout::{Layout, LayoutError, Resolved};
use crate::stats::{Counters, StatsReport, subtract};
use crate::trace::TraceEvent;

/// Spacing between per-client table-node arenas in the baselines.
const ARENA_STRIDE: u64 = 1 << 40;
/// Address-space tag that keeps baseline clients apart in the caches.
const ASID_SHIFT: u32 = 52;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("event {index}: lifecycle violation: {source}")]
    Lifecycle { index: usize, source: LifecycleError },
    #[error("event {index}: address space exhausted for client {client}")]
    Exhausted { index: usize, client: ClientId },
    #[error("event {index}: out of physical memory")]
    OutOfMemory { index: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl RunError {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Lifecycle { .. } | RunError::Exhausted { .. } => 3,
            RunError::OutOfMemory { .. } => 1,
        }
    }
}

impl From<LayoutError> for RunError {
    fn from(e: LayoutError) -> Self {
        match e {
            LayoutError::Lifecycle { index, source } => RunError::Lifecycle { index, source },
            LayoutError::Exhausted { index, client } => RunError::Exhausted { index, client },
        }
    }
}

fn mtl_error(index: usize, e: MtlError) -> RunError {
    match e {
        MtlError::Lifecycle(source) => RunError::Lifecycle { index, source },
        MtlError::Disabled(v) => RunError::Lifecycle {
            index,
            source: LifecycleError::NotEnabled(v),
        },
        MtlError::OutOfMemory(_) => RunError::OutOfMemory { index },
    }
}

/// One data access as presented to the cache hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataAccess {
    pub event: usize,
    pub vbuid: Vbuid,
    pub offset: u64,
    pub write: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Keep the per-event data-access log.
    pub record_accesses: bool,
    /// Keep the device command stream.
    pub record_commands: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: StatsReport,
    pub accesses: Vec<DataAccess>,
    pub device: MemoryDevice,
}

/// Physical regions, device regions and their stats names for a scenario.
/// Timing and device index of one region.
type RegionTiming = (Timing, usize);

/// Frame regions, device regions and their counter names for a scenario.
#[derive(Debug, Clone)]
pub struct MemoryLayout {
    pub frames: Vec<(RegionKind, u64)>,
    pub device: Vec<RegionSpec>,
    pub names: Vec<String>,
}

pub fn memory_layout(scenario: Scenario, cfg: &SimConfig) -> MemoryLayout {
    let pool = cfg.pool_frames();
    let dram: Timing = cfg.device.dram.into();
    let split = |frac: f64| {
        let fast = ((pool as f64 * frac).round() as u64).clamp(1, pool - 1);
        (fast, pool - fast)
    };
    let (phys, timings): (Vec<(RegionKind, u64)>, Vec<RegionTiming>) = match scenario {
        Scenario::HetPcmDram => {
            let (fast, slow) = split(cfg.hetero.pcm_dram_fast_fraction);
            (
                vec![(RegionKind::Dram, fast), (RegionKind::Pcm, slow)],
                vec![(dram, 0), (cfg.device.pcm.into(), 1)],
            )
        }
        Scenario::HetTlDram => {
            let (fast, slow) = split(cfg.hetero.tldram_fast_fraction);
            (
                vec![(RegionKind::TlFast, fast), (RegionKind::TlSlow, slow)],
                vec![(cfg.device.tl_fast.into(), 0), (dram, 0)],
            )
        }
        _ => (vec![(RegionKind::Dram, pool)], vec![(dram, 0)]),
    };
    let mut specs = Vec::new();
    let mut names = Vec::new();
    let mut start = 0;
    for (&(kind, frames), &(timing, device)) in phys.iter().zip(&timings) {
        let end = start + (frames << PAGE_SHIFT);
        specs.push(RegionSpec {
            kind,
            start,
            end,
            timing,
            device,
        });
        names.push(kind.name().to_string());
        start = end;
    }
    // metadata (VIT, translation structures) lives past the pool in DRAM
    specs.push(RegionSpec {
        kind: RegionKind::Dram,
        start,
        end: u64::MAX,
        timing: dram,
        device: 0,
    });
    names.push("meta".to_string());
    MemoryLayout {
        frames: phys,
        device: specs,
        names,
    }
}

#[derive(Debug, Clone, Default)]
struct EngineStats {
    mem_events: u64,
    accesses: u64,
    reads: u64,
    writes: u64,
    data_reads: u64,
    data_writes: u64,
    data_latency_sum: u64,
    translation_reads: u64,
    copy_reads: u64,
    copy_writes: u64,
    evicted_writebacks: u64,
    dropped_writebacks: u64,
    page_faults: u64,
    faults: BTreeMap<&'static str, u64>,
    epochs: u64,
    scrubbed_vbs: u64,
    // baseline translation
    translate_calls: u64,
    walks: u64,
    walk_accesses: u64,
}

struct VbiPipe {
    sys: VbiSystem,
    zero_line: bool,
    next_epoch: Option<u64>,
    epoch: u64,
    last_scrub: u64,
    /// Pages whose frame changed during the current event.
    stale: BTreeSet<(Vbuid, u64)>,
}

struct BasePipe {
    layout: Layout,
    mmus: BTreeMap<ClientId, X86Mmu>,
    vivt: bool,
}

enum Pipe {
    Base(BasePipe),
    Vbi(Box<VbiPipe>),
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    core: CoreModel,
    caches: CacheHierarchy,
    dev: MemoryDevice,
    region_names: Vec<String>,
    upper_latency: u64,
    st: EngineStats,
    log: Option<Vec<DataAccess>>,
    pipe: Pipe,
}

fn line_of(addr: u64) -> u64 {
    addr & !(LINE_BYTES - 1)
}

fn page_offset_bits(addr: u64) -> u64 {
    addr & ((1 << PAGE_SHIFT) - 1)
}

impl<'a> Engine<'a> {
    fn new(scenario: Scenario, cfg: &'a SimConfig, events: &[TraceEvent], opts: RunOptions) -> Result<Self, RunError> {
        cfg.validate()?;
        let MemoryLayout {
            frames: phys,
            device: specs,
            names: region_names,
        } = memory_layout(scenario, cfg);
        let mut dev = MemoryDevice::new(cfg.device.geometry(), specs);
        if opts.record_commands {
            dev.record_commands();
        }
        let cache_cfg = cfg.cache.to_config();
        let caches = CacheHierarchy::new(&cache_cfg);
        let upper_latency = cache_cfg.levels[..cache_cfg.levels.len() - 1]
            .iter()
            .map(|l| l.latency)
            .sum();
        let pipe = if scenario.is_vbi() {
            Pipe::Vbi(Box::new(Self::vbi_pipe(scenario, cfg, events, phys)?))
        } else {
            Pipe::Base(Self::base_pipe(scenario, cfg, events)?)
        };
        Ok(Engine {
            cfg,
            core: CoreModel::new(cfg.cpi_milli(), cfg.core.outstanding_misses),
            caches,
            dev,
            region_names,
            upper_latency,
            st: EngineStats::default(),
            log: opts.record_accesses.then(Vec::new),
            pipe,
        })
    }

    fn vbi_pipe(
        scenario: Scenario,
        cfg: &SimConfig,
        events: &[TraceEvent],
        phys: Vec<(RegionKind, u64)>,
    ) -> Result<VbiPipe, RunError> {
        let placement = scenario.is_het().then(|| cfg.policy()).transpose()?;
        let mtl_cfg = MtlConfig {
            tlb: cfg.tlb.geometry(),
            vb_direct_entries: cfg.tlb.vb_direct_entries,
            pwc_entries: cfg.tlb.pwc_entries,
            early_reservation: scenario == Scenario::VbiFull,
            placement,
            ls_headroom_frames: cfg.hetero.ls_headroom_frames,
        };
        let mode = AddressingMode::Native;
        let mem = PhysicalMemory::new(&phys);
        let fast_frames = phys[0].1;
        let mut sys = VbiSystem {
            protection: ProtectionUnit::new(mode),
            registry: VbRegistry::with_vit_cache(mode, cfg.vbi.vit_cache_entries),
            mtl: vbi_core::Mtl::new(mode, mtl_cfg, mem),
        };
        if placement == Some(PlacementPolicy::Ideal) {
            sys.mtl.set_ideal_hot(ideal_hot_units(events, fast_frames)?);
        }
        let epoch = cfg.hetero.epoch_cycles;
        Ok(VbiPipe {
            sys,
            zero_line: matches!(scenario, Scenario::Vbi2 | Scenario::VbiFull),
            next_epoch: (placement == Some(PlacementPolicy::Aware)).then_some(epoch),
            epoch,
            last_scrub: 0,
            stale: BTreeSet::new(),
        })
    }

    fn base_pipe(scenario: Scenario, cfg: &SimConfig, events: &[TraceEvent]) -> Result<BasePipe, RunError> {
        let mode = match scenario {
            Scenario::Native | Scenario::PerfectTlb | Scenario::Vivt => X86Mode::Native4k,
            Scenario::Native2m => X86Mode::Native2m,
            Scenario::Virtual => X86Mode::Nested4k,
            Scenario::Virtual2m => X86Mode::Nested2m,
            _ => unreachable!("VBI scenarios use their own pipeline"),
        };
        let align = if scenario.large_pages() { 2 << 20 } else { 1 << PAGE_SHIFT };
        let layout = Layout::build(events, align)?;
        let clients = layout.clients();
        let pool = cfg.pool_frames();
        let share = pool / clients.len().max(1) as u64;
        let mut mmus = BTreeMap::new();
        for (i, &c) in clients.iter().enumerate() {
            let i = i as u64;
            let frames = FramePool::new(FrameId(i * share), share);
            let arena = MetaArena::new((pool << PAGE_SHIFT) + i * ARENA_STRIDE);
            let mut mmu = X86Mmu::new(mode, cfg.tlb.geometry(), cfg.tlb.pwc_entries, frames, arena);
            mmu.set_perfect(scenario == Scenario::PerfectTlb);
            mmus.insert(c, mmu);
        }
        Ok(BasePipe {
            layout,
            mmus,
            vivt: scenario == Scenario::Vivt,
        })
    }

    // ---- shared helpers ----------------------------------------------

    /// Sequential translation reads starting at `t`; returns when the last
    /// one completes.
    fn translation_reads(&mut self, addrs: impl IntoIterator<Item = u64>, mut t: u64) -> u64 {
        for a in addrs {
            t = self.dev.service(line_of(a), false, t).done;
            self.st.translation_reads += 1;
        }
        t
    }

    fn demand_read(&mut self, pa: u64, at: u64) -> u64 {
        let done = self.dev.service(line_of(pa), false, at).done;
        self.st.data_reads += 1;
        self.st.data_latency_sum += done - at;
        done
    }

    fn copy_page(&mut self, from: FrameId, to: FrameId, at: u64) {
        self.dev.service(from.address(), false, at);
        self.dev.service(to.address(), true, at);
        self.st.copy_reads += 1;
        self.st.copy_writes += 1;
    }

    fn record(&mut self, event: usize, vbuid: Vbuid, offset: u64, write: bool) {
        self.st.accesses += 1;
        if write {
            self.st.writes += 1;
        } else {
            self.st.reads += 1;
        }
        if let Some(log) = self.log.as_mut() {
            log.push(DataAccess {
                event,
                vbuid,
                offset,
                write,
            });
        }
    }

    fn fault(&mut self, name: &'static str) {
        *self.st.faults.entry(name).or_default() += 1;
        self.core.serialize(self.cfg.core.fault_cycles);
    }

    fn run(&mut self, events: &[TraceEvent]) -> Result<Option<Counters>, RunError> {
        let warmup = self.cfg.core.warmup_instructions;
        let mut snapshot = None;
        for (index, ev) in events.iter().enumerate() {
            if warmup > 0 && snapshot.is_none() && self.core.instructions >= warmup {
                snapshot = Some(self.counters());
            }
            self.before_event();
            match *ev {
                TraceEvent::Exec { icount } => self.core.advance(icount),
                TraceEvent::Mem {
                    write,
                    client,
                    cvt_index,
                    offset,
                    icount_delta,
                } => {
                    self.st.mem_events += 1;
                    self.core.advance(icount_delta);
                    let t = self.core.issue();
                    self.core.advance(1);
                    match self.pipe {
                        Pipe::Base(_) => self.base_mem(index, client, write, t)?,
                        Pipe::Vbi(_) => self.vbi_mem(index, client, cvt_index, offset, write, t)?,
                    }
                }
                _ => {
                    if let Pipe::Vbi(_) = self.pipe {
                        self.vbi_lifecycle(index, ev)?;
                    }
                }
            }
            self.after_event();
        }
        let end = self.core.cycles();
        let wbs = self.caches.flush_all();
        for wb in wbs {
            match self.pipe {
                Pipe::Base(_) => self.base_write_back(wb, end),
                Pipe::Vbi(_) => self.write_back(events.len(), wb, end)?,
            }
        }
        self.after_event();
        Ok(snapshot)
    }

    fn before_event(&mut self) {
        let now = self.core.now();
        let per_cycle = self.cfg.vbi.scrub_lines_per_cycle;
        let Pipe::Vbi(p) = &mut self.pipe else {
            return;
        };
        p.stale.clear();
        if p.sys.registry.scrub_backlog() > 0 {
            let budget = (now - p.last_scrub).saturating_mul(per_cycle);
            let done = p.sys.registry.advance_scrub(budget);
            for v in done {
                self.caches.invalidate_owner(v);
                self.st.scrubbed_vbs += 1;
            }
        }
        p.last_scrub = now;
        if let Some(next) = p.next_epoch
            && now >= next {
                p.next_epoch = Some((now / p.epoch + 1) * p.epoch);
                let copies = p.sys.mtl.epoch_migrate(&mut p.sys.registry);
                self.st.epochs += 1;
                for c in copies {
                    self.copy_page(c.from, c.to, now);
                }
            }
    }

    /// Forgets cached backing addresses of pages that moved.
    fn after_event(&mut self) {
        let Pipe::Vbi(p) = &mut self.pipe else {
            return;
        };
        let moved: BTreeSet<(Vbuid, u64)> = p.sys.mtl.take_remapped().into_iter().collect();
        if moved.is_empty() {
            return;
        }
        self.caches.clear_backing(|addr, line| {
            line.owner
                .is_some_and(|o| moved.contains(&(o, VbiAddress(addr).offset() >> PAGE_SHIFT)))
        });
        p.stale.extend(moved);
    }

    // ---- baselines -----------------------------------------------------

    fn base_mem(&mut self, index: usize, client: ClientId, write: bool, t: u64) -> Result<(), RunError> {
        let Pipe::Base(b) = &self.pipe else { unreachable!() };
        let (vbuid, offset, va) = match b.layout.accesses[index] {
            Some(Resolved::Access { vbuid, offset, va }) => (vbuid, offset, va),
            Some(Resolved::Fault(f)) => {
                self.fault(f.counter_name());
                return Ok(());
            }
            None => unreachable!("MEM records always resolve"),
        };
        let vivt = b.vivt;
        self.record(index, vbuid, offset, write);
        let tag = va | (client.0 as u64) << ASID_SHIFT;
        let mut t = t;
        let mut pa = None;
        if !vivt {
            let (p, ready) = self.base_translate(index, client, va, t)?;
            pa = Some(p);
            t = ready;
        }
        let r = self.caches.access(tag, write);
        for wb in r.writebacks {
            self.base_write_back(wb, t + r.latency);
        }
        let done = if r.level.is_some() {
            t + r.latency
        } else {
            let (pa, ready) = match pa {
                Some(p) => (p, t + r.latency),
                None => {
                    let (p, tt) = self.base_translate(index, client, va, t + self.upper_latency)?;
                    (p, tt.max(t + r.latency))
                }
            };
            let done = self.demand_read(pa, ready);
            let line = Line {
                owner: Some(vbuid),
                backing: Some(line_of(pa)),
                ..Line::default()
            };
            for wb in self.caches.fill(tag, line, write) {
                self.base_write_back(wb, done);
            }
            done
        };
        self.core.complete(done);
        Ok(())
    }

    /// Returns the physical address and the cycle translation finishes.
    fn base_translate(&mut self, index: usize, client: ClientId, va: u64, t: u64) -> Result<(u64, u64), RunError> {
        let Pipe::Base(b) = &mut self.pipe else { unreachable!() };
        let mmu = b.mmus.get_mut(&client).expect("client has an address space");
        let tr = mmu.translate(va).map_err(|_| RunError::OutOfMemory { index })?;
        self.st.translate_calls += 1;
        let mut t = t;
        if tr.faulted {
            self.st.page_faults += 1;
            self.core.serialize(self.cfg.core.fault_cycles);
            t = t.max(self.core.now());
        }
        match tr.tlb {
            TlbLevel::L1 => {}
            TlbLevel::L2 => t += self.cfg.core.l2_tlb_cycles,
            TlbLevel::Miss => {
                self.st.walks += 1;
                self.st.walk_accesses += tr.walk.len() as u64;
                t = self.translation_reads(tr.walk, t + self.cfg.core.l2_tlb_cycles);
            }
        }
        Ok((tr.pa, t))
    }

    fn base_write_back(&mut self, wb: Writeback, t: u64) {
        self.st.evicted_writebacks += 1;
        let pa = wb.line.backing.expect("baseline lines always carry their physical address");
        self.dev.service(pa, true, t);
        self.st.data_writes += 1;
    }

    // ---- VBI -----------------------------------------------------------

    fn vbi(&mut self) -> &mut VbiPipe {
        match &mut self.pipe {
            Pipe::Vbi(p) => p,
            Pipe::Base(_) => unreachable!(),
        }
    }

    fn vbi_mem(
        &mut self,
        index: usize,
        client: ClientId,
        cvt_index: usize,
        offset: u64,
        write: bool,
        t: u64,
    ) -> Result<(), RunError> {
        let kind = if write { AccessKind::Write } else { AccessKind::Read };
        let formed = match self.vbi().sys.protection.check_and_form_address(client, cvt_index, offset, kind) {
            Ok(f) => f,
            Err(f) => {
                self.fault(f.counter_name());
                return Ok(());
            }
        };
        let vbuid = formed.vbuid;
        let addr = formed.address;
        self.record(index, vbuid, offset, write);
        self.vbi().sys.mtl.record_access(vbuid, offset >> PAGE_SHIFT);
        let t = t + if formed.cvt_hit { 0 } else { self.cfg.core.cvt_miss_cycles };
        let r = self.caches.access(addr.raw(), write);
        for wb in r.writebacks {
            self.write_back(index, wb, t + r.latency)?;
        }
        if r.level.is_some() {
            self.core.complete(t + r.latency);
            return Ok(());
        }
        let (ready, mut line, source) = self.vbi_miss(index, vbuid, addr, t)?;
        let done = ready.max(t + r.latency);
        line.owner = Some(vbuid);
        let done = match source {
            Some(pa) => self.demand_read(pa, done),
            None => done,
        };
        for wb in self.caches.fill(addr.raw(), line, write) {
            self.write_back(index, wb, done)?;
        }
        self.core.complete(done);
        Ok(())
    }

    /// Translation for an LLC miss, overlapped with the last-level lookup.
    /// Returns when the data source is known, the line to fill and the
    /// physical address to read it from (none for a zero line).
    fn vbi_miss(
        &mut self,
        index: usize,
        vbuid: Vbuid,
        addr: VbiAddress,
        t: u64,
    ) -> Result<(u64, Line, Option<u64>), RunError> {
        let start = t + self.upper_latency;
        let l2_tlb = self.cfg.core.l2_tlb_cycles;
        let swap = self.cfg.core.swap_in_cycles;
        let p = self.vbi();
        let tr = p.sys.mtl.translate(&mut p.sys.registry, addr).map_err(|e| mtl_error(index, e))?;
        let mut tt = start;
        if let Served::PageTlb(TlbLevel::L2) = tr.served {
            tt += l2_tlb;
        }
        if tr.served == Served::Walk {
            tt += l2_tlb;
        }
        tt = self.translation_reads(tr.vit_access.into_iter().chain(tr.walk), tt);
        let page = addr.offset() >> PAGE_SHIFT;
        let in_page = line_of(page_offset_bits(addr.raw()));
        let p = self.vbi();
        let source = match tr.outcome {
            Outcome::Mapped { pa, cow } => {
                // lines of a shared frame carry no backing, so their
                // writeback goes through copy-on-write resolution
                let line = Line {
                    backing: (!cow).then_some(line_of(pa)),
                    ..Line::default()
                };
                return Ok((tt, line, Some(line_of(pa))));
            }
            Outcome::Unbacked if p.zero_line => {
                p.sys.mtl.note_zero_line();
                let line = Line {
                    zero_filled: true,
                    ..Line::default()
                };
                return Ok((tt, line, None));
            }
            Outcome::Unbacked => p.sys.mtl.ensure_backed(&mut p.sys.registry, vbuid, page),
            Outcome::SwappedOut => {
                tt += swap;
                p.sys.mtl.ensure_backed(&mut p.sys.registry, vbuid, page)
            }
        };
        let pa = source.map_err(|e| mtl_error(index, e))?.address() + in_page;
        let line = Line {
            backing: Some(pa),
            ..Line::default()
        };
        Ok((tt, line, Some(pa)))
    }

    /// Writes a dirty line leaving the LLC back to memory, backing its page
    /// first if needed.
    fn write_back(&mut self, index: usize, wb: Writeback, t: u64) -> Result<(), RunError> {
        self.st.evicted_writebacks += 1;
        let Some(owner) = wb.line.owner else {
            return Ok(());
        };
        let page = VbiAddress(wb.addr).offset() >> PAGE_SHIFT;
        let p = self.vbi();
        if !p.sys.registry.is_enabled(owner) {
            self.st.dropped_writebacks += 1;
            return Ok(());
        }
        let backing = wb.line.backing.filter(|_| !p.stale.contains(&(owner, page)));
        if let Some(pa) = backing {
            self.dev.service(pa, true, t);
            self.st.data_writes += 1;
            return Ok(());
        }
        let tr = p
            .sys
            .mtl
            .translate(&mut p.sys.registry, VbiAddress(wb.addr))
            .map_err(|e| mtl_error(index, e))?;
        let mut tt = self.translation_reads(tr.vit_access.into_iter().chain(tr.walk), t);
        let p = self.vbi();
        let backed = p
            .sys
            .mtl
            .back_for_write(&mut p.sys.registry, owner, page)
            .map_err(|e| mtl_error(index, e))?;
        if let Some(c) = backed.copy {
            self.copy_page(c.from, c.to, tt);
        }
        if backed.swapped_in {
            tt += self.cfg.core.swap_in_cycles;
        }
        let pa = backed.frame.address() + line_of(page_offset_bits(wb.addr));
        self.dev.service(pa, true, tt);
        self.st.data_writes += 1;
        Ok(())
    }

    fn vbi_lifecycle(&mut self, index: usize, ev: &TraceEvent) -> Result<(), RunError> {
        let life = |source: LifecycleError| RunError::Lifecycle { index, source };
        let now = self.core.now();
        match *ev {
            TraceEvent::ReqVb { client, size, props } => {
                self.vbi().sys.request_vb(client, size, props).map_err(life)?;
            }
            TraceEvent::Enable { vbuid, props } => self.vbi().sys.enable_vb(vbuid, props).map_err(life)?,
            TraceEvent::Attach { client, vbuid, perms } => {
                self.vbi().sys.attach(client, vbuid, perms).map_err(life)?;
            }
            TraceEvent::Detach { client, vbuid } => self.vbi().sys.detach(client, vbuid).map_err(life)?,
            TraceEvent::Disable { vbuid } => {
                let lines = self.caches.lines_of(vbuid);
                self.vbi().sys.disable_vb(vbuid, lines).map_err(life)?;
            }
            TraceEvent::Clone { src, dst } => {
                // memory must be current before frames become shared
                for wb in self.caches.flush_owner(src) {
                    self.write_back(index, wb, now)?;
                }
                self.after_event();
                self.vbi().sys.clone_vb(src, dst).map_err(|e| mtl_error(index, e))?;
                self.caches.clear_backing(|_, l| l.owner == Some(src));
            }
            TraceEvent::Promote { client, src, dst } => {
                for wb in self.caches.flush_owner(src) {
                    self.write_back(index, wb, now)?;
                }
                self.after_event();
                self.vbi().sys.promote_vb(client, src, dst).map_err(|e| mtl_error(index, e))?;
                self.caches.invalidate_owner(src);
            }
            TraceEvent::Mem { .. } | TraceEvent::Exec { .. } => unreachable!(),
        }
        Ok(())
    }

    // ---- statistics ----------------------------------------------------

    fn counters(&self) -> Counters {
        let mut c = Counters::new();
        let mut put = |k: &str, v: u64| {
            c.insert(k.to_string(), v);
        };
        let st = &self.st;
        put("cycles", self.core.cycles());
        put("instructions", self.core.instructions);
        put("mem.events", st.mem_events);
        put("mem.accesses", st.accesses);
        put("mem.reads", st.reads);
        put("mem.writes", st.writes);
        for (i, l) in self.caches.levels.iter().enumerate() {
            put(&format!("cache.l{}.hits", i + 1), l.hits);
            put(&format!("cache.l{}.misses", i + 1), l.misses);
        }
        put("cache.invalidations", self.caches.invalidations);
        put("writebacks.total", st.evicted_writebacks);
        put("writebacks.flushed", self.caches.dirty_writebacks);
        put("writebacks.dropped", st.dropped_writebacks);
        put("data.reads", st.data_reads);
        put("data.writes", st.data_writes);
        put("data.latency_sum", st.data_latency_sum);
        put("translation.device_reads", st.translation_reads);
        put("copy.reads", st.copy_reads);
        put("copy.writes", st.copy_writes);
        let mut fault_total = 0;
        for f in vbi_core::Fault::ALL {
            let n = st.faults.get(f.counter_name()).copied().unwrap_or(0);
            fault_total += n;
            put(f.counter_name(), n);
        }
        put("fault.total", fault_total);
        put("page_faults", st.page_faults);
        // device
        put("device.accesses", self.dev.total_accesses());
        let (mut reads, mut writes) = (0, 0);
        for (name, s) in self.region_names.iter().zip(&self.dev.region_stats) {
            reads += s.reads;
            writes += s.writes;
            put(&format!("device.{name}.reads"), s.reads);
            put(&format!("device.{name}.writes"), s.writes);
            put(&format!("device.{name}.row_hits"), s.row_hits);
            put(&format!("device.{name}.row_misses"), s.row_misses);
            put(&format!("device.{name}.row_conflicts"), s.row_conflicts);
            put(&format!("device.{name}.latency_sum"), s.latency_sum);
        }
        put("device.reads", reads);
        put("device.writes", writes);
        let a = &self.dev.auditor;
        put("audit.commands", a.commands);
        put("audit.violations.t_rcd", a.violations.t_rcd);
        put("audit.violations.t_rp", a.violations.t_rp);
        put("audit.violations.t_rrd_act", a.violations.t_rrd_act);
        put("audit.violations.t_rrd_pre", a.violations.t_rrd_pre);
        put("audit.violations.row_state", a.violations.row_state);
        put("audit.violations.total", a.violations.total());
        let tlb_put = |c: &mut Counters, h: &vbi_core::translation::TlbHierarchy| {
            for (name, t) in [("l1_4k", &h.l1_4k), ("l1_2m", &h.l1_2m), ("l2", &h.l2)] {
                *c.entry(format!("tlb.{name}.hits")).or_default() += t.hits;
                *c.entry(format!("tlb.{name}.misses")).or_default() += t.misses;
            }
        };
        match &self.pipe {
            Pipe::Base(b) => {
                let mut allocated = 0;
                for m in b.mmus.values() {
                    tlb_put(&mut c, &m.tlbs);
                    *c.entry("pwc.hits".into()).or_default() += m.pwc.hits;
                    *c.entry("pwc.misses".into()).or_default() += m.pwc.misses;
                    allocated += m.pool().allocated_frames();
                }
                c.insert("frames.allocated".into(), allocated);
                c.insert("translate.calls".into(), st.translate_calls);
                c.insert("walk.count".into(), st.walks);
                c.insert("walk.accesses".into(), st.walk_accesses);
            }
            Pipe::Vbi(p) => {
                let m = &p.sys.mtl;
                tlb_put(&mut c, &m.tlbs);
                let s = &m.stats;
                for (k, v) in [
                    ("pwc.hits", m.pwc.hits),
                    ("pwc.misses", m.pwc.misses),
                    ("vbtlb.hits", m.vb_tlb.hits),
                    ("vbtlb.misses", m.vb_tlb.misses),
                    ("vit.hits", p.sys.registry.cache.hits),
                    ("vit.misses", p.sys.registry.cache.misses),
                    ("cvt.hits", p.sys.protection.cache.hits),
                    ("cvt.misses", p.sys.protection.cache.misses),
                    ("translate.calls", s.translate_calls),
                    ("walk.count", s.walks),
                    ("walk.accesses", s.walk_accesses),
                    ("frames.allocated", s.frames_allocated),
                    ("frames.in_use", m.mem.allocated_frames()),
                    ("frames.reserved", m.mem.reserved_frames()),
                    ("reservations", s.reservations),
                    ("direct_cleared", s.direct_cleared),
                    ("cow.copies", s.cow_copies),
                    ("swap.in", s.swap_in),
                    ("swap.out", s.swap_out),
                    ("zero_line.reads", s.zero_line_reads),
                    ("migrations", s.migrations),
                    ("migration.units", s.migration_units),
                    ("migration.epochs", st.epochs),
                    ("alloc.own_reserved", s.priority[0]),
                    ("alloc.unreserved", s.priority[1]),
                    ("alloc.foreign_reserved", s.priority[2]),
                    ("scrub.completed", st.scrubbed_vbs),
                ] {
                    c.insert(k.into(), v);
                }
            }
        }
        c
    }
}

/// Units the ideal policy places in fast memory: the densest by whole-trace
/// access count, sized by the pages each unit touches.
fn ideal_hot_units(events: &[TraceEvent], fast_frames: u64) -> Result<BTreeSet<Unit>, RunError> {
    let layout = Layout::build(events, 1 << PAGE_SHIFT)?;
    let mut counts: BTreeMap<Unit, (u64, BTreeSet<u64>)> = BTreeMap::new();
    for r in layout.accesses.iter().flatten() {
        if let Resolved::Access { vbuid, offset, .. } = *r {
            let page = offset >> PAGE_SHIFT;
            let e = counts.entry(Unit::of(vbuid, page)).or_default();
            e.0 += 1;
            e.1.insert(page);
        }
    }
    let hot = select_hot(
        counts.iter().map(|(&u, (n, pages))| (u, *n, pages.len() as u64)),
        fast_frames,
    );
    Ok(to_set(hot))
}

pub fn run(events: &[TraceEvent], scenario: Scenario, cfg: &SimConfig) -> Result<StatsReport, RunError> {
    run_with(events, scenario, cfg, RunOptions::default()).map(|o| o.report)
}

pub fn run_with(
    events: &[TraceEvent],
    scenario: Scenario,
    cfg: &SimConfig,
    opts: RunOptions,
) -> Result<RunOutput, RunError> {
    let mut engine = Engine::new(scenario, cfg, events, opts)?;
    let snapshot = engine.run(events)?;
    let mut counters = engine.counters();
    if let Some(before) = snapshot {
        counters = subtract(&counters, &before);
    }
    let policy = scenario.is_het().then_some(cfg.hetero.policy.as_str());
    Ok(RunOutput {
        report: StatsReport::new(scenario.name(), policy, counters),
        accesses: engine.log.take().unwrap_or_default(),
        device: engine.dev,
    })
}

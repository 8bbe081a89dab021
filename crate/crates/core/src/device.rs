//! Bank-level memory device timing with an open-page FCFS scheduler, and an
//! independent auditor that checks the emitted command stream.

use std::collections::BTreeMap;

use crate::physmem::RegionKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub t_rcd: u64,
    pub t_rp: u64,
    pub t_rrd_act: u64,
    pub t_rrd_pre: u64,
    /// Column command to first data.
    pub t_cl: u64,
    /// Data burst.
    pub t_bl: u64,
}

impl Timing {
    pub const DRAM: Timing = Timing {
        t_rcd: 5,
        t_rp: 5,
        t_rrd_act: 3,
        t_rrd_pre: 3,
        t_cl: 5,
        t_bl: 4,
    };
    pub const PCM: Timing = Timing {
        t_rcd: 22,
        t_rp: 60,
        t_rrd_act: 2,
        t_rrd_pre: 11,
        t_cl: 5,
        t_bl: 4,
    };
    pub const TL_FAST: Timing = Timing {
        t_rcd: 3,
        t_rp: 3,
        ..Timing::DRAM
    };
}

/// One address range of the physical space and the device that serves it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionSpec {
    pub kind: RegionKind,
    pub start: u64,
    /// Exclusive; `u64::MAX` for an open-ended last region.
    pub end: u64,
    pub timing: Timing,
    /// Regions with the same device index share banks.
    pub device: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceGeometry {
    pub banks: usize,
    pub row_bytes: u64,
}

impl Default for DeviceGeometry {
    fn default() -> Self {
        DeviceGeometry {
            banks: 8,
            row_bytes: 8 << 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Activate,
    Precharge,
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Command {
    pub time: u64,
    pub device: usize,
    pub bank: usize,
    pub row: u64,
    pub kind: CommandKind,
    pub timing: Timing,
}

#[derive(Debug, Clone, Copy, Default)]
struct Bank {
    open: Option<(u64, Timing)>,
    /// Earliest time the next command to this bank may issue.
    free_at: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RegionStats {
    pub reads: u64,
    pub writes: u64,
    pub row_hits: u64,
    pub row_misses: u64,
    pub row_conflicts: u64,
    pub latency_sum: u64,
}

impl RegionStats {
    pub fn accesses(&self) -> u64 {
        self.reads + self.writes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowOutcome {
    Hit,
    Miss,
    Conflict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Service {
    pub done: u64,
    pub region: usize,
    pub row: RowOutcome,
}

#[derive(Debug, Clone)]
pub struct MemoryDevice {
    geometry: DeviceGeometry,
    regions: Vec<RegionSpec>,
    banks: Vec<Vec<Bank>>,
    last_act: Vec<Option<u64>>,
    last_pre: Vec<Option<u64>>,
    pub region_stats: Vec<RegionStats>,
    /// (device, bank) -> (row hits, accesses)
    pub bank_stats: BTreeMap<(usize, usize), (u64, u64)>,
    pub auditor: Auditor,
    log: Option<Vec<Command>>,
}

impl MemoryDevice {
    pub fn new(geometry: DeviceGeometry, regions: Vec<RegionSpec>) -> Self {
        let devices = regions.iter().map(|r| r.device + 1).max().unwrap_or(0);
        MemoryDevice {
            geometry,
            banks: vec![vec![Bank::default(); geometry.banks]; devices],
            last_act: vec![None; devices],
            last_pre: vec![None; devices],
            region_stats: vec![RegionStats::default(); regions.len()],
            bank_stats: BTreeMap::new(),
            auditor: Auditor::new(geometry.banks, devices),
            log: None,
            regions,
        }
    }

    /// Keeps every emitted command for inspection.
    pub fn record_commands(&mut self) {
        self.log = Some(Vec::new());
    }

    pub fn commands(&self) -> &[Command] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn regions(&self) -> &[RegionSpec] {
        &self.regions
    }

    pub fn region_of(&self, addr: u64) -> usize {
        self.regions
            .iter()
            .position(|r| addr >= r.start && addr < r.end)
            .unwrap_or(self.regions.len() - 1)
    }

    pub fn total_accesses(&self) -> u64 {
        self.region_stats.iter().map(RegionStats::accesses).sum()
    }

    fn emit(&mut self, cmd: Command) {
        self.auditor.check(&cmd);
        if let Some(log) = self.log.as_mut() {
            log.push(cmd);
        }
    }

    /// Serves one line-sized access arriving at `now`; returns when its data
    /// transfer completes.
    pub fn service(&mut self, addr: u64, write: bool, now: u64) -> Service {
        let region = self.region_of(addr);
        let spec = self.regions[region];
        let dev = spec.device;
        let row_index = addr / self.geometry.row_bytes;
        let bank_id = (row_index % self.geometry.banks as u64) as usize;
        let row = row_index / self.geometry.banks as u64;
        let timing = spec.timing;
        let mut bank = self.banks[dev][bank_id];
        let start = now.max(bank.free_at);
        let outcome;
        let col = match bank.open {
            Some((open, _)) if open == row => {
                outcome = RowOutcome::Hit;
                start
            }
            open => {
                let mut act_at = start;
                if let Some((old_row, old_timing)) = open {
                    outcome = RowOutcome::Conflict;
                    let pre = self.last_pre[dev].map_or(start, |p| start.max(p + old_timing.t_rrd_pre));
                    self.last_pre[dev] = Some(pre);
                    self.emit(Command {
                        time: pre,
                        device: dev,
                        bank: bank_id,
                        row: old_row,
                        kind: CommandKind::Precharge,
                        timing: old_timing,
                    });
                    act_at = act_at.max(pre + old_timing.t_rp);
                } else {
                    outcome = RowOutcome::Miss;
                }
                if let Some(last) = self.last_act[dev] {
                    act_at = act_at.max(last + timing.t_rrd_act);
                }
                self.last_act[dev] = Some(act_at);
                self.emit(Command {
                    time: act_at,
                    device: dev,
                    bank: bank_id,
                    row,
                    kind: CommandKind::Activate,
                    timing,
                });
                bank.open = Some((row, timing));
                act_at + timing.t_rcd
            }
        };
        self.emit(Command {
            time: col,
            device: dev,
            bank: bank_id,
            row,
            kind: if write { CommandKind::Write } else { CommandKind::Read },
            timing,
        });
        bank.free_at = col + timing.t_bl;
        self.banks[dev][bank_id] = bank;
        let done = col + timing.t_cl + timing.t_bl;
        let s = &mut self.region_stats[region];
        if write {
            s.writes += 1;
        } else {
            s.reads += 1;
        }
        match outcome {
            RowOutcome::Hit => s.row_hits += 1,
            RowOutcome::Miss => s.row_misses += 1,
            RowOutcome::Conflict => s.row_conflicts += 1,
        }
        s.latency_sum += done - now;
        let b = self.bank_stats.entry((dev, bank_id)).or_default();
        b.0 += (outcome == RowOutcome::Hit) as u64;
        b.1 += 1;
        Service {
            done,
            region,
            row: outcome,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Violations {
    pub t_rcd: u64,
    pub t_rp: u64,
    pub t_rrd_act: u64,
    pub t_rrd_pre: u64,
    /// Column command to a closed bank or a different row.
    pub row_state: u64,
}

impl Violations {
    pub fn total(&self) -> u64 {
        self.t_rcd + self.t_rp + self.t_rrd_act + self.t_rrd_pre + self.row_state
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct AuditBank {
    open: Option<(u64, u64)>,
    last_pre: Option<(u64, Timing)>,
}

/// Replays a command stream against the timing rules. Knows nothing about
/// the scheduler; every constraint is checked from the commands alone.
#[derive(Debug, Clone)]
pub struct Auditor {
    banks: Vec<Vec<AuditBank>>,
    last_act: Vec<Option<u64>>,
    last_pre: Vec<Option<u64>>,
    pub commands: u64,
    pub violations: Violations,
}

impl Auditor {
    pub fn new(banks: usize, devices: usize) -> Self {
        Auditor {
            banks: vec![vec![AuditBank::default(); banks]; devices],
            last_act: vec![None; devices],
            last_pre: vec![None; devices],
            commands: 0,
            violations: Violations::default(),
        }
    }

    pub fn check(&mut self, c: &Command) {
        self.commands += 1;
        let bank = &mut self.banks[c.device][c.bank];
        let v = &mut self.violations;
        match c.kind {
            CommandKind::Activate => {
                if bank.open.is_some() {
                    v.row_state += 1;
                }
                if let Some((t, timing)) = bank.last_pre
                    && c.time < t + timing.t_rp {
                        v.t_rp += 1;
                    }
                if let Some(t) = self.last_act[c.device]
                    && c.time < t + c.timing.t_rrd_act {
                        v.t_rrd_act += 1;
                    }
                self.last_act[c.device] = Some(c.time);
                bank.open = Some((c.row, c.time));
            }
            CommandKind::Precharge => {
                if bank.open.is_none() {
                    v.row_state += 1;
                }
                if let Some(t) = self.last_pre[c.device]
                    && c.time < t + c.timing.t_rrd_pre {
                        v.t_rrd_pre += 1;
                    }
                self.last_pre[c.device] = Some(c.time);
                bank.last_pre = Some((c.time, c.timing));
                bank.open = None;
            }
            CommandKind::Read | CommandKind::Write => match bank.open {
                Some((row, at)) if row == c.row => {
                    if c.time < at + c.timing.t_rcd {
                        v.t_rcd += 1;
                    }
                }
                _ => v.row_state += 1,
            },
        }
    }
}

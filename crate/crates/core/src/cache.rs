//! Three-level non-inclusive, non-exclusive cache hierarchy with LRU
//! replacement. Lines are tagged by whatever address the scenario uses
//! (VBI or virtual); the hierarchy never translates.

use std::collections::{BTreeMap, BTreeSet};

use crate::address::Vbuid;
use crate::lru::SetAssoc;

pub const LINE_SHIFT: u32 = 6;
pub const LINE_BYTES: u64 = 1 << LINE_SHIFT;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelConfig {
    pub size_bytes: u64,
    pub ways: usize,
    pub latency: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheConfig {
    pub levels: Vec<LevelConfig>,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            levels: vec![
                LevelConfig {
                    size_bytes: 32 << 10,
                    ways: 8,
                    latency: 4,
                },
                LevelConfig {
                    size_bytes: 256 << 10,
                    ways: 8,
                    latency: 8,
                },
                LevelConfig {
                    size_bytes: 8 << 20,
                    ways: 16,
                    latency: 31,
                },
            ],
        }
    }
}

/// Per-line state. Data values are not modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Line {
    pub dirty: bool,
    /// Filled from a zero-line service and not written since.
    pub zero_filled: bool,
    pub owner: Option<Vbuid>,
    /// Physical address of the line's backing memory, when known.
    pub backing: Option<u64>,
}

/// Level that served an access; `None` in `AccessResult::level` means a
/// miss at every level.
pub type HitLevel = Option<usize>;

/// A dirty line leaving the last level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Writeback {
    pub addr: u64,
    pub line: Line,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessResult {
    pub level: HitLevel,
    /// Sum of lookup latencies down to the serving level (or all levels on
    /// a miss).
    pub latency: u64,
    pub writebacks: Vec<Writeback>,
}

#[derive(Debug, Clone)]
pub struct CacheLevel {
    lines: SetAssoc<Line>,
    pub latency: u64,
    pub hits: u64,
    pub misses: u64,
}

impl CacheLevel {
    fn new(cfg: LevelConfig) -> Self {
        let entries = (cfg.size_bytes / LINE_BYTES) as usize;
        CacheLevel {
            lines: SetAssoc::new(entries, cfg.ways),
            latency: cfg.latency,
            hits: 0,
            misses: 0,
        }
    }

    pub fn contains(&self, addr: u64) -> bool {
        self.lines.contains(addr >> LINE_SHIFT)
    }

    pub fn peek(&self, addr: u64) -> Option<&Line> {
        self.lines.peek(addr >> LINE_SHIFT)
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct CacheHierarchy {
    pub levels: Vec<CacheLevel>,
    /// Line copies held per owner, across all levels.
    owner_lines: BTreeMap<Vbuid, u64>,
    pub dirty_writebacks: u64,
    pub invalidations: u64,
}

impl CacheHierarchy {
    pub fn new(config: &CacheConfig) -> Self {
        assert!(!config.levels.is_empty());
        CacheHierarchy {
            levels: config.levels.iter().copied().map(CacheLevel::new).collect(),
            owner_lines: BTreeMap::new(),
            dirty_writebacks: 0,
            invalidations: 0,
        }
    }

    pub fn llc(&self) -> &CacheLevel {
        self.levels.last().unwrap()
    }

    pub fn full_miss_latency(&self) -> u64 {
        self.levels.iter().map(|l| l.latency).sum()
    }

    pub fn lines_of(&self, owner: Vbuid) -> u64 {
        self.owner_lines.get(&owner).copied().unwrap_or(0)
    }

    fn count_in(&mut self, owner: Option<Vbuid>) {
        if let Some(o) = owner {
            *self.owner_lines.entry(o).or_default() += 1;
        }
    }

    fn count_out(&mut self, owner: Option<Vbuid>) {
        if let Some(o) = owner
            && let Some(n) = self.owner_lines.get_mut(&o) {
                *n -= 1;
                if *n == 0 {
                    self.owner_lines.remove(&o);
                }
            }
    }

    /// Places `line` at MRU of level `i`, cascading dirty victims down.
    fn insert_at(&mut self, i: usize, key: u64, line: Line, out: &mut Vec<Writeback>) {
        let level = &mut self.levels[i].lines;
        let previous = level.peek(key).map(|l| l.owner);
        let victim = level.insert(key, line);
        if let Some(owner) = previous { self.count_out(owner) }
        self.count_in(line.owner);
        if let Some((vkey, vline)) = victim {
            self.count_out(vline.owner);
            if vline.dirty {
                self.write_down(i + 1, vkey, vline, out);
            }
        }
    }

    /// Absorbs a dirty victim into level `i` (or memory past the last level).
    fn write_down(&mut self, i: usize, key: u64, line: Line, out: &mut Vec<Writeback>) {
        if i == self.levels.len() {
            self.dirty_writebacks += 1;
            out.push(Writeback {
                addr: key << LINE_SHIFT,
                line,
            });
            return;
        }
        if let Some(existing) = self.levels[i].lines.peek_mut(key) {
            existing.dirty = true;
            existing.zero_filled = false;
            if line.backing.is_some() {
                existing.backing = line.backing;
            }
            return;
        }
        self.insert_at(i, key, line, out);
    }

    /// Looks `addr` up level by level. A hit below L1 copies the line (clean)
    /// into the levels above. A write marks the L1 copy dirty. On a miss
    /// nothing is filled; call [`fill`](Self::fill) once the data source is
    /// known.
    pub fn access(&mut self, addr: u64, write: bool) -> AccessResult {
        let key = addr >> LINE_SHIFT;
        let mut latency = 0;
        let mut writebacks = Vec::new();
        for i in 0..self.levels.len() {
            latency += self.levels[i].latency;
            let hit = self.levels[i].lines.lookup(key).map(|l| *l);
            match hit {
                Some(found) => {
                    self.levels[i].hits += 1;
                    let copy = Line { dirty: false, ..found };
                    for up in (0..i).rev() {
                        self.insert_at(up, key, copy, &mut writebacks);
                    }
                    if write {
                        let l1 = self.levels[0].lines.peek_mut(key).expect("just filled");
                        l1.dirty = true;
                        l1.zero_filled = false;
                    }
                    return AccessResult {
                        level: Some(i),
                        latency,
                        writebacks,
                    };
                }
                None => self.levels[i].misses += 1,
            }
        }
        AccessResult {
            level: None,
            latency,
            writebacks,
        }
    }

    /// Installs a missed line in every level; the L1 copy is dirty for
    /// writes.
    pub fn fill(&mut self, addr: u64, line: Line, write: bool) -> Vec<Writeback> {
        let key = addr >> LINE_SHIFT;
        let mut out = Vec::new();
        let clean = Line { dirty: false, ..line };
        for i in (1..self.levels.len()).rev() {
            self.insert_at(i, key, clean, &mut out);
        }
        let top = if write {
            Line {
                dirty: true,
                zero_filled: false,
                ..line
            }
        } else {
            clean
        };
        self.insert_at(0, key, top, &mut out);
        out
    }

    /// Cleans every dirty line matching `pred` and returns one writeback per
    /// distinct line address, carrying the uppermost copy's state.
    pub fn flush_where(&mut self, mut pred: impl FnMut(u64, &Line) -> bool) -> Vec<Writeback> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for level in &mut self.levels {
            for (key, line) in level.lines.iter_mut() {
                if line.dirty && pred(key << LINE_SHIFT, line) {
                    line.dirty = false;
                    if seen.insert(key) {
                        out.push(Writeback {
                            addr: key << LINE_SHIFT,
                            line: Line { dirty: true, ..*line },
                        });
                    }
                }
            }
        }
        out.sort_by_key(|w| w.addr);
        self.dirty_writebacks += out.len() as u64;
        out
    }

    pub fn flush_owner(&mut self, owner: Vbuid) -> Vec<Writeback> {
        self.flush_where(|_, l| l.owner == Some(owner))
    }

    pub fn flush_all(&mut self) -> Vec<Writeback> {
        self.flush_where(|_, _| true)
    }

    /// Distinct dirty line addresses currently held for `owner`.
    pub fn dirty_lines_of(&self, owner: Vbuid) -> usize {
        let mut seen = BTreeSet::new();
        for level in &self.levels {
            for (key, line) in level.lines.iter() {
                if line.dirty && line.owner == Some(owner) {
                    seen.insert(key);
                }
            }
        }
        seen.len()
    }

    /// Drops every copy of `owner`'s lines without writing anything back.
    pub fn invalidate_owner(&mut self, owner: Vbuid) -> u64 {
        let mut n = 0;
        for level in &mut self.levels {
            n += level.lines.retain(|_, l| l.owner != Some(owner)) as u64;
        }
        self.owner_lines.remove(&owner);
        self.invalidations += n;
        n
    }

    /// Forgets the backing address of lines matching `pred`, so their next
    /// writeback goes through translation.
    pub fn clear_backing(&mut self, mut pred: impl FnMut(u64, &Line) -> bool) {
        for level in &mut self.levels {
            for (key, line) in level.lines.iter_mut() {
                if line.backing.is_some() && pred(key << LINE_SHIFT, line) {
                    line.backing = None;
                }
            }
        }
    }
}

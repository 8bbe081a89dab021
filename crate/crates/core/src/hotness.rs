//! Hotness tracking and VB placement for heterogeneous memory.

use std::collections::{BTreeMap, BTreeSet};

use crate::address::{SizeClass, Vbuid};

/// Pages per migration chunk for VBs larger than 4 MB.
pub const CHUNK_PAGES: u64 = 1024;

/// Placement and migration granule: a whole VB, or one 4 MB chunk of a
/// larger VB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Unit {
    pub vbuid: Vbuid,
    pub chunk: u64,
}

impl Unit {
    pub fn of(vbuid: Vbuid, page: u64) -> Unit {
        let chunk = if vbuid.class > SizeClass::MB4 {
            page / CHUNK_PAGES
        } else {
            0
        };
        Unit { vbuid, chunk }
    }

    pub fn pages(&self) -> std::ops::Range<u64> {
        if self.vbuid.class > SizeClass::MB4 {
            self.chunk * CHUNK_PAGES..(self.chunk + 1) * CHUNK_PAGES
        } else {
            0..self.vbuid.class.pages()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlacementPolicy {
    /// Fast region first while it has room, then epoch migration by density.
    Aware,
    /// Round-robin over regions per 4 KB page, no migration.
    Unaware,
    /// Whole-run access counts known up front; no migration.
    Ideal,
}

impl PlacementPolicy {
    pub fn parse(s: &str) -> Option<PlacementPolicy> {
        match s {
            "aware" => Some(PlacementPolicy::Aware),
            "unaware" => Some(PlacementPolicy::Unaware),
            "ideal" => Some(PlacementPolicy::Ideal),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PlacementPolicy::Aware => "aware",
            PlacementPolicy::Unaware => "unaware",
            PlacementPolicy::Ideal => "ideal",
        }
    }
}

/// Per-unit access counters for the current epoch.
#[derive(Debug, Clone, Default)]
pub struct HotnessTracker {
    counts: BTreeMap<Unit, u64>,
}

impl HotnessTracker {
    pub fn record(&mut self, unit: Unit) {
        *self.counts.entry(unit).or_default() += 1;
    }

    pub fn count(&self, unit: Unit) -> u64 {
        self.counts.get(&unit).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn counts(&self) -> &BTreeMap<Unit, u64> {
        &self.counts
    }

    pub fn reset(&mut self) {
        self.counts.clear();
    }

    pub fn forget(&mut self, vbuid: Vbuid) {
        self.counts.retain(|u, _| u.vbuid != vbuid);
    }
}

/// Greedy selection by access density (count per frame), highest first,
/// until `capacity` frames are used. Units with zero accesses are skipped.
/// Ties break on unit order, so the result is deterministic.
pub fn select_hot(
    candidates: impl IntoIterator<Item = (Unit, u64, u64)>,
    capacity: u64,
) -> Vec<Unit> {
    let mut ranked: Vec<(Unit, u64, u64)> = candidates
        .into_iter()
        .filter(|&(_, count, frames)| count > 0 && frames > 0)
        .collect();
    // count_a / frames_a > count_b / frames_b, compared without division
    ranked.sort_by(|a, b| {
        (b.1 as u128 * a.2 as u128)
            .cmp(&(a.1 as u128 * b.2 as u128))
            .then(a.0.cmp(&b.0))
    });
    let mut used = 0;
    let mut hot = Vec::new();
    for (unit, _, frames) in ranked {
        if used + frames <= capacity {
            used += frames;
            hot.push(unit);
        }
    }
    hot
}

pub fn to_set(units: Vec<Unit>) -> BTreeSet<Unit> {
    units.into_iter().collect()
}

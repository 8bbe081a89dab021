pub mod buddy;

use std::collections::HashMap;
use std::fmt;

pub use buddy::{AllocatedBlock, BlockTag, FrameId, FramePool, FreeBlock};

use crate::address::Vbuid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegionKind {
    Dram,
    Pcm,
    TlFast,
    TlSlow,
}

impl RegionKind {
    pub fn name(self) -> &'static str {
        match self {
            RegionKind::Dram => "dram",
            RegionKind::Pcm => "pcm",
            RegionKind::TlFast => "tl_fast",
            RegionKind::TlSlow => "tl_slow",
        }
    }
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct Region {
    pub kind: RegionKind,
    pub pool: FramePool,
}

/// Which allocation class served a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Priority {
    OwnReserved,
    Unreserved,
    /// Taken from another VB's reservation.
    ForeignReserved(Vbuid),
}

impl Priority {
    pub fn rank(self) -> u8 {
        match self {
            Priority::OwnReserved => 1,
            Priority::Unreserved => 2,
            Priority::ForeignReserved(_) => 3,
        }
    }
}

/// Physical frames split into regions, each with its own buddy pool. Frame
/// numbers are global; regions are laid out back to back from frame 0.
/// Frames shared by copy-on-write mappings carry a share count.
#[derive(Debug, Clone)]
pub struct PhysicalMemory {
    regions: Vec<Region>,
    shares: HashMap<FrameId, u32>,
}

impl PhysicalMemory {
    pub fn new(layout: &[(RegionKind, u64)]) -> Self {
        let mut base = 0;
        let regions = layout
            .iter()
            .map(|&(kind, frames)| {
                let pool = FramePool::new(FrameId(base), frames);
                base += frames;
                Region { kind, pool }
            })
            .collect();
        PhysicalMemory {
            regions,
            shares: HashMap::new(),
        }
    }

    pub fn single(frames: u64) -> Self {
        Self::new(&[(RegionKind::Dram, frames)])
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, index: usize) -> &Region {
        &self.regions[index]
    }

    pub fn region_mut(&mut self, index: usize) -> &mut Region {
        &mut self.regions[index]
    }

    pub fn region_of(&self, frame: FrameId) -> Option<usize> {
        self.regions.iter().position(|r| r.pool.contains(frame))
    }

    pub fn total_frames(&self) -> u64 {
        self.regions.iter().map(|r| r.pool.total_frames()).sum()
    }

    /// One past the last frame of the last region.
    pub fn end_frame(&self) -> FrameId {
        self.regions
            .last()
            .map_or(FrameId(0), |r| r.pool.base().offset(r.pool.total_frames()))
    }

    pub fn allocated_frames(&self) -> u64 {
        self.regions.iter().map(|r| r.pool.allocated_frames()).sum()
    }

    pub fn reserved_frames(&self) -> u64 {
        self.regions.iter().map(|r| r.pool.reserved_frames()).sum()
    }

    pub fn free_frames(&self) -> u64 {
        self.total_frames() - self.allocated_frames()
    }

    /// Allocates one frame for `owner` in the first priority class that can
    /// serve it, searching `regions` in order within each class:
    /// own reservation (at `target` if still free, else lowest), then
    /// unreserved, then another VB's reservation.
    pub fn alloc_with_priority(
        &mut self,
        owner: Vbuid,
        target: Option<FrameId>,
        regions: &[usize],
    ) -> Option<(FrameId, Priority)> {
        for &r in regions {
            let pool = &mut self.regions[r].pool;
            if let Some(t) = target.filter(|&t| pool.contains(t)) {
                let own = pool
                    .free_block_containing(t)
                    .is_some_and(|b| b.tag == BlockTag::Reserved(owner));
                if own {
                    pool.alloc_exact(t, Some(owner));
                    return Some((t, Priority::OwnReserved));
                }
            }
        }
        for &r in regions {
            if let Some(f) = self.regions[r].pool.alloc_own_reserved(owner) {
                return Some((f, Priority::OwnReserved));
            }
        }
        for &r in regions {
            if let Some(f) = self.regions[r].pool.alloc(0, Some(owner)) {
                return Some((f, Priority::Unreserved));
            }
        }
        for &r in regions {
            if let Some((f, victim)) = self.regions[r].pool.alloc_foreign_reserved(Some(owner)) {
                return Some((f, Priority::ForeignReserved(victim)));
            }
        }
        None
    }

    /// Allocates an unreserved frame in exactly `region`.
    pub fn alloc_in(&mut self, region: usize, owner: Option<Vbuid>) -> Option<FrameId> {
        self.regions[region].pool.alloc(0, owner)
    }

    pub fn reserve(&mut self, region: usize, order: u8, owner: Vbuid) -> Option<FrameId> {
        self.regions[region].pool.reserve(order, owner)
    }

    pub fn largest_unreserved_order(&self, region: usize) -> Option<u8> {
        self.regions[region].pool.largest_unreserved_order()
    }

    pub fn reserved_for(&self, owner: Vbuid) -> u64 {
        self.regions.iter().map(|r| r.pool.reserved_for(owner)).sum()
    }

    pub fn unreserve_all(&mut self, owner: Vbuid) -> u64 {
        self.regions.iter_mut().map(|r| r.pool.unreserve_all(owner)).sum()
    }

    pub fn share_count(&self, frame: FrameId) -> u32 {
        self.shares.get(&frame).copied().unwrap_or(1)
    }

    pub fn add_sharer(&mut self, frame: FrameId) {
        *self.shares.entry(frame).or_insert(1) += 1;
    }

    /// Drops one reference to `frame`; the frame returns to its pool when
    /// the last reference goes. Returns whether it was freed.
    pub fn release(&mut self, frame: FrameId) -> bool {
        if let Some(n) = self.shares.get_mut(&frame) {
            *n -= 1;
            if *n <= 1 {
                self.shares.remove(&frame);
            }
            return false;
        }
        let r = self.region_of(frame).expect("frame belongs to a region");
        self.regions[r].pool.free(frame).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::address::SizeClass;

    #[test]
    fn regions_are_back_to_back() {
        let m = PhysicalMemory::new(&[(RegionKind::Dram, 16), (RegionKind::Pcm, 48)]);
        assert_eq!(m.region_of(FrameId(15)), Some(0));
        assert_eq!(m.region_of(FrameId(16)), Some(1));
        assert_eq!(m.end_frame(), FrameId(64));
        assert_eq!(m.total_frames(), 64);
    }

    #[test]
    fn priority_order() {
        let a = Vbuid::new(SizeClass::MB4, 0);
        let b = Vbuid::new(SizeClass::MB4, 1);
        let mut m = PhysicalMemory::single(8);
        m.reserve(0, 1, a).unwrap(); // frames 0,1
        m.reserve(0, 1, b).unwrap(); // frames 2,3
        // target inside own reservation
        assert_eq!(m.alloc_with_priority(a, Some(FrameId(1)), &[0]), Some((FrameId(1), Priority::OwnReserved)));
        assert_eq!(m.alloc_with_priority(a, Some(FrameId(1)), &[0]), Some((FrameId(0), Priority::OwnReserved)));
        // unreserved before b's reservation
        assert_eq!(m.alloc_with_priority(a, None, &[0]), Some((FrameId(4), Priority::Unreserved)));
        for _ in 0..3 {
            m.alloc_with_priority(a, None, &[0]).unwrap();
        }
        assert_eq!(m.alloc_with_priority(a, None, &[0]), Some((FrameId(2), Priority::ForeignReserved(b))));
    }

    #[test]
    fn shared_frames_free_on_last_release() {
        let mut m = PhysicalMemory::single(4);
        let f = m.alloc_in(0, None).unwrap();
        m.add_sharer(f);
        m.add_sharer(f);
        assert_eq!(m.share_count(f), 3);
        assert!(!m.release(f));
        assert!(!m.release(f));
        assert_eq!(m.allocated_frames(), 1);
        assert!(m.release(f));
        assert_eq!(m.allocated_frames(), 0);
    }
}

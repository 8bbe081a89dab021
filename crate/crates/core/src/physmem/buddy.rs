//! Binary-buddy pool of 4 KB frames with per-block reservation tags.
//!
//! Free blocks carry a tag: unreserved, or reserved for one VB. Buddies only
//! coalesce when both halves are free with the same tag. Allocation is
//! deterministic: the lowest-addressed block of the smallest sufficient order.

use std::collections::{BTreeMap, BTreeSet};

use crate::address::Vbuid;

/// Global frame number; physical address is `frame << 12`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameId(pub u64);

impl FrameId {
    pub fn address(self) -> u64 {
        self.0 << crate::address::PAGE_SHIFT
    }

    pub fn offset(self, frames: u64) -> FrameId {
        FrameId(self.0 + frames)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockTag {
    Unreserved,
    Reserved(Vbuid),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeBlock {
    pub start: FrameId,
    pub order: u8,
    pub tag: BlockTag,
}

impl FreeBlock {
    pub fn frames(&self) -> u64 {
        1 << self.order
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocatedBlock {
    pub start: FrameId,
    pub order: u8,
    pub owner: Option<Vbuid>,
}

#[derive(Debug, Clone)]
pub struct FramePool {
    base: u64,
    total: u64,
    max_order: u8,
    /// Every free block keyed by relative start frame.
    free: BTreeMap<u64, (u8, BlockTag)>,
    /// Unreserved free blocks per order.
    unreserved: Vec<BTreeSet<u64>>,
    /// Reserved free blocks per owner, as (order, start).
    reserved: BTreeMap<Vbuid, BTreeSet<(u8, u64)>>,
    allocated: BTreeMap<u64, (u8, Option<Vbuid>)>,
    allocated_frames: u64,
    reserved_frames: u64,
}

impl FramePool {
    /// A pool of `total` frames whose first frame is `base`. The range is
    /// carved into maximal naturally-aligned blocks.
    pub fn new(base: FrameId, total: u64) -> Self {
        let max_order = if total == 0 { 0 } else { 63 - total.leading_zeros() } as u8;
        let mut pool = FramePool {
            base: base.0,
            total,
            max_order,
            free: BTreeMap::new(),
            unreserved: vec![BTreeSet::new(); max_order as usize + 1],
            reserved: BTreeMap::new(),
            allocated: BTreeMap::new(),
            allocated_frames: 0,
            reserved_frames: 0,
        };
        let mut start = 0u64;
        while start < total {
            let align = if start == 0 { max_order as u32 } else { start.trailing_zeros() };
            let mut order = align.min(max_order as u32);
            while start + (1 << order) > total {
                order -= 1;
            }
            pool.put_free(start, order as u8, BlockTag::Unreserved);
            start += 1 << order;
        }
        pool
    }

    pub fn base(&self) -> FrameId {
        FrameId(self.base)
    }

    pub fn total_frames(&self) -> u64 {
        self.total
    }

    pub fn max_order(&self) -> u8 {
        self.max_order
    }

    pub fn allocated_frames(&self) -> u64 {
        self.allocated_frames
    }

    pub fn reserved_frames(&self) -> u64 {
        self.reserved_frames
    }

    pub fn free_frames(&self) -> u64 {
        self.total - self.allocated_frames
    }

    pub fn unreserved_free_frames(&self) -> u64 {
        self.free_frames() - self.reserved_frames
    }

    pub fn contains(&self, frame: FrameId) -> bool {
        frame.0 >= self.base && frame.0 < self.base + self.total
    }

    fn rel(&self, frame: FrameId) -> u64 {
        frame.0 - self.base
    }

    fn abs(&self, rel: u64) -> FrameId {
        FrameId(self.base + rel)
    }

    fn put_free(&mut self, start: u64, order: u8, tag: BlockTag) {
        self.free.insert(start, (order, tag));
        match tag {
            BlockTag::Unreserved => {
                self.unreserved[order as usize].insert(start);
            }
            BlockTag::Reserved(v) => {
                self.reserved.entry(v).or_default().insert((order, start));
                self.reserved_frames += 1 << order;
            }
        }
    }

    fn take_free(&mut self, start: u64) -> (u8, BlockTag) {
        let (order, tag) = self.free.remove(&start).expect("free block exists");
        match tag {
            BlockTag::Unreserved => {
                self.unreserved[order as usize].remove(&start);
            }
            BlockTag::Reserved(v) => {
                let set = self.reserved.get_mut(&v).expect("owner index");
                set.remove(&(order, start));
                if set.is_empty() {
                    self.reserved.remove(&v);
                }
                self.reserved_frames -= 1 << order;
            }
        }
        (order, tag)
    }

    /// Inserts a free block and merges it with same-tag buddies.
    fn release(&mut self, mut start: u64, mut order: u8, tag: BlockTag) {
        while order < self.max_order {
            let buddy = start ^ (1 << order);
            match self.free.get(&buddy) {
                Some(&(o, t)) if o == order && t == tag => {
                    self.take_free(buddy);
                    start = start.min(buddy);
                    order += 1;
                }
                _ => break,
            }
        }
        self.put_free(start, order, tag);
    }

    /// Splits the free block at `start` down to `order`, returning the upper
    /// halves to the free lists with the block's tag.
    fn split_to(&mut self, start: u64, order: u8) -> BlockTag {
        let (mut cur, tag) = self.take_free(start);
        while cur > order {
            cur -= 1;
            self.put_free(start + (1 << cur), cur, tag);
        }
        tag
    }

    fn mark_allocated(&mut self, start: u64, order: u8, owner: Option<Vbuid>) -> FrameId {
        self.allocated.insert(start, (order, owner));
        self.allocated_frames += 1 << order;
        self.abs(start)
    }

    /// Lowest unreserved block of the smallest order `>= order`.
    fn find_unreserved(&self, order: u8) -> Option<u64> {
        (order..=self.max_order).find_map(|o| self.unreserved[o as usize].first().copied())
    }

    pub fn alloc(&mut self, order: u8, owner: Option<Vbuid>) -> Option<FrameId> {
        if order > self.max_order {
            return None;
        }
        let start = self.find_unreserved(order)?;
        self.split_to(start, order);
        Some(self.mark_allocated(start, order, owner))
    }

    /// Frees an allocated block. Freed frames come back unreserved.
    pub fn free(&mut self, frame: FrameId) -> Option<AllocatedBlock> {
        if !self.contains(frame) {
            return None;
        }
        let start = self.rel(frame);
        let (order, owner) = self.allocated.remove(&start)?;
        self.allocated_frames -= 1 << order;
        self.release(start, order, BlockTag::Unreserved);
        Some(AllocatedBlock {
            start: frame,
            order,
            owner,
        })
    }

    /// Free block containing `frame`, if any.
    pub fn free_block_containing(&self, frame: FrameId) -> Option<FreeBlock> {
        if !self.contains(frame) {
            return None;
        }
        let rel = self.rel(frame);
        let (&start, &(order, tag)) = self.free.range(..=rel).next_back()?;
        (rel < start + (1 << order)).then(|| FreeBlock {
            start: self.abs(start),
            order,
            tag,
        })
    }

    /// Allocates exactly `frame` (order 0) out of whatever free block holds
    /// it, keeping the remaining pieces free under their old tag. Returns the
    /// tag the frame carried.
    pub fn alloc_exact(&mut self, frame: FrameId, owner: Option<Vbuid>) -> Option<BlockTag> {
        let block = self.free_block_containing(frame)?;
        let target = self.rel(frame);
        let (mut start, mut order) = (self.rel(block.start), block.order);
        let tag = self.take_free(start).1;
        while order > 0 {
            order -= 1;
            let half = 1 << order;
            if target >= start + half {
                self.put_free(start, order, tag);
                start += half;
            } else {
                self.put_free(start + half, order, tag);
            }
        }
        self.mark_allocated(start, 0, owner);
        Some(tag)
    }

    /// Reserves a free, unreserved block of `order` for `owner` (lowest
    /// address, smallest sufficient order). Returns its first frame.
    pub fn reserve(&mut self, order: u8, owner: Vbuid) -> Option<FrameId> {
        if order > self.max_order {
            return None;
        }
        let start = self.find_unreserved(order)?;
        self.split_to(start, order);
        self.put_free(start, order, BlockTag::Reserved(owner));
        Some(self.abs(start))
    }

    pub fn largest_unreserved_order(&self) -> Option<u8> {
        (0..=self.max_order)
            .rev()
            .find(|&o| !self.unreserved[o as usize].is_empty())
    }

    /// Allocates one frame from `owner`'s reserved blocks: lowest address of
    /// the smallest order.
    pub fn alloc_own_reserved(&mut self, owner: Vbuid) -> Option<FrameId> {
        let &(order, start) = self.reserved.get(&owner)?.first()?;
        let _ = order;
        self.alloc_exact(self.abs(start), Some(owner)).map(|_| self.abs(start))
    }

    /// Allocates one frame from some other VB's reservation. Picks the
    /// smallest order, then lowest address, across all other owners.
    pub fn alloc_foreign_reserved(&mut self, requester: Option<Vbuid>) -> Option<(FrameId, Vbuid)> {
        let (owner, start) = self
            .reserved
            .iter()
            .filter(|(v, _)| Some(**v) != requester)
            .filter_map(|(v, set)| set.first().map(|&(o, s)| (o, s, *v)))
            .min()
            .map(|(_, s, v)| (v, s))?;
        let frame = self.abs(start);
        self.alloc_exact(frame, requester)?;
        Some((frame, owner))
    }

    pub fn reserved_for(&self, owner: Vbuid) -> u64 {
        self.reserved
            .get(&owner)
            .map_or(0, |s| s.iter().map(|(o, _)| 1u64 << o).sum())
    }

    /// Returns every free block reserved for `owner` to the unreserved pool.
    pub fn unreserve_all(&mut self, owner: Vbuid) -> u64 {
        let blocks: Vec<(u8, u64)> = self
            .reserved
            .get(&owner)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        let mut frames = 0;
        for (order, start) in blocks {
            self.take_free(start);
            self.release(start, order, BlockTag::Unreserved);
            frames += 1 << order;
        }
        frames
    }

    pub fn free_blocks(&self) -> Vec<FreeBlock> {
        self.free
            .iter()
            .map(|(&s, &(order, tag))| FreeBlock {
                start: self.abs(s),
                order,
                tag,
            })
            .collect()
    }

    pub fn allocated_blocks(&self) -> Vec<AllocatedBlock> {
        self.allocated
            .iter()
            .map(|(&s, &(order, owner))| AllocatedBlock {
                start: self.abs(s),
                order,
                owner,
            })
            .collect()
    }

    pub fn is_allocated(&self, frame: FrameId) -> bool {
        self.contains(frame) && self.allocated.contains_key(&self.rel(frame))
    }
}

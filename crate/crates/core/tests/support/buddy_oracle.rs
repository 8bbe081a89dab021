//! Brute-force bitmap oracle for the buddy pool and the prioritised frame
//! allocator. Shared by the core tests and the simulator's acceptance run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vbi_core::physmem::buddy::{BlockTag, FramePool};
use vbi_core::physmem::Priority;
use vbi_core::{FrameId, PhysicalMemory, SizeClass, Vbuid};

pub const FRAMES: u64 = 256;

fn aligned_run_free(map: &[bool], order: u8) -> bool {
    let n = 1usize << order;
    (0..map.len()).step_by(n).any(|s| s + n <= map.len() && map[s..s + n].iter().all(|&a| !a))
}

/// Checks the pool's free and allocated views against `map`.
fn audit(pool: &FramePool, map: &[bool]) -> Result<(), String> {
    let used = map.iter().filter(|&&a| a).count() as u64;
    if pool.allocated_frames() != used || pool.free_frames() + used != FRAMES {
        return Err(format!(
            "conservation: pool says {} allocated / {} free, oracle {used} allocated",
            pool.allocated_frames(),
            pool.free_frames()
        ));
    }
    let mut cover = vec![0u8; map.len()];
    let free = pool.free_blocks();
    for b in &free {
        if b.start.0 % b.frames() != 0 {
            return Err(format!("free block {:?} misaligned", b));
        }
        for f in b.start.0..b.start.0 + b.frames() {
            if map[f as usize] {
                return Err(format!("free block {:?} covers allocated frame {f}", b));
            }
            cover[f as usize] += 1;
        }
    }
    for b in pool.allocated_blocks() {
        for f in b.start.0..b.start.0 + (1 << b.order) {
            cover[f as usize] += 1;
        }
    }
    if let Some(f) = cover.iter().position(|&c| c != 1) {
        return Err(format!("frame {f} covered {} times", cover[f]));
    }
    for b in &free {
        if b.order >= pool.max_order() {
            continue;
        }
        let buddy = b.start.0 ^ b.frames();
        if free.iter().any(|o| o.start.0 == buddy && o.order == b.order && o.tag == b.tag) {
            return Err(format!("free buddies {:?} and {buddy} not merged", b));
        }
    }
    Ok(())
}

/// One random alloc/free sequence on an unreserved pool.
pub fn buddy_sequence(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = FramePool::new(FrameId(0), FRAMES);
    let mut map = vec![false; FRAMES as usize];
    let mut live: Vec<(u64, u8)> = Vec::new();
    let ops = rng.random_range(10..80);
    for step in 0..ops {
        let err = |m: String| format!("seed {seed} step {step}: {m}");
        if live.is_empty() || rng.random_bool(0.6) {
            let order = [0u8, 0, 0, 1, 1, 2, 3, 4, 5, 6][rng.random_range(0..10)];
            let possible = aligned_run_free(&map, order);
            match pool.alloc(order, None) {
                Some(f) => {
                    let s = f.0 as usize;
                    let n = 1usize << order;
                    if !s.is_multiple_of(n) || s + n > map.len() || map[s..s + n].iter().any(|&a| a) {
                        return Err(err(format!("alloc order {order} returned bad block {s}")));
                    }
                    map[s..s + n].iter_mut().for_each(|a| *a = true);
                    live.push((f.0, order));
                }
                None if possible => return Err(err(format!("alloc order {order} failed with a free aligned run"))),
                None => {}
            }
        } else {
            let (start, order) = live.swap_remove(rng.random_range(0..live.len()));
            match pool.free(FrameId(start)) {
                Some(b) if b.order == order => {}
                other => return Err(err(format!("free {start} returned {other:?}"))),
            }
            let s = start as usize;
            map[s..s + (1 << order)].iter_mut().for_each(|a| *a = false);
        }
        audit(&pool, &map).map_err(err)?;
    }
    Ok(())
}

/// One random reserve/alloc/release sequence checking that each frame comes
/// from the highest-priority class that had a free frame.
pub fn priority_sequence(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mem = PhysicalMemory::single(FRAMES);
    let owners: Vec<Vbuid> = (0..3).map(|i| Vbuid::new(SizeClass::MB4, i)).collect();
    let mut held: Vec<FrameId> = Vec::new();
    let ops = rng.random_range(10..80);
    for step in 0..ops {
        let err = |m: String| format!("seed {seed} step {step}: {m}");
        let owner = owners[rng.random_range(0..owners.len())];
        match rng.random_range(0..10) {
            0 | 1 => {
                mem.reserve(0, rng.random_range(0..5), owner);
            }
            2 | 3 if !held.is_empty() => {
                let f = held.swap_remove(rng.random_range(0..held.len()));
                if !mem.release(f) {
                    return Err(err(format!("release of {f:?} did not free it")));
                }
            }
            _ => {
                let free = mem.region(0).pool.free_blocks();
                let own = free.iter().any(|b| b.tag == BlockTag::Reserved(owner));
                let unres = free.iter().any(|b| b.tag == BlockTag::Unreserved);
                let foreign = free.iter().any(|b| matches!(b.tag, BlockTag::Reserved(v) if v != owner));
                let target = rng.random_bool(0.3).then(|| FrameId(rng.random_range(0..FRAMES)));
                let target_own = target.is_some_and(|t| {
                    mem.region(0).pool.free_block_containing(t).is_some_and(|b| b.tag == BlockTag::Reserved(owner))
                });
                let got = mem.alloc_with_priority(owner, target, &[0]);
                let ok = match got {
                    Some((f, Priority::OwnReserved)) => own && (!target_own || Some(f) == target),
                    Some((_, Priority::Unreserved)) => !own && unres,
                    Some((_, Priority::ForeignReserved(v))) => !own && !unres && foreign && v != owner,
                    None => !own && !unres && !foreign,
                };
                if !ok {
                    return Err(err(format!(
                        "got {got:?} with own={own} unreserved={unres} foreign={foreign} target={target:?}"
                    )));
                }
                if let Some((f, _)) = got {
                    if !mem.region(0).pool.is_allocated(f) || held.contains(&f) {
                        return Err(err(format!("frame {f:?} handed out twice or not marked")));
                    }
                    held.push(f);
                }
            }
        }
        let pool = &mem.region(0).pool;
        if pool.allocated_frames() != held.len() as u64 {
            return Err(err(format!("{} frames allocated, {} held", pool.allocated_frames(), held.len())));
        }
    }
    Ok(())
}

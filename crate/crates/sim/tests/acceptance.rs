//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails or overruns its time limit.

#[path = "../../core/tests/support/buddy_oracle.rs"]
mod buddy_oracle;

use std::panic::{AssertUnwindSafe, catch_unwind};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vbi_core::address::{decode, encode};
use vbi_core::cache::{CacheHierarchy, Line};
use vbi_core::mtl::Outcome;
use vbi_core::physmem::buddy::FramePool;
use vbi_core::translation::{MetaArena, TlbGeometry, X86Mmu, X86Mode};
use vbi_core::{
    AccessKind, AddressingMode, ClientId, FrameId, Mtl, MtlConfig, PhysicalMemory, Props, SizeClass, VbRegistry,
    VbiSystem, Vbuid,
};
use vbi_sim::{GenSpec, Scenario, SimConfig, TraceEvent, generate, run};

type Check = Result<String, String>;
type Criterion = (&'static str, u64, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn spec(s: &str) -> GenSpec {
    s.parse().expect("valid generator spec")
}

// ---- criteria -------------------------------------------------------------

fn codec() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..1_000_000u32 {
        let class = SizeClass::new(rng.random_range(0..8)).unwrap();
        let vm = i % 2 == 1;
        let mode = if vm { AddressingMode::Vm } else { AddressingMode::Native };
        let vm_id = vm.then(|| rng.random_range(0..32u8));
        let vbid = rng.random::<u64>() & class.max_vbid(mode);
        let offset = rng.random::<u64>() % class.size_bytes();
        let a = encode(class, vm_id, vbid, offset, mode).map_err(|e| e.to_string())?;
        let d = decode(a, mode);
        ensure((d.class, d.vm_id, d.vbid, d.offset) == (class, vm_id, vbid, offset), || {
            format!("tuple {i}: {:?} decoded as {d:?}", (class, vm_id, vbid, offset))
        })?;
    }
    let native = AddressingMode::Native;
    ensure(SizeClass::KB4.vbid_bits(native) == 49, || "4 KB vbid bits".into())?;
    ensure(SizeClass::TB128.vbid_bits(native) == 14, || "128 TB vbid bits".into())?;
    let g = SizeClass::GB4;
    let split = (3, AddressingMode::Vm.vm_id_bits(), g.vbid_bits(AddressingMode::Vm), g.offset_bits());
    ensure(split == (3, 5, 24, 32), || format!("4 GB VM split {split:?}"))?;
    let a = encode(g, Some(31), (1 << 24) - 1, (1 << 32) - 1, AddressingMode::Vm).unwrap();
    ensure(a.raw() == (4u64 << 61) | ((1u64 << 61) - 1), || format!("4 GB VM max address {:#x}", a.raw()))?;
    Ok("10^6 tuples lossless; vbid bits 49/14; VM 4 GB split 3/5/24/32".into())
}

fn nested_walks() -> Check {
    let mut got = Vec::new();
    for (mode, want) in [(X86Mode::Nested4k, 24), (X86Mode::Native4k, 4), (X86Mode::Native2m, 3)] {
        let frames = 1 << 16;
        let mut m = X86Mmu::new(
            mode,
            TlbGeometry::default(),
            32,
            FramePool::new(FrameId(0), frames),
            MetaArena::new(frames << 12),
        );
        let n = m.translate(0x7654_3210_8000).map_err(|e| e.to_string())?.walk.len();
        ensure(n == want, || format!("{mode:?}: {n} accesses, want {want}"))?;
        got.push(n);
    }
    Ok(format!("nested/native/native2m = {got:?}"))
}

fn vbi_depth(class: SizeClass, early: bool) -> Result<usize, String> {
    let mode = AddressingMode::Native;
    let mut reg = VbRegistry::new(mode);
    let config = MtlConfig {
        early_reservation: early,
        ..MtlConfig::default()
    };
    let mut mtl = Mtl::new(mode, config, PhysicalMemory::single(class.pages().max(1024)));
    let v = Vbuid::new(class, 0);
    reg.enable_vb(v, Props::empty()).map_err(|e| e.to_string())?;
    let page = class.pages() / 2;
    mtl.ensure_backed(&mut reg, v, page).map_err(|e| e.to_string())?;
    let t = mtl
        .translate(&mut reg, v.address(page << 12, mode).unwrap())
        .map_err(|e| e.to_string())?;
    ensure(matches!(t.outcome, Outcome::Mapped { .. }), || format!("{class}: page not mapped"))?;
    Ok(t.walk.len())
}

fn walk_depths() -> Check {
    let want = [
        (SizeClass::KB4, 0),
        (SizeClass::KB128, 1),
        (SizeClass::MB4, 1),
        (SizeClass::MB128, 2),
        (SizeClass::GB4, 3),
        (SizeClass::TB128, 4),
    ];
    let mut got = Vec::new();
    for (class, d) in want {
        let n = vbi_depth(class, false)?;
        ensure(n == d, || format!("{class}: depth {n}, want {d}"))?;
        got.push(n);
    }
    for class in SizeClass::ALL {
        let n = vbi_depth(class, true)?;
        ensure(n == 0, || format!("early-reserved {class}: depth {n}"))?;
    }
    Ok(format!("depths {got:?}; early-reserved 0 for all 8 classes"))
}

fn buddy() -> Check {
    for seed in 0..10_000 {
        buddy_oracle::buddy_sequence(seed)?;
        buddy_oracle::priority_sequence(seed)?;
    }
    Ok("10^4 alloc/free and 10^4 priority sequences match the oracle".into())
}

fn delayed_allocation() -> Check {
    let events = generate(&spec("kind=split,vbs=4,size=128M,accesses=100000,writes=1000"), 7).map_err(|e| e.to_string())?;
    let cfg = SimConfig::default();
    let v = run(&events, Scenario::Vbi2, &cfg).map_err(|e| e.to_string())?;
    let p = run(&events, Scenario::PerfectTlb, &cfg).map_err(|e| e.to_string())?;
    let (frames, reads) = (v.get("frames.allocated"), v.get("data.reads"));
    let (dv, dp) = (v.get("device.accesses"), p.get("device.accesses"));
    ensure(frames == 1000, || format!("vbi2 allocated {frames} frames"))?;
    ensure(reads == 0, || format!("vbi2 issued {reads} data reads"))?;
    ensure(dv < dp, || format!("device accesses vbi2 {dv} >= perfect_tlb {dp}"))?;
    Ok(format!("frames {frames}, data reads {reads}, device accesses {dv} vs {dp}"))
}

fn cvt_cache() -> Check {
    let events = generate(&spec("kind=roundrobin,vbs=48,size=4M,accesses=200000"), 3).map_err(|e| e.to_string())?;
    let mut cfg = SimConfig::default();
    cfg.core.warmup_instructions = 10_000;
    let r = run(&events, Scenario::Vbi1, &cfg).map_err(|e| e.to_string())?;
    let rate = r.derived("cvt.hit_rate");
    ensure(r.get("cvt.hits") > 0 && rate >= 0.999, || format!("hit rate {rate:.5}"))?;
    Ok(format!("hit rate {:.4}%", rate * 100.0))
}

fn mem(client: u16, idx: usize, offset: u64, write: bool) -> TraceEvent {
    TraceEvent::Mem {
        write,
        client: ClientId(client),
        cvt_index: idx,
        offset,
        icount_delta: 1,
    }
}

fn cow_clone_promote() -> Check {
    let mode = AddressingMode::Native;
    let mut s = VbiSystem::new(mode, MtlConfig::default(), PhysicalMemory::single(4096));
    let (_, a) = s.request_vb(ClientId(0), 4 << 20, Props::empty()).map_err(|e| e.to_string())?;
    let (_, b) = s.request_vb(ClientId(1), 4 << 20, Props::empty()).map_err(|e| e.to_string())?;
    let frames: Vec<FrameId> = (0..16).map(|p| s.mtl.ensure_backed(&mut s.registry, a, p).unwrap()).collect();
    s.clone_vb(a, b).map_err(|e| e.to_string())?;
    for (p, &f) in frames.iter().enumerate() {
        ensure(s.mtl.frame_of(b, p as u64) == Some(f), || format!("clone page {p} not shared"))?;
    }
    let w = s.mtl.back_for_write(&mut s.registry, b, 5).map_err(|e| e.to_string())?;
    ensure(w.copy.is_some_and(|c| c.from == frames[5] && c.to != frames[5]), || "write did not copy".into())?;
    ensure(s.mtl.frame_of(a, 5) == Some(frames[5]), || "source lost its frame".into())?;
    ensure(s.mtl.mem.allocated_frames() == 17, || format!("{} frames after divergence", s.mtl.mem.allocated_frames()))?;

    let c = ClientId(2);
    let (idx, small) = s.request_vb(c, 128 << 10, Props::empty()).map_err(|e| e.to_string())?;
    let held: Vec<(u64, FrameId)> = [0, 9, 31].iter().map(|&p| (p, s.mtl.ensure_backed(&mut s.registry, small, p).unwrap())).collect();
    let big = Vbuid::new(SizeClass::MB4, 7);
    s.enable_vb(big, Props::empty()).map_err(|e| e.to_string())?;
    let before = s.mtl.mem.allocated_frames();
    s.promote_vb(c, small, big).map_err(|e| e.to_string())?;
    let f = s.protection.check_and_form_address(c, idx, 0, AccessKind::Read).map_err(|e| format!("{e:?}"))?;
    ensure(f.vbuid == big, || "CVT entry not repointed".into())?;
    for (p, frame) in held {
        ensure(s.mtl.frame_of(big, p) == Some(frame), || format!("promoted page {p} moved"))?;
    }
    let t = s.mtl.translate(&mut s.registry, big.address(600 << 12, mode).unwrap()).map_err(|e| e.to_string())?;
    ensure(t.outcome == Outcome::Unbacked, || "new range backed eagerly".into())?;
    ensure(s.mtl.mem.allocated_frames() == before, || "promotion allocated frames".into())?;

    // dirty lines held for a VB all come back from a flush, once each
    let mut caches = CacheHierarchy::new(&Default::default());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut dirty = std::collections::BTreeSet::new();
    for _ in 0..200_000 {
        let addr = rng.random_range(0..20_000u64) << 6;
        let write = rng.random_bool(0.3);
        let r = caches.access(addr, write);
        let mut wbs = r.writebacks;
        if r.level.is_none() {
            wbs.extend(caches.fill(addr, Line { owner: Some(a), ..Line::default() }, write));
        }
        for wb in wbs {
            dirty.remove(&wb.addr);
        }
        if write {
            dirty.insert(addr);
        }
    }
    let flushed = caches.flush_owner(a).len();
    ensure(flushed == dirty.len(), || format!("flushed {flushed}, held {}", dirty.len()))?;

    // same through the simulator: a clone flushes the source's dirty lines
    let mut events = vec![
        TraceEvent::ReqVb { client: ClientId(0), size: 4 << 20, props: Props::empty() },
        TraceEvent::ReqVb { client: ClientId(1), size: 4 << 20, props: Props::empty() },
    ];
    for i in 0..300u64 {
        events.push(mem(0, 0, (i * 7 % 300) << 6, true));
        events.push(mem(0, 0, i << 6, false));
    }
    events.push(TraceEvent::Clone { src: Vbuid::new(SizeClass::MB4, 0), dst: Vbuid::new(SizeClass::MB4, 1) });
    let r = run(&events, Scenario::Vbi1, &SimConfig::default()).map_err(|e| e.to_string())?;
    ensure(r.get("writebacks.flushed") == 300 && r.get("data.writes") == 300, || {
        format!("clone flushed {} lines, wrote {}", r.get("writebacks.flushed"), r.get("data.writes"))
    })?;
    Ok(format!("clone/CoW/promote frame audit ok; flush {flushed} == held {}", dirty.len()))
}

fn scenario_ordering() -> Check {
    let cfg = SimConfig::default();
    let mut lines = Vec::new();
    for seed in 0..10 {
        let events = generate(&spec("kind=skew,vbs=10,size=4M,accesses=60000,write_frac=0.3"), seed).map_err(|e| e.to_string())?;
        let get = |sc: Scenario| run(&events, sc, &cfg).map_err(|e| format!("seed {seed} {}: {e}", sc.name()));
        let (p, n, v) = (get(Scenario::PerfectTlb)?, get(Scenario::Native)?, get(Scenario::Virtual)?);
        let (cp, cn, cv) = (p.get("cycles"), n.get("cycles"), v.get("cycles"));
        ensure(cp <= cn && cn <= cv, || format!("seed {seed}: cycles perfect {cp} native {cn} virtual {cv}"))?;
        let vivt = get(Scenario::Vivt)?;
        let (calls, misses) = (vivt.get("translate.calls"), vivt.get("cache.l3.misses"));
        ensure(calls <= misses, || format!("seed {seed}: vivt calls {calls} > LLC misses {misses}"))?;
        let (w1, wf) = (get(Scenario::Vbi1)?.get("walk.accesses"), get(Scenario::VbiFull)?.get("walk.accesses"));
        ensure(wf <= w1, || format!("seed {seed}: vbifull walks {wf} > vbi1 {w1}"))?;
        if seed == 0 {
            lines.push(format!("seed 0: cycles {cp}/{cn}/{cv}, vivt {calls}/{misses}, walks {wf}/{w1}"));
        }
    }
    Ok(format!("10 seeds hold; {}", lines.join("")))
}

fn het_ordering() -> Check {
    let events = generate(&spec("kind=skew,vbs=10,size=4M,accesses=300000,write_frac=0.2,hot_frac=0.1,hot_prob=0.9"), 2)
        .map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for sc in [Scenario::HetPcmDram, Scenario::HetTlDram] {
        let mut lat = Vec::new();
        for policy in ["ideal", "aware", "unaware"] {
            let mut cfg = SimConfig::default();
            cfg.memory.pool_bytes = 64 << 20;
            cfg.hetero.epoch_cycles = 200_000;
            cfg.hetero.policy = policy.into();
            let r = run(&events, sc, &cfg).map_err(|e| e.to_string())?;
            let bad = ["t_rcd", "t_rp", "t_rrd_act", "t_rrd_pre"].map(|k| r.get(&format!("audit.violations.{k}")));
            ensure(bad.iter().all(|&n| n == 0) && r.get("audit.commands") > 0, || {
                format!("{} {policy}: violations {bad:?}", sc.name())
            })?;
            lat.push(r.derived("avg_access_latency"));
        }
        ensure(lat[0] <= lat[1] && lat[1] <= lat[2], || format!("{}: ideal/aware/unaware {lat:?}", sc.name()))?;
        summary.push(format!("{} {:.2}/{:.2}/{:.2}", sc.name(), lat[0], lat[1], lat[2]));
    }
    Ok(format!("{}; 0 timing violations", summary.join(", ")))
}

fn determinism() -> Check {
    let events = generate(&spec("kind=skew,vbs=6,size=4M,accesses=40000,write_frac=0.3"), 11).map_err(|e| e.to_string())?;
    let text = vbi_sim::trace::to_string(&events);
    let reparsed = vbi_sim::trace::parse_str(&text).map_err(|e| e.to_string())?;
    let again = generate(&spec("kind=skew,vbs=6,size=4M,accesses=40000,write_frac=0.3"), 11).map_err(|e| e.to_string())?;
    ensure(again == events, || "generator is not deterministic".into())?;
    let mut cfg = SimConfig::default();
    cfg.memory.pool_bytes = 64 << 20;
    cfg.hetero.epoch_cycles = 200_000;
    for sc in Scenario::ALL {
        let a = run(&events, sc, &cfg).map_err(|e| e.to_string())?.to_json();
        let b = run(&reparsed, sc, &cfg).map_err(|e| e.to_string())?.to_json();
        ensure(a == b, || format!("{}: outputs differ", sc.name()))?;
    }
    Ok(format!("{} scenarios byte-identical", Scenario::ALL.len()))
}

// ---- driver ---------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 10] = [
        ("address codec round trip", 5, codec),
        ("x86 cold walk counts", 1, nested_walks),
        ("VBI walk depths", 1, walk_depths),
        ("buddy oracle and allocation priority", 30, buddy),
        ("delayed allocation", 60, delayed_allocation),
        ("CVT cache hit rate", 10, cvt_cache),
        ("CoW, clone, promote and dirty flush", 10, cow_clone_promote),
        ("scenario ordering", 120, scenario_ordering),
        ("heterogeneous placement ordering", 120, het_ordering),
        ("determinism", 60, determinism),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let result = match result {
            Ok(d) if took > Duration::from_secs(limit) => Err(format!("{d}; took {took:.2?} (limit {limit} s)")),
            r => r,
        };
        match result {
            Ok(detail) => println!("PASS {:>2} {name} [{took:.2?}]: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name} [{took:.2?}]: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

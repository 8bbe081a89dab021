use vbi_core::{ClientId, Props, SizeClass, Vbuid};
use vbi_sim::{GenSpec, RunError, RunOptions, Scenario, SimConfig, TraceEvent, generate, run, run_with};

fn spec(s: &str) -> GenSpec {
    s.parse().unwrap()
}

fn small_cfg() -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.memory.pool_bytes = 64 << 20;
    cfg.hetero.epoch_cycles = 200_000;
    cfg
}

#[test]
fn empty_trace_is_all_zero() {
    for sc in Scenario::ALL {
        let r = run(&[], sc, &small_cfg()).unwrap();
        assert_eq!(r.get("cycles"), 0, "{}", sc.name());
        assert_eq!(r.get("device.accesses"), 0, "{}", sc.name());
    }
}

#[test]
fn exec_only_trace_runs_at_the_base_cpi() {
    let events: Vec<TraceEvent> = (0..1000).map(|_| TraceEvent::Exec { icount: 1 }).collect();
    for sc in Scenario::ALL {
        let r = run(&events, sc, &small_cfg()).unwrap();
        assert_eq!((r.get("instructions"), r.get("cycles")), (1000, 250), "{}", sc.name());
    }
}

#[test]
fn read_only_trace_allocates_nothing_under_vbi2() {
    let events = generate(&spec("kind=uniform,vbs=4,accesses=20000,write_frac=0"), 4).unwrap();
    let r = run(&events, Scenario::Vbi2, &SimConfig::default()).unwrap();
    assert_eq!(r.get("frames.allocated"), 0);
    assert_eq!(r.get("data.reads"), 0);
    assert!(r.get("zero_line.reads") > 0);
    let p = run(&events, Scenario::PerfectTlb, &SimConfig::default()).unwrap();
    assert!(r.get("device.accesses") < p.get("device.accesses"));
}

#[test]
fn baseline_and_vbi_see_the_same_accesses() {
    let events = generate(&spec("kind=skew,vbs=6,accesses=20000"), 9).unwrap();
    let opts = RunOptions {
        record_accesses: true,
        ..RunOptions::default()
    };
    let native = run_with(&events, Scenario::Native, &SimConfig::default(), opts).unwrap();
    let vbi = run_with(&events, Scenario::Vbi1, &SimConfig::default(), opts).unwrap();
    assert_eq!(native.accesses.len(), 20000);
    assert_eq!(native.accesses, vbi.accesses);
}

#[test]
fn baselines_share_data_traffic_and_cache_behaviour() {
    let events = generate(&spec("kind=uniform,vbs=8,accesses=30000"), 1).unwrap();
    let cfg = SimConfig::default();
    let reports: Vec<_> = [Scenario::Native, Scenario::Native2m, Scenario::PerfectTlb, Scenario::Vbi1]
        .into_iter()
        .map(|sc| run(&events, sc, &cfg).unwrap())
        .collect();
    for r in &reports[1..] {
        assert_eq!(r.get("cache.l3.misses"), reports[0].get("cache.l3.misses"), "{}", r.scenario);
        assert_eq!(
            r.get("data.reads") + r.get("data.writes"),
            reports[0].get("data.reads") + reports[0].get("data.writes"),
            "{}",
            r.scenario
        );
    }
}

#[test]
fn vivt_translates_only_on_llc_misses() {
    let events = generate(&spec("kind=chase,vbs=4,accesses=20000"), 2).unwrap();
    let r = run(&events, Scenario::Vivt, &SimConfig::default()).unwrap();
    assert!(r.get("translate.calls") <= r.get("cache.l3.misses"));
    assert!(r.get("translate.calls") > 0);
}

#[test]
fn large_pages_walk_less() {
    let events = generate(&spec("kind=uniform,vbs=8,size=32M,accesses=20000"), 5).unwrap();
    let cfg = SimConfig::default();
    let small = run(&events, Scenario::Native, &cfg).unwrap();
    let large = run(&events, Scenario::Native2m, &cfg).unwrap();
    assert!(large.get("walk.accesses") < small.get("walk.accesses"));
    let nested = run(&events, Scenario::Virtual, &cfg).unwrap();
    assert!(nested.get("walk.accesses") > small.get("walk.accesses"));
}

#[test]
fn lifecycle_violation_reports_the_event() {
    let events = vec![
        TraceEvent::ReqVb { client: ClientId(0), size: 4096, props: Props::empty() },
        TraceEvent::Exec { icount: 3 },
        TraceEvent::Disable { vbuid: Vbuid::new(SizeClass::KB4, 0) },
    ];
    for sc in [Scenario::Native, Scenario::Vbi2] {
        match run(&events, sc, &SimConfig::default()) {
            Err(e @ RunError::Lifecycle { index: 2, .. }) => assert_eq!(e.exit_code(), 3),
            other => panic!("{}: {other:?}", sc.name()),
        }
    }
}

#[test]
fn protection_faults_are_counted_not_fatal() {
    let events = vec![
        TraceEvent::ReqVb { client: ClientId(0), size: 4096, props: Props::empty() },
        TraceEvent::Mem { write: false, client: ClientId(0), cvt_index: 0, offset: 8192, icount_delta: 0 },
        TraceEvent::Mem { write: false, client: ClientId(0), cvt_index: 4, offset: 0, icount_delta: 0 },
        TraceEvent::Mem { write: true, client: ClientId(0), cvt_index: 0, offset: 64, icount_delta: 0 },
    ];
    for sc in [Scenario::Native, Scenario::Vbi1] {
        let r = run(&events, sc, &SimConfig::default()).unwrap();
        assert_eq!(r.get("fault.total"), 2, "{}", sc.name());
        assert_eq!(r.get("mem.accesses"), 1, "{}", sc.name());
    }
}

#[test]
fn skew_generator_concentrates_on_the_hot_vb() {
    let events = generate(&spec("kind=skew,vbs=10,accesses=1000000,hot_frac=0.1,hot_prob=0.9"), 8).unwrap();
    let mut per_vb = [0u64; 10];
    for e in &events {
        if let TraceEvent::Mem { cvt_index, .. } = e {
            per_vb[*cvt_index] += 1;
        }
    }
    let total: u64 = per_vb.iter().sum();
    assert_eq!(total, 1_000_000);
    assert!(per_vb[0] as f64 / total as f64 >= 0.89, "{per_vb:?}");
}

#[test]
fn het_policies_report_their_name() {
    let events = generate(&spec("kind=skew,vbs=4,accesses=5000"), 1).unwrap();
    for policy in ["ideal", "aware", "unaware"] {
        let mut cfg = small_cfg();
        cfg.hetero.policy = policy.into();
        let r = run(&events, Scenario::HetTlDram, &cfg).unwrap();
        assert_eq!(r.policy.as_deref(), Some(policy));
        assert_eq!(r.get("audit.violations.total"), 0);
    }
}

#[test]
fn warmup_excludes_early_work() {
    let events = generate(&spec("kind=uniform,vbs=4,accesses=10000"), 3).unwrap();
    let mut cfg = SimConfig::default();
    let full = run(&events, Scenario::Vbi1, &cfg).unwrap();
    cfg.core.warmup_instructions = 20_000;
    let warm = run(&events, Scenario::Vbi1, &cfg).unwrap();
    assert!(warm.get("instructions") < full.get("instructions"));
    assert!(warm.get("cycles") < full.get("cycles"));
}

use proptest::prelude::*;
use vbi_core::{AddressingMode, ClientId, Perms, Props, SizeClass, Vbuid};
use vbi_sim::core_model::CoreModel;
use vbi_sim::{GenSpec, Scenario, SimConfig, TraceEvent, generate, run, trace};

fn vbuid() -> impl Strategy<Value = Vbuid> {
    (0u8..8, any::<u64>()).prop_map(|(c, id)| {
        let class = SizeClass::new(c).unwrap();
        Vbuid::new(class, id & class.max_vbid(AddressingMode::Native))
    })
}

fn event() -> impl Strategy<Value = TraceEvent> {
    let client = any::<u16>().prop_map(ClientId);
    let props = (0u16..256).prop_map(Props::from_bits_truncate);
    prop_oneof![
        (any::<bool>(), client.clone(), 0usize..1024, any::<u64>(), 0u64..1000).prop_map(|(write, client, cvt_index, offset, icount_delta)| {
            TraceEvent::Mem { write, client, cvt_index, offset, icount_delta }
        }),
        (0u64..1 << 40).prop_map(|icount| TraceEvent::Exec { icount }),
        (client.clone(), 1u64..1 << 47, props.clone()).prop_map(|(client, size, props)| TraceEvent::ReqVb { client, size, props }),
        (vbuid(), props).prop_map(|(vbuid, props)| TraceEvent::Enable { vbuid, props }),
        vbuid().prop_map(|vbuid| TraceEvent::Disable { vbuid }),
        (client.clone(), vbuid(), 1u8..8).prop_map(|(client, vbuid, p)| TraceEvent::Attach {
            client,
            vbuid,
            perms: Perms::from_bits_truncate(p),
        }),
        (client.clone(), vbuid()).prop_map(|(client, vbuid)| TraceEvent::Detach { client, vbuid }),
        (vbuid(), vbuid()).prop_map(|(src, dst)| TraceEvent::Clone { src, dst }),
        (client, vbuid(), vbuid()).prop_map(|(client, src, dst)| TraceEvent::Promote { client, src, dst }),
    ]
}

proptest! {
    #[test]
    fn trace_text_round_trips(events in prop::collection::vec(event(), 0..60)) {
        let text = trace::to_string(&events);
        prop_assert_eq!(trace::parse_str(&text).unwrap(), events);
    }

    #[test]
    fn core_never_beats_the_base_cpi(
        steps in prop::collection::vec((0u64..50, 0u64..400, any::<bool>()), 1..300),
        limit in 1usize..16,
    ) {
        let mut core = CoreModel::new(250, limit);
        let mut last_done = 0;
        for (n, lat, fault) in steps {
            core.advance(n);
            let t = core.issue();
            core.advance(1);
            last_done = t + lat;
            core.complete(last_done);
            if fault {
                core.serialize(100);
            }
        }
        prop_assert!(core.cycles() >= core.instructions.div_ceil(4));
        prop_assert!(core.cycles() >= last_done);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn translation_cost_orders_baselines(
        seed in any::<u64>(),
        kind in prop_oneof![Just("skew"), Just("uniform"), Just("chase")],
        vbs in 2usize..12,
        write_frac in 0.0f64..0.6,
    ) {
        let spec: GenSpec = format!("kind={kind},vbs={vbs},accesses=8000,write_frac={write_frac}").parse().unwrap();
        let events = generate(&spec, seed).unwrap();
        let cfg = SimConfig::default();
        let cycles = |sc| run(&events, sc, &cfg).unwrap().get("cycles");
        let (p, n, v) = (cycles(Scenario::PerfectTlb), cycles(Scenario::Native), cycles(Scenario::Virtual));
        prop_assert!(p <= n && n <= v, "perfect {} native {} virtual {}", p, n, v);
    }

    #[test]
    fn runs_are_reproducible(seed in any::<u64>(), sc in prop::sample::select(Scenario::ALL.to_vec())) {
        let spec: GenSpec = "kind=skew,vbs=4,accesses=4000".parse().unwrap();
        let events = generate(&spec, seed).unwrap();
        let mut cfg = SimConfig::default();
        cfg.memory.pool_bytes = 64 << 20;
        prop_assert_eq!(run(&events, sc, &cfg).unwrap().to_json(), run(&events, sc, &cfg).unwrap().to_json());
    }
}

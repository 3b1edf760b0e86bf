use rezone_core::cost::{
    account, compare, event_cost, smc_slices, world_switch, Bucket, CostTerm, CostWeights, DeploymentConfig, WeightsError,
    Workload,
};
use rezone_core::trace::Lookup;
use rezone_core::{AccessKind, ExceptionLevel, Ns, Phase, TraceEvent, World};

fn mem(lookup: Lookup) -> TraceEvent {
    TraceEvent::Mem {
        core: 0,
        el: ExceptionLevel::El1,
        world: World::Normal,
        pa: 0x100,
        ns: Ns::NON_SECURE,
        access: AccessKind::Read,
        lookup,
        allowed: true,
    }
}

#[test]
fn empty_trace_costs_nothing() {
    let b = account(&[], &CostWeights::default());
    assert_eq!(b.total.to_bits(), 0.0f64.to_bits());
    assert!(b.buckets.is_empty());
    assert!(b.quantities.is_empty());
}

#[test]
fn flush_is_charged_per_line() {
    let events = [TraceEvent::Flush { core: 0, lines: 7 }];
    let b = account(&events, &CostWeights::default());
    assert_eq!(b.total, 7.0);
    assert_eq!(b.quantity(CostTerm::CacheLineFlush), 7);
    let w = CostWeights { cache_line_flush: 2.5, ..CostWeights::default() };
    assert_eq!(account(&events, &w).total, 17.5);
}

#[test]
fn uncached_access_pays_the_penalty_on_top() {
    let mut w = CostWeights::uniform(0.0);
    w.mem_access = 1.0;
    w.uncached_fetch = 10.0;
    assert_eq!(event_cost(&mem(Lookup::Hit), &w), 1.0);
    assert_eq!(event_cost(&mem(Lookup::Uncached), &w), 11.0);
}

#[test]
fn events_land_in_their_phase_bucket() {
    let events = [
        TraceEvent::Smc { core: 0, id: 100 },
        TraceEvent::Phase { core: 0, phase: Phase::Flush },
        TraceEvent::Flush { core: 0, lines: 3 },
        TraceEvent::Phase { core: 0, phase: Phase::Tlbi },
        TraceEvent::Tlbi { entries: 2 },
        TraceEvent::SmcResult { core: 0, id: 100, ok: true },
        mem(Lookup::Hit),
    ];
    let b = account(&events, &CostWeights::default());
    assert_eq!(b.bucket(Bucket::Dispatch), 1.0);
    assert_eq!(b.bucket(Bucket::Phase(Phase::Flush)), 3.0);
    assert_eq!(b.bucket(Bucket::Phase(Phase::Tlbi)), 1.0);
    assert_eq!(b.bucket(Bucket::Normal), 1.0);
    assert_eq!(b.total, 6.0);
    assert_eq!(b.smc_calls, 1);
}

#[test]
fn idle_workload_costs_the_same_everywhere() {
    let w = CostWeights::default();
    let totals: Vec<f64> = DeploymentConfig::ALL
        .iter()
        .map(|&d| account(&Workload::Idle.run(d).unwrap(), &w).total)
        .collect();
    assert!(totals.windows(2).all(|p| p[0] == p[1]), "{totals:?}");
}

#[test]
fn partitioned_switch_runs_the_full_protocol() {
    let w = CostWeights::default();
    let rz = world_switch(DeploymentConfig::Rz, &w).unwrap();
    let norz = world_switch(DeploymentConfig::NoRz, &w).unwrap();
    // Unlock and lock around both reconfigurations.
    assert_eq!(rz.quantity(CostTerm::MqRoundtrip), 4);
    assert_eq!(rz.quantity(CostTerm::TlbInvalidate), 1);
    assert!(rz.quantity(CostTerm::CacheLineFlush) > 0);
    assert!(rz.quantity(CostTerm::PpcConfigWrite) > 0);
    for t in [CostTerm::MqRoundtrip, CostTerm::TlbInvalidate, CostTerm::CacheLineFlush, CostTerm::PpcConfigWrite] {
        assert_eq!(norz.quantity(t), 0, "{t:?}");
    }
    for p in [Phase::Flush, Phase::Tlbi, Phase::Unlock, Phase::Reconfigure, Phase::Isolate] {
        assert!(rz.bucket(Bucket::Phase(p)) > 0.0, "{p:?}");
        assert_eq!(norz.bucket(Bucket::Phase(p)), 0.0);
    }
    assert!(rz.total > norz.total);
    // The call in, and the zone's trap back out.
    assert_eq!(rz.smc_calls, 2);
    assert_eq!(norz.smc_calls, 2);
    assert_eq!(rz.zone_entries, 1);
}

#[test]
fn one_slice_per_call() {
    let events = Workload::Chatty { calls: 3 }.run(DeploymentConfig::Rz).unwrap();
    let slices = smc_slices(&events, 0);
    assert_eq!(slices.len(), 3);
    for s in slices {
        assert!(matches!(s.first(), Some(TraceEvent::Smc { .. })));
        assert!(matches!(s.last(), Some(TraceEvent::SmcResult { ok: true, .. })));
    }
}

#[test]
fn comparison_covers_every_cell() {
    let t = compare(&DeploymentConfig::ALL, &Workload::BUNDLED, &CostWeights::default()).unwrap();
    assert_eq!(t.rows.len(), 15);
    for wl in Workload::BUNDLED {
        assert_eq!(t.get(&wl.name(), DeploymentConfig::NoRz).unwrap().overhead, 1.0);
    }
    let csv = t.to_csv();
    assert_eq!(csv.lines().count(), 16);
    assert!(csv.starts_with("workload,config,total,smc_calls,zone_entries,overhead\n"));
}

#[test]
fn weights_file_overrides_named_terms_only() {
    let w = CostWeights::from_toml("cache_line_flush = 3.0\n").unwrap();
    assert_eq!(w.cache_line_flush, 3.0);
    assert_eq!(w.mq_roundtrip, CostWeights::default().mq_roundtrip);
    assert!(matches!(CostWeights::from_toml("bogus = 1.0"), Err(WeightsError::Parse(_))));
    assert!(matches!(
        CostWeights::from_toml("tlb_invalidate = -1.0"),
        Err(WeightsError::Negative(CostTerm::TlbInvalidate))
    ));
}

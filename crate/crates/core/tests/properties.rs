use std::collections::BTreeSet;
use std::sync::OnceLock;

use proptest::prelude::*;
use rezone_core::cluster::{Cache, CacheLine, CoreState};
use rezone_core::cost::{account, CostTerm, CostWeights, DeploymentConfig, Workload};
use rezone_core::gatekeeper::{GatekeeperState, MqKind, MqMessage};
use rezone_core::setup::{va, SimBuilder, ZONE1, ZONE1_SMC, ZONE2, ZONE2_SMC};
use rezone_core::{
    reference_permission, AccessContext, AccessKind, BusMasterId, ConfigEdit, DomainId, ExceptionLevel,
    LayoutConfig, MemoryLayout, Ns, Op, Permission, PeriphId, PpcConfig, PpcState, Property, RandomScheduler,
    RegionKind, RunStatus, SimConfig, TraceEvent, World, ZoneId, ZoneManifest, ZoneOp, MU_A, MU_B,
};

fn layout() -> MemoryLayout {
    MemoryLayout::build(
        &[
            ZoneManifest::new(ZoneId(1), 64 << 10, 100..200),
            ZoneManifest::new(ZoneId(2), 64 << 10, 200..300),
            ZoneManifest::new(ZoneId(3), 64 << 10, 300..400),
        ],
        &LayoutConfig { peripheral_count: 5, ..LayoutConfig::default() },
    )
    .unwrap()
}

fn booted_ppc(l: &MemoryLayout) -> PpcState {
    let mut p = PpcState::new(&PpcConfig::default());
    p.boot_init(l, &PpcConfig::default()).unwrap();
    p
}

fn any_el() -> impl Strategy<Value = ExceptionLevel> {
    prop_oneof![Just(ExceptionLevel::El0), Just(ExceptionLevel::El1), Just(ExceptionLevel::El3)]
}

fn any_context() -> impl Strategy<Value = AccessContext> {
    (any::<bool>(), any_el(), proptest::option::of(1u16..=3), any::<bool>()).prop_filter_map(
        "EL3 is secure only",
        |(secure, el, zone, window)| {
            let world = if secure { World::Secure } else { World::Normal };
            AccessContext::new(world, el, zone.map(ZoneId), window).ok()
        },
    )
}

fn any_whitelist() -> impl Strategy<Value = BTreeSet<PeriphId>> {
    proptest::collection::btree_set((1u16..=5).prop_map(PeriphId), 0..=5)
}

fn any_region(l: &MemoryLayout) -> impl Strategy<Value = RegionKind> {
    proptest::sample::select(l.kinds().collect::<Vec<_>>())
}

fn any_edit() -> impl Strategy<Value = ConfigEdit> {
    let perm = prop_oneof![Just(Permission::NA), Just(Permission::RO), Just(Permission::RW)];
    let did = (0u8..6).prop_map(DomainId);
    let mid = (0u8..3).prop_map(BusMasterId);
    prop_oneof![
        (did.clone(), any_region(&layout()), perm).prop_map(|(did, region, perm)| ConfigEdit::SetPerm {
            did,
            region,
            perm
        }),
        (mid.clone(), did.clone()).prop_map(|(mid, did)| ConfigEdit::Bind { mid, did }),
        (mid, did).prop_map(|(mid, did)| ConfigEdit::Unbind { mid, did }),
        any::<bool>().prop_map(|locked| ConfigEdit::SetLock { locked }),
    ]
}

proptest! {
    #[test]
    fn matrix_never_exposes_secrets(ctx in any_context(), wl in any_whitelist(), region in any_region(&layout())) {
        let p = reference_permission(&ctx, region, &wl);
        // Gatekeeper memory and the ACU side of the message unit are
        // unreachable from the cluster.
        if region == RegionKind::Gatekeeper || region == RegionKind::Peripheral(MU_B) {
            prop_assert_eq!(p, Permission::NA);
        }
        if region == RegionKind::PpcMmio && !ctx.ppc_unlocked_window() {
            prop_assert_eq!(p, Permission::NA);
        }
        match ctx.world() {
            World::Normal => {
                let open = matches!(region, RegionKind::Ree | RegionKind::Shared);
                prop_assert_eq!(p, if open { Permission::RW } else { Permission::NA });
            }
            World::Secure => {
                if let (Some(active), RegionKind::Zone(z)) = (ctx.active_zone(), region) {
                    prop_assert_eq!(p == Permission::NA, z != active);
                }
                if ctx.active_zone().is_some() {
                    if matches!(region, RegionKind::Monitor | RegionKind::Ree) {
                        prop_assert_eq!(p, Permission::NA);
                    }
                    if region == RegionKind::Trampoline {
                        prop_assert_eq!(p, Permission::RO);
                    }
                    if let RegionKind::Peripheral(id) = region {
                        let granted = id == MU_A || (id != MU_B && wl.contains(&id));
                        prop_assert_eq!(p == Permission::RW, granted);
                    }
                }
            }
        }
    }

    #[test]
    fn matrix_ignores_exception_level_below_el3(zone in 1u16..=3, wl in any_whitelist(), region in any_region(&layout())) {
        let el0 = AccessContext::zone(ZoneId(zone), ExceptionLevel::El0);
        let el1 = AccessContext::zone(ZoneId(zone), ExceptionLevel::El1);
        prop_assert_eq!(reference_permission(&el0, region, &wl), reference_permission(&el1, region, &wl));
    }

    #[test]
    fn programmed_zone_row_matches_matrix(zone in 1u16..=3, wl in any_whitelist()) {
        let l = layout();
        let mut p = booted_ppc(&l);
        let unlock = ConfigEdit::SetLock { locked: false };
        prop_assert!(p.write_config(BusMasterId::ACU, unlock).applied());
        let open = ConfigEdit::SetPerm { did: DomainId::CLUSTER, region: RegionKind::PpcMmio, perm: Permission::RW };
        prop_assert!(p.write_config(BusMasterId::ACU, open).applied());
        let outcomes = p.apply_zone_row(BusMasterId::CLUSTER, ZoneId(zone), &wl, &l);
        prop_assert!(outcomes.iter().all(|(_, o)| o.applied()));
        let lock = ConfigEdit::SetLock { locked: true };
        prop_assert!(p.write_config(BusMasterId::ACU, lock).applied());
        let ctx = AccessContext::zone(ZoneId(zone), ExceptionLevel::El1);
        for (region, perm) in p.cluster_row(&l) {
            prop_assert_eq!(perm, reference_permission(&ctx, region, &wl), "{:?}", region);
            for access in [AccessKind::Read, AccessKind::Write] {
                let verdict = p.check(BusMasterId::CLUSTER, region, access).unwrap();
                prop_assert_eq!(verdict.is_allow(), perm.allows(access));
            }
        }
        prop_assert!(!p.check(BusMasterId::CLUSTER, RegionKind::PpcMmio, AccessKind::Write).unwrap().is_allow());
    }

    #[test]
    fn locked_controller_ignores_the_cluster(edits in proptest::collection::vec(any_edit(), 1..40)) {
        let l = layout();
        let mut p = booted_ppc(&l);
        let before = p.clone();
        for e in edits {
            prop_assert!(!p.write_config(BusMasterId::CLUSTER, e).applied());
        }
        prop_assert_eq!(p, before);
    }

    #[test]
    fn acu_keeps_its_privileges(edits in proptest::collection::vec(any_edit(), 1..60)) {
        let l = layout();
        let mut p = booted_ppc(&l);
        for e in edits {
            p.write_config(BusMasterId::ACU, e);
            prop_assert!(p.domains_of(BusMasterId::ACU).is_some_and(|d| d.contains(&DomainId::ACU)));
            for region in [RegionKind::PpcMmio, RegionKind::Gatekeeper] {
                prop_assert_eq!(p.perm(DomainId::ACU, region), Permission::RW);
            }
            if p.is_locked() {
                prop_assert_eq!(p.perm(DomainId::CLUSTER, RegionKind::PpcMmio), Permission::NA);
            }
        }
    }

    #[test]
    fn cache_lookups_respect_the_ns_bit(
        inserts in proptest::collection::vec((0u64..8, 0u8..2, any::<u64>()), 1..40),
        capacity in 1usize..6,
    ) {
        let mut c = Cache::new(capacity);
        let mut model: Vec<(u64, u8, u64)> = Vec::new();
        for (line, ns, data) in inserts {
            let pa = line * 64;
            c.insert(CacheLine { pa, ns: Ns(ns), data, dirty: true });
            if let Some(slot) = model.iter_mut().find(|(p, n, _)| *p == pa && *n == ns) {
                slot.2 = data;
            } else {
                if model.len() == capacity {
                    model.remove(0);
                }
                model.push((pa, ns, data));
            }
            prop_assert!(c.len() <= capacity);
        }
        for line in 0u64..8 {
            for ns in 0u8..2 {
                let pa = line * 64;
                let want = model.iter().find(|(p, n, _)| *p == pa && *n == ns).map(|m| m.2);
                let got = c.find(pa, Ns(ns));
                prop_assert_eq!(got.map(|l| l.data), want);
                if let Some(l) = got {
                    prop_assert_eq!(l.ns, Ns(ns));
                }
            }
        }
    }

    #[test]
    fn token_register_traps_below_el3(el in prop_oneof![Just(ExceptionLevel::El0), Just(ExceptionLevel::El1)], value in any::<u64>()) {
        let mut core = CoreState::new(0, 4);
        core.el = ExceptionLevel::El3;
        core.write_token_reg(value).unwrap();
        core.el = el;
        prop_assert!(core.read_token_reg().is_err());
        prop_assert!(core.write_token_reg(0).is_err());
        core.el = ExceptionLevel::El3;
        prop_assert_eq!(core.read_token_reg(), Ok(value));
    }

    #[test]
    fn wrong_token_never_unlocks(bits in 1u32..=64, seed in any::<u64>(), claim in any::<u64>()) {
        let l = layout();
        let mut ppc = booted_ppc(&l);
        let mut gk = GatekeeperState::new(bits).unwrap();
        let token = gk.boot(seed).unwrap();
        prop_assert_eq!(token & !gk.token_mask(), 0);
        prop_assume!(claim != token);
        let before = ppc.clone();
        for kind in [MqKind::UnlockPpc, MqKind::LockPpc] {
            let (reply, edits) = gk.handle(&mut ppc, MqMessage::request(kind, claim));
            prop_assert_eq!(reply.kind, MqKind::Nack);
            prop_assert!(edits.is_empty());
        }
        prop_assert_eq!(gk.auth_failures(), 2);
        prop_assert_eq!(&ppc, &before);
        let (reply, _) = gk.handle(&mut ppc, MqMessage::request(MqKind::UnlockPpc, token));
        prop_assert_eq!(reply.kind, MqKind::Ack);
        prop_assert!(ppc.cluster_window_open());
    }
}

fn traces() -> &'static Vec<Vec<TraceEvent>> {
    static TRACES: OnceLock<Vec<Vec<TraceEvent>>> = OnceLock::new();
    TRACES.get_or_init(|| {
        let mut out = Vec::new();
        for d in DeploymentConfig::ALL {
            for w in Workload::BUNDLED {
                out.push(w.run(d).expect("bundled workload completes"));
            }
        }
        out
    })
}

fn any_weights() -> impl Strategy<Value = CostWeights> {
    proptest::collection::vec(0.0f64..50.0, CostTerm::ALL.len()).prop_map(|v| {
        let mut w = CostWeights::uniform(0.0);
        for (t, x) in CostTerm::ALL.into_iter().zip(v) {
            w.set(t, x);
        }
        w
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cost_total_decomposes(idx in 0usize..15, w in any_weights()) {
        let events = &traces()[idx];
        let b = account(events, &w);
        let bucket_sum: f64 = b.buckets.values().sum();
        let term_sum: f64 = b.quantities.iter().map(|(t, q)| w.get(*t) * *q as f64).sum();
        prop_assert!((b.total - bucket_sum).abs() < 1e-6 * b.total.max(1.0));
        prop_assert!((b.total - term_sum).abs() < 1e-6 * b.total.max(1.0));
        prop_assert!((b.reprice(&w) - b.total).abs() < 1e-6 * b.total.max(1.0));
    }

    #[test]
    fn cost_is_monotone_in_every_weight(idx in 0usize..15, w in any_weights(), term in proptest::sample::select(CostTerm::ALL.to_vec()), bump in 0.0f64..20.0) {
        let events = &traces()[idx];
        let base = account(events, &w).total;
        let mut heavier = w;
        heavier.set(term, w.get(term) + bump);
        let raised = account(events, &heavier).total;
        prop_assert!(raised >= base - 1e-9);
        let q = account(events, &w).quantity(term) as f64;
        prop_assert!((raised - base - bump * q).abs() < 1e-6 * raised.max(1.0));
    }
}

#[derive(Clone, Debug)]
enum Probe {
    Map { slot: u64, target: usize, offset: u64, ns: u8, writable: bool },
    Read { slot: u64, offset: u64 },
    Write { slot: u64, offset: u64, value: u64 },
    PpcWrite { slot: u64, edit: ConfigEdit },
    Mq { unlock: bool, claim: u64 },
    MuB { slot: u64 },
    Token,
    Work,
}

fn any_probe() -> impl Strategy<Value = Probe> {
    let slot = 0u64..4;
    let offset = (0u64..64).prop_map(|o| o * 0x40);
    prop_oneof![
        3 => (slot.clone(), any::<usize>(), offset.clone(), 0u8..2, any::<bool>())
            .prop_map(|(slot, target, offset, ns, writable)| Probe::Map { slot, target, offset, ns, writable }),
        3 => (slot.clone(), offset.clone()).prop_map(|(slot, offset)| Probe::Read { slot, offset }),
        3 => (slot.clone(), offset, any::<u64>()).prop_map(|(slot, offset, value)| Probe::Write { slot, offset, value }),
        1 => (slot.clone(), any_edit()).prop_map(|(slot, edit)| Probe::PpcWrite { slot, edit }),
        1 => (any::<bool>(), any::<u64>()).prop_map(|(unlock, claim)| Probe::Mq { unlock, claim }),
        1 => slot.prop_map(|slot| Probe::MuB { slot }),
        1 => Just(Probe::Token),
        1 => Just(Probe::Work),
    ]
}

fn lower(b: &SimBuilder, probes: &[Probe]) -> Vec<ZoneOp> {
    let regions: Vec<RegionKind> = b.layout().kinds().collect();
    let mut ops = Vec::new();
    for p in probes {
        match *p {
            Probe::Map { slot, target, offset, ns, writable } => {
                let pa = b.addr(regions[target % regions.len()], offset);
                ops.push(ZoneOp::Map { va: va(slot), pa, ns: Ns(ns), writable });
            }
            Probe::Read { slot, offset } => ops.push(ZoneOp::Read { va: va(slot) + offset }),
            Probe::Write { slot, offset, value } => ops.push(ZoneOp::Write { va: va(slot) + offset, value }),
            Probe::PpcWrite { slot, edit } => ops.push(ZoneOp::PpcWrite { va: va(slot), edit }),
            Probe::Mq { unlock, claim } => {
                let kind = if unlock { MqKind::UnlockPpc } else { MqKind::LockPpc };
                ops.extend([ZoneOp::MqSend { kind, claim }, ZoneOp::MqAwait]);
            }
            Probe::MuB { slot } => ops.push(ZoneOp::MuBWrite { va: va(slot) }),
            Probe::Token => ops.push(ZoneOp::ReadTokenReg),
            Probe::Work => ops.push(ZoneOp::Work { units: 1 }),
        }
    }
    ops
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    /// Arbitrary trusted-OS behaviour in both zones, racing on two cores,
    /// never breaks a safety property while every mitigation is active.
    #[test]
    fn hostile_zones_never_break_isolation(
        z1 in proptest::collection::vec(any_probe(), 0..10),
        z2 in proptest::collection::vec(any_probe(), 0..10),
        seed in any::<u64>(),
    ) {
        let mut config = SimConfig::default();
        config.cluster.cores = 2;
        let b = SimBuilder::two_zones(config);
        let shared = b.addr(RegionKind::Shared, 0);
        let p1 = lower(&b, &z1);
        let p2 = lower(&b, &z2);
        let b = b
            .zone(ZONE1, p1)
            .zone(ZONE2, p2)
            .core(0, vec![Op::Smc(ZONE1_SMC), Op::Read(shared), Op::Smc(ZONE2_SMC)])
            .core(1, vec![Op::Smc(ZONE2_SMC), Op::Write(shared + 0x40, 9)]);
        let mut sim = b.build().unwrap();
        let status = sim.run(&mut RandomScheduler::new(seed), 20_000).unwrap();
        let broken: Vec<_> = sim
            .violations()
            .iter()
            .filter(|v| v.property != Property::Liveness)
            .collect();
        prop_assert!(broken.is_empty(), "{:?} after {:?}", broken, status);
        if status == RunStatus::Completed {
            prop_assert!(sim.state.ppc.is_locked());
            prop_assert!(!sim.state.ppc.cluster_window_open());
        }
    }
}

use std::collections::BTreeSet;

use rezone_core::layout::{AccessKind, LayoutConfig, MemoryLayout, Permission, RegionKind, ZoneId};
use rezone_core::ppc::*;
use rezone_core::zones::ZoneManifest;

fn layout() -> MemoryLayout {
    MemoryLayout::build(
        &[ZoneManifest::new(ZoneId(1), 64 << 10, 100..200), ZoneManifest::new(ZoneId(2), 64 << 10, 200..300)],
        &LayoutConfig::default(),
    )
    .unwrap()
}

fn booted() -> (PpcState, MemoryLayout) {
    let l = layout();
    let mut p = PpcState::new(&PpcConfig::default());
    p.boot_init(&l, &PpcConfig::default()).unwrap();
    (p, l)
}

fn unlock(p: &mut PpcState) {
    assert!(p.write_config(BusMasterId::ACU, ConfigEdit::SetLock { locked: false }).applied());
    let e = ConfigEdit::SetPerm { did: DomainId::CLUSTER, region: RegionKind::PpcMmio, perm: Permission::RW };
    assert!(p.write_config(BusMasterId::ACU, e).applied());
}

#[test]
fn boot_locks_cluster_out() {
    let (p, _) = booted();
    assert_eq!(p.check(BusMasterId::CLUSTER, RegionKind::PpcMmio, AccessKind::Write), Ok(Verdict::Deny));
    assert_eq!(p.check(BusMasterId::ACU, RegionKind::PpcMmio, AccessKind::Write), Ok(Verdict::Allow));
    assert_eq!(p.check(BusMasterId::CLUSTER, RegionKind::Monitor, AccessKind::Write), Ok(Verdict::Allow));
    assert_eq!(p.check(BusMasterId::ACU, RegionKind::Gatekeeper, AccessKind::Write), Ok(Verdict::Allow));
    assert!(p.is_locked());
}

#[test]
fn double_init() {
    let (mut p, l) = booted();
    assert_eq!(p.boot_init(&l, &PpcConfig::default()), Err(PpcError::DoubleInit));
}

#[test]
fn unknown_master() {
    let (p, _) = booted();
    assert_eq!(
        p.check(BusMasterId(7), RegionKind::Ree, AccessKind::Read),
        Err(PpcError::UnknownMaster(BusMasterId(7)))
    );
}

#[test]
fn cluster_writes_denied_while_locked() {
    let (mut p, _) = booted();
    let before = p.clone();
    let e = ConfigEdit::SetPerm { did: DomainId::CLUSTER, region: RegionKind::Gatekeeper, perm: Permission::RW };
    assert_eq!(p.write_config(BusMasterId::CLUSTER, e), EditOutcome::Denied);
    assert_eq!(p, before);
}

#[test]
fn acu_edits_apply() {
    let (mut p, _) = booted();
    let e = ConfigEdit::SetPerm { did: DomainId(3), region: RegionKind::Ree, perm: Permission::RO };
    assert!(p.write_config(BusMasterId::ACU, e).applied());
    assert_eq!(p.perm(DomainId(3), RegionKind::Ree), Permission::RO);
}

#[test]
fn out_of_range_domain_invalid() {
    let (mut p, _) = booted();
    let e = ConfigEdit::Bind { mid: BusMasterId(3), did: DomainId(4) };
    assert_eq!(p.write_config(BusMasterId::ACU, e), EditOutcome::Invalid);
}

#[test]
fn acu_keeps_its_domain() {
    let (mut p, _) = booted();
    let e = ConfigEdit::Unbind { mid: BusMasterId::ACU, did: DomainId::ACU };
    assert_eq!(p.write_config(BusMasterId::ACU, e), EditOutcome::Invalid);
    let e = ConfigEdit::SetPerm { did: DomainId::ACU, region: RegionKind::PpcMmio, perm: Permission::NA };
    assert_eq!(p.write_config(BusMasterId::ACU, e), EditOutcome::Invalid);
}

#[test]
fn unlocked_window_lets_cluster_reconfigure() {
    let (mut p, l) = booted();
    unlock(&mut p);
    assert!(p.cluster_window_open());
    let wl = BTreeSet::new();
    let out = p.apply_zone_row(BusMasterId::CLUSTER, ZoneId(1), &wl, &l);
    assert!(out.iter().all(|(_, o)| o.applied()));
    assert_eq!(p.check(BusMasterId::CLUSTER, RegionKind::Zone(ZoneId(2)), AccessKind::Read), Ok(Verdict::Deny));
    assert_eq!(p.check(BusMasterId::CLUSTER, RegionKind::Trampoline, AccessKind::Read), Ok(Verdict::Allow));
    assert_eq!(p.check(BusMasterId::CLUSTER, RegionKind::Trampoline, AccessKind::Write), Ok(Verdict::Deny));
    assert_eq!(p.check(BusMasterId::CLUSTER, RegionKind::Ree, AccessKind::Read), Ok(Verdict::Deny));
}

#[test]
fn monitor_row_round_trip_and_idempotence() {
    let (mut p, l) = booted();
    let boot_row = p.cluster_row(&l);
    unlock(&mut p);
    p.apply_zone_row(BusMasterId::CLUSTER, ZoneId(1), &BTreeSet::new(), &l);
    p.apply_monitor_row(BusMasterId::CLUSTER, &l);
    assert_eq!(p.cluster_row(&l), boot_row);
    let once = p.clone();
    p.apply_monitor_row(BusMasterId::CLUSTER, &l);
    assert_eq!(p, once);
    assert_eq!(p.check(BusMasterId::CLUSTER, RegionKind::Monitor, AccessKind::Write), Ok(Verdict::Allow));
    assert_eq!(p.check(BusMasterId::CLUSTER, RegionKind::Gatekeeper, AccessKind::Read), Ok(Verdict::Deny));
}

#[test]
fn locking_closes_the_window() {
    let (mut p, _) = booted();
    unlock(&mut p);
    assert!(p.write_config(BusMasterId::ACU, ConfigEdit::SetLock { locked: true }).applied());
    assert!(!p.cluster_window_open());
    assert_eq!(p.check(BusMasterId::CLUSTER, RegionKind::PpcMmio, AccessKind::Write), Ok(Verdict::Deny));
}

#[test]
fn other_masters_domain() {
    let l = layout();
    let cfg = PpcConfig { other_masters_domain: true, other_masters: vec![BusMasterId(2)], ..PpcConfig::default() };
    let mut p = PpcState::new(&cfg);
    p.boot_init(&l, &cfg).unwrap();
    assert_eq!(p.check(BusMasterId(2), RegionKind::Ree, AccessKind::Write), Ok(Verdict::Allow));
    assert_eq!(p.check(BusMasterId(2), RegionKind::Monitor, AccessKind::Read), Ok(Verdict::Deny));
}

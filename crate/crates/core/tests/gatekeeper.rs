use rezone_core::gatekeeper::*;
use rezone_core::layout::RegionKind;
use rezone_core::ppc::{BusMasterId, PpcState};
use rezone_core::layout::{AccessKind, LayoutConfig, MemoryLayout, ZoneId};
use rezone_core::ppc::{PpcConfig, Verdict};
use rezone_core::zones::ZoneManifest;

fn setup() -> (GatekeeperState, PpcState, u64) {
    let layout =
        MemoryLayout::build(&[ZoneManifest::new(ZoneId(1), 4096, 100..200)], &LayoutConfig::default()).unwrap();
    let mut ppc = PpcState::new(&PpcConfig::default());
    ppc.boot_init(&layout, &PpcConfig::default()).unwrap();
    let mut gk = GatekeeperState::new(64).unwrap();
    let token = gk.boot(1).unwrap();
    (gk, ppc, token)
}

fn cluster_can_write_ppc(ppc: &PpcState) -> bool {
    ppc.check(BusMasterId::CLUSTER, RegionKind::PpcMmio, AccessKind::Write) == Ok(Verdict::Allow)
}

#[test]
fn seeds_give_different_tokens() {
    let mut a = GatekeeperState::new(64).unwrap();
    let mut b = GatekeeperState::new(64).unwrap();
    assert_ne!(a.boot(1).unwrap(), b.boot(2).unwrap());
    let mut c = GatekeeperState::new(64).unwrap();
    let mut d = GatekeeperState::new(64).unwrap();
    assert_eq!(c.boot(5).unwrap(), d.boot(5).unwrap());
}

#[test]
fn token_width_masks() {
    let mut gk = GatekeeperState::new(12).unwrap();
    assert!(gk.boot(3).unwrap() < 4096);
    assert!(GatekeeperState::new(0).is_err());
    assert!(GatekeeperState::new(65).is_err());
}

#[test]
fn correct_unlock_then_lock() {
    let (mut gk, mut ppc, token) = setup();
    let (reply, _) = gk.handle(&mut ppc, MqMessage::request(MqKind::UnlockPpc, token));
    assert_eq!(reply.kind, MqKind::Ack);
    assert_eq!(reply.token_claim, 0);
    assert!(cluster_can_write_ppc(&ppc));
    let (reply, _) = gk.handle(&mut ppc, MqMessage::request(MqKind::LockPpc, token));
    assert_eq!(reply.kind, MqKind::Ack);
    assert!(!cluster_can_write_ppc(&ppc));
}

#[test]
fn wrong_token_refused() {
    let (mut gk, mut ppc, token) = setup();
    let before = ppc.clone();
    let (reply, edits) = gk.handle(&mut ppc, MqMessage::request(MqKind::UnlockPpc, token ^ 1));
    assert_eq!(reply.kind, MqKind::Nack);
    assert!(edits.is_empty());
    assert_eq!(ppc, before);
    assert_eq!(gk.auth_failures(), 1);
}

#[test]
fn skipped_token_check_accepts_anything() {
    let (gk, mut ppc, token) = setup();
    let mut gk = gk.with_token_check(false);
    let (reply, _) = gk.handle(&mut ppc, MqMessage::request(MqKind::UnlockPpc, token.wrapping_add(99)));
    assert_eq!(reply.kind, MqKind::Ack);
}

#[test]
fn tampered_image_fails_verification() {
    let img = FirmwareImage::reference();
    let manifest = img.manifest();
    assert!(img.verify(&manifest).is_ok());
    let mut bad = img.clone();
    bad.trampoline[1] ^= 0xff;
    assert_eq!(bad.verify(&manifest), Err("trampoline"));
    let mut bad = img;
    bad.gatekeeper[0] = 0;
    assert_eq!(bad.verify(&manifest), Err("gatekeeper"));
}

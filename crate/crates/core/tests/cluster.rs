use rezone_core::cluster::*;
use rezone_core::monitor::Op;

fn line(pa: u64, ns: Ns, data: u64) -> CacheLine {
    CacheLine { pa, ns, data, dirty: false }
}

#[test]
fn cache_is_keyed_by_ns() {
    let mut c = Cache::new(4);
    c.insert(line(0x100, Ns::SECURE, 1));
    assert!(c.find(0x100, Ns::NON_SECURE).is_none());
    c.insert(line(0x100, Ns::NON_SECURE, 2));
    assert_eq!(c.len(), 2);
    assert_eq!(c.find(0x100, Ns::SECURE).unwrap().data, 1);
}

#[test]
fn cache_fifo_eviction() {
    let mut c = Cache::new(2);
    assert!(c.insert(line(0x00, Ns::SECURE, 0)).is_none());
    assert!(c.insert(line(0x10, Ns::SECURE, 0)).is_none());
    let v = c.insert(line(0x20, Ns::SECURE, 0)).unwrap();
    assert_eq!(v.pa, 0x00);
    // same tag replaces in place
    assert!(c.insert(line(0x20, Ns::SECURE, 9)).is_none());
    assert_eq!(c.len(), 2);
}

#[test]
fn tlb_lru_and_regimes() {
    let mut t = Tlb::new(2);
    let e = |regime, page| TlbEntry { regime, va_page: page, pa_page: page, ns: Ns::SECURE, writable: true };
    t.fill(e(Regime::El3, 0x1000));
    t.fill(e(Regime::SecureEl1, 0x2000));
    assert!(t.lookup(Regime::El3, 0x1004).is_some());
    t.fill(e(Regime::SecureEl1, 0x3000));
    // 0x2000 was least recently used
    assert!(t.lookup(Regime::SecureEl1, 0x2000).is_none());
    assert!(t.lookup(Regime::El3, 0x1000).is_some());
    assert!(t.lookup(Regime::SecureEl1, 0x1000).is_none());
    assert_eq!(t.invalidate_s1(), 1);
    assert_eq!(t.len(), 1);
    assert_eq!(t.s1_entries().count(), 0);
}

#[test]
fn token_register_is_el3_only() {
    let mut core = CoreState::new(0, 4);
    core.set_el3();
    core.write_token_reg(0xdead).unwrap();
    assert_eq!(core.read_token_reg(), Ok(0xdead));
    core.set_secure_el1();
    assert_eq!(core.read_token_reg(), Err(TokenTrap));
    assert_eq!(core.write_token_reg(1), Err(TokenTrap));
    core.set_normal_el1();
    assert_eq!(core.read_token_reg(), Err(TokenTrap));
}

#[test]
fn halt_and_resume() {
    let mut cl = ClusterState::new(&ClusterConfig::default());
    for c in cl.cores.iter_mut() {
        c.program.push_back(Op::Read(0));
    }
    assert_eq!(cl.halt_others(0), vec![1, 2, 3]);
    assert!(!cl.others_quiescent(0));
    for c in cl.cores.iter_mut().skip(1) {
        c.halt_pending = false;
        c.halted = true;
    }
    assert!(cl.others_quiescent(0));
    assert_eq!(cl.resume_others(0), vec![1, 2, 3]);
    assert!(cl.cores.iter().all(|c| !c.halted));
}

#[test]
fn coherency_gates_cross_core_hits() {
    let mut cl = ClusterState::new(&ClusterConfig::default());
    cl.cores[2].l1.insert(line(0x40, Ns::NON_SECURE, 7));
    assert_eq!(cl.locate(1, 0x40, Ns::NON_SECURE), Some(CacheSlot::L1(2)));
    cl.coherency_on = false;
    assert_eq!(cl.locate(1, 0x40, Ns::NON_SECURE), None);
    cl.coherency_on = true;
    assert_eq!(cl.locate(1, 0x44, Ns::NON_SECURE), Some(CacheSlot::L1(2)));
}

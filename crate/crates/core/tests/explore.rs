use rezone_core::adversary::{explore, mutant_scenario, replay, ExploreConfig, ExploreError, Mutant};
use rezone_core::setup::SimBuilder;
use rezone_core::{Op, RegionKind, SimConfig};

fn normal_only(cores: usize, reads: u64) -> SimBuilder {
    let mut config = SimConfig::default();
    config.cluster.cores = cores;
    let mut b = SimBuilder::two_zones(config);
    let ree = b.addr(RegionKind::Ree, 0);
    for c in 0..cores {
        let program = (0..reads).map(|i| Op::Read(ree + 0x1000 * c as u64 + 0x40 * i)).collect();
        b = b.core(c, program);
    }
    b
}

#[test]
fn straight_line_program_is_exhausted() {
    let sim = normal_only(1, 3).build().unwrap();
    let r = explore(&sim, &ExploreConfig::depth(10)).unwrap();
    assert!(r.exhausted);
    assert!(r.is_safe());
    assert_eq!(r.states_visited, 4);
    assert_eq!(r.transitions, 3);
    assert_eq!(r.terminal_states, 1);
}

#[test]
fn depth_bound_cuts_schedules_short() {
    let sim = normal_only(1, 5).build().unwrap();
    let r = explore(&sim, &ExploreConfig::depth(2)).unwrap();
    assert!(!r.exhausted);
    assert_eq!(r.depth_reached, 2);
}

#[test]
fn interleavings_branch_per_enabled_core() {
    let sim = normal_only(2, 2).build().unwrap();
    let r = explore(&sim, &ExploreConfig::depth(10)).unwrap();
    assert!(r.exhausted && r.is_safe());
    // The root alone has two successors.
    assert!(r.transitions >= 2 * r.depth_reached);
    assert!(r.states_visited > 5);
}

#[test]
fn budget_is_enforced() {
    let sim = normal_only(2, 3).build().unwrap();
    let cfg = ExploreConfig { budget: 3, ..ExploreConfig::depth(10) };
    assert!(matches!(explore(&sim, &cfg), Err(ExploreError::BudgetExceeded { budget: 3, .. })));
}

#[test]
fn witnesses_replay_to_the_same_violation() {
    let sim = mutant_scenario(Mutant::FlushCaches, true).build().unwrap();
    let r = explore(&sim, &ExploreConfig::depth(40)).unwrap();
    assert!(!r.is_safe());
    for w in &r.violations {
        let replayed = replay(&sim, &w.schedule);
        assert!(replayed.violations().contains(&w.violation), "{:?}", w.violation);
        assert!(replayed.trace.count("VIOLATION") > 0);
    }
}

#[test]
fn exploration_is_deterministic() {
    let sim = mutant_scenario(Mutant::FlushCaches, true).build().unwrap();
    let a = explore(&sim, &ExploreConfig::depth(40)).unwrap();
    let b = explore(&sim, &ExploreConfig::depth(40)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn intact_protocol_has_no_witness() {
    let sim = mutant_scenario(Mutant::FlushCaches, false).build().unwrap();
    let r = explore(&sim, &ExploreConfig::depth(40)).unwrap();
    assert!(r.is_safe(), "{:?}", r.violations);
}

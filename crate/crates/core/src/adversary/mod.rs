//! Attacker programs, the exhaustive interleaving explorer and the
//! synchronisation and mutation scenarios.
//!
//! Every attack runs as the trusted OS of zone 1 on core 0 of the default
//! two-zone system. Core 1 runs an honest normal-world workload.

mod attacks;
pub mod explore;
pub mod scenarios;

pub use attacks::{
    attack_builder, brute_force_token, judge, run_attack, AttackId, AttackOutcome, AttackReport, BruteForceResult,
};
pub use explore::{explore, replay, ExplorationReport, ExploreConfig, ExploreError, Witness};
pub use scenarios::{
    honest_zone, mmu_scenario, mutant_scenario, sync_scenario, sync_scenario_builder, Interleaving, MmuProbe, Mutant,
    SafetyVerdict, ScenarioError, SyncScenario,
};

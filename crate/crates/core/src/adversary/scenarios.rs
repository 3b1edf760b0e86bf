//! Multi-core synchronisation scenarios and the protocol mutants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::Ns;
use crate::gatekeeper::MqKind;
use crate::layout::{Permission, RegionKind, MU_A};
use crate::machine::{offsets, Mitigations, SimConfig, SimError};
use crate::monitor::{Op, ZoneOp};
use crate::ppc::{ConfigEdit, DomainId};
use crate::sched::{RandomScheduler, RunStatus};
use crate::setup::{va, SimBuilder, MONITOR_SERVICE_SMC, ZONE1, ZONE1_SMC};

use super::explore::{explore, ExploreConfig, ExploreError, Witness};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncScenario {
    /// Core 0 enters a zone while core 1 is still running monitor code.
    MonitorConcurrent,
    /// Core 1 wakes from sleep into monitor code while core 0 is in a zone.
    WakeDuringZone,
    /// Core 1 enters a zone while core 0 keeps running normal-world code.
    NormalConcurrent,
}

impl SyncScenario {
    pub const ALL: [SyncScenario; 3] =
        [SyncScenario::MonitorConcurrent, SyncScenario::WakeDuringZone, SyncScenario::NormalConcurrent];

    pub fn number(self) -> u8 {
        match self {
            SyncScenario::MonitorConcurrent => 1,
            SyncScenario::WakeDuringZone => 2,
            SyncScenario::NormalConcurrent => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        SyncScenario::ALL.into_iter().find(|s| s.number() == n)
    }
}

/// Honest trusted-OS run: touch own memory, publish a result in shared
/// memory, compute.
pub fn honest_zone(b: &SimBuilder) -> Vec<ZoneOp> {
    let own = b.addr(RegionKind::Zone(ZONE1), 0);
    let shared = b.addr(RegionKind::Shared, 0);
    vec![
        ZoneOp::Map { va: va(0), pa: own, ns: Ns::SECURE, writable: true },
        ZoneOp::Read { va: va(0) + 0x40 },
        ZoneOp::Write { va: va(0) + 0x80, value: 1 },
        ZoneOp::Map { va: va(1), pa: shared, ns: Ns::NON_SECURE, writable: true },
        ZoneOp::Write { va: va(1), value: 42 },
        ZoneOp::Work { units: 2 },
    ]
}

fn normal_reads(b: &SimBuilder, first_line: u64, n: u64) -> Vec<Op> {
    let ree = b.addr(RegionKind::Ree, 0);
    (0..n).map(|i| Op::Read(ree + 0x1000 + (first_line + i) * 0x10)).collect()
}

/// Initial placement for a scenario on `cores` cores (at least 2). Cores
/// beyond the first two run normal-world loads.
pub fn sync_scenario_builder(config: SimConfig, scenario: SyncScenario, cores: usize) -> SimBuilder {
    let mut config = config;
    config.cluster.cores = cores.max(2);
    let mut b = SimBuilder::two_zones(config);
    let zone = honest_zone(&b);
    let shared = b.addr(RegionKind::Shared, 0);
    let ctx = b.addr(RegionKind::Monitor, offsets::MONITOR_CTX + 0x10);
    let (c0, c1) = match scenario {
        SyncScenario::MonitorConcurrent => (
            vec![Op::Smc(ZONE1_SMC), Op::Read(shared)],
            vec![Op::Smc(MONITOR_SERVICE_SMC), Op::Read(shared + 0x20)],
        ),
        SyncScenario::WakeDuringZone => (
            vec![Op::Smc(ZONE1_SMC), Op::Read(shared)],
            vec![Op::Sleep, Op::MonitorRead(ctx), Op::MonitorWrite(ctx, 7), Op::ReturnToNormal, Op::Read(shared + 0x20)],
        ),
        SyncScenario::NormalConcurrent => {
            let mut c0 = normal_reads(&b, 0, 3);
            let ree = b.addr(RegionKind::Ree, 0);
            c0.push(Op::Write(ree + 0x2000, 9));
            (c0, vec![Op::Smc(ZONE1_SMC), Op::Read(shared)])
        }
    };
    b = b.zone(ZONE1, zone).core(0, c0).core(1, c1);
    for extra in 2..cores {
        let prog = normal_reads(&b, 0x10 * extra as u64, 2);
        b = b.core(extra, prog);
    }
    b
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interleaving {
    Exhaustive { depth: usize },
    Random { seed: u64, runs: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub safe: bool,
    pub witness: Option<Witness>,
    /// States explored, or schedules run.
    pub explored: usize,
}

const RANDOM_RUN_STEPS: usize = 2_000;

pub fn sync_scenario(builder: &SimBuilder, interleaving: &Interleaving) -> Result<SafetyVerdict, ScenarioError> {
    let base = builder.build()?;
    match interleaving {
        Interleaving::Exhaustive { depth } => {
            let report = explore(&base, &ExploreConfig::depth(*depth))?;
            Ok(SafetyVerdict {
                safe: report.is_safe(),
                witness: report.violations.first().cloned(),
                explored: report.states_visited,
            })
        }
        Interleaving::Random { seed, runs } => {
            for run in 0..*runs {
                let mut sim = base.clone();
                sim.set_trace(crate::trace::Trace::disabled());
                let mut sched = RecordingRandom::new(seed.wrapping_add(run as u64));
                let status = sim.run(&mut sched, RANDOM_RUN_STEPS)?;
                if status != RunStatus::Completed {
                    let violation = sim.violations().first().copied().unwrap_or(crate::machine::Violation {
                        property: crate::machine::Property::Liveness,
                        kind: crate::machine::ViolationKind::Deadlock,
                        core: None,
                    });
                    return Ok(SafetyVerdict {
                        safe: false,
                        witness: Some(Witness { violation, schedule: sched.picked }),
                        explored: run + 1,
                    });
                }
            }
            Ok(SafetyVerdict { safe: true, witness: None, explored: *runs })
        }
    }
}

struct RecordingRandom {
    inner: RandomScheduler,
    picked: Vec<crate::sched::Actor>,
}

impl RecordingRandom {
    fn new(seed: u64) -> Self {
        RecordingRandom { inner: RandomScheduler::new(seed), picked: Vec::new() }
    }
}

impl crate::sched::Scheduler for RecordingRandom {
    fn pick(&mut self, enabled: &[crate::sched::Actor]) -> crate::sched::Actor {
        let a = self.inner.pick(enabled);
        self.picked.push(a);
        a
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Explore(#[from] ExploreError),
}

/// One protocol step or check switched off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutant {
    FlushCaches,
    TlbMaintenance,
    GatekeeperUnlock,
    ReconfigurePpc,
    El3MmuOff,
    InvalidateTrampoline,
    TokenCheck,
    CoherencyDisable,
    HaltCores,
    WakeIntoTrampoline,
}

impl Mutant {
    pub const ALL: [Mutant; 10] = [
        Mutant::FlushCaches,
        Mutant::TlbMaintenance,
        Mutant::GatekeeperUnlock,
        Mutant::ReconfigurePpc,
        Mutant::El3MmuOff,
        Mutant::InvalidateTrampoline,
        Mutant::TokenCheck,
        Mutant::CoherencyDisable,
        Mutant::HaltCores,
        Mutant::WakeIntoTrampoline,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Mutant::FlushCaches => "flush_caches",
            Mutant::TlbMaintenance => "tlb_maintenance",
            Mutant::GatekeeperUnlock => "gatekeeper_unlock",
            Mutant::ReconfigurePpc => "reconfigure_ppc",
            Mutant::El3MmuOff => "el3_mmu_off",
            Mutant::InvalidateTrampoline => "invalidate_trampoline",
            Mutant::TokenCheck => "token_check",
            Mutant::CoherencyDisable => "coherency_disable",
            Mutant::HaltCores => "halt_cores",
            Mutant::WakeIntoTrampoline => "wake_into_trampoline",
        }
    }

    pub fn disable(self, m: &mut Mitigations) {
        let flag = match self {
            Mutant::FlushCaches => &mut m.flush_caches,
            Mutant::TlbMaintenance => &mut m.tlb_maintenance,
            Mutant::GatekeeperUnlock => &mut m.gatekeeper_unlock,
            Mutant::ReconfigurePpc => &mut m.reconfigure_ppc,
            Mutant::El3MmuOff => &mut m.el3_mmu_off,
            Mutant::InvalidateTrampoline => &mut m.invalidate_trampoline,
            Mutant::TokenCheck => &mut m.token_check,
            Mutant::CoherencyDisable => &mut m.coherency_disable,
            Mutant::HaltCores => &mut m.halt_cores,
            Mutant::WakeIntoTrampoline => &mut m.wake_into_trampoline,
        };
        *flag = false;
    }
}

impl fmt::Display for Mutant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Mutant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mutant::ALL.into_iter().find(|m| m.label() == s).ok_or_else(|| format!("unknown mutant `{s}`"))
    }
}

/// Which of the two E-step problems a scenario provokes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmuProbe {
    /// The zone touches enough pages to push the trampoline's EL3
    /// translation out of the TLB.
    TableWalk,
    /// The zone poisons the cached exception vector.
    VectorPoison,
}

/// A scenario in which `mutant` being switched off is observable. With
/// `mutated = false` the same scenario runs against the full protocol.
pub fn mutant_scenario(mutant: Mutant, mutated: bool) -> SimBuilder {
    match mutant {
        Mutant::El3MmuOff => mmu_scenario(MmuProbe::VectorPoison, mutated),
        Mutant::WakeIntoTrampoline | Mutant::HaltCores | Mutant::CoherencyDisable => {
            let mut config = SimConfig::default();
            if mutated {
                mutant.disable(&mut config.mitigations);
            }
            config.cluster.cores = 2;
            let scenario = match mutant {
                Mutant::WakeIntoTrampoline => SyncScenario::WakeDuringZone,
                Mutant::HaltCores => SyncScenario::NormalConcurrent,
                _ => SyncScenario::MonitorConcurrent,
            };
            let b = sync_scenario_builder(config, scenario, 2);
            if mutant == Mutant::CoherencyDisable {
                // the zone looks for monitor lines left in the other core's L1
                let mon = b.addr(RegionKind::Monitor, 0);
                let probe = vec![
                    ZoneOp::Map { va: va(0), pa: mon, ns: Ns::SECURE, writable: false },
                    ZoneOp::Read { va: va(0) + offsets::MONITOR_ROUTING },
                ];
                return b.zone(ZONE1, probe);
            }
            b
        }
        _ => {
            let mut config = SimConfig::default();
            config.cluster.cores = 2;
            if mutated {
                mutant.disable(&mut config.mitigations);
            }
            let b = SimBuilder::two_zones(config);
            let ree = b.addr(RegionKind::Ree, 0);
            let mon = b.addr(RegionKind::Monitor, 0);
            let tramp = b.addr(RegionKind::Trampoline, 0);
            let map = |slot, pa, ns, writable| ZoneOp::Map { va: va(slot), pa, ns, writable };
            let (core0, zone) = match mutant {
                Mutant::FlushCaches => (
                    vec![Op::Read(ree + offsets::CANARY), Op::Smc(ZONE1_SMC)],
                    vec![map(0, ree, Ns::NON_SECURE, false), ZoneOp::Read { va: va(0) + offsets::CANARY }],
                ),
                Mutant::GatekeeperUnlock | Mutant::ReconfigurePpc | Mutant::TlbMaintenance => (
                    vec![Op::Smc(ZONE1_SMC)],
                    vec![map(0, mon, Ns::SECURE, false), ZoneOp::Read { va: va(0) + offsets::CANARY }],
                ),
                Mutant::InvalidateTrampoline => (
                    vec![Op::Smc(ZONE1_SMC)],
                    vec![
                        map(0, tramp, Ns::SECURE, true),
                        ZoneOp::Read { va: va(0) + offsets::TRAMPOLINE_EXIT },
                        ZoneOp::Write { va: va(0) + offsets::TRAMPOLINE_EXIT, value: 0xBAD },
                    ],
                ),
                Mutant::TokenCheck => (
                    vec![Op::Smc(ZONE1_SMC)],
                    vec![
                        map(0, b.addr(RegionKind::Peripheral(MU_A), 0), Ns::SECURE, true),
                        map(1, b.addr(RegionKind::PpcMmio, 0), Ns::SECURE, true),
                        ZoneOp::MqSend { kind: MqKind::UnlockPpc, claim: 0x1234 },
                        ZoneOp::MqAwait,
                        ZoneOp::PpcWrite {
                            va: va(1),
                            edit: ConfigEdit::SetPerm {
                                did: DomainId::CLUSTER,
                                region: RegionKind::Monitor,
                                perm: Permission::RW,
                            },
                        },
                    ],
                ),
                _ => unreachable!("handled above"),
            };
            b.zone(ZONE1, zone).core(0, core0)
        }
    }
}

/// Scenarios for the two problems the EL3 MMU-off step prevents.
pub fn mmu_scenario(probe: MmuProbe, mutated: bool) -> SimBuilder {
    let mut config = SimConfig::default();
    config.cluster.cores = 2;
    if mutated {
        config.mitigations.el3_mmu_off = false;
    }
    let b = SimBuilder::two_zones(config);
    let zone = match probe {
        MmuProbe::TableWalk => honest_zone(&b),
        MmuProbe::VectorPoison => {
            let tramp = b.addr(RegionKind::Trampoline, 0);
            vec![
                ZoneOp::Map { va: va(0), pa: tramp, ns: Ns::SECURE, writable: true },
                ZoneOp::Read { va: va(0) + offsets::TRAMPOLINE_VECTOR },
                ZoneOp::Write { va: va(0) + offsets::TRAMPOLINE_VECTOR, value: 0xBAD },
            ]
        }
    };
    b.zone(ZONE1, zone).core(0, vec![Op::Smc(ZONE1_SMC)])
}

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::Ns;
use crate::gatekeeper::MqKind;
use crate::layout::{Permission, RegionKind, MU_A, MU_B};
use crate::machine::{offsets, Fault, Sim, SimConfig, SimError, Violation};
use crate::monitor::{Op, ZoneOp};
use crate::ppc::{ConfigEdit, DomainId, PpcState};
use crate::sched::{InOrder, RunStatus, Scheduler};
use crate::setup::{va, SimBuilder, ZONE1, ZONE1_SMC, ZONE2, ZONE2_SMC};
use crate::trace::Trace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AttackId {
    /// Map victim physical memory straight into the zone.
    #[serde(rename = "A1_MAPPING")]
    A1Mapping,
    /// Reprogram the partition controller from S.EL1.
    #[serde(rename = "A2_PPC_HIJACK")]
    A2PpcHijack,
    /// Read data a previous owner left in the caches.
    #[serde(rename = "A3_CACHE_LEAK")]
    A3CacheLeak,
    /// Poison cached trampoline lines and wait for EL3 to run them.
    #[serde(rename = "A4_CODE_INJECT")]
    A4CodeInject,
    /// Patch firmware before secure boot.
    #[serde(rename = "A5_TCB_TAMPER")]
    A5TcbTamper,
}

impl AttackId {
    pub const ALL: [AttackId; 5] =
        [AttackId::A1Mapping, AttackId::A2PpcHijack, AttackId::A3CacheLeak, AttackId::A4CodeInject, AttackId::A5TcbTamper];

    pub fn label(self) -> &'static str {
        match self {
            AttackId::A1Mapping => "A1_MAPPING",
            AttackId::A2PpcHijack => "A2_PPC_HIJACK",
            AttackId::A3CacheLeak => "A3_CACHE_LEAK",
            AttackId::A4CodeInject => "A4_CODE_INJECT",
            AttackId::A5TcbTamper => "A5_TCB_TAMPER",
        }
    }
}

impl fmt::Display for AttackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AttackId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.to_ascii_uppercase();
        AttackId::ALL
            .into_iter()
            .find(|a| a.label() == up || a.label()[..2] == up)
            .ok_or_else(|| format!("unknown attack `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackOutcome {
    Blocked,
    Succeeded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack: AttackId,
    pub outcome: AttackOutcome,
    pub status: Option<RunStatus>,
    pub boot_refused: bool,
    pub violations: Vec<Violation>,
    pub zone_faults: BTreeMap<Fault, usize>,
    pub ppc_unchanged: bool,
    pub trampoline_intact: bool,
}

const POISON: u64 = 0xBAD_C0DE;

fn honest_normal(b: &SimBuilder) -> Vec<Op> {
    let ree = b.addr(RegionKind::Ree, 0);
    let shared = b.addr(RegionKind::Shared, 0);
    vec![Op::Read(ree + 0x100), Op::Read(ree + 0x200), Op::Write(shared + 0x10, 1), Op::Read(ree + 0x300)]
}

/// Default two-zone system with the attack loaded: the attacker is the
/// trusted OS of zone 1, invoked from core 0.
pub fn attack_builder(config: SimConfig, attack: AttackId) -> SimBuilder {
    let b = SimBuilder::two_zones(config);
    let base = |k| b.addr(k, 0);
    let ree = base(RegionKind::Ree);
    let mon = base(RegionKind::Monitor);
    let z2 = base(RegionKind::Zone(ZONE2));
    let c = offsets::CANARY;
    let map = |slot, pa, ns: Ns, writable| ZoneOp::Map { va: va(slot), pa, ns, writable };
    let read = |slot, off| ZoneOp::Read { va: va(slot) + off };
    let mut core0 = vec![Op::Smc(ZONE1_SMC)];
    let zone1 = match attack {
        AttackId::A1Mapping => vec![
            map(0, ree, Ns::NON_SECURE, true),
            map(1, mon, Ns::SECURE, true),
            map(2, z2, Ns::SECURE, true),
            read(0, c),
            read(1, c),
            read(2, c),
        ],
        AttackId::A2PpcHijack => {
            let grab = ConfigEdit::SetPerm { did: DomainId::CLUSTER, region: RegionKind::Monitor, perm: Permission::RW };
            vec![
                map(0, base(RegionKind::PpcMmio), Ns::SECURE, true),
                map(1, base(RegionKind::Peripheral(MU_A)), Ns::SECURE, true),
                map(2, base(RegionKind::Peripheral(MU_B)), Ns::SECURE, true),
                ZoneOp::PpcWrite { va: va(0), edit: grab },
                ZoneOp::PpcWrite { va: va(0), edit: ConfigEdit::SetLock { locked: false } },
                ZoneOp::MqSend { kind: MqKind::UnlockPpc, claim: 0xDEAD_BEEF },
                ZoneOp::MqAwait,
                ZoneOp::PpcWrite { va: va(0), edit: grab },
                ZoneOp::MuBWrite { va: va(2) },
                ZoneOp::ReadTokenReg,
            ]
        }
        AttackId::A3CacheLeak => {
            // the normal world and zone 2 warm the caches before zone 1 runs
            core0 = vec![Op::Read(ree + c), Op::Smc(ZONE2_SMC), Op::Smc(ZONE1_SMC)];
            vec![
                map(0, ree, Ns::NON_SECURE, true),
                map(1, mon, Ns::SECURE, true),
                map(2, z2, Ns::SECURE, true),
                read(0, c),
                read(1, offsets::MONITOR_ROUTING),
                read(2, c),
                read(2, 0x80),
            ]
        }
        AttackId::A4CodeInject => {
            core0 = vec![Op::Smc(ZONE1_SMC), Op::Smc(ZONE1_SMC)];
            let t = |off| va(0) + off;
            vec![
                map(0, base(RegionKind::Trampoline), Ns::SECURE, true),
                ZoneOp::Read { va: t(offsets::TRAMPOLINE_VECTOR) },
                ZoneOp::Read { va: t(offsets::TRAMPOLINE_EXIT) },
                ZoneOp::Write { va: t(offsets::TRAMPOLINE_VECTOR), value: POISON },
                ZoneOp::Write { va: t(offsets::TRAMPOLINE_EXIT), value: POISON },
                ZoneOp::Write { va: t(offsets::TRAMPOLINE_ENTRY), value: POISON },
            ]
        }
        AttackId::A5TcbTamper => vec![ZoneOp::Work { units: 1 }],
    };
    let zone2 = vec![
        map(0, z2, Ns::SECURE, true),
        ZoneOp::Read { va: va(0) + c },
        ZoneOp::Write { va: va(0) + 0x80, value: 0x5EC2E7 },
    ];
    let normal = honest_normal(&b);
    b.zone(ZONE1, zone1).zone(ZONE2, zone2).core(0, core0).core(1, normal)
}

/// Applies the verdict rules to a simulator after (part of) an attack run.
/// The controller comparison only applies once every core has stopped.
pub fn judge(attack: AttackId, sim: &Sim, boot_ppc: &PpcState) -> AttackReport {
    let stopped = sim.all_stopped();
    let ppc_unchanged = !stopped || sim.state.ppc == *boot_ppc;
    let trampoline_intact = sim.trampoline_intact();
    let violations = sim.violations().to_vec();
    let blocked = violations.is_empty() && ppc_unchanged && trampoline_intact;
    AttackReport {
        attack,
        outcome: if blocked { AttackOutcome::Blocked } else { AttackOutcome::Succeeded },
        status: None,
        boot_refused: false,
        violations,
        zone_faults: sim.zone_faults(),
        ppc_unchanged,
        trampoline_intact,
    }
}

/// Builds, boots and runs one attack under `scheduler`.
pub fn run_attack(
    config: SimConfig,
    attack: AttackId,
    scheduler: &mut dyn Scheduler,
    max_steps: usize,
) -> Result<(AttackReport, Sim), SimError> {
    let builder = attack_builder(config, attack);
    let mut sim = builder.build_unbooted()?;
    if attack == AttackId::A5TcbTamper {
        sim.patch_firmware(|fw| fw.trampoline[1] ^= POISON);
        return match sim.boot() {
            Err(SimError::IntegrityCheckFailed(_)) => {
                let mut report = judge(attack, &sim, &sim.state.ppc.clone());
                report.boot_refused = true;
                report.outcome = AttackOutcome::Blocked;
                Ok((report, sim))
            }
            Err(e) => Err(e),
            Ok(()) => {
                let mut report = judge(attack, &sim, &sim.state.ppc.clone());
                report.outcome = AttackOutcome::Succeeded;
                Ok((report, sim))
            }
        };
    }
    sim.boot()?;
    let boot_ppc = sim.state.ppc.clone();
    let status = sim.run(scheduler, max_steps)?;
    let mut report = judge(attack, &sim, &boot_ppc);
    report.status = Some(status);
    Ok((report, sim))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BruteForceResult {
    pub seed: u64,
    pub token_bits: u32,
    /// Requests sent up to and including the accepted one.
    pub guesses: u64,
    pub succeeded: bool,
}

/// A zone enumerates token values 0, 1, 2, ... through the real mailbox
/// until the gatekeeper accepts one, with the gatekeeper booted from `seed`.
pub fn brute_force_token(token_bits: u32, seed: u64) -> Result<BruteForceResult, SimError> {
    let mut config = SimConfig { token_bits, boot_seed: seed, ..SimConfig::default() };
    config.cluster.cores = 1;
    let b = SimBuilder::two_zones(config);
    let mu_a = b.addr(RegionKind::Peripheral(MU_A), 0);
    let space = 1u64 << token_bits.min(20);
    let mut zone1 = vec![ZoneOp::Map { va: va(0), pa: mu_a, ns: Ns::SECURE, writable: true }];
    for guess in 0..space {
        zone1.push(ZoneOp::MqSend { kind: MqKind::UnlockPpc, claim: guess });
        zone1.push(ZoneOp::MqAwait);
    }
    let mut sim = b.zone(ZONE1, zone1).core(0, vec![Op::Smc(ZONE1_SMC)]).build_unbooted()?;
    sim.set_trace(Trace::disabled());
    sim.boot()?;
    let status = sim.run(&mut InOrder, usize::MAX)?;
    let failures = sim.state.gatekeeper.auth_failures();
    let succeeded = status == RunStatus::Violated;
    Ok(BruteForceResult { seed, token_bits, guesses: failures + succeeded as u64, succeeded })
}

//! Scenario documents: a TOML description of a system, its programs and a
//! scheduling mode, plus the runner that turns one into a property report.

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{
    attack_builder, explore, judge, replay, AttackId, AttackOutcome, ExploreConfig, ExploreError, Witness,
};
use crate::cluster::Ns;
use crate::cost::{account, CostBreakdown, CostWeights, DeploymentConfig};
use crate::gatekeeper::MqKind;
use crate::layout::{MemoryLayout, PeriphId, PhysAddr, RegionKind, ZoneId, MU_A, MU_B};
use crate::machine::{Mitigations, Property, Sim, SimConfig, SimError, Violation, ViolationKind};
use crate::monitor::{Op, Phase, ZoneOp};
use crate::ppc::ConfigEdit;
use crate::sched::{InOrder, RandomScheduler, RoundRobin, RunStatus, Scheduler};
use crate::setup::{va, SimBuilder};
use crate::trace::{Trace, TraceEvent};
use crate::zones::{SmcId, ZoneManifest};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> SpecError {
    SpecError::Invalid { field: field.into(), message: message.into() }
}

/// A physical or virtual address: a plain integer, or `<base>[+<offset>]`
/// where base is a region name (`ree`, `shared`, `monitor`, `trampoline`,
/// `gatekeeper`, `ppc`, `mu_a`, `mu_b`, `zone<N>`, `periph<N>`) or, for
/// zone virtual addresses, `va<N>` (the N-th zone page).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Addr {
    Abs(u64),
    Sym(String),
}

fn parse_int(s: &str) -> Option<u64> {
    let s = s.trim().replace('_', "");
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

fn parse_region(name: &str) -> Option<RegionKind> {
    Some(match name {
        "ree" => RegionKind::Ree,
        "shared" => RegionKind::Shared,
        "monitor" => RegionKind::Monitor,
        "trampoline" => RegionKind::Trampoline,
        "gatekeeper" => RegionKind::Gatekeeper,
        "ppc" => RegionKind::PpcMmio,
        "mu_a" => RegionKind::Peripheral(MU_A),
        "mu_b" => RegionKind::Peripheral(MU_B),
        _ => {
            if let Some(n) = name.strip_prefix("zone") {
                RegionKind::Zone(ZoneId(n.parse().ok()?))
            } else {
                RegionKind::Peripheral(PeriphId(name.strip_prefix("periph")?.parse().ok()?))
            }
        }
    })
}

fn split_sym(s: &str) -> Result<(&str, u64), String> {
    let (base, off) = match s.split_once('+') {
        Some((b, o)) => (b.trim(), parse_int(o).ok_or_else(|| format!("bad offset in `{s}`"))?),
        None => (s.trim(), 0),
    };
    Ok((base, off))
}

impl Addr {
    fn physical(&self, layout: &MemoryLayout, field: &str) -> Result<PhysAddr, SpecError> {
        match self {
            Addr::Abs(a) => Ok(*a),
            Addr::Sym(s) => {
                let (base, off) = split_sym(s).map_err(|m| invalid(field, m))?;
                if let Some(a) = parse_int(base) {
                    return Ok(a + off);
                }
                let kind = parse_region(base).ok_or_else(|| invalid(field, format!("unknown region `{base}`")))?;
                let region =
                    layout.region(kind).ok_or_else(|| invalid(field, format!("region `{base}` does not exist")))?;
                Ok(region.start + off)
            }
        }
    }

    fn virt(&self, field: &str) -> Result<u64, SpecError> {
        match self {
            Addr::Abs(a) => Ok(*a),
            Addr::Sym(s) => {
                let (base, off) = split_sym(s).map_err(|m| invalid(field, m))?;
                let slot = base
                    .strip_prefix("va")
                    .and_then(parse_int)
                    .ok_or_else(|| invalid(field, format!("expected `va<N>[+offset]`, got `{s}`")))?;
                Ok(va(slot) + off)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NsSpec {
    Secure,
    NonSecure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MqKindSpec {
    Unlock,
    Lock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ZoneStep {
    Map {
        va: Addr,
        pa: Addr,
        #[serde(default = "secure")]
        ns: NsSpec,
        #[serde(default)]
        writable: bool,
    },
    Read {
        va: Addr,
    },
    Write {
        va: Addr,
        value: u64,
    },
    Work {
        units: u32,
    },
    ReadTokenReg,
    MqSend {
        kind: MqKindSpec,
        claim: u64,
    },
    MqAwait,
    PpcWrite {
        va: Addr,
        edit: ConfigEdit,
    },
    MuBWrite {
        va: Addr,
    },
    Preempt,
}

fn secure() -> NsSpec {
    NsSpec::Secure
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoreStep {
    Read { addr: Addr },
    Write { addr: Addr, value: u64 },
    Smc { id: SmcId },
    Irq,
    Sleep,
    MonitorRead { addr: Addr },
    MonitorWrite { addr: Addr, value: u64 },
    ReturnToNormal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneSpec {
    pub id: u16,
    #[serde(default = "default_zone_size")]
    pub size: u64,
    /// Half-open `[first, end)` range of SMC ids routed to the zone.
    pub smc: [SmcId; 2],
    #[serde(default)]
    pub peripherals: Vec<u16>,
    #[serde(default)]
    pub program: Vec<ZoneStep>,
}

fn default_zone_size() -> u64 {
    64 << 10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreSpec {
    pub id: usize,
    #[serde(default)]
    pub program: Vec<CoreStep>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    InOrder,
    RoundRobin,
    Random,
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSpec {
    pub mode: ScheduleMode,
    pub seed: u64,
    /// Independent runs for the random mode, seeded `seed`, `seed + 1`, ...
    pub runs: usize,
    pub depth: usize,
    pub max_steps: usize,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec { mode: ScheduleMode::Random, seed: 0, runs: 1, depth: 40, max_steps: 100_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSpec {
    pub cores: usize,
    pub token_bits: u32,
    pub boot_seed: u64,
    pub l1_lines: usize,
    pub l2_lines: usize,
    pub tlb_entries: usize,
}

impl Default for SystemSpec {
    fn default() -> Self {
        let c = SimConfig::default();
        SystemSpec {
            cores: 2,
            token_bits: c.token_bits,
            boot_seed: c.boot_seed,
            l1_lines: c.cluster.l1_lines,
            l2_lines: c.cluster.l2_lines,
            tlb_entries: c.cluster.tlb_entries,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub trace: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_config")]
    pub config: DeploymentConfig,
    #[serde(default)]
    pub system: SystemSpec,
    #[serde(default)]
    pub mitigations: Mitigations,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    /// Run a built-in attack (`A1` .. `A5` or its full name) instead of
    /// the zones and cores given here.
    #[serde(default)]
    pub attack: Option<String>,
    /// Properties whose violation fails the run. Defaults to all.
    #[serde(default = "all_properties")]
    pub properties: Vec<Property>,
    #[serde(default)]
    pub zones: Vec<ZoneSpec>,
    #[serde(default)]
    pub cores: Vec<CoreSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_config() -> DeploymentConfig {
    DeploymentConfig::Rz
}

fn all_properties() -> Vec<Property> {
    vec![Property::P1, Property::P2, Property::P3, Property::Liveness]
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self, SpecError> {
        let spec: ScenarioSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn attack_id(&self) -> Result<Option<AttackId>, SpecError> {
        self.attack.as_deref().map(|a| a.parse().map_err(|m: String| invalid("attack", m))).transpose()
    }

    fn validate(&self) -> Result<(), SpecError> {
        if self.system.cores == 0 {
            return Err(invalid("system.cores", "must be at least 1"));
        }
        if self.attack_id()?.is_some() {
            if !self.zones.is_empty() {
                return Err(invalid("zones", "attack scenarios use the built-in two-zone system"));
            }
            if !self.cores.is_empty() {
                return Err(invalid("cores", "attack scenarios use the built-in programs"));
            }
            return Ok(());
        }
        if self.zones.is_empty() {
            return Err(invalid("zones", "at least one zone is required"));
        }
        let ids: BTreeSet<u16> = self.zones.iter().map(|z| z.id).collect();
        for (i, z) in self.zones.iter().enumerate() {
            if z.smc[0] >= z.smc[1] {
                return Err(invalid(format!("zones[{i}].smc"), "range must be non-empty"));
            }
        }
        for (i, c) in self.cores.iter().enumerate() {
            if c.id >= self.system.cores {
                return Err(invalid(format!("cores[{i}].id"), format!("core {} does not exist", c.id)));
            }
            for (j, step) in c.program.iter().enumerate() {
                let addr = match step {
                    CoreStep::Read { addr }
                    | CoreStep::Write { addr, .. }
                    | CoreStep::MonitorRead { addr }
                    | CoreStep::MonitorWrite { addr, .. } => Some(addr),
                    _ => None,
                };
                check_zone_ref(addr, &ids, &format!("cores[{i}].program[{j}].addr"))?;
            }
        }
        for (i, z) in self.zones.iter().enumerate() {
            for (j, step) in z.program.iter().enumerate() {
                if let ZoneStep::Map { pa, .. } = step {
                    check_zone_ref(Some(pa), &ids, &format!("zones[{i}].program[{j}].pa"))?;
                }
            }
        }
        Ok(())
    }

    pub fn sim_config(&self, deployment: DeploymentConfig) -> SimConfig {
        let mut c = SimConfig::default();
        c.cluster.cores = self.system.cores;
        c.cluster.l1_lines = self.system.l1_lines;
        c.cluster.l2_lines = self.system.l2_lines;
        c.cluster.tlb_entries = self.system.tlb_entries;
        c.token_bits = self.system.token_bits;
        c.boot_seed = self.system.boot_seed;
        c.mitigations = self.mitigations.clone();
        deployment.apply(&mut c);
        c
    }

    /// The system this scenario describes, not yet booted.
    pub fn builder(&self, deployment: DeploymentConfig) -> Result<SimBuilder, SpecError> {
        let config = self.sim_config(deployment);
        if let Some(attack) = self.attack_id()? {
            return Ok(attack_builder(config, attack));
        }
        let manifests = self
            .zones
            .iter()
            .map(|z| {
                let mut m = ZoneManifest::new(ZoneId(z.id), z.size, Range { start: z.smc[0], end: z.smc[1] });
                m.peripheral_whitelist = z.peripherals.iter().map(|&p| PeriphId(p)).collect();
                m
            })
            .collect();
        let mut b = SimBuilder::new(config, manifests);
        let layout = MemoryLayout::build(&b.manifests, &b.config.layout)
            .map_err(|e| invalid("zones", e.to_string()))?;
        for (i, z) in self.zones.iter().enumerate() {
            let program = z
                .program
                .iter()
                .enumerate()
                .map(|(j, s)| zone_op(s, &layout, &format!("zones[{i}].program[{j}]")))
                .collect::<Result<Vec<_>, _>>()?;
            b = b.zone(ZoneId(z.id), program);
        }
        for (i, c) in self.cores.iter().enumerate() {
            let program = c
                .program
                .iter()
                .enumerate()
                .map(|(j, s)| core_op(s, &layout, &format!("cores[{i}].program[{j}]")))
                .collect::<Result<Vec<_>, _>>()?;
            b = b.core(c.id, program);
        }
        Ok(b)
    }
}

fn check_zone_ref(addr: Option<&Addr>, ids: &BTreeSet<u16>, field: &str) -> Result<(), SpecError> {
    if let Some(Addr::Sym(s)) = addr {
        let base = split_sym(s).map_err(|m| invalid(field, m))?.0;
        if let Some(RegionKind::Zone(z)) = parse_region(base) {
            if !ids.contains(&z.0) {
                return Err(invalid(field, format!("zone {} is not declared", z.0)));
            }
        }
    }
    Ok(())
}

fn zone_op(step: &ZoneStep, layout: &MemoryLayout, field: &str) -> Result<ZoneOp, SpecError> {
    let f = |name: &str| format!("{field}.{name}");
    Ok(match step {
        ZoneStep::Map { va, pa, ns, writable } => ZoneOp::Map {
            va: va.virt(&f("va"))?,
            pa: pa.physical(layout, &f("pa"))?,
            ns: if *ns == NsSpec::Secure { Ns::SECURE } else { Ns::NON_SECURE },
            writable: *writable,
        },
        ZoneStep::Read { va } => ZoneOp::Read { va: va.virt(&f("va"))? },
        ZoneStep::Write { va, value } => ZoneOp::Write { va: va.virt(&f("va"))?, value: *value },
        ZoneStep::Work { units } => ZoneOp::Work { units: *units },
        ZoneStep::ReadTokenReg => ZoneOp::ReadTokenReg,
        ZoneStep::MqSend { kind, claim } => ZoneOp::MqSend {
            kind: if *kind == MqKindSpec::Unlock { MqKind::UnlockPpc } else { MqKind::LockPpc },
            claim: *claim,
        },
        ZoneStep::MqAwait => ZoneOp::MqAwait,
        ZoneStep::PpcWrite { va, edit } => ZoneOp::PpcWrite { va: va.virt(&f("va"))?, edit: *edit },
        ZoneStep::MuBWrite { va } => ZoneOp::MuBWrite { va: va.virt(&f("va"))? },
        ZoneStep::Preempt => ZoneOp::Preempt,
    })
}

fn core_op(step: &CoreStep, layout: &MemoryLayout, field: &str) -> Result<Op, SpecError> {
    let addr = |a: &Addr| a.physical(layout, &format!("{field}.addr"));
    Ok(match step {
        CoreStep::Read { addr: a } => Op::Read(addr(a)?),
        CoreStep::Write { addr: a, value } => Op::Write(addr(a)?, *value),
        CoreStep::Smc { id } => Op::Smc(*id),
        CoreStep::Irq => Op::Irq,
        CoreStep::Sleep => Op::Sleep,
        CoreStep::MonitorRead { addr: a } => Op::MonitorRead(addr(a)?),
        CoreStep::MonitorWrite { addr: a, value } => Op::MonitorWrite(addr(a)?, *value),
        CoreStep::ReturnToNormal => Op::ReturnToNormal,
    })
}

/// Command-line overrides applied on top of the document.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    pub config: Option<DeploymentConfig>,
    pub seed: Option<u64>,
    pub depth: Option<usize>,
    pub explore: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyVerdict {
    pub property: Property,
    pub holds: bool,
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub attack: AttackId,
    pub outcome: AttackOutcome,
    pub runs: usize,
    pub blocked_runs: usize,
    pub boot_refused: bool,
    pub zone_faults: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSummary {
    pub depth: usize,
    pub states_visited: usize,
    pub transitions: usize,
    pub exhausted: bool,
    pub terminal_states: usize,
    pub phase_coverage: Vec<Phase>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub config: DeploymentConfig,
    pub mode: ScheduleMode,
    pub seed: u64,
    pub runs: usize,
    /// Status of the run whose trace was recorded.
    pub status: Option<RunStatus>,
    pub all_hold: bool,
    pub properties: Vec<PropertyVerdict>,
    pub violations: Vec<Violation>,
    pub attack: Option<AttackSummary>,
    pub exploration: Option<ExplorationSummary>,
    /// Costs of the recorded trace under the default weights.
    pub costs: CostBreakdown,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Explore(#[from] ExploreError),
}

pub struct ScenarioOutcome {
    pub report: ScenarioReport,
    pub trace: Trace,
}

struct RunResult {
    sim: Sim,
    status: Option<RunStatus>,
    blocked: bool,
    boot_refused: bool,
    witness_schedule: Vec<crate::sched::Actor>,
}

struct Recording<S> {
    inner: S,
    picked: Vec<crate::sched::Actor>,
}

impl<S: Scheduler> Scheduler for Recording<S> {
    fn pick(&mut self, enabled: &[crate::sched::Actor]) -> crate::sched::Actor {
        let a = self.inner.pick(enabled);
        self.picked.push(a);
        a
    }
}

fn boot(builder: &SimBuilder, attack: Option<AttackId>) -> Result<(Sim, bool), SimError> {
    let mut sim = builder.build_unbooted()?;
    if attack == Some(AttackId::A5TcbTamper) {
        sim.patch_firmware(|fw| fw.trampoline[1] ^= 0xBAD_C0DE);
        return match sim.boot() {
            Err(SimError::IntegrityCheckFailed(_)) => Ok((sim, true)),
            Err(e) => Err(e),
            Ok(()) => Ok((sim, false)),
        };
    }
    sim.boot()?;
    Ok((sim, false))
}

fn single_run(
    builder: &SimBuilder,
    attack: Option<AttackId>,
    mode: ScheduleMode,
    seed: u64,
    max_steps: usize,
) -> Result<RunResult, SimError> {
    let (mut sim, refused) = boot(builder, attack)?;
    if refused {
        return Ok(RunResult { sim, status: None, blocked: true, boot_refused: true, witness_schedule: Vec::new() });
    }
    if attack == Some(AttackId::A5TcbTamper) {
        return Ok(RunResult { sim, status: None, blocked: false, boot_refused: false, witness_schedule: Vec::new() });
    }
    let boot_ppc = sim.state.ppc.clone();
    let inner: Box<dyn Scheduler> = match mode {
        ScheduleMode::InOrder | ScheduleMode::Exhaustive => Box::new(InOrder),
        ScheduleMode::RoundRobin => Box::new(RoundRobin::default()),
        ScheduleMode::Random => Box::new(RandomScheduler::new(seed)),
    };
    let mut sched = Recording { inner, picked: Vec::new() };
    let status = sim.run(&mut sched, max_steps)?;
    let blocked = match attack {
        Some(a) => judge(a, &sim, &boot_ppc).outcome == AttackOutcome::Blocked,
        None => sim.violations().is_empty(),
    };
    Ok(RunResult { sim, status: Some(status), blocked, boot_refused: false, witness_schedule: sched.picked })
}

/// Boots the described system, runs it and checks the asserted properties.
pub fn run_scenario(spec: &ScenarioSpec, opts: &RunOptions) -> Result<ScenarioOutcome, RunError> {
    let deployment = opts.config.unwrap_or(spec.config);
    let seed = opts.seed.unwrap_or(spec.schedule.seed);
    let depth = opts.depth.unwrap_or(spec.schedule.depth);
    let mode = if opts.explore { ScheduleMode::Exhaustive } else { spec.schedule.mode };
    let attack = spec.attack_id()?;
    let builder = spec.builder(deployment)?;

    let mut violations: Vec<Witness> = Vec::new();
    let mut exploration = None;
    let mut attack_runs = 0;
    let mut blocked_runs = 0;
    let mut boot_refused = false;
    let mut zone_faults = 0;
    let recorded: Sim;
    let recorded_status;

    if mode == ScheduleMode::Exhaustive {
        let first = single_run(&builder, attack, ScheduleMode::InOrder, seed, spec.schedule.max_steps)?;
        attack_runs = 1;
        blocked_runs = first.blocked as usize;
        boot_refused = first.boot_refused;
        zone_faults = first.sim.zone_faults().values().sum();
        if first.boot_refused || attack == Some(AttackId::A5TcbTamper) {
            recorded_status = first.status;
            recorded = first.sim;
        } else {
            let (base, _) = boot(&builder, attack)?;
            let report = explore(&base, &ExploreConfig::depth(depth))?;
            exploration = Some(ExplorationSummary {
                depth,
                states_visited: report.states_visited,
                transitions: report.transitions,
                exhausted: report.exhausted,
                terminal_states: report.terminal_states,
                phase_coverage: report.phase_coverage.iter().copied().collect(),
            });
            violations = report.violations.clone();
            match report.violations.first() {
                Some(w) => {
                    let mut r = replay(&base, &w.schedule);
                    recorded_status = r.status();
                    recorded = r;
                }
                None => {
                    recorded_status = first.status;
                    recorded = first.sim;
                }
            }
        }
    } else {
        let runs = if mode == ScheduleMode::Random { spec.schedule.runs.max(1) } else { 1 };
        let mut keep: Option<RunResult> = None;
        for run in 0..runs {
            let r = single_run(&builder, attack, mode, seed.wrapping_add(run as u64), spec.schedule.max_steps)?;
            attack_runs += 1;
            blocked_runs += r.blocked as usize;
            boot_refused |= r.boot_refused;
            zone_faults += r.sim.zone_faults().values().sum::<usize>();
            let failing = !r.sim.violations().is_empty();
            for v in r.sim.violations() {
                if !violations.iter().any(|w| w.violation == *v) {
                    violations.push(Witness { violation: *v, schedule: r.witness_schedule.clone() });
                }
            }
            let keep_failing = keep.as_ref().is_some_and(|k| !k.sim.violations().is_empty());
            if keep.is_none() || (failing && !keep_failing) {
                keep = Some(r);
            }
        }
        let k = keep.expect("at least one run");
        recorded_status = k.status;
        recorded = k.sim;
    }

    let asserted: BTreeSet<Property> = spec.properties.iter().copied().collect();
    let properties: Vec<PropertyVerdict> = [Property::P1, Property::P2, Property::P3, Property::Liveness]
        .into_iter()
        .filter(|p| asserted.contains(p))
        .map(|p| {
            let witness = violations.iter().find(|w| w.violation.property == p).cloned();
            PropertyVerdict { property: p, holds: witness.is_none(), witness }
        })
        .collect();
    let attack_summary = attack.map(|a| AttackSummary {
        attack: a,
        outcome: if blocked_runs == attack_runs && violations.is_empty() {
            AttackOutcome::Blocked
        } else {
            AttackOutcome::Succeeded
        },
        runs: attack_runs,
        blocked_runs,
        boot_refused,
        zone_faults,
    });
    let all_hold = properties.iter().all(|p| p.holds)
        && attack_summary.as_ref().is_none_or(|a| a.outcome == AttackOutcome::Blocked);
    let trace = recorded.trace.clone();
    let report = ScenarioReport {
        name: spec.name.clone(),
        config: deployment,
        mode,
        seed,
        runs: attack_runs,
        status: recorded_status,
        all_hold,
        properties,
        violations: violations.iter().map(|w| w.violation).collect(),
        attack: attack_summary,
        exploration,
        costs: account(trace.events(), &CostWeights::default()),
    };
    Ok(ScenarioOutcome { report, trace })
}

/// Event names a trace of this scenario may contain that are worth
/// flagging in a summary.
pub fn is_notable(event: &TraceEvent) -> bool {
    matches!(
        event,
        TraceEvent::Violation { .. }
            | TraceEvent::BootRefused { .. }
            | TraceEvent::Deadlock
            | TraceEvent::Fault { .. }
            | TraceEvent::EntryAbort { .. }
    )
}

/// Short human-readable label for a violation.
pub fn describe(v: &Violation) -> String {
    let what = match v.kind {
        ViolationKind::Leak { region } => format!("leak of {region:?}"),
        ViolationKind::Tamper { region } => format!("tamper with {region:?}"),
        ViolationKind::CodeInjection { pa } => format!("code injection at {pa:#x}"),
        ViolationKind::Crash { fault, el, world } => format!("crash ({fault:?} at {el:?} {world:?})"),
        other => other.label().replace('_', " "),
    };
    match v.core {
        Some(c) => format!("{:?}: {what} on core {c}", v.property),
        None => format!("{:?}: {what}", v.property),
    }
}

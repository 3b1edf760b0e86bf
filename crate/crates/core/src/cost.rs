//! Operation-count cost accounting over traces.
//!
//! Weights are abstract units, not time. Each trace event contributes a
//! quantity to one or more [`CostTerm`]s and the cost is the dot product
//! with a [`CostWeights`] vector. Keeping the quantities around lets tests
//! reason about orderings that must hold for every positive weight vector.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::Ns;
use crate::layout::RegionKind;
use crate::machine::{Deployment, SimConfig, SimError};
use crate::monitor::{Op, Phase, ZoneOp};
use crate::sched::{InOrder, RunStatus};
use crate::setup::{va, SimBuilder, ZONE1, ZONE1_SMC, ZONE2, ZONE2_SMC};
use crate::trace::{Lookup, TraceEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostTerm {
    CacheLineFlush,
    TlbInvalidate,
    MqRoundtrip,
    UncachedFetch,
    PpcConfigWrite,
    ContextSaveRestore,
    SmcTrap,
    MemAccess,
    ZoneWorkUnit,
    Ipi,
    SystemRegisterWrite,
    Interrupt,
}

impl CostTerm {
    pub const ALL: [CostTerm; 12] = [
        CostTerm::CacheLineFlush,
        CostTerm::TlbInvalidate,
        CostTerm::MqRoundtrip,
        CostTerm::UncachedFetch,
        CostTerm::PpcConfigWrite,
        CostTerm::ContextSaveRestore,
        CostTerm::SmcTrap,
        CostTerm::MemAccess,
        CostTerm::ZoneWorkUnit,
        CostTerm::Ipi,
        CostTerm::SystemRegisterWrite,
        CostTerm::Interrupt,
    ];
}

/// Unit cost per event kind. All weights are non-negative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    /// Per cache line written back or invalidated by maintenance.
    pub cache_line_flush: f64,
    /// Per TLB invalidate operation.
    pub tlb_invalidate: f64,
    /// Per gatekeeper request and reply. Defaults to the gatekeeper core's
    /// clock-speed handicap.
    pub mq_roundtrip: f64,
    /// Extra cost of an instruction fetch or table walk that bypasses the
    /// caches, on top of `mem_access`.
    pub uncached_fetch: f64,
    pub ppc_config_write: f64,
    pub context_save_restore: f64,
    pub smc_trap: f64,
    /// Any load, store or instruction fetch.
    pub mem_access: f64,
    pub zone_work_unit: f64,
    pub ipi: f64,
    /// MMU and coherency toggles.
    pub system_register_write: f64,
    pub interrupt: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { mq_roundtrip: 5.6, ..CostWeights::uniform(1.0) }
    }
}

impl CostWeights {
    pub fn uniform(w: f64) -> Self {
        CostWeights {
            cache_line_flush: w,
            tlb_invalidate: w,
            mq_roundtrip: w,
            uncached_fetch: w,
            ppc_config_write: w,
            context_save_restore: w,
            smc_trap: w,
            mem_access: w,
            zone_work_unit: w,
            ipi: w,
            system_register_write: w,
            interrupt: w,
        }
    }

    pub fn get(&self, term: CostTerm) -> f64 {
        match term {
            CostTerm::CacheLineFlush => self.cache_line_flush,
            CostTerm::TlbInvalidate => self.tlb_invalidate,
            CostTerm::MqRoundtrip => self.mq_roundtrip,
            CostTerm::UncachedFetch => self.uncached_fetch,
            CostTerm::PpcConfigWrite => self.ppc_config_write,
            CostTerm::ContextSaveRestore => self.context_save_restore,
            CostTerm::SmcTrap => self.smc_trap,
            CostTerm::MemAccess => self.mem_access,
            CostTerm::ZoneWorkUnit => self.zone_work_unit,
            CostTerm::Ipi => self.ipi,
            CostTerm::SystemRegisterWrite => self.system_register_write,
            CostTerm::Interrupt => self.interrupt,
        }
    }

    pub fn set(&mut self, term: CostTerm, value: f64) {
        let slot = match term {
            CostTerm::CacheLineFlush => &mut self.cache_line_flush,
            CostTerm::TlbInvalidate => &mut self.tlb_invalidate,
            CostTerm::MqRoundtrip => &mut self.mq_roundtrip,
            CostTerm::UncachedFetch => &mut self.uncached_fetch,
            CostTerm::PpcConfigWrite => &mut self.ppc_config_write,
            CostTerm::ContextSaveRestore => &mut self.context_save_restore,
            CostTerm::SmcTrap => &mut self.smc_trap,
            CostTerm::MemAccess => &mut self.mem_access,
            CostTerm::ZoneWorkUnit => &mut self.zone_work_unit,
            CostTerm::Ipi => &mut self.ipi,
            CostTerm::SystemRegisterWrite => &mut self.system_register_write,
            CostTerm::Interrupt => &mut self.interrupt,
        };
        *slot = value;
    }

    /// Reads a partial weight table; unnamed weights keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self, WeightsError> {
        let w: CostWeights = toml::from_str(text)?;
        match CostTerm::ALL.into_iter().find(|&t| !(w.get(t) >= 0.0 && w.get(t).is_finite())) {
            Some(t) => Err(WeightsError::Negative(t)),
            None => Ok(w),
        }
    }

    pub fn is_valid(&self) -> bool {
        CostTerm::ALL.iter().all(|&t| self.get(t) >= 0.0 && self.get(t).is_finite())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WeightsError {
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("weight `{0:?}` must be a finite non-negative number")]
    Negative(CostTerm),
}

/// Quantities charged by a single event.
pub fn event_terms(event: &TraceEvent) -> Vec<(CostTerm, u64)> {
    use CostTerm::*;
    match event {
        TraceEvent::Mem { lookup, .. } => {
            let mut t = vec![(MemAccess, 1)];
            if *lookup == Lookup::Uncached {
                t.push((UncachedFetch, 1));
            }
            t
        }
        TraceEvent::Fetch { cached, .. } => {
            if *cached {
                vec![(MemAccess, 1)]
            } else {
                vec![(MemAccess, 1), (UncachedFetch, 1)]
            }
        }
        TraceEvent::TlbWalk { .. } => vec![(MemAccess, 1), (UncachedFetch, 1)],
        TraceEvent::Flush { lines, .. } | TraceEvent::Invalidate { lines, .. } => vec![(CacheLineFlush, *lines as u64)],
        TraceEvent::Tlbi { .. } => vec![(TlbInvalidate, 1)],
        TraceEvent::MqSend { .. } => vec![(MqRoundtrip, 1)],
        TraceEvent::PpcConfig { .. } => vec![(PpcConfigWrite, 1)],
        TraceEvent::Ctx { .. } => vec![(ContextSaveRestore, 1)],
        TraceEvent::Smc { .. } => vec![(SmcTrap, 1)],
        TraceEvent::Work { units, .. } => vec![(ZoneWorkUnit, u64::from(*units))],
        TraceEvent::Ipi { .. } => vec![(Ipi, 1)],
        TraceEvent::Mmu { .. } | TraceEvent::Coherency { .. } => vec![(SystemRegisterWrite, 1)],
        TraceEvent::Irq { .. } => vec![(Interrupt, 1)],
        _ => Vec::new(),
    }
}

pub fn event_cost(event: &TraceEvent, w: &CostWeights) -> f64 {
    event_terms(event).into_iter().fold(0.0, |acc, (t, q)| acc + w.get(t) * q as f64)
}

/// Where a cost was spent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    /// Normal-world execution.
    Normal,
    /// SMC trap and routing before any protocol step.
    Dispatch,
    /// A protocol phase, including cross-core synchronisation.
    Phase(Phase),
    /// Trap from the zone back into the trampoline.
    ExitTrap,
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bucket::Normal => f.write_str("normal"),
            Bucket::Dispatch => f.write_str("dispatch"),
            Bucket::Phase(Phase::SyncHalt) => f.write_str("sync"),
            Bucket::Phase(p) => f.write_str(p.label()),
            Bucket::ExitTrap => f.write_str("exit_trap"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub total: f64,
    /// Cost per bucket, keyed by the bucket's display name.
    pub buckets: BTreeMap<String, f64>,
    /// Quantity charged per term, independent of the weights.
    pub quantities: BTreeMap<CostTerm, u64>,
    pub smc_calls: usize,
    pub zone_entries: usize,
}

impl CostBreakdown {
    pub fn bucket(&self, b: Bucket) -> f64 {
        self.buckets.get(&b.to_string()).copied().unwrap_or(0.0)
    }

    pub fn quantity(&self, t: CostTerm) -> u64 {
        self.quantities.get(&t).copied().unwrap_or(0)
    }

    /// Re-prices the recorded quantities under other weights.
    pub fn reprice(&self, w: &CostWeights) -> f64 {
        self.quantities.iter().fold(0.0, |acc, (&t, &q)| acc + w.get(t) * q as f64)
    }
}

/// Tracks which bucket each core's events belong to.
#[derive(Default)]
struct Attribution {
    buckets: BTreeMap<usize, Bucket>,
    last_core: Option<usize>,
    last_sender: Option<usize>,
}

impl Attribution {
    fn bucket_for(&mut self, event: &TraceEvent) -> Bucket {
        let core = match event {
            TraceEvent::MqReply { .. } | TraceEvent::AuthFail { .. } => self.last_sender,
            TraceEvent::PpcConfig { core: None, .. } => self.last_sender,
            _ => event.core().or(self.last_core),
        };
        let Some(core) = core else { return Bucket::Normal };
        let slot = self.buckets.entry(core).or_insert(Bucket::Normal);
        match event {
            TraceEvent::Smc { .. } | TraceEvent::Wake { .. } => *slot = Bucket::Dispatch,
            TraceEvent::Phase { phase: Phase::Idle, .. } => *slot = Bucket::Normal,
            TraceEvent::Phase { phase, .. } => *slot = Bucket::Phase(*phase),
            TraceEvent::ZoneEnter { .. } => *slot = Bucket::Phase(Phase::InZone),
            TraceEvent::ZoneExit { .. } => *slot = Bucket::ExitTrap,
            TraceEvent::Irq { .. } if *slot == Bucket::Phase(Phase::InZone) => *slot = Bucket::ExitTrap,
            _ => {}
        }
        let bucket = *slot;
        if matches!(event, TraceEvent::SmcResult { .. }) {
            *slot = Bucket::Normal;
        }
        if event.core().is_some() {
            self.last_core = event.core();
        }
        if let TraceEvent::MqSend { core, .. } = event {
            self.last_sender = Some(*core);
        }
        bucket
    }
}

/// Sums weights over `events`, bucketed by protocol phase.
pub fn account(events: &[TraceEvent], w: &CostWeights) -> CostBreakdown {
    let mut out = CostBreakdown::default();
    let mut attr = Attribution::default();
    for e in events {
        let bucket = attr.bucket_for(e);
        match e {
            TraceEvent::Smc { .. } => out.smc_calls += 1,
            TraceEvent::ZoneEnter { .. } => out.zone_entries += 1,
            _ => {}
        }
        let terms = event_terms(e);
        if terms.is_empty() {
            continue;
        }
        let mut cost = 0.0;
        for (t, q) in terms {
            *out.quantities.entry(t).or_default() += q;
            cost += w.get(t) * q as f64;
        }
        *out.buckets.entry(bucket.to_string()).or_default() += cost;
    }
    out.total = out.buckets.values().fold(0.0, |acc, c| acc + c);
    out
}

/// Splits a trace into one slice per SMC issued by `core`, from the trap up
/// to and including its result.
pub fn smc_slices(events: &[TraceEvent], core: usize) -> Vec<&[TraceEvent]> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, e) in events.iter().enumerate() {
        match e {
            TraceEvent::Smc { core: c, .. } if *c == core && start.is_none() => start = Some(i),
            TraceEvent::SmcResult { core: c, .. } if *c == core => {
                if let Some(s) = start.take() {
                    out.push(&events[s..=i]);
                }
            }
            _ => {}
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DeploymentConfig {
    /// Single trusted OS, no partitioning.
    #[serde(rename = "norz")]
    NoRz,
    #[serde(rename = "rz")]
    Rz,
    /// Partitioned, with zone execution never preempted by normal-world
    /// interrupts.
    #[serde(rename = "rz-noirq")]
    RzNoIrq,
}

impl DeploymentConfig {
    pub const ALL: [DeploymentConfig; 3] = [DeploymentConfig::NoRz, DeploymentConfig::Rz, DeploymentConfig::RzNoIrq];

    pub fn label(self) -> &'static str {
        match self {
            DeploymentConfig::NoRz => "norz",
            DeploymentConfig::Rz => "rz",
            DeploymentConfig::RzNoIrq => "rz-noirq",
        }
    }

    pub fn apply(self, config: &mut SimConfig) {
        config.deployment = if self == DeploymentConfig::NoRz { Deployment::NoRezone } else { Deployment::Rezone };
        config.irq_preemption = self != DeploymentConfig::RzNoIrq;
    }
}

impl fmt::Display for DeploymentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DeploymentConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DeploymentConfig::ALL
            .into_iter()
            .find(|d| d.label() == s)
            .ok_or_else(|| format!("unknown config `{s}`, expected norz, rz or rz-noirq"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Workload {
    /// Normal-world work only.
    Idle,
    /// One zone call doing `units` of work.
    Batched { units: u32 },
    /// `calls` zone calls doing one unit each.
    Chatty { calls: u32 },
    /// One zone call interrupted `irqs` times by normal-world interrupts.
    Preempted { irqs: u32 },
    /// Alternating calls into zone 1 and zone 2.
    CrossZone { calls: u32 },
}

impl Workload {
    /// The workloads shipped with the cost comparison.
    pub const BUNDLED: [Workload; 5] = [
        Workload::Idle,
        Workload::Batched { units: 8 },
        Workload::Chatty { calls: 8 },
        Workload::Preempted { irqs: 3 },
        Workload::CrossZone { calls: 4 },
    ];

    pub fn name(&self) -> String {
        match self {
            Workload::Idle => "idle".into(),
            Workload::Batched { units } => format!("batched-{units}"),
            Workload::Chatty { calls } => format!("chatty-{calls}"),
            Workload::Preempted { irqs } => format!("preempted-{irqs}"),
            Workload::CrossZone { calls } => format!("cross-zone-{calls}"),
        }
    }

    pub fn builder(&self, deployment: DeploymentConfig) -> SimBuilder {
        let mut config = SimConfig::default();
        config.cluster.cores = 1;
        deployment.apply(&mut config);
        let b = SimBuilder::two_zones(config);
        let ree = b.addr(RegionKind::Ree, 0);
        let prologue = |zone| {
            let own = b.addr(RegionKind::Zone(zone), 0);
            vec![
                ZoneOp::Map { va: va(0), pa: own, ns: Ns::SECURE, writable: true },
                ZoneOp::Read { va: va(0) + 0x40 },
                ZoneOp::Write { va: va(0) + 0x80, value: 1 },
            ]
        };
        let with_work = |zone, units| {
            let mut p = prologue(zone);
            p.push(ZoneOp::Work { units });
            p
        };
        let normal = vec![Op::Read(ree + 0x100), Op::Write(ree + 0x110, 1), Op::Read(ree + 0x120)];
        let (core, z1, z2) = match *self {
            Workload::Idle => (normal.clone(), with_work(ZONE1, 1), with_work(ZONE2, 1)),
            Workload::Batched { units } => {
                (vec![Op::Smc(ZONE1_SMC)], with_work(ZONE1, units), with_work(ZONE2, 1))
            }
            Workload::Chatty { calls } => {
                (vec![Op::Smc(ZONE1_SMC); calls as usize], with_work(ZONE1, 1), with_work(ZONE2, 1))
            }
            Workload::Preempted { irqs } => {
                let mut p = prologue(ZONE1);
                for _ in 0..irqs {
                    p.push(ZoneOp::Work { units: 1 });
                    p.push(ZoneOp::Preempt);
                }
                p.push(ZoneOp::Work { units: 1 });
                (vec![Op::Smc(ZONE1_SMC)], p, with_work(ZONE2, 1))
            }
            Workload::CrossZone { calls } => {
                let core =
                    (0..calls).map(|i| Op::Smc(if i % 2 == 0 { ZONE1_SMC } else { ZONE2_SMC })).collect::<Vec<_>>();
                (core, with_work(ZONE1, 1), with_work(ZONE2, 1))
            }
        };
        let mut core = core;
        if *self != Workload::Idle {
            core.extend(normal);
        }
        b.zone(ZONE1, z1).zone(ZONE2, z2).core(0, core)
    }

    /// Runs the workload to completion under `deployment`.
    pub fn run(&self, deployment: DeploymentConfig) -> Result<Vec<TraceEvent>, CostError> {
        let mut sim = self.builder(deployment).build()?;
        let status = sim.run(&mut InOrder, 100_000)?;
        if status != RunStatus::Completed {
            return Err(CostError::Incomplete { workload: self.name(), config: deployment, status });
        }
        Ok(sim.trace.events().to_vec())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CostError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("workload {workload} did not complete under {config}: {status:?}")]
    Incomplete { workload: String, config: DeploymentConfig, status: RunStatus },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub workload: String,
    pub config: DeploymentConfig,
    pub total: f64,
    pub smc_calls: usize,
    pub zone_entries: usize,
    /// Total relative to the unpartitioned deployment on the same workload.
    pub overhead: f64,
    pub breakdown: CostBreakdown,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub weights: Option<CostWeights>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn get(&self, workload: &str, config: DeploymentConfig) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.workload == workload && r.config == config)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("workload,config,total,smc_calls,zone_entries,overhead\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.3},{},{},{:.4}",
                r.workload, r.config, r.total, r.smc_calls, r.zone_entries, r.overhead
            );
        }
        s
    }
}

/// Cost of one round trip into a zone doing a single unit of work, from
/// the SMC trap to its result.
pub fn world_switch(deployment: DeploymentConfig, w: &CostWeights) -> Result<CostBreakdown, CostError> {
    let events = Workload::Batched { units: 1 }.run(deployment)?;
    let slice = smc_slices(&events, 0).into_iter().next().unwrap_or(&[]);
    Ok(account(slice, w))
}

/// Runs each workload under each deployment and prices the traces.
pub fn compare(
    configs: &[DeploymentConfig],
    workloads: &[Workload],
    w: &CostWeights,
) -> Result<ComparisonTable, CostError> {
    let mut table = ComparisonTable { weights: Some(*w), rows: Vec::new() };
    for wl in workloads {
        let baseline = account(&wl.run(DeploymentConfig::NoRz)?, w).total;
        for &cfg in configs {
            let b = account(&wl.run(cfg)?, w);
            table.rows.push(ComparisonRow {
                workload: wl.name(),
                config: cfg,
                total: b.total,
                smc_calls: b.smc_calls,
                zone_entries: b.zone_entries,
                overhead: if baseline > 0.0 { b.total / baseline } else { 1.0 },
                breakdown: b,
            });
        }
    }
    Ok(table)
}

//! The simulated SoC: memory, bus, TZASC, PPC, cluster, gatekeeper and
//! mailbox, plus the property checks evaluated after every step.
//!
//! [`Sim`] is a plain value. Cloning it forks the whole system, which is
//! what the explorer relies on. Immutable configuration lives behind an
//! `Arc` so clones stay cheap; only [`SimState`] participates in state
//! hashing.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{line_of, CacheLine, ClusterConfig, ClusterState, CoreStatus, MappingEntry, Ns, Regime, TlbEntry, LINE_SIZE};
use crate::gatekeeper::{BootManifest, FirmwareImage, GatekeeperError, GatekeeperState, Mailbox, DEFAULT_TOKEN_BITS};
use crate::layout::{
    reference_permission, AccessContext, AccessKind, ExceptionLevel, LayoutConfig, LayoutError, MemoryLayout,
    Permission, PhysAddr, RegionKind, World, ZoneId,
};
use crate::monitor::{Op, ZoneOp};
use crate::ppc::{BusMasterId, ConfigEdit, EditOutcome, PpcConfig, PpcState, Verdict};
use crate::trace::{Lookup, Trace, TraceEvent};
use crate::zones::{ZoneError, ZoneManifest, ZoneRegistry};

/// Byte offsets of well-known words inside their regions.
pub mod offsets {
    /// EL3 translation table, read by every EL3 table walk.
    pub const MONITOR_PAGE_TABLE: u64 = 0x000;
    /// SMC routing table, read on every dispatch.
    pub const MONITOR_ROUTING: u64 = 0x040;
    /// Per-core context save slots, 16 bytes apart.
    pub const MONITOR_CTX: u64 = 0x100;
    pub const MONITOR_IMAGE: u64 = 0x800;
    pub const GATEKEEPER_TOKEN: u64 = 0x000;
    pub const GATEKEEPER_IMAGE: u64 = 0x800;
    /// Where canaries are planted in every victim region.
    pub const CANARY: u64 = 0x040;
    pub const TRAMPOLINE_VECTOR: u64 = 0x00;
    pub const TRAMPOLINE_ENTRY: u64 = 0x10;
    pub const TRAMPOLINE_EXIT: u64 = 0x20;
    pub const TRAMPOLINE_WAKE: u64 = 0x30;
}

/// Canary word planted in `kind` at boot.
pub fn canary_value(kind: RegionKind) -> Option<u64> {
    let tag = match kind {
        RegionKind::Ree => 0x01,
        RegionKind::Monitor => 0x02,
        RegionKind::Gatekeeper => 0x03,
        RegionKind::Zone(z) => 0x100 + z.0 as u64,
        _ => return None,
    };
    Some(0xC0DE_CA7A_0000_0000 | tag)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    Tzasc,
    Ppc,
    Unmapped,
    TlbWalkBlocked,
    /// Write through a read-only S.EL1 mapping.
    Permission,
    TokenTrap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Property {
    /// Protection of the normal world.
    P1,
    /// Protection of the secure monitor and gatekeeper.
    P2,
    /// Protection of co-located zones.
    P3,
    /// No crash, hang or deadlock of trusted or normal-world code.
    Liveness,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    /// Zone code observed a word it may not read.
    Leak { region: RegionKind },
    /// Zone code changed a word it may not write.
    Tamper { region: RegionKind },
    /// EL3 executed trampoline content that differs from the boot image.
    CodeInjection { pa: PhysAddr },
    /// Trampoline main memory no longer matches its boot hash.
    TrampolineHash,
    /// The controller was reprogrammed from outside EL3.
    PpcHijack,
    /// The controller was writable by the cluster outside the protocol.
    UnlockOutsideProtocol,
    /// The gatekeeper token appeared outside EL3 and gatekeeper memory.
    TokenExposed,
    /// A live trusted or normal-world access faulted.
    Crash { fault: Fault, el: ExceptionLevel, world: World },
    /// EL3 could not fetch its exception handler.
    Hang,
    /// The protocol could not complete.
    ProtocolFailure,
    /// No actor can make progress but some program is unfinished.
    Deadlock,
}

impl ViolationKind {
    pub fn label(&self) -> &'static str {
        match self {
            ViolationKind::Leak { .. } => "leak",
            ViolationKind::Tamper { .. } => "tamper",
            ViolationKind::CodeInjection { .. } => "code_injection",
            ViolationKind::TrampolineHash => "trampoline_hash",
            ViolationKind::PpcHijack => "ppc_hijack",
            ViolationKind::UnlockOutsideProtocol => "unlock_outside_protocol",
            ViolationKind::TokenExposed => "token_exposed",
            ViolationKind::Crash { .. } => "crash",
            ViolationKind::Hang => "hang",
            ViolationKind::ProtocolFailure => "protocol_failure",
            ViolationKind::Deadlock => "deadlock",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Violation {
    pub property: Property,
    #[serde(flatten)]
    pub kind: ViolationKind,
    pub core: Option<usize>,
}

fn property_of_region(region: RegionKind) -> Property {
    match region {
        RegionKind::Ree | RegionKind::Shared => Property::P1,
        RegionKind::Zone(_) => Property::P3,
        _ => Property::P2,
    }
}

/// Which maintenance steps and checks are active. Everything defaults on;
/// switching one off produces a mutant of the protocol.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mitigations {
    /// A: flush L1 and L2 on entry.
    pub flush_caches: bool,
    /// B: invalidate the S.EL1 TLB when switching zones.
    pub tlb_maintenance: bool,
    /// C: gatekeeper unlock/lock around every reconfiguration.
    pub gatekeeper_unlock: bool,
    /// D: program the zone row on entry and the monitor row on exit.
    pub reconfigure_ppc: bool,
    /// E: run EL3 with the MMU off while a zone is active.
    pub el3_mmu_off: bool,
    /// F: invalidate cached trampoline lines on exit.
    pub invalidate_trampoline: bool,
    pub token_check: bool,
    pub coherency_disable: bool,
    pub halt_cores: bool,
    /// Wake sleeping cores into read-only trampoline code.
    pub wake_into_trampoline: bool,
}

impl Default for Mitigations {
    fn default() -> Self {
        Mitigations {
            flush_caches: true,
            tlb_maintenance: true,
            gatekeeper_unlock: true,
            reconfigure_ppc: true,
            el3_mmu_off: true,
            invalidate_trampoline: true,
            token_check: true,
            coherency_disable: true,
            halt_cores: true,
            wake_into_trampoline: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Deployment {
    /// Stock TrustZone: no partitioning, no maintenance steps.
    NoRezone,
    Rezone,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub layout: LayoutConfig,
    pub cluster: ClusterConfig,
    pub ppc: PpcConfig,
    pub token_bits: u32,
    pub boot_seed: u64,
    pub mitigations: Mitigations,
    pub deployment: Deployment,
    /// Normal-world interrupts preempt the trusted OS.
    pub irq_preemption: bool,
    /// Fault injection: the trampoline presents a corrupted token when
    /// unlocking on entry.
    pub corrupt_entry_token: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            layout: LayoutConfig::default(),
            cluster: ClusterConfig::default(),
            ppc: PpcConfig::default(),
            token_bits: DEFAULT_TOKEN_BITS,
            boot_seed: 0x5EED,
            mitigations: Mitigations::default(),
            deployment: Deployment::Rezone,
            irq_preemption: true,
            corrupt_entry_token: false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Zone(#[from] ZoneError),
    #[error(transparent)]
    Gatekeeper(#[from] GatekeeperError),
    #[error("secure boot refused tampered {0} image")]
    IntegrityCheckFailed(&'static str),
    #[error("system has not booted")]
    NotBooted,
    #[error("core {0} does not exist")]
    NoSuchCore(usize),
    #[error("program for zone {0} given but the zone is not registered")]
    UnknownZone(u16),
}

/// Immutable part of a simulation.
#[derive(Debug)]
pub struct Static {
    pub config: SimConfig,
    pub layout: MemoryLayout,
    pub zone_programs: BTreeMap<ZoneId, Vec<ZoneOp>>,
    pub rom: BootManifest,
    pub pristine: FirmwareImage,
    pub canaries: BTreeMap<u64, RegionKind>,
}

/// Something zone code learned: a value it read or a fault it took.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    Value(u64),
    Fault(Fault),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SimState {
    pub memory: BTreeMap<PhysAddr, u64>,
    pub cluster: ClusterState,
    pub ppc: PpcState,
    pub gatekeeper: GatekeeperState,
    pub mailbox: Mailbox,
    pub registry: ZoneRegistry,
    pub firmware: FirmwareImage,
    pub rz_lock: Option<usize>,
    pub active_zone: Option<ZoneId>,
    pub zone_mappings: BTreeMap<ZoneId, Vec<MappingEntry>>,
    /// Zone ops left over when a trusted OS was preempted.
    pub continuations: BTreeMap<ZoneId, Vec<Op>>,
    pub observations: Vec<(usize, Observation)>,
    pub violations: Vec<Violation>,
    pub booted: bool,
    pub untrusted_steps: u64,
}

#[derive(Clone, Debug)]
pub struct Sim {
    pub(crate) stat: Arc<Static>,
    pub state: SimState,
    pub trace: Trace,
}

/// Successful end of a memory access.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessOk {
    Value(u64),
    Written,
    /// Write landed in a cached line the controller would not let reach
    /// memory.
    SilentCacheWrite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Resolved {
    pub pa: PhysAddr,
    pub ns: Ns,
    pub region: RegionKind,
    pub cacheable: bool,
}

impl Sim {
    pub fn new(
        config: SimConfig,
        manifests: Vec<ZoneManifest>,
        zone_programs: BTreeMap<ZoneId, Vec<ZoneOp>>,
    ) -> Result<Self, SimError> {
        let layout = MemoryLayout::build(&manifests, &config.layout)?;
        let mut registry = ZoneRegistry::new(config.layout.peripheral_count);
        for m in manifests {
            registry.register(m)?;
        }
        for z in zone_programs.keys() {
            if registry.get(*z).is_none() {
                return Err(SimError::UnknownZone(z.0));
            }
        }
        let pristine = FirmwareImage::reference();
        let canaries = layout
            .kinds()
            .filter_map(|k| canary_value(k).map(|v| (v, k)))
            .collect();
        let gatekeeper = GatekeeperState::new(config.token_bits)?.with_token_check(config.mitigations.token_check);
        let state = SimState {
            memory: BTreeMap::new(),
            cluster: {
                let mut cl = ClusterState::new(&config.cluster);
                // idle until a program is loaded
                for c in &mut cl.cores {
                    c.status = CoreStatus::Finished;
                }
                cl
            },
            ppc: PpcState::new(&config.ppc),
            gatekeeper,
            mailbox: Mailbox::default(),
            registry,
            firmware: pristine.clone(),
            rz_lock: None,
            active_zone: None,
            zone_mappings: BTreeMap::new(),
            continuations: BTreeMap::new(),
            observations: Vec::new(),
            violations: Vec::new(),
            booted: false,
            untrusted_steps: 0,
        };
        let stat = Static { rom: pristine.manifest(), pristine, config, layout, zone_programs, canaries };
        Ok(Sim { stat: Arc::new(stat), state, trace: Trace::recording() })
    }

    /// Adds a zone before boot. The layout is rebuilt to include it.
    pub fn register_zone(&mut self, manifest: ZoneManifest) -> Result<(), SimError> {
        if self.state.booted || self.state.registry.is_frozen() {
            return Err(ZoneError::LateRegistration.into());
        }
        let mut manifests: Vec<ZoneManifest> = self.state.registry.manifests().cloned().collect();
        manifests.push(manifest.clone());
        let layout = MemoryLayout::build(&manifests, &self.stat.config.layout)?;
        self.state.registry.register(manifest)?;
        let canaries = layout.kinds().filter_map(|k| canary_value(k).map(|v| (v, k))).collect();
        let old = &self.stat;
        self.stat = Arc::new(Static {
            config: old.config.clone(),
            layout,
            zone_programs: old.zone_programs.clone(),
            rom: old.rom.clone(),
            pristine: old.pristine.clone(),
            canaries,
        });
        Ok(())
    }

    pub fn config(&self) -> &SimConfig {
        &self.stat.config
    }

    pub fn layout(&self) -> &MemoryLayout {
        &self.stat.layout
    }

    pub fn mitigations(&self) -> &Mitigations {
        &self.stat.config.mitigations
    }

    pub fn zone_program(&self, zone: ZoneId) -> &[ZoneOp] {
        self.stat.zone_programs.get(&zone).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn addr(&self, kind: RegionKind, offset: u64) -> PhysAddr {
        self.stat.layout.base(kind) + offset
    }

    pub fn set_trace(&mut self, trace: Trace) {
        self.trace = trace;
    }

    pub fn load_program(&mut self, core: usize, program: impl IntoIterator<Item = Op>) -> Result<(), SimError> {
        let c = self.state.cluster.cores.get_mut(core).ok_or(SimError::NoSuchCore(core))?;
        c.program.extend(program);
        c.status = CoreStatus::Running;
        Ok(())
    }

    /// Test and attack hook: modify firmware before secure boot runs.
    pub fn patch_firmware(&mut self, patch: impl FnOnce(&mut FirmwareImage)) {
        patch(&mut self.state.firmware);
    }

    /// Secure boot: verify firmware, initialise the controller, generate
    /// and distribute the token, plant canaries, freeze zone registration.
    pub fn boot(&mut self) -> Result<(), SimError> {
        if self.state.untrusted_steps > 0 {
            return Err(GatekeeperError::BootOrderViolation.into());
        }
        if self.state.booted {
            return Err(GatekeeperError::AlreadyBooted.into());
        }
        if let Err(component) = self.state.firmware.verify(&self.stat.rom) {
            self.trace.push(TraceEvent::BootRefused { component: component.to_string() });
            return Err(SimError::IntegrityCheckFailed(component));
        }
        let layout = &self.stat.layout;
        let fw = &self.state.firmware;
        let tramp = layout.base(RegionKind::Trampoline);
        let mon = layout.base(RegionKind::Monitor);
        let gk = layout.base(RegionKind::Gatekeeper);
        let mem = &mut self.state.memory;
        for (i, w) in fw.trampoline.iter().enumerate() {
            mem.insert(tramp + i as u64 * LINE_SIZE, *w);
        }
        for (i, w) in fw.monitor.iter().enumerate() {
            mem.insert(mon + offsets::MONITOR_IMAGE + i as u64 * LINE_SIZE, *w);
        }
        for (i, w) in fw.gatekeeper.iter().enumerate() {
            mem.insert(gk + offsets::GATEKEEPER_IMAGE + i as u64 * LINE_SIZE, *w);
        }
        mem.insert(mon + offsets::MONITOR_PAGE_TABLE, 0x7AB1E);
        for (value, kind) in &self.stat.canaries {
            mem.insert(layout.base(*kind) + offsets::CANARY, *value);
        }
        // only ever fails on double init, which `booted` already excludes
        let _ = self.state.ppc.boot_init(layout, &self.stat.config.ppc);
        let token = self.state.gatekeeper.boot(self.stat.config.boot_seed)?;
        self.state.memory.insert(gk + offsets::GATEKEEPER_TOKEN, token);
        for core in &mut self.state.cluster.cores {
            let (el, world) = (core.el, core.world);
            core.set_el3();
            core.write_token_reg(token).expect("EL3 may write its own register");
            core.el = el;
            core.world = world;
        }
        self.state.registry.freeze();
        self.state.booted = true;
        self.trace.push(TraceEvent::Boot { seed: self.stat.config.boot_seed, token_bits: self.stat.config.token_bits });
        Ok(())
    }

    pub fn is_booted(&self) -> bool {
        self.state.booted
    }

    pub fn violations(&self) -> &[Violation] {
        &self.state.violations
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.state.hash(&mut h);
        h.finish()
    }

    // ------------------------------------------------------------------
    // bus

    fn record_violation(&mut self, property: Property, kind: ViolationKind, core: Option<usize>) {
        // without partitioning every zone belongs to one trusted OS
        if property == Property::P3 && self.stat.config.deployment == Deployment::NoRezone {
            return;
        }
        let v = Violation { property, kind, core };
        if !self.state.violations.contains(&v) {
            self.state.violations.push(v);
            self.trace.push(TraceEvent::Violation { violation: v });
        }
    }

    pub(crate) fn report(&mut self, property: Property, kind: ViolationKind, core: Option<usize>) {
        self.record_violation(property, kind, core);
    }

    fn tzasc_allows(world: World, ns: Ns, region: RegionKind) -> bool {
        if !ns.is_secure() && region.is_secure() {
            return false;
        }
        !(ns.is_secure() && world == World::Normal)
    }

    /// TZASC then PPC, as seen on the bus for a cluster-issued access.
    fn bus_check(&mut self, world: World, ns: Ns, region: RegionKind, access: AccessKind) -> Result<(), Fault> {
        if !Self::tzasc_allows(world, ns, region) {
            return Err(Fault::Tzasc);
        }
        let verdict = self.state.ppc.check(BusMasterId::CLUSTER, region, access).unwrap_or(Verdict::Deny);
        self.trace.push(TraceEvent::PpcCheck { mid: BusMasterId::CLUSTER, region, access, verdict });
        if verdict.is_allow() {
            Ok(())
        } else {
            Err(Fault::Ppc)
        }
    }

    fn write_back(&mut self, line: CacheLine) {
        if !line.dirty {
            return;
        }
        let Some(region) = self.stat.layout.region_of(line.pa) else {
            return;
        };
        let world = if line.ns.is_secure() { World::Secure } else { World::Normal };
        let allowed = self.bus_check(world, line.ns, region, AccessKind::Write).is_ok();
        self.trace.push(TraceEvent::Writeback { pa: line.pa, ns: line.ns, allowed });
        if allowed {
            self.state.memory.insert(line.pa, line.data);
        }
    }

    fn fill(&mut self, core: usize, line: CacheLine) {
        let victim = self.state.cluster.cores[core].l1.insert(line);
        if let Some(v) = victim {
            if let Some(v2) = self.state.cluster.l2.insert(v) {
                self.write_back(v2);
            }
        }
    }

    fn translate_el3(&mut self, core: usize, addr: u64) -> Result<(), Fault> {
        if self.state.cluster.tlb.lookup(Regime::El3, addr).is_some() {
            return Ok(());
        }
        // table walks are configured non-cacheable and go straight to the bus
        let pt = self.stat.layout.base(RegionKind::Monitor) + offsets::MONITOR_PAGE_TABLE;
        let allowed = self.bus_check(World::Secure, Ns::SECURE, RegionKind::Monitor, AccessKind::Read).is_ok();
        self.trace.push(TraceEvent::TlbWalk { core, pa: pt, allowed });
        if !allowed {
            return Err(Fault::TlbWalkBlocked);
        }
        let page = crate::cluster::page_of(addr);
        self.state.cluster.tlb.fill(TlbEntry {
            regime: Regime::El3,
            va_page: page,
            pa_page: page,
            ns: Ns::SECURE,
            writable: true,
        });
        self.trace.push(TraceEvent::TlbFill { regime: Regime::El3, va: page });
        Ok(())
    }

    fn translate_s1(&mut self, core: usize, va: u64, access: AccessKind) -> Result<(PhysAddr, Ns), Fault> {
        let entry = match self.state.cluster.tlb.lookup(Regime::SecureEl1, va) {
            Some(e) => e,
            None => {
                let m = self.state.cluster.cores[core].lookup_mapping(va).ok_or(Fault::Unmapped)?;
                let e = TlbEntry { regime: Regime::SecureEl1, va_page: m.va, pa_page: m.pa, ns: m.ns, writable: m.writable };
                self.state.cluster.tlb.fill(e);
                self.trace.push(TraceEvent::TlbFill { regime: Regime::SecureEl1, va: m.va });
                e
            }
        };
        if access == AccessKind::Write && !entry.writable {
            return Err(Fault::Permission);
        }
        Ok((entry.pa_page | (va & (crate::layout::PAGE_SIZE - 1)), entry.ns))
    }

    pub(crate) fn resolve(&mut self, core: usize, addr: u64, access: AccessKind, via_mmu: bool) -> Result<Resolved, Fault> {
        let c = &self.state.cluster.cores[core];
        let (world, el, mmu_on) = (c.world, c.el, c.el3_mmu_on);
        let (pa, ns, cacheable) = match (world, el) {
            (World::Secure, ExceptionLevel::El3) => {
                if via_mmu && mmu_on {
                    self.translate_el3(core, addr)?;
                    (addr, Ns::SECURE, true)
                } else {
                    (addr, Ns::SECURE, false)
                }
            }
            (World::Secure, _) => {
                let (pa, ns) = self.translate_s1(core, addr, access)?;
                (pa, ns, true)
            }
            (World::Normal, _) => (addr, Ns::NON_SECURE, true),
        };
        let region = self.stat.layout.region_of(pa).ok_or(Fault::Unmapped)?;
        Ok(Resolved { pa, ns, region, cacheable: cacheable && !region.is_device() })
    }

    /// Full memory access from `core`: translate, look up the NS-keyed
    /// caches, and only on a miss go to the bus where TZASC and the PPC are
    /// consulted. Cache hits are never checked by the PPC.
    pub fn mem_access(
        &mut self,
        core: usize,
        addr: u64,
        access: AccessKind,
        value: u64,
        via_mmu: bool,
    ) -> Result<AccessOk, Fault> {
        self.access_at(core, addr, access, value, via_mmu).map(|(_, ok)| ok)
    }

    /// [`Sim::mem_access`] that also reports the physical address used.
    pub(crate) fn access_at(
        &mut self,
        core: usize,
        addr: u64,
        access: AccessKind,
        value: u64,
        via_mmu: bool,
    ) -> Result<(PhysAddr, AccessOk), Fault> {
        let (world, el) = {
            let c = &self.state.cluster.cores[core];
            (c.world, c.el)
        };
        let r = match self.resolve(core, addr, access, via_mmu) {
            Ok(r) => r,
            Err(f) => return Err(self.fault(core, addr, f)),
        };
        let line_pa = line_of(r.pa);
        if r.cacheable {
            if let Some(slot) = self.state.cluster.locate(core, line_pa, r.ns) {
                let line = self.state.cluster.slot_mut(slot, line_pa, r.ns).expect("located line exists");
                let out = match access {
                    AccessKind::Read => AccessOk::Value(line.data),
                    AccessKind::Write => {
                        line.data = value;
                        line.dirty = true;
                        let reachable = self
                            .state
                            .ppc
                            .check(BusMasterId::CLUSTER, r.region, AccessKind::Write)
                            .map(Verdict::is_allow)
                            .unwrap_or(false)
                            && Self::tzasc_allows(world, r.ns, r.region);
                        if reachable {
                            AccessOk::Written
                        } else {
                            AccessOk::SilentCacheWrite
                        }
                    }
                };
                self.trace.push(TraceEvent::Mem {
                    core,
                    el,
                    world,
                    pa: r.pa,
                    ns: r.ns,
                    access,
                    lookup: Lookup::Hit,
                    allowed: true,
                });
                return Ok((r.pa, out));
            }
        }
        let checked = self.bus_check(world, r.ns, r.region, access);
        self.trace.push(TraceEvent::Mem {
            core,
            el,
            world,
            pa: r.pa,
            ns: r.ns,
            access,
            lookup: if r.cacheable { Lookup::Miss } else { Lookup::Uncached },
            allowed: checked.is_ok(),
        });
        if let Err(f) = checked {
            return Err(self.fault(core, addr, f));
        }
        match access {
            AccessKind::Read => {
                let data = self.state.memory.get(&line_pa).copied().unwrap_or(0);
                if r.cacheable {
                    self.fill(core, CacheLine { pa: line_pa, ns: r.ns, data, dirty: false });
                }
                Ok((r.pa, AccessOk::Value(data)))
            }
            AccessKind::Write => {
                if r.cacheable {
                    self.fill(core, CacheLine { pa: line_pa, ns: r.ns, data: value, dirty: true });
                } else {
                    self.state.memory.insert(line_pa, value);
                }
                Ok((r.pa, AccessOk::Written))
            }
        }
    }

    fn fault(&mut self, core: usize, addr: u64, fault: Fault) -> Fault {
        let el = self.state.cluster.cores[core].el;
        self.trace.push(TraceEvent::Fault { core, el, addr, fault });
        fault
    }

    /// EL3 instruction fetch from the trampoline, checked against the
    /// boot image.
    pub fn fetch_trampoline(&mut self, core: usize, offset: u64) -> Result<u64, Fault> {
        let pa = self.addr(RegionKind::Trampoline, offset);
        let cached = {
            let c = &self.state.cluster.cores[core];
            c.el3_mmu_on
        };
        let value = match self.mem_access(core, pa, AccessKind::Read, 0, true)? {
            AccessOk::Value(v) => v,
            _ => unreachable!("reads return values"),
        };
        let expected = self.stat.pristine.trampoline.get((offset / LINE_SIZE) as usize).copied();
        let intact = expected.is_none_or(|e| e == value);
        self.trace.push(TraceEvent::Fetch { core, pa, cached, intact });
        if !intact {
            self.record_violation(Property::P2, ViolationKind::CodeInjection { pa }, Some(core));
        }
        Ok(value)
    }

    /// Writes back and invalidates the core's L1 and the shared L2.
    pub fn flush_caches(&mut self, core: usize) -> usize {
        let mut lines = self.state.cluster.cores[core].l1.drain();
        lines.extend(self.state.cluster.l2.drain());
        let n = lines.len();
        for line in lines {
            self.write_back(line);
        }
        self.trace.push(TraceEvent::Flush { core, lines: n });
        n
    }

    /// Discards, without write-back, every cached trampoline line the core
    /// could hit.
    pub fn invalidate_trampoline_lines(&mut self, core: usize) -> usize {
        let tramp = *self.stat.layout.region(RegionKind::Trampoline).expect("layout has a trampoline");
        let hit = |l: &CacheLine| tramp.contains(l.pa);
        let mut n = self.state.cluster.cores[core].l1.invalidate_where(hit);
        n += self.state.cluster.l2.invalidate_where(hit);
        self.trace.push(TraceEvent::Invalidate { core, lines: n });
        n
    }

    pub fn tlb_invalidate(&mut self) -> usize {
        let n = self.state.cluster.tlb.invalidate_s1();
        self.trace.push(TraceEvent::Tlbi { entries: n });
        n
    }

    pub fn set_coherency(&mut self, on: bool) {
        self.state.cluster.coherency_on = on;
        self.trace.push(TraceEvent::Coherency { on });
    }

    pub fn halt_others(&mut self, except: usize) {
        for to in self.state.cluster.halt_others(except) {
            self.trace.push(TraceEvent::Ipi { from: except, to });
        }
    }

    pub fn resume_others(&mut self, except: usize) {
        for core in self.state.cluster.resume_others(except) {
            self.trace.push(TraceEvent::Resumed { core });
        }
    }

    /// Compares trampoline main memory with the boot image.
    pub fn trampoline_intact(&self) -> bool {
        let base = self.stat.layout.base(RegionKind::Trampoline);
        self.stat
            .pristine
            .trampoline
            .iter()
            .enumerate()
            .all(|(i, w)| self.state.memory.get(&(base + i as u64 * LINE_SIZE)) == Some(w))
    }

    /// A cluster write to the controller's registers at `addr`.
    pub fn ppc_config_write(&mut self, core: usize, addr: u64, edit: ConfigEdit) -> Result<EditOutcome, Fault> {
        let r = match self.resolve(core, addr, AccessKind::Write, true) {
            Ok(r) => r,
            Err(f) => return Err(self.fault(core, addr, f)),
        };
        if r.region != RegionKind::PpcMmio {
            return Err(self.fault(core, addr, Fault::Unmapped));
        }
        let world = self.state.cluster.cores[core].world;
        if !Self::tzasc_allows(world, r.ns, r.region) {
            return Err(self.fault(core, addr, Fault::Tzasc));
        }
        let outcome = self.state.ppc.write_config(BusMasterId::CLUSTER, edit);
        self.trace.push(TraceEvent::PpcConfig {
            requester: BusMasterId::CLUSTER,
            core: Some(core),
            edit,
            applied: outcome.applied(),
        });
        if outcome.applied() && self.state.cluster.cores[core].el != ExceptionLevel::El3 {
            self.record_violation(Property::P2, ViolationKind::PpcHijack, Some(core));
        }
        Ok(outcome)
    }

    /// Cluster access to a message-unit register. Resolution and checks
    /// match an uncached device access.
    pub(crate) fn mailbox_access(&mut self, core: usize, addr: u64, access: AccessKind) -> Result<RegionKind, Fault> {
        let r = match self.resolve(core, addr, access, true) {
            Ok(r) => r,
            Err(f) => return Err(self.fault(core, addr, f)),
        };
        let (world, el) = {
            let c = &self.state.cluster.cores[core];
            (c.world, c.el)
        };
        let checked = self.bus_check(world, r.ns, r.region, access);
        self.trace.push(TraceEvent::Mem {
            core,
            el,
            world,
            pa: r.pa,
            ns: r.ns,
            access,
            lookup: Lookup::Uncached,
            allowed: checked.is_ok(),
        });
        match checked {
            Ok(()) => Ok(r.region),
            Err(f) => Err(self.fault(core, addr, f)),
        }
    }

    // ------------------------------------------------------------------
    // property checks

    /// Checks a value read by zone code against every planted canary and
    /// the token.
    pub(crate) fn observe_zone_read(&mut self, core: usize, zone: ZoneId, value: u64) {
        self.state.observations.push((core, Observation::Value(value)));
        if let Some(owner) = self.stat.canaries.get(&value).copied() {
            let ctx = AccessContext::zone(zone, ExceptionLevel::El1);
            let wl = self.state.registry.whitelist(zone);
            if reference_permission(&ctx, owner, &wl) == Permission::NA {
                self.record_violation(property_of_region(owner), ViolationKind::Leak { region: owner }, Some(core));
            }
        }
        if self.token_checkable() && value == self.state.gatekeeper.token() {
            self.record_violation(Property::P2, ViolationKind::TokenExposed, Some(core));
        }
    }

    pub(crate) fn observe_zone_fault(&mut self, core: usize, fault: Fault) {
        self.state.observations.push((core, Observation::Fault(fault)));
    }

    /// Checks a write that zone code completed at physical address `pa`.
    pub(crate) fn observe_zone_write(&mut self, core: usize, zone: ZoneId, pa: PhysAddr, outcome: AccessOk) {
        let Some(region) = self.stat.layout.region_of(pa) else {
            return;
        };
        let ctx = AccessContext::zone(zone, ExceptionLevel::El1);
        let wl = self.state.registry.whitelist(zone);
        if reference_permission(&ctx, region, &wl) == Permission::RW {
            return;
        }
        // Poisoning cached trampoline lines is possible on real hardware;
        // it only matters if EL3 later executes the poisoned copy.
        if outcome == AccessOk::SilentCacheWrite && region == RegionKind::Trampoline {
            return;
        }
        self.record_violation(property_of_region(region), ViolationKind::Tamper { region }, Some(core));
    }

    /// Crash bookkeeping for faults taken by trusted or normal-world code.
    pub(crate) fn crash(&mut self, core: usize, fault: Fault) {
        let (el, world) = {
            let c = &self.state.cluster.cores[core];
            (c.el, c.world)
        };
        let c = &mut self.state.cluster.cores[core];
        if fault == Fault::TlbWalkBlocked {
            c.status = CoreStatus::Hung;
            self.record_violation(Property::Liveness, ViolationKind::Hang, Some(core));
        } else {
            c.status = CoreStatus::Crashed;
            self.record_violation(Property::Liveness, ViolationKind::Crash { fault, el, world }, Some(core));
        }
    }

    fn token_checkable(&self) -> bool {
        // short tokens collide with ordinary data
        self.state.gatekeeper.token_bits() >= 32 && self.state.gatekeeper.is_booted()
    }

    /// Global invariants evaluated after every step.
    pub(crate) fn check_invariants(&mut self) {
        if self.stat.config.deployment == Deployment::Rezone && self.state.ppc.cluster_window_open() {
            let bracketed = match self.state.rz_lock {
                // the window must belong to EL3 on the lock holder, with no
                // zone code running anywhere
                Some(h) => {
                    self.state.cluster.cores[h].el == ExceptionLevel::El3
                        && self.state.cluster.cores.iter().all(|c| c.in_zone.is_none() || c.halted || !c.is_live())
                }
                None => false,
            };
            if !bracketed {
                self.record_violation(Property::P2, ViolationKind::UnlockOutsideProtocol, self.state.rz_lock);
            }
        }
        if self.token_checkable() {
            let token = self.state.gatekeeper.token();
            let gk = *self.stat.layout.region(RegionKind::Gatekeeper).expect("layout has a gatekeeper region");
            let in_cache = self.state.cluster.all_lines().any(|l| l.data == token);
            let in_memory = self.state.memory.iter().any(|(pa, v)| *v == token && !gk.contains(*pa));
            if in_cache || in_memory {
                self.record_violation(Property::P2, ViolationKind::TokenExposed, None);
            }
        }
    }

    /// Faults observed by zone code, grouped by kind.
    pub fn zone_faults(&self) -> BTreeMap<Fault, usize> {
        let mut out = BTreeMap::new();
        for (_, o) in &self.state.observations {
            if let Observation::Fault(f) = o {
                *out.entry(*f).or_insert(0) += 1;
            }
        }
        out
    }

    /// Regions currently readable by the cluster according to the PPC.
    pub fn cluster_readable(&self) -> BTreeSet<RegionKind> {
        self.stat
            .layout
            .kinds()
            .filter(|k| self.state.ppc.check(BusMasterId::CLUSTER, *k, AccessKind::Read) == Ok(Verdict::Allow))
            .collect()
    }
}

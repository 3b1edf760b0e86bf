//! Secure monitor and trampoline: SMC dispatch, the zone entry and exit
//! sequences, and the per-core program interpreter.
//!
//! Every protocol step is a separate [`ProtoOp`] queued on the core that
//! runs it, so the scheduler can interleave other cores and the ACU
//! between any two steps.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cluster::{CoreStatus, MappingEntry, Ns};
use crate::gatekeeper::{MqChannel, MqKind, MqMessage};
use crate::layout::{AccessContext, AccessKind, ExceptionLevel, PhysAddr, RegionKind, World, ZoneId, MU_A};
use crate::machine::{offsets, AccessOk, Deployment, Fault, Property, Sim, ViolationKind};
use crate::ppc::{ConfigEdit, PpcState};
use crate::trace::{CtxDir, TraceEvent};
use crate::zones::{Route, SmcId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "IDLE")]
    Idle,
    #[serde(rename = "SYNC_HALT")]
    SyncHalt,
    /// Cache flush.
    #[serde(rename = "A")]
    Flush,
    /// S.EL1 TLB invalidation.
    #[serde(rename = "B")]
    Tlbi,
    /// Gatekeeper unlock.
    #[serde(rename = "C")]
    Unlock,
    /// Program the zone row.
    #[serde(rename = "D")]
    Reconfigure,
    /// Coherency and EL3 MMU off.
    #[serde(rename = "E")]
    Isolate,
    #[serde(rename = "IN_ZONE")]
    InZone,
    /// Trampoline invalidation.
    #[serde(rename = "F")]
    InvalidateTrampoline,
    #[serde(rename = "D'")]
    ReconfigureBack,
    #[serde(rename = "C'")]
    Relock,
    #[serde(rename = "E'")]
    Restore,
    #[serde(rename = "RESUME")]
    Resume,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Idle => "IDLE",
            Phase::SyncHalt => "SYNC_HALT",
            Phase::Flush => "A",
            Phase::Tlbi => "B",
            Phase::Unlock => "C",
            Phase::Reconfigure => "D",
            Phase::Isolate => "E",
            Phase::InZone => "IN_ZONE",
            Phase::InvalidateTrampoline => "F",
            Phase::ReconfigureBack => "D'",
            Phase::Relock => "C'",
            Phase::Restore => "E'",
            Phase::Resume => "RESUME",
        }
    }

    pub const ALL: [Phase; 13] = [
        Phase::Idle,
        Phase::SyncHalt,
        Phase::Flush,
        Phase::Tlbi,
        Phase::Unlock,
        Phase::Reconfigure,
        Phase::Isolate,
        Phase::InZone,
        Phase::InvalidateTrampoline,
        Phase::ReconfigureBack,
        Phase::Relock,
        Phase::Restore,
        Phase::Resume,
    ];
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Entry,
    Exit,
}

/// Target permission row for a reconfiguration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Row {
    Zone(ZoneId),
    Monitor,
}

/// Instructions of a trusted OS running at S.EL1. Addresses are virtual
/// and go through the zone's own mappings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ZoneOp {
    /// Install a page mapping. The trusted OS owns its tables.
    Map { va: u64, pa: PhysAddr, ns: Ns, writable: bool },
    Read { va: u64 },
    Write { va: u64, value: u64 },
    Work { units: u32 },
    ReadTokenReg,
    MqSend { kind: MqKind, claim: u64 },
    MqAwait,
    PpcWrite { va: u64, edit: ConfigEdit },
    MuBWrite { va: u64 },
    /// A normal-world interrupt arrives.
    Preempt,
    /// SMC back to the monitor.
    Return,
}

/// Monitor and trampoline micro-steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ProtoOp {
    Dispatch { id: SmcId },
    AcquireLock,
    HaltOthers,
    AwaitHalted,
    Flush,
    Tlbi { zone: ZoneId },
    GkSend { kind: MqKind, stage: Stage },
    GkAwait { stage: Stage, zone: ZoneId },
    Reconfigure { row: Row },
    Isolate,
    EnterZone { zone: ZoneId },
    ExitTrap { zone: ZoneId },
    InvalidateTrampoline,
    Restore,
    Resume { id: SmcId },
    Abort { zone: ZoneId, id: SmcId },
    ReturnNormal { id: SmcId, ok: bool },
    WakeWait,
    MmuOn,
}

/// One program step of a core.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    /// Normal-world load.
    Read(PhysAddr),
    /// Normal-world store.
    Write(PhysAddr, u64),
    Smc(SmcId),
    Irq,
    /// EL3 load through the current MMU state.
    MonitorRead(PhysAddr),
    MonitorWrite(PhysAddr, u64),
    ReturnToNormal,
    /// Core is powered down until the scheduler wakes it.
    Sleep,
    Zone(ZoneOp),
    Proto(ProtoOp),
}

impl Sim {
    fn enter_phase(&mut self, core: usize, phase: Phase) {
        self.state.cluster.cores[core].phase = phase;
        self.trace.push(TraceEvent::Phase { core, phase });
    }

    fn push_front(&mut self, core: usize, ops: impl IntoIterator<Item = Op>) {
        let ops: Vec<Op> = ops.into_iter().collect();
        let program = &mut self.state.cluster.cores[core].program;
        for op in ops.into_iter().rev() {
            program.push_front(op);
        }
    }

    fn entry_sequence(&self, zone: ZoneId) -> Vec<Op> {
        use ProtoOp::*;
        if self.config().deployment == Deployment::NoRezone {
            return vec![Op::Proto(EnterZone { zone })];
        }
        let m = self.mitigations();
        let mut seq = vec![AcquireLock];
        if m.halt_cores {
            seq.extend([HaltOthers, AwaitHalted]);
        }
        if m.flush_caches {
            seq.push(Flush);
        }
        if m.tlb_maintenance {
            seq.push(Tlbi { zone });
        }
        if m.gatekeeper_unlock {
            seq.extend([GkSend { kind: MqKind::UnlockPpc, stage: Stage::Entry }, GkAwait { stage: Stage::Entry, zone }]);
        }
        if m.reconfigure_ppc {
            seq.push(Reconfigure { row: Row::Zone(zone) });
        }
        if m.gatekeeper_unlock {
            seq.extend([GkSend { kind: MqKind::LockPpc, stage: Stage::Entry }, GkAwait { stage: Stage::Entry, zone }]);
        }
        seq.extend([Isolate, EnterZone { zone }]);
        seq.into_iter().map(Op::Proto).collect()
    }

    fn exit_sequence(&self, zone: ZoneId, id: SmcId) -> Vec<Op> {
        use ProtoOp::*;
        if self.config().deployment == Deployment::NoRezone {
            return vec![Op::Proto(ExitTrap { zone }), Op::Proto(Resume { id })];
        }
        let m = self.mitigations();
        let mut seq = vec![ExitTrap { zone }];
        if m.invalidate_trampoline {
            seq.push(InvalidateTrampoline);
        }
        if m.gatekeeper_unlock {
            seq.extend([GkSend { kind: MqKind::UnlockPpc, stage: Stage::Exit }, GkAwait { stage: Stage::Exit, zone }]);
        }
        if m.reconfigure_ppc {
            seq.push(Reconfigure { row: Row::Monitor });
        }
        if m.gatekeeper_unlock {
            seq.extend([GkSend { kind: MqKind::LockPpc, stage: Stage::Exit }, GkAwait { stage: Stage::Exit, zone }]);
        }
        seq.extend([Restore, Resume { id }]);
        seq.into_iter().map(Op::Proto).collect()
    }

    /// Whether `core` can make progress right now.
    pub fn core_enabled(&self, core: usize) -> bool {
        let c = &self.state.cluster.cores[core];
        if !c.is_live() {
            return false;
        }
        if c.halt_pending {
            return true;
        }
        if c.halted {
            return false;
        }
        let mb = &self.state.mailbox;
        match c.program.front() {
            None => false,
            Some(Op::Proto(ProtoOp::AcquireLock)) => self.state.rz_lock.is_none(),
            Some(Op::Proto(ProtoOp::AwaitHalted)) => self.state.cluster.others_quiescent(core),
            Some(Op::Proto(ProtoOp::GkSend { .. })) => mb.a_to_b.is_none(),
            Some(Op::Proto(ProtoOp::GkAwait { .. })) | Some(Op::Zone(ZoneOp::MqAwait)) => mb.b_to_a.is_some(),
            Some(Op::Proto(ProtoOp::WakeWait)) => self.state.rz_lock.is_none() && self.state.active_zone.is_none(),
            Some(_) => true,
        }
    }

    /// Executes the next step of `core`. The caller checks
    /// [`Sim::core_enabled`] first.
    pub(crate) fn step_core(&mut self, core: usize) {
        {
            let c = &mut self.state.cluster.cores[core];
            if c.halt_pending {
                c.halt_pending = false;
                c.halted = true;
                self.trace.push(TraceEvent::Halted { core });
                return;
            }
            if c.world == World::Normal || c.in_zone.is_some() {
                self.state.untrusted_steps += 1;
            }
        }
        let Some(op) = self.state.cluster.cores[core].program.pop_front() else {
            return;
        };
        match op {
            Op::Read(pa) => {
                if let Ok(AccessOk::Value(v)) = self.checked(core, pa, AccessKind::Read, 0) {
                    self.state.cluster.cores[core].last_value = Some(v);
                }
            }
            Op::Write(pa, v) => {
                let _ = self.checked(core, pa, AccessKind::Write, v);
            }
            Op::MonitorRead(pa) => {
                if let Ok(AccessOk::Value(v)) = self.checked(core, pa, AccessKind::Read, 0) {
                    self.state.cluster.cores[core].last_value = Some(v);
                }
            }
            Op::MonitorWrite(pa, v) => {
                let _ = self.checked(core, pa, AccessKind::Write, v);
            }
            Op::Smc(id) => self.smc_trap(core, id),
            Op::Irq => self.trace.push(TraceEvent::Irq { core, deferred: false }),
            Op::ReturnToNormal => {
                self.trace.push(TraceEvent::Ctx { core, dir: CtxDir::Restore });
                self.state.cluster.cores[core].set_normal_el1();
            }
            Op::Sleep => self.wake(core),
            Op::Zone(z) => self.zone_step(core, z),
            Op::Proto(p) => self.proto_step(core, p),
        }
        let c = &mut self.state.cluster.cores[core];
        if c.is_live() && c.program.is_empty() {
            c.status = CoreStatus::Finished;
        }
    }

    /// Access by trusted or normal-world code; a fault is fatal.
    fn checked(&mut self, core: usize, addr: u64, access: AccessKind, value: u64) -> Result<AccessOk, Fault> {
        let r = self.mem_access(core, addr, access, value, true);
        if let Err(f) = r {
            self.crash(core, f);
        }
        r
    }

    fn fetch_or_crash(&mut self, core: usize, offset: u64) -> bool {
        match self.fetch_trampoline(core, offset) {
            Ok(_) => true,
            Err(f) => {
                self.crash(core, f);
                false
            }
        }
    }

    fn smc_trap(&mut self, core: usize, id: SmcId) {
        self.trace.push(TraceEvent::Smc { core, id });
        self.state.cluster.cores[core].set_el3();
        if !self.fetch_or_crash(core, offsets::TRAMPOLINE_VECTOR) {
            return;
        }
        self.trace.push(TraceEvent::Ctx { core, dir: CtxDir::Save });
        self.push_front(core, [Op::Proto(ProtoOp::Dispatch { id })]);
    }

    fn wake(&mut self, core: usize) {
        self.trace.push(TraceEvent::Wake { core });
        let c = &mut self.state.cluster.cores[core];
        c.set_el3();
        // reset state: translation is off until the monitor turns it on
        c.el3_mmu_on = false;
        self.trace.push(TraceEvent::Mmu { core, on: false });
        if self.mitigations().wake_into_trampoline {
            if !self.fetch_or_crash(core, offsets::TRAMPOLINE_WAKE) {
                return;
            }
            self.push_front(core, [Op::Proto(ProtoOp::WakeWait), Op::Proto(ProtoOp::MmuOn)]);
        } else {
            self.push_front(core, [Op::Proto(ProtoOp::MmuOn)]);
        }
    }

    fn zone_step(&mut self, core: usize, op: ZoneOp) {
        let Some(zone) = self.state.cluster.cores[core].in_zone else {
            // zone code outside a zone never runs; drop it
            return;
        };
        match op {
            ZoneOp::Map { va, pa, ns, writable } => {
                self.state.cluster.cores[core].s1_mappings.push(MappingEntry::page(va, pa, ns, writable));
            }
            ZoneOp::Read { va } => match self.access_at(core, va, AccessKind::Read, 0, true) {
                Ok((_, AccessOk::Value(v))) => {
                    self.state.cluster.cores[core].last_value = Some(v);
                    self.observe_zone_read(core, zone, v);
                }
                Ok(_) => {}
                Err(f) => self.observe_zone_fault(core, f),
            },
            ZoneOp::Write { va, value } => match self.access_at(core, va, AccessKind::Write, value, true) {
                Ok((pa, ok)) => self.observe_zone_write(core, zone, pa, ok),
                Err(f) => self.observe_zone_fault(core, f),
            },
            ZoneOp::Work { units } => self.trace.push(TraceEvent::Work { core, zone, units }),
            ZoneOp::ReadTokenReg => match self.state.cluster.cores[core].read_token_reg() {
                Ok(v) => self.observe_zone_read(core, zone, v),
                Err(_) => {
                    let el = self.state.cluster.cores[core].el;
                    self.trace.push(TraceEvent::Fault { core, el, addr: 0, fault: Fault::TokenTrap });
                    self.observe_zone_fault(core, Fault::TokenTrap);
                }
            },
            ZoneOp::MqSend { kind, claim } => {
                let mu_a = self.addr(RegionKind::Peripheral(MU_A), 0);
                let va = self.virtual_alias(core, mu_a).unwrap_or(mu_a);
                match self.mailbox_access(core, va, AccessKind::Write) {
                    Ok(_) => {
                        if self.state.mailbox.a_to_b.is_none() {
                            self.state.mailbox.a_to_b = Some(MqMessage::request(kind, claim));
                            self.trace.push(TraceEvent::MqSend { core, channel: MqChannel::AToB, kind });
                        }
                    }
                    Err(f) => self.observe_zone_fault(core, f),
                }
            }
            ZoneOp::MqAwait => {
                if let Some(reply) = self.state.mailbox.b_to_a.take() {
                    let code = match reply.kind {
                        MqKind::Ack => 1,
                        _ => 0,
                    };
                    self.state.observations.push((core, crate::machine::Observation::Value(code)));
                }
            }
            ZoneOp::PpcWrite { va, edit } => match self.ppc_config_write(core, va, edit) {
                Ok(outcome) => {
                    let code = outcome.applied() as u64;
                    self.state.observations.push((core, crate::machine::Observation::Value(code)));
                }
                Err(f) => self.observe_zone_fault(core, f),
            },
            ZoneOp::MuBWrite { va } => match self.mailbox_access(core, va, AccessKind::Write) {
                Ok(region) => {
                    // the write went through: forge a gatekeeper reply
                    if region == RegionKind::Peripheral(crate::layout::MU_B) {
                        self.state.mailbox.b_to_a = Some(MqMessage::reply(MqKind::Ack));
                        self.report(Property::P2, ViolationKind::Tamper { region }, Some(core));
                    }
                }
                Err(f) => self.observe_zone_fault(core, f),
            },
            ZoneOp::Preempt => self.preempt(core, zone),
            ZoneOp::Return => self.zone_return(core, zone),
        }
    }

    /// Virtual address under which the zone maps physical `pa`, if any.
    fn virtual_alias(&self, core: usize, pa: PhysAddr) -> Option<u64> {
        let page = crate::cluster::page_of(pa);
        self.state.cluster.cores[core]
            .s1_mappings
            .iter()
            .rev()
            .find(|m| m.pa == page)
            .map(|m| m.va | (pa - page))
    }

    fn zone_entry_id(&self, zone: ZoneId) -> SmcId {
        self.state.registry.get(zone).map(|m| m.smc_range.start).unwrap_or(0)
    }

    fn preempt(&mut self, core: usize, zone: ZoneId) {
        if self.config().deployment == Deployment::Rezone && !self.config().irq_preemption {
            self.trace.push(TraceEvent::Irq { core, deferred: true });
            return;
        }
        // stash the rest of the trusted OS run and leave through the exit path
        let program = &mut self.state.cluster.cores[core].program;
        let mut rest = Vec::new();
        while let Some(Op::Zone(z)) = program.front().copied() {
            program.pop_front();
            if z == ZoneOp::Return {
                break;
            }
            rest.push(Op::Zone(z));
        }
        self.state.continuations.insert(zone, rest);
        let id = self.zone_entry_id(zone);
        self.push_front(core, [Op::Zone(ZoneOp::Return), Op::Irq, Op::Smc(id)]);
    }

    fn zone_return(&mut self, core: usize, zone: ZoneId) {
        let id = self.zone_entry_id(zone);
        self.trace.push(TraceEvent::Smc { core, id });
        let c = &mut self.state.cluster.cores[core];
        let mappings = std::mem::take(&mut c.s1_mappings);
        c.set_el3();
        c.in_zone = None;
        self.state.zone_mappings.insert(zone, mappings);
        let seq = self.exit_sequence(zone, id);
        self.push_front(core, seq);
    }

    fn proto_step(&mut self, core: usize, op: ProtoOp) {
        match op {
            ProtoOp::Dispatch { id } => {
                let routing = self.addr(RegionKind::Monitor, offsets::MONITOR_ROUTING);
                if self.checked(core, routing, AccessKind::Read, 0).is_err() {
                    return;
                }
                match self.state.registry.route(id) {
                    Route::Zone(zone) => {
                        let seq = self.entry_sequence(zone);
                        self.push_front(core, seq);
                    }
                    Route::MonitorService => {
                        let slot = self.addr(RegionKind::Monitor, offsets::MONITOR_CTX + core as u64 * 16);
                        self.push_front(
                            core,
                            [
                                Op::MonitorRead(slot),
                                Op::MonitorWrite(slot, id),
                                Op::Proto(ProtoOp::ReturnNormal { id, ok: true }),
                            ],
                        );
                    }
                    Route::Unknown => self.push_front(core, [Op::Proto(ProtoOp::ReturnNormal { id, ok: false })]),
                }
            }
            ProtoOp::ReturnNormal { id, ok } => {
                self.trace.push(TraceEvent::Ctx { core, dir: CtxDir::Restore });
                self.state.cluster.cores[core].set_normal_el1();
                self.trace.push(TraceEvent::SmcResult { core, id, ok });
            }
            ProtoOp::AcquireLock => {
                self.state.rz_lock = Some(core);
                self.trace.push(TraceEvent::Lock { holder: Some(core) });
            }
            ProtoOp::HaltOthers => {
                self.enter_phase(core, Phase::SyncHalt);
                self.halt_others(core);
            }
            ProtoOp::AwaitHalted => {}
            ProtoOp::Flush => {
                self.enter_phase(core, Phase::Flush);
                self.flush_caches(core);
                self.fetch_or_crash(core, offsets::TRAMPOLINE_ENTRY);
            }
            ProtoOp::Tlbi { zone } => {
                if self.state.registry.needs_tlbi(zone) {
                    self.enter_phase(core, Phase::Tlbi);
                    self.tlb_invalidate();
                }
            }
            ProtoOp::GkSend { kind, stage } => self.gk_send(core, kind, stage),
            ProtoOp::GkAwait { stage, zone } => self.gk_await(core, stage, zone),
            ProtoOp::Reconfigure { row } => self.reconfigure(core, row),
            ProtoOp::Isolate => {
                self.enter_phase(core, Phase::Isolate);
                if self.mitigations().coherency_disable {
                    self.set_coherency(false);
                }
                if self.mitigations().el3_mmu_off {
                    self.state.cluster.cores[core].el3_mmu_on = false;
                    self.trace.push(TraceEvent::Mmu { core, on: false });
                }
            }
            ProtoOp::EnterZone { zone } => self.enter_zone(core, zone),
            ProtoOp::ExitTrap { zone } => {
                self.trace.push(TraceEvent::ZoneExit { core, zone });
                if self.fetch_or_crash(core, offsets::TRAMPOLINE_VECTOR) {
                    self.trace.push(TraceEvent::Ctx { core, dir: CtxDir::Save });
                }
            }
            ProtoOp::InvalidateTrampoline => {
                self.enter_phase(core, Phase::InvalidateTrampoline);
                self.invalidate_trampoline_lines(core);
                if !self.trampoline_intact() {
                    self.report(Property::P2, ViolationKind::TrampolineHash, Some(core));
                }
            }
            ProtoOp::Restore => {
                if self.config().deployment == Deployment::Rezone {
                    self.enter_phase(core, Phase::Restore);
                }
                if !self.state.cluster.cores[core].el3_mmu_on {
                    self.state.cluster.cores[core].el3_mmu_on = true;
                    self.trace.push(TraceEvent::Mmu { core, on: true });
                }
                if !self.state.cluster.coherency_on {
                    self.set_coherency(true);
                }
                self.fetch_or_crash(core, offsets::TRAMPOLINE_EXIT);
            }
            ProtoOp::Resume { id } => {
                if self.config().deployment == Deployment::Rezone {
                    self.enter_phase(core, Phase::Resume);
                }
                self.state.active_zone = None;
                self.release(core);
                self.trace.push(TraceEvent::Ctx { core, dir: CtxDir::Restore });
                self.state.cluster.cores[core].set_normal_el1();
                self.state.cluster.cores[core].phase = Phase::Idle;
                self.trace.push(TraceEvent::SmcResult { core, id, ok: true });
            }
            ProtoOp::Abort { zone, id } => {
                self.trace.push(TraceEvent::EntryAbort { core, zone });
                self.release(core);
                self.trace.push(TraceEvent::Ctx { core, dir: CtxDir::Restore });
                self.state.cluster.cores[core].set_normal_el1();
                self.state.cluster.cores[core].phase = Phase::Idle;
                self.trace.push(TraceEvent::SmcResult { core, id, ok: false });
            }
            ProtoOp::WakeWait => {}
            ProtoOp::MmuOn => {
                self.state.cluster.cores[core].el3_mmu_on = true;
                self.trace.push(TraceEvent::Mmu { core, on: true });
            }
        }
    }

    fn release(&mut self, core: usize) {
        self.resume_others(core);
        if self.state.rz_lock == Some(core) {
            self.state.rz_lock = None;
            self.trace.push(TraceEvent::Lock { holder: None });
        }
    }

    fn gk_send(&mut self, core: usize, kind: MqKind, stage: Stage) {
        match (kind, stage) {
            (MqKind::UnlockPpc, _) => self.enter_phase(core, Phase::Unlock),
            (MqKind::LockPpc, Stage::Exit) => self.enter_phase(core, Phase::Relock),
            _ => {}
        }
        // stale replies from a previous exchange are discarded
        self.state.mailbox.b_to_a = None;
        let mu_a = self.addr(RegionKind::Peripheral(MU_A), 0);
        if let Err(f) = self.mailbox_access(core, mu_a, AccessKind::Write) {
            self.crash(core, f);
            return;
        }
        let mut claim = self.state.cluster.cores[core].read_token_reg().unwrap_or(0);
        if self.config().corrupt_entry_token && stage == Stage::Entry && kind == MqKind::UnlockPpc {
            claim = claim.wrapping_add(1) & self.state.gatekeeper.token_mask();
        }
        self.state.mailbox.a_to_b = Some(MqMessage::request(kind, claim));
        self.trace.push(TraceEvent::MqSend { core, channel: MqChannel::AToB, kind });
    }

    fn gk_await(&mut self, core: usize, stage: Stage, zone: ZoneId) {
        let mu_a = self.addr(RegionKind::Peripheral(MU_A), 0);
        if let Err(f) = self.mailbox_access(core, mu_a, AccessKind::Read) {
            self.crash(core, f);
            return;
        }
        let Some(reply) = self.state.mailbox.b_to_a.take() else {
            return;
        };
        if reply.kind == MqKind::Ack {
            return;
        }
        match stage {
            Stage::Entry => {
                // fail closed: drop the rest of the entry and stay in the monitor row
                let program = &mut self.state.cluster.cores[core].program;
                while let Some(Op::Proto(p)) = program.pop_front() {
                    if matches!(p, ProtoOp::EnterZone { .. }) {
                        break;
                    }
                }
                let id = self.zone_entry_id(zone);
                self.push_front(core, [Op::Proto(ProtoOp::Abort { zone, id })]);
            }
            Stage::Exit => {
                self.state.cluster.cores[core].status = CoreStatus::Hung;
                self.report(Property::Liveness, ViolationKind::ProtocolFailure, Some(core));
            }
        }
    }

    fn reconfigure(&mut self, core: usize, row: Row) {
        let edits = match row {
            Row::Zone(zone) => {
                self.enter_phase(core, Phase::Reconfigure);
                let wl = self.state.registry.whitelist(zone);
                PpcState::row_edits(self.layout(), &AccessContext::zone(zone, ExceptionLevel::El1), &wl)
            }
            Row::Monitor => {
                self.enter_phase(core, Phase::ReconfigureBack);
                PpcState::row_edits(self.layout(), &AccessContext::monitor(), &Default::default())
            }
        };
        let mmio = self.addr(RegionKind::PpcMmio, 0);
        for edit in edits {
            if let Err(f) = self.ppc_config_write(core, mmio, edit) {
                self.crash(core, f);
                return;
            }
        }
    }

    fn enter_zone(&mut self, core: usize, zone: ZoneId) {
        if self.config().deployment == Deployment::Rezone {
            self.enter_phase(core, Phase::InZone);
        }
        let mappings = self.state.zone_mappings.get(&zone).cloned().unwrap_or_default();
        self.state.registry.record_entry(zone);
        self.state.active_zone = Some(zone);
        let c = &mut self.state.cluster.cores[core];
        c.s1_mappings = mappings;
        c.set_secure_el1();
        c.in_zone = Some(zone);
        self.trace.push(TraceEvent::Ctx { core, dir: CtxDir::Restore });
        self.trace.push(TraceEvent::ZoneEnter { core, zone });
        let mut body: Vec<Op> = match self.state.continuations.remove(&zone) {
            Some(rest) => rest,
            None => self.zone_program(zone).iter().copied().map(Op::Zone).collect(),
        };
        if body.last() != Some(&Op::Zone(ZoneOp::Return)) {
            body.push(Op::Zone(ZoneOp::Return));
        }
        self.push_front(core, body);
    }

    /// The ACU serves one pending mailbox request.
    pub(crate) fn step_acu(&mut self) {
        let Some(msg) = self.state.mailbox.a_to_b.take() else {
            return;
        };
        let before = self.state.gatekeeper.auth_failures();
        let (reply, edits) = self.state.gatekeeper.handle(&mut self.state.ppc, msg);
        for (edit, outcome) in edits {
            self.trace.push(TraceEvent::PpcConfig {
                requester: crate::ppc::BusMasterId::ACU,
                core: None,
                edit,
                applied: outcome.applied(),
            });
        }
        let failures = self.state.gatekeeper.auth_failures();
        if failures > before {
            self.trace.push(TraceEvent::AuthFail { failures });
        }
        self.trace.push(TraceEvent::MqReply { channel: MqChannel::BToA, kind: reply.kind });
        self.state.mailbox.b_to_a = Some(reply);
    }
}

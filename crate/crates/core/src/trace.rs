//! Ordered event log. Every access, check, maintenance step and message is
//! recorded here for replay, cost accounting and assertions.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::cluster::{Ns, Regime};
use crate::gatekeeper::{MqChannel, MqKind};
use crate::layout::{AccessKind, ExceptionLevel, PhysAddr, RegionKind, World, ZoneId};
use crate::machine::{Fault, Violation};
use crate::monitor::Phase;
use crate::ppc::{BusMasterId, ConfigEdit, Verdict};
use crate::zones::SmcId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lookup {
    Hit,
    Miss,
    Uncached,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CtxDir {
    Save,
    Restore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TraceEvent {
    Boot { seed: u64, token_bits: u32 },
    BootRefused { component: String },
    PpcCheck { mid: BusMasterId, region: RegionKind, access: AccessKind, verdict: Verdict },
    PpcConfig { requester: BusMasterId, core: Option<usize>, edit: ConfigEdit, applied: bool },
    Mem {
        core: usize,
        el: ExceptionLevel,
        world: World,
        pa: PhysAddr,
        ns: Ns,
        access: AccessKind,
        lookup: Lookup,
        allowed: bool,
    },
    Fetch { core: usize, pa: PhysAddr, cached: bool, intact: bool },
    TlbFill { regime: Regime, va: u64 },
    TlbWalk { core: usize, pa: PhysAddr, allowed: bool },
    Writeback { pa: PhysAddr, ns: Ns, allowed: bool },
    Fault { core: usize, el: ExceptionLevel, addr: u64, fault: Fault },
    Flush { core: usize, lines: usize },
    Invalidate { core: usize, lines: usize },
    Tlbi { entries: usize },
    Coherency { on: bool },
    Mmu { core: usize, on: bool },
    MqSend { core: usize, channel: MqChannel, kind: MqKind },
    MqReply { channel: MqChannel, kind: MqKind },
    AuthFail { failures: u64 },
    Phase { core: usize, phase: Phase },
    Smc { core: usize, id: SmcId },
    SmcResult { core: usize, id: SmcId, ok: bool },
    Lock { holder: Option<usize> },
    Ipi { from: usize, to: usize },
    Halted { core: usize },
    Resumed { core: usize },
    Wake { core: usize },
    Ctx { core: usize, dir: CtxDir },
    Work { core: usize, zone: ZoneId, units: u32 },
    Irq { core: usize, deferred: bool },
    ZoneEnter { core: usize, zone: ZoneId },
    ZoneExit { core: usize, zone: ZoneId },
    EntryAbort { core: usize, zone: ZoneId },
    Violation { violation: Violation },
    Deadlock,
}

impl TraceEvent {
    pub fn name(&self) -> &'static str {
        match self {
            TraceEvent::Boot { .. } => "BOOT",
            TraceEvent::BootRefused { .. } => "BOOT_REFUSED",
            TraceEvent::PpcCheck { .. } => "PPC_CHECK",
            TraceEvent::PpcConfig { .. } => "PPC_CONFIG",
            TraceEvent::Mem { .. } => "MEM",
            TraceEvent::Fetch { .. } => "FETCH",
            TraceEvent::TlbFill { .. } => "TLB_FILL",
            TraceEvent::TlbWalk { .. } => "TLB_WALK",
            TraceEvent::Writeback { .. } => "WRITEBACK",
            TraceEvent::Fault { .. } => "FAULT",
            TraceEvent::Flush { .. } => "FLUSH",
            TraceEvent::Invalidate { .. } => "INVALIDATE",
            TraceEvent::Tlbi { .. } => "TLBI",
            TraceEvent::Coherency { .. } => "COHERENCY",
            TraceEvent::Mmu { .. } => "MMU",
            TraceEvent::MqSend { .. } => "MQ_SEND",
            TraceEvent::MqReply { .. } => "MQ_REPLY",
            TraceEvent::AuthFail { .. } => "AUTH_FAIL",
            TraceEvent::Phase { .. } => "PHASE",
            TraceEvent::Smc { .. } => "SMC",
            TraceEvent::SmcResult { .. } => "SMC_RESULT",
            TraceEvent::Lock { .. } => "LOCK",
            TraceEvent::Ipi { .. } => "IPI",
            TraceEvent::Halted { .. } => "HALTED",
            TraceEvent::Resumed { .. } => "RESUMED",
            TraceEvent::Wake { .. } => "WAKE",
            TraceEvent::Ctx { .. } => "CTX",
            TraceEvent::Work { .. } => "WORK",
            TraceEvent::Irq { .. } => "IRQ",
            TraceEvent::ZoneEnter { .. } => "ZONE_ENTER",
            TraceEvent::ZoneExit { .. } => "ZONE_EXIT",
            TraceEvent::EntryAbort { .. } => "ENTRY_ABORT",
            TraceEvent::Violation { .. } => "VIOLATION",
            TraceEvent::Deadlock => "DEADLOCK",
        }
    }

    /// Core an event is attributed to, when there is one.
    pub fn core(&self) -> Option<usize> {
        match *self {
            TraceEvent::Mem { core, .. }
            | TraceEvent::Fetch { core, .. }
            | TraceEvent::TlbWalk { core, .. }
            | TraceEvent::Fault { core, .. }
            | TraceEvent::Flush { core, .. }
            | TraceEvent::Invalidate { core, .. }
            | TraceEvent::Mmu { core, .. }
            | TraceEvent::MqSend { core, .. }
            | TraceEvent::Phase { core, .. }
            | TraceEvent::Smc { core, .. }
            | TraceEvent::SmcResult { core, .. }
            | TraceEvent::Halted { core }
            | TraceEvent::Resumed { core }
            | TraceEvent::Wake { core }
            | TraceEvent::Ctx { core, .. }
            | TraceEvent::Work { core, .. }
            | TraceEvent::Irq { core, .. }
            | TraceEvent::ZoneEnter { core, .. }
            | TraceEvent::ZoneExit { core, .. }
            | TraceEvent::EntryAbort { core, .. } => Some(core),
            TraceEvent::Ipi { from, .. } => Some(from),
            TraceEvent::PpcConfig { core, .. } => core,
            _ => None,
        }
    }
}

/// Every event name the log can contain.
pub const EVENT_NAMES: &[&str] = &[
    "BOOT",
    "BOOT_REFUSED",
    "PPC_CHECK",
    "PPC_CONFIG",
    "MEM",
    "FETCH",
    "TLB_FILL",
    "TLB_WALK",
    "WRITEBACK",
    "FAULT",
    "FLUSH",
    "INVALIDATE",
    "TLBI",
    "COHERENCY",
    "MMU",
    "MQ_SEND",
    "MQ_REPLY",
    "AUTH_FAIL",
    "PHASE",
    "SMC",
    "SMC_RESULT",
    "LOCK",
    "IPI",
    "HALTED",
    "RESUMED",
    "WAKE",
    "CTX",
    "WORK",
    "IRQ",
    "ZONE_ENTER",
    "ZONE_EXIT",
    "ENTRY_ABORT",
    "VIOLATION",
    "DEADLOCK",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    enabled: bool,
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn recording() -> Self {
        Trace { enabled: true, events: Vec::new() }
    }

    /// A sink that drops everything. Used by the explorer.
    pub fn disabled() -> Self {
        Trace { enabled: false, events: Vec::new() }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    #[inline]
    pub fn push(&mut self, event: TraceEvent) {
        if self.enabled {
            self.events.push(event);
        }
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn clear(&mut self) {
        self.events.clear();
    }

    /// Newline-delimited JSON, one record per event, in simulation order.
    pub fn write_ndjson<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (seq, ev) in self.events.iter().enumerate() {
            let mut value = serde_json::to_value(ev).map_err(io::Error::other)?;
            if let serde_json::Value::Object(map) = &mut value {
                map.insert("seq".into(), seq.into());
            }
            serde_json::to_writer(&mut out, &value).map_err(io::Error::other)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn phases(&self, core: usize) -> Vec<Phase> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Phase { core: c, phase } if *c == core => Some(*phase),
                _ => None,
            })
            .collect()
    }

    pub fn count(&self, name: &str) -> usize {
        self.events.iter().filter(|e| e.name() == name).count()
    }
}

//! Deterministic simulator of a TrustZone SoC partitioned into isolated
//! trusted-OS zones by a platform partition controller and an auxiliary
//! gatekeeper core.

pub mod adversary;
pub mod cluster;
pub mod cost;
pub mod gatekeeper;
pub mod layout;
pub mod machine;
pub mod monitor;
pub mod ppc;
pub mod scenario;
pub mod sched;
pub mod setup;
pub mod trace;
pub mod zones;

pub use cluster::{ClusterConfig, CoreStatus, MappingEntry, Ns};
pub use gatekeeper::{GatekeeperError, MqKind, DEFAULT_TOKEN_BITS};
pub use layout::{
    reference_permission, AccessContext, AccessKind, ExceptionLevel, LayoutConfig, LayoutError, MemoryLayout,
    Permission, PeriphId, PhysAddr, RegionKind, World, ZoneId, MU_A, MU_B,
};
pub use machine::{
    AccessOk, Deployment, Fault, Mitigations, Property, Sim, SimConfig, SimError, Violation, ViolationKind,
};
pub use monitor::{Op, Phase, ZoneOp};
pub use ppc::{BusMasterId, ConfigEdit, DomainId, EditOutcome, PpcConfig, PpcState, Verdict};
pub use sched::{Actor, InOrder, RandomScheduler, Replay, RoundRobin, RunStatus, Scheduler};
pub use setup::SimBuilder;
pub use trace::{Trace, TraceEvent};
pub use zones::{ZoneError, ZoneManifest, ZoneRegistry};

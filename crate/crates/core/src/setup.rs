//! Ready-made system configurations shared by attacks, scenarios, cost
//! workloads and tests.

use std::collections::BTreeMap;

use crate::layout::{LayoutConfig, MemoryLayout, PhysAddr, RegionKind, ZoneId, PAGE_SIZE};
use crate::machine::{Sim, SimConfig, SimError};
use crate::monitor::{Op, ZoneOp};
use crate::zones::{SmcId, ZoneManifest};

pub const ZONE1: ZoneId = ZoneId(1);
pub const ZONE2: ZoneId = ZoneId(2);
pub const ZONE1_SMC: SmcId = 100;
pub const ZONE2_SMC: SmcId = 200;
/// A monitor service id, handled entirely at EL3.
pub const MONITOR_SERVICE_SMC: SmcId = 5;

/// Virtual base where zone programs map their first page.
pub const ZONE_VA: u64 = 0x1000_0000;

pub fn va(slot: u64) -> u64 {
    ZONE_VA + slot * PAGE_SIZE
}

/// Two zones with SMC ranges `[100, 200)` and `[200, 300)`.
pub fn two_zones() -> Vec<ZoneManifest> {
    vec![ZoneManifest::new(ZONE1, 64 << 10, 100..200), ZoneManifest::new(ZONE2, 64 << 10, 200..300)]
}

/// Layout the simulator will build for these manifests, available before
/// the simulator exists so programs can refer to physical addresses.
pub fn layout_for(manifests: &[ZoneManifest], cfg: &LayoutConfig) -> Result<MemoryLayout, SimError> {
    Ok(MemoryLayout::build(manifests, cfg)?)
}

/// Builder for a booted simulator.
#[derive(Clone, Debug)]
pub struct SimBuilder {
    pub config: SimConfig,
    pub manifests: Vec<ZoneManifest>,
    pub zone_programs: BTreeMap<ZoneId, Vec<ZoneOp>>,
    pub core_programs: BTreeMap<usize, Vec<Op>>,
}

impl SimBuilder {
    pub fn new(config: SimConfig, manifests: Vec<ZoneManifest>) -> Self {
        SimBuilder { config, manifests, zone_programs: BTreeMap::new(), core_programs: BTreeMap::new() }
    }

    pub fn two_zones(config: SimConfig) -> Self {
        Self::new(config, two_zones())
    }

    pub fn layout(&self) -> MemoryLayout {
        MemoryLayout::build(&self.manifests, &self.config.layout).expect("builder manifests form a valid layout")
    }

    pub fn addr(&self, kind: RegionKind, offset: u64) -> PhysAddr {
        self.layout().base(kind) + offset
    }

    pub fn zone(mut self, zone: ZoneId, program: Vec<ZoneOp>) -> Self {
        self.zone_programs.insert(zone, program);
        self
    }

    pub fn core(mut self, core: usize, program: Vec<Op>) -> Self {
        self.core_programs.insert(core, program);
        self
    }

    /// Builds without booting.
    pub fn build_unbooted(&self) -> Result<Sim, SimError> {
        let mut sim = Sim::new(self.config.clone(), self.manifests.clone(), self.zone_programs.clone())?;
        for (core, program) in &self.core_programs {
            sim.load_program(*core, program.iter().copied())?;
        }
        Ok(sim)
    }

    pub fn build(&self) -> Result<Sim, SimError> {
        let mut sim = self.build_unbooted()?;
        sim.boot()?;
        Ok(sim)
    }
}

//! Physical memory layout, region taxonomy and the reference permission
//! matrix that enforcement is checked against.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::zones::ZoneManifest;

pub type PhysAddr = u64;

pub const PAGE_SIZE: u64 = 4096;

/// Identifier of a zone. Zone ids are dense and start at 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ZoneId(pub u16);

impl fmt::Display for ZoneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "zone{}", self.0)
    }
}

/// Identifier of a peripheral. Peripheral ids are dense and start at 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PeriphId(pub u16);

/// Processor side of the message unit. Always reachable by the cluster.
pub const MU_A: PeriphId = PeriphId(1);
/// ACU side of the message unit. Exclusive to the ACU domain.
pub const MU_B: PeriphId = PeriphId(2);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Ree,
    Shared,
    Monitor,
    Trampoline,
    Gatekeeper,
    Zone(ZoneId),
    PpcMmio,
    Peripheral(PeriphId),
}

impl RegionKind {
    /// Regions that TZASC marks secure. Only REE and SHARED are non-secure.
    pub fn is_secure(self) -> bool {
        !matches!(self, RegionKind::Ree | RegionKind::Shared)
    }

    /// Memory-mapped device regions are never cached.
    pub fn is_device(self) -> bool {
        matches!(self, RegionKind::PpcMmio | RegionKind::Peripheral(_))
    }
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionKind::Ree => f.write_str("ree"),
            RegionKind::Shared => f.write_str("shared"),
            RegionKind::Monitor => f.write_str("monitor"),
            RegionKind::Trampoline => f.write_str("trampoline"),
            RegionKind::Gatekeeper => f.write_str("gatekeeper"),
            RegionKind::Zone(z) => write!(f, "zone{}", z.0),
            RegionKind::PpcMmio => f.write_str("ppc_mmio"),
            RegionKind::Peripheral(p) => write!(f, "periph{}", p.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub start: PhysAddr,
    pub len: u64,
    pub kind: RegionKind,
}

impl Region {
    pub fn end(&self) -> PhysAddr {
        self.start + self.len
    }

    /// Half-open containment: `[start, start + len)`.
    pub fn contains(&self, addr: PhysAddr) -> bool {
        addr >= self.start && addr < self.end()
    }
}

/// Sizes used to pack the layout. All sizes are in bytes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutConfig {
    pub address_space: u64,
    pub ree_size: u64,
    pub shared_size: u64,
    pub trampoline_size: u64,
    pub monitor_size: u64,
    pub gatekeeper_size: u64,
    pub ppc_mmio_size: u64,
    pub peripheral_count: u16,
    pub peripheral_size: u64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            address_space: 16 << 20,
            ree_size: 256 << 10,
            shared_size: 64 << 10,
            trampoline_size: 4 << 10,
            monitor_size: 64 << 10,
            gatekeeper_size: 16 << 10,
            ppc_mmio_size: 4 << 10,
            peripheral_count: 8,
            peripheral_size: 4 << 10,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("regions need {needed:#x} bytes but the address space is {available:#x}")]
    Overlap { needed: u64, available: u64 },
    #[error("zone id {0} declared more than once")]
    DuplicateZoneId(u16),
    #[error("zone ids must be dense from 1, missing zone {0}")]
    NonDenseZoneIds(u16),
    #[error("region {0} has zero size")]
    EmptyRegion(RegionKind),
    #[error("at least two peripherals are required for the message unit")]
    MissingMessageUnit,
}

/// Ordered, disjoint partition of the physical address space.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemoryLayout {
    regions: Vec<Region>,
}

impl MemoryLayout {
    /// Packs regions contiguously from address 0 in the order
    /// REE, SHARED, TRAMPOLINE, MONITOR, GATEKEEPER, ZONE(1..n), PPC_MMIO,
    /// PERIPHERAL(1..p).
    pub fn build(manifests: &[ZoneManifest], cfg: &LayoutConfig) -> Result<Self, LayoutError> {
        let mut ids: Vec<u16> = Vec::with_capacity(manifests.len());
        for m in manifests {
            if ids.contains(&m.zone_id.0) {
                return Err(LayoutError::DuplicateZoneId(m.zone_id.0));
            }
            ids.push(m.zone_id.0);
        }
        ids.sort_unstable();
        for (i, id) in ids.iter().enumerate() {
            let expected = i as u16 + 1;
            if *id != expected {
                return Err(LayoutError::NonDenseZoneIds(expected));
            }
        }
        if cfg.peripheral_count < 2 {
            return Err(LayoutError::MissingMessageUnit);
        }

        let mut sized: Vec<(RegionKind, u64)> = vec![
            (RegionKind::Ree, cfg.ree_size),
            (RegionKind::Shared, cfg.shared_size),
            (RegionKind::Trampoline, cfg.trampoline_size),
            (RegionKind::Monitor, cfg.monitor_size),
            (RegionKind::Gatekeeper, cfg.gatekeeper_size),
        ];
        let mut zones: Vec<&ZoneManifest> = manifests.iter().collect();
        zones.sort_by_key(|m| m.zone_id);
        sized.extend(zones.iter().map(|m| (RegionKind::Zone(m.zone_id), m.mem_size)));
        sized.push((RegionKind::PpcMmio, cfg.ppc_mmio_size));
        sized.extend(
            (1..=cfg.peripheral_count).map(|p| (RegionKind::Peripheral(PeriphId(p)), cfg.peripheral_size)),
        );

        let mut regions = Vec::with_capacity(sized.len());
        let mut cursor: u64 = 0;
        for (kind, len) in sized {
            if len == 0 {
                return Err(LayoutError::EmptyRegion(kind));
            }
            regions.push(Region { start: cursor, len, kind });
            cursor = cursor.checked_add(len).ok_or(LayoutError::Overlap {
                needed: u64::MAX,
                available: cfg.address_space,
            })?;
        }
        if cursor > cfg.address_space {
            return Err(LayoutError::Overlap { needed: cursor, available: cfg.address_space });
        }
        Ok(MemoryLayout { regions })
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn kinds(&self) -> impl Iterator<Item = RegionKind> + '_ {
        self.regions.iter().map(|r| r.kind)
    }

    /// The unique region containing `addr`, or `None` when unmapped.
    pub fn region_of(&self, addr: PhysAddr) -> Option<RegionKind> {
        let idx = self.regions.partition_point(|r| r.start <= addr);
        if idx == 0 {
            return None;
        }
        let r = &self.regions[idx - 1];
        r.contains(addr).then_some(r.kind)
    }

    pub fn region(&self, kind: RegionKind) -> Option<&Region> {
        self.regions.iter().find(|r| r.kind == kind)
    }

    /// Start address of `kind`. Panics if the layout lacks the region.
    pub fn base(&self, kind: RegionKind) -> PhysAddr {
        self.region(kind)
            .unwrap_or_else(|| panic!("layout has no {kind} region"))
            .start
    }

    pub fn zone_ids(&self) -> impl Iterator<Item = ZoneId> + '_ {
        self.regions.iter().filter_map(|r| match r.kind {
            RegionKind::Zone(z) => Some(z),
            _ => None,
        })
    }

    pub fn peripheral_ids(&self) -> impl Iterator<Item = PeriphId> + '_ {
        self.regions.iter().filter_map(|r| match r.kind {
            RegionKind::Peripheral(p) => Some(p),
            _ => None,
        })
    }

    pub fn end(&self) -> PhysAddr {
        self.regions.last().map(Region::end).unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Permission {
    NA,
    RO,
    RW,
}

impl Permission {
    pub fn allows(self, access: AccessKind) -> bool {
        match access {
            AccessKind::Read => self >= Permission::RO,
            AccessKind::Write => self == Permission::RW,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum World {
    Normal,
    Secure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExceptionLevel {
    #[serde(rename = "EL0")]
    El0,
    #[serde(rename = "EL1")]
    El1,
    #[serde(rename = "EL3")]
    El3,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("EL3 always executes in the secure state")]
pub struct IllFormedContext;

/// Who is asking, as far as the permission matrix is concerned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccessContext {
    world: World,
    el: ExceptionLevel,
    active_zone: Option<ZoneId>,
    ppc_unlocked_window: bool,
}

impl AccessContext {
    pub fn new(
        world: World,
        el: ExceptionLevel,
        active_zone: Option<ZoneId>,
        ppc_unlocked_window: bool,
    ) -> Result<Self, IllFormedContext> {
        if el == ExceptionLevel::El3 && world != World::Secure {
            return Err(IllFormedContext);
        }
        Ok(AccessContext { world, el, active_zone, ppc_unlocked_window })
    }

    pub fn normal() -> Self {
        AccessContext {
            world: World::Normal,
            el: ExceptionLevel::El1,
            active_zone: None,
            ppc_unlocked_window: false,
        }
    }

    pub fn monitor() -> Self {
        AccessContext {
            world: World::Secure,
            el: ExceptionLevel::El3,
            active_zone: None,
            ppc_unlocked_window: false,
        }
    }

    pub fn zone(zone: ZoneId, el: ExceptionLevel) -> Self {
        AccessContext { world: World::Secure, el, active_zone: Some(zone), ppc_unlocked_window: false }
    }

    pub fn with_unlocked_window(mut self, open: bool) -> Self {
        self.ppc_unlocked_window = open;
        self
    }

    pub fn world(&self) -> World {
        self.world
    }

    pub fn el(&self) -> ExceptionLevel {
        self.el
    }

    pub fn active_zone(&self) -> Option<ZoneId> {
        self.active_zone
    }

    pub fn ppc_unlocked_window(&self) -> bool {
        self.ppc_unlocked_window
    }

    pub fn row(&self) -> MatrixRow {
        match (self.world, self.active_zone) {
            (World::Normal, _) => MatrixRow::Normal,
            (World::Secure, None) => MatrixRow::Monitor,
            (World::Secure, Some(z)) => MatrixRow::Zone(z),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixRow {
    Normal,
    Monitor,
    Zone(ZoneId),
}

/// The reference permission matrix.
///
/// `whitelist` is the peripheral whitelist of the active zone and is only
/// consulted for zone rows. The processor side of the message unit is
/// reachable from every secure row; the ACU side never is.
pub fn reference_permission(
    ctx: &AccessContext,
    kind: RegionKind,
    whitelist: &BTreeSet<PeriphId>,
) -> Permission {
    use Permission::*;
    let secure_window = ctx.world == World::Secure && ctx.ppc_unlocked_window;
    match ctx.row() {
        MatrixRow::Normal => match kind {
            RegionKind::Ree | RegionKind::Shared => RW,
            _ => NA,
        },
        MatrixRow::Monitor => match kind {
            RegionKind::Gatekeeper => NA,
            RegionKind::Peripheral(p) if p == MU_B => NA,
            RegionKind::PpcMmio if secure_window => RW,
            RegionKind::PpcMmio => NA,
            _ => RW,
        },
        MatrixRow::Zone(active) => match kind {
            RegionKind::Zone(z) if z == active => RW,
            RegionKind::Shared => RW,
            RegionKind::Trampoline => RO,
            RegionKind::Peripheral(p) if p == MU_A => RW,
            RegionKind::Peripheral(p) if p != MU_B && whitelist.contains(&p) => RW,
            RegionKind::PpcMmio if secure_window => RW,
            _ => NA,
        },
    }
}

//! Zone manifests, SMC routing and last-zone tracking.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{PeriphId, ZoneId, MU_B};

pub type SmcId = u64;

/// Ids below this bound are handled by the monitor itself.
pub const MONITOR_SERVICE_IDS: Range<SmcId> = 0..64;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ZoneManifest {
    pub zone_id: ZoneId,
    pub mem_size: u64,
    /// Half-open range of SMC ids routed to this zone.
    pub smc_range: Range<SmcId>,
    /// Zones always share the single SHARED region with the normal world.
    #[serde(default = "default_true")]
    pub shared_binding: bool,
    #[serde(default)]
    pub peripheral_whitelist: BTreeSet<PeriphId>,
}

fn default_true() -> bool {
    true
}

impl ZoneManifest {
    pub fn new(zone_id: ZoneId, mem_size: u64, smc_range: Range<SmcId>) -> Self {
        ZoneManifest {
            zone_id,
            mem_size,
            smc_range,
            shared_binding: true,
            peripheral_whitelist: BTreeSet::new(),
        }
    }

    pub fn with_whitelist(mut self, periphs: impl IntoIterator<Item = PeriphId>) -> Self {
        self.peripheral_whitelist.extend(periphs);
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ZoneError {
    #[error("SMC range of zone {new} overlaps zone {existing}")]
    SmcRangeOverlap { new: u16, existing: u16 },
    #[error("zone id {0} already registered")]
    DuplicateZoneId(u16),
    #[error("zones can only be registered before the normal world starts")]
    LateRegistration,
    #[error("zone {0} has an empty SMC range")]
    EmptySmcRange(u16),
    #[error("zone {zone} SMC range overlaps the monitor service ids")]
    ReservedSmcRange { zone: u16 },
    #[error("zone {zone} whitelists undeclared or reserved peripheral {periph}")]
    BadWhitelist { zone: u16, periph: u16 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Zone(ZoneId),
    MonitorService,
    Unknown,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ZoneRegistry {
    zones: BTreeMap<ZoneId, ZoneManifest>,
    last_zone: Option<ZoneId>,
    frozen: bool,
    peripheral_count: u16,
}

impl ZoneRegistry {
    pub fn new(peripheral_count: u16) -> Self {
        ZoneRegistry { peripheral_count, ..Default::default() }
    }

    pub fn register(&mut self, manifest: ZoneManifest) -> Result<(), ZoneError> {
        if self.frozen {
            return Err(ZoneError::LateRegistration);
        }
        let id = manifest.zone_id.0;
        if self.zones.contains_key(&manifest.zone_id) {
            return Err(ZoneError::DuplicateZoneId(id));
        }
        if manifest.smc_range.is_empty() {
            return Err(ZoneError::EmptySmcRange(id));
        }
        if manifest.smc_range.start < MONITOR_SERVICE_IDS.end {
            return Err(ZoneError::ReservedSmcRange { zone: id });
        }
        for p in &manifest.peripheral_whitelist {
            if p.0 == 0 || p.0 > self.peripheral_count || *p == MU_B {
                return Err(ZoneError::BadWhitelist { zone: id, periph: p.0 });
            }
        }
        for existing in self.zones.values() {
            let a = &existing.smc_range;
            let b = &manifest.smc_range;
            if a.start < b.end && b.start < a.end {
                return Err(ZoneError::SmcRangeOverlap { new: id, existing: existing.zone_id.0 });
            }
        }
        self.zones.insert(manifest.zone_id, manifest);
        Ok(())
    }

    /// Closes registration. Called when the first untrusted step runs.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn route(&self, smc_id: SmcId) -> Route {
        if MONITOR_SERVICE_IDS.contains(&smc_id) {
            return Route::MonitorService;
        }
        self.zones
            .values()
            .find(|m| m.smc_range.contains(&smc_id))
            .map_or(Route::Unknown, |m| Route::Zone(m.zone_id))
    }

    pub fn get(&self, zone: ZoneId) -> Option<&ZoneManifest> {
        self.zones.get(&zone)
    }

    pub fn manifests(&self) -> impl Iterator<Item = &ZoneManifest> {
        self.zones.values()
    }

    pub fn whitelist(&self, zone: ZoneId) -> BTreeSet<PeriphId> {
        self.zones.get(&zone).map(|m| m.peripheral_whitelist.clone()).unwrap_or_default()
    }

    pub fn last_zone(&self) -> Option<ZoneId> {
        self.last_zone
    }

    pub fn record_entry(&mut self, zone: ZoneId) {
        self.last_zone = Some(zone);
    }

    /// TLB maintenance is required exactly when the target differs from the
    /// most recently entered zone.
    pub fn needs_tlbi(&self, target: ZoneId) -> bool {
        self.last_zone != Some(target)
    }
}

//! Platform partition controller: security domains, per-resource
//! permissions, bus-master bindings and self-protection.
//!
//! The controller cannot tell cores apart. Everything the application
//! cluster issues arrives under [`BusMasterId::CLUSTER`], so every check
//! here is per bus master, never per core.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{
    reference_permission, AccessContext, AccessKind, MemoryLayout, Permission, PeriphId, RegionKind,
    ZoneId, MU_A, MU_B,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusMasterId(pub u8);

impl BusMasterId {
    /// The application processor cluster.
    pub const CLUSTER: BusMasterId = BusMasterId(0);
    /// The auxiliary control unit running the gatekeeper.
    pub const ACU: BusMasterId = BusMasterId(1);
}

impl fmt::Display for BusMasterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MID_{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DomainId(pub u8);

impl DomainId {
    pub const CLUSTER: DomainId = DomainId(0);
    pub const ACU: DomainId = DomainId(1);
    pub const OTHER_MASTERS: DomainId = DomainId(2);
}

pub const DEFAULT_MAX_DOMAINS: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Allow,
    Deny,
}

impl Verdict {
    pub fn is_allow(self) -> bool {
        self == Verdict::Allow
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ConfigEdit {
    SetPerm { did: DomainId, region: RegionKind, perm: Permission },
    Bind { mid: BusMasterId, did: DomainId },
    Unbind { mid: BusMasterId, did: DomainId },
    SetLock { locked: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOutcome {
    Applied,
    /// The requester may not write the controller's registers.
    Denied,
    /// Well-formed bus write whose content the controller rejects.
    Invalid,
}

impl EditOutcome {
    pub fn applied(self) -> bool {
        self == EditOutcome::Applied
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PpcError {
    #[error("partition controller already initialised")]
    DoubleInit,
    #[error("bus master {0} is not bound to any domain")]
    UnknownMaster(BusMasterId),
    #[error("partition controller used before boot initialisation")]
    NotInitialized,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct PpcConfig {
    pub max_domains: u8,
    /// Create a domain for bus masters other than cluster and ACU with
    /// permanent access to REE memory and peripherals. Excluded from every
    /// security claim.
    pub other_masters_domain: bool,
    pub other_masters: Vec<BusMasterId>,
}

impl Default for PpcConfig {
    fn default() -> Self {
        PpcConfig { max_domains: DEFAULT_MAX_DOMAINS, other_masters_domain: false, other_masters: vec![] }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PpcState {
    bindings: BTreeMap<BusMasterId, BTreeSet<DomainId>>,
    resource_perms: BTreeMap<(DomainId, RegionKind), Permission>,
    locked: bool,
    max_domains: u8,
    initialized: bool,
}

impl PpcState {
    /// Controller straight out of reset: no domains, nothing bound.
    pub fn new(cfg: &PpcConfig) -> Self {
        PpcState {
            bindings: BTreeMap::new(),
            resource_perms: BTreeMap::new(),
            locked: false,
            max_domains: cfg.max_domains,
            initialized: false,
        }
    }

    /// Boot-time configuration: the cluster domain gets the monitor row, the
    /// ACU domain owns the controller registers, the gatekeeper memory and
    /// the ACU side of the message unit. Leaves the controller locked.
    pub fn boot_init(&mut self, layout: &MemoryLayout, cfg: &PpcConfig) -> Result<(), PpcError> {
        if self.initialized {
            return Err(PpcError::DoubleInit);
        }
        let none = BTreeSet::new();
        for kind in layout.kinds() {
            let perm = reference_permission(&AccessContext::monitor(), kind, &none);
            self.resource_perms.insert((DomainId::CLUSTER, kind), perm);
        }
        for kind in [RegionKind::PpcMmio, RegionKind::Gatekeeper, RegionKind::Peripheral(MU_B)] {
            self.resource_perms.insert((DomainId::ACU, kind), Permission::RW);
        }
        self.bindings.entry(BusMasterId::CLUSTER).or_default().insert(DomainId::CLUSTER);
        self.bindings.entry(BusMasterId::ACU).or_default().insert(DomainId::ACU);
        if cfg.other_masters_domain && self.max_domains > DomainId::OTHER_MASTERS.0 {
            for kind in layout.kinds() {
                let perm = match kind {
                    RegionKind::Ree | RegionKind::Shared => Permission::RW,
                    RegionKind::Peripheral(p) if p != MU_A && p != MU_B => Permission::RW,
                    _ => Permission::NA,
                };
                self.resource_perms.insert((DomainId::OTHER_MASTERS, kind), perm);
            }
            for mid in &cfg.other_masters {
                self.bindings.entry(*mid).or_default().insert(DomainId::OTHER_MASTERS);
            }
        }
        self.locked = true;
        self.initialized = true;
        Ok(())
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn is_locked(&self) -> bool {
        self.locked
    }

    pub fn perm(&self, did: DomainId, region: RegionKind) -> Permission {
        self.resource_perms.get(&(did, region)).copied().unwrap_or(Permission::NA)
    }

    pub fn domains_of(&self, mid: BusMasterId) -> Option<&BTreeSet<DomainId>> {
        self.bindings.get(&mid).filter(|d| !d.is_empty())
    }

    /// True while the cluster domain holds write access to the controller.
    pub fn cluster_window_open(&self) -> bool {
        self.perm(DomainId::CLUSTER, RegionKind::PpcMmio) == Permission::RW
    }

    /// Allow iff some domain bound to `mid` grants at least `access`.
    pub fn check(&self, mid: BusMasterId, region: RegionKind, access: AccessKind) -> Result<Verdict, PpcError> {
        if !self.initialized {
            return Err(PpcError::NotInitialized);
        }
        let domains = self.domains_of(mid).ok_or(PpcError::UnknownMaster(mid))?;
        let allowed = domains.iter().any(|d| self.perm(*d, region).allows(access));
        Ok(if allowed { Verdict::Allow } else { Verdict::Deny })
    }

    /// A bus write to the controller's registers. Denied writes leave the
    /// state untouched; the caller records the outcome in the trace.
    pub fn write_config(&mut self, requester: BusMasterId, edit: ConfigEdit) -> EditOutcome {
        let may_write = matches!(self.check(requester, RegionKind::PpcMmio, AccessKind::Write), Ok(Verdict::Allow))
            && (!self.locked || requester == BusMasterId::ACU);
        if !may_write {
            return EditOutcome::Denied;
        }
        if !self.edit_is_valid(&edit) {
            return EditOutcome::Invalid;
        }
        match edit {
            ConfigEdit::SetPerm { did, region, perm } => {
                self.resource_perms.insert((did, region), perm);
            }
            ConfigEdit::Bind { mid, did } => {
                self.bindings.entry(mid).or_default().insert(did);
            }
            ConfigEdit::Unbind { mid, did } => {
                if let Some(set) = self.bindings.get_mut(&mid) {
                    set.remove(&did);
                }
            }
            ConfigEdit::SetLock { locked } => {
                self.locked = locked;
                if locked {
                    self.resource_perms.insert((DomainId::CLUSTER, RegionKind::PpcMmio), Permission::NA);
                }
            }
        }
        EditOutcome::Applied
    }

    /// Edits that would break the controller's own invariants are refused:
    /// out-of-range domains, stripping the ACU of its domain or its
    /// privileges, or granting the cluster controller access while locked.
    fn edit_is_valid(&self, edit: &ConfigEdit) -> bool {
        let in_range = |d: DomainId| d.0 < self.max_domains;
        match *edit {
            ConfigEdit::SetPerm { did, region, perm } => {
                if !in_range(did) {
                    return false;
                }
                if did == DomainId::ACU
                    && matches!(region, RegionKind::PpcMmio | RegionKind::Gatekeeper)
                    && perm != Permission::RW
                {
                    return false;
                }
                !(self.locked && did == DomainId::CLUSTER && region == RegionKind::PpcMmio && perm != Permission::NA)
            }
            ConfigEdit::Bind { did, .. } => in_range(did),
            ConfigEdit::Unbind { mid, did } => in_range(did) && !(mid == BusMasterId::ACU && did == DomainId::ACU),
            ConfigEdit::SetLock { .. } => true,
        }
    }

    /// Edits that program the cluster domain to `row`. The controller's own
    /// registers are left to the gatekeeper.
    pub fn row_edits(layout: &MemoryLayout, ctx: &AccessContext, whitelist: &BTreeSet<PeriphId>) -> Vec<ConfigEdit> {
        layout
            .kinds()
            .filter(|k| *k != RegionKind::PpcMmio)
            .map(|region| ConfigEdit::SetPerm {
                did: DomainId::CLUSTER,
                region,
                perm: reference_permission(ctx, region, whitelist),
            })
            .collect()
    }

    /// Programs the cluster domain with the zone row. Returns the outcome
    /// of every register write in order.
    pub fn apply_zone_row(
        &mut self,
        requester: BusMasterId,
        zone: ZoneId,
        whitelist: &BTreeSet<PeriphId>,
        layout: &MemoryLayout,
    ) -> Vec<(ConfigEdit, EditOutcome)> {
        let ctx = AccessContext::zone(zone, crate::layout::ExceptionLevel::El1);
        Self::row_edits(layout, &ctx, whitelist)
            .into_iter()
            .map(|e| (e, self.write_config(requester, e)))
            .collect()
    }

    pub fn apply_monitor_row(
        &mut self,
        requester: BusMasterId,
        layout: &MemoryLayout,
    ) -> Vec<(ConfigEdit, EditOutcome)> {
        Self::row_edits(layout, &AccessContext::monitor(), &BTreeSet::new())
            .into_iter()
            .map(|e| (e, self.write_config(requester, e)))
            .collect()
    }

    /// Cluster-domain permissions for every region, excluding the
    /// controller registers.
    pub fn cluster_row(&self, layout: &MemoryLayout) -> BTreeMap<RegionKind, Permission> {
        layout
            .kinds()
            .filter(|k| *k != RegionKind::PpcMmio)
            .map(|k| (k, self.perm(DomainId::CLUSTER, k)))
            .collect()
    }
}

//! Cores, NS-tagged caches and the shared TLB of the application cluster.
//!
//! The cache hierarchy is exclusive: a `(line, ns)` pair lives in at most
//! one place at a time, either some core's L1 or the shared L2. Lookups go
//! own L1, then L2, then the other cores' L1s when SMP coherency is on.
//! Memory accesses themselves are resolved in [`crate::machine`], where the
//! bus, TZASC and PPC are reachable.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::layout::{ExceptionLevel, PhysAddr, World, PAGE_SIZE};
use crate::monitor::{Op, Phase, ProtoOp};
use crate::layout::ZoneId;

pub const LINE_SIZE: u64 = 16;

pub fn line_of(addr: PhysAddr) -> PhysAddr {
    addr & !(LINE_SIZE - 1)
}

pub fn page_of(addr: u64) -> u64 {
    addr & !(PAGE_SIZE - 1)
}

/// NS bit: 0 secure, 1 non-secure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ns(pub u8);

impl Ns {
    pub const SECURE: Ns = Ns(0);
    pub const NON_SECURE: Ns = Ns(1);

    pub fn is_secure(self) -> bool {
        self.0 == 0
    }
}

/// One S.EL1 page-table entry. The trusted OS may create any entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MappingEntry {
    pub va: u64,
    pub pa: PhysAddr,
    pub ns: Ns,
    pub writable: bool,
}

impl MappingEntry {
    pub fn page(va: u64, pa: PhysAddr, ns: Ns, writable: bool) -> Self {
        MappingEntry { va: page_of(va), pa: page_of(pa), ns, writable }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheLine {
    pub pa: PhysAddr,
    pub ns: Ns,
    pub data: u64,
    pub dirty: bool,
}

/// Fixed-capacity cache with FIFO replacement.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Cache {
    capacity: usize,
    lines: VecDeque<CacheLine>,
}

impl Cache {
    pub fn new(capacity: usize) -> Self {
        Cache { capacity, lines: VecDeque::with_capacity(capacity) }
    }

    pub fn find(&self, pa: PhysAddr, ns: Ns) -> Option<&CacheLine> {
        self.lines.iter().find(|l| l.pa == pa && l.ns == ns)
    }

    pub fn find_mut(&mut self, pa: PhysAddr, ns: Ns) -> Option<&mut CacheLine> {
        self.lines.iter_mut().find(|l| l.pa == pa && l.ns == ns)
    }

    /// Inserts a line, replacing any line with the same tag. Returns the
    /// evicted victim when the cache was full.
    pub fn insert(&mut self, line: CacheLine) -> Option<CacheLine> {
        if let Some(slot) = self.find_mut(line.pa, line.ns) {
            *slot = line;
            return None;
        }
        let victim = if self.lines.len() >= self.capacity { self.lines.pop_front() } else { None };
        if self.capacity > 0 {
            self.lines.push_back(line);
        }
        victim
    }

    /// Removes and returns every line.
    pub fn drain(&mut self) -> Vec<CacheLine> {
        self.lines.drain(..).collect()
    }

    /// Discards lines matching `pred` without writing them back.
    pub fn invalidate_where(&mut self, mut pred: impl FnMut(&CacheLine) -> bool) -> usize {
        let before = self.lines.len();
        self.lines.retain(|l| !pred(l));
        before - self.lines.len()
    }

    pub fn lines(&self) -> impl Iterator<Item = &CacheLine> {
        self.lines.iter()
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

/// Translation regime a TLB entry belongs to. The regime is architectural;
/// the owning zone is not.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    El3,
    SecureEl1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TlbEntry {
    pub regime: Regime,
    pub va_page: u64,
    pub pa_page: PhysAddr,
    pub ns: Ns,
    pub writable: bool,
}

/// Cluster-shared TLB with LRU replacement. Entries carry a regime but
/// never a zone id.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Tlb {
    capacity: usize,
    // least recently used first
    entries: VecDeque<TlbEntry>,
}

impl Tlb {
    pub fn new(capacity: usize) -> Self {
        Tlb { capacity, entries: VecDeque::with_capacity(capacity) }
    }

    pub fn lookup(&mut self, regime: Regime, va: u64) -> Option<TlbEntry> {
        let page = page_of(va);
        let idx = self.entries.iter().position(|e| e.regime == regime && e.va_page == page)?;
        let e = self.entries.remove(idx)?;
        self.entries.push_back(e);
        Some(e)
    }

    pub fn fill(&mut self, entry: TlbEntry) {
        if let Some(idx) =
            self.entries.iter().position(|e| e.regime == entry.regime && e.va_page == entry.va_page)
        {
            self.entries.remove(idx);
        }
        if self.entries.len() >= self.capacity {
            self.entries.pop_front();
        }
        if self.capacity > 0 {
            self.entries.push_back(entry);
        }
    }

    /// Drops every S.EL1 entry. EL3 entries are untouched.
    pub fn invalidate_s1(&mut self) -> usize {
        let before = self.entries.len();
        self.entries.retain(|e| e.regime != Regime::SecureEl1);
        before - self.entries.len()
    }

    pub fn s1_entries(&self) -> impl Iterator<Item = &TlbEntry> {
        self.entries.iter().filter(|e| e.regime == Regime::SecureEl1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub cores: usize,
    pub l1_lines: usize,
    pub l2_lines: usize,
    pub tlb_entries: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { cores: 4, l1_lines: 4, l2_lines: 16, tlb_entries: 4 }
    }
}

/// Why a core stopped running its program.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoreStatus {
    Running,
    Finished,
    Crashed,
    Hung,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CoreState {
    pub id: usize,
    pub el: ExceptionLevel,
    pub world: World,
    pub el3_mmu_on: bool,
    /// EL3-only scratch register holding the gatekeeper token.
    token_reg: u64,
    pub s1_mappings: Vec<MappingEntry>,
    pub l1: Cache,
    pub halted: bool,
    pub halt_pending: bool,
    pub status: CoreStatus,
    pub phase: Phase,
    /// Zone whose trusted OS this core is running, if any.
    pub in_zone: Option<ZoneId>,
    pub program: VecDeque<Op>,
    /// Value of the last read, for programs that chain on results.
    pub last_value: Option<u64>,
}

/// Raised when a non-EL3 context touches the token register.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenTrap;

impl CoreState {
    pub fn new(id: usize, l1_lines: usize) -> Self {
        CoreState {
            id,
            el: ExceptionLevel::El1,
            world: World::Normal,
            el3_mmu_on: true,
            token_reg: 0,
            s1_mappings: Vec::new(),
            l1: Cache::new(l1_lines),
            halted: false,
            halt_pending: false,
            status: CoreStatus::Running,
            phase: Phase::Idle,
            in_zone: None,
            program: VecDeque::new(),
            last_value: None,
        }
    }

    pub fn read_token_reg(&self) -> Result<u64, TokenTrap> {
        if self.el == ExceptionLevel::El3 {
            Ok(self.token_reg)
        } else {
            Err(TokenTrap)
        }
    }

    pub fn write_token_reg(&mut self, value: u64) -> Result<(), TokenTrap> {
        if self.el == ExceptionLevel::El3 {
            self.token_reg = value;
            Ok(())
        } else {
            Err(TokenTrap)
        }
    }

    pub fn is_live(&self) -> bool {
        self.status == CoreStatus::Running
    }

    /// Finished programs, sleeping cores and cores parked in the trampoline
    /// wake loop issue no accesses.
    pub fn is_quiescent(&self) -> bool {
        !self.is_live() || self.halted || self.is_parked()
    }

    fn is_parked(&self) -> bool {
        matches!(self.program.front(), Some(Op::Sleep | Op::Proto(ProtoOp::WakeWait)) | None)
    }

    pub fn set_el3(&mut self) {
        self.el = ExceptionLevel::El3;
        self.world = World::Secure;
    }

    pub fn set_secure_el1(&mut self) {
        self.el = ExceptionLevel::El1;
        self.world = World::Secure;
    }

    pub fn set_normal_el1(&mut self) {
        self.el = ExceptionLevel::El1;
        self.world = World::Normal;
    }

    pub fn lookup_mapping(&self, va: u64) -> Option<MappingEntry> {
        let page = page_of(va);
        self.s1_mappings.iter().rev().find(|m| m.va == page).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ClusterState {
    pub cores: Vec<CoreState>,
    pub l2: Cache,
    pub tlb: Tlb,
    pub coherency_on: bool,
}

impl ClusterState {
    pub fn new(cfg: &ClusterConfig) -> Self {
        ClusterState {
            cores: (0..cfg.cores).map(|i| CoreState::new(i, cfg.l1_lines)).collect(),
            l2: Cache::new(cfg.l2_lines),
            tlb: Tlb::new(cfg.tlb_entries),
            coherency_on: true,
        }
    }

    /// Where a cached copy of `(pa, ns)` is visible to `core`.
    pub fn locate(&self, core: usize, pa: PhysAddr, ns: Ns) -> Option<CacheSlot> {
        let pa = line_of(pa);
        if self.cores[core].l1.find(pa, ns).is_some() {
            return Some(CacheSlot::L1(core));
        }
        if self.l2.find(pa, ns).is_some() {
            return Some(CacheSlot::L2);
        }
        if self.coherency_on {
            for other in self.cores.iter().filter(|c| c.id != core) {
                if other.l1.find(pa, ns).is_some() {
                    return Some(CacheSlot::L1(other.id));
                }
            }
        }
        None
    }

    pub fn slot_mut(&mut self, slot: CacheSlot, pa: PhysAddr, ns: Ns) -> Option<&mut CacheLine> {
        let pa = line_of(pa);
        match slot {
            CacheSlot::L1(c) => self.cores[c].l1.find_mut(pa, ns),
            CacheSlot::L2 => self.l2.find_mut(pa, ns),
        }
    }

    /// Every cached line anywhere in the cluster.
    pub fn all_lines(&self) -> impl Iterator<Item = &CacheLine> {
        self.cores.iter().flat_map(|c| c.l1.lines()).chain(self.l2.lines())
    }

    pub fn halt_others(&mut self, except: usize) -> Vec<usize> {
        let mut signalled = Vec::new();
        for c in self.cores.iter_mut().filter(|c| c.id != except) {
            if c.is_live() && !c.halted && !c.is_parked() {
                c.halt_pending = true;
                signalled.push(c.id);
            }
        }
        signalled
    }

    pub fn resume_others(&mut self, except: usize) -> Vec<usize> {
        let mut resumed = Vec::new();
        for c in self.cores.iter_mut().filter(|c| c.id != except) {
            if c.halted || c.halt_pending {
                c.halted = false;
                c.halt_pending = false;
                resumed.push(c.id);
            }
        }
        resumed
    }

    /// True once every other core is parked, asleep or done.
    pub fn others_quiescent(&self, except: usize) -> bool {
        self.cores.iter().filter(|c| c.id != except).all(|c| !c.halt_pending && c.is_quiescent())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheSlot {
    L1(usize),
    L2,
}

//! The ACU-resident reference monitor: boot-time token generation,
//! custody of the PPC lock, and authenticated lock/unlock handling over the
//! message unit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ppc::{BusMasterId, ConfigEdit, DomainId, EditOutcome, PpcState};
use crate::layout::{Permission, RegionKind};

pub const DEFAULT_TOKEN_BITS: u32 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MqChannel {
    /// Processor to ACU. Only the cluster can write it.
    #[serde(rename = "MU_A->B")]
    AToB,
    /// ACU to processor. Only the ACU can write it.
    #[serde(rename = "MU_B->A")]
    BToA,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MqKind {
    UnlockPpc,
    LockPpc,
    Ack,
    Nack,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MqMessage {
    pub channel: MqChannel,
    pub kind: MqKind,
    pub token_claim: u64,
}

impl MqMessage {
    pub fn request(kind: MqKind, token_claim: u64) -> Self {
        MqMessage { channel: MqChannel::AToB, kind, token_claim }
    }

    /// Replies never carry a token.
    pub fn reply(kind: MqKind) -> Self {
        MqMessage { channel: MqChannel::BToA, kind, token_claim: 0 }
    }
}

/// Single-slot mailbox in each direction.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Mailbox {
    pub a_to_b: Option<MqMessage>,
    pub b_to_a: Option<MqMessage>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatekeeperError {
    #[error("gatekeeper must boot before any untrusted code runs")]
    BootOrderViolation,
    #[error("gatekeeper already booted")]
    AlreadyBooted,
    #[error("token width must be between 1 and 64 bits, got {0}")]
    BadTokenWidth(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GatekeeperState {
    token: u64,
    token_bits: u32,
    booted: bool,
    auth_failures: u64,
    /// Test hook: accept any token claim.
    skip_token_check: bool,
}

impl GatekeeperState {
    pub fn new(token_bits: u32) -> Result<Self, GatekeeperError> {
        if token_bits == 0 || token_bits > 64 {
            return Err(GatekeeperError::BadTokenWidth(token_bits));
        }
        Ok(GatekeeperState { token: 0, token_bits, booted: false, auth_failures: 0, skip_token_check: false })
    }

    pub fn with_token_check(mut self, enabled: bool) -> Self {
        self.skip_token_check = !enabled;
        self
    }

    pub fn token_mask(&self) -> u64 {
        if self.token_bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.token_bits) - 1
        }
    }

    /// Draws the token from a seeded generator. The caller stores it in
    /// gatekeeper memory and hands it to EL3.
    pub fn boot(&mut self, rng_seed: u64) -> Result<u64, GatekeeperError> {
        if self.booted {
            return Err(GatekeeperError::AlreadyBooted);
        }
        let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
        self.token = rng.gen::<u64>() & self.token_mask();
        self.booted = true;
        Ok(self.token)
    }

    pub fn is_booted(&self) -> bool {
        self.booted
    }

    pub fn token_bits(&self) -> u32 {
        self.token_bits
    }

    pub fn auth_failures(&self) -> u64 {
        self.auth_failures
    }

    pub(crate) fn token(&self) -> u64 {
        self.token
    }

    fn authentic(&self, claim: u64) -> bool {
        self.skip_token_check || claim == self.token
    }

    /// Serves one request. UNLOCK temporarily grants the cluster domain
    /// write access to the controller; LOCK takes it away again. Requests
    /// with the wrong token are refused and counted.
    pub fn handle(&mut self, ppc: &mut PpcState, msg: MqMessage) -> (MqMessage, Vec<(ConfigEdit, EditOutcome)>) {
        let mut edits = Vec::new();
        if msg.channel != MqChannel::AToB || !self.booted {
            return (MqMessage::reply(MqKind::Nack), edits);
        }
        let plan: &[ConfigEdit] = match msg.kind {
            MqKind::UnlockPpc => &[
                ConfigEdit::SetLock { locked: false },
                ConfigEdit::SetPerm { did: DomainId::CLUSTER, region: RegionKind::PpcMmio, perm: Permission::RW },
            ],
            MqKind::LockPpc => &[ConfigEdit::SetLock { locked: true }],
            MqKind::Ack | MqKind::Nack => return (MqMessage::reply(MqKind::Nack), edits),
        };
        if !self.authentic(msg.token_claim) {
            self.auth_failures += 1;
            return (MqMessage::reply(MqKind::Nack), edits);
        }
        for edit in plan {
            edits.push((*edit, ppc.write_config(BusMasterId::ACU, *edit)));
        }
        (MqMessage::reply(MqKind::Ack), edits)
    }
}

/// Firmware components measured by secure boot.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FirmwareImage {
    pub trampoline: Vec<u64>,
    pub monitor: Vec<u64>,
    pub gatekeeper: Vec<u64>,
}

/// Digests of the pristine firmware, kept in boot ROM.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BootManifest {
    pub trampoline: [u8; 32],
    pub monitor: [u8; 32],
    pub gatekeeper: [u8; 32],
}

pub fn digest_words(words: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    for w in words {
        h.update(w.to_le_bytes());
    }
    h.finalize().into()
}

impl FirmwareImage {
    /// Trampoline code is one word per cache line: vector, entry path,
    /// exit path, wake path.
    pub fn reference() -> Self {
        FirmwareImage {
            trampoline: (0..4).map(|i| 0x7A4D_0000_0000_0000 | i).collect(),
            monitor: (0..4).map(|i| 0x4D4F_0000_0000_0000 | i).collect(),
            gatekeeper: (0..4).map(|i| 0x474B_0000_0000_0000 | i).collect(),
        }
    }

    pub fn manifest(&self) -> BootManifest {
        BootManifest {
            trampoline: digest_words(&self.trampoline),
            monitor: digest_words(&self.monitor),
            gatekeeper: digest_words(&self.gatekeeper),
        }
    }

    /// Compares every component against the ROM manifest and names the
    /// first one that does not match.
    pub fn verify(&self, manifest: &BootManifest) -> Result<(), &'static str> {
        if digest_words(&self.trampoline) != manifest.trampoline {
            return Err("trampoline");
        }
        if digest_words(&self.monitor) != manifest.monitor {
            return Err("monitor");
        }
        if digest_words(&self.gatekeeper) != manifest.gatekeeper {
            return Err("gatekeeper");
        }
        Ok(())
    }
}

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::config::Tick;
use crate::hash::{Canonical, DecodeError, Decoder, Digest, Encoder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelId(pub u32);

impl ChannelId {
    /// Every ledger has this channel and every node is a member of it.
    pub const DEFAULT: ChannelId = ChannelId(0);
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ch{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Validator,
    Governance,
    Observer,
}

/// How a validator casts its votes. Anything other than `Honest` is a fault
/// model used by scenarios and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoteBehavior {
    #[default]
    Honest,
    RejectAll,
    ApproveAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PayloadKind {
    ContractInstall,
    Invoke,
    Data,
    Control,
    Governance,
}

impl PayloadKind {
    fn tag(self) -> u8 {
        match self {
            PayloadKind::ContractInstall => 1,
            PayloadKind::Invoke => 2,
            PayloadKind::Data => 3,
            PayloadKind::Control => 4,
            PayloadKind::Governance => 5,
        }
    }

    fn from_tag(tag: u8, pos: usize) -> Result<Self, DecodeError> {
        Ok(match tag {
            1 => PayloadKind::ContractInstall,
            2 => PayloadKind::Invoke,
            3 => PayloadKind::Data,
            4 => PayloadKind::Control,
            5 => PayloadKind::Governance,
            _ => return Err(DecodeError::BadTag { tag, pos }),
        })
    }
}

/// A typed record. `tag` names the record type within its kind (for example
/// `"blacklist"` for a governance payload); `body` is canonical bytes owned by
/// the layer that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payload {
    pub kind: PayloadKind,
    pub tag: String,
    pub body: Vec<u8>,
}

impl Payload {
    pub fn new(kind: PayloadKind, tag: impl Into<String>, body: Vec<u8>) -> Self {
        Self {
            kind,
            tag: tag.into(),
            body,
        }
    }

    pub fn governance(tag: impl Into<String>, body: Vec<u8>) -> Self {
        Self::new(PayloadKind::Governance, tag, body)
    }

    pub fn data(tag: impl Into<String>, body: Vec<u8>) -> Self {
        Self::new(PayloadKind::Data, tag, body)
    }
}

impl Canonical for Payload {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.kind.tag()).str(&self.tag).bytes(&self.body);
    }
}

impl Payload {
    pub(crate) fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let pos = dec.position();
        let kind = PayloadKind::from_tag(dec.u8()?, pos)?;
        Ok(Payload {
            kind,
            tag: dec.string()?,
            body: dec.bytes()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub tx_id: Digest,
    pub payload: Payload,
    pub submitter: NodeId,
    pub channel: ChannelId,
    pub logical_time: Tick,
}

impl Transaction {
    pub fn new(payload: Payload, submitter: NodeId, channel: ChannelId, logical_time: Tick) -> Self {
        let tx_id = Self::compute_id(&payload, submitter, logical_time);
        Self {
            tx_id,
            payload,
            submitter,
            channel,
            logical_time,
        }
    }

    pub fn compute_id(payload: &Payload, submitter: NodeId, logical_time: Tick) -> Digest {
        let mut enc = Encoder::new();
        enc.put(payload).u32(submitter.0).u64(logical_time);
        Digest::of(enc.as_slice())
    }

    pub fn id_is_consistent(&self) -> bool {
        self.tx_id == Self::compute_id(&self.payload, self.submitter, self.logical_time)
    }

    pub(crate) fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Transaction {
            tx_id: dec.digest()?,
            payload: Payload::decode(dec)?,
            submitter: NodeId(dec.u32()?),
            channel: ChannelId(dec.u32()?),
            logical_time: dec.u64()?,
        })
    }
}

impl Canonical for Transaction {
    fn encode(&self, enc: &mut Encoder) {
        enc.digest(&self.tx_id)
            .put(&self.payload)
            .u32(self.submitter.0)
            .u32(self.channel.0)
            .u64(self.logical_time);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub txs: Vec<Transaction>,
    pub commit_votes: BTreeSet<NodeId>,
    pub block_hash: Digest,
}

impl Block {
    pub fn genesis() -> Self {
        Self::seal(0, Digest::ZERO, Vec::new(), BTreeSet::new())
    }

    pub fn seal(
        height: u64,
        prev_hash: Digest,
        txs: Vec<Transaction>,
        commit_votes: BTreeSet<NodeId>,
    ) -> Self {
        let block_hash = Self::compute_hash(height, &prev_hash, &txs);
        Self {
            height,
            prev_hash,
            txs,
            commit_votes,
            block_hash,
        }
    }

    /// `hash(height ‖ prev_hash ‖ tx_list)`; commit votes are not covered.
    pub fn compute_hash(height: u64, prev_hash: &Digest, txs: &[Transaction]) -> Digest {
        let mut enc = Encoder::new();
        enc.u64(height).digest(prev_hash).seq(txs);
        Digest::of(enc.as_slice())
    }

    pub fn hash_is_consistent(&self) -> bool {
        self.block_hash == Self::compute_hash(self.height, &self.prev_hash, &self.txs)
    }

    pub fn decode_canonical(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let height = dec.u64()?;
        let prev_hash = dec.digest()?;
        let n = dec.u32()? as usize;
        let mut txs = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            txs.push(Transaction::decode(&mut dec)?);
        }
        let nv = dec.u32()? as usize;
        let mut commit_votes = BTreeSet::new();
        for _ in 0..nv {
            commit_votes.insert(NodeId(dec.u32()?));
        }
        let block_hash = dec.digest()?;
        dec.finish()?;
        Ok(Block {
            height,
            prev_hash,
            txs,
            commit_votes,
            block_hash,
        })
    }
}

impl Canonical for Block {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.height).digest(&self.prev_hash).seq(&self.txs);
        enc.u32(self.commit_votes.len() as u32);
        for v in &self.commit_votes {
            enc.u32(v.0);
        }
        enc.digest(&self.block_hash);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteRecord {
    pub node: NodeId,
    pub tx_id: Digest,
    pub channel: ChannelId,
    pub verdict: Verdict,
    pub tick: Tick,
    pub round: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    InsufficientQuorum,
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxOutcome {
    Pending,
    Committed { channel: ChannelId, height: u64, tick: Tick },
    Rejected(RejectReason),
}

impl TxOutcome {
    pub fn is_committed(&self) -> bool {
        matches!(self, TxOutcome::Committed { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingReceipt {
    pub tx_id: Digest,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CommitResult {
    pub round: u64,
    pub tick: Tick,
    pub active_validators: usize,
    pub quorum: usize,
    pub committed: Vec<Digest>,
    pub rejected: Vec<(Digest, RejectReason)>,
    pub block_height: Option<u64>,
    /// Tick at which the slowest voter's verdict arrived.
    pub commit_tick: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainVerdict {
    Intact,
    Corrupt { height: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditVerdict {
    Clean,
    Suspect,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReport {
    pub node: NodeId,
    pub tick: Tick,
    pub checks: Vec<(&'static str, bool)>,
    pub verdict: AuditVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JoinResult {
    pub active_validators: usize,
    pub quorum_next: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeaveResult {
    pub active_validators: usize,
    pub quorum_next: usize,
    pub below_threshold: bool,
}

/// Off-ledger notification delivered to governance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GovernanceAlert {
    pub tick: Tick,
    pub kind: String,
    pub detail: String,
}

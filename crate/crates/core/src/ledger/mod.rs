//! Simulated permissioned distributed ledger.
//!
//! Nodes vote on pending transactions in single quorum rounds; committed
//! transactions are sealed into hash-chained blocks per channel. Governance
//! nodes create channels, blacklist colluders and audit replicas. Time is a
//! logical tick supplied by the caller.

mod chain;
mod types;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::ops::Range;

use thiserror::Error;

pub use chain::{export_line, import_line, verify_blocks, ExportError};
pub use types::*;

use crate::config::{LedgerConfig, Tick};
use crate::hash::{Digest, Encoder};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("node {node} is not a member of channel {channel}")]
    NotMember { node: NodeId, channel: ChannelId },
    #[error("node {0} is blacklisted")]
    Blacklisted(NodeId),
    #[error("node {0} is not active")]
    NodeInactive(NodeId),
    #[error("duplicate transaction {0:?}")]
    DuplicateTx(Digest),
    #[error("unknown channel {0}")]
    UnknownChannel(ChannelId),
    #[error("no active validators; pending transactions rejected")]
    NoActiveValidators,
    #[error("no pending transactions on channel {0}")]
    NothingPending(ChannelId),
    #[error("node {0} does not hold the governance role")]
    NotGovernance(NodeId),
    #[error("unknown member {0}")]
    UnknownMember(NodeId),
    #[error("node id {0} already registered")]
    DuplicateId(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no votes recorded in the requested window")]
    EmptyWindow,
    #[error("unknown transaction {0:?}")]
    UnknownTx(Digest),
    #[error("ledger needs at least one governance node")]
    NoGovernance,
}

/// `⌈2n/3⌉`, floored at `min_quorum`.
pub fn quorum_for(active: usize, min_quorum: usize) -> usize {
    (2 * active).div_ceil(3).max(min_quorum)
}

#[derive(Debug, Clone)]
struct NodeState {
    role: Role,
    active: bool,
    blacklisted: bool,
    behavior: VoteBehavior,
    link_delay: Tick,
    clock: Tick,
}

#[derive(Debug, Clone)]
struct Channel {
    members: BTreeSet<NodeId>,
    blocks: Vec<Arc<Block>>,
    pending: Vec<Transaction>,
}

impl Channel {
    fn new(members: BTreeSet<NodeId>) -> Self {
        Self {
            members,
            blocks: alloc::vec![Arc::new(Block::genesis())],
            pending: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TxTally {
    pub pending: u64,
    pub committed: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone)]
pub struct Ledger {
    id: String,
    config: LedgerConfig,
    nodes: BTreeMap<NodeId, NodeState>,
    channels: BTreeMap<ChannelId, Channel>,
    next_channel: u32,
    seen: BTreeSet<Digest>,
    outcomes: BTreeMap<Digest, TxOutcome>,
    tx_index: BTreeMap<Digest, (ChannelId, u64, usize)>,
    /// When each committed transaction became visible to its slowest voter.
    commit_ticks: BTreeMap<Digest, Tick>,
    votes: Vec<VoteRecord>,
    replicas: BTreeMap<NodeId, BTreeMap<ChannelId, Vec<Arc<Block>>>>,
    alerts: Vec<GovernanceAlert>,
    now: Tick,
    round: u64,
}

impl Ledger {
    pub fn new(
        id: impl Into<String>,
        config: LedgerConfig,
        nodes: impl IntoIterator<Item = (NodeId, Role)>,
    ) -> Result<Self, LedgerError> {
        let mut map = BTreeMap::new();
        for (id, role) in nodes {
            let st = NodeState {
                role,
                active: true,
                blacklisted: false,
                behavior: VoteBehavior::Honest,
                link_delay: 0,
                clock: 0,
            };
            if map.insert(id, st).is_some() {
                return Err(LedgerError::DuplicateId(id));
            }
        }
        if !map.values().any(|n| n.role == Role::Governance) {
            return Err(LedgerError::NoGovernance);
        }
        let members: BTreeSet<NodeId> = map.keys().copied().collect();
        let default = Channel::new(members.clone());
        let mut replicas = BTreeMap::new();
        for m in &members {
            let mut per = BTreeMap::new();
            per.insert(ChannelId::DEFAULT, default.blocks.clone());
            replicas.insert(*m, per);
        }
        let mut channels = BTreeMap::new();
        channels.insert(ChannelId::DEFAULT, default);
        Ok(Self {
            id: id.into(),
            config,
            nodes: map,
            channels,
            next_channel: 1,
            seen: BTreeSet::new(),
            outcomes: BTreeMap::new(),
            tx_index: BTreeMap::new(),
            commit_ticks: BTreeMap::new(),
            votes: Vec::new(),
            replicas,
            alerts: Vec::new(),
            now: 0,
            round: 0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    /// Moves the logical clock forward. Earlier ticks are ignored.
    pub fn advance_to(&mut self, tick: Tick) {
        if tick > self.now {
            self.now = tick;
        }
    }

    pub fn set_behavior(&mut self, node: NodeId, behavior: VoteBehavior) -> Result<(), LedgerError> {
        self.node_mut(node)?.behavior = behavior;
        Ok(())
    }

    pub fn set_link_delay(&mut self, node: NodeId, delay: Tick) -> Result<(), LedgerError> {
        self.node_mut(node)?.link_delay = delay;
        Ok(())
    }

    pub fn role(&self, node: NodeId) -> Option<Role> {
        self.nodes.get(&node).map(|n| n.role)
    }

    pub fn is_governance(&self, node: NodeId) -> bool {
        self.role(node) == Some(Role::Governance)
    }

    pub fn is_blacklisted(&self, node: NodeId) -> bool {
        self.nodes.get(&node).is_some_and(|n| n.blacklisted)
    }

    pub fn is_active(&self, node: NodeId) -> bool {
        self.nodes.get(&node).is_some_and(|n| n.active)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn channel_ids(&self) -> impl Iterator<Item = ChannelId> + '_ {
        self.channels.keys().copied()
    }

    pub fn members(&self, channel: ChannelId) -> Result<&BTreeSet<NodeId>, LedgerError> {
        Ok(&self.channel(channel)?.members)
    }

    fn node_mut(&mut self, node: NodeId) -> Result<&mut NodeState, LedgerError> {
        self.nodes.get_mut(&node).ok_or(LedgerError::UnknownNode(node))
    }

    fn channel(&self, channel: ChannelId) -> Result<&Channel, LedgerError> {
        self.channels
            .get(&channel)
            .ok_or(LedgerError::UnknownChannel(channel))
    }

    fn require_governance(&self, node: NodeId) -> Result<(), LedgerError> {
        match self.nodes.get(&node) {
            Some(n) if n.role == Role::Governance => Ok(()),
            _ => Err(LedgerError::NotGovernance(node)),
        }
    }

    /// Active, non-blacklisted validators that are members of `channel`, in id order.
    pub fn active_validators(&self, channel: ChannelId) -> Result<Vec<NodeId>, LedgerError> {
        let ch = self.channel(channel)?;
        Ok(ch
            .members
            .iter()
            .copied()
            .filter(|id| {
                let n = &self.nodes[id];
                n.role == Role::Validator && n.active && !n.blacklisted
            })
            .collect())
    }

    pub fn quorum(&self, channel: ChannelId) -> Result<usize, LedgerError> {
        Ok(quorum_for(
            self.active_validators(channel)?.len(),
            self.config.min_quorum,
        ))
    }

    /// Checks that `node` may submit on `channel` without submitting anything.
    pub fn can_submit(&self, node: NodeId, channel: ChannelId) -> Result<(), LedgerError> {
        let ch = self.channel(channel)?;
        let st = self.nodes.get(&node).ok_or(LedgerError::UnknownNode(node))?;
        if !ch.members.contains(&node) {
            return Err(LedgerError::NotMember { node, channel });
        }
        if st.blacklisted {
            return Err(LedgerError::Blacklisted(node));
        }
        if !st.active {
            return Err(LedgerError::NodeInactive(node));
        }
        Ok(())
    }

    pub fn submit_transaction(&mut self, tx: Transaction) -> Result<PendingReceipt, LedgerError> {
        self.can_submit(tx.submitter, tx.channel)?;
        if !self.seen.insert(tx.tx_id) {
            return Err(LedgerError::DuplicateTx(tx.tx_id));
        }
        let tx_id = tx.tx_id;
        self.outcomes.insert(tx_id, TxOutcome::Pending);
        let ch = self.channels.get_mut(&tx.channel).expect("checked above");
        ch.pending.push(tx);
        Ok(PendingReceipt {
            tx_id,
            position: ch.pending.len() - 1,
        })
    }

    /// Builds a transaction stamped with the current tick and submits it.
    pub fn submit(
        &mut self,
        submitter: NodeId,
        channel: ChannelId,
        payload: Payload,
    ) -> Result<PendingReceipt, LedgerError> {
        let tx = Transaction::new(payload, submitter, channel, self.now);
        self.submit_transaction(tx)
    }

    pub fn pending_len(&self, channel: ChannelId) -> usize {
        self.channels.get(&channel).map_or(0, |c| c.pending.len())
    }

    fn honest_validity(&self, tx: &Transaction) -> bool {
        tx.id_is_consistent() && !self.is_blacklisted(tx.submitter)
    }

    pub fn run_consensus_round(&mut self, channel: ChannelId) -> Result<CommitResult, LedgerError> {
        let validators = self.active_validators(channel)?;
        let pending = {
            let ch = self.channels.get_mut(&channel).expect("validated");
            if ch.pending.is_empty() {
                return Err(LedgerError::NothingPending(channel));
            }
            core::mem::take(&mut ch.pending)
        };
        self.round += 1;
        let round = self.round;
        let now = self.now;
        let quorum = quorum_for(validators.len(), self.config.min_quorum);

        if validators.is_empty() {
            for tx in &pending {
                self.outcomes.insert(
                    tx.tx_id,
                    TxOutcome::Rejected(RejectReason::InsufficientQuorum),
                );
            }
            return Err(LedgerError::NoActiveValidators);
        }

        let mut result = CommitResult {
            round,
            tick: now,
            active_validators: validators.len(),
            quorum,
            commit_tick: now
                + validators
                    .iter()
                    .map(|v| self.nodes[v].link_delay)
                    .max()
                    .unwrap_or(0),
            ..CommitResult::default()
        };
        let mut accepted = Vec::new();
        let mut full_approvers: BTreeSet<NodeId> = validators.iter().copied().collect();
        for tx in pending {
            let valid = self.honest_validity(&tx);
            let mut approvals = 0usize;
            for v in &validators {
                let st = &self.nodes[v];
                let verdict = match st.behavior {
                    VoteBehavior::Honest if valid => Verdict::Approve,
                    VoteBehavior::Honest => Verdict::Reject,
                    VoteBehavior::RejectAll => Verdict::Reject,
                    VoteBehavior::ApproveAll => Verdict::Approve,
                };
                if verdict == Verdict::Approve {
                    approvals += 1;
                } else {
                    full_approvers.remove(v);
                }
                self.votes.push(VoteRecord {
                    node: *v,
                    tx_id: tx.tx_id,
                    channel,
                    verdict,
                    tick: now,
                    round,
                });
            }
            if approvals >= quorum {
                accepted.push(tx);
            } else {
                let reason = if valid {
                    RejectReason::InsufficientQuorum
                } else {
                    RejectReason::Invalid
                };
                self.outcomes.insert(tx.tx_id, TxOutcome::Rejected(reason));
                result.rejected.push((tx.tx_id, reason));
            }
        }
        for v in &validators {
            self.nodes.get_mut(v).expect("validator exists").clock = now;
        }

        if !accepted.is_empty() {
            let ch = self.channels.get_mut(&channel).expect("validated");
            let tip = ch.blocks.last().expect("genesis present");
            let height = tip.height + 1;
            let block = Arc::new(Block::seal(height, tip.block_hash, accepted, full_approvers));
            for (i, tx) in block.txs.iter().enumerate() {
                self.outcomes.insert(
                    tx.tx_id,
                    TxOutcome::Committed {
                        channel,
                        height,
                        tick: now,
                    },
                );
                self.tx_index.insert(tx.tx_id, (channel, height, i));
                self.commit_ticks.insert(tx.tx_id, result.commit_tick);
                result.committed.push(tx.tx_id);
            }
            ch.blocks.push(block.clone());
            for m in &ch.members {
                self.replicas
                    .entry(*m)
                    .or_default()
                    .entry(channel)
                    .or_default()
                    .push(block.clone());
            }
            result.block_height = Some(height);
        }
        Ok(result)
    }

    /// Runs a round on every channel that has pending work, in channel order.
    pub fn run_all_rounds(&mut self) -> Vec<(ChannelId, Result<CommitResult, LedgerError>)> {
        let busy: Vec<ChannelId> = self
            .channels
            .iter()
            .filter(|(_, c)| !c.pending.is_empty())
            .map(|(id, _)| *id)
            .collect();
        busy.into_iter()
            .map(|ch| (ch, self.run_consensus_round(ch)))
            .collect()
    }

    /// Transactions by outcome, over every channel.
    pub fn tally(&self) -> TxTally {
        let mut t = TxTally::default();
        for o in self.outcomes.values() {
            match o {
                TxOutcome::Pending => t.pending += 1,
                TxOutcome::Committed { .. } => t.committed += 1,
                TxOutcome::Rejected(_) => t.rejected += 1,
            }
        }
        t
    }

    pub fn outcome(&self, tx_id: &Digest) -> Option<TxOutcome> {
        self.outcomes.get(tx_id).copied()
    }

    /// Tick at which a committed transaction is visible everywhere: the
    /// round tick plus the slowest voter's link delay.
    pub fn commit_tick(&self, tx_id: &Digest) -> Option<Tick> {
        self.commit_ticks.get(tx_id).copied()
    }

    pub fn verify_chain(&self, channel: ChannelId) -> Result<ChainVerdict, LedgerError> {
        Ok(verify_blocks(&self.channel(channel)?.blocks))
    }

    /// Member-gated read of a channel's blocks.
    pub fn read_blocks(&self, reader: NodeId, channel: ChannelId) -> Result<&[Arc<Block>], LedgerError> {
        let ch = self.channel(channel)?;
        if !ch.members.contains(&reader) {
            return Err(LedgerError::NotMember {
                node: reader,
                channel,
            });
        }
        Ok(&ch.blocks)
    }

    /// Member-gated lookup of one committed transaction.
    pub fn read_tx(&self, reader: NodeId, tx_id: &Digest) -> Result<&Transaction, LedgerError> {
        let (channel, height, idx) = *self
            .tx_index
            .get(tx_id)
            .ok_or(LedgerError::UnknownTx(*tx_id))?;
        let blocks = self.read_blocks(reader, channel)?;
        Ok(&blocks[height as usize].txs[idx])
    }

    /// Unrestricted view used by the simulator for exports and sweeps.
    pub fn blocks(&self, channel: ChannelId) -> Result<&[Arc<Block>], LedgerError> {
        Ok(&self.channel(channel)?.blocks)
    }

    pub fn committed_tx(&self, tx_id: &Digest) -> Option<&Transaction> {
        let (channel, height, idx) = *self.tx_index.get(tx_id)?;
        Some(&self.channels[&channel].blocks[height as usize].txs[idx])
    }

    pub fn head_hash(&self, channel: ChannelId) -> Result<Digest, LedgerError> {
        Ok(self.channel(channel)?.blocks.last().expect("genesis").block_hash)
    }

    pub fn create_channel(
        &mut self,
        creator: NodeId,
        members: impl IntoIterator<Item = NodeId>,
    ) -> Result<ChannelId, LedgerError> {
        self.require_governance(creator)?;
        let mut set = BTreeSet::new();
        set.insert(creator);
        for m in members {
            if !self.nodes.contains_key(&m) {
                return Err(LedgerError::UnknownMember(m));
            }
            set.insert(m);
        }
        let id = ChannelId(self.next_channel);
        self.next_channel += 1;
        let ch = Channel::new(set);
        for m in &ch.members {
            self.replicas
                .entry(*m)
                .or_default()
                .insert(id, ch.blocks.clone());
        }
        self.channels.insert(id, ch);
        Ok(id)
    }

    pub fn node_join(&mut self, node: NodeId, role: Role) -> Result<JoinResult, LedgerError> {
        if self.nodes.contains_key(&node) {
            return Err(LedgerError::DuplicateId(node));
        }
        self.nodes.insert(
            node,
            NodeState {
                role,
                active: true,
                blacklisted: false,
                behavior: VoteBehavior::Honest,
                link_delay: 0,
                clock: self.now,
            },
        );
        let default = self.channels.get_mut(&ChannelId::DEFAULT).expect("default");
        default.members.insert(node);
        let copy = default.blocks.clone();
        self.replicas
            .entry(node)
            .or_default()
            .insert(ChannelId::DEFAULT, copy);
        let active = self.active_validators(ChannelId::DEFAULT)?.len();
        Ok(JoinResult {
            active_validators: active,
            quorum_next: quorum_for(active, self.config.min_quorum),
        })
    }

    pub fn node_leave(&mut self, node: NodeId) -> Result<LeaveResult, LedgerError> {
        let st = self.nodes.get_mut(&node).ok_or(LedgerError::UnknownNode(node))?;
        if !st.active {
            return Err(LedgerError::UnknownNode(node));
        }
        st.active = false;
        let active = self.active_validators(ChannelId::DEFAULT)?.len();
        let below = active < self.config.min_active;
        if below {
            self.alerts.push(GovernanceAlert {
                tick: self.now,
                kind: "below-min-active".to_string(),
                detail: format!("active validators {active} < {}", self.config.min_active),
            });
        }
        Ok(LeaveResult {
            active_validators: active,
            quorum_next: quorum_for(active, self.config.min_quorum),
            below_threshold: below,
        })
    }

    /// Nodes whose rate of rejecting transactions that went on to commit
    /// exceeds `collusion_rate`, over at least `min_votes` such votes cast in
    /// `window`.
    pub fn detect_collusion(
        &self,
        channel: ChannelId,
        window: Range<Tick>,
    ) -> Result<BTreeSet<NodeId>, LedgerError> {
        self.channel(channel)?;
        let mut tallies: BTreeMap<NodeId, (usize, usize)> = BTreeMap::new();
        let mut any = false;
        for v in self
            .votes
            .iter()
            .filter(|v| v.channel == channel && window.contains(&v.tick))
        {
            any = true;
            if !self.outcomes.get(&v.tx_id).is_some_and(|o| o.is_committed()) {
                continue;
            }
            let t = tallies.entry(v.node).or_default();
            t.0 += 1;
            if v.verdict == Verdict::Reject {
                t.1 += 1;
            }
        }
        if !any {
            return Err(LedgerError::EmptyWindow);
        }
        Ok(tallies
            .into_iter()
            .filter(|(_, (n, r))| {
                *n >= self.config.min_votes && (*r as f64) / (*n as f64) > self.config.collusion_rate
            })
            .map(|(id, _)| id)
            .collect())
    }

    /// Excludes `node` from voting and submission and files a governance
    /// transaction on the default channel. That transaction goes through the
    /// normal quorum on the next round.
    pub fn blacklist_node(
        &mut self,
        gov: NodeId,
        node: NodeId,
        reason: &str,
    ) -> Result<PendingReceipt, LedgerError> {
        self.require_governance(gov)?;
        self.node_mut(node)?.blacklisted = true;
        let mut body = Encoder::new();
        body.u32(node.0).str(reason);
        self.submit(
            gov,
            ChannelId::DEFAULT,
            Payload::governance("blacklist", body.finish()),
        )
    }

    pub fn audit_node(&mut self, gov: NodeId, node: NodeId) -> Result<AuditReport, LedgerError> {
        self.require_governance(gov)?;
        let st = self.nodes.get(&node).ok_or(LedgerError::UnknownNode(node))?;

        let mut chain_ok = true;
        let empty = BTreeMap::new();
        let replicas = self.replicas.get(&node).unwrap_or(&empty);
        for (cid, ch) in &self.channels {
            if !ch.members.contains(&node) {
                continue;
            }
            match replicas.get(cid) {
                Some(copy) => {
                    let same_head = copy.last().map(|b| b.block_hash)
                        == ch.blocks.last().map(|b| b.block_hash);
                    if verify_blocks(copy) != ChainVerdict::Intact
                        || copy.len() != ch.blocks.len()
                        || !same_head
                    {
                        chain_ok = false;
                    }
                }
                None => chain_ok = false,
            }
        }

        let mut seen = BTreeSet::new();
        let votes_ok = self.votes.iter().filter(|v| v.node == node).all(|v| {
            let known = matches!(
                self.outcomes.get(&v.tx_id),
                Some(TxOutcome::Committed { .. } | TxOutcome::Rejected(_))
            );
            let member = self
                .channels
                .get(&v.channel)
                .is_some_and(|c| c.members.contains(&node));
            known && member && seen.insert((v.tx_id, v.round))
        });

        let clock_ok = st.clock <= self.now;

        let checks = alloc::vec![
            ("chain-copy", chain_ok),
            ("vote-history", votes_ok),
            ("clock", clock_ok),
        ];
        let verdict = if checks.iter().all(|(_, ok)| *ok) {
            AuditVerdict::Clean
        } else {
            AuditVerdict::Suspect
        };
        let report = AuditReport {
            node,
            tick: self.now,
            checks,
            verdict,
        };
        if verdict == AuditVerdict::Suspect {
            let failed: Vec<&str> = report
                .checks
                .iter()
                .filter(|(_, ok)| !ok)
                .map(|(n, _)| *n)
                .collect();
            let detail = format!("{node} failed {}", failed.join(","));
            self.alerts.push(GovernanceAlert {
                tick: self.now,
                kind: "audit-suspect".to_string(),
                detail: detail.clone(),
            });
            let mut body = Encoder::new();
            body.u32(node.0).str(&detail);
            self.submit(
                gov,
                ChannelId::DEFAULT,
                Payload::governance("audit-suspect", body.finish()),
            )?;
        }
        Ok(report)
    }

    pub fn votes(&self) -> &[VoteRecord] {
        &self.votes
    }

    pub fn alerts(&self) -> &[GovernanceAlert] {
        &self.alerts
    }

    pub fn push_alert(&mut self, kind: &str, detail: String) {
        self.alerts.push(GovernanceAlert {
            tick: self.now,
            kind: kind.to_string(),
            detail,
        });
    }

    /// Fault-injection hooks for tests and scenarios. None of these are
    /// reachable through normal operation.
    pub fn faults(&mut self) -> LedgerFaults<'_> {
        LedgerFaults { ledger: self }
    }
}

pub struct LedgerFaults<'a> {
    ledger: &'a mut Ledger,
}

impl LedgerFaults<'_> {
    /// Flips one byte of a committed transaction's payload body in the
    /// canonical chain, leaving the stored block hash stale. Falls back to
    /// the payload tag when the body is empty.
    pub fn flip_payload_byte(
        &mut self,
        channel: ChannelId,
        height: u64,
        tx_index: usize,
        byte: usize,
    ) -> Result<(), LedgerError> {
        let ch = self
            .ledger
            .channels
            .get_mut(&channel)
            .ok_or(LedgerError::UnknownChannel(channel))?;
        let slot = ch
            .blocks
            .get_mut(height as usize)
            .ok_or(LedgerError::UnknownChannel(channel))?;
        let mut b = (**slot).clone();
        let tx = b
            .txs
            .get_mut(tx_index)
            .ok_or(LedgerError::UnknownChannel(channel))?;
        flip(&mut tx.payload, byte);
        *slot = Arc::new(b);
        Ok(())
    }

    /// Tampers with one node's replica of a block.
    pub fn tamper_replica(
        &mut self,
        node: NodeId,
        channel: ChannelId,
        height: u64,
    ) -> Result<(), LedgerError> {
        let copy = self
            .ledger
            .replicas
            .get_mut(&node)
            .and_then(|r| r.get_mut(&channel))
            .ok_or(LedgerError::UnknownNode(node))?;
        let slot = copy
            .get_mut(height as usize)
            .ok_or(LedgerError::UnknownChannel(channel))?;
        let mut b = (**slot).clone();
        match b.txs.first_mut() {
            Some(tx) => flip(&mut tx.payload, 0),
            None => b.prev_hash.0[0] ^= 0xff,
        }
        *slot = Arc::new(b);
        Ok(())
    }

    pub fn set_clock(&mut self, node: NodeId, tick: Tick) -> Result<(), LedgerError> {
        self.ledger.node_mut(node)?.clock = tick;
        Ok(())
    }

    pub fn inject_vote(&mut self, vote: VoteRecord) {
        self.ledger.votes.push(vote);
    }

    /// Takes a node offline without going through `node_leave`.
    pub fn set_active(&mut self, node: NodeId, active: bool) -> Result<(), LedgerError> {
        self.ledger.node_mut(node)?.active = active;
        Ok(())
    }
}

fn flip(p: &mut Payload, byte: usize) {
    if p.body.is_empty() {
        let mut tag = core::mem::take(&mut p.tag).into_bytes();
        if tag.is_empty() {
            tag.push(b'x');
        } else {
            let i = byte % tag.len();
            tag[i] = if tag[i] == b'x' { b'y' } else { b'x' };
        }
        p.tag = String::from_utf8(tag).unwrap_or_default();
    } else {
        let i = byte % p.body.len();
        p.body[i] ^= 0x01;
    }
}

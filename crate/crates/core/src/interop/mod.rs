//! Cross-ledger record transfer through a notary relay.
//!
//! The notary is a governance identity on both ledgers. A transfer first
//! locks its intent on both sides; once both locks are visible before the
//! deadline, the translated record is written on the destination and a
//! confirmation on the source. Missing the deadline aborts the transfer with
//! compensating unlock records — ledgers are never rolled back.

mod translate;
#[cfg(test)]
mod tests;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use translate::*;

use crate::config::{InteropConfig, Tick};
use crate::hash::{Canonical, DecodeError, Decoder, Digest, Encoder};
use crate::ledger::{ChannelId, Ledger, LedgerError, NodeId, Payload, TxOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InteropError {
    #[error("transaction {0:?} is not committed on the source ledger")]
    UnknownTx(Digest),
    #[error("transaction {0:?} does not carry a record")]
    NotARecord(Digest),
    #[error("no translation for `{record_type}` from v{from} to v{to}")]
    TranslationUnsupported { record_type: String, from: u32, to: u32 },
    #[error("required field `{0}` has no source")]
    FieldLoss(String),
    #[error("transfer {0} missed its deadline and was aborted")]
    Timeout(u64),
    #[error("notary is not registered on ledger `{0}`")]
    NotaryNotRegistered(String),
    #[error("unknown transfer {0}")]
    UnknownTransfer(u64),
    #[error("no transfers between `{0}` and `{1}`")]
    NoHistory(String, String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Proposed,
    Locked,
    CommittedBoth,
    Aborted,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::CommittedBoth | Phase::Aborted)
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Proposed => "proposed",
            Phase::Locked => "locked",
            Phase::CommittedBoth => "committed-both",
            Phase::Aborted => "aborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub ledger_id: String,
    pub channel: ChannelId,
}

/// What the notary writes. Each message carries the transfer id and the
/// pre-translation record hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelayMessage {
    Lock { transfer: u64, hash: Digest },
    Record { transfer: u64, hash: Digest, translated_hash: Digest, record: Record },
    Confirm { transfer: u64, hash: Digest },
    Unlock { transfer: u64, hash: Digest },
}

impl RelayMessage {
    pub fn tag(&self) -> &'static str {
        match self {
            RelayMessage::Lock { .. } => "relay-lock",
            RelayMessage::Record { .. } => "relay-record",
            RelayMessage::Confirm { .. } => "relay-confirm",
            RelayMessage::Unlock { .. } => "relay-unlock",
        }
    }

    pub fn transfer(&self) -> u64 {
        match self {
            RelayMessage::Lock { transfer, .. }
            | RelayMessage::Record { transfer, .. }
            | RelayMessage::Confirm { transfer, .. }
            | RelayMessage::Unlock { transfer, .. } => *transfer,
        }
    }

    pub fn hash(&self) -> Digest {
        match self {
            RelayMessage::Lock { hash, .. }
            | RelayMessage::Record { hash, .. }
            | RelayMessage::Confirm { hash, .. }
            | RelayMessage::Unlock { hash, .. } => *hash,
        }
    }

    /// `attempt` keeps resubmissions distinct.
    pub fn to_payload(&self, attempt: u32) -> Payload {
        let mut enc = Encoder::new();
        enc.u64(self.transfer()).digest(&self.hash());
        if let RelayMessage::Record {
            translated_hash,
            record,
            ..
        } = self
        {
            enc.digest(translated_hash).put(record);
        }
        enc.u32(attempt);
        Payload::governance(self.tag(), enc.finish())
    }

    pub fn from_payload(p: &Payload) -> Option<Self> {
        Self::decode(&p.tag, &p.body).ok().flatten()
    }

    fn decode(tag: &str, body: &[u8]) -> Result<Option<Self>, DecodeError> {
        let mut dec = Decoder::new(body);
        let transfer = dec.u64()?;
        let hash = dec.digest()?;
        let msg = match tag {
            "relay-lock" => RelayMessage::Lock { transfer, hash },
            "relay-confirm" => RelayMessage::Confirm { transfer, hash },
            "relay-unlock" => RelayMessage::Unlock { transfer, hash },
            "relay-record" => RelayMessage::Record {
                transfer,
                hash,
                translated_hash: dec.digest()?,
                record: Record::decode_from(&mut dec)?,
            },
            _ => return Ok(None),
        };
        dec.u32()?;
        dec.finish()?;
        Ok(Some(msg))
    }
}

/// One notary write, resubmitted until it commits.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Slot {
    tx: Option<Digest>,
    attempts: u32,
}

impl Slot {
    fn outcome(&self, ledger: &Ledger) -> Option<TxOutcome> {
        self.tx.and_then(|t| ledger.outcome(&t))
    }

    fn committed(&self, ledger: &Ledger) -> bool {
        self.outcome(ledger).is_some_and(|o| o.is_committed())
    }

    fn pending(&self, ledger: &Ledger) -> bool {
        self.outcome(ledger) == Some(TxOutcome::Pending)
    }

    fn visible(&self, ledger: &Ledger, now: Tick) -> Option<Tick> {
        self.tx
            .and_then(|t| ledger.commit_tick(&t))
            .filter(|c| *c <= now)
    }

    /// Submits `msg` unless a previous attempt is pending or committed.
    fn ensure(&mut self, ledger: &mut Ledger, notary: NodeId, channel: ChannelId, msg: &RelayMessage) {
        let outstanding = self
            .outcome(ledger)
            .is_some_and(|o| !matches!(o, TxOutcome::Rejected(_)));
        if outstanding {
            return;
        }
        // A failed submission (notary offline, say) is simply retried.
        if let Ok(r) = ledger.submit(notary, channel, msg.to_payload(self.attempts)) {
            self.tx = Some(r.tx_id);
        }
        self.attempts += 1;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Leg {
    lock: Slot,
    /// The translated record on the destination, the confirmation on the
    /// source.
    finish: Slot,
    unlock: Slot,
}

impl Leg {
    /// Every lock that made it onto this ledger has been released.
    fn released(&self, ledger: &Ledger) -> bool {
        !(self.lock.committed(ledger) || self.lock.pending(ledger)) || self.unlock.committed(ledger)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayTransfer {
    pub transfer_id: u64,
    pub source: Endpoint,
    pub source_tx: Digest,
    pub destination: Endpoint,
    /// Hash of the record as committed on the source.
    pub record_hash: Digest,
    pub translated_hash: Digest,
    pub phase: Phase,
    pub proposed_at: Tick,
    pub deadline: Tick,
    /// Tick the transfer reached a terminal phase.
    pub ended_at: Option<Tick>,
    /// Visibility ticks of the confirmation (source) and the record
    /// (destination) for committed transfers.
    pub matched_at: Option<(Tick, Tick)>,
    translated: Record,
    src: Leg,
    dst: Leg,
}

impl RelayTransfer {
    /// `Timeout` for aborted transfers.
    pub fn result(&self) -> Result<(), InteropError> {
        match self.phase {
            Phase::Aborted => Err(InteropError::Timeout(self.transfer_id)),
            _ => Ok(()),
        }
    }

    pub fn translated(&self) -> &Record {
        &self.translated
    }

    /// Aborted and every committed lock has its unlock committed.
    pub fn settled(&self, src: &Ledger, dst: &Ledger) -> bool {
        match self.phase {
            Phase::CommittedBoth => true,
            Phase::Aborted => self.src.released(src) && self.dst.released(dst),
            _ => false,
        }
    }

    /// No ledger holds the outcome alone: a committed transfer has its record
    /// and confirmation on both sides and no unlocks; an aborted one has any
    /// record or confirmation it wrote compensated by unlocks on both sides.
    /// Aborted transfers only satisfy this once [`Self::settled`].
    pub fn is_atomic(&self, src: &Ledger, dst: &Ledger) -> bool {
        let (rec, conf) = (self.dst.finish.committed(dst), self.src.finish.committed(src));
        let (su, du) = (self.src.unlock.committed(src), self.dst.unlock.committed(dst));
        match self.phase {
            Phase::CommittedBoth => rec && conf && !su && !du,
            Phase::Aborted => !(rec || conf) || (su && du),
            Phase::Proposed | Phase::Locked => true,
        }
    }

    fn msg_lock(&self) -> RelayMessage {
        RelayMessage::Lock {
            transfer: self.transfer_id,
            hash: self.record_hash,
        }
    }

    fn msg_unlock(&self) -> RelayMessage {
        RelayMessage::Unlock {
            transfer: self.transfer_id,
            hash: self.record_hash,
        }
    }

    fn msg_record(&self) -> RelayMessage {
        RelayMessage::Record {
            transfer: self.transfer_id,
            hash: self.record_hash,
            translated_hash: self.translated_hash,
            record: self.translated.clone(),
        }
    }

    fn msg_confirm(&self) -> RelayMessage {
        RelayMessage::Confirm {
            transfer: self.transfer_id,
            hash: self.record_hash,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayEvent {
    pub tick: Tick,
    pub transfer_id: u64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncStatus {
    pub pair: (String, String),
    /// Visibility ticks of the latest matched transfer on each side.
    pub last_matched: Option<(Tick, Tick)>,
    pub divergence: Tick,
    pub alert: bool,
}

#[derive(Debug, Clone)]
pub struct Relay {
    notary: NodeId,
    table: TranslationTable,
    config: InteropConfig,
    schemas: BTreeMap<String, u32>,
    transfers: Vec<RelayTransfer>,
    events: Vec<RelayEvent>,
}

impl Relay {
    pub fn new(notary: NodeId, table: TranslationTable, config: InteropConfig) -> Self {
        Relay {
            notary,
            table,
            config,
            schemas: BTreeMap::new(),
            transfers: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn notary(&self) -> NodeId {
        self.notary
    }

    pub fn table(&self) -> &TranslationTable {
        &self.table
    }

    /// Registers a ledger and the record schema version it speaks. The
    /// notary must hold the governance role there.
    pub fn register(&mut self, ledger: &Ledger, schema_version: u32) -> Result<(), InteropError> {
        if !ledger.is_governance(self.notary) {
            return Err(InteropError::NotaryNotRegistered(ledger.id().into()));
        }
        self.schemas.insert(ledger.id().into(), schema_version);
        Ok(())
    }

    fn schema(&self, ledger: &Ledger) -> Result<u32, InteropError> {
        self.schemas
            .get(ledger.id())
            .copied()
            .ok_or_else(|| InteropError::NotaryNotRegistered(ledger.id().into()))
    }

    pub fn transfers(&self) -> &[RelayTransfer] {
        &self.transfers
    }

    pub fn transfer(&self, id: u64) -> Result<&RelayTransfer, InteropError> {
        self.transfers
            .get(id as usize)
            .ok_or(InteropError::UnknownTransfer(id))
    }

    pub fn events(&self) -> &[RelayEvent] {
        &self.events
    }

    /// Audit trail of transfers between two ledgers, in either direction.
    pub fn audit_log(&self, a: &str, b: &str) -> Vec<RelayEvent> {
        self.events
            .iter()
            .filter(|e| {
                let t = &self.transfers[e.transfer_id as usize];
                pair_matches(t, a, b)
            })
            .cloned()
            .collect()
    }

    /// Opens a transfer of the record committed in `tx_id` on `src`. All
    /// checks happen before anything is written; the transfer must finish
    /// within `deadline` ticks.
    pub fn propose(
        &mut self,
        src: &Ledger,
        tx_id: Digest,
        dst: &Ledger,
        dst_channel: ChannelId,
        deadline: Tick,
    ) -> Result<u64, InteropError> {
        let src_ver = self.schema(src)?;
        let dst_ver = self.schema(dst)?;
        let tx = src.committed_tx(&tx_id).ok_or(InteropError::UnknownTx(tx_id))?;
        let record = Record::from_tx(tx).ok_or(InteropError::NotARecord(tx_id))?;
        let record = if record.schema_version == src_ver {
            record
        } else {
            return Err(InteropError::TranslationUnsupported {
                record_type: record.record_type,
                from: record.schema_version,
                to: src_ver,
            });
        };
        let t = self.table.translate(&record, dst_ver)?;
        src.can_submit(self.notary, tx.channel)?;
        dst.can_submit(self.notary, dst_channel)?;
        let id = self.transfers.len() as u64;
        let now = src.now().max(dst.now());
        self.transfers.push(RelayTransfer {
            transfer_id: id,
            source: Endpoint {
                ledger_id: src.id().into(),
                channel: tx.channel,
            },
            source_tx: tx_id,
            destination: Endpoint {
                ledger_id: dst.id().into(),
                channel: dst_channel,
            },
            record_hash: t.original_hash,
            translated_hash: t.translated_hash,
            phase: Phase::Proposed,
            proposed_at: now,
            deadline: now + deadline,
            ended_at: None,
            matched_at: None,
            translated: t.record,
            src: Leg::default(),
            dst: Leg::default(),
        });
        self.events.push(RelayEvent {
            tick: now,
            transfer_id: id,
            phase: Phase::Proposed,
        });
        Ok(id)
    }

    /// Advances every open transfer from `src` to `dst` by one tick.
    /// Returns the transfers whose phase changed.
    pub fn step(&mut self, src: &mut Ledger, dst: &mut Ledger, now: Tick) -> Vec<(u64, Phase)> {
        let notary = self.notary;
        let mut changed = Vec::new();
        for t in self.transfers.iter_mut() {
            if t.source.ledger_id != src.id() || t.destination.ledger_id != dst.id() {
                continue;
            }
            let before = t.phase;
            advance(t, notary, src, dst, now);
            if t.phase != before {
                changed.push((t.transfer_id, t.phase));
                self.events.push(RelayEvent {
                    tick: now,
                    transfer_id: t.transfer_id,
                    phase: t.phase,
                });
            }
        }
        changed
    }

    /// Divergence of the latest matched transfer between `a` and `b`;
    /// above the configured maximum an alert is raised on both ledgers.
    pub fn sync_check(&self, a: &mut Ledger, b: &mut Ledger) -> Result<SyncStatus, InteropError> {
        let (ida, idb) = (String::from(a.id()), String::from(b.id()));
        let mut attempted = false;
        let mut latest: Option<(Tick, Tick, Tick)> = None;
        for t in self.transfers.iter().filter(|t| pair_matches(t, &ida, &idb)) {
            attempted = true;
            if let (Some((s, d)), Some(end)) = (t.matched_at, t.ended_at) {
                let ticks = if t.source.ledger_id == ida { (s, d) } else { (d, s) };
                if latest.is_none_or(|l| end >= l.2) {
                    latest = Some((ticks.0, ticks.1, end));
                }
            }
        }
        if !attempted {
            return Err(InteropError::NoHistory(ida, idb));
        }
        let last_matched = latest.map(|(x, y, _)| (x, y));
        let divergence = last_matched.map_or(0, |(x, y)| x.abs_diff(y));
        let alert = divergence > self.config.max_divergence;
        if alert {
            let detail = format!("{ida}/{idb} diverged by {divergence} ticks");
            a.push_alert("sync-divergence", detail.clone());
            b.push_alert("sync-divergence", detail);
        }
        Ok(SyncStatus {
            pair: (ida, idb),
            last_matched,
            divergence,
            alert,
        })
    }
}

fn pair_matches(t: &RelayTransfer, a: &str, b: &str) -> bool {
    let (s, d) = (t.source.ledger_id.as_str(), t.destination.ledger_id.as_str());
    (s == a && d == b) || (s == b && d == a)
}

fn advance(t: &mut RelayTransfer, notary: NodeId, src: &mut Ledger, dst: &mut Ledger, now: Tick) {
    let (sch, dch) = (t.source.channel, t.destination.channel);
    match t.phase {
        Phase::Proposed => {
            if now >= t.deadline {
                return abort(t, notary, src, dst, now);
            }
            let lock = t.msg_lock();
            t.src.lock.ensure(src, notary, sch, &lock);
            t.dst.lock.ensure(dst, notary, dch, &lock);
            if t.src.lock.visible(src, now).is_some() && t.dst.lock.visible(dst, now).is_some() {
                t.phase = Phase::Locked;
                finish(t, notary, src, dst);
            }
        }
        Phase::Locked => {
            if let (Some(s), Some(d)) = (t.src.finish.visible(src, now), t.dst.finish.visible(dst, now)) {
                t.phase = Phase::CommittedBoth;
                t.ended_at = Some(now);
                t.matched_at = Some((s, d));
            } else if now >= t.deadline {
                // Writes already decided by the ledgers are waited for;
                // anything else is past its deadline.
                let done = |slot: &Slot, l: &Ledger| slot.committed(l) || slot.pending(l);
                if !(done(&t.src.finish, src) && done(&t.dst.finish, dst)) {
                    abort(t, notary, src, dst, now);
                }
            } else {
                finish(t, notary, src, dst);
            }
        }
        Phase::Aborted => release(t, notary, src, dst),
        Phase::CommittedBoth => {}
    }
}

fn finish(t: &mut RelayTransfer, notary: NodeId, src: &mut Ledger, dst: &mut Ledger) {
    let (record, confirm) = (t.msg_record(), t.msg_confirm());
    t.dst.finish.ensure(dst, notary, t.destination.channel, &record);
    t.src.finish.ensure(src, notary, t.source.channel, &confirm);
}

fn abort(t: &mut RelayTransfer, notary: NodeId, src: &mut Ledger, dst: &mut Ledger, now: Tick) {
    t.phase = Phase::Aborted;
    t.ended_at = Some(now);
    release(t, notary, src, dst);
}

/// Writes an unlock wherever a lock landed.
fn release(t: &mut RelayTransfer, notary: NodeId, src: &mut Ledger, dst: &mut Ledger) {
    let unlock = t.msg_unlock();
    if t.src.lock.committed(src) {
        t.src.unlock.ensure(src, notary, t.source.channel, &unlock);
    }
    if t.dst.lock.committed(dst) {
        t.dst.unlock.ensure(dst, notary, t.destination.channel, &unlock);
    }
}

/// Drives one transfer to a settled state, running a consensus round on
/// both ledgers each tick. Gives up `grace` ticks after the deadline.
pub fn run_transfer(
    relay: &mut Relay,
    id: u64,
    src: &mut Ledger,
    dst: &mut Ledger,
    grace: Tick,
) -> Result<RelayTransfer, InteropError> {
    let t = relay.transfer(id)?;
    let (start, stop) = (t.proposed_at, t.deadline + grace);
    for now in start..=stop {
        src.advance_to(now);
        dst.advance_to(now);
        relay.step(src, dst, now);
        src.run_all_rounds();
        dst.run_all_rounds();
        let t = relay.transfer(id)?;
        if t.settled(src, dst) {
            break;
        }
    }
    let t = relay.transfer(id)?.clone();
    t.result().map(|_| t)
}

impl Canonical for RelayEvent {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.tick).u64(self.transfer_id).u8(self.phase as u8);
    }
}

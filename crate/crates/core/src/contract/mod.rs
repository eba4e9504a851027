//! Contract runtime: install, invoke, timers, control instructions,
//! termination and off-chain storage.
//!
//! Every invocation, allowed or not, is written to the ledger as an `Invoke`
//! transaction submitted by the runtime's host node. Installs must commit
//! before the contract exists.

mod descriptor;
pub mod templates;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use descriptor::*;

use crate::config::{RuntimeConfig, Tick};
use crate::hash::{Canonical, Digest, Encoder};
use crate::ledger::{ChannelId, Ledger, LedgerError, NodeId, Payload, PayloadKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Installed,
    Active,
    Interrupted,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Timer {
    pub timer_id: String,
    pub fire_at: Tick,
    pub action: String,
    pub armed: bool,
}

#[derive(Debug, Clone)]
pub struct SmartContract {
    pub id: ContractId,
    pub descriptor: Arc<ContractDescriptor>,
    pub channel: ChannelId,
    pub status: Status,
    pub machine_state: String,
    pub state_vars: BTreeMap<String, Value>,
    pub acl: BTreeMap<String, BTreeSet<Identity>>,
    pub timers: Vec<Timer>,
    pub installed_at: Tick,
    pub activated_at: Option<Tick>,
    pub terminated_at: Option<Tick>,
}

impl SmartContract {
    pub fn kind(&self) -> ContractKind {
        self.descriptor.kind
    }

    pub fn var(&self, key: &str) -> Option<&Value> {
        self.state_vars.get(key)
    }

    pub fn allowed(&self, function: &str, who: &Identity) -> bool {
        self.acl.get(function).is_some_and(|s| s.contains(who))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Ok,
    Denied,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvocationRecord {
    pub contract_id: ContractId,
    pub function: String,
    pub caller: Identity,
    pub args_digest: Digest,
    pub call_depth: u32,
    pub tick: Tick,
    pub outcome: Outcome,
    pub tx_id: Option<Digest>,
}

impl InvocationRecord {
    fn body(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.digest(&self.contract_id)
            .str(&self.function)
            .put(&self.caller)
            .digest(&self.args_digest)
            .u32(self.call_depth)
            .u64(self.tick)
            .u8(self.outcome as u8);
        enc.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Interrupt,
    Resume,
    Terminate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlInstruction {
    pub issuer: NodeId,
    pub target: ContractId,
    pub command: Command,
    pub tick: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminationProof {
    pub contract_id: ContractId,
    pub tick: Tick,
    pub cleared_state_hash: Digest,
}

impl TerminationProof {
    fn new(contract_id: ContractId, tick: Tick, vars: &BTreeMap<String, Value>) -> Self {
        let mut enc = Encoder::new();
        enc.digest(&contract_id).u64(tick);
        encode_map(&mut enc, vars);
        Self {
            contract_id,
            tick,
            cleared_state_hash: Digest::of(enc.as_slice()),
        }
    }

    /// Recomputes the hash against an empty state map.
    pub fn is_valid(&self) -> bool {
        *self == Self::new(self.contract_id, self.tick, &BTreeMap::new())
    }
}

impl Canonical for TerminationProof {
    fn encode(&self, enc: &mut Encoder) {
        enc.digest(&self.contract_id)
            .u64(self.tick)
            .digest(&self.cleared_state_hash);
    }
}

/// Content address of an off-chain payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContentRef(pub Digest);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("malformed descriptor: {0}")]
    MalformedDescriptor(String),
    #[error("contract {0:?} already installed")]
    AlreadyInstalled(ContractId),
    #[error("install transaction did not commit")]
    CommitFailed,
    #[error("unknown contract {0:?}")]
    UnknownContract(ContractId),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("{caller} may not call `{function}`")]
    AccessDenied { function: String, caller: String },
    #[error("contract is {0:?}, not active")]
    ContractNotActive(Status),
    #[error("call depth {0} exceeds limit")]
    CallDepthExceeded(u32),
    #[error("contract {0:?} already on the call chain")]
    ReentrancyDenied(ContractId),
    #[error("transition rejected: {0}")]
    TransitionFailed(String),
    #[error("issuer {0} is not governance")]
    NotGovernance(NodeId),
    #[error("caller is neither governance nor owner")]
    NotAuthorized,
    #[error("contract already terminated")]
    AlreadyTerminated,
    #[error("cannot {command:?} a contract that is {status:?}")]
    InvalidControl { command: Command, status: Status },
    #[error("off-chain ref {0:?} not found")]
    NotFound(ContentRef),
    #[error("off-chain payload for {0:?} does not match its hash")]
    HashMismatch(ContentRef),
    #[error("payload of {size} bytes fits on-chain (limit {limit})")]
    PayloadWithinLimit { size: usize, limit: usize },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl RuntimeError {
    fn outcome(&self) -> Outcome {
        match self {
            RuntimeError::AccessDenied { .. }
            | RuntimeError::ContractNotActive(_)
            | RuntimeError::CallDepthExceeded(_)
            | RuntimeError::ReentrancyDenied(_) => Outcome::Denied,
            _ => Outcome::Failed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContractRuntime {
    config: RuntimeConfig,
    host: NodeId,
    contracts: BTreeMap<ContractId, SmartContract>,
    records: Vec<InvocationRecord>,
    offchain: BTreeMap<ContentRef, Vec<u8>>,
    controls: Vec<ControlInstruction>,
    now: Tick,
    seq: u64,
}

struct CallFrame<'a> {
    chain: Vec<ContractId>,
    undo: BTreeMap<ContractId, Option<SmartContract>>,
    records: Vec<InvocationRecord>,
    ledger: &'a Ledger,
}

impl ContractRuntime {
    /// `host` submits the runtime's ledger records; it must be a member of
    /// every channel contracts are installed on.
    pub fn new(config: RuntimeConfig, host: NodeId) -> Self {
        Self {
            config,
            host,
            contracts: BTreeMap::new(),
            records: Vec::new(),
            offchain: BTreeMap::new(),
            controls: Vec::new(),
            now: 0,
            seq: 0,
        }
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.config
    }

    pub fn host(&self) -> NodeId {
        self.host
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn contract(&self, id: &ContractId) -> Option<&SmartContract> {
        self.contracts.get(id)
    }

    pub fn contracts(&self) -> impl Iterator<Item = &SmartContract> {
        self.contracts.values()
    }

    pub fn records(&self) -> &[InvocationRecord] {
        &self.records
    }

    pub fn controls(&self) -> &[ControlInstruction] {
        &self.controls
    }

    fn submit_record(
        &mut self,
        ledger: &mut Ledger,
        channel: ChannelId,
        kind: PayloadKind,
        tag: &str,
        body: Vec<u8>,
    ) -> Result<Digest, LedgerError> {
        self.seq += 1;
        let mut enc = Encoder::new();
        enc.bytes(&body).u64(self.seq);
        let r = ledger.submit(self.host, channel, Payload::new(kind, tag, enc.finish()))?;
        Ok(r.tx_id)
    }

    pub fn install_contract(
        &mut self,
        ledger: &mut Ledger,
        descriptor: ContractDescriptor,
        channel: ChannelId,
    ) -> Result<ContractId, RuntimeError> {
        descriptor
            .validate()
            .map_err(RuntimeError::MalformedDescriptor)?;
        let id = descriptor.id();
        if self.contracts.contains_key(&id) {
            return Err(RuntimeError::AlreadyInstalled(id));
        }
        let bytes = descriptor.canonical_bytes();
        let tx = ledger.submit(
            self.host,
            channel,
            Payload::new(PayloadKind::ContractInstall, descriptor.name.clone(), bytes),
        )?;
        match ledger.run_consensus_round(channel) {
            Ok(_) | Err(LedgerError::NoActiveValidators) => {}
            Err(e) => return Err(e.into()),
        }
        if !ledger.outcome(&tx.tx_id).is_some_and(|o| o.is_committed()) {
            return Err(RuntimeError::CommitFailed);
        }
        let c = SmartContract {
            id,
            channel,
            status: Status::Installed,
            machine_state: descriptor.initial_state.clone(),
            state_vars: descriptor.init_vars.clone(),
            acl: descriptor.acl.clone(),
            timers: Vec::new(),
            installed_at: self.now,
            activated_at: None,
            terminated_at: None,
            descriptor: Arc::new(descriptor),
        };
        self.contracts.insert(id, c);
        Ok(id)
    }

    fn is_owner_or_governance(&self, ledger: &Ledger, c: &SmartContract, who: &Identity) -> bool {
        match who {
            Identity::Node(n) if ledger.is_governance(*n) => true,
            other => *other == c.descriptor.owner,
        }
    }

    /// Installed → Active. Descriptor timers are armed relative to now.
    pub fn activate(
        &mut self,
        ledger: &mut Ledger,
        id: &ContractId,
        caller: &Identity,
    ) -> Result<(), RuntimeError> {
        let c = self
            .contracts
            .get(id)
            .ok_or(RuntimeError::UnknownContract(*id))?;
        if !self.is_owner_or_governance(ledger, c, caller) {
            return Err(RuntimeError::NotAuthorized);
        }
        if c.status != Status::Installed {
            return Err(RuntimeError::ContractNotActive(c.status));
        }
        let channel = c.channel;
        let mut enc = Encoder::new();
        enc.digest(id).put(caller).u64(self.now);
        self.submit_record(ledger, channel, PayloadKind::Control, "activate", enc.finish())?;
        let now = self.now;
        let c = self.contracts.get_mut(id).expect("present");
        c.status = Status::Active;
        c.activated_at = Some(now);
        let armed: Vec<Timer> = c
            .descriptor
            .timers
            .iter()
            .map(|t| Timer {
                timer_id: t.id.clone(),
                fire_at: now + t.after,
                action: t.action.clone(),
                armed: true,
            })
            .collect();
        c.timers.extend(armed);
        Ok(())
    }

    /// Invokes `function` and records the outcome on the ledger whether or
    /// not it succeeds. Failed invocations leave every contract unchanged.
    pub fn invoke(
        &mut self,
        ledger: &mut Ledger,
        contract: &ContractId,
        function: &str,
        caller: Identity,
        args: Args,
    ) -> Result<InvocationRecord, RuntimeError> {
        let (records, result) = self.invoke_tree(ledger, contract, function, caller, args)?;
        let top = records.into_iter().next().expect("top record");
        result.map(|_| top)
    }

    fn invoke_tree(
        &mut self,
        ledger: &mut Ledger,
        contract: &ContractId,
        function: &str,
        caller: Identity,
        args: Args,
    ) -> Result<(Vec<InvocationRecord>, Result<(), RuntimeError>), RuntimeError> {
        if let Some(c) = self.contracts.get(contract) {
            ledger.can_submit(self.host, c.channel)?;
        }
        let mut frame = CallFrame {
            chain: Vec::new(),
            undo: BTreeMap::new(),
            records: Vec::new(),
            ledger: &*ledger,
        };
        let result = self.call(&mut frame, contract, function, caller, &args, 1);
        let CallFrame { undo, mut records, .. } = frame;
        if result.is_err() {
            for (id, prev) in undo {
                match prev {
                    Some(c) => {
                        self.contracts.insert(id, c);
                    }
                    None => {
                        self.contracts.remove(&id);
                    }
                }
            }
            for r in records.iter_mut() {
                if r.outcome == Outcome::Ok {
                    r.outcome = Outcome::Failed;
                }
            }
        }
        for r in records.iter_mut() {
            let channel = self
                .contracts
                .get(&r.contract_id)
                .map_or(ChannelId::DEFAULT, |c| c.channel);
            let body = r.body();
            r.tx_id = self
                .submit_record(ledger, channel, PayloadKind::Invoke, &r.function.clone(), body)
                .ok();
        }
        self.records.extend(records.iter().cloned());
        Ok((records, result))
    }

    fn call(
        &mut self,
        frame: &mut CallFrame<'_>,
        id: &ContractId,
        function: &str,
        caller: Identity,
        args: &Args,
        depth: u32,
    ) -> Result<(), RuntimeError> {
        let idx = frame.records.len();
        frame.records.push(InvocationRecord {
            contract_id: *id,
            function: function.to_string(),
            caller: caller.clone(),
            args_digest: {
                let mut enc = Encoder::new();
                encode_map(&mut enc, args);
                Digest::of(enc.as_slice())
            },
            call_depth: depth,
            tick: self.now,
            outcome: Outcome::Ok,
            tx_id: None,
        });
        let r = self.call_inner(frame, id, function, caller, args, depth);
        if let Err(e) = &r {
            frame.records[idx].outcome = e.outcome();
        }
        r
    }

    fn call_inner(
        &mut self,
        frame: &mut CallFrame<'_>,
        id: &ContractId,
        function: &str,
        caller: Identity,
        args: &Args,
        depth: u32,
    ) -> Result<(), RuntimeError> {
        if depth > self.config.max_call_depth {
            return Err(RuntimeError::CallDepthExceeded(depth));
        }
        if frame.chain.contains(id) {
            return Err(RuntimeError::ReentrancyDenied(*id));
        }
        let c = self
            .contracts
            .get(id)
            .ok_or(RuntimeError::UnknownContract(*id))?;
        if c.status != Status::Active {
            return Err(RuntimeError::ContractNotActive(c.status));
        }
        if depth > 1 {
            frame.ledger.can_submit(self.host, c.channel)?;
        }
        let spec = c
            .descriptor
            .function(function)
            .ok_or_else(|| RuntimeError::UnknownFunction(function.to_string()))?
            .clone();
        if !c.allowed(function, &caller) {
            return Err(RuntimeError::AccessDenied {
                function: function.to_string(),
                caller: caller.to_string(),
            });
        }
        if !spec.from.is_empty() && !spec.from.contains(&c.machine_state) {
            return Err(RuntimeError::TransitionFailed(format!(
                "`{function}` not allowed from state `{}`",
                c.machine_state
            )));
        }
        for a in &spec.require_args {
            if !args.contains_key(a) {
                return Err(RuntimeError::TransitionFailed(format!("missing argument `{a}`")));
            }
        }
        for g in &spec.guards {
            let ok = match g {
                Guard::VarEquals { key, value } => c.state_vars.get(key) == Some(value),
                Guard::VarPresent(k) => c.state_vars.contains_key(k),
                Guard::VarAbsent(k) => !c.state_vars.contains_key(k),
            };
            if !ok {
                return Err(RuntimeError::TransitionFailed(format!("guard {g:?} failed")));
            }
        }

        frame.undo.entry(*id).or_insert_with(|| Some(c.clone()));
        frame.chain.push(*id);
        let now = self.now;
        for effect in &spec.effects {
            let c = self.contracts.get(id).expect("present");
            let resolve = |src: &Source| -> Result<Value, RuntimeError> {
                match src {
                    Source::Const(v) => Ok(v.clone()),
                    Source::Arg(a) => args.get(a).cloned().ok_or_else(|| {
                        RuntimeError::TransitionFailed(format!("missing argument `{a}`"))
                    }),
                    Source::Var(k) => c.state_vars.get(k).cloned().ok_or_else(|| {
                        RuntimeError::TransitionFailed(format!("unset variable `{k}`"))
                    }),
                    Source::Now => Ok(Value::Int(now as i64)),
                    Source::Caller => Ok(Value::Id(caller.clone())),
                }
            };
            match effect {
                Effect::Set { key, from } => {
                    let v = resolve(from)?;
                    self.contracts
                        .get_mut(id)
                        .expect("present")
                        .state_vars
                        .insert(key.clone(), v);
                }
                Effect::Remove { key } => {
                    self.contracts
                        .get_mut(id)
                        .expect("present")
                        .state_vars
                        .remove(key);
                }
                Effect::Grant { function, who } | Effect::Revoke { function, who } => {
                    let who = resolve(who)?.as_identity().ok_or_else(|| {
                        RuntimeError::TransitionFailed("grant target is not an identity".into())
                    })?;
                    let acl = &mut self.contracts.get_mut(id).expect("present").acl;
                    if matches!(effect, Effect::Grant { .. }) {
                        acl.entry(function.clone()).or_default().insert(who);
                    } else if let Some(set) = acl.get_mut(function) {
                        set.remove(&who);
                    }
                }
                Effect::ArmTimer { timer, at, action } => {
                    let at = resolve(at)?
                        .as_int()
                        .filter(|t| *t >= 0)
                        .ok_or_else(|| RuntimeError::TransitionFailed("bad timer tick".into()))?;
                    self.contracts
                        .get_mut(id)
                        .expect("present")
                        .timers
                        .push(Timer {
                            timer_id: timer.clone(),
                            fire_at: at as Tick,
                            action: action.clone(),
                            armed: true,
                        });
                }
                Effect::Call {
                    target,
                    function,
                    args: fwd,
                } => {
                    let target = resolve(target)?.as_digest().ok_or_else(|| {
                        RuntimeError::TransitionFailed("call target is not a contract id".into())
                    })?;
                    let mut sub = Args::new();
                    for a in fwd {
                        if let Some(v) = args.get(a) {
                            sub.insert(a.clone(), v.clone());
                        }
                    }
                    let me = Identity::Contract(*id);
                    if let Err(e) = self.call(frame, &target, function, me, &sub, depth + 1) {
                        frame.chain.pop();
                        return Err(e);
                    }
                }
            }
        }
        if let Some(to) = &spec.to {
            self.contracts.get_mut(id).expect("present").machine_state = to.clone();
        }
        frame.chain.pop();
        Ok(())
    }

    /// Moves the clock without firing timers; [`Self::tick`] fires them.
    pub fn advance_clock(&mut self, now: Tick) {
        if now > self.now {
            self.now = now;
        }
    }

    /// Fires every armed timer due at or before `now`, ordered by
    /// `(fire_at, contract_id, timer_id)`, each exactly once.
    pub fn tick(&mut self, ledger: &mut Ledger, now: Tick) -> Vec<InvocationRecord> {
        if now > self.now {
            self.now = now;
        }
        let mut due: Vec<(Tick, ContractId, String, String)> = Vec::new();
        for c in self.contracts.values_mut() {
            for t in c.timers.iter_mut().filter(|t| t.armed && t.fire_at <= now) {
                t.armed = false;
                due.push((t.fire_at, c.id, t.timer_id.clone(), t.action.clone()));
            }
        }
        due.sort();
        let mut out = Vec::new();
        for (_, id, _, action) in due {
            if let Ok((records, _)) =
                self.invoke_tree(ledger, &id, &action, Identity::System, Args::new())
            {
                out.extend(records.into_iter().next());
            }
        }
        out
    }

    pub fn apply_control(
        &mut self,
        ledger: &mut Ledger,
        instr: ControlInstruction,
    ) -> Result<Status, RuntimeError> {
        if !ledger.is_governance(instr.issuer) {
            return Err(RuntimeError::NotGovernance(instr.issuer));
        }
        let c = self
            .contracts
            .get(&instr.target)
            .ok_or(RuntimeError::UnknownContract(instr.target))?;
        let status = c.status;
        let next = match (instr.command, status) {
            (Command::Interrupt, Status::Active) => Status::Interrupted,
            (Command::Resume, Status::Interrupted) => Status::Active,
            (Command::Terminate, _) => {
                self.terminate_contract(ledger, &instr.target, &Identity::Node(instr.issuer))?;
                self.controls.push(instr);
                return Ok(Status::Terminated);
            }
            (command, status) => return Err(RuntimeError::InvalidControl { command, status }),
        };
        let channel = c.channel;
        let mut enc = Encoder::new();
        enc.digest(&instr.target)
            .u32(instr.issuer.0)
            .u8(instr.command as u8)
            .u64(instr.tick);
        self.submit_record(ledger, channel, PayloadKind::Control, "control", enc.finish())?;
        self.contracts.get_mut(&instr.target).expect("present").status = next;
        self.controls.push(instr);
        Ok(next)
    }

    /// Clears state and disarms timers. The contract and its history stay
    /// on the ledger.
    pub fn terminate_contract(
        &mut self,
        ledger: &mut Ledger,
        id: &ContractId,
        caller: &Identity,
    ) -> Result<TerminationProof, RuntimeError> {
        let c = self
            .contracts
            .get(id)
            .ok_or(RuntimeError::UnknownContract(*id))?;
        if !self.is_owner_or_governance(ledger, c, caller) {
            return Err(RuntimeError::NotAuthorized);
        }
        match c.status {
            Status::Terminated => return Err(RuntimeError::AlreadyTerminated),
            Status::Installed => return Err(RuntimeError::ContractNotActive(Status::Installed)),
            Status::Active | Status::Interrupted => {}
        }
        let channel = c.channel;
        let now = self.now;
        let proof = TerminationProof::new(*id, now, &BTreeMap::new());
        self.submit_record(
            ledger,
            channel,
            PayloadKind::Control,
            "terminate",
            proof.canonical_bytes(),
        )?;
        let c = self.contracts.get_mut(id).expect("present");
        c.state_vars.clear();
        for t in c.timers.iter_mut() {
            t.armed = false;
        }
        c.status = Status::Terminated;
        c.terminated_at = Some(now);
        Ok(proof)
    }

    /// Writes `payload` to the content-addressed store and records only its
    /// 32-byte reference on the contract's channel.
    pub fn store_offchain(
        &mut self,
        ledger: &mut Ledger,
        contract: &ContractId,
        payload: Vec<u8>,
    ) -> Result<ContentRef, RuntimeError> {
        let limit = self.config.onchain_payload_limit;
        if payload.len() <= limit {
            return Err(RuntimeError::PayloadWithinLimit {
                size: payload.len(),
                limit,
            });
        }
        let channel = self
            .contracts
            .get(contract)
            .ok_or(RuntimeError::UnknownContract(*contract))?
            .channel;
        let r = ContentRef(Digest::of(&payload));
        let mut body = Encoder::new();
        body.digest(contract).digest(&r.0);
        self.submit_record(ledger, channel, PayloadKind::Data, "offchain-ref", body.finish())?;
        self.offchain.insert(r, payload);
        Ok(r)
    }

    pub fn load_offchain(&self, r: &ContentRef) -> Result<Vec<u8>, RuntimeError> {
        let bytes = self.offchain.get(r).ok_or(RuntimeError::NotFound(*r))?;
        if Digest::of(bytes) != r.0 {
            return Err(RuntimeError::HashMismatch(*r));
        }
        Ok(bytes.clone())
    }

    /// Overwrites a stored blob without updating its reference.
    pub fn tamper_offchain(&mut self, r: &ContentRef) {
        if let Some(b) = self.offchain.get_mut(r) {
            match b.first_mut() {
                Some(x) => *x ^= 0xff,
                None => b.push(0),
            }
        }
    }
}

#[cfg(test)]
mod tests;

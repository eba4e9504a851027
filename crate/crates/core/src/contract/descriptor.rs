//! Declarative contract descriptors.
//!
//! A contract is a small state machine: named states, functions that move
//! between them under guards, effects on a key/value store, an access-control
//! list per function, and timers. Descriptors never change after install, and
//! their canonical bytes define the contract id.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::config::Tick;
use crate::hash::{Canonical, Digest, Encoder};
use crate::ledger::NodeId;

pub const DESCRIPTOR_SCHEMA_VERSION: u32 = 1;

pub type ContractId = Digest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContractKind {
    ItSc,
    AcSc,
    SoSc,
    SrSc,
    Generic,
}

impl ContractKind {
    pub fn label(self) -> &'static str {
        match self {
            ContractKind::ItSc => "it-sc",
            ContractKind::AcSc => "ac-sc",
            ContractKind::SoSc => "so-sc",
            ContractKind::SrSc => "sr-sc",
            ContractKind::Generic => "generic",
        }
    }
}

/// Who is calling. Written as `node:3`, `party:acme`, `system` or
/// `contract:<hex>` in documents.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Identity {
    Node(NodeId),
    Party(String),
    /// The runtime itself, used for timer firings.
    System,
    Contract(ContractId),
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Identity::Node(n) => write!(f, "node:{}", n.0),
            Identity::Party(p) => write!(f, "party:{p}"),
            Identity::System => f.write_str("system"),
            Identity::Contract(c) => write!(f, "contract:{c}"),
        }
    }
}

impl FromStr for Identity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "system" {
            return Ok(Identity::System);
        }
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| format!("identity `{s}` lacks a kind prefix"))?;
        match kind {
            "node" => rest
                .parse::<u32>()
                .map(|n| Identity::Node(NodeId(n)))
                .map_err(|_| format!("bad node id in `{s}`")),
            "party" if !rest.is_empty() => Ok(Identity::Party(rest.to_string())),
            "contract" => Digest::from_hex(rest)
                .map(Identity::Contract)
                .map_err(|_| format!("bad contract id in `{s}`")),
            _ => Err(format!("unknown identity `{s}`")),
        }
    }
}

impl Serialize for Identity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Identity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Canonical for Identity {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            Identity::Node(n) => enc.u8(1).u32(n.0),
            Identity::Party(p) => enc.u8(2).str(p),
            Identity::System => enc.u8(3),
            Identity::Contract(c) => enc.u8(4).digest(c),
        };
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Value {
    Int(i64),
    Text(String),
    Digest(Digest),
    Id(Identity),
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_digest(&self) -> Option<Digest> {
        match self {
            Value::Digest(d) => Some(*d),
            _ => None,
        }
    }

    pub fn as_identity(&self) -> Option<Identity> {
        match self {
            Value::Id(i) => Some(i.clone()),
            _ => None,
        }
    }
}

impl Canonical for Value {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            Value::Int(i) => enc.u8(1).i64(*i),
            Value::Text(t) => enc.u8(2).str(t),
            Value::Digest(d) => enc.u8(3).digest(d),
            Value::Id(id) => enc.u8(4).put(id),
        };
    }
}

pub type Args = BTreeMap<String, Value>;

pub(crate) fn encode_map(enc: &mut Encoder, map: &BTreeMap<String, Value>) {
    enc.u32(map.len() as u32);
    for (k, v) in map {
        enc.str(k).put(v);
    }
}

/// Where an effect takes its operand from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Const(Value),
    Arg(String),
    Var(String),
    Now,
    Caller,
}

impl Canonical for Source {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            Source::Const(v) => enc.u8(1).put(v),
            Source::Arg(a) => enc.u8(2).str(a),
            Source::Var(k) => enc.u8(3).str(k),
            Source::Now => enc.u8(4),
            Source::Caller => enc.u8(5),
        };
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Guard {
    VarEquals { key: String, value: Value },
    VarPresent(String),
    VarAbsent(String),
}

impl Canonical for Guard {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            Guard::VarEquals { key, value } => enc.u8(1).str(key).put(value),
            Guard::VarPresent(k) => enc.u8(2).str(k),
            Guard::VarAbsent(k) => enc.u8(3).str(k),
        };
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Effect {
    Set { key: String, from: Source },
    Remove { key: String },
    /// Adds an identity to a function's ACL.
    Grant { function: String, who: Source },
    Revoke { function: String, who: Source },
    /// Arms a timer at the absolute tick given by `at`.
    ArmTimer { timer: String, at: Source, action: String },
    /// Cross-contract call. `args` names arguments forwarded unchanged.
    Call {
        target: Source,
        function: String,
        #[serde(default)]
        args: Vec<String>,
    },
}

impl Canonical for Effect {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            Effect::Set { key, from } => enc.u8(1).str(key).put(from),
            Effect::Remove { key } => enc.u8(2).str(key),
            Effect::Grant { function, who } => enc.u8(3).str(function).put(who),
            Effect::Revoke { function, who } => enc.u8(4).str(function).put(who),
            Effect::ArmTimer { timer, at, action } => enc.u8(5).str(timer).put(at).str(action),
            Effect::Call {
                target,
                function,
                args,
            } => enc.u8(6).put(target).str(function).seq(args),
        };
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub name: String,
    /// States this function may fire from; empty means any.
    #[serde(default)]
    pub from: Vec<String>,
    #[serde(default)]
    pub to: Option<String>,
    #[serde(default)]
    pub require_args: Vec<String>,
    #[serde(default)]
    pub guards: Vec<Guard>,
    #[serde(default)]
    pub effects: Vec<Effect>,
}

impl Canonical for FunctionSpec {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.name).seq(&self.from);
        match &self.to {
            Some(t) => enc.u8(1).str(t),
            None => enc.u8(0),
        };
        enc.seq(&self.require_args)
            .seq(&self.guards)
            .seq(&self.effects);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimerSpec {
    pub id: String,
    /// Ticks after activation.
    pub after: Tick,
    pub action: String,
}

impl Canonical for TimerSpec {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.id).u64(self.after).str(&self.action);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractDescriptor {
    pub schema_version: u32,
    pub name: String,
    pub kind: ContractKind,
    pub owner: Identity,
    pub states: Vec<String>,
    pub initial_state: String,
    #[serde(default)]
    pub init_vars: BTreeMap<String, Value>,
    pub functions: Vec<FunctionSpec>,
    #[serde(default)]
    pub acl: BTreeMap<String, BTreeSet<Identity>>,
    #[serde(default)]
    pub timers: Vec<TimerSpec>,
}

impl Canonical for ContractDescriptor {
    fn encode(&self, enc: &mut Encoder) {
        enc.u32(self.schema_version)
            .str(&self.name)
            .str(self.kind.label())
            .put(&self.owner)
            .seq(&self.states)
            .str(&self.initial_state);
        encode_map(enc, &self.init_vars);
        enc.seq(&self.functions);
        enc.u32(self.acl.len() as u32);
        for (f, ids) in &self.acl {
            enc.str(f).u32(ids.len() as u32);
            for id in ids {
                enc.put(id);
            }
        }
        enc.seq(&self.timers);
    }
}

impl ContractDescriptor {
    pub fn id(&self) -> ContractId {
        self.canonical_digest()
    }

    pub fn function(&self, name: &str) -> Option<&FunctionSpec> {
        self.functions.iter().find(|f| f.name == name)
    }

    /// Structural checks; the error string names the first problem found.
    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != DESCRIPTOR_SCHEMA_VERSION {
            return Err(format!("unsupported schema version {}", self.schema_version));
        }
        if self.states.is_empty() {
            return Err("no states declared".into());
        }
        let states: BTreeSet<&str> = self.states.iter().map(String::as_str).collect();
        if states.len() != self.states.len() {
            return Err("duplicate state".into());
        }
        if !states.contains(self.initial_state.as_str()) {
            return Err(format!("initial state `{}` not declared", self.initial_state));
        }
        let mut fnames = BTreeSet::new();
        for f in &self.functions {
            if !fnames.insert(f.name.as_str()) {
                return Err(format!("duplicate function `{}`", f.name));
            }
            for s in f.from.iter().chain(f.to.iter()) {
                if !states.contains(s.as_str()) {
                    return Err(format!("function `{}` names undeclared state `{s}`", f.name));
                }
            }
        }
        for f in &self.functions {
            for e in &f.effects {
                let named = match e {
                    Effect::Grant { function, .. } | Effect::Revoke { function, .. } => {
                        Some(function)
                    }
                    Effect::ArmTimer { action, .. } => Some(action),
                    _ => None,
                };
                if let Some(n) = named {
                    if !fnames.contains(n.as_str()) {
                        return Err(format!(
                            "function `{}` references undeclared function `{n}`",
                            f.name
                        ));
                    }
                }
            }
        }
        for name in self.acl.keys() {
            if !fnames.contains(name.as_str()) {
                return Err(format!("acl entry for undeclared function `{name}`"));
            }
        }
        let mut tids = BTreeSet::new();
        for t in &self.timers {
            if !tids.insert(t.id.as_str()) {
                return Err(format!("duplicate timer `{}`", t.id));
            }
            if !fnames.contains(t.action.as_str()) {
                return Err(format!("timer `{}` action `{}` undeclared", t.id, t.action));
            }
        }
        Ok(())
    }
}

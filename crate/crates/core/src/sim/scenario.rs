//! Declarative scenario description.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::config::{Config, Tick};
use crate::intent::PresetTable;
use crate::interop::{Record, TranslationTable};
use crate::ledger::{Role, VoteBehavior};
use crate::monitoring::Path;
use crate::sla::{PenaltyRule, ServiceOffering, Sla, Slo};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    /// Ticks simulated: `0..duration`.
    pub duration: Tick,
    #[serde(default)]
    pub config: Config,
    #[serde(default)]
    pub presets: PresetTable,
    /// The first ledger hosts the SLA lifecycle.
    pub ledgers: Vec<LedgerSpec>,
    /// Governance identity acting as notary between ledgers.
    #[serde(default)]
    pub notary: Option<u32>,
    #[serde(default)]
    pub resources: Vec<ResourceSpec>,
    #[serde(default)]
    pub paths: Vec<Path>,
    #[serde(default)]
    pub catalogue: Vec<ServiceOffering>,
    #[serde(default)]
    pub intents: Vec<IntentSpec>,
    #[serde(default)]
    pub faults: Vec<Fault>,
    #[serde(default)]
    pub governance: Vec<GovernanceAction>,
    #[serde(default)]
    pub oracle: Option<OracleSpec>,
    #[serde(default)]
    pub translation: TranslationTable,
    #[serde(default)]
    pub transfers: Vec<TransferSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerSpec {
    pub id: String,
    /// Record schema version spoken on this ledger.
    #[serde(default = "one")]
    pub schema_version: u32,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
    /// Agreements held on this ledger outside the simulated lifecycle.
    #[serde(default)]
    pub slas: Vec<Sla>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: u32,
    pub role: Role,
    #[serde(default)]
    pub link_delay: Tick,
    #[serde(default)]
    pub behavior: VoteBehavior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub name: String,
    pub members: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceSpec {
    pub id: String,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptedResponse {
    Accept,
    Counter(Vec<Slo>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentSpec {
    pub tick: Tick,
    pub sla_id: String,
    pub customer: String,
    pub text: String,
    /// Channel name; the default channel when absent.
    #[serde(default)]
    pub channel: Option<String>,
    pub checkpoint_period: Tick,
    pub penalty: PenaltyRule,
    /// Customer replies to successive proposals.
    #[serde(default = "accept")]
    pub responses: Vec<ScriptedResponse>,
    pub traffic: TrafficSpec,
}

fn accept() -> Vec<ScriptedResponse> {
    vec![ScriptedResponse::Accept]
}

/// How usage samples are synthesised for an SLA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSpec {
    /// Path the SLA is routed over initially.
    pub path: String,
    #[serde(default = "ten")]
    pub sample_every: Tick,
    /// Uniform extra latency in `[0, jitter_ms)` on top of the path's.
    #[serde(default)]
    pub jitter_ms: f64,
    /// Delivered throughput; the agreed target when absent.
    #[serde(default)]
    pub throughput_mbps: Option<f64>,
    #[serde(default)]
    pub loss: f64,
}

fn ten() -> Tick {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Fault {
    /// Path latency jumps and stays there.
    LatencySpike { tick: Tick, path: String, latency_ms: f64 },
    PathDown { tick: Tick, path: String },
    PathUp { tick: Tick, path: String },
    /// Nodes stop (or resume) participating without leaving.
    NodeDown { tick: Tick, ledger: String, nodes: Vec<u32> },
    NodeUp { tick: Tick, ledger: String, nodes: Vec<u32> },
    NodeLeave { tick: Tick, ledger: String, node: u32 },
    NodeJoin { tick: Tick, ledger: String, node: u32, role: Role },
    /// Nodes reject everything from now on.
    Collude { tick: Tick, ledger: String, nodes: Vec<u32> },
    LinkDelay { tick: Tick, ledger: String, node: u32, delay: Tick },
    MaliciousFeed { tick: Tick, feed: String, value: f64 },
    HonestFeed { tick: Tick, feed: String },
    PdlfOff { tick: Tick, resource: String },
    PdlfOn { tick: Tick, resource: String },
    /// Coverage moves from the SLA's network to a partner's: the two
    /// agreements are blended and the blend relayed to the partner ledger.
    Handover {
        tick: Tick,
        sla: String,
        partner_ledger: String,
        partner_sla: String,
        weight: f64,
        deadline: Tick,
    },
}

impl Fault {
    pub fn tick(&self) -> Tick {
        match self {
            Fault::LatencySpike { tick, .. }
            | Fault::PathDown { tick, .. }
            | Fault::PathUp { tick, .. }
            | Fault::NodeDown { tick, .. }
            | Fault::NodeUp { tick, .. }
            | Fault::NodeLeave { tick, .. }
            | Fault::NodeJoin { tick, .. }
            | Fault::Collude { tick, .. }
            | Fault::LinkDelay { tick, .. }
            | Fault::MaliciousFeed { tick, .. }
            | Fault::HonestFeed { tick, .. }
            | Fault::PdlfOff { tick, .. }
            | Fault::PdlfOn { tick, .. }
            | Fault::Handover { tick, .. } => *tick,
        }
    }

    fn ledger(&self) -> Option<&str> {
        match self {
            Fault::NodeDown { ledger, .. }
            | Fault::NodeUp { ledger, .. }
            | Fault::NodeLeave { ledger, .. }
            | Fault::NodeJoin { ledger, .. }
            | Fault::Collude { ledger, .. }
            | Fault::LinkDelay { ledger, .. } => Some(ledger),
            Fault::Handover { partner_ledger, .. } => Some(partner_ledger),
            _ => None,
        }
    }

    fn path(&self) -> Option<&str> {
        match self {
            Fault::LatencySpike { path, .. } | Fault::PathDown { path, .. } | Fault::PathUp { path, .. } => {
                Some(path)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GovernanceAction {
    /// Flags colluders over votes cast since `since` and blacklists them.
    DetectCollusion { tick: Tick, ledger: String, since: Tick },
    Audit { tick: Tick, ledger: String, node: u32 },
    ReinstateFeed { tick: Tick, feed: String },
    /// Ends an SLA early.
    Terminate { tick: Tick, sla: String },
}

impl GovernanceAction {
    pub fn tick(&self) -> Tick {
        match self {
            GovernanceAction::DetectCollusion { tick, .. }
            | GovernanceAction::Audit { tick, .. }
            | GovernanceAction::ReinstateFeed { tick, .. }
            | GovernanceAction::Terminate { tick, .. } => *tick,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub period: Tick,
    pub feeds: Vec<FeedSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedSpec {
    pub id: String,
    pub source: String,
    pub value: f64,
    /// Uniform noise amplitude around `value`.
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSpec {
    pub tick: Tick,
    pub from: String,
    pub to: String,
    pub deadline: Tick,
    pub record: Record,
}

fn invalid(msg: String) -> SimError {
    SimError::InvalidScenario(msg)
}

impl Scenario {
    pub fn primary(&self) -> &LedgerSpec {
        &self.ledgers[0]
    }

    pub fn ledger(&self, id: &str) -> Option<&LedgerSpec> {
        self.ledgers.iter().find(|l| l.id == id)
    }

    /// Cross-reference checks beyond what deserialisation enforces.
    pub fn validate(&self) -> Result<(), SimError> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(SimError::SchemaMismatch {
                found: self.schema_version,
                expected: SCENARIO_SCHEMA_VERSION,
            });
        }
        if self.ledgers.is_empty() {
            return Err(invalid("at least one ledger is required".into()));
        }
        let mut ids = BTreeSet::new();
        for l in &self.ledgers {
            if !ids.insert(l.id.as_str()) {
                return Err(invalid(format!("duplicate ledger `{}`", l.id)));
            }
            let mut nodes = BTreeSet::new();
            for n in &l.nodes {
                if !nodes.insert(n.id) {
                    return Err(invalid(format!("ledger `{}`: duplicate node {}", l.id, n.id)));
                }
            }
            if !l.nodes.iter().any(|n| n.role == Role::Governance) {
                return Err(invalid(format!("ledger `{}` has no governance node", l.id)));
            }
            for c in &l.channels {
                if let Some(m) = c.members.iter().find(|m| !nodes.contains(m)) {
                    return Err(invalid(format!("channel `{}`: unknown member {m}", c.name)));
                }
            }
            for s in &l.slas {
                s.validate().map_err(|e| invalid(format!("sla `{}`: {e}", s.sla_id)))?;
            }
        }
        if let Some(n) = self.notary {
            for l in &self.ledgers {
                let gov = l.nodes.iter().any(|x| x.id == n && x.role == Role::Governance);
                if !gov {
                    return Err(invalid(format!("notary {n} is not governance on `{}`", l.id)));
                }
            }
        } else if !self.transfers.is_empty() || self.faults.iter().any(|f| matches!(f, Fault::Handover { .. })) {
            return Err(invalid("transfers need a notary".into()));
        }
        self.presets
            .validate()
            .map_err(|e| invalid(format!("presets: {e}")))?;
        let paths: BTreeSet<&str> = self.paths.iter().map(|p| p.path_id.as_str()).collect();
        let mut slas = BTreeSet::new();
        for i in &self.intents {
            if !slas.insert(i.sla_id.as_str()) {
                return Err(invalid(format!("duplicate sla `{}`", i.sla_id)));
            }
            if !paths.contains(i.traffic.path.as_str()) {
                return Err(invalid(format!("intent `{}`: unknown path `{}`", i.sla_id, i.traffic.path)));
            }
            if i.traffic.sample_every == 0 || i.checkpoint_period == 0 {
                return Err(invalid(format!("intent `{}`: periods must be positive", i.sla_id)));
            }
            if let Some(c) = &i.channel {
                if !self.primary().channels.iter().any(|x| &x.name == c) {
                    return Err(invalid(format!("intent `{}`: unknown channel `{c}`", i.sla_id)));
                }
            }
        }
        for f in &self.faults {
            if let Some(l) = f.ledger() {
                if self.ledger(l).is_none() {
                    return Err(invalid(format!("fault at {}: unknown ledger `{l}`", f.tick())));
                }
            }
            if let Some(p) = f.path() {
                if !paths.contains(p) {
                    return Err(invalid(format!("fault at {}: unknown path `{p}`", f.tick())));
                }
            }
            if let Fault::Handover { sla, partner_ledger, partner_sla, weight, .. } = f {
                if !slas.contains(sla.as_str()) {
                    return Err(invalid(format!("handover: unknown sla `{sla}`")));
                }
                let partner = self.ledger(partner_ledger).expect("checked");
                if !partner.slas.iter().any(|s| &s.sla_id == partner_sla) {
                    return Err(invalid(format!("handover: `{partner_ledger}` holds no sla `{partner_sla}`")));
                }
                if !(0.0..=1.0).contains(weight) {
                    return Err(invalid(format!("handover: weight {weight} outside [0, 1]")));
                }
            }
        }
        for t in &self.transfers {
            for l in [&t.from, &t.to] {
                if self.ledger(l).is_none() {
                    return Err(invalid(format!("transfer at {}: unknown ledger `{l}`", t.tick)));
                }
            }
        }
        if let Some(o) = &self.oracle {
            if o.period == 0 {
                return Err(invalid("oracle period must be positive".into()));
            }
        }
        Ok(())
    }
}

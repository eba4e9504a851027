use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{Fault, GovernanceAction, Scenario, ScriptedResponse};
use super::{InvariantViolation, LogEvent, RunMetrics, SimError};
use crate::config::Tick;
use crate::contract::{ContractRuntime, Identity, Status};
use crate::hash::Digest;
use crate::intent::{parse_intent, translate, AgreedTerms, IntentError, NegotiationSession, RefineOutcome, Response, SessionParams};
use crate::interop::{Phase, Record, Relay};
use crate::ledger::{ChannelId, Ledger, NodeId, Role, TxOutcome, TxTally, VoteBehavior};
use crate::lifecycle::{Lifecycle, ResourceRegistry};
use crate::monitoring::{Action, CheckpointOutcome, Monitor, MonitorError, Oracle, Topology, Trust, UsageSample};
use crate::sla::{compose_weighted, Metric, Window};

/// Seed offset for the oracle's noise stream, so feeds and traffic draw
/// from independent generators.
const ORACLE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RunState {
    Agreed,
    Active,
    Done,
}

#[derive(Debug, Clone)]
struct SlaRun {
    intent: usize,
    state: RunState,
    /// Resource the SLA's usage is recorded against.
    resource: String,
    next_checkpoint: usize,
    /// Tick the SLA's current path degraded, until a reroute or a breach.
    onset: Option<Tick>,
}

/// A record written on one ledger that is relayed to another once it
/// commits.
#[derive(Debug, Clone)]
struct Outbound {
    from: usize,
    to: usize,
    tx: Digest,
    deadline: Tick,
    label: String,
}

/// A running scenario.
pub struct Simulation {
    scenario: Scenario,
    ledgers: Vec<Ledger>,
    /// Governance node of each ledger.
    governors: Vec<NodeId>,
    channels: BTreeMap<String, ChannelId>,
    rt: ContractRuntime,
    lc: Lifecycle,
    mon: Monitor,
    oracle: Option<Oracle>,
    relay: Option<Relay>,
    slas: BTreeMap<String, SlaRun>,
    outbound: Vec<Outbound>,
    malicious: BTreeMap<String, f64>,
    traffic_rng: ChaCha8Rng,
    oracle_rng: ChaCha8Rng,
    /// Blocks already swept, per ledger and channel.
    verified: Vec<BTreeMap<ChannelId, usize>>,
    alerts_seen: Vec<usize>,
    tallies: Vec<TxTally>,
    quarantined: BTreeSet<String>,
    reinstated: BTreeSet<String>,
    events: Vec<LogEvent>,
    next_tick: Tick,
    failure: Option<InvariantViolation>,
    finished: bool,
}

impl core::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Simulation")
            .field("scenario", &self.scenario.name)
            .field("next_tick", &self.next_tick)
            .field("events", &self.events.len())
            .finish()
    }
}

fn setup<E: core::fmt::Display>(e: E) -> SimError {
    SimError::Setup(e.to_string())
}

fn first_governor(spec: &super::LedgerSpec) -> NodeId {
    NodeId(
        spec.nodes
            .iter()
            .find(|n| n.role == Role::Governance)
            .expect("validated")
            .id,
    )
}

fn list<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

/// Two distinct ledgers borrowed mutably at once.
fn pair_mut(ledgers: &mut [Ledger], a: usize, b: usize) -> (&mut Ledger, &mut Ledger) {
    assert_ne!(a, b, "a transfer needs two ledgers");
    if a < b {
        let (lo, hi) = ledgers.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = ledgers.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

impl Simulation {
    /// Validates the scenario and builds its ledgers, contracts runtime,
    /// monitor, oracle and relay. `seed` overrides the scenario's.
    pub fn new(mut scenario: Scenario, seed: Option<u64>) -> Result<Self, SimError> {
        scenario.validate()?;
        if let Some(s) = seed {
            scenario.seed = s;
        }
        let cfg = scenario.config;
        let mut ledgers = Vec::new();
        let mut governors = Vec::new();
        let mut channels = BTreeMap::new();
        for (i, spec) in scenario.ledgers.iter().enumerate() {
            let nodes = spec.nodes.iter().map(|n| (NodeId(n.id), n.role));
            let mut l = Ledger::new(spec.id.clone(), cfg.ledger, nodes).map_err(setup)?;
            for n in &spec.nodes {
                l.set_link_delay(NodeId(n.id), n.link_delay).map_err(setup)?;
                l.set_behavior(NodeId(n.id), n.behavior).map_err(setup)?;
            }
            let gov = first_governor(spec);
            for c in &spec.channels {
                let id = l
                    .create_channel(gov, c.members.iter().map(|m| NodeId(*m)))
                    .map_err(setup)?;
                if i == 0 {
                    channels.insert(c.name.clone(), id);
                }
            }
            ledgers.push(l);
            governors.push(gov);
        }
        let gov = governors[0];
        let mut registry = ResourceRegistry::new();
        for r in &scenario.resources {
            registry.declare(r.id.clone(), r.capacity);
        }
        let mut topology = Topology::new();
        for p in &scenario.paths {
            topology.add_path(p.clone());
        }
        let oracle = scenario.oracle.as_ref().map(|o| {
            let mut or = Oracle::new(cfg.monitoring);
            for f in &o.feeds {
                or.add_feed(&f.id, &f.source);
            }
            or
        });
        let relay = match scenario.notary {
            Some(n) => {
                let mut r = Relay::new(NodeId(n), scenario.translation.clone(), cfg.interop);
                for (l, spec) in ledgers.iter().zip(&scenario.ledgers) {
                    r.register(l, spec.schema_version).map_err(setup)?;
                }
                Some(r)
            }
            None => None,
        };
        let n = ledgers.len();
        let mut sim = Simulation {
            rt: ContractRuntime::new(cfg.runtime, gov),
            lc: Lifecycle::new(gov, registry),
            mon: Monitor::new(cfg.monitoring, topology),
            oracle,
            relay,
            slas: BTreeMap::new(),
            outbound: Vec::new(),
            malicious: BTreeMap::new(),
            traffic_rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            oracle_rng: ChaCha8Rng::seed_from_u64(scenario.seed ^ ORACLE_STREAM),
            verified: alloc::vec![BTreeMap::new(); n],
            alerts_seen: alloc::vec![0; n],
            tallies: alloc::vec![TxTally::default(); n],
            quarantined: BTreeSet::new(),
            reinstated: BTreeSet::new(),
            events: Vec::new(),
            next_tick: 0,
            failure: None,
            finished: false,
            ledgers,
            governors,
            channels,
            scenario,
        };
        let start = LogEvent::new(0, "sim", "start")
            .with("scenario", &sim.scenario.name)
            .with("seed", sim.scenario.seed)
            .with("ledgers", list(sim.ledgers.iter().map(|l| l.id().to_string())));
        sim.log(start);
        Ok(sim)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn ledgers(&self) -> &[Ledger] {
        &self.ledgers
    }

    pub fn ledger(&self, id: &str) -> Option<&Ledger> {
        self.ledgers.iter().find(|l| l.id() == id)
    }

    pub fn primary(&self) -> &Ledger {
        &self.ledgers[0]
    }

    pub fn governor(&self) -> NodeId {
        self.governors[0]
    }

    pub fn runtime(&self) -> &ContractRuntime {
        &self.rt
    }

    pub fn lifecycle(&self) -> &Lifecycle {
        &self.lc
    }

    pub fn monitor(&self) -> &Monitor {
        &self.mon
    }

    pub fn oracle(&self) -> Option<&Oracle> {
        self.oracle.as_ref()
    }

    pub fn relay(&self) -> Option<&Relay> {
        self.relay.as_ref()
    }

    pub fn events(&self) -> &[LogEvent] {
        &self.events
    }

    pub fn metrics(&self) -> RunMetrics {
        RunMetrics::from_events(&self.events)
    }

    pub fn failure(&self) -> Option<&InvariantViolation> {
        self.failure.as_ref()
    }

    pub fn now(&self) -> Tick {
        self.next_tick
    }

    /// Mutable runtime and primary ledger, for probing final state.
    pub fn runtime_and_primary_mut(&mut self) -> (&mut ContractRuntime, &mut Ledger) {
        (&mut self.rt, &mut self.ledgers[0])
    }

    fn log(&mut self, e: LogEvent) {
        self.events.push(e);
    }

    fn ledger_index(&self, id: &str) -> usize {
        self.ledgers.iter().position(|l| l.id() == id).expect("validated ledger id")
    }

    /// Runs every remaining tick up to the scenario's duration, or up to
    /// (excluding) `until`, then performs the closing sweep. Stops at the
    /// first invariant failure.
    pub fn run(&mut self, until: Option<Tick>) -> Option<&InvariantViolation> {
        let end = until.map_or(self.scenario.duration, |u| u.min(self.scenario.duration));
        while self.failure.is_none() && self.next_tick < end {
            self.step();
        }
        if self.failure.is_none() && !self.finished {
            self.finish(end);
        }
        self.failure.as_ref()
    }

    /// Advances one tick.
    pub fn step(&mut self) {
        let t = self.next_tick;
        for l in self.ledgers.iter_mut() {
            l.advance_to(t);
        }
        self.rt.advance_clock(t);
        self.reinstated.clear();

        self.apply_faults(t);
        self.apply_governance(t);
        self.admit_intents(t);
        self.activate_due(t);
        // Checkpoint actions apply before this tick's samples are taken.
        self.run_checkpoints(t);
        self.sample_traffic(t);
        self.fire_timers(t);
        self.close_expired(t);
        self.oracle_round(t);
        self.relay_round(t);
        self.periodic_report(t);
        self.commit_rounds(t);
        if let Err(v) = self.sweep(t) {
            self.fail(v);
        }
        self.next_tick = t + 1;
    }

    fn fail(&mut self, v: InvariantViolation) {
        let e = LogEvent::new(v.tick, "invariant", "violation")
            .with("name", &v.name)
            .with("detail", &v.detail);
        self.log(e);
        self.failure = Some(v);
    }

    // ---- faults and governance ------------------------------------------

    fn apply_faults(&mut self, t: Tick) {
        let due: Vec<Fault> = self.scenario.faults.iter().filter(|f| f.tick() == t).cloned().collect();
        for f in due {
            let kind = fault_kind(&f);
            let mut e = LogEvent::new(t, "fault", kind);
            let result: Result<(), String> = match f {
                Fault::LatencySpike { path, latency_ms, .. } => {
                    e = e.with("path", &path).with("latency_ms", latency_ms);
                    if let Some(p) = self.mon.topology.path_mut(&path) {
                        p.latency_ms = latency_ms;
                    }
                    self.mark_onset(&path, t);
                    Ok(())
                }
                Fault::PathDown { path, .. } => {
                    e = e.with("path", &path);
                    if let Some(p) = self.mon.topology.path_mut(&path) {
                        p.up = false;
                    }
                    self.mark_onset(&path, t);
                    Ok(())
                }
                Fault::PathUp { path, .. } => {
                    e = e.with("path", &path);
                    if let Some(p) = self.mon.topology.path_mut(&path) {
                        p.up = true;
                    }
                    Ok(())
                }
                Fault::NodeDown { ledger, nodes, .. } | Fault::NodeUp { ledger, nodes, .. } => {
                    let up = kind == "node-up";
                    e = e.with("ledger", &ledger).with("nodes", list(&nodes));
                    let i = self.ledger_index(&ledger);
                    let l = &mut self.ledgers[i];
                    let r = nodes
                        .iter()
                        .try_for_each(|n| l.faults().set_active(NodeId(*n), up))
                        .map_err(|e| e.to_string());
                    if let Ok(q) = l.quorum(ChannelId::DEFAULT) {
                        let active = l.active_validators(ChannelId::DEFAULT).map_or(0, |v| v.len());
                        e = e.with("active", active).with("quorum", q);
                    }
                    r
                }
                Fault::NodeLeave { ledger, node, .. } => {
                    e = e.with("ledger", &ledger).with("node", node);
                    let i = self.ledger_index(&ledger);
                    match self.ledgers[i].node_leave(NodeId(node)) {
                        Ok(r) => {
                            e = e
                                .with("active", r.active_validators)
                                .with("quorum", r.quorum_next)
                                .with("below_threshold", r.below_threshold);
                            Ok(())
                        }
                        Err(err) => Err(err.to_string()),
                    }
                }
                Fault::NodeJoin { ledger, node, role, .. } => {
                    e = e.with("ledger", &ledger).with("node", node);
                    let i = self.ledger_index(&ledger);
                    match self.ledgers[i].node_join(NodeId(node), role) {
                        Ok(r) => {
                            e = e.with("active", r.active_validators).with("quorum", r.quorum_next);
                            Ok(())
                        }
                        Err(err) => Err(err.to_string()),
                    }
                }
                Fault::Collude { ledger, nodes, .. } => {
                    e = e.with("ledger", &ledger).with("nodes", list(&nodes));
                    let i = self.ledger_index(&ledger);
                    let l = &mut self.ledgers[i];
                    nodes
                        .iter()
                        .try_for_each(|n| l.set_behavior(NodeId(*n), VoteBehavior::RejectAll))
                        .map_err(|e| e.to_string())
                }
                Fault::LinkDelay { ledger, node, delay, .. } => {
                    e = e.with("ledger", &ledger).with("node", node).with("delay", delay);
                    let i = self.ledger_index(&ledger);
                    self.ledgers[i].set_link_delay(NodeId(node), delay).map_err(|e| e.to_string())
                }
                Fault::MaliciousFeed { feed, value, .. } => {
                    e = e.with("feed", &feed).with("value", value);
                    self.malicious.insert(feed, value);
                    Ok(())
                }
                Fault::HonestFeed { feed, .. } => {
                    e = e.with("feed", &feed);
                    self.malicious.remove(&feed);
                    Ok(())
                }
                Fault::PdlfOff { resource, .. } => {
                    e = e.with("resource", &resource);
                    self.mon
                        .deactivate_pdlf(&mut self.rt, &mut self.ledgers[0], &self.lc, &resource)
                        .map(|_| ())
                        .map_err(|e| e.to_string())
                }
                Fault::PdlfOn { resource, .. } => {
                    e = e.with("resource", &resource);
                    self.mon
                        .activate_pdlf(&self.lc, &resource, t)
                        .map(|_| ())
                        .map_err(|e| e.to_string())
                }
                Fault::Handover {
                    sla,
                    partner_ledger,
                    partner_sla,
                    weight,
                    deadline,
                    ..
                } => {
                    e = e.with("sla", &sla).with("partner", format!("{partner_ledger}/{partner_sla}"));
                    match self.handover(&sla, &partner_ledger, &partner_sla, weight, deadline) {
                        Ok(blended) => {
                            e = e.with("blended", blended);
                            Ok(())
                        }
                        Err(err) => Err(err),
                    }
                }
            };
            if let Err(err) = result {
                e = e.with("error", err);
            }
            self.log(e);
        }
    }

    /// Starts the detection clock for active SLAs routed over `path`.
    fn mark_onset(&mut self, path: &str, t: Tick) {
        for (id, run) in self.slas.iter_mut() {
            let on_path = self.mon.topology.route(id).is_some_and(|r| r.path == path);
            if run.state == RunState::Active && on_path && run.onset.is_none() {
                run.onset = Some(t);
            }
        }
    }

    /// Blends the SLA with its partner network's agreement and relays the
    /// blended terms to the partner ledger. Returns the blended targets.
    fn handover(
        &mut self,
        sla_id: &str,
        partner_ledger: &str,
        partner_sla: &str,
        weight: f64,
        deadline: Tick,
    ) -> Result<String, String> {
        let own = self
            .lc
            .sla(sla_id)
            .ok_or_else(|| format!("sla `{sla_id}` was never agreed"))?
            .terms
            .sla
            .clone();
        let to = self.ledger_index(partner_ledger);
        let partner = self.scenario.ledgers[to]
            .slas
            .iter()
            .find(|s| s.sla_id == partner_sla)
            .expect("validated")
            .clone();
        let blended = compose_weighted(&own, &partner, weight).map_err(|e| e.to_string())?;
        let mut record = Record::new("sla-handover", self.scenario.ledgers[0].schema_version)
            .with("sla_id", sla_id)
            .with("partner_sla", partner_sla)
            .with("weight", &weight.to_string())
            .with("valid_from", &blended.validity.start.to_string())
            .with("valid_until", &blended.validity.end.to_string());
        for s in &blended.slos {
            record = record.with(s.metric.name(), &s.target.to_string());
        }
        let summary = list(blended.slos.iter().map(|s| format!("{}={}", s.metric, s.target)));
        self.send(0, to, &record, deadline, sla_id)?;
        Ok(summary)
    }

    /// The notary writes `record` on ledger `from`; it is relayed once it
    /// commits.
    fn send(&mut self, from: usize, to: usize, record: &Record, deadline: Tick, label: &str) -> Result<(), String> {
        let notary = self.relay.as_ref().ok_or("no notary")?.notary();
        let r = self.ledgers[from]
            .submit(notary, ChannelId::DEFAULT, record.to_payload())
            .map_err(|e| e.to_string())?;
        self.outbound.push(Outbound {
            from,
            to,
            tx: r.tx_id,
            deadline,
            label: label.into(),
        });
        Ok(())
    }

    fn apply_governance(&mut self, t: Tick) {
        let due: Vec<GovernanceAction> = self
            .scenario
            .governance
            .iter()
            .filter(|g| g.tick() == t)
            .cloned()
            .collect();
        for g in due {
            match g {
                GovernanceAction::DetectCollusion { ledger, since, .. } => {
                    let i = self.ledger_index(&ledger);
                    let gov = self.governors[i];
                    let mut e = LogEvent::new(t, "governance", "collusion-check").with("ledger", &ledger);
                    match self.ledgers[i].detect_collusion(ChannelId::DEFAULT, since..t) {
                        Ok(flagged) => {
                            e = e.with("flagged", list(flagged.iter().map(|n| n.0)));
                            for n in &flagged {
                                if let Err(err) = self.ledgers[i].blacklist_node(gov, *n, "collusion") {
                                    e = e.with("error", err);
                                }
                            }
                        }
                        Err(err) => e = e.with("error", err),
                    }
                    self.log(e);
                }
                GovernanceAction::Audit { ledger, node, .. } => {
                    let i = self.ledger_index(&ledger);
                    let gov = self.governors[i];
                    let mut e = LogEvent::new(t, "governance", "audit")
                        .with("ledger", &ledger)
                        .with("node", node);
                    match self.ledgers[i].audit_node(gov, NodeId(node)) {
                        Ok(r) => {
                            let verdict = match r.verdict {
                                crate::ledger::AuditVerdict::Clean => "clean",
                                crate::ledger::AuditVerdict::Suspect => "suspect",
                            };
                            e = e.with("verdict", verdict);
                        }
                        Err(err) => e = e.with("error", err),
                    }
                    self.log(e);
                }
                GovernanceAction::ReinstateFeed { feed, .. } => {
                    let gov = self.governors[0];
                    let mut e = LogEvent::new(t, "governance", "reinstate-feed").with("feed", &feed);
                    match self.oracle.as_mut() {
                        Some(o) => match o.reinstate(&mut self.ledgers[0], gov, &feed) {
                            Ok(()) => {
                                self.quarantined.remove(&feed);
                                self.reinstated.insert(feed);
                            }
                            Err(err) => e = e.with("error", err),
                        },
                        None => e = e.with("error", "no oracle"),
                    }
                    self.log(e);
                }
                GovernanceAction::Terminate { sla, .. } => {
                    let active = self.slas.get(&sla).is_some_and(|r| r.state == RunState::Active);
                    if active {
                        self.end_sla(&sla, t);
                    } else {
                        let e = LogEvent::new(t, "governance", "terminate")
                            .with("sla", &sla)
                            .with("error", "sla is not active");
                        self.log(e);
                    }
                }
            }
        }
    }

    // ---- intents and lifecycle ------------------------------------------

    fn negotiate(&mut self, i: usize, t: Tick) -> Result<AgreedTerms, String> {
        let spec = self.scenario.intents[i].clone();
        let presets = &self.scenario.presets;
        let err = |e: IntentError| e.to_string();
        let ast = parse_intent(&spec.text, presets).map_err(err)?;
        let first = translate(&ast, presets, &self.scenario.catalogue).map_err(err)?;
        let params = SessionParams {
            sla_id: spec.sla_id.clone(),
            customer: spec.customer.clone(),
            checkpoint_period: spec.checkpoint_period,
            penalty: spec.penalty,
        };
        let proposal = |p: &crate::intent::TranslationProposal| {
            LogEvent::new(t, "intent", "proposal")
                .with("sla", &spec.sla_id)
                .with("round", p.round)
                .with("offering", &p.offering_id)
                .with("price", p.price)
                .with("slos", list(p.slos.iter().map(|s| format!("{}{}{}", s.metric, s.comparator.symbol(), s.target))))
        };
        self.events.push(proposal(&first));
        let mut session = NegotiationSession::open(first, self.scenario.catalogue.clone(), params, self.scenario.config.negotiation)
            .map_err(err)?;
        for r in &spec.responses {
            let response = match r {
                ScriptedResponse::Accept => Response::Accept,
                ScriptedResponse::Counter(asks) => Response::Counter(asks.clone()),
            };
            match session.refine(response).map_err(err)? {
                RefineOutcome::Proposal(p) => self.events.push(proposal(&p)),
                RefineOutcome::Agreed(terms) => return Ok(terms),
            }
        }
        Err("customer never accepted".into())
    }

    fn admit_intents(&mut self, t: Tick) {
        let due: Vec<usize> = (0..self.scenario.intents.len())
            .filter(|i| self.scenario.intents[*i].tick == t)
            .collect();
        for i in due {
            let sla_id = self.scenario.intents[i].sla_id.clone();
            let terms = match self.negotiate(i, t) {
                Ok(terms) => terms,
                Err(err) => {
                    let e = LogEvent::new(t, "intent", "failed").with("sla", &sla_id).with("error", err);
                    self.log(e);
                    continue;
                }
            };
            let e = LogEvent::new(t, "intent", "agreed")
                .with("sla", &sla_id)
                .with("offering", &terms.offering_id)
                .with("price", terms.price)
                .with("rounds", terms.rounds)
                .with("validity", format!("{}..{}", terms.sla.validity.start, terms.sla.validity.end))
                .with("terms", terms.digest().short());
            self.log(e);
            let channel = self.scenario.intents[i]
                .channel
                .as_ref()
                .map_or(ChannelId::DEFAULT, |c| self.channels[c]);
            match self.provision(&sla_id, terms, channel, t) {
                Ok(resource) => {
                    self.slas.insert(
                        sla_id,
                        SlaRun {
                            intent: i,
                            state: RunState::Agreed,
                            resource,
                            next_checkpoint: 0,
                            onset: None,
                        },
                    );
                }
                Err(err) => {
                    let e = LogEvent::new(t, "lifecycle", "failed").with("sla", &sla_id).with("error", err);
                    self.log(e);
                }
            }
        }
    }

    /// Records the terms and reserves resources. Returns the resource usage
    /// is recorded against.
    fn provision(&mut self, sla_id: &str, terms: AgreedTerms, channel: ChannelId, t: Tick) -> Result<String, String> {
        let ledger = &mut self.ledgers[0];
        let it = self.lc.record(&mut self.rt, ledger, terms, channel).map_err(|e| e.to_string())?;
        let plan = self.lc.orchestrate(&mut self.rt, ledger, sla_id).map_err(|e| e.to_string())?;
        let resources = plan.resources();
        let e = LogEvent::new(t, "lifecycle", "provisioned")
            .with("sla", sla_id)
            .with("channel", channel)
            .with("it_sc", it.short())
            .with("resources", list(&resources));
        self.log(e);
        Ok(resources.into_iter().next().unwrap_or_default())
    }

    fn activate_due(&mut self, t: Tick) {
        let due: Vec<String> = self
            .slas
            .iter()
            .filter(|(id, r)| r.state == RunState::Agreed && self.lc.sla(id).is_some_and(|s| s.validity().start <= t))
            .map(|(id, _)| id.clone())
            .collect();
        for id in due {
            // Access is granted as the service starts, never ahead of it.
            let ledger = &mut self.ledgers[0];
            let result = self
                .lc
                .grant_access(&mut self.rt, ledger, &id)
                .and_then(|g| self.lc.initialise(&mut self.rt, ledger, &id).map(|m| (g, m)));
            let run = self.slas.get_mut(&id).expect("tracked");
            let (grant, master) = match result {
                Ok(x) => x,
                Err(err) => {
                    run.state = RunState::Done;
                    let e = LogEvent::new(t, "lifecycle", "failed").with("sla", &id).with("error", err);
                    self.log(e);
                    continue;
                }
            };
            run.state = RunState::Active;
            let resource = run.resource.clone();
            let spec = &self.scenario.intents[run.intent];
            let path = spec.traffic.path.clone();
            let rec = self.lc.sla(&id).expect("recorded");
            let demand = rec.terms.sla.slo(Metric::ThroughputMbps).map_or(0.0, |s| s.target);
            let checkpoints = rec.checkpoints.len();
            if !resource.is_empty() {
                // Already active when another SLA shares the resource.
                let _ = self.mon.activate_pdlf(&self.lc, &resource, t);
            }
            self.mon.topology.assign(&id, &path, demand);
            let e = LogEvent::new(t, "lifecycle", "activated")
                .with("sla", &id)
                .with("master", master.short())
                .with("grantee", &grant.grantee)
                .with("grant_until", grant.expires_at)
                .with("path", path)
                .with("checkpoints", checkpoints);
            self.log(e);
        }
    }

    fn master_status(&self, sla_id: &str) -> Option<Status> {
        self.lc
            .sla(sla_id)
            .and_then(|r| r.master)
            .and_then(|m| self.rt.contract(&m))
            .map(|c| c.status)
    }

    // ---- monitoring -----------------------------------------------------

    fn sample_traffic(&mut self, t: Tick) {
        let ids: Vec<String> = self
            .slas
            .iter()
            .filter(|(_, r)| r.state == RunState::Active)
            .map(|(id, _)| id.clone())
            .collect();
        for id in ids {
            let run = &self.slas[&id];
            let traffic = self.scenario.intents[run.intent].traffic.clone();
            let resource = run.resource.clone();
            let sla = self.lc.sla(&id).expect("recorded").terms.sla.clone();
            let w = sla.validity;
            if !w.contains_tick(t) || !(t - w.start).is_multiple_of(traffic.sample_every) {
                continue;
            }
            if self.master_status(&id) != Some(Status::Active) {
                continue;
            }
            let Some(path) = self.mon.topology.current_path(&id).cloned() else {
                continue;
            };
            let (mut recorded, mut dropped) = (0u32, 0u32);
            let mut e = LogEvent::new(t, "monitoring", "sample").with("sla", &id).with("path", &path.path_id);
            for slo in &sla.slos {
                let value = match slo.metric {
                    Metric::LatencyMs => {
                        let jitter = if traffic.jitter_ms > 0.0 {
                            self.traffic_rng.gen::<f64>() * traffic.jitter_ms
                        } else {
                            0.0
                        };
                        path.latency_ms + jitter
                    }
                    Metric::ThroughputMbps if path.up => traffic.throughput_mbps.unwrap_or(slo.target),
                    Metric::ThroughputMbps => 0.0,
                    Metric::AvailabilityFraction => {
                        if path.up {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Metric::PacketLossFraction if path.up => traffic.loss,
                    Metric::PacketLossFraction => 1.0,
                };
                e = e.with(slo.metric.name(), value);
                let sample = UsageSample {
                    sla_id: id.clone(),
                    resource: resource.clone(),
                    tick: t,
                    metric: slo.metric,
                    value,
                };
                match self.mon.record_usage(&mut self.rt, &mut self.ledgers[0], &self.lc, sample) {
                    Ok(_) => recorded += 1,
                    Err(_) => dropped += 1,
                }
            }
            e = e.with("recorded", recorded).with("dropped", dropped);
            self.log(e);
        }
    }

    fn run_checkpoints(&mut self, t: Tick) {
        let ids: Vec<String> = self
            .slas
            .iter()
            .filter(|(_, r)| r.state == RunState::Active)
            .map(|(id, _)| id.clone())
            .collect();
        for id in ids {
            let rec = self.lc.sla(&id).expect("recorded");
            let checkpoints = rec.checkpoints.clone();
            let start = rec.validity().start;
            let run = self.slas.get_mut(&id).expect("tracked");
            while run.next_checkpoint < checkpoints.len() && checkpoints[run.next_checkpoint] < t {
                run.next_checkpoint += 1;
            }
            let k = run.next_checkpoint;
            if k >= checkpoints.len() || checkpoints[k] != t {
                continue;
            }
            run.next_checkpoint += 1;
            let from = if k == 0 { start } else { checkpoints[k - 1] };
            let window = Window::new(from, t);
            let out = self
                .mon
                .checkpoint(&mut self.rt, &mut self.ledgers[0], &mut self.lc, &id, window);
            let e = LogEvent::new(t, "monitoring", "checkpoint")
                .with("sla", &id)
                .with("window", format!("{}..{}", window.start, window.end));
            let e = match out {
                Ok(CheckpointOutcome::Clean(_)) => e.with("result", "clean"),
                Ok(CheckpointOutcome::Violation(ev)) => {
                    self.log(e.with("result", "violation"));
                    let run = self.slas.get_mut(&id).expect("tracked");
                    let severity = match ev.severity {
                        crate::monitoring::Severity::Warning => "warning",
                        crate::monitoring::Severity::Breach => "breach",
                    };
                    let mut v = LogEvent::new(t, "monitoring", "violation")
                        .with("sla", &id)
                        .with("severity", severity)
                        .with(
                            "cause",
                            match ev.cause {
                                crate::monitoring::ViolationCause::Objectives => "objectives",
                                crate::monitoring::ViolationCause::NoSamples => "no-samples",
                            },
                        )
                        .with(
                            "failed",
                            list(ev.failed.iter().map(|f| format!("{}={}/{}", f.metric, f.measured, f.target))),
                        );
                    if ev.severity == crate::monitoring::Severity::Breach {
                        if let Some(onset) = run.onset {
                            v = v.with("onset", onset).with("detection_latency", t - onset);
                        }
                    }
                    v = match &ev.action {
                        Action::None => v.with("action", "none"),
                        Action::Reroute { from, to } => {
                            run.onset = None;
                            v.with("action", "reroute").with("from", from).with("to", to)
                        }
                        Action::Interrupt => {
                            run.onset = None;
                            v.with("action", "interrupt")
                        }
                    };
                    if let Some(r) = ev.report {
                        v = v.with("report_tx", r.short());
                    }
                    let penalty = self.lc.sla(&id).map_or(0.0, |r| r.violations.penalty);
                    v.with("penalty", penalty)
                }
                Err(MonitorError::MasterNotActive(_)) => e.with("result", "skipped"),
                Err(err) => e.with("result", "error").with("error", err),
            };
            self.log(e);
        }
    }

    fn fire_timers(&mut self, t: Tick) {
        let fired = self.rt.tick(&mut self.ledgers[0], t);
        for r in fired {
            let kind = self.rt.contract(&r.contract_id).map_or("unknown", |c| c.kind().label());
            let e = LogEvent::new(t, "contract", "timer")
                .with("contract", r.contract_id.short())
                .with("kind", kind)
                .with("function", &r.function)
                .with("outcome", format!("{:?}", r.outcome).to_lowercase());
            self.log(e);
        }
    }

    fn close_expired(&mut self, t: Tick) {
        let due: Vec<String> = self
            .slas
            .iter()
            .filter(|(_, r)| r.state == RunState::Active)
            .filter(|(id, _)| {
                let end = self.lc.sla(id).map_or(Tick::MAX, |r| r.validity().end);
                // An interrupted master never reaches its expiry state;
                // governance closes it at the end of the validity window.
                self.lc.expired(&self.rt, id) || (t >= end && self.master_status(id) != Some(Status::Active))
            })
            .map(|(id, _)| id.clone())
            .collect();
        for id in due {
            self.end_sla(&id, t);
        }
    }

    /// Flushes and stops the SLA's recording, terminates it and files the
    /// final report.
    fn end_sla(&mut self, id: &str, t: Tick) {
        let run = self.slas.get_mut(id).expect("tracked");
        run.state = RunState::Done;
        let resource = run.resource.clone();
        let shared = self
            .slas
            .values()
            .any(|r| r.state == RunState::Active && r.resource == resource);
        if !resource.is_empty() && !shared {
            let _ = self.mon.deactivate_pdlf(&mut self.rt, &mut self.ledgers[0], &self.lc, &resource);
        }
        self.mon.topology.unassign(id);
        let gov = Identity::Node(self.governors[0]);
        let e = LogEvent::new(t, "lifecycle", "terminated").with("sla", id);
        let e = match self.lc.terminate(&mut self.rt, &mut self.ledgers[0], id, &gov) {
            Ok(proof) => {
                let term = self.lc.sla(id).and_then(|r| r.termination.clone()).expect("terminated");
                e.with("proof", proof.cleared_state_hash.short())
                    .with("early", term.early)
                    .with("by_governance", term.by_governance)
                    .with("revocation_confirmed", term.revocation_confirmed)
            }
            Err(err) => {
                let e = LogEvent::new(t, "lifecycle", "failed").with("sla", id).with("error", err);
                self.log(e);
                return;
            }
        };
        self.log(e);
        let e = match self.lc.final_report(&mut self.ledgers[0], id) {
            Ok(r) => LogEvent::new(t, "lifecycle", "final-report")
                .with("sla", id)
                .with("digest", r.digest.short())
                .with("checkpoints", r.violations.checkpoints)
                .with("warnings", r.violations.warnings)
                .with("breaches", r.violations.breaches)
                .with("penalty", r.violations.penalty),
            Err(err) => LogEvent::new(t, "lifecycle", "failed").with("sla", id).with("error", err),
        };
        self.log(e);
    }

    fn oracle_round(&mut self, t: Tick) {
        let Some(spec) = self.scenario.oracle.clone() else { return };
        let Some(oracle) = self.oracle.as_mut() else { return };
        if t == 0 || !t.is_multiple_of(spec.period) {
            return;
        }
        for f in &spec.feeds {
            let value = match self.malicious.get(&f.id) {
                Some(v) => *v,
                None if f.noise > 0.0 => f.value + f.noise * (2.0 * self.oracle_rng.gen::<f64>() - 1.0),
                None => f.value,
            };
            let _ = oracle.push(&f.id, t, value);
        }
        let e = match oracle.aggregate(t) {
            Ok(out) => {
                oracle.notify(&mut self.ledgers[0], &out);
                self.quarantined.extend(out.quarantined.iter().cloned());
                LogEvent::new(t, "oracle", "aggregate")
                    .with("value", out.value)
                    .with("flagged", list(&out.flagged))
                    .with("quarantined", list(&out.quarantined))
            }
            Err(err) => LogEvent::new(t, "oracle", "aggregate").with("error", err),
        };
        self.log(e);
    }

    fn relay_round(&mut self, t: Tick) {
        if self.relay.is_none() {
            return;
        }
        self.propose_outbound(t);
        let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
        let relay = self.relay.as_ref().expect("checked");
        for tr in relay.transfers() {
            let (s, d) = (
                self.ledger_index(&tr.source.ledger_id),
                self.ledger_index(&tr.destination.ledger_id),
            );
            let done = tr.phase == Phase::CommittedBoth || tr.settled(&self.ledgers[s], &self.ledgers[d]);
            if !done {
                pairs.insert((s, d));
            }
        }
        for (s, d) in pairs {
            let relay = self.relay.as_mut().expect("checked");
            let (src, dst) = pair_mut(&mut self.ledgers, s, d);
            let changed = relay.step(src, dst, t);
            for (id, phase) in changed {
                let e = LogEvent::new(t, "interop", "phase")
                    .with("transfer", id)
                    .with("from", src.id())
                    .with("to", dst.id())
                    .with("phase", phase.name());
                self.events.push(e);
                if phase == Phase::CommittedBoth {
                    let e = match relay.sync_check(src, dst) {
                        Ok(s) => LogEvent::new(t, "interop", "sync")
                            .with("pair", format!("{}/{}", s.pair.0, s.pair.1))
                            .with("divergence", s.divergence)
                            .with("alert", s.alert),
                        Err(err) => LogEvent::new(t, "interop", "sync").with("error", err),
                    };
                    self.events.push(e);
                }
            }
        }
    }

    fn propose_outbound(&mut self, t: Tick) {
        let pending = core::mem::take(&mut self.outbound);
        for o in pending {
            let src = &self.ledgers[o.from];
            let visible = src.commit_tick(&o.tx).is_some_and(|c| c <= t);
            match src.outcome(&o.tx) {
                Some(TxOutcome::Committed { .. }) if visible => {
                    let relay = self.relay.as_mut().expect("checked");
                    let (src, dst) = (&self.ledgers[o.from], &self.ledgers[o.to]);
                    let e = match relay.propose(src, o.tx, dst, ChannelId::DEFAULT, o.deadline) {
                        Ok(id) => LogEvent::new(t, "interop", "proposed")
                            .with("transfer", id)
                            .with("label", &o.label)
                            .with("from", src.id())
                            .with("to", dst.id())
                            .with("deadline", relay.transfer(id).map_or(0, |tr| tr.deadline)),
                        Err(err) => LogEvent::new(t, "interop", "refused")
                            .with("label", &o.label)
                            .with("from", src.id())
                            .with("to", dst.id())
                            .with("error", err),
                    };
                    self.log(e);
                }
                Some(TxOutcome::Rejected(_)) | None => {
                    let e = LogEvent::new(t, "interop", "refused")
                        .with("label", &o.label)
                        .with("error", "source record was not committed");
                    self.log(e);
                }
                _ => self.outbound.push(o),
            }
        }
        let due: Vec<super::TransferSpec> = self
            .scenario
            .transfers
            .iter()
            .filter(|x| x.tick == t)
            .cloned()
            .collect();
        for x in due {
            let (from, to) = (self.ledger_index(&x.from), self.ledger_index(&x.to));
            let label = format!("{}:{}", x.record.record_type, x.tick);
            if let Err(err) = self.send(from, to, &x.record, x.deadline, &label) {
                let e = LogEvent::new(t, "interop", "refused").with("label", label).with("error", err);
                self.log(e);
            }
        }
    }

    fn periodic_report(&mut self, t: Tick) {
        let period = self.scenario.config.monitoring.report_period;
        if t == 0 || period == 0 || !t.is_multiple_of(period) {
            return;
        }
        let gov = self.governors[0];
        let e = match self.mon.periodic_report(&mut self.ledgers[0], gov, t) {
            Ok(r) => LogEvent::new(t, "monitoring", "pdlf-report")
                .with("samples", r.sample_count)
                .with("digest", r.digest.short()),
            Err(err) => LogEvent::new(t, "monitoring", "pdlf-report").with("error", err),
        };
        self.log(e);
    }

    /// Runs consensus everywhere, then logs how many transactions reached
    /// a final outcome this tick, including those settled by rounds that
    /// contract installs run synchronously.
    fn commit_rounds(&mut self, t: Tick) {
        for i in 0..self.ledgers.len() {
            let l = &mut self.ledgers[i];
            let results = l.run_all_rounds();
            let id = l.id().to_string();
            for (ch, res) in results {
                let e = LogEvent::new(t, "ledger", "block").with("ledger", &id).with("channel", ch);
                let e = match res {
                    Ok(r) => {
                        let e = e
                            .with("txs", r.committed.len())
                            .with("refused", r.rejected.len())
                            .with("quorum", r.quorum)
                            .with("active", r.active_validators);
                        match r.block_height {
                            Some(h) => e.with("height", h),
                            None => e,
                        }
                    }
                    Err(err) => e.with("error", err),
                };
                self.events.push(e);
            }
            let now = self.ledgers[i].tally();
            let before = core::mem::replace(&mut self.tallies[i], now);
            let (committed, rejected) = (now.committed - before.committed, now.rejected - before.rejected);
            if committed + rejected > 0 {
                let e = LogEvent::new(t, "ledger", "round")
                    .with("ledger", &id)
                    .with("committed", committed)
                    .with("rejected", rejected)
                    .with("pending", now.pending);
                self.events.push(e);
            }
            let alerts = self.ledgers[i].alerts();
            let fresh: Vec<LogEvent> = alerts[self.alerts_seen[i]..]
                .iter()
                .map(|a| {
                    LogEvent::new(t, "governance", "alert")
                        .with("ledger", &id)
                        .with("alert", &a.kind)
                        .with("detail", &a.detail)
                })
                .collect();
            self.alerts_seen[i] = alerts.len();
            self.events.extend(fresh);
        }
    }

    // ---- invariants -----------------------------------------------------

    fn sweep(&mut self, t: Tick) -> Result<(), InvariantViolation> {
        let fail = |name: &str, detail: String| InvariantViolation {
            tick: t,
            name: name.into(),
            detail,
        };
        // New blocks link onto what was already checked.
        for (i, l) in self.ledgers.iter().enumerate() {
            for ch in l.channel_ids() {
                let blocks = l.blocks(ch).expect("listed channel");
                let from = self.verified[i].get(&ch).copied().unwrap_or(0);
                for (h, b) in blocks.iter().enumerate().skip(from) {
                    let linked = if h == 0 {
                        b.prev_hash == Digest::ZERO && b.txs.is_empty()
                    } else {
                        b.prev_hash == blocks[h - 1].block_hash
                    };
                    if b.height != h as u64 || !linked || !b.hash_is_consistent() {
                        return Err(fail("chain-integrity", format!("{}/{ch} corrupt at height {h}", l.id())));
                    }
                }
                self.verified[i].insert(ch, blocks.len());
            }
        }
        if let Some(v) = self.lc.registry().sweep(t).first() {
            return Err(fail("capacity", format!("{v:?}")));
        }
        if let Some(o) = self.lc.orphan_grants(&self.rt).first() {
            return Err(fail("orphan-grant", format!("sla `{}`", o.sla_id)));
        }
        if let Some(r) = self.lc.slas().find(|r| !r.milestones.ordered_so_far()) {
            return Err(fail("milestone-order", format!("sla `{}`: {:?}", r.sla_id(), r.milestones)));
        }
        let a = self.mon.accounting();
        if a.generated != a.recorded + a.dropped + self.mon.buffered() {
            return Err(fail("sample-accounting", format!("{a:?}, {} buffered", self.mon.buffered())));
        }
        if let Some(o) = &self.oracle {
            for f in &self.quarantined {
                let still = o.feed(f).is_some_and(|x| x.trust == Trust::Quarantined);
                if !still && !self.reinstated.contains(f) {
                    return Err(fail("quarantine-sticky", format!("feed `{f}` left quarantine")));
                }
            }
        }
        let primary = &self.ledgers[0];
        for ev in self.mon.events() {
            let filed = ev.report.is_some_and(|tx| primary.outcome(&tx).is_some_and(|o| o.is_committed()));
            if !filed {
                return Err(fail(
                    "violation-reported",
                    format!("violation of `{}` at {} not on the ledger", ev.sla_id, ev.checkpoint_tick),
                ));
            }
        }
        if let Some(relay) = &self.relay {
            for tr in relay.transfers() {
                let (s, d) = (
                    self.ledger_index(&tr.source.ledger_id),
                    self.ledger_index(&tr.destination.ledger_id),
                );
                let (src, dst) = (&self.ledgers[s], &self.ledgers[d]);
                let check = tr.phase == Phase::CommittedBoth || tr.settled(src, dst);
                if check && !tr.is_atomic(src, dst) {
                    return Err(fail("relay-atomicity", format!("transfer {} is one-sided", tr.transfer_id)));
                }
            }
        }
        if let Some(id) = self.lc.incomplete_reports(primary).first() {
            return Err(fail("final-report", format!("sla `{id}` has no committed report")));
        }
        Ok(())
    }

    /// Full chain verification after the last tick.
    fn finish(&mut self, end: Tick) {
        self.finished = true;
        let corrupt = self.ledgers.iter().find_map(|l| {
            l.channel_ids().find_map(|ch| match l.verify_chain(ch) {
                Ok(crate::ledger::ChainVerdict::Corrupt { height }) => {
                    Some(format!("{}/{ch} corrupt at height {height}", l.id()))
                }
                _ => None,
            })
        });
        if let Some(detail) = corrupt {
            return self.fail(InvariantViolation {
                tick: end,
                name: "chain-integrity".into(),
                detail,
            });
        }
        let m = self.metrics();
        let mut e = LogEvent::new(end, "sim", "end").with("committed", m.committed_tx);
        for l in &self.ledgers {
            let heads = list(l.channel_ids().map(|c| {
                let h = l.head_hash(c).expect("listed channel");
                format!("{c}:{}", h.short())
            }));
            e = e.with(&format!("heads.{}", l.id()), heads);
        }
        self.log(e);
    }
}

fn fault_kind(f: &Fault) -> &'static str {
    match f {
        Fault::LatencySpike { .. } => "latency-spike",
        Fault::PathDown { .. } => "path-down",
        Fault::PathUp { .. } => "path-up",
        Fault::NodeDown { .. } => "node-down",
        Fault::NodeUp { .. } => "node-up",
        Fault::NodeLeave { .. } => "node-leave",
        Fault::NodeJoin { .. } => "node-join",
        Fault::Collude { .. } => "collude",
        Fault::LinkDelay { .. } => "link-delay",
        Fault::MaliciousFeed { .. } => "malicious-feed",
        Fault::HonestFeed { .. } => "honest-feed",
        Fault::PdlfOff { .. } => "pdlf-off",
        Fault::PdlfOn { .. } => "pdlf-on",
        Fault::Handover { .. } => "handover",
    }
}

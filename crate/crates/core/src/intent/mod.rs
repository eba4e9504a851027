//! Intents: parsing, translation to SLA objectives, iterative negotiation,
//! recording the agreement, and sealed-bid auctions.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::config::{NegotiationConfig, Tick};
use crate::contract::{templates, ContractId, ContractRuntime, Identity, RuntimeError};
use crate::hash::{Canonical, Digest, Encoder};
use crate::ledger::{ChannelId, Ledger, LedgerError, NodeId, Payload};
use crate::sla::{catalogue_search, Comparator, Layer, Metric, PenaltyRule, ServiceOffering, Sla, SlaError, Slo, Window};

mod parser;

pub use parser::{parse_intent, Constraint, IntentAst, SyntaxError, TimeWindow};

pub const PRESET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IntentError {
    #[error("syntax error {0}")]
    Syntax(#[from] SyntaxError),
    #[error("unknown quality `{name}` at byte {position}")]
    UnknownQuality { name: String, position: usize },
    #[error("no throughput rate for unit `{0}`")]
    UnknownUnit(String),
    #[error("no catalogue offering satisfies the request")]
    NoFeasibleOffering,
    #[error("negotiation session is closed")]
    SessionClosed,
    #[error("negotiation exceeded {0} rounds")]
    MaxRoundsExceeded(u32),
    #[error("no bid meets the reserve")]
    NoValidBids,
    #[error("invalid bid from `{0}`")]
    InvalidBid(String),
    #[error("`{0}` bid more than once")]
    DuplicateBid(String),
    #[error("preset table schema {found}, expected {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Sla(#[from] SlaError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Deployment data mapping intent vocabulary onto objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetTable {
    pub schema_version: u32,
    /// Ticks per minute of wall-clock intent time.
    pub ticks_per_minute: u64,
    pub qualities: BTreeMap<String, Vec<Slo>>,
    /// Mbps of throughput demanded per unit of scale.
    pub throughput_per_unit: BTreeMap<String, f64>,
}

impl Default for PresetTable {
    fn default() -> Self {
        let q = |pairs: &[(Metric, f64)]| -> Vec<Slo> {
            pairs.iter().map(|(m, t)| Slo::new(*m, *t).expect("preset")).collect()
        };
        let mut qualities = BTreeMap::new();
        qualities.insert("low-latency".into(), q(&[(Metric::LatencyMs, 20.0)]));
        qualities.insert("ultra-low-latency".into(), q(&[(Metric::LatencyMs, 5.0)]));
        qualities.insert(
            "high-availability".into(),
            q(&[(Metric::AvailabilityFraction, 0.999)]),
        );
        qualities.insert(
            "reliable".into(),
            q(&[
                (Metric::AvailabilityFraction, 0.99),
                (Metric::PacketLossFraction, 0.001),
            ]),
        );
        qualities.insert("high-bandwidth".into(), q(&[(Metric::ThroughputMbps, 1000.0)]));
        let mut throughput_per_unit = BTreeMap::new();
        throughput_per_unit.insert("users".into(), 0.5);
        throughput_per_unit.insert("devices".into(), 0.1);
        throughput_per_unit.insert("cameras".into(), 8.0);
        PresetTable {
            schema_version: PRESET_SCHEMA_VERSION,
            ticks_per_minute: 1,
            qualities,
            throughput_per_unit,
        }
    }
}

impl PresetTable {
    pub fn validate(&self) -> Result<(), IntentError> {
        if self.schema_version != PRESET_SCHEMA_VERSION {
            return Err(IntentError::SchemaMismatch {
                found: self.schema_version,
                expected: PRESET_SCHEMA_VERSION,
            });
        }
        for slos in self.qualities.values() {
            for s in slos {
                s.validate()?;
            }
        }
        Ok(())
    }

    pub fn window(&self, w: &TimeWindow) -> Window {
        let start = w.start_minute as Tick * self.ticks_per_minute;
        Window::new(start, start + w.duration_minutes * self.ticks_per_minute)
    }
}

/// Keep the stricter of two objectives on the same metric.
fn tighten(slos: &mut Vec<Slo>, s: Slo) {
    match slos.iter_mut().find(|x| x.metric == s.metric) {
        Some(x) if s.met_by(x.target) => {}
        Some(x) => *x = s,
        None => slos.push(s),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationProposal {
    pub round: u32,
    pub slos: Vec<Slo>,
    pub price: f64,
    pub offering_id: String,
    pub provider: String,
    pub window: Window,
    pub rationale: Vec<String>,
}

/// Objectives an intent asks for, before any catalogue lookup.
pub fn requirements(ast: &IntentAst, presets: &PresetTable) -> Result<(Vec<Slo>, Vec<String>), IntentError> {
    let mut slos = Vec::new();
    let mut notes = Vec::new();
    for c in &ast.constraints {
        match c {
            Constraint::Quality(q) => {
                let preset = presets.qualities.get(q).ok_or_else(|| IntentError::UnknownQuality {
                    name: q.clone(),
                    position: 0,
                })?;
                for s in preset {
                    tighten(&mut slos, *s);
                }
                notes.push(format!("quality {q}"));
            }
            Constraint::Explicit(s) => {
                tighten(&mut slos, *s);
                notes.push(format!("explicit {} {} {}", s.metric, s.comparator.symbol(), s.target));
            }
        }
    }
    if let Some((n, unit)) = &ast.scale {
        let rate = presets
            .throughput_per_unit
            .get(unit)
            .ok_or_else(|| IntentError::UnknownUnit(unit.clone()))?;
        let demand = *n as f64 * rate;
        tighten(&mut slos, Slo::new(Metric::ThroughputMbps, demand)?);
        notes.push(format!("{n} {unit} x {rate} Mbps = {demand} Mbps"));
    }
    slos.sort_by_key(|s| s.metric);
    Ok((slos, notes))
}

/// First proposal for an intent: its objectives priced by the cheapest
/// offering that meets them all.
pub fn translate(
    ast: &IntentAst,
    presets: &PresetTable,
    catalogue: &[ServiceOffering],
) -> Result<TranslationProposal, IntentError> {
    let (slos, mut rationale) = requirements(ast, presets)?;
    let window = presets.window(&ast.window);
    let best = catalogue_search(catalogue, &slos, window)
        .into_iter()
        .next()
        .ok_or(IntentError::NoFeasibleOffering)?;
    rationale.push(format!("cheapest feasible offering {}", best.offering_id));
    Ok(TranslationProposal {
        round: 1,
        slos,
        price: best.price,
        offering_id: best.offering_id,
        provider: best.provider,
        window,
        rationale,
    })
}

/// The frozen outcome of a negotiation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreedTerms {
    pub sla: Sla,
    pub offering_id: String,
    pub price: f64,
    pub rounds: u32,
}

impl Canonical for AgreedTerms {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.sla)
            .str(&self.offering_id)
            .f64(self.price)
            .u32(self.rounds);
    }
}

impl AgreedTerms {
    pub fn digest(&self) -> Digest {
        self.canonical_digest()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Accept,
    /// Objectives the customer would rather have.
    Counter(Vec<Slo>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RefineOutcome {
    Proposal(TranslationProposal),
    Agreed(AgreedTerms),
}

/// What the resulting SLA needs beyond the negotiated objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionParams {
    pub sla_id: String,
    pub customer: String,
    pub checkpoint_period: Tick,
    pub penalty: PenaltyRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SessionState {
    Open,
    Agreed,
    Failed,
}

/// Step size to which countered targets are rounded.
fn granularity(m: Metric) -> f64 {
    match m {
        Metric::LatencyMs | Metric::ThroughputMbps => 1.0,
        Metric::AvailabilityFraction | Metric::PacketLossFraction => 1e-4,
    }
}

/// Half-way step from `current` toward `ask`, rounded toward the ask.
pub fn halfway(metric: Metric, current: f64, ask: f64) -> f64 {
    let g = granularity(metric);
    let mid = current + (ask - current) / 2.0;
    let q = mid / g;
    let stepped = if ask < current { libm::floor(q) } else { libm::ceil(q) } * g;
    // Never overshoot the ask itself.
    if ask < current {
        stepped.max(ask)
    } else {
        stepped.min(ask)
    }
}

/// Single-owner negotiation state machine.
#[derive(Debug, Clone)]
pub struct NegotiationSession {
    params: SessionParams,
    catalogue: Vec<ServiceOffering>,
    max_rounds: u32,
    proposals: Vec<TranslationProposal>,
    state: SessionState,
}

impl NegotiationSession {
    pub fn open(
        first: TranslationProposal,
        catalogue: Vec<ServiceOffering>,
        params: SessionParams,
        config: NegotiationConfig,
    ) -> Result<Self, IntentError> {
        let s = NegotiationSession {
            params,
            catalogue,
            max_rounds: config.max_rounds.max(1),
            proposals: vec![first],
            state: SessionState::Open,
        };
        s.terms_for(s.current())?.sla.validate()?;
        Ok(s)
    }

    pub fn current(&self) -> &TranslationProposal {
        self.proposals.last().expect("at least one proposal")
    }

    pub fn proposals(&self) -> &[TranslationProposal] {
        &self.proposals
    }

    pub fn is_open(&self) -> bool {
        self.state == SessionState::Open
    }

    fn terms_for(&self, p: &TranslationProposal) -> Result<AgreedTerms, IntentError> {
        Ok(AgreedTerms {
            sla: Sla {
                sla_id: self.params.sla_id.clone(),
                provider: p.provider.clone(),
                customer: self.params.customer.clone(),
                slos: p.slos.clone(),
                validity: p.window,
                checkpoint_period: self.params.checkpoint_period,
                penalty: self.params.penalty,
                layer: Layer::Horizontal,
                parents: Vec::new(),
            },
            offering_id: p.offering_id.clone(),
            price: p.price,
            rounds: p.round,
        })
    }

    /// Best bound any offering in the window can deliver for `metric`.
    fn feasible_bound(&self, metric: Metric, window: &Window) -> Option<f64> {
        let bounds = self
            .catalogue
            .iter()
            .filter(|o| o.available_in(window))
            .filter_map(|o| o.bound(metric).map(|b| b.target));
        match metric.comparator() {
            Comparator::Le => bounds.reduce(f64::min),
            Comparator::Ge => bounds.reduce(f64::max),
        }
    }

    pub fn refine(&mut self, response: Response) -> Result<RefineOutcome, IntentError> {
        if self.state != SessionState::Open {
            return Err(IntentError::SessionClosed);
        }
        let cur = self.current().clone();
        let asks = match response {
            Response::Accept => {
                let terms = self.terms_for(&cur)?;
                self.state = SessionState::Agreed;
                return Ok(RefineOutcome::Agreed(terms));
            }
            Response::Counter(asks) => asks,
        };
        if cur.round >= self.max_rounds {
            self.state = SessionState::Failed;
            return Err(IntentError::MaxRoundsExceeded(self.max_rounds));
        }
        let mut slos = cur.slos.clone();
        let mut rationale = Vec::new();
        for ask in asks {
            ask.validate()?;
            let m = ask.metric;
            let from = slos.iter().find(|s| s.metric == m).map(|s| s.target);
            let mut target = match from {
                Some(t) => halfway(m, t, ask.target),
                None => ask.target,
            };
            if let Some(bound) = self.feasible_bound(m, &cur.window) {
                let wanted = Slo { target, ..ask };
                if !wanted.met_by(bound) {
                    target = bound;
                    rationale.push(format!("{m} clamped to feasible {bound}"));
                }
            }
            rationale.push(format!("{m} moved to {target}"));
            tighten_replace(&mut slos, Slo { target, ..ask });
        }
        slos.sort_by_key(|s| s.metric);
        let (slos, offering) = match catalogue_search(&self.catalogue, &slos, cur.window).into_iter().next() {
            Some(o) => (slos, o),
            None => {
                rationale.push("no single offering meets the counter; targets kept".to_string());
                let o = catalogue_search(&self.catalogue, &cur.slos, cur.window)
                    .into_iter()
                    .next()
                    .ok_or(IntentError::NoFeasibleOffering)?;
                (cur.slos.clone(), o)
            }
        };
        let next = TranslationProposal {
            round: cur.round + 1,
            slos,
            price: offering.price,
            offering_id: offering.offering_id,
            provider: offering.provider,
            window: cur.window,
            rationale,
        };
        self.proposals.push(next.clone());
        Ok(RefineOutcome::Proposal(next))
    }
}

fn tighten_replace(slos: &mut Vec<Slo>, s: Slo) {
    match slos.iter_mut().find(|x| x.metric == s.metric) {
        Some(x) => *x = s,
        None => slos.push(s),
    }
}

/// Installs the intent-translation contract carrying the terms digest.
pub fn record_agreement(
    runtime: &mut ContractRuntime,
    ledger: &mut Ledger,
    terms: &AgreedTerms,
    channel: ChannelId,
    owner: Identity,
) -> Result<ContractId, RuntimeError> {
    let desc = templates::intent_translation(&terms.sla.sla_id, terms.digest(), owner);
    runtime.install_contract(ledger, desc, channel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub bidder: String,
    pub offering_id: String,
    pub amount: f64,
    pub tick: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuctionPolicy {
    SealedFirstPrice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionResult {
    pub offering_id: String,
    pub winner: String,
    pub price: f64,
    pub bids_considered: usize,
}

impl Canonical for AuctionResult {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.offering_id)
            .str(&self.winner)
            .f64(self.price)
            .u64(self.bids_considered as u64);
    }
}

/// Sealed first-price: highest amount at or above `reserve` wins and pays
/// its bid; ties go to the earliest tick, then the lowest bidder id.
pub fn run_auction(
    offering_id: &str,
    bids: &[Bid],
    reserve: f64,
    policy: AuctionPolicy,
) -> Result<AuctionResult, IntentError> {
    let AuctionPolicy::SealedFirstPrice = policy;
    let mut seen: Vec<&str> = Vec::new();
    for b in bids {
        if !(b.amount.is_finite() && b.amount > 0.0) || b.offering_id != offering_id {
            return Err(IntentError::InvalidBid(b.bidder.clone()));
        }
        if seen.contains(&b.bidder.as_str()) {
            return Err(IntentError::DuplicateBid(b.bidder.clone()));
        }
        seen.push(&b.bidder);
    }
    let valid: Vec<&Bid> = bids.iter().filter(|b| b.amount >= reserve).collect();
    let winner = valid
        .iter()
        .copied()
        .min_by(|a, b| {
            b.amount
                .total_cmp(&a.amount)
                .then(a.tick.cmp(&b.tick))
                .then_with(|| a.bidder.cmp(&b.bidder))
        })
        .ok_or(IntentError::NoValidBids)?;
    Ok(AuctionResult {
        offering_id: offering_id.to_string(),
        winner: winner.bidder.clone(),
        price: winner.amount,
        bids_considered: valid.len(),
    })
}

/// Files the auction outcome as a governance transaction.
pub fn record_auction(
    ledger: &mut Ledger,
    governance: NodeId,
    result: &AuctionResult,
) -> Result<Digest, IntentError> {
    if !ledger.is_governance(governance) {
        return Err(LedgerError::NotGovernance(governance).into());
    }
    let r = ledger.submit(
        governance,
        ChannelId::DEFAULT,
        Payload::governance("auction-result", result.canonical_bytes()),
    )?;
    Ok(r.tx_id)
}

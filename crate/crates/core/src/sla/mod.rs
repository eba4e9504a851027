//! SLA data model: objectives, penalties, catalogue offerings, compliance
//! evaluation and composition.
//!
//! Everything here is a pure value type. Targets are point values; the
//! comparator for each metric is fixed (lower-is-better for latency and
//! loss, higher-is-better for availability and throughput).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::config::Tick;
use crate::hash::{Canonical, Encoder};

#[cfg(test)]
mod tests;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    LatencyMs,
    AvailabilityFraction,
    ThroughputMbps,
    PacketLossFraction,
}

/// How per-tick samples of a metric collapse into one value for a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Mean,
    /// Share of samples at or above 0.5, i.e. ticks the service was up.
    UpFraction,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::LatencyMs,
        Metric::AvailabilityFraction,
        Metric::ThroughputMbps,
        Metric::PacketLossFraction,
    ];

    pub fn comparator(self) -> Comparator {
        match self {
            Metric::LatencyMs | Metric::PacketLossFraction => Comparator::Le,
            Metric::AvailabilityFraction | Metric::ThroughputMbps => Comparator::Ge,
        }
    }

    pub fn is_fraction(self) -> bool {
        matches!(self, Metric::AvailabilityFraction | Metric::PacketLossFraction)
    }

    pub fn aggregation(self) -> Aggregation {
        match self {
            Metric::AvailabilityFraction => Aggregation::UpFraction,
            _ => Aggregation::Mean,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::LatencyMs => "latency_ms",
            Metric::AvailabilityFraction => "availability_fraction",
            Metric::ThroughputMbps => "throughput_mbps",
            Metric::PacketLossFraction => "packet_loss_fraction",
        }
    }

    pub fn from_name(s: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == s)
    }

    fn tag(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Collapse samples with the metric's fixed statistic. `None` when empty.
pub fn aggregate(metric: Metric, samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let n = samples.len() as f64;
    Some(match metric.aggregation() {
        Aggregation::Mean => samples.iter().sum::<f64>() / n,
        Aggregation::UpFraction => samples.iter().filter(|s| **s >= 0.5).count() as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Le => "<=",
            Comparator::Ge => ">=",
        }
    }

    /// Inclusive: equality meets the target.
    pub fn holds(self, value: f64, target: f64) -> bool {
        match self {
            Comparator::Le => value <= target,
            Comparator::Ge => value >= target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SlaError {
    #[error("invalid objective for {metric}: {reason}")]
    InvalidSlo { metric: Metric, reason: &'static str },
    #[error("SLA has no objectives")]
    NoObjectives,
    #[error("more than one objective for {0}")]
    DuplicateMetric(Metric),
    #[error("validity window [{start}, {end}) is empty")]
    EmptyValidity { start: Tick, end: Tick },
    #[error("checkpoint period {period} does not divide validity length {len}")]
    BadCheckpointPeriod { period: Tick, len: Tick },
    #[error("penalty rule must be finite and non-negative")]
    InvalidPenalty,
    #[error("no measurement for {0}")]
    MissingMetric(Metric),
    #[error("window [{start}, {end}) is outside validity")]
    WindowOutOfValidity { start: Tick, end: Tick },
    #[error("empty composition chain")]
    EmptyChain,
    #[error("validity windows do not overlap")]
    DisjointValidity,
    #[error("provider `{provider}` does not match next customer `{customer}`")]
    BrokenPartyChain { provider: String, customer: String },
    #[error("the two SLAs cover different metrics")]
    MetricSetMismatch,
    #[error("weight {0} outside [0, 1]")]
    InvalidWeight(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slo {
    pub metric: Metric,
    pub comparator: Comparator,
    pub target: f64,
}

impl Slo {
    /// Objective with the metric's natural comparator, validated.
    pub fn new(metric: Metric, target: f64) -> Result<Slo, SlaError> {
        let slo = Slo {
            metric,
            comparator: metric.comparator(),
            target,
        };
        slo.validate()?;
        Ok(slo)
    }

    pub fn validate(&self) -> Result<(), SlaError> {
        let bad = |reason| {
            Err(SlaError::InvalidSlo {
                metric: self.metric,
                reason,
            })
        };
        if self.comparator != self.metric.comparator() {
            return bad("comparator points the wrong way");
        }
        if !self.target.is_finite() {
            return bad("target is not finite");
        }
        if self.metric.is_fraction() {
            if !(0.0..=1.0).contains(&self.target) {
                return bad("fraction outside [0, 1]");
            }
        } else if self.target <= 0.0 {
            return bad("target must be positive");
        }
        Ok(())
    }

    pub fn met_by(&self, value: f64) -> bool {
        self.comparator.holds(value, self.target)
    }

    /// Whether a provider promising `self` also delivers `requirement`.
    pub fn satisfies(&self, requirement: &Slo) -> bool {
        self.metric == requirement.metric && requirement.met_by(self.target)
    }
}

impl Canonical for Slo {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.metric.tag())
            .u8(self.comparator as u8)
            .f64(self.target);
    }
}

/// Half-open tick range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: Tick,
    pub end: Tick,
}

impl Window {
    pub fn new(start: Tick, end: Tick) -> Self {
        Window { start, end }
    }

    pub fn len(&self) -> Tick {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains_tick(&self, t: Tick) -> bool {
        self.start <= t && t < self.end
    }

    pub fn covers(&self, other: &Window) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn intersect(&self, other: &Window) -> Option<Window> {
        let w = Window::new(self.start.max(other.start), self.end.min(other.end));
        (!w.is_empty()).then_some(w)
    }

    pub fn overlaps(&self, other: &Window) -> bool {
        self.intersect(other).is_some()
    }
}

impl Canonical for Window {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.start).u64(self.end);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyRule {
    pub units_per_breach: f64,
    pub cap: f64,
}

impl PenaltyRule {
    pub fn validate(&self) -> Result<(), SlaError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.units_per_breach) && ok(self.cap) {
            Ok(())
        } else {
            Err(SlaError::InvalidPenalty)
        }
    }

    pub fn penalty(&self, breaches: u64) -> f64 {
        (breaches as f64 * self.units_per_breach).min(self.cap)
    }
}

impl Canonical for PenaltyRule {
    fn encode(&self, enc: &mut Encoder) {
        enc.f64(self.units_per_breach).f64(self.cap);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Vertical,
    Horizontal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sla {
    pub sla_id: String,
    pub provider: String,
    pub customer: String,
    pub slos: Vec<Slo>,
    pub validity: Window,
    pub checkpoint_period: Tick,
    pub penalty: PenaltyRule,
    pub layer: Layer,
    #[serde(default)]
    pub parents: Vec<String>,
}

impl Sla {
    pub fn validate(&self) -> Result<(), SlaError> {
        let Window { start, end } = self.validity;
        if start >= end {
            return Err(SlaError::EmptyValidity { start, end });
        }
        let len = end - start;
        if self.checkpoint_period == 0 || len % self.checkpoint_period != 0 {
            return Err(SlaError::BadCheckpointPeriod {
                period: self.checkpoint_period,
                len,
            });
        }
        if self.slos.is_empty() {
            return Err(SlaError::NoObjectives);
        }
        let mut seen = Vec::new();
        for s in &self.slos {
            s.validate()?;
            if seen.contains(&s.metric) {
                return Err(SlaError::DuplicateMetric(s.metric));
            }
            seen.push(s.metric);
        }
        self.penalty.validate()
    }

    pub fn slo(&self, metric: Metric) -> Option<&Slo> {
        self.slos.iter().find(|s| s.metric == metric)
    }

    pub fn metrics(&self) -> Vec<Metric> {
        let mut m: Vec<Metric> = self.slos.iter().map(|s| s.metric).collect();
        m.sort();
        m
    }

    /// Number of checkpoints over the validity window.
    pub fn checkpoint_count(&self) -> u64 {
        self.validity.len().div_ceil(self.checkpoint_period.max(1))
    }
}

impl Canonical for Sla {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.sla_id)
            .str(&self.provider)
            .str(&self.customer)
            .seq(&self.slos)
            .put(&self.validity)
            .u64(self.checkpoint_period)
            .put(&self.penalty)
            .u8(self.layer as u8)
            .seq(&self.parents);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVerdict {
    pub metric: Metric,
    pub target: f64,
    pub measured: f64,
    pub met: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceResult {
    pub window: Window,
    pub verdicts: Vec<MetricVerdict>,
    pub breach_count: u64,
    pub accrued_penalty: f64,
}

impl ComplianceResult {
    pub fn failed(&self) -> impl Iterator<Item = &MetricVerdict> {
        self.verdicts.iter().filter(|v| !v.met)
    }
}

/// Check every objective against its window aggregate.
pub fn evaluate(
    sla: &Sla,
    window: Window,
    measurements: &BTreeMap<Metric, f64>,
) -> Result<ComplianceResult, SlaError> {
    if window.is_empty() || !sla.validity.covers(&window) {
        return Err(SlaError::WindowOutOfValidity {
            start: window.start,
            end: window.end,
        });
    }
    let mut verdicts = Vec::with_capacity(sla.slos.len());
    for slo in &sla.slos {
        let measured = *measurements
            .get(&slo.metric)
            .ok_or(SlaError::MissingMetric(slo.metric))?;
        verdicts.push(MetricVerdict {
            metric: slo.metric,
            target: slo.target,
            measured,
            met: slo.met_by(measured),
        });
    }
    let breach_count = verdicts.iter().filter(|v| !v.met).count() as u64;
    Ok(ComplianceResult {
        window,
        verdicts,
        breach_count,
        accrued_penalty: sla.penalty.penalty(breach_count),
    })
}

fn gcd(a: Tick, b: Tick) -> Tick {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn combine_serial(metric: Metric, a: f64, b: f64) -> f64 {
    match metric {
        Metric::LatencyMs => a + b,
        Metric::AvailabilityFraction => a * b,
        Metric::ThroughputMbps => a.min(b),
        Metric::PacketLossFraction => 1.0 - (1.0 - a) * (1.0 - b),
    }
}

fn serial_pair(a: &Sla, b: &Sla) -> Result<Sla, SlaError> {
    if b.layer == Layer::Horizontal && a.provider != b.customer {
        return Err(SlaError::BrokenPartyChain {
            provider: a.provider.clone(),
            customer: b.customer.clone(),
        });
    }
    let validity = a
        .validity
        .intersect(&b.validity)
        .ok_or(SlaError::DisjointValidity)?;
    let mut slos = Vec::new();
    for metric in Metric::ALL {
        let target = match (a.slo(metric), b.slo(metric)) {
            (Some(x), Some(y)) => combine_serial(metric, x.target, y.target),
            (Some(x), None) | (None, Some(x)) => x.target,
            (None, None) => continue,
        };
        slos.push(Slo {
            metric,
            comparator: metric.comparator(),
            target,
        });
    }
    Ok(Sla {
        sla_id: String::new(),
        provider: b.provider.clone(),
        customer: a.customer.clone(),
        slos,
        validity,
        checkpoint_period: gcd(gcd(a.checkpoint_period, b.checkpoint_period), validity.len()),
        penalty: PenaltyRule {
            units_per_breach: a.penalty.units_per_breach + b.penalty.units_per_breach,
            cap: a.penalty.cap + b.penalty.cap,
        },
        layer: a.layer,
        parents: Vec::new(),
    })
}

/// End-to-end SLA for a chain of segments traversed in order.
///
/// A link into a horizontal segment requires the previous provider to be
/// that segment's customer. Metrics absent from a segment are taken from the
/// segments that do specify them.
pub fn compose_serial(chain: &[Sla]) -> Result<Sla, SlaError> {
    let (first, rest) = chain.split_first().ok_or(SlaError::EmptyChain)?;
    let mut acc = first.clone();
    for next in rest {
        acc = serial_pair(&acc, next)?;
    }
    let ids: Vec<&str> = chain.iter().map(|s| s.sla_id.as_str()).collect();
    acc.sla_id = format!("serial({})", ids.join(","));
    acc.parents = chain.iter().map(|s| s.sla_id.clone()).collect();
    Ok(acc)
}

/// Coverage-weighted blend of two SLAs for the same service, e.g. a private
/// network and a public one sharing a route. `weight_first` is the
/// fraction of time the first covers.
pub fn compose_weighted(first: &Sla, second: &Sla, weight_first: f64) -> Result<Sla, SlaError> {
    if !(0.0..=1.0).contains(&weight_first) {
        return Err(SlaError::InvalidWeight(weight_first));
    }
    if first.metrics() != second.metrics() {
        return Err(SlaError::MetricSetMismatch);
    }
    let validity = first
        .validity
        .intersect(&second.validity)
        .ok_or(SlaError::DisjointValidity)?;
    let w = weight_first;
    let slos = first
        .slos
        .iter()
        .map(|a| {
            let b = second.slo(a.metric).expect("metric sets match");
            Slo {
                metric: a.metric,
                comparator: a.comparator,
                target: w * a.target + (1.0 - w) * b.target,
            }
        })
        .collect();
    let penalty = if second.penalty.units_per_breach > first.penalty.units_per_breach {
        second.penalty
    } else {
        first.penalty
    };
    let provider = if first.provider == second.provider {
        first.provider.clone()
    } else {
        format!("{}+{}", first.provider, second.provider)
    };
    Ok(Sla {
        sla_id: format!("weighted({},{})", first.sla_id, second.sla_id),
        provider,
        customer: first.customer.clone(),
        slos,
        validity,
        checkpoint_period: gcd(
            gcd(first.checkpoint_period, second.checkpoint_period),
            validity.len(),
        ),
        penalty,
        layer: first.layer,
        parents: alloc::vec![first.sla_id.clone(), second.sla_id.clone()],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceOffering {
    pub offering_id: String,
    #[serde(default)]
    pub tags: Vec<String>,
    /// What the provider can deliver at best.
    pub bounds: Vec<Slo>,
    pub price: f64,
    pub capacity: f64,
    pub provider: String,
    /// When the offering can be booked; `None` means always.
    #[serde(default)]
    pub available: Option<Window>,
}

impl ServiceOffering {
    pub fn validate(&self) -> Result<(), SlaError> {
        let mut seen = Vec::new();
        for b in &self.bounds {
            b.validate()?;
            if seen.contains(&b.metric) {
                return Err(SlaError::DuplicateMetric(b.metric));
            }
            seen.push(b.metric);
        }
        Ok(())
    }

    pub fn bound(&self, metric: Metric) -> Option<&Slo> {
        self.bounds.iter().find(|s| s.metric == metric)
    }

    pub fn satisfies_all(&self, requirements: &[Slo]) -> bool {
        requirements
            .iter()
            .all(|r| self.bound(r.metric).is_some_and(|b| b.satisfies(r)))
    }

    pub fn available_in(&self, window: &Window) -> bool {
        self.capacity > 0.0 && self.available.is_none_or(|a| a.covers(window))
    }
}

impl Canonical for ServiceOffering {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.offering_id)
            .seq(&self.tags)
            .seq(&self.bounds)
            .f64(self.price)
            .f64(self.capacity)
            .str(&self.provider);
        match &self.available {
            None => enc.u8(0),
            Some(w) => enc.u8(1).put(w),
        };
    }
}

/// Offerings that meet every requirement and have capacity in `window`,
/// cheapest first, ties by id.
pub fn catalogue_search(
    catalogue: &[ServiceOffering],
    requirements: &[Slo],
    window: Window,
) -> Vec<ServiceOffering> {
    let mut hits: Vec<ServiceOffering> = catalogue
        .iter()
        .filter(|o| o.available_in(&window) && o.satisfies_all(requirements))
        .cloned()
        .collect();
    hits.sort_by(|a, b| {
        a.price
            .total_cmp(&b.price)
            .then_with(|| a.offering_id.cmp(&b.offering_id))
    });
    hits
}

//! Usage recording through per-resource ledger functions (PDLFs), periodic
//! governance reports, checkpoint evaluation with corrective action, and an
//! internal oracle that aggregates external feeds.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::config::{MonitoringConfig, Tick};
use crate::contract::{templates, Command, ContentRef, ContractRuntime, ControlInstruction, Identity, RuntimeError, Status, Value};
use crate::hash::{Canonical, Digest, Encoder};
use crate::lifecycle::{CheckpointKind, Lifecycle, LifecycleError};
use crate::ledger::{ChannelId, Ledger, LedgerError, Payload};
use crate::sla::{aggregate, evaluate, ComplianceResult, Metric, MetricVerdict, Window};

mod oracle;
mod topology;

pub use oracle::*;
pub use topology::*;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MonitorError {
    #[error("resource `{0}` is not registered")]
    UnknownResource(String),
    #[error("PDLF for `{0}` is inactive")]
    PdlfInactive(String),
    #[error("recording contract for `{0}` is not active")]
    ContractNotActive(String),
    #[error("unknown SLA `{0}`")]
    UnknownSla(String),
    #[error("master contract for `{0}` is not active")]
    MasterNotActive(String),
    #[error("corrective action needs a breach, got a warning")]
    NotABreach,
    #[error("sample value is not finite")]
    NonFiniteSample,
    #[error("period ending at {0} has not elapsed")]
    PeriodNotElapsed(Tick),
    #[error("only {live} live feeds; at least 3 needed")]
    InsufficientFeeds { live: usize },
    #[error("unknown feed `{0}`")]
    UnknownFeed(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageSample {
    pub sla_id: String,
    pub resource: String,
    pub tick: Tick,
    pub metric: Metric,
    pub value: f64,
}

impl Canonical for UsageSample {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.sla_id)
            .str(&self.resource)
            .u64(self.tick)
            .str(self.metric.name())
            .f64(self.value);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdlfState {
    pub resource: String,
    pub active: bool,
    pub buffer: Vec<UsageSample>,
    pub recorded: u64,
    pub dropped: u64,
    pub last_report_tick: Tick,
    /// Start of the current active stretch.
    active_since: Option<Tick>,
    /// Active ticks accumulated since the last report.
    uptime: Tick,
}

impl PdlfState {
    fn new(resource: &str) -> Self {
        PdlfState {
            resource: resource.into(),
            active: false,
            buffer: Vec::new(),
            recorded: 0,
            dropped: 0,
            last_report_tick: 0,
            active_since: None,
            uptime: 0,
        }
    }

    fn uptime_until(&self, tick: Tick) -> Tick {
        self.uptime + self.active_since.map_or(0, |s| tick.saturating_sub(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdlfCounters {
    pub resource: String,
    pub recorded: u64,
    pub dropped: u64,
    pub uptime: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GovernanceReport {
    pub period: Window,
    pub sample_count: u64,
    pub samples_digest: Digest,
    pub pdlfs: Vec<PdlfCounters>,
    pub digest: Digest,
}

impl GovernanceReport {
    fn body_digest(&self) -> Digest {
        let mut enc = Encoder::new();
        enc.put(&self.period)
            .u64(self.sample_count)
            .digest(&self.samples_digest)
            .u32(self.pdlfs.len() as u32);
        for p in &self.pdlfs {
            enc.str(&p.resource).u64(p.recorded).u64(p.dropped).u64(p.uptime);
        }
        Digest::of(enc.as_slice())
    }

    pub fn digest_is_consistent(&self) -> bool {
        self.digest == self.body_digest()
    }
}

/// Digest over a run of samples, in recording order.
pub fn samples_digest(samples: &[UsageSample]) -> Digest {
    let mut enc = Encoder::new();
    enc.seq(samples);
    Digest::of(enc.as_slice())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Breach,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    None,
    Reroute { from: String, to: String },
    Interrupt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationCause {
    Objectives,
    NoSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationEvent {
    pub sla_id: String,
    pub checkpoint_tick: Tick,
    pub cause: ViolationCause,
    pub failed: Vec<MetricVerdict>,
    pub severity: Severity,
    pub action: Action,
    /// Governance transaction carrying the violation report.
    pub report: Option<Digest>,
}

impl Canonical for ViolationEvent {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.sla_id)
            .u64(self.checkpoint_tick)
            .u8(self.cause as u8)
            .u32(self.failed.len() as u32);
        for v in &self.failed {
            enc.str(v.metric.name()).f64(v.target).f64(v.measured);
        }
        enc.u8(self.severity as u8);
        match &self.action {
            Action::None => enc.u8(0),
            Action::Reroute { from, to } => enc.u8(1).str(from).str(to),
            Action::Interrupt => enc.u8(2),
        };
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointOutcome {
    Clean(ComplianceResult),
    Violation(ViolationEvent),
}

/// What a flush wrote: one transaction per on-chain sample, one content
/// reference per off-chain batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Flushed {
    pub onchain_txs: Vec<Digest>,
    pub offchain_refs: Vec<ContentRef>,
}

/// Outcome of a corrective action.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionOutcome {
    pub action: Action,
    pub report_tx: Digest,
}

/// Relative miss of a failed objective, as a fraction of its target.
fn miss_margin(v: &MetricVerdict) -> f64 {
    if v.target == 0.0 {
        return f64::INFINITY;
    }
    libm::fabs(v.measured - v.target) / libm::fabs(v.target)
}

/// Classify an evaluated window: one failed metric inside the warning band
/// is a warning, anything else failing is a breach.
pub fn classify(result: &ComplianceResult, warn_margin: f64) -> Option<Severity> {
    let failed: Vec<&MetricVerdict> = result.failed().collect();
    match failed.as_slice() {
        [] => None,
        [only] if miss_margin(only) < warn_margin => Some(Severity::Warning),
        _ => Some(Severity::Breach),
    }
}

/// Decides how serious an evaluated window is. Swappable so smarter
/// detectors can be plugged in; [`RuleBased`] is the default.
pub trait AnomalyPolicy: core::fmt::Debug {
    fn classify(&self, result: &ComplianceResult) -> Option<Severity>;
}

/// Threshold rule: see [`classify`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleBased {
    pub warn_margin: f64,
}

impl AnomalyPolicy for RuleBased {
    fn classify(&self, result: &ComplianceResult) -> Option<Severity> {
        classify(result, self.warn_margin)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accounting {
    pub generated: u64,
    pub recorded: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone)]
pub struct Monitor {
    config: MonitoringConfig,
    pdlfs: BTreeMap<String, PdlfState>,
    /// Samples that reached the ledger, per SLA.
    store: BTreeMap<String, Vec<UsageSample>>,
    /// Samples recorded since the last periodic report.
    period_samples: Vec<UsageSample>,
    last_report_tick: Option<Tick>,
    reports: Vec<GovernanceReport>,
    events: Vec<ViolationEvent>,
    accounting: Accounting,
    policy: Arc<dyn AnomalyPolicy>,
    pub topology: Topology,
}

impl Monitor {
    pub fn new(config: MonitoringConfig, topology: Topology) -> Self {
        Monitor {
            config,
            pdlfs: BTreeMap::new(),
            store: BTreeMap::new(),
            period_samples: Vec::new(),
            last_report_tick: None,
            reports: Vec::new(),
            events: Vec::new(),
            accounting: Accounting::default(),
            policy: Arc::new(RuleBased {
                warn_margin: config.warn_margin,
            }),
            topology,
        }
    }

    pub fn with_policy(mut self, policy: Arc<dyn AnomalyPolicy>) -> Self {
        self.policy = policy;
        self
    }

    pub fn config(&self) -> &MonitoringConfig {
        &self.config
    }

    pub fn pdlf(&self, resource: &str) -> Option<&PdlfState> {
        self.pdlfs.get(resource)
    }

    pub fn reports(&self) -> &[GovernanceReport] {
        &self.reports
    }

    pub fn events(&self) -> &[ViolationEvent] {
        &self.events
    }

    pub fn accounting(&self) -> &Accounting {
        &self.accounting
    }

    pub fn samples(&self, sla_id: &str) -> &[UsageSample] {
        self.store.get(sla_id).map_or(&[], |v| v.as_slice())
    }

    pub fn buffered(&self) -> u64 {
        self.pdlfs.values().map(|p| p.buffer.len() as u64).sum()
    }

    fn pdlf_mut(&mut self, lc: &Lifecycle, resource: &str) -> Result<&mut PdlfState, MonitorError> {
        if !lc.registry().contains(resource) {
            return Err(MonitorError::UnknownResource(resource.into()));
        }
        Ok(self
            .pdlfs
            .entry(resource.into())
            .or_insert_with(|| PdlfState::new(resource)))
    }

    pub fn activate_pdlf(&mut self, lc: &Lifecycle, resource: &str, now: Tick) -> Result<PdlfState, MonitorError> {
        let p = self.pdlf_mut(lc, resource)?;
        if !p.active {
            p.active = true;
            p.active_since = Some(now);
        }
        Ok(p.clone())
    }

    /// Flushes the buffer to the ledger, then stops recording.
    pub fn deactivate_pdlf(
        &mut self,
        rt: &mut ContractRuntime,
        ledger: &mut Ledger,
        lc: &Lifecycle,
        resource: &str,
    ) -> Result<PdlfState, MonitorError> {
        self.pdlf_mut(lc, resource)?;
        self.flush(rt, ledger, lc, resource)?;
        let now = rt.now();
        let p = self.pdlfs.get_mut(resource).expect("present");
        if let Some(s) = p.active_since.take() {
            p.uptime += now.saturating_sub(s);
        }
        p.active = false;
        Ok(p.clone())
    }

    /// Gate shared by direct recording and buffering: counts the sample and
    /// drops it when the PDLF is off.
    fn admit(&mut self, lc: &Lifecycle, sample: &UsageSample) -> Result<(), MonitorError> {
        if !sample.value.is_finite() {
            return Err(MonitorError::NonFiniteSample);
        }
        self.accounting.generated += 1;
        let p = self.pdlf_mut(lc, &sample.resource);
        let p = match p {
            Ok(p) => p,
            Err(e) => {
                self.accounting.dropped += 1;
                return Err(e);
            }
        };
        if !p.active {
            p.dropped += 1;
            self.accounting.dropped += 1;
            return Err(MonitorError::PdlfInactive(sample.resource.clone()));
        }
        Ok(())
    }

    fn recording_contract(
        rt: &ContractRuntime,
        lc: &Lifecycle,
        sla_id: &str,
    ) -> Result<crate::contract::ContractId, MonitorError> {
        let rec = lc.sla(sla_id).ok_or_else(|| MonitorError::UnknownSla(sla_id.into()))?;
        let sr = rec
            .sr_sc
            .filter(|id| rt.contract(id).is_some_and(|c| c.status == Status::Active))
            .ok_or_else(|| MonitorError::ContractNotActive(sla_id.into()))?;
        Ok(sr)
    }

    fn write_one(
        &mut self,
        rt: &mut ContractRuntime,
        ledger: &mut Ledger,
        lc: &Lifecycle,
        sample: UsageSample,
    ) -> Result<Digest, MonitorError> {
        let sr = Self::recording_contract(rt, lc, &sample.sla_id)?;
        let mut args = BTreeMap::new();
        args.insert("sample".to_string(), Value::Digest(sample.canonical_digest()));
        let rec = rt.invoke(
            ledger,
            &sr,
            "record",
            templates::pdlf_identity(&sample.resource),
            args,
        )?;
        self.accept(sample);
        Ok(rec.tx_id.expect("invocations are submitted"))
    }

    fn accept(&mut self, sample: UsageSample) {
        self.accounting.recorded += 1;
        if let Some(p) = self.pdlfs.get_mut(&sample.resource) {
            p.recorded += 1;
        }
        self.period_samples.push(sample.clone());
        self.store.entry(sample.sla_id.clone()).or_default().push(sample);
    }

    /// Records one sample through the SLA's recording contract.
    pub fn record_usage(
        &mut self,
        rt: &mut ContractRuntime,
        ledger: &mut Ledger,
        lc: &Lifecycle,
        sample: UsageSample,
    ) -> Result<Digest, MonitorError> {
        self.admit(lc, &sample)?;
        match self.write_one(rt, ledger, lc, sample) {
            Ok(tx) => Ok(tx),
            Err(e) => {
                self.accounting.dropped += 1;
                Err(e)
            }
        }
    }

    /// Holds a sample in the PDLF until the next flush.
    pub fn buffer_usage(&mut self, lc: &Lifecycle, sample: UsageSample) -> Result<(), MonitorError> {
        self.admit(lc, &sample)?;
        self.pdlfs
            .get_mut(&sample.resource)
            .expect("admitted")
            .buffer
            .push(sample);
        Ok(())
    }

    /// Writes buffered samples. Per SLA, a batch whose encoding exceeds the
    /// on-chain payload limit goes off-chain with a single reference on the
    /// ledger; smaller batches are recorded sample by sample.
    pub fn flush(
        &mut self,
        rt: &mut ContractRuntime,
        ledger: &mut Ledger,
        lc: &Lifecycle,
        resource: &str,
    ) -> Result<Flushed, MonitorError> {
        let Some(p) = self.pdlfs.get_mut(resource) else {
            return Err(MonitorError::UnknownResource(resource.into()));
        };
        let batch = core::mem::take(&mut p.buffer);
        let mut by_sla: BTreeMap<String, Vec<UsageSample>> = BTreeMap::new();
        for s in batch {
            by_sla.entry(s.sla_id.clone()).or_default().push(s);
        }
        let mut out = Flushed::default();
        let mut pending: u64 = by_sla.values().map(|v| v.len() as u64).sum();
        let result = self.flush_groups(rt, ledger, lc, by_sla, &mut out, &mut pending);
        // Whatever could not be written is lost, and counted as such.
        self.accounting.dropped += pending;
        result.map(|_| out)
    }

    fn flush_groups(
        &mut self,
        rt: &mut ContractRuntime,
        ledger: &mut Ledger,
        lc: &Lifecycle,
        by_sla: BTreeMap<String, Vec<UsageSample>>,
        out: &mut Flushed,
        pending: &mut u64,
    ) -> Result<(), MonitorError> {
        let limit = rt.config().onchain_payload_limit;
        for (sla_id, samples) in by_sla {
            let sr = Self::recording_contract(rt, lc, &sla_id)?;
            let mut enc = Encoder::new();
            enc.seq(&samples);
            let bytes = enc.finish();
            if bytes.len() > limit {
                let r = rt.store_offchain(ledger, &sr, bytes)?;
                out.offchain_refs.push(r);
                for s in samples {
                    *pending -= 1;
                    self.accept(s);
                }
            } else {
                for s in samples {
                    let tx = self.write_one(rt, ledger, lc, s)?;
                    *pending -= 1;
                    out.onchain_txs.push(tx);
                }
            }
        }
        Ok(())
    }

    /// Summarises the period since the last report for governance. Emitted
    /// even when nothing was recorded.
    pub fn periodic_report(&mut self, ledger: &mut Ledger, governance: crate::ledger::NodeId, period_end: Tick) -> Result<GovernanceReport, MonitorError> {
        let start = self.last_report_tick.unwrap_or(0);
        if self.last_report_tick.is_some_and(|t| period_end <= t) {
            return Err(MonitorError::PeriodNotElapsed(period_end));
        }
        let samples = core::mem::take(&mut self.period_samples);
        let pdlfs = self
            .pdlfs
            .values_mut()
            .map(|p| {
                let c = PdlfCounters {
                    resource: p.resource.clone(),
                    recorded: p.recorded,
                    dropped: p.dropped,
                    uptime: p.uptime_until(period_end),
                };
                p.uptime = 0;
                if p.active_since.is_some() {
                    p.active_since = Some(period_end);
                }
                p.last_report_tick = period_end;
                c
            })
            .collect();
        let mut report = GovernanceReport {
            period: Window::new(start, period_end),
            sample_count: samples.len() as u64,
            samples_digest: samples_digest(&samples),
            pdlfs,
            digest: Digest::ZERO,
        };
        report.digest = report.body_digest();
        ledger.submit(
            governance,
            ChannelId::DEFAULT,
            Payload::governance("pdlf-report", report.digest.as_bytes().to_vec()),
        )?;
        self.last_report_tick = Some(period_end);
        self.reports.push(report.clone());
        Ok(report)
    }

    /// Evaluates the window ending at `window.end` against the SLA. Breaches
    /// trigger corrective action; every violation is reported to
    /// governance and tallied for the final report.
    pub fn checkpoint(
        &mut self,
        rt: &mut ContractRuntime,
        ledger: &mut Ledger,
        lc: &mut Lifecycle,
        sla_id: &str,
        window: Window,
    ) -> Result<CheckpointOutcome, MonitorError> {
        let rec = lc.sla(sla_id).ok_or_else(|| MonitorError::UnknownSla(sla_id.into()))?;
        let master = rec
            .master
            .filter(|m| rt.contract(m).is_some_and(|c| c.status == Status::Active))
            .ok_or_else(|| MonitorError::MasterNotActive(sla_id.into()))?;
        let sla = rec.terms.sla.clone();
        let mut per_metric: BTreeMap<Metric, Vec<f64>> = BTreeMap::new();
        for s in self.samples(sla_id).iter().filter(|s| window.contains_tick(s.tick)) {
            per_metric.entry(s.metric).or_default().push(s.value);
        }
        let measured: BTreeMap<Metric, f64> = per_metric
            .iter()
            .filter_map(|(m, v)| aggregate(*m, v).map(|a| (*m, a)))
            .collect();
        let has_all = sla.slos.iter().all(|s| measured.contains_key(&s.metric));
        let (kind, event) = if !has_all {
            let ev = ViolationEvent {
                sla_id: sla_id.into(),
                checkpoint_tick: window.end,
                cause: ViolationCause::NoSamples,
                failed: Vec::new(),
                severity: Severity::Warning,
                action: Action::None,
                report: None,
            };
            (CheckpointKind::Warning, Some(ev))
        } else {
            let result = evaluate(&sla, window, &measured).map_err(|_| MonitorError::UnknownSla(sla_id.into()))?;
            match self.policy.classify(&result) {
                None => {
                    self.mark(rt, ledger, &master, "clean")?;
                    lc.note_checkpoint(sla_id, CheckpointKind::Clean, 0)?;
                    return Ok(CheckpointOutcome::Clean(result));
                }
                Some(sev) => {
                    let ev = ViolationEvent {
                        sla_id: sla_id.into(),
                        checkpoint_tick: window.end,
                        cause: ViolationCause::Objectives,
                        failed: result.failed().cloned().collect(),
                        severity: sev,
                        action: Action::None,
                        report: None,
                    };
                    let kind = match sev {
                        Severity::Warning => CheckpointKind::Warning,
                        Severity::Breach => CheckpointKind::Breach,
                    };
                    (kind, Some(ev))
                }
            }
        };
        let mut ev = event.expect("violation");
        self.mark(rt, ledger, &master, if kind == CheckpointKind::Breach { "breach" } else { "warning" })?;
        lc.note_checkpoint(sla_id, kind, ev.failed.len() as u64)?;
        if ev.severity == Severity::Breach {
            let outcome = self.corrective_action(rt, ledger, lc, &ev)?;
            ev.action = outcome.action;
            ev.report = Some(outcome.report_tx);
        } else {
            ev.report = Some(file_report(ledger, lc, &ev)?);
        }
        self.events.push(ev.clone());
        Ok(CheckpointOutcome::Violation(ev))
    }

    fn mark(
        &mut self,
        rt: &mut ContractRuntime,
        ledger: &mut Ledger,
        master: &crate::contract::ContractId,
        verdict: &str,
    ) -> Result<(), MonitorError> {
        let owner = rt
            .contract(master)
            .map(|c| c.descriptor.owner.clone())
            .unwrap_or(Identity::System);
        let mut args = BTreeMap::new();
        args.insert("verdict".to_string(), Value::Text(verdict.into()));
        rt.invoke(ledger, master, "checkpoint", owner, args)?;
        Ok(())
    }

    /// Reroutes to the lowest-id feasible alternate path, or asks governance
    /// to interrupt the master contract when none exists. A report is filed
    /// either way.
    pub fn corrective_action(
        &mut self,
        rt: &mut ContractRuntime,
        ledger: &mut Ledger,
        lc: &mut Lifecycle,
        event: &ViolationEvent,
    ) -> Result<ActionOutcome, MonitorError> {
        if event.severity != Severity::Breach {
            return Err(MonitorError::NotABreach);
        }
        let sla_id = event.sla_id.as_str();
        let rec = lc.sla(sla_id).ok_or_else(|| MonitorError::UnknownSla(sla_id.into()))?;
        let latency_target = rec.terms.sla.slo(Metric::LatencyMs).map(|s| s.target);
        let so = rec.plan.as_ref().map(|p| p.so_contract);
        let master = rec.master;
        let owner = Identity::Node(lc.governance());
        let action = match (self.topology.alternate(sla_id, latency_target), so) {
            (Some(to), Some(so)) => {
                let from = self.topology.route(sla_id).map(|r| r.path.clone()).unwrap_or_default();
                let mut args = BTreeMap::new();
                args.insert("path".to_string(), Value::Text(to.clone()));
                rt.invoke(ledger, &so, "reroute", owner, args)?;
                self.topology.reassign(sla_id, &to);
                Action::Reroute { from, to }
            }
            _ => {
                if let Some(m) = master {
                    rt.apply_control(
                        ledger,
                        ControlInstruction {
                            issuer: lc.governance(),
                            target: m,
                            command: Command::Interrupt,
                            tick: rt.now(),
                        },
                    )?;
                }
                Action::Interrupt
            }
        };
        let filed = ViolationEvent {
            action: action.clone(),
            ..event.clone()
        };
        let report_tx = file_report(ledger, lc, &filed)?;
        Ok(ActionOutcome { action, report_tx })
    }
}

fn file_report(ledger: &mut Ledger, lc: &Lifecycle, ev: &ViolationEvent) -> Result<Digest, MonitorError> {
    let r = ledger.submit(
        lc.governance(),
        ChannelId::DEFAULT,
        Payload::governance("violation-report", ev.canonical_bytes()),
    )?;
    Ok(r.tx_id)
}

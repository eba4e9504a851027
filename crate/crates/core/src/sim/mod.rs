//! Deterministic scenario driver.
//!
//! A [`Scenario`] scripts intents, faults and governance actions against a
//! set of ledgers; [`Simulation`] steps it tick by tick, appends a
//! [`LogEvent`] for everything that happens and sweeps the cross-module
//! invariants after every tick. [`RunMetrics`] are derived from the event
//! log alone so a saved log can be re-scored without re-running.

mod engine;
mod scenario;
#[cfg(test)]
mod tests;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::*;
pub use scenario::*;

use crate::config::Tick;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("scenario schema {found}, expected {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("setup failed: {0}")]
    Setup(String),
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEvent {
    pub tick: Tick,
    pub module: String,
    pub kind: String,
    #[serde(default)]
    pub data: BTreeMap<String, String>,
}

impl LogEvent {
    pub fn new(tick: Tick, module: &str, kind: &str) -> Self {
        LogEvent {
            tick,
            module: module.into(),
            kind: kind.into(),
            data: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.data.insert(key.into(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.data.get(key).map(String::as_str)
    }

    fn num<T: core::str::FromStr>(&self, key: &str) -> Option<T> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    fn is(&self, module: &str, kind: &str) -> bool {
        self.module == module && self.kind == kind
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub committed_tx: u64,
    pub rejected_tx: u64,
    /// Warnings and breaches.
    pub violations: u64,
    pub breaches: u64,
    /// Ticks from fault onset to the checkpoint that flagged it, over
    /// breaches with a known onset.
    pub mean_detection_latency: Option<f64>,
    pub penalties: f64,
    pub transfers_committed: u64,
    pub transfers_aborted: u64,
    pub slas_completed: u64,
    pub final_reports: u64,
}

impl RunMetrics {
    /// Scores an event log. Unknown events are ignored.
    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a LogEvent>) -> RunMetrics {
        let mut m = RunMetrics::default();
        let (mut latency_sum, mut latency_n) = (0u64, 0u64);
        let mut penalty: BTreeMap<&str, f64> = BTreeMap::new();
        for e in events {
            if e.is("ledger", "round") {
                m.committed_tx += e.num::<u64>("committed").unwrap_or(0);
                m.rejected_tx += e.num::<u64>("rejected").unwrap_or(0);
            } else if e.is("monitoring", "violation") {
                m.violations += 1;
                if e.get("severity") == Some("breach") {
                    m.breaches += 1;
                }
                if let Some(l) = e.num::<u64>("detection_latency") {
                    latency_sum += l;
                    latency_n += 1;
                }
                if let (Some(sla), Some(p)) = (e.get("sla"), e.num::<f64>("penalty")) {
                    penalty.insert(sla, p);
                }
            } else if e.is("interop", "phase") {
                match e.get("phase") {
                    Some("committed-both") => m.transfers_committed += 1,
                    Some("aborted") => m.transfers_aborted += 1,
                    _ => {}
                }
            } else if e.is("lifecycle", "terminated") {
                m.slas_completed += 1;
            } else if e.is("lifecycle", "final-report") {
                m.final_reports += 1;
            }
        }
        m.mean_detection_latency = (latency_n > 0).then(|| latency_sum as f64 / latency_n as f64);
        m.penalties = penalty.values().fold(0.0, |a, p| a + p);
        m
    }
}

/// First invariant that failed during a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[error("invariant `{name}` failed at tick {tick}: {detail}")]
pub struct InvariantViolation {
    pub tick: Tick,
    pub name: String,
    pub detail: String,
}

//! Tunable thresholds. Every field has a default; scenario files may
//! override any subset.

use serde::{Deserialize, Serialize};

pub type Tick = u64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerConfig {
    /// Floor applied to the two-thirds quorum.
    pub min_quorum: usize,
    /// Governance is alerted when active validators fall below this.
    pub min_active: usize,
    pub collusion_rate: f64,
    pub min_votes: usize,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self {
            min_quorum: 1,
            min_active: 4,
            collusion_rate: 0.8,
            min_votes: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    pub max_call_depth: u32,
    /// Payloads larger than this many bytes go to the off-chain store.
    pub onchain_payload_limit: usize,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            max_call_depth: 4,
            onchain_payload_limit: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitoringConfig {
    pub mad_k: f64,
    pub quarantine_strikes: u32,
    /// Fraction of the target within which a single miss is only a warning.
    pub warn_margin: f64,
    /// Ticks between periodic PDLF reports to governance.
    pub report_period: Tick,
}

impl Default for MonitoringConfig {
    fn default() -> Self {
        Self {
            mad_k: 3.0,
            quarantine_strikes: 3,
            warn_margin: 0.1,
            report_period: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NegotiationConfig {
    pub max_rounds: u32,
}

impl Default for NegotiationConfig {
    fn default() -> Self {
        Self { max_rounds: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InteropConfig {
    pub max_divergence: Tick,
}

impl Default for InteropConfig {
    fn default() -> Self {
        Self { max_divergence: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub ledger: LedgerConfig,
    pub runtime: RuntimeConfig,
    pub monitoring: MonitoringConfig,
    pub negotiation: NegotiationConfig,
    pub interop: InteropConfig,
}

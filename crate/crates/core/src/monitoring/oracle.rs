//! Internal oracle: median over independent feeds with a MAD outlier rule
//! and quarantine after repeated strikes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::MonitorError;
use crate::config::{MonitoringConfig, Tick};
use crate::ledger::{ChannelId, Ledger, LedgerError, NodeId, Payload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trust {
    Normal,
    Quarantined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFeed {
    pub feed_id: String,
    pub source: String,
    pub readings: BTreeMap<Tick, f64>,
    pub trust: Trust,
    /// Consecutive ticks flagged.
    pub strikes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutput {
    pub tick: Tick,
    pub value: f64,
    pub flagged: Vec<String>,
    pub quarantined: Vec<String>,
}

/// Median of a non-empty slice; the mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone)]
pub struct Oracle {
    config: MonitoringConfig,
    feeds: BTreeMap<String, OracleFeed>,
}

impl Oracle {
    pub fn new(config: MonitoringConfig) -> Self {
        Oracle {
            config,
            feeds: BTreeMap::new(),
        }
    }

    pub fn add_feed(&mut self, feed_id: &str, source: &str) {
        self.feeds.insert(
            feed_id.into(),
            OracleFeed {
                feed_id: feed_id.into(),
                source: source.into(),
                readings: BTreeMap::new(),
                trust: Trust::Normal,
                strikes: 0,
            },
        );
    }

    pub fn feed(&self, id: &str) -> Option<&OracleFeed> {
        self.feeds.get(id)
    }

    pub fn feeds(&self) -> impl Iterator<Item = &OracleFeed> {
        self.feeds.values()
    }

    pub fn push(&mut self, feed_id: &str, tick: Tick, value: f64) -> Result<(), MonitorError> {
        if !value.is_finite() {
            return Err(MonitorError::NonFiniteSample);
        }
        let f = self
            .feeds
            .get_mut(feed_id)
            .ok_or_else(|| MonitorError::UnknownFeed(feed_id.into()))?;
        f.readings.insert(tick, value);
        Ok(())
    }

    /// Median of trusted readings at `tick`. Readings further than
    /// `mad_k` median absolute deviations from the median are flagged; a
    /// feed flagged on `quarantine_strikes` consecutive readings is
    /// quarantined and no longer counted.
    pub fn aggregate(&mut self, tick: Tick) -> Result<OracleOutput, MonitorError> {
        let live: Vec<(String, f64)> = self
            .feeds
            .values()
            .filter(|f| f.trust == Trust::Normal)
            .filter_map(|f| f.readings.get(&tick).map(|v| (f.feed_id.clone(), *v)))
            .collect();
        if live.len() < 3 {
            return Err(MonitorError::InsufficientFeeds { live: live.len() });
        }
        let values: Vec<f64> = live.iter().map(|(_, v)| *v).collect();
        let med = median(&values);
        let deviations: Vec<f64> = values.iter().map(|v| libm::fabs(v - med)).collect();
        let mad = median(&deviations);
        let threshold = self.config.mad_k * mad;
        let mut flagged = Vec::new();
        let mut quarantined = Vec::new();
        for ((id, _), dev) in live.iter().zip(&deviations) {
            let f = self.feeds.get_mut(id).expect("live feed");
            if *dev > threshold {
                f.strikes += 1;
                flagged.push(id.clone());
                if f.strikes >= self.config.quarantine_strikes {
                    f.trust = Trust::Quarantined;
                    quarantined.push(id.clone());
                }
            } else {
                f.strikes = 0;
            }
        }
        Ok(OracleOutput {
            tick,
            value: med,
            flagged,
            quarantined,
        })
    }

    /// Raises a governance alert for each newly quarantined feed.
    pub fn notify(&self, ledger: &mut Ledger, out: &OracleOutput) {
        for id in &out.quarantined {
            ledger.push_alert("oracle-quarantine", format!("feed {id} quarantined at tick {}", out.tick));
        }
    }

    /// Governance returns a quarantined feed to service. The decision is
    /// recorded as a governance transaction.
    pub fn reinstate(&mut self, ledger: &mut Ledger, governance: NodeId, feed_id: &str) -> Result<(), MonitorError> {
        if !ledger.is_governance(governance) {
            return Err(LedgerError::NotGovernance(governance).into());
        }
        let f = self
            .feeds
            .get_mut(feed_id)
            .ok_or_else(|| MonitorError::UnknownFeed(feed_id.into()))?;
        ledger.submit(
            governance,
            ChannelId::DEFAULT,
            Payload::governance("oracle-reinstate", feed_id.as_bytes().to_vec()),
        )?;
        f.trust = Trust::Normal;
        f.strikes = 0;
        Ok(())
    }
}

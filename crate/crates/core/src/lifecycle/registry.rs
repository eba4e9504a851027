//! Declared resource capacities and the allocations held against them.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::config::Tick;
use crate::hash::{Canonical, Encoder};
use crate::sla::Window;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationState {
    Reserved,
    Active,
    Released,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub resource: String,
    pub units: f64,
    pub window: Window,
}

impl Canonical for Allocation {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.resource).f64(self.units).put(&self.window);
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Holding {
    sla_id: String,
    alloc: Allocation,
    state: AllocationState,
}

/// Chooses how a demand is spread over resources.
pub trait AllocationPolicy {
    /// Returns `(resource, units)` pairs covering `demand`, or `None` when
    /// the registry cannot.
    fn allocate(&self, registry: &ResourceRegistry, demand: f64, window: Window) -> Option<Vec<(String, f64)>>;
}

/// Fill resources in id order, taking as much of each as is free.
#[derive(Debug, Clone, Copy, Default)]
pub struct FirstFit;

impl AllocationPolicy for FirstFit {
    fn allocate(&self, registry: &ResourceRegistry, demand: f64, window: Window) -> Option<Vec<(String, f64)>> {
        let mut remaining = demand;
        let mut out = Vec::new();
        for id in registry.capacities.keys() {
            if remaining <= 0.0 {
                break;
            }
            let take = registry.free(id, window).min(remaining);
            if take > 0.0 {
                out.push((id.clone(), take));
                remaining -= take;
            }
        }
        (remaining <= 0.0).then_some(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityViolation {
    pub resource: String,
    pub tick: Tick,
    pub used: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ResourceRegistry {
    capacities: BTreeMap<String, f64>,
    holdings: Vec<Holding>,
}

impl ResourceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, resource: impl Into<String>, capacity: f64) {
        self.capacities.insert(resource.into(), capacity);
    }

    pub fn capacity(&self, resource: &str) -> Option<f64> {
        self.capacities.get(resource).copied()
    }

    pub fn resources(&self) -> impl Iterator<Item = (&str, f64)> {
        self.capacities.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn contains(&self, resource: &str) -> bool {
        self.capacities.contains_key(resource)
    }

    fn live(&self) -> impl Iterator<Item = &Holding> {
        self.holdings
            .iter()
            .filter(|h| h.state != AllocationState::Released)
    }

    /// Units of `resource` held at `tick`.
    pub fn used_at(&self, resource: &str, tick: Tick) -> f64 {
        self.live()
            .filter(|h| h.alloc.resource == resource && h.alloc.window.contains_tick(tick))
            .map(|h| h.alloc.units)
            .sum()
    }

    /// Smallest spare capacity of `resource` over `window`.
    pub fn free(&self, resource: &str, window: Window) -> f64 {
        let Some(cap) = self.capacity(resource) else {
            return 0.0;
        };
        // Usage is piecewise constant and only rises where a holding starts.
        let mut probes: Vec<Tick> = self
            .live()
            .filter(|h| h.alloc.resource == resource)
            .map(|h| h.alloc.window.start)
            .filter(|t| window.contains_tick(*t))
            .collect();
        probes.push(window.start);
        let peak = probes
            .into_iter()
            .map(|t| self.used_at(resource, t))
            .fold(0.0, f64::max);
        (cap - peak).max(0.0)
    }

    /// Reserves `demand` units for `sla_id` over `window`, all or nothing.
    pub fn reserve(
        &mut self,
        sla_id: &str,
        demand: f64,
        window: Window,
        policy: &dyn AllocationPolicy,
    ) -> Option<Vec<Allocation>> {
        if demand <= 0.0 {
            return Some(Vec::new());
        }
        let picks = policy.allocate(self, demand, window)?;
        let allocs: Vec<Allocation> = picks
            .into_iter()
            .map(|(resource, units)| Allocation {
                resource,
                units,
                window,
            })
            .collect();
        for a in &allocs {
            self.holdings.push(Holding {
                sla_id: sla_id.into(),
                alloc: a.clone(),
                state: AllocationState::Reserved,
            });
        }
        Some(allocs)
    }

    fn set_state(&mut self, sla_id: &str, from: &[AllocationState], to: AllocationState) {
        for h in self.holdings.iter_mut() {
            if h.sla_id == sla_id && from.contains(&h.state) {
                h.state = to;
            }
        }
    }

    pub fn activate(&mut self, sla_id: &str) {
        self.set_state(sla_id, &[AllocationState::Reserved], AllocationState::Active);
    }

    pub fn release(&mut self, sla_id: &str) {
        self.set_state(
            sla_id,
            &[AllocationState::Reserved, AllocationState::Active],
            AllocationState::Released,
        );
    }

    pub fn holdings_of(&self, sla_id: &str) -> Vec<(Allocation, AllocationState)> {
        self.holdings
            .iter()
            .filter(|h| h.sla_id == sla_id)
            .map(|h| (h.alloc.clone(), h.state))
            .collect()
    }

    /// Every resource whose live holdings exceed its capacity at `tick`.
    pub fn sweep(&self, tick: Tick) -> Vec<CapacityViolation> {
        self.capacities
            .iter()
            .filter_map(|(r, cap)| {
                let used = self.used_at(r, tick);
                (used > *cap + 1e-9).then(|| CapacityViolation {
                    resource: r.clone(),
                    tick,
                    used,
                    capacity: *cap,
                })
            })
            .collect()
    }
}

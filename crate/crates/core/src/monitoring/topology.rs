//! Simulated transport paths that SLA traffic can be routed over.

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub path_id: String,
    pub latency_ms: f64,
    pub capacity: f64,
    #[serde(default = "up")]
    pub up: bool,
}

fn up() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub path: String,
    pub demand: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Topology {
    paths: BTreeMap<String, Path>,
    routes: BTreeMap<String, Route>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_path(&mut self, path: Path) {
        self.paths.insert(path.path_id.clone(), path);
    }

    pub fn path(&self, id: &str) -> Option<&Path> {
        self.paths.get(id)
    }

    pub fn path_mut(&mut self, id: &str) -> Option<&mut Path> {
        self.paths.get_mut(id)
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.paths.values()
    }

    pub fn assign(&mut self, sla_id: &str, path: &str, demand: f64) {
        self.routes.insert(
            sla_id.into(),
            Route {
                path: path.into(),
                demand,
            },
        );
    }

    pub fn unassign(&mut self, sla_id: &str) {
        self.routes.remove(sla_id);
    }

    pub fn route(&self, sla_id: &str) -> Option<&Route> {
        self.routes.get(sla_id)
    }

    /// Path currently carrying the SLA's traffic.
    pub fn current_path(&self, sla_id: &str) -> Option<&Path> {
        self.route(sla_id).and_then(|r| self.paths.get(&r.path))
    }

    pub fn load(&self, path: &str) -> f64 {
        self.routes
            .values()
            .filter(|r| r.path == path)
            .map(|r| r.demand)
            .sum()
    }

    /// Lowest-id path, other than the current one, that is up, has room for
    /// the SLA's demand and meets its latency target.
    pub fn alternate(&self, sla_id: &str, latency_target: Option<f64>) -> Option<String> {
        let route = self.route(sla_id)?;
        self.paths
            .values()
            .filter(|p| p.path_id != route.path && p.up)
            .filter(|p| p.capacity - self.load(&p.path_id) >= route.demand)
            .find(|p| latency_target.is_none_or(|t| p.latency_ms <= t))
            .map(|p| p.path_id.clone())
    }

    pub fn reassign(&mut self, sla_id: &str, to: &str) {
        if let Some(r) = self.routes.get_mut(sla_id) {
            r.path = to.into();
        }
    }
}

//! Orchestration and termination of an agreed SLA: resource reservation,
//! access grant, contract initialisation, termination and final reports.
//!
//! Resources are reserved before access is granted because a grant's scope
//! is the set of reserved resources.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::config::Tick;
use crate::contract::{
    templates, ContractId, ContractRuntime, Identity, RuntimeError, Status, TerminationProof, Value,
};
use crate::hash::{Canonical, Digest, Encoder};
use crate::intent::{record_agreement, AgreedTerms};
use crate::ledger::{ChannelId, Ledger, LedgerError, NodeId, Payload};
use crate::sla::{Metric, Window};

mod registry;
#[cfg(test)]
mod tests;

pub use registry::*;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LifecycleError {
    #[error("unknown SLA `{0}`")]
    UnknownSla(String),
    #[error("SLA `{0}` is already recorded")]
    AlreadyRecorded(String),
    #[error("no live agreement for `{0}`")]
    NoAgreement(String),
    #[error("no resource plan for `{0}`")]
    PlanMissing(String),
    #[error("cannot reserve {demand} units over the validity window")]
    InsufficientCapacity { demand: f64 },
    #[error("resource plan for `{0}` is not in the reserved state")]
    PlanNotReserved(String),
    #[error("access grant for `{0}` is missing or expired")]
    GrantExpired(String),
    #[error("SLA `{0}` is mid-window and no governance order was given")]
    NotTerminable(String),
    #[error("SLA `{0}` has not been terminated")]
    NotTerminated(String),
    #[error("lifecycle record for `{0}` is incomplete")]
    MissingEvents(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanState {
    Reserved,
    Active,
    Released,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourcePlan {
    pub sla_id: String,
    pub allocations: Vec<Allocation>,
    pub so_contract: ContractId,
    pub state: PlanState,
}

impl ResourcePlan {
    pub fn resources(&self) -> Vec<String> {
        self.allocations.iter().map(|a| a.resource.clone()).collect()
    }
}

fn plan_digest(sla_id: &str, allocations: &[Allocation]) -> Digest {
    let mut enc = Encoder::new();
    enc.str(sla_id).seq(allocations);
    Digest::of(enc.as_slice())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessGrant {
    pub grantee: Identity,
    /// `(resource, permission)` pairs.
    pub scope: Vec<(String, String)>,
    pub granted_at: Tick,
    pub expires_at: Tick,
    pub ac_contract: ContractId,
}

/// Ticks at which each lifecycle step happened.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Milestones {
    pub agreement: Option<Tick>,
    pub orchestration: Option<Tick>,
    pub access: Option<Tick>,
    pub activation: Option<Tick>,
    pub termination: Option<Tick>,
}

impl Milestones {
    /// Every step present and in non-decreasing tick order.
    pub fn complete_and_ordered(&self) -> bool {
        let steps = [
            self.agreement,
            self.orchestration,
            self.access,
            self.activation,
            self.termination,
        ];
        steps.iter().all(Option::is_some) && steps.windows(2).all(|w| w[0] <= w[1])
    }

    /// Steps recorded so far are in order (for in-flight SLAs).
    pub fn ordered_so_far(&self) -> bool {
        let steps: Vec<Tick> = [
            self.agreement,
            self.orchestration,
            self.access,
            self.activation,
            self.termination,
        ]
        .into_iter()
        .map_while(|t| t)
        .collect();
        steps.windows(2).all(|w| w[0] <= w[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Clean,
    Warning,
    Breach,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationSummary {
    pub checkpoints: u64,
    pub clean: u64,
    pub warnings: u64,
    pub breaches: u64,
    /// Failed metrics summed over breach checkpoints.
    pub failed_metrics: u64,
    pub penalty: f64,
}

impl Canonical for ViolationSummary {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.checkpoints)
            .u64(self.clean)
            .u64(self.warnings)
            .u64(self.breaches)
            .u64(self.failed_metrics)
            .f64(self.penalty);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Termination {
    pub tick: Tick,
    pub proof: TerminationProof,
    pub early: bool,
    pub by_governance: bool,
    pub revocation_confirmed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlaRecord {
    pub terms: AgreedTerms,
    pub channel: ChannelId,
    pub it_sc: ContractId,
    pub plan: Option<ResourcePlan>,
    pub grant: Option<AccessGrant>,
    pub master: Option<ContractId>,
    pub sr_sc: Option<ContractId>,
    pub checkpoints: Vec<Tick>,
    pub milestones: Milestones,
    pub termination: Option<Termination>,
    pub violations: ViolationSummary,
}

impl SlaRecord {
    pub fn sla_id(&self) -> &str {
        &self.terms.sla.sla_id
    }

    pub fn validity(&self) -> Window {
        self.terms.sla.validity
    }

    /// Contracts terminated at the end of the lifecycle.
    pub fn service_contracts(&self) -> Vec<ContractId> {
        [
            self.master,
            self.grant.as_ref().map(|g| g.ac_contract),
            self.plan.as_ref().map(|p| p.so_contract),
            self.sr_sc,
        ]
        .into_iter()
        .flatten()
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parties {
    pub provider: String,
    pub customer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub schema_version: u32,
    pub sla_id: String,
    pub parties: Parties,
    pub validity: Window,
    pub start_tick: Tick,
    pub end_tick: Tick,
    pub early_end: bool,
    pub terminated_by_governance: bool,
    pub revocation_confirmed: bool,
    pub termination_proof: TerminationProof,
    pub terms_digest: Digest,
    pub violations: ViolationSummary,
    pub digest: Digest,
}

impl FinalReport {
    fn encode_body(&self, enc: &mut Encoder) {
        enc.u32(self.schema_version)
            .str(&self.sla_id)
            .str(&self.parties.provider)
            .str(&self.parties.customer)
            .put(&self.validity)
            .u64(self.start_tick)
            .u64(self.end_tick)
            .bool(self.early_end)
            .bool(self.terminated_by_governance)
            .bool(self.revocation_confirmed)
            .put(&self.termination_proof)
            .digest(&self.terms_digest)
            .put(&self.violations);
    }

    pub fn body_digest(&self) -> Digest {
        let mut enc = Encoder::new();
        self.encode_body(&mut enc);
        Digest::of(enc.as_slice())
    }

    pub fn digest_is_consistent(&self) -> bool {
        self.digest == self.body_digest()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredReport {
    pub report: FinalReport,
    pub tx_id: Digest,
}

/// A live grant that no longer has an active master contract behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct OrphanGrant {
    pub sla_id: String,
    pub ac_contract: ContractId,
}

pub struct Lifecycle {
    governance: NodeId,
    registry: ResourceRegistry,
    policy: Box<dyn AllocationPolicy>,
    slas: BTreeMap<String, SlaRecord>,
    reports: BTreeMap<String, StoredReport>,
}

impl core::fmt::Debug for Lifecycle {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Lifecycle")
            .field("governance", &self.governance)
            .field("slas", &self.slas.len())
            .field("reports", &self.reports.len())
            .finish()
    }
}

impl Lifecycle {
    pub fn new(governance: NodeId, registry: ResourceRegistry) -> Self {
        Self::with_policy(governance, registry, Box::new(FirstFit))
    }

    pub fn with_policy(governance: NodeId, registry: ResourceRegistry, policy: Box<dyn AllocationPolicy>) -> Self {
        Lifecycle {
            governance,
            registry,
            policy,
            slas: BTreeMap::new(),
            reports: BTreeMap::new(),
        }
    }

    pub fn governance(&self) -> NodeId {
        self.governance
    }

    fn owner(&self) -> Identity {
        Identity::Node(self.governance)
    }

    pub fn registry(&self) -> &ResourceRegistry {
        &self.registry
    }

    pub fn sla(&self, sla_id: &str) -> Option<&SlaRecord> {
        self.slas.get(sla_id)
    }

    pub fn slas(&self) -> impl Iterator<Item = &SlaRecord> {
        self.slas.values()
    }

    pub fn reports(&self) -> impl Iterator<Item = &StoredReport> {
        self.reports.values()
    }

    pub fn report(&self, sla_id: &str) -> Option<&StoredReport> {
        self.reports.get(sla_id)
    }

    fn record_mut(&mut self, sla_id: &str) -> Result<&mut SlaRecord, LifecycleError> {
        self.slas
            .get_mut(sla_id)
            .ok_or_else(|| LifecycleError::UnknownSla(sla_id.into()))
    }

    /// Records agreed terms in an intent-translation contract and starts
    /// tracking the SLA.
    pub fn record(
        &mut self,
        rt: &mut ContractRuntime,
        ledger: &mut Ledger,
        terms: AgreedTerms,
        channel: ChannelId,
    ) -> Result<ContractId, LifecycleError> {
        let sla_id = terms.sla.sla_id.clone();
        if self.slas.contains_key(&sla_id) {
            return Err(LifecycleError::AlreadyRecorded(sla_id));
        }
        terms
            .sla
            .validate()
            .map_err(|_| LifecycleError::NoAgreement(sla_id.clone()))?;
        let id = record_agreement(rt, ledger, &terms, channel, self.owner())?;
        rt.activate(ledger, &id, &self.owner())?;
        self.slas.insert(
            sla_id,
            SlaRecord {
                terms,
                channel,
                it_sc: id,
                plan: None,
                grant: None,
                master: None,
                sr_sc: None,
                checkpoints: Vec::new(),
                milestones: Milestones {
                    agreement: Some(rt.now()),
                    ..Milestones::default()
                },
                termination: None,
                violations: ViolationSummary::default(),
            },
        );
        Ok(id)
    }

    /// Reserves capacity for the throughput objective and installs the
    /// orchestration contract in its `reserved` state.
    pub fn orchestrate(
        &mut self,
        rt: &mut ContractRuntime,
        ledger: &mut Ledger,
        sla_id: &str,
    ) -> Result<ResourcePlan, LifecycleError> {
        let rec = self.slas.get(sla_id).ok_or_else(|| LifecycleError::UnknownSla(sla_id.into()))?;
        if rec.plan.is_some() {
            return Err(LifecycleError::PlanNotReserved(sla_id.into()));
        }
        let sla = &rec.terms.sla;
        let demand = sla.slo(Metric::ThroughputMbps).map_or(0.0, |s| s.target);
        let (window, channel) = (sla.validity, rec.channel);
        let allocations = self
            .registry
            .reserve(sla_id, demand, window, self.policy.as_ref())
            .ok_or(LifecycleError::InsufficientCapacity { demand })?;
        let desc = templates::service_orchestration(sla_id, plan_digest(sla_id, &allocations), self.owner());
        let installed = rt
            .install_contract(ledger, desc, channel)
            .and_then(|id| rt.activate(ledger, &id, &self.owner()).map(|_| id));
        let so = match installed {
            Ok(id) => id,
            Err(e) => {
                self.registry.release(sla_id);
                return Err(e.into());
            }
        };
        let plan = ResourcePlan {
            sla_id: sla_id.into(),
            allocations,
            so_contract: so,
            state: PlanState::Reserved,
        };
        let now = rt.now();
        let rec = self.record_mut(sla_id)?;
        rec.plan = Some(plan.clone());
        rec.milestones.orchestration = Some(now);
        Ok(plan)
    }

    /// Installs and activates the access-control contract, granting the
    /// customer use of the planned resources until the SLA ends.
    pub fn grant_access(
        &mut self,
        rt: &mut ContractRuntime,
        ledger: &mut Ledger,
        sla_id: &str,
    ) -> Result<AccessGrant, LifecycleError> {
        let now = rt.now();
        let owner = self.owner();
        let rec = self
            .slas
            .get(sla_id)
            .ok_or_else(|| LifecycleError::NoAgreement(sla_id.into()))?;
        let validity = rec.validity();
        if now >= validity.end || rec.termination.is_some() {
            return Err(LifecycleError::NoAgreement(sla_id.into()));
        }
        let plan = rec
            .plan
            .as_ref()
            .ok_or_else(|| LifecycleError::PlanMissing(sla_id.into()))?;
        let scope: Vec<(String, String)> = plan
            .resources()
            .into_iter()
            .map(|r| (r, "use".to_string()))
            .collect();
        let grantee = Identity::Party(rec.terms.sla.customer.clone());
        let channel = rec.channel;
        let ac = rt.install_contract(ledger, templates::access_control(sla_id, owner.clone()), channel)?;
        rt.activate(ledger, &ac, &owner)?;
        let mut args = BTreeMap::new();
        args.insert("grantee".to_string(), Value::Id(grantee.clone()));
        args.insert("until".to_string(), Value::Int(validity.end as i64));
        rt.invoke(ledger, &ac, "grant", owner, args)?;
        let grant = AccessGrant {
            grantee,
            scope,
            granted_at: now,
            expires_at: validity.end,
            ac_contract: ac,
        };
        let rec = self.record_mut(sla_id)?;
        rec.grant = Some(grant.clone());
        rec.milestones.access = Some(now);
        Ok(grant)
    }

    /// Activates the master SLA contract with its duration timer, flips the
    /// plan to active, installs usage recording and schedules checkpoints.
    pub fn initialise(
        &mut self,
        rt: &mut ContractRuntime,
        ledger: &mut Ledger,
        sla_id: &str,
    ) -> Result<ContractId, LifecycleError> {
        let now = rt.now();
        let owner = self.owner();
        let rec = self.slas.get(sla_id).ok_or_else(|| LifecycleError::UnknownSla(sla_id.into()))?;
        let plan = match &rec.plan {
            Some(p) if p.state == PlanState::Reserved => p.clone(),
            _ => return Err(LifecycleError::PlanNotReserved(sla_id.into())),
        };
        let grant_live = rec.grant.as_ref().is_some_and(|g| {
            now < g.expires_at
                && rt
                    .contract(&g.ac_contract)
                    .is_some_and(|c| c.status == Status::Active && c.machine_state == "granted")
        });
        if !grant_live {
            return Err(LifecycleError::GrantExpired(sla_id.into()));
        }
        let sla = rec.terms.sla.clone();
        let digest = rec.terms.digest();
        let channel = rec.channel;

        let master = rt.install_contract(ledger, templates::master_sla(sla_id, digest, owner.clone()), channel)?;
        rt.activate(ledger, &master, &owner)?;
        let mut args = BTreeMap::new();
        args.insert("end".to_string(), Value::Int(sla.validity.end as i64));
        rt.invoke(ledger, &master, "start", owner.clone(), args)?;
        rt.invoke(ledger, &plan.so_contract, "activate", owner.clone(), BTreeMap::new())?;
        self.registry.activate(sla_id);
        let sr = rt.install_contract(
            ledger,
            templates::service_recording(sla_id, &plan.resources(), owner.clone()),
            channel,
        )?;
        rt.activate(ledger, &sr, &owner)?;

        let period = sla.checkpoint_period.max(1);
        let checkpoints = (1..=sla.checkpoint_count())
            .map(|k| (sla.validity.start + k * period).min(sla.validity.end))
            .collect();
        let rec = self.record_mut(sla_id)?;
        rec.master = Some(master);
        rec.sr_sc = Some(sr);
        rec.checkpoints = checkpoints;
        rec.milestones.activation = Some(now);
        if let Some(p) = rec.plan.as_mut() {
            p.state = PlanState::Active;
        }
        Ok(master)
    }

    /// Tallies one checkpoint outcome toward the final report.
    pub fn note_checkpoint(&mut self, sla_id: &str, kind: CheckpointKind, failed_metrics: u64) -> Result<(), LifecycleError> {
        let rec = self.record_mut(sla_id)?;
        let v = &mut rec.violations;
        v.checkpoints += 1;
        match kind {
            CheckpointKind::Clean => v.clean += 1,
            CheckpointKind::Warning => v.warnings += 1,
            CheckpointKind::Breach => {
                v.breaches += 1;
                v.failed_metrics += failed_metrics;
            }
        }
        v.penalty = rec.terms.sla.penalty.penalty(v.failed_metrics);
        Ok(())
    }

    /// Moves the plan's allocation to a different path resource.
    pub fn set_allocation_resource(&mut self, sla_id: &str, from: &str, to: &str) -> Result<(), LifecycleError> {
        let rec = self.record_mut(sla_id)?;
        if let Some(p) = rec.plan.as_mut() {
            for a in p.allocations.iter_mut().filter(|a| a.resource == from) {
                a.resource = to.into();
            }
        }
        Ok(())
    }

    /// True once the master contract's duration timer has fired.
    pub fn expired(&self, rt: &ContractRuntime, sla_id: &str) -> bool {
        self.slas
            .get(sla_id)
            .and_then(|r| r.master)
            .and_then(|m| rt.contract(&m))
            .is_some_and(|c| c.machine_state == "expired")
    }

    /// Ends the SLA: revokes any live grant, terminates the master, access,
    /// orchestration and recording contracts, and releases resources.
    /// Allowed once the duration timer fired, or at any time on a governance
    /// order.
    pub fn terminate(
        &mut self,
        rt: &mut ContractRuntime,
        ledger: &mut Ledger,
        sla_id: &str,
        requester: &Identity,
    ) -> Result<TerminationProof, LifecycleError> {
        let now = rt.now();
        let owner = self.owner();
        let rec = self.slas.get(sla_id).ok_or_else(|| LifecycleError::UnknownSla(sla_id.into()))?;
        if rec.termination.is_some() {
            return Err(RuntimeError::AlreadyTerminated.into());
        }
        let master = rec.master.ok_or_else(|| LifecycleError::NotTerminable(sla_id.into()))?;
        let by_governance = matches!(requester, Identity::Node(n) if ledger.is_governance(*n));
        let expired = self.expired(rt, sla_id);
        if !expired && !by_governance {
            return Err(LifecycleError::NotTerminable(sla_id.into()));
        }
        let contracts = rec.service_contracts();
        let grant = rec.grant.clone();
        let validity = rec.validity();

        if let Some(g) = &grant {
            let live = rt
                .contract(&g.ac_contract)
                .is_some_and(|c| c.status == Status::Active && c.machine_state == "granted");
            if live {
                rt.invoke(ledger, &g.ac_contract, "revoke", owner.clone(), BTreeMap::new())?;
            }
        }
        // Governance confirms revocation before the access contract's state is cleared.
        let revocation_confirmed = grant.as_ref().is_none_or(|g| {
            rt.contract(&g.ac_contract)
                .is_some_and(|c| !c.allowed("access", &g.grantee))
        });
        let proof = rt.terminate_contract(ledger, &master, &owner)?;
        for id in contracts.iter().filter(|id| **id != master) {
            let status = rt.contract(id).map(|c| c.status);
            if matches!(status, Some(Status::Active | Status::Interrupted)) {
                rt.terminate_contract(ledger, id, &owner)?;
            }
        }
        self.registry.release(sla_id);
        let rec = self.record_mut(sla_id)?;
        if let Some(p) = rec.plan.as_mut() {
            p.state = PlanState::Released;
        }
        rec.milestones.termination = Some(now);
        rec.termination = Some(Termination {
            tick: now,
            proof,
            early: now < validity.end,
            by_governance: by_governance && !expired,
            revocation_confirmed,
        });
        Ok(proof)
    }

    /// Builds, stores and files the final report for a terminated SLA.
    /// Repeated calls return the stored report.
    pub fn final_report(&mut self, ledger: &mut Ledger, sla_id: &str) -> Result<FinalReport, LifecycleError> {
        if let Some(r) = self.reports.get(sla_id) {
            return Ok(r.report.clone());
        }
        let rec = self.slas.get(sla_id).ok_or_else(|| LifecycleError::UnknownSla(sla_id.into()))?;
        let term = rec
            .termination
            .as_ref()
            .ok_or_else(|| LifecycleError::NotTerminated(sla_id.into()))?;
        if !rec.milestones.complete_and_ordered() {
            return Err(LifecycleError::MissingEvents(sla_id.into()));
        }
        let start_tick = rec.milestones.activation.expect("complete");
        let mut report = FinalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            sla_id: sla_id.into(),
            parties: Parties {
                provider: rec.terms.sla.provider.clone(),
                customer: rec.terms.sla.customer.clone(),
            },
            validity: rec.validity(),
            start_tick,
            end_tick: term.tick,
            early_end: term.early,
            terminated_by_governance: term.by_governance,
            revocation_confirmed: term.revocation_confirmed,
            termination_proof: term.proof,
            terms_digest: rec.terms.digest(),
            violations: rec.violations,
            digest: Digest::ZERO,
        };
        report.digest = report.body_digest();
        let mut enc = Encoder::new();
        enc.str(sla_id).digest(&report.digest);
        let tx = ledger.submit(
            self.governance,
            ChannelId::DEFAULT,
            Payload::governance("final-report", enc.finish()),
        )?;
        self.reports.insert(
            sla_id.into(),
            StoredReport {
                report: report.clone(),
                tx_id: tx.tx_id,
            },
        );
        Ok(report)
    }

    /// Live grants whose master contract is missing (after the grant's own
    /// tick) or terminated.
    pub fn orphan_grants(&self, rt: &ContractRuntime) -> Vec<OrphanGrant> {
        let now = rt.now();
        let mut out = Vec::new();
        for rec in self.slas.values() {
            let Some(g) = &rec.grant else { continue };
            let live = rt
                .contract(&g.ac_contract)
                .is_some_and(|c| c.status == Status::Active && c.allowed("access", &g.grantee));
            if !live {
                continue;
            }
            let backed = match rec.master.and_then(|m| rt.contract(&m)) {
                Some(m) => matches!(m.status, Status::Active | Status::Interrupted),
                None => g.granted_at == now,
            };
            if !backed {
                out.push(OrphanGrant {
                    sla_id: rec.sla_id().to_string(),
                    ac_contract: g.ac_contract,
                });
            }
        }
        out
    }

    /// Terminated SLAs without exactly one report whose digest matches a
    /// committed governance transaction.
    pub fn incomplete_reports(&self, ledger: &Ledger) -> Vec<String> {
        self.slas
            .values()
            .filter(|r| r.termination.is_some())
            .filter(|r| {
                let Some(stored) = self.reports.get(r.sla_id()) else {
                    return true;
                };
                let filed = ledger.committed_tx(&stored.tx_id).is_some_and(|tx| {
                    let mut enc = Encoder::new();
                    enc.str(r.sla_id()).digest(&stored.report.digest);
                    tx.payload.body == enc.finish()
                });
                !(filed && stored.report.digest_is_consistent())
            })
            .map(|r| r.sla_id().to_string())
            .collect()
    }
}

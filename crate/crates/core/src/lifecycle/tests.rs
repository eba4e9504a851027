use super::*;
use crate::config::{LedgerConfig, RuntimeConfig};
use crate::ledger::Role;
use crate::sla::{Layer, PenaltyRule, Sla, Slo};
use alloc::vec;

const GOV: NodeId = NodeId(100);

struct World {
    ledger: Ledger,
    rt: ContractRuntime,
    lc: Lifecycle,
}

fn world(resources: &[(&str, f64)]) -> World {
    let mut nodes = vec![(GOV, Role::Governance)];
    nodes.extend((1..=4).map(|i| (NodeId(i), Role::Validator)));
    let ledger = Ledger::new("t", LedgerConfig::default(), nodes).unwrap();
    let mut reg = ResourceRegistry::new();
    for (r, c) in resources {
        reg.declare(*r, *c);
    }
    World {
        ledger,
        rt: ContractRuntime::new(RuntimeConfig::default(), GOV),
        lc: Lifecycle::new(GOV, reg),
    }
}

fn terms(id: &str, throughput: Option<f64>, validity: Window) -> AgreedTerms {
    let mut slos = vec![Slo::new(Metric::LatencyMs, 20.0).unwrap()];
    if let Some(t) = throughput {
        slos.push(Slo::new(Metric::ThroughputMbps, t).unwrap());
    }
    AgreedTerms {
        sla: Sla {
            sla_id: id.into(),
            provider: "operator".into(),
            customer: "club".into(),
            slos,
            validity,
            checkpoint_period: 10,
            penalty: PenaltyRule {
                units_per_breach: 5.0,
                cap: 100.0,
            },
            layer: Layer::Horizontal,
            parents: vec![],
        },
        offering_id: "o".into(),
        price: 10.0,
        rounds: 1,
    }
}

impl World {
    fn record(&mut self, t: AgreedTerms) {
        self.lc
            .record(&mut self.rt, &mut self.ledger, t, ChannelId::DEFAULT)
            .unwrap();
    }

    fn orchestrate(&mut self, id: &str) -> Result<ResourcePlan, LifecycleError> {
        self.lc.orchestrate(&mut self.rt, &mut self.ledger, id)
    }

    fn grant(&mut self, id: &str) -> Result<AccessGrant, LifecycleError> {
        self.lc.grant_access(&mut self.rt, &mut self.ledger, id)
    }

    fn init(&mut self, id: &str) -> Result<ContractId, LifecycleError> {
        self.lc.initialise(&mut self.rt, &mut self.ledger, id)
    }

    fn terminate(&mut self, id: &str, who: Identity) -> Result<TerminationProof, LifecycleError> {
        self.lc.terminate(&mut self.rt, &mut self.ledger, id, &who)
    }

    fn tick(&mut self, t: Tick) {
        self.ledger.advance_to(t);
        self.rt.tick(&mut self.ledger, t);
        self.ledger.run_all_rounds();
    }

    fn full_setup(&mut self, id: &str) {
        self.orchestrate(id).unwrap();
        self.grant(id).unwrap();
        self.init(id).unwrap();
    }

    fn status(&self, id: &ContractId) -> Status {
        self.rt.contract(id).unwrap().status
    }
}

/// Greedy oracle: walk resources in id order and take what is free.
fn first_fit_oracle(caps: &[(&str, f64)], demand: f64) -> Option<Vec<(String, f64)>> {
    let mut sorted = caps.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    let mut left = demand;
    let mut out = vec![];
    for (r, c) in sorted {
        if left <= 0.0 {
            break;
        }
        let take = c.min(left);
        out.push((r.to_string(), take));
        left -= take;
    }
    (left <= 0.0).then_some(out)
}

#[test]
fn first_fit_splits_demand() {
    let caps = [("R2", 60.0), ("R1", 60.0)];
    let mut w = world(&caps);
    w.record(terms("s", Some(100.0), Window::new(0, 100)));
    let plan = w.orchestrate("s").unwrap();
    let got: Vec<(String, f64)> = plan.allocations.iter().map(|a| (a.resource.clone(), a.units)).collect();
    assert_eq!(got, first_fit_oracle(&caps, 100.0).unwrap());
    assert_eq!(got, vec![("R1".into(), 60.0), ("R2".into(), 40.0)]);
    assert_eq!(plan.state, PlanState::Reserved);
    let so = w.rt.contract(&plan.so_contract).unwrap();
    assert_eq!(so.machine_state, "reserved");
}

#[test]
fn insufficient_capacity_is_atomic() {
    let mut w = world(&[("R1", 60.0), ("R2", 60.0)]);
    w.record(terms("s", Some(200.0), Window::new(0, 100)));
    assert_eq!(
        w.orchestrate("s"),
        Err(LifecycleError::InsufficientCapacity { demand: 200.0 })
    );
    assert!(w.lc.registry().holdings_of("s").is_empty());
    assert_eq!(w.lc.registry().free("R1", Window::new(0, 100)), 60.0);
}

#[test]
fn zero_demand_gives_empty_plan() {
    let mut w = world(&[("R1", 60.0)]);
    w.record(terms("s", None, Window::new(0, 100)));
    let plan = w.orchestrate("s").unwrap();
    assert!(plan.allocations.is_empty());
}

#[test]
fn overlapping_windows_share_capacity() {
    let mut reg = ResourceRegistry::new();
    reg.declare("R1", 100.0);
    reg.reserve("a", 70.0, Window::new(0, 50), &FirstFit).unwrap();
    assert_eq!(reg.free("R1", Window::new(40, 60)), 30.0);
    assert_eq!(reg.free("R1", Window::new(50, 60)), 100.0);
    assert!(reg.reserve("b", 40.0, Window::new(10, 20), &FirstFit).is_none());
    assert!(reg.sweep(10).is_empty());
}

#[test]
fn grant_needs_plan_and_live_agreement() {
    let mut w = world(&[("R1", 100.0)]);
    w.record(terms("s", Some(10.0), Window::new(0, 50)));
    assert_eq!(w.grant("s"), Err(LifecycleError::PlanMissing("s".into())));
    w.orchestrate("s").unwrap();
    w.tick(50);
    assert_eq!(w.grant("s"), Err(LifecycleError::NoAgreement("s".into())));
    assert_eq!(w.grant("nope"), Err(LifecycleError::NoAgreement("nope".into())));
}

#[test]
fn grant_revoked_by_timer_at_validity_end() {
    let mut w = world(&[("R1", 100.0)]);
    w.tick(100);
    w.record(terms("s", Some(10.0), Window::new(100, 150)));
    w.full_setup("s");
    let g = w.lc.sla("s").unwrap().grant.clone().unwrap();
    assert_eq!((g.granted_at, g.expires_at), (100, 150));
    assert_eq!(g.scope, vec![("R1".to_string(), "use".to_string())]);
    let club = Identity::Party("club".into());
    w.tick(149);
    assert!(w.rt.invoke(&mut w.ledger, &g.ac_contract, "access", club.clone(), BTreeMap::new()).is_ok());
    w.tick(150);
    w.tick(151);
    assert!(matches!(
        w.rt.invoke(&mut w.ledger, &g.ac_contract, "access", club, BTreeMap::new()),
        Err(RuntimeError::AccessDenied { .. })
    ));
    assert!(w.lc.expired(&w.rt, "s"));
}

#[test]
fn initialise_schedules_checkpoints_once() {
    let mut w = world(&[("R1", 100.0)]);
    w.record(terms("s", Some(10.0), Window::new(0, 100)));
    w.orchestrate("s").unwrap();
    assert_eq!(w.init("s"), Err(LifecycleError::GrantExpired("s".into())));
    w.grant("s").unwrap();
    let master = w.init("s").unwrap();
    let rec = w.lc.sla("s").unwrap();
    assert_eq!(rec.checkpoints.len(), 10);
    assert_eq!(rec.checkpoints[0], 10);
    assert_eq!(*rec.checkpoints.last().unwrap(), 100);
    assert_eq!(rec.plan.as_ref().unwrap().state, PlanState::Active);
    let m = w.rt.contract(&master).unwrap();
    assert_eq!(m.status, Status::Active);
    assert_eq!(m.machine_state, "running");
    assert_eq!(m.timers[0].fire_at, 100);
    let so = rec.plan.as_ref().unwrap().so_contract;
    assert_eq!(w.rt.contract(&so).unwrap().machine_state, "active");
    assert_eq!(w.init("s"), Err(LifecycleError::PlanNotReserved("s".into())));
}

#[test]
fn timer_driven_termination_and_report() {
    let mut w = world(&[("R1", 100.0)]);
    w.record(terms("s", Some(40.0), Window::new(0, 100)));
    w.full_setup("s");
    assert_eq!(
        w.terminate("s", Identity::Party("club".into())),
        Err(LifecycleError::NotTerminable("s".into()))
    );
    assert_eq!(w.lc.registry().free("R1", Window::new(0, 100)), 60.0);
    assert_eq!(
        w.lc.final_report(&mut w.ledger, "s"),
        Err(LifecycleError::NotTerminated("s".into()))
    );
    for t in (10..=100).step_by(10) {
        w.tick(t);
        w.lc.note_checkpoint("s", CheckpointKind::Clean, 0).unwrap();
    }
    let proof = w.terminate("s", Identity::System).unwrap();
    assert!(proof.is_valid());
    let rec = w.lc.sla("s").unwrap().clone();
    for id in rec.service_contracts() {
        assert_eq!(w.status(&id), Status::Terminated);
    }
    assert_eq!(rec.service_contracts().len(), 4);
    assert_eq!(w.status(&rec.it_sc), Status::Active, "agreement record stays readable");
    assert_eq!(w.lc.registry().free("R1", Window::new(0, 100)), 100.0);
    assert!(w.lc.orphan_grants(&w.rt).is_empty());
    assert!(rec.milestones.complete_and_ordered());

    let report = w.lc.final_report(&mut w.ledger, "s").unwrap();
    assert_eq!(report.violations.breaches, 0);
    assert_eq!((report.start_tick, report.end_tick), (0, 100));
    assert!(!report.early_end);
    assert!(report.revocation_confirmed);
    assert!(report.termination_proof.is_valid());
    assert!(report.digest_is_consistent());
    assert_eq!(w.lc.incomplete_reports(&w.ledger), vec!["s".to_string()], "not committed yet");
    w.ledger.run_all_rounds();
    assert!(w.lc.incomplete_reports(&w.ledger).is_empty());
    assert_eq!(w.lc.final_report(&mut w.ledger, "s").unwrap(), report);
    assert_eq!(w.lc.reports().count(), 1);
}

#[test]
fn governance_can_end_early() {
    let mut w = world(&[("R1", 100.0)]);
    w.record(terms("s", Some(40.0), Window::new(0, 100)));
    w.full_setup("s");
    w.tick(30);
    w.terminate("s", Identity::Node(GOV)).unwrap();
    let report = w.lc.final_report(&mut w.ledger, "s").unwrap();
    assert!(report.early_end);
    assert!(report.terminated_by_governance);
    assert!(report.revocation_confirmed);
    assert_eq!(report.end_tick, 30);
    assert!(matches!(
        w.terminate("s", Identity::Node(GOV)),
        Err(LifecycleError::Runtime(RuntimeError::AlreadyTerminated))
    ));
}

#[test]
fn breaches_accumulate_penalty() {
    let mut w = world(&[("R1", 100.0)]);
    w.record(terms("s", Some(40.0), Window::new(0, 100)));
    w.full_setup("s");
    w.lc.note_checkpoint("s", CheckpointKind::Breach, 1).unwrap();
    w.lc.note_checkpoint("s", CheckpointKind::Warning, 1).unwrap();
    w.lc.note_checkpoint("s", CheckpointKind::Breach, 2).unwrap();
    w.tick(100);
    w.terminate("s", Identity::System).unwrap();
    let r = w.lc.final_report(&mut w.ledger, "s").unwrap();
    assert_eq!(r.violations.breaches, 2);
    assert_eq!(r.violations.warnings, 1);
    // 3 failed metrics x 5 units, under the cap of 100.
    assert_eq!(r.violations.penalty, 15.0);
}

#[test]
fn orphan_grant_detected_when_master_dies_first() {
    let mut w = world(&[("R1", 100.0)]);
    w.record(terms("s", Some(40.0), Window::new(0, 100)));
    w.full_setup("s");
    assert!(w.lc.orphan_grants(&w.rt).is_empty());
    let master = w.lc.sla("s").unwrap().master.unwrap();
    w.rt.terminate_contract(&mut w.ledger, &master, &Identity::Node(GOV)).unwrap();
    let orphans = w.lc.orphan_grants(&w.rt);
    assert_eq!(orphans.len(), 1);
    assert_eq!(orphans[0].sla_id, "s");
}

#[test]
fn duplicate_record_rejected() {
    let mut w = world(&[]);
    let t = terms("s", None, Window::new(0, 100));
    w.record(t.clone());
    assert_eq!(
        w.lc.record(&mut w.rt, &mut w.ledger, t, ChannelId::DEFAULT),
        Err(LifecycleError::AlreadyRecorded("s".into()))
    );
}

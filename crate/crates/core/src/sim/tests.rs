use super::*;
use crate::ledger::{Role, VoteBehavior};
use crate::monitoring::Path;
use crate::sla::{Metric, PenaltyRule, ServiceOffering, Slo};
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

fn node(id: u32, role: Role) -> NodeSpec {
    NodeSpec {
        id,
        role,
        link_delay: 0,
        behavior: VoteBehavior::Honest,
    }
}

fn slo(m: Metric, t: f64) -> Slo {
    Slo::new(m, t).unwrap()
}

fn path(id: &str, latency_ms: f64) -> Path {
    Path {
        path_id: id.into(),
        latency_ms,
        capacity: 1_000.0,
        up: true,
    }
}

/// One SLA over `[0, 300)` with a 60-tick checkpoint period.
fn scenario() -> Scenario {
    Scenario {
        schema_version: SCENARIO_SCHEMA_VERSION,
        name: "unit".into(),
        seed: 7,
        duration: 320,
        config: Default::default(),
        presets: Default::default(),
        ledgers: vec![LedgerSpec {
            id: "op".into(),
            schema_version: 1,
            nodes: vec![
                node(0, Role::Governance),
                node(1, Role::Validator),
                node(2, Role::Validator),
                node(3, Role::Validator),
                node(4, Role::Validator),
            ],
            channels: vec![],
            slas: vec![],
        }],
        notary: None,
        resources: vec![ResourceSpec {
            id: "ran-1".into(),
            capacity: 500.0,
        }],
        paths: vec![path("a", 15.0), path("b", 8.0)],
        catalogue: vec![ServiceOffering {
            offering_id: "slice-gold".into(),
            tags: vec!["slice".into()],
            bounds: vec![slo(Metric::LatencyMs, 5.0), slo(Metric::ThroughputMbps, 400.0)],
            price: 10.0,
            capacity: 1_000.0,
            provider: "op".into(),
            available: None,
        }],
        intents: vec![IntentSpec {
            tick: 0,
            sla_id: "s1".into(),
            customer: "club".into(),
            text: "slice FOR 100 users WITH low-latency FROM 00:00 LASTING 300m".into(),
            channel: None,
            checkpoint_period: 60,
            penalty: PenaltyRule {
                units_per_breach: 1.0,
                cap: 3.0,
            },
            responses: vec![ScriptedResponse::Accept],
            traffic: TrafficSpec {
                path: "a".into(),
                sample_every: 10,
                jitter_ms: 2.0,
                throughput_mbps: None,
                loss: 0.0,
            },
        }],
        faults: vec![],
        governance: vec![],
        oracle: None,
        translation: Default::default(),
        transfers: vec![],
    }
}

fn run(s: Scenario) -> Simulation {
    let mut sim = Simulation::new(s, None).unwrap();
    let failure = sim.run(None).cloned();
    assert_eq!(failure, None);
    sim
}

#[test]
fn clean_sla_runs_to_completion() {
    let sim = run(scenario());
    let m = sim.metrics();
    assert_eq!(m.violations, 0);
    assert_eq!(m.slas_completed, 1);
    assert_eq!(m.final_reports, 1);
    assert_eq!(m.rejected_tx, 0);
    assert!(m.committed_tx > 0);
    let rec = sim.lifecycle().sla("s1").unwrap();
    assert!(rec.milestones.complete_and_ordered());
    assert_eq!(rec.violations.checkpoints, 5);
    assert!(sim.events().last().unwrap().is("sim", "end"));
}

#[test]
fn latency_spike_is_detected_and_rerouted() {
    let mut s = scenario();
    s.faults.push(Fault::LatencySpike {
        tick: 100,
        path: "a".into(),
        latency_ms: 200.0,
    });
    let sim = run(s);
    let v: Vec<&LogEvent> = sim.events().iter().filter(|e| e.is("monitoring", "violation")).collect();
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].tick, 120);
    assert_eq!(v[0].get("severity"), Some("breach"));
    assert_eq!(v[0].get("action"), Some("reroute"));
    assert_eq!(v[0].get("to"), Some("b"));
    assert_eq!(v[0].get("detection_latency"), Some("20"));
    let m = sim.metrics();
    assert_eq!(m.breaches, 1);
    assert_eq!(m.penalties, 1.0);
    assert_eq!(m.mean_detection_latency, Some(20.0));
}

#[test]
fn runs_are_deterministic_per_seed() {
    let a = run(scenario());
    let b = run(scenario());
    assert_eq!(a.events(), b.events());
    let mut c = Simulation::new(scenario(), Some(8)).unwrap();
    c.run(None);
    let latency = |s: &Simulation| -> Vec<String> {
        s.events()
            .iter()
            .filter_map(|e| e.get("latency_ms").map(ToString::to_string))
            .collect()
    };
    assert_ne!(latency(&a), latency(&c));
}

#[test]
fn stopping_early_then_resuming_matches_one_run() {
    let whole = run(scenario());
    let mut parts = Simulation::new(scenario(), None).unwrap();
    while parts.now() < 150 {
        parts.step();
    }
    parts.run(None);
    assert_eq!(whole.events(), parts.events());
}

#[test]
fn metrics_agree_with_state() {
    let sim = run(scenario());
    let m = sim.metrics();
    let l = sim.primary();
    let on_chain: usize = l
        .channel_ids()
        .map(|c| l.blocks(c).unwrap().iter().map(|b| b.txs.len()).sum::<usize>())
        .sum();
    assert_eq!(m.committed_tx as usize, on_chain);
}

#[test]
fn total_outage_rejects_pending_work() {
    let mut s = scenario();
    s.faults.push(Fault::NodeDown {
        tick: 50,
        ledger: "op".into(),
        nodes: vec![1, 2, 3, 4],
    });
    s.faults.push(Fault::NodeUp {
        tick: 52,
        ledger: "op".into(),
        nodes: vec![1, 2, 3, 4],
    });
    let sim = run(s);
    assert!(sim.metrics().rejected_tx > 0);
}

#[test]
fn scenario_validation() {
    let mut s = scenario();
    s.schema_version = 9;
    assert_eq!(
        s.validate(),
        Err(SimError::SchemaMismatch { found: 9, expected: 1 })
    );

    let mut s = scenario();
    s.intents[0].traffic.path = "zz".into();
    assert!(matches!(s.validate(), Err(SimError::InvalidScenario(_))));

    let mut s = scenario();
    s.ledgers[0].nodes[0].role = Role::Validator;
    assert!(matches!(s.validate(), Err(SimError::InvalidScenario(_))));

    let mut s = scenario();
    s.transfers.push(TransferSpec {
        tick: 1,
        from: "op".into(),
        to: "op".into(),
        deadline: 5,
        record: crate::interop::Record::new("x", 1),
    });
    assert!(matches!(s.validate(), Err(SimError::InvalidScenario(_))));
}

#[test]
fn metrics_from_events_tallies() {
    let events = vec![
        LogEvent::new(1, "ledger", "round").with("committed", 3).with("rejected", 1),
        LogEvent::new(2, "ledger", "round").with("committed", 2).with("rejected", 0),
        LogEvent::new(3, "monitoring", "violation")
            .with("sla", "a")
            .with("severity", "breach")
            .with("detection_latency", 10)
            .with("penalty", 1),
        LogEvent::new(4, "monitoring", "violation")
            .with("sla", "a")
            .with("severity", "warning")
            .with("penalty", 1),
        LogEvent::new(5, "monitoring", "violation")
            .with("sla", "b")
            .with("severity", "breach")
            .with("detection_latency", 30)
            .with("penalty", 2.5),
        LogEvent::new(6, "interop", "phase").with("phase", "committed-both"),
        LogEvent::new(6, "interop", "phase").with("phase", "aborted"),
        LogEvent::new(7, "lifecycle", "terminated"),
        LogEvent::new(7, "lifecycle", "final-report"),
    ];
    let m = RunMetrics::from_events(&events);
    assert_eq!(
        m,
        RunMetrics {
            committed_tx: 5,
            rejected_tx: 1,
            violations: 3,
            breaches: 2,
            mean_detection_latency: Some(20.0),
            penalties: 3.5,
            transfers_committed: 1,
            transfers_aborted: 1,
            slas_completed: 1,
            final_reports: 1,
        }
    );
}

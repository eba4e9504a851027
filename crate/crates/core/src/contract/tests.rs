use super::templates;
use super::*;
use crate::config::LedgerConfig;
use crate::ledger::{ChainVerdict, Role};
use alloc::vec;

const GOV: NodeId = NodeId(100);

fn setup() -> (Ledger, ContractRuntime) {
    let mut nodes = vec![(GOV, Role::Governance)];
    nodes.extend((1..=4).map(|i| (NodeId(i), Role::Validator)));
    let l = Ledger::new("t", LedgerConfig::default(), nodes).unwrap();
    (l, ContractRuntime::new(RuntimeConfig::default(), GOV))
}

fn gov() -> Identity {
    Identity::Node(GOV)
}

fn party(p: &str) -> Identity {
    Identity::Party(p.into())
}

fn args(pairs: &[(&str, Value)]) -> Args {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn installed_active(l: &mut Ledger, rt: &mut ContractRuntime, d: ContractDescriptor) -> ContractId {
    let id = rt.install_contract(l, d, ChannelId::DEFAULT).unwrap();
    rt.activate(l, &id, &gov()).unwrap();
    id
}

#[test]
fn install_yields_hash_id_and_rejects_duplicates() {
    let (mut l, mut rt) = setup();
    let d = templates::access_control("sla-1", gov());
    let expect = d.canonical_digest();
    let id = rt.install_contract(&mut l, d.clone(), ChannelId::DEFAULT).unwrap();
    assert_eq!(id, expect);
    assert_eq!(rt.contract(&id).unwrap().status, Status::Installed);
    assert_eq!(
        rt.install_contract(&mut l, d, ChannelId::DEFAULT),
        Err(RuntimeError::AlreadyInstalled(id))
    );
}

#[test]
fn acl_for_undeclared_function_is_malformed() {
    let (mut l, mut rt) = setup();
    let mut d = templates::access_control("sla-1", gov());
    d.acl.insert("steal".into(), [gov()].into_iter().collect());
    assert!(matches!(
        rt.install_contract(&mut l, d, ChannelId::DEFAULT),
        Err(RuntimeError::MalformedDescriptor(_))
    ));
}

#[test]
fn install_fails_without_validators() {
    let (mut l, mut rt) = setup();
    for i in 1..=4 {
        l.node_leave(NodeId(i)).unwrap();
    }
    let d = templates::access_control("sla-1", gov());
    assert_eq!(
        rt.install_contract(&mut l, d, ChannelId::DEFAULT),
        Err(RuntimeError::CommitFailed)
    );
    assert_eq!(rt.contracts().count(), 0);
}

#[test]
fn invoke_respects_acl_and_leaves_state_untouched_on_denial() {
    let (mut l, mut rt) = setup();
    let id = installed_active(&mut l, &mut rt, templates::access_control("s", gov()));
    let before = rt.contract(&id).unwrap().state_vars.clone();
    let err = rt
        .invoke(
            &mut l,
            &id,
            "grant",
            party("mallory"),
            args(&[("grantee", Value::Id(party("mallory"))), ("until", Value::Int(99))]),
        )
        .unwrap_err();
    assert!(matches!(err, RuntimeError::AccessDenied { .. }));
    assert_eq!(rt.contract(&id).unwrap().state_vars, before);
    assert_eq!(rt.records().last().unwrap().outcome, Outcome::Denied);

    let rec = rt
        .invoke(
            &mut l,
            &id,
            "grant",
            gov(),
            args(&[("grantee", Value::Id(party("acme"))), ("until", Value::Int(99))]),
        )
        .unwrap();
    assert_eq!(rec.outcome, Outcome::Ok);
    assert_eq!(rec.call_depth, 1);
    assert_eq!(
        rt.contract(&id).unwrap().var("grantee"),
        Some(&Value::Id(party("acme")))
    );
}

#[test]
fn transition_failure_is_recorded_as_failed() {
    let (mut l, mut rt) = setup();
    let id = installed_active(&mut l, &mut rt, templates::access_control("s", gov()));
    let err = rt.invoke(&mut l, &id, "grant", gov(), Args::new()).unwrap_err();
    assert!(matches!(err, RuntimeError::TransitionFailed(_)));
    assert_eq!(rt.records().last().unwrap().outcome, Outcome::Failed);
}

/// A contract whose `ping` calls `ping` on whatever contract id is stored
/// under `peer`, after stamping `pinged`.
fn pinger(name: &str) -> ContractDescriptor {
    let owner = gov();
    ContractDescriptor {
        schema_version: DESCRIPTOR_SCHEMA_VERSION,
        name: name.into(),
        kind: ContractKind::Generic,
        owner: owner.clone(),
        states: vec!["s".into()],
        initial_state: "s".into(),
        init_vars: Default::default(),
        functions: vec![
            FunctionSpec {
                name: "link".into(),
                from: vec![],
                to: None,
                require_args: vec!["peer".into()],
                guards: vec![],
                effects: vec![Effect::Set {
                    key: "peer".into(),
                    from: Source::Arg("peer".into()),
                }],
            },
            FunctionSpec {
                name: "allow".into(),
                from: vec![],
                to: None,
                require_args: vec!["who".into()],
                guards: vec![],
                effects: vec![Effect::Grant {
                    function: "ping".into(),
                    who: Source::Arg("who".into()),
                }],
            },
            FunctionSpec {
                name: "ping".into(),
                from: vec![],
                to: None,
                require_args: vec![],
                guards: vec![],
                effects: vec![
                    Effect::Set {
                        key: "pinged".into(),
                        from: Source::Now,
                    },
                    Effect::Call {
                        target: Source::Var("peer".into()),
                        function: "ping".into(),
                        args: vec![],
                    },
                ],
            },
            FunctionSpec {
                name: "stop".into(),
                from: vec![],
                to: None,
                require_args: vec![],
                guards: vec![],
                effects: vec![Effect::Remove { key: "peer".into() }],
            },
        ],
        acl: [
            ("link".to_string(), [owner.clone()].into_iter().collect()),
            ("allow".to_string(), [owner.clone()].into_iter().collect()),
            ("ping".to_string(), [owner.clone()].into_iter().collect()),
            ("stop".to_string(), [owner].into_iter().collect()),
        ]
        .into_iter()
        .collect(),
        timers: vec![],
    }
}

/// Installs pingers `names[0] -> names[1] -> ...`, each allowed to call the next.
fn ping_chain(l: &mut Ledger, rt: &mut ContractRuntime, names: &[&str], cyclic: bool) -> Vec<ContractId> {
    let ids: Vec<ContractId> = names
        .iter()
        .map(|n| installed_active(l, rt, pinger(n)))
        .collect();
    for (i, id) in ids.iter().enumerate() {
        let next = if i + 1 < ids.len() {
            Some(ids[i + 1])
        } else if cyclic {
            Some(ids[0])
        } else {
            None
        };
        if let Some(next) = next {
            rt.invoke(l, id, "link", gov(), args(&[("peer", Value::Digest(next))]))
                .unwrap();
            rt.invoke(
                l,
                &next,
                "allow",
                gov(),
                args(&[("who", Value::Id(Identity::Contract(*id)))]),
            )
            .unwrap();
        }
    }
    ids
}

#[test]
fn two_contract_cycle_is_reentrancy() {
    let (mut l, mut rt) = setup();
    let ids = ping_chain(&mut l, &mut rt, &["a", "b"], true);
    // Hand-traced chain: [a] -> call b (chain [a, b]) -> call a, which is in the chain.
    let err = rt.invoke(&mut l, &ids[0], "ping", gov(), Args::new()).unwrap_err();
    assert_eq!(err, RuntimeError::ReentrancyDenied(ids[0]));
    for id in &ids {
        assert!(rt.contract(id).unwrap().var("pinged").is_none(), "rolled back");
    }
    let depths: Vec<u32> = rt.records().iter().rev().take(3).map(|r| r.call_depth).collect();
    assert_eq!(depths, vec![3, 2, 1]);
}

#[test]
fn chains_deeper_than_limit_are_denied() {
    let (mut l, mut rt) = setup();
    let ids = ping_chain(&mut l, &mut rt, &["c1", "c2", "c3", "c4", "c5"], false);
    // c5 has no peer, so the call at depth 5 never happens unless the limit allows it.
    rt.invoke(&mut l, &ids[4], "stop", gov(), Args::new()).unwrap();
    let err = rt.invoke(&mut l, &ids[0], "ping", gov(), Args::new()).unwrap_err();
    assert_eq!(err, RuntimeError::CallDepthExceeded(5));

    let ids = ping_chain(&mut l, &mut rt, &["d1", "d2", "d3", "d4"], false);
    let err = rt.invoke(&mut l, &ids[0], "ping", gov(), Args::new()).unwrap_err();
    assert!(matches!(err, RuntimeError::TransitionFailed(_)), "d4 has no peer: {err:?}");
    rt.invoke(&mut l, &ids[3], "stop", gov(), Args::new()).unwrap();
}

#[test]
fn access_grant_revokes_on_timer() {
    let (mut l, mut rt) = setup();
    rt.tick(&mut l, 100);
    let id = installed_active(&mut l, &mut rt, templates::access_control("s", gov()));
    rt.invoke(
        &mut l,
        &id,
        "grant",
        gov(),
        args(&[("grantee", Value::Id(party("acme"))), ("until", Value::Int(150))]),
    )
    .unwrap();
    assert!(rt.tick(&mut l, 120).is_empty());
    assert!(rt.invoke(&mut l, &id, "access", party("acme"), Args::new()).is_ok());
    assert!(rt.tick(&mut l, 149).is_empty());
    let fired = rt.tick(&mut l, 150);
    assert_eq!(fired.len(), 1);
    assert_eq!(fired[0].tick, 150);
    assert_eq!(fired[0].caller, Identity::System);
    assert_eq!(fired[0].outcome, Outcome::Ok);
    rt.tick(&mut l, 151);
    assert!(matches!(
        rt.invoke(&mut l, &id, "access", party("acme"), Args::new()),
        Err(RuntimeError::AccessDenied { .. })
    ));
    assert!(rt.tick(&mut l, 500).is_empty(), "fires once");
}

#[test]
fn same_tick_timers_fire_in_contract_id_order() {
    let (mut l, mut rt) = setup();
    let mut ids = Vec::new();
    for s in ["x", "y", "z"] {
        let id = installed_active(&mut l, &mut rt, templates::access_control(s, gov()));
        rt.invoke(
            &mut l,
            &id,
            "grant",
            gov(),
            args(&[("grantee", Value::Id(party(s))), ("until", Value::Int(10))]),
        )
        .unwrap();
        ids.push(id);
    }
    let fired: Vec<ContractId> = rt.tick(&mut l, 10).iter().map(|r| r.contract_id).collect();
    ids.sort();
    assert_eq!(fired, ids);
}

#[test]
fn control_instructions() {
    let (mut l, mut rt) = setup();
    let id = installed_active(&mut l, &mut rt, templates::access_control("s", gov()));
    let instr = |issuer, command| ControlInstruction {
        issuer,
        target: id,
        command,
        tick: 0,
    };
    assert_eq!(
        rt.apply_control(&mut l, instr(NodeId(1), Command::Interrupt)),
        Err(RuntimeError::NotGovernance(NodeId(1)))
    );
    assert_eq!(
        rt.apply_control(&mut l, instr(GOV, Command::Interrupt)),
        Ok(Status::Interrupted)
    );
    assert_eq!(
        rt.invoke(&mut l, &id, "access", gov(), Args::new()),
        Err(RuntimeError::ContractNotActive(Status::Interrupted))
    );
    assert_eq!(
        rt.apply_control(&mut l, instr(GOV, Command::Resume)),
        Ok(Status::Active)
    );
    assert!(matches!(
        rt.apply_control(&mut l, instr(GOV, Command::Resume)),
        Err(RuntimeError::InvalidControl { .. })
    ));
    assert_eq!(
        rt.apply_control(&mut l, instr(GOV, Command::Terminate)),
        Ok(Status::Terminated)
    );
}

#[test]
fn termination_clears_state_but_keeps_history() {
    let (mut l, mut rt) = setup();
    let id = installed_active(&mut l, &mut rt, templates::access_control("s", gov()));
    rt.invoke(
        &mut l,
        &id,
        "grant",
        gov(),
        args(&[("grantee", Value::Id(party("acme"))), ("until", Value::Int(50))]),
    )
    .unwrap();
    l.run_all_rounds();
    let history: Vec<Digest> = rt.records().iter().filter_map(|r| r.tx_id).collect();
    assert_eq!(
        rt.terminate_contract(&mut l, &id, &party("acme")),
        Err(RuntimeError::NotAuthorized)
    );
    let proof = rt.terminate_contract(&mut l, &id, &gov()).unwrap();
    assert!(proof.is_valid());
    let c = rt.contract(&id).unwrap();
    assert!(c.state_vars.is_empty());
    assert_eq!(c.status, Status::Terminated);
    assert!(c.timers.iter().all(|t| !t.armed));
    assert_eq!(
        rt.invoke(&mut l, &id, "access", party("acme"), Args::new()),
        Err(RuntimeError::ContractNotActive(Status::Terminated))
    );
    assert_eq!(
        rt.terminate_contract(&mut l, &id, &gov()),
        Err(RuntimeError::AlreadyTerminated)
    );
    l.run_all_rounds();
    for tx in history {
        assert!(l.committed_tx(&tx).is_some());
    }
    assert_eq!(l.verify_chain(ChannelId::DEFAULT), Ok(ChainVerdict::Intact));
    assert!(rt.tick(&mut l, 60).is_empty(), "timer disarmed");
}

#[test]
fn offchain_round_trip_and_tamper() {
    let (mut l, mut rt) = setup();
    let id = installed_active(&mut l, &mut rt, templates::access_control("s", gov()));
    let log: Vec<u8> = (0..(1usize << 20)).map(|i| (i % 251) as u8).collect();
    let r = rt.store_offchain(&mut l, &id, log.clone()).unwrap();
    l.run_all_rounds();
    let blocks = l.blocks(ChannelId::DEFAULT).unwrap();
    let tx = blocks
        .last()
        .unwrap()
        .txs
        .iter()
        .find(|t| t.payload.tag == "offchain-ref")
        .unwrap();
    assert!(tx.payload.body.len() < 128);
    assert!(tx.payload.body.windows(32).any(|w| w == r.0.as_bytes()));
    assert_eq!(rt.load_offchain(&r).unwrap(), log);

    let missing = ContentRef(Digest::of(b"nope"));
    assert_eq!(rt.load_offchain(&missing), Err(RuntimeError::NotFound(missing)));
    rt.tamper_offchain(&r);
    assert_eq!(rt.load_offchain(&r), Err(RuntimeError::HashMismatch(r)));
    assert!(matches!(
        rt.store_offchain(&mut l, &id, vec![1, 2, 3]),
        Err(RuntimeError::PayloadWithinLimit { .. })
    ));
}

#[test]
fn every_invocation_is_recorded_on_ledger() {
    let (mut l, mut rt) = setup();
    let id = installed_active(&mut l, &mut rt, templates::access_control("s", gov()));
    let _ = rt.invoke(&mut l, &id, "access", party("x"), Args::new());
    let _ = rt.invoke(&mut l, &id, "nope", gov(), Args::new());
    l.run_all_rounds();
    assert_eq!(rt.records().len(), 2);
    for r in rt.records() {
        let tx = r.tx_id.expect("submitted");
        assert!(l.outcome(&tx).unwrap().is_committed());
    }
}

#[test]
fn descriptor_identity_strings_round_trip() {
    for s in ["node:3", "party:acme", "system"] {
        let id: Identity = s.parse().unwrap();
        assert_eq!(id.to_string(), s);
    }
    assert!("bogus".parse::<Identity>().is_err());
    let c = Identity::Contract(Digest::of(b"c"));
    assert_eq!(c.to_string().parse::<Identity>().unwrap(), c);
}

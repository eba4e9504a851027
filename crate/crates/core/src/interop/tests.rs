use super::*;
use crate::config::LedgerConfig;
use crate::ledger::Role;
use alloc::string::ToString;
use alloc::vec;
use proptest::prelude::*;

const NOTARY: NodeId = NodeId(100);

fn ledger(id: &str) -> Ledger {
    let mut nodes = vec![(NOTARY, Role::Governance)];
    nodes.extend((1..=4).map(|i| (NodeId(i), Role::Validator)));
    Ledger::new(id, LedgerConfig::default(), nodes).unwrap()
}

fn sla_record() -> Record {
    Record::new("sla", 1)
        .with("sla_id", "s-1")
        .with("latency_ms", "20")
        .with("provider", "npn")
}

fn rename_table() -> TranslationTable {
    let mut renames = BTreeMap::new();
    renames.insert("sla_id".to_string(), "agreement".to_string());
    renames.insert("latency_ms".to_string(), "delay_ms".to_string());
    renames.insert("provider".to_string(), "operator".to_string());
    TranslationTable {
        rules: vec![TranslationRule {
            record_type: "sla".into(),
            from: 1,
            to: 2,
            renames,
            required: vec!["agreement".into()],
        }],
    }
}

struct Pair {
    src: Ledger,
    dst: Ledger,
    relay: Relay,
    tx: Digest,
}

/// Source ledger holding one committed record; both sides registered.
fn pair(dst_version: u32, table: TranslationTable) -> Pair {
    let mut src = ledger("npn");
    let mut dst = ledger("plmn");
    let tx = src
        .submit(NOTARY, ChannelId::DEFAULT, sla_record().to_payload())
        .unwrap()
        .tx_id;
    src.run_all_rounds();
    let mut relay = Relay::new(NOTARY, table, InteropConfig::default());
    relay.register(&src, 1).unwrap();
    relay.register(&dst, dst_version).unwrap();
    dst.advance_to(0);
    Pair { src, dst, relay, tx }
}

fn messages(l: &Ledger, transfer: u64) -> Vec<RelayMessage> {
    l.blocks(ChannelId::DEFAULT)
        .unwrap()
        .iter()
        .flat_map(|b| b.txs.iter())
        .filter_map(|tx| RelayMessage::from_payload(&tx.payload))
        .filter(|m| m.transfer() == transfer)
        .collect()
}

fn has(msgs: &[RelayMessage], tag: &str) -> bool {
    msgs.iter().any(|m| m.tag() == tag)
}

#[test]
fn identity_translation_keeps_hash() {
    let r = sla_record();
    let t = TranslationTable::default().translate(&r, 1).unwrap();
    assert_eq!(t.record, r);
    assert_eq!(t.original_hash, t.translated_hash);
}

#[test]
fn rename_mapping_inverts() {
    let table = rename_table();
    let fwd = table.translate(&sla_record(), 2).unwrap();
    assert_eq!(fwd.record.fields["delay_ms"], "20");
    assert_ne!(fwd.original_hash, fwd.translated_hash);
    let back = table.rules[0].inverse().apply(&fwd.record).unwrap();
    assert_eq!(back, sla_record());
}

#[test]
fn missing_required_field_is_field_loss() {
    let mut table = rename_table();
    table.rules[0].required.push("region".into());
    assert_eq!(
        table.translate(&sla_record(), 2),
        Err(InteropError::FieldLoss("region".into()))
    );
}

#[test]
fn unsupported_translation_fails_before_any_lock() {
    let mut p = pair(3, rename_table());
    assert_eq!(
        p.relay.propose(&p.src, p.tx, &p.dst, ChannelId::DEFAULT, 20),
        Err(InteropError::TranslationUnsupported {
            record_type: "sla".into(),
            from: 1,
            to: 3
        })
    );
    assert!(p.relay.transfers().is_empty());
    assert_eq!(p.src.pending_len(ChannelId::DEFAULT), 0);
    assert_eq!(p.dst.pending_len(ChannelId::DEFAULT), 0);
}

#[test]
fn precondition_errors() {
    let mut p = pair(1, TranslationTable::default());
    let bogus = Digest::of(b"nope");
    assert_eq!(
        p.relay.propose(&p.src, bogus, &p.dst, ChannelId::DEFAULT, 20),
        Err(InteropError::UnknownTx(bogus))
    );
    let other = p
        .src
        .submit(NOTARY, ChannelId::DEFAULT, Payload::data("note", vec![1]))
        .unwrap()
        .tx_id;
    p.src.run_all_rounds();
    assert_eq!(
        p.relay.propose(&p.src, other, &p.dst, ChannelId::DEFAULT, 20),
        Err(InteropError::NotARecord(other))
    );
    let mut relay = Relay::new(NodeId(1), TranslationTable::default(), InteropConfig::default());
    assert_eq!(
        relay.register(&p.src, 1),
        Err(InteropError::NotaryNotRegistered("npn".into()))
    );
    let stranger = ledger("x");
    assert_eq!(
        p.relay.propose(&p.src, p.tx, &stranger, ChannelId::DEFAULT, 20),
        Err(InteropError::NotaryNotRegistered("x".into()))
    );
}

#[test]
fn healthy_transfer_commits_on_both() {
    let mut p = pair(2, rename_table());
    let id = p.relay.propose(&p.src, p.tx, &p.dst, ChannelId::DEFAULT, 20).unwrap();
    let t = run_transfer(&mut p.relay, id, &mut p.src, &mut p.dst, 10).unwrap();
    assert_eq!(t.phase, Phase::CommittedBoth);
    let original = sla_record().canonical_digest();
    let on_dst = messages(&p.dst, id);
    let rec = on_dst.iter().find(|m| m.tag() == "relay-record").unwrap();
    assert_eq!(rec.hash(), original);
    match rec {
        RelayMessage::Record {
            translated_hash,
            record,
            ..
        } => {
            assert_eq!(*translated_hash, record.canonical_digest());
            assert_eq!(record.schema_version, 2);
        }
        _ => unreachable!(),
    }
    assert!(has(&messages(&p.src, id), "relay-confirm"));
    assert!(!has(&on_dst, "relay-unlock"));
    let phases: Vec<Phase> = p.relay.events().iter().map(|e| e.phase).collect();
    assert_eq!(phases, vec![Phase::Proposed, Phase::Locked, Phase::CommittedBoth]);
}

#[test]
fn dead_destination_times_out_and_unlocks_source() {
    let mut p = pair(1, TranslationTable::default());
    for v in 1..=4 {
        p.dst.faults().set_active(NodeId(v), false).unwrap();
    }
    let id = p.relay.propose(&p.src, p.tx, &p.dst, ChannelId::DEFAULT, 20).unwrap();
    let err = run_transfer(&mut p.relay, id, &mut p.src, &mut p.dst, 10).unwrap_err();
    assert_eq!(err, InteropError::Timeout(id));
    let t = p.relay.transfer(id).unwrap();
    assert_eq!(t.phase, Phase::Aborted);
    assert!(t.settled(&p.src, &p.dst));
    let on_src = messages(&p.src, id);
    assert!(has(&on_src, "relay-lock") && has(&on_src, "relay-unlock"));
    assert!(messages(&p.dst, id).is_empty());
}

fn matched_pair(dst_delay: Tick) -> Pair {
    let mut p = pair(1, TranslationTable::default());
    for v in 1..=4 {
        p.dst.set_link_delay(NodeId(v), dst_delay).unwrap();
    }
    p.src.advance_to(38);
    p.dst.advance_to(38);
    let id = p.relay.propose(&p.src, p.tx, &p.dst, ChannelId::DEFAULT, 50).unwrap();
    run_transfer(&mut p.relay, id, &mut p.src, &mut p.dst, 10).unwrap();
    p
}

#[test]
fn divergence_of_matched_transfer() {
    // Locks at 38 are visible on the slow side at 40; the record then lands
    // at 40 + 2 while the confirmation is visible at 40.
    let mut p = matched_pair(2);
    let s = p.relay.sync_check(&mut p.src, &mut p.dst).unwrap();
    assert_eq!(s.last_matched, Some((40, 42)));
    assert_eq!(s.divergence, 2);
    assert!(!s.alert);
    assert!(p.src.alerts().is_empty());
    // Seen from the other side the ticks swap.
    let r = p.relay.sync_check(&mut p.dst, &mut p.src).unwrap();
    assert_eq!(r.last_matched, Some((42, 40)));
}

#[test]
fn excessive_divergence_alerts_both_ledgers() {
    let mut p = matched_pair(15);
    let s = p.relay.sync_check(&mut p.src, &mut p.dst).unwrap();
    assert_eq!(s.divergence, 15);
    assert!(s.alert);
    for l in [&p.src, &p.dst] {
        assert!(l.alerts().iter().any(|a| a.kind == "sync-divergence"));
    }
}

#[test]
fn sync_without_transfers_has_no_history() {
    let mut p = pair(1, TranslationTable::default());
    assert_eq!(
        p.relay.sync_check(&mut p.src, &mut p.dst),
        Err(InteropError::NoHistory("npn".into(), "plmn".into()))
    );
}

#[test]
fn relay_messages_round_trip() {
    let h = Digest::of(b"h");
    for m in [
        RelayMessage::Lock { transfer: 3, hash: h },
        RelayMessage::Confirm { transfer: 3, hash: h },
        RelayMessage::Unlock { transfer: 3, hash: h },
        RelayMessage::Record {
            transfer: 3,
            hash: h,
            translated_hash: sla_record().canonical_digest(),
            record: sla_record(),
        },
    ] {
        assert_eq!(RelayMessage::from_payload(&m.to_payload(7)), Some(m));
    }
    assert_eq!(RelayMessage::from_payload(&Payload::data("x", vec![])), None);
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Side {
    Src,
    Dst,
}

/// One transfer with the chosen side's validators offline over
/// `[start, start + len)`.
fn run_with_outage(side: Side, start: Tick, len: Tick, delay: Tick) -> (Pair, u64, Tick) {
    let mut p = pair(2, rename_table());
    for v in 1..=4 {
        p.src.set_link_delay(NodeId(v), delay).unwrap();
        p.dst.set_link_delay(NodeId(v), delay).unwrap();
    }
    p.src.advance_to(1);
    p.dst.advance_to(1);
    let id = p.relay.propose(&p.src, p.tx, &p.dst, ChannelId::DEFAULT, 20).unwrap();
    let mut terminal_at = None;
    for now in 1..=120 {
        let down = now >= start && now < start + len;
        let l = match side {
            Side::Src => &mut p.src,
            Side::Dst => &mut p.dst,
        };
        for v in 1..=4 {
            l.faults().set_active(NodeId(v), !down).unwrap();
        }
        p.src.advance_to(now);
        p.dst.advance_to(now);
        p.relay.step(&mut p.src, &mut p.dst, now);
        p.src.run_all_rounds();
        p.dst.run_all_rounds();
        if terminal_at.is_none() && p.relay.transfer(id).unwrap().phase.is_terminal() {
            terminal_at = Some(now);
        }
    }
    (p, id, terminal_at.expect("terminal"))
}

#[test]
fn atomic_under_every_outage_point() {
    let deadline = 21;
    let mut seen = BTreeMap::new();
    for delay in [0, 3] {
        for side in [Side::Src, Side::Dst] {
            for start in 1..=deadline + 2 * delay + 2 {
                for len in [1, 2, 4, 8, 16, 60] {
                    let (p, id, terminal_at) = run_with_outage(side, start, len, delay);
                    let ctx = format!("{side:?} outage [{start},{}) delay {delay}", start + len);
                    let t = p.relay.transfer(id).unwrap();
                    let s = messages(&p.src, id);
                    let d = messages(&p.dst, id);
                    let (dst_rec, src_conf) = (has(&d, "relay-record"), has(&s, "relay-confirm"));
                    let (src_unl, dst_unl) = (has(&s, "relay-unlock"), has(&d, "relay-unlock"));
                    // Neither side holds the outcome alone.
                    assert!(!dst_rec || src_conf || src_unl, "{ctx}");
                    assert!(!src_conf || dst_rec || dst_unl, "{ctx}");
                    // Locks are released after an abort, never after success.
                    match t.phase {
                        Phase::CommittedBoth => {
                            assert!(dst_rec && src_conf, "{ctx}");
                            assert!(!src_unl && !dst_unl, "{ctx}");
                            let rec = d.iter().find(|m| m.tag() == "relay-record").unwrap();
                            assert_eq!(rec.hash(), sla_record().canonical_digest(), "{ctx}");
                        }
                        Phase::Aborted => {
                            assert!(!(dst_rec && src_conf) || (src_unl && dst_unl), "{ctx}");
                            assert!(!has(&s, "relay-lock") || src_unl, "{ctx}");
                            assert!(!has(&d, "relay-lock") || dst_unl, "{ctx}");
                            assert!(t.settled(&p.src, &p.dst), "{ctx}");
                        }
                        other => panic!("{ctx}: {other:?}"),
                    }
                    assert!(terminal_at <= t.deadline + 2 * delay, "{ctx}: {terminal_at}");
                    *seen.entry(format!("{:?}", t.phase)).or_insert(0) += 1;
                    if dst_rec && !src_conf {
                        *seen.entry("compensated-record".to_string()).or_insert(0) += 1;
                    }
                }
            }
        }
    }
    // The sweep reaches both outcomes, including a destination record
    // compensated by unlocks.
    assert!(seen.len() == 3, "{seen:?}");
}

fn field_name() -> impl Strategy<Value = String> {
    "[a-z]{1,6}"
}

proptest! {
    #[test]
    fn renames_are_invertible_on_mapped_fields(
        fields in prop::collection::btree_map(field_name(), "[ -~]{0,8}", 1..8),
        suffix in "[A-Z]{1,3}",
    ) {
        let renames: BTreeMap<String, String> = fields
            .keys()
            .map(|k| (k.clone(), format!("{k}{suffix}")))
            .collect();
        let rule = TranslationRule {
            record_type: "t".into(),
            from: 1,
            to: 2,
            renames,
            required: vec![],
        };
        let r = Record { record_type: "t".into(), schema_version: 1, fields };
        let fwd = rule.apply(&r).unwrap();
        prop_assert_eq!(rule.inverse().apply(&fwd).unwrap(), r);
    }

    #[test]
    fn records_decode_what_they_encode(
        fields in prop::collection::btree_map(field_name(), "\\PC{0,8}", 0..6),
        version in any::<u32>(),
    ) {
        let r = Record { record_type: "x".into(), schema_version: version, fields };
        prop_assert_eq!(Record::decode(&r.canonical_bytes()).unwrap(), r);
    }
}

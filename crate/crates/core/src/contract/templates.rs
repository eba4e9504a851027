//! Descriptors for the four SLA subcontracts and the master SLA contract.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::descriptor::*;
use crate::hash::Digest;

fn func(name: &str) -> FunctionSpec {
    FunctionSpec {
        name: name.to_string(),
        from: Vec::new(),
        to: None,
        require_args: Vec::new(),
        guards: Vec::new(),
        effects: Vec::new(),
    }
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn acl(entries: &[(&str, &[Identity])]) -> BTreeMap<String, BTreeSet<Identity>> {
    entries
        .iter()
        .map(|(f, ids)| (f.to_string(), ids.iter().cloned().collect()))
        .collect()
}

/// Records the digest of agreed terms.
pub fn intent_translation(sla_id: &str, terms_digest: Digest, owner: Identity) -> ContractDescriptor {
    let mut init_vars = BTreeMap::new();
    init_vars.insert("sla_id".into(), Value::Text(sla_id.into()));
    init_vars.insert("terms_digest".into(), Value::Digest(terms_digest));
    ContractDescriptor {
        schema_version: DESCRIPTOR_SCHEMA_VERSION,
        name: format!("it-sc/{sla_id}/{}", terms_digest.short()),
        kind: ContractKind::ItSc,
        owner: owner.clone(),
        states: strings(&["recorded"]),
        initial_state: "recorded".into(),
        init_vars,
        functions: vec![func("read")],
        acl: acl(&[("read", &[owner])]),
        timers: Vec::new(),
    }
}

/// `grant(grantee, until)` adds the grantee to `access` and arms a
/// revocation timer at `until`.
pub fn access_control(sla_id: &str, owner: Identity) -> ContractDescriptor {
    let mut grant = func("grant");
    grant.from = strings(&["idle"]);
    grant.to = Some("granted".into());
    grant.require_args = strings(&["grantee", "until"]);
    grant.effects = vec![
        Effect::Set {
            key: "grantee".into(),
            from: Source::Arg("grantee".into()),
        },
        Effect::Set {
            key: "until".into(),
            from: Source::Arg("until".into()),
        },
        Effect::Grant {
            function: "access".into(),
            who: Source::Arg("grantee".into()),
        },
        Effect::ArmTimer {
            timer: "revoke-at-expiry".into(),
            at: Source::Arg("until".into()),
            action: "revoke".into(),
        },
    ];
    let mut revoke = func("revoke");
    revoke.from = strings(&["granted"]);
    revoke.to = Some("revoked".into());
    revoke.effects = vec![
        Effect::Revoke {
            function: "access".into(),
            who: Source::Var("grantee".into()),
        },
        Effect::Set {
            key: "revoked_at".into(),
            from: Source::Now,
        },
    ];
    ContractDescriptor {
        schema_version: DESCRIPTOR_SCHEMA_VERSION,
        name: format!("ac-sc/{sla_id}"),
        kind: ContractKind::AcSc,
        owner: owner.clone(),
        states: strings(&["idle", "granted", "revoked"]),
        initial_state: "idle".into(),
        init_vars: BTreeMap::new(),
        functions: vec![grant, revoke, func("access")],
        acl: acl(&[
            ("grant", core::slice::from_ref(&owner)),
            ("revoke", &[owner.clone(), Identity::System]),
        ]),
        timers: Vec::new(),
    }
}

pub fn service_orchestration(sla_id: &str, plan_digest: Digest, owner: Identity) -> ContractDescriptor {
    let mut init_vars = BTreeMap::new();
    init_vars.insert("plan_digest".into(), Value::Digest(plan_digest));
    let mut activate = func("activate");
    activate.from = strings(&["reserved"]);
    activate.to = Some("active".into());
    let mut reroute = func("reroute");
    reroute.from = strings(&["active"]);
    reroute.require_args = strings(&["path"]);
    reroute.effects = vec![Effect::Set {
        key: "path".into(),
        from: Source::Arg("path".into()),
    }];
    let mut release = func("release");
    release.to = Some("released".into());
    ContractDescriptor {
        schema_version: DESCRIPTOR_SCHEMA_VERSION,
        name: format!("so-sc/{sla_id}"),
        kind: ContractKind::SoSc,
        owner: owner.clone(),
        states: strings(&["reserved", "active", "released"]),
        initial_state: "reserved".into(),
        init_vars,
        functions: vec![activate, reroute, release],
        acl: acl(&[
            ("activate", core::slice::from_ref(&owner)),
            ("reroute", core::slice::from_ref(&owner)),
            ("release", core::slice::from_ref(&owner)),
        ]),
        timers: Vec::new(),
    }
}

/// Identity a resource's PDLF uses when recording usage.
pub fn pdlf_identity(resource: &str) -> Identity {
    Identity::Party(format!("pdlf:{resource}"))
}

pub fn service_recording(sla_id: &str, resources: &[String], owner: Identity) -> ContractDescriptor {
    let mut record = func("record");
    record.require_args = strings(&["sample"]);
    record.effects = vec![
        Effect::Set {
            key: "last_sample".into(),
            from: Source::Arg("sample".into()),
        },
        Effect::Set {
            key: "last_tick".into(),
            from: Source::Now,
        },
    ];
    let mut allowed: Vec<Identity> = resources.iter().map(|r| pdlf_identity(r)).collect();
    allowed.push(owner.clone());
    ContractDescriptor {
        schema_version: DESCRIPTOR_SCHEMA_VERSION,
        name: format!("sr-sc/{sla_id}"),
        kind: ContractKind::SrSc,
        owner,
        states: strings(&["recording"]),
        initial_state: "recording".into(),
        init_vars: BTreeMap::new(),
        functions: vec![record],
        acl: acl(&[("record", &allowed)]),
        timers: Vec::new(),
    }
}

/// The SLA itself. `start(end)` arms the duration timer; `expire` fires
/// from it.
pub fn master_sla(sla_id: &str, terms_digest: Digest, owner: Identity) -> ContractDescriptor {
    let mut init_vars = BTreeMap::new();
    init_vars.insert("terms_digest".into(), Value::Digest(terms_digest));
    let mut start = func("start");
    start.from = strings(&["pending"]);
    start.to = Some("running".into());
    start.require_args = strings(&["end"]);
    start.effects = vec![
        Effect::Set {
            key: "started_at".into(),
            from: Source::Now,
        },
        Effect::ArmTimer {
            timer: "duration".into(),
            at: Source::Arg("end".into()),
            action: "expire".into(),
        },
    ];
    let mut expire = func("expire");
    expire.from = strings(&["running"]);
    expire.to = Some("expired".into());
    expire.effects = vec![Effect::Set {
        key: "expired_at".into(),
        from: Source::Now,
    }];
    let mut checkpoint = func("checkpoint");
    checkpoint.from = strings(&["running"]);
    checkpoint.require_args = strings(&["verdict"]);
    checkpoint.effects = vec![Effect::Set {
        key: "last_checkpoint".into(),
        from: Source::Arg("verdict".into()),
    }];
    ContractDescriptor {
        schema_version: DESCRIPTOR_SCHEMA_VERSION,
        name: format!("sla/{sla_id}"),
        kind: ContractKind::Generic,
        owner: owner.clone(),
        states: strings(&["pending", "running", "expired"]),
        initial_state: "pending".into(),
        init_vars,
        functions: vec![start, expire, checkpoint],
        acl: acl(&[
            ("start", core::slice::from_ref(&owner)),
            ("expire", &[owner.clone(), Identity::System]),
            ("checkpoint", core::slice::from_ref(&owner)),
        ]),
        timers: Vec::new(),
    }
}

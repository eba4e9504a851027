use super::*;
use alloc::string::ToString;
use alloc::vec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn slo(m: Metric, t: f64) -> Slo {
    Slo::new(m, t).unwrap()
}

fn sla(id: &str, provider: &str, customer: &str, slos: Vec<Slo>, w: Window) -> Sla {
    Sla {
        sla_id: id.into(),
        provider: provider.into(),
        customer: customer.into(),
        slos,
        validity: w,
        checkpoint_period: w.len(),
        penalty: PenaltyRule {
            units_per_breach: 5.0,
            cap: 100.0,
        },
        layer: Layer::Horizontal,
        parents: vec![],
    }
}

fn two_metric(id: &str, lat: f64, avail: f64) -> Sla {
    sla(
        id,
        "p",
        "p",
        vec![slo(Metric::LatencyMs, lat), slo(Metric::AvailabilityFraction, avail)],
        Window::new(0, 100),
    )
}

fn measured(pairs: &[(Metric, f64)]) -> BTreeMap<Metric, f64> {
    pairs.iter().copied().collect()
}

#[test]
fn slo_validation() {
    assert!(Slo::new(Metric::AvailabilityFraction, 1.2).is_err());
    assert!(Slo::new(Metric::LatencyMs, 0.0).is_err());
    assert!(Slo::new(Metric::PacketLossFraction, 0.0).is_ok());
    let wrong = Slo {
        metric: Metric::LatencyMs,
        comparator: Comparator::Ge,
        target: 5.0,
    };
    assert!(wrong.validate().is_err());
}

#[test]
fn sla_validation() {
    let mut s = two_metric("a", 20.0, 0.99);
    assert!(s.validate().is_ok());
    s.checkpoint_period = 30;
    assert_eq!(
        s.validate(),
        Err(SlaError::BadCheckpointPeriod { period: 30, len: 100 })
    );
    s.checkpoint_period = 25;
    s.slos.push(slo(Metric::LatencyMs, 5.0));
    assert_eq!(s.validate(), Err(SlaError::DuplicateMetric(Metric::LatencyMs)));
    s.slos.clear();
    assert_eq!(s.validate(), Err(SlaError::NoObjectives));
    s.validity = Window::new(5, 5);
    assert!(matches!(s.validate(), Err(SlaError::EmptyValidity { .. })));
}

#[test]
fn boundary_counts_as_met() {
    let s = sla("a", "p", "c", vec![slo(Metric::LatencyMs, 20.0)], Window::new(0, 10));
    let r = evaluate(&s, Window::new(0, 10), &measured(&[(Metric::LatencyMs, 20.0)])).unwrap();
    assert_eq!(r.breach_count, 0);
    assert!(r.verdicts[0].met);
}

#[test]
fn evaluate_one_breach() {
    let s = two_metric("a", 20.0, 0.99);
    let m = measured(&[(Metric::LatencyMs, 25.0), (Metric::AvailabilityFraction, 0.995)]);
    let r = evaluate(&s, Window::new(0, 50), &m).unwrap();
    // Hand evaluation: 25 > 20 fails, 0.995 >= 0.99 passes.
    assert_eq!(r.breach_count, 1);
    assert_eq!(r.accrued_penalty, 5.0);
    assert_eq!(r.failed().next().unwrap().metric, Metric::LatencyMs);
}

#[test]
fn evaluate_errors() {
    let s = two_metric("a", 20.0, 0.99);
    let m = measured(&[(Metric::LatencyMs, 25.0)]);
    assert_eq!(
        evaluate(&s, Window::new(0, 50), &m),
        Err(SlaError::MissingMetric(Metric::AvailabilityFraction))
    );
    assert!(matches!(
        evaluate(&s, Window::new(90, 110), &m),
        Err(SlaError::WindowOutOfValidity { .. })
    ));
}

#[test]
fn penalty_is_capped() {
    let rule = PenaltyRule {
        units_per_breach: 5.0,
        cap: 12.0,
    };
    assert_eq!(rule.penalty(3), 12.0);
    assert_eq!(rule.penalty(0), 0.0);
}

#[test]
fn aggregation_statistics() {
    assert_eq!(aggregate(Metric::LatencyMs, &[10.0, 20.0, 30.0]), Some(20.0));
    assert_eq!(
        aggregate(Metric::AvailabilityFraction, &[1.0, 0.0, 1.0, 1.0]),
        Some(0.75)
    );
    assert_eq!(aggregate(Metric::ThroughputMbps, &[]), None);
}

#[test]
fn single_element_chain_is_identity() {
    let a = two_metric("a", 20.0, 0.99);
    let c = compose_serial(core::slice::from_ref(&a)).unwrap();
    assert_eq!(c.slos, a.slos);
    assert_eq!(c.parents, vec!["a".to_string()]);
}

#[test]
fn two_link_composition() {
    let a = sla(
        "a",
        "mid",
        "cust",
        vec![slo(Metric::LatencyMs, 10.0), slo(Metric::AvailabilityFraction, 0.99)],
        Window::new(0, 100),
    );
    let b = sla(
        "b",
        "far",
        "mid",
        vec![slo(Metric::LatencyMs, 20.0), slo(Metric::AvailabilityFraction, 0.98)],
        Window::new(50, 150),
    );
    let c = compose_serial(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(c.slo(Metric::LatencyMs).unwrap().target, 30.0);
    let avail = c.slo(Metric::AvailabilityFraction).unwrap().target;
    assert!((avail - 0.9702).abs() < 1e-12);
    assert_eq!(c.validity, Window::new(50, 100));
    assert_eq!((c.customer.as_str(), c.provider.as_str()), ("cust", "far"));
    assert_eq!(c.penalty.cap, 200.0);
    assert!(c.validate().is_ok());

    // Monte Carlo: both independent links must be up.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let trials = 1_000_000;
    let up = (0..trials)
        .filter(|_| rng.gen::<f64>() < 0.99 && rng.gen::<f64>() < 0.98)
        .count();
    let mc = up as f64 / trials as f64;
    assert!((mc - avail).abs() < 0.001, "mc {mc} vs {avail}");
}

#[test]
fn composition_errors() {
    let a = two_metric("a", 10.0, 0.99);
    let mut b = two_metric("b", 10.0, 0.99);
    b.validity = Window::new(200, 300);
    let a2 = Sla {
        validity: Window::new(0, 100),
        ..a.clone()
    };
    assert_eq!(compose_serial(&[a2, b]), Err(SlaError::DisjointValidity));
    assert_eq!(compose_serial(&[]), Err(SlaError::EmptyChain));
    let mut c = two_metric("c", 10.0, 0.99);
    c.customer = "stranger".into();
    assert!(matches!(
        compose_serial(&[a.clone(), c.clone()]),
        Err(SlaError::BrokenPartyChain { .. })
    ));
    c.layer = Layer::Vertical;
    assert!(compose_serial(&[a, c]).is_ok(), "vertical stacking needs no party link");
}

#[test]
fn weighted_examples() {
    let npn = sla(
        "npn",
        "npn-op",
        "hospital",
        vec![slo(Metric::LatencyMs, 10.0)],
        Window::new(0, 100),
    );
    let mut plmn = sla(
        "plmn",
        "mno",
        "hospital",
        vec![slo(Metric::LatencyMs, 50.0)],
        Window::new(0, 100),
    );
    plmn.penalty.units_per_breach = 8.0;
    let w = compose_weighted(&npn, &plmn, 0.7).unwrap();
    // 0.7 * 10 + 0.3 * 50 = 22
    assert!((w.slo(Metric::LatencyMs).unwrap().target - 22.0).abs() < 1e-9);
    assert_eq!(w.penalty.units_per_breach, 8.0);
    assert_eq!(w.parents, vec!["npn".to_string(), "plmn".to_string()]);
    assert_eq!(compose_weighted(&npn, &plmn, 1.0).unwrap().slos, npn.slos);

    plmn.slos.push(slo(Metric::ThroughputMbps, 100.0));
    assert_eq!(
        compose_weighted(&npn, &plmn, 0.5),
        Err(SlaError::MetricSetMismatch)
    );
    assert_eq!(
        compose_weighted(&npn, &npn, 1.5),
        Err(SlaError::InvalidWeight(1.5))
    );
}

fn offering(id: &str, lat: f64, price: f64) -> ServiceOffering {
    ServiceOffering {
        offering_id: id.into(),
        tags: vec!["slice".into()],
        bounds: vec![slo(Metric::LatencyMs, lat)],
        price,
        capacity: 10.0,
        provider: "op".into(),
        available: None,
    }
}

#[test]
fn catalogue_examples() {
    let cat = vec![offering("A", 15.0, 10.0), offering("B", 25.0, 5.0)];
    let w = Window::new(0, 10);
    let hits = catalogue_search(&cat, &[slo(Metric::LatencyMs, 20.0)], w);
    assert_eq!(hits.iter().map(|o| o.offering_id.as_str()).collect::<Vec<_>>(), ["A"]);
    let all = catalogue_search(&cat, &[], w);
    assert_eq!(all.iter().map(|o| o.offering_id.as_str()).collect::<Vec<_>>(), ["B", "A"]);
    assert!(catalogue_search(&cat, &[slo(Metric::LatencyMs, 1.0)], w).is_empty());

    let mut full = cat.clone();
    full[1].capacity = 0.0;
    full[0].available = Some(Window::new(5, 100));
    assert!(catalogue_search(&full, &[], w).is_empty());
}

fn arb_slos() -> impl Strategy<Value = Vec<Slo>> {
    (1.0..100.0f64, 0.5..1.0f64, 1.0..1000.0f64, 0.0..0.2f64).prop_map(|(l, a, t, p)| {
        vec![
            slo(Metric::LatencyMs, l),
            slo(Metric::AvailabilityFraction, a),
            slo(Metric::ThroughputMbps, t),
            slo(Metric::PacketLossFraction, p),
        ]
    })
}

fn link(i: usize, slos: Vec<Slo>) -> Sla {
    sla(
        &alloc::format!("s{i}"),
        &alloc::format!("p{}", i + 1),
        &alloc::format!("p{i}"),
        slos,
        Window::new(0, 120),
    )
}

fn close(a: &Sla, b: &Sla) -> bool {
    a.slos.len() == b.slos.len()
        && a
            .slos
            .iter()
            .zip(&b.slos)
            .all(|(x, y)| x.metric == y.metric && (x.target - y.target).abs() <= 1e-9)
}

proptest! {
    #[test]
    fn serial_composition_is_associative(a in arb_slos(), b in arb_slos(), c in arb_slos()) {
        let (a, b, c) = (link(0, a), link(1, b), link(2, c));
        let left = compose_serial(&[compose_serial(&[a.clone(), b.clone()]).unwrap(), c.clone()]).unwrap();
        let right = compose_serial(&[a.clone(), compose_serial(&[b.clone(), c.clone()]).unwrap()]).unwrap();
        let flat = compose_serial(&[a, b, c]).unwrap();
        prop_assert!(close(&left, &right));
        prop_assert!(close(&left, &flat));
    }

    #[test]
    fn adding_a_link_never_improves_latency_or_availability(links in prop::collection::vec(arb_slos(), 1..6), extra in arb_slos()) {
        let chain: Vec<Sla> = links.into_iter().enumerate().map(|(i, s)| link(i, s)).collect();
        let n = chain.len();
        let base = compose_serial(&chain).unwrap();
        let mut longer = chain;
        longer.push(link(n, extra));
        let ext = compose_serial(&longer).unwrap();
        let t = |s: &Sla, m| s.slo(m).unwrap().target;
        prop_assert!(t(&ext, Metric::LatencyMs) >= t(&base, Metric::LatencyMs));
        prop_assert!(t(&ext, Metric::AvailabilityFraction) <= t(&base, Metric::AvailabilityFraction));
    }

    #[test]
    fn weighted_endpoints_are_exact(a in arb_slos(), b in arb_slos()) {
        let (a, b) = (link(0, a), link(1, b));
        prop_assert_eq!(&compose_weighted(&a, &b, 1.0).unwrap().slos, &a.slos);
        prop_assert_eq!(&compose_weighted(&a, &b, 0.0).unwrap().slos, &b.slos);
    }

    #[test]
    fn penalty_clamp(b in 0u64..10_000, units in 0.0..50.0f64, cap in 0.0..1000.0f64) {
        let rule = PenaltyRule { units_per_breach: units, cap };
        prop_assert_eq!(rule.penalty(b), (b as f64 * units).min(cap));
        prop_assert!(rule.penalty(b) <= cap);
    }

    #[test]
    fn catalogue_results_satisfy_requirements(
        offers in prop::collection::vec((1.0..60.0f64, 1.0..100.0f64, 0.0..3.0f64), 0..12),
        req in 1.0..60.0f64,
    ) {
        let cat: Vec<ServiceOffering> = offers.iter().enumerate().map(|(i, (l, p, cap))| {
            let mut o = offering(&alloc::format!("o{i:02}"), *l, *p);
            o.capacity = cap.floor();
            o
        }).collect();
        let w = Window::new(0, 10);
        let hits = catalogue_search(&cat, &[slo(Metric::LatencyMs, req)], w);
        for h in &hits {
            prop_assert!(h.bound(Metric::LatencyMs).unwrap().target <= req);
            prop_assert!(h.capacity > 0.0);
        }
        let expected = cat.iter().filter(|o| o.bounds[0].target <= req && o.capacity > 0.0).count();
        prop_assert_eq!(hits.len(), expected);
        for pair in hits.windows(2) {
            prop_assert!(pair[0].price <= pair[1].price);
        }
    }
}

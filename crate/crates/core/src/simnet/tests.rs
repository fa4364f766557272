use super::*;
use proptest::prelude::*;

fn d(s: &str) -> DomainName {
    s.parse().unwrap()
}

fn doc(id: &str, owner: &str, body: &str) -> Document {
    Document {
        doc_id: id.into(),
        owner: d(owner),
        url: format!("http://{owner}/{id}"),
        title: String::new(),
        body: body.into(),
        modified: 0,
    }
}

fn small_sim(config: SimConfig) -> Simulation {
    let mut sim = Simulation::new(config).unwrap();
    sim.register_node(d("cn"), Level::Root).unwrap();
    sim.register_node(d("edu.cn"), Level::Subnet).unwrap();
    sim.register_node(d("a.edu.cn"), Level::Org).unwrap();
    sim.register_node(d("b.edu.cn"), Level::Org).unwrap();
    sim
}

fn hello(from: &str, to: &str) -> Envelope {
    Envelope::new(d(from), d(to), 1, Payload::Ack(Ack {}))
}

#[test]
fn empty_run_is_empty() {
    let mut sim = Simulation::new(SimConfig::default()).unwrap();
    let trace = sim.run(Vec::new()).unwrap();
    assert!(trace.is_empty());
}

#[test]
fn degenerate_latency_is_exact() {
    let config = SimConfig {
        latency: LatencyModel {
            min_ms: 5,
            max_ms: 5,
        },
        ..SimConfig::default()
    };
    let mut sim = small_sim(config);
    let at = sim
        .send(hello("edu.cn", "cn"), 100 * MICROS_PER_SECOND)
        .unwrap();
    assert_eq!(at, Some(100_005_000));
}

#[test]
fn certain_drop_drops_everything() {
    let config = SimConfig {
        drop_probability: 1.0,
        ..SimConfig::default()
    };
    let mut sim = small_sim(config);
    for _ in 0..5 {
        assert_eq!(sim.send(hello("edu.cn", "cn"), 0).unwrap(), None);
    }
    sim.run(vec![Stimulus::upsert(0, doc("d1", "a.edu.cn", "x"))])
        .unwrap();
    let sends = sim.trace().of_kind(EventKind::Send).count();
    assert!(sends > 5);
    assert_eq!(sim.trace().of_kind(EventKind::Dropped).count(), sends);
    assert_eq!(sim.trace().of_kind(EventKind::Deliver).count(), 0);
    assert_eq!(sim.wire_stats().dropped as usize, sends);
}

#[test]
fn send_rejects_strangers_and_the_past() {
    let mut sim = small_sim(SimConfig::default());
    assert!(matches!(
        sim.send(hello("edu.cn", "nowhere.cn"), 0),
        Err(SimError::UnknownRecipient(_))
    ));
    assert!(matches!(
        sim.send(hello("nowhere.cn", "cn"), 0),
        Err(SimError::UnknownSender(_))
    ));
    sim.send(hello("edu.cn", "cn"), 10).unwrap();
    assert!(matches!(
        sim.send(hello("edu.cn", "cn"), 9),
        Err(SimError::TimeTravel { .. })
    ));
}

#[test]
fn same_seed_same_delivery_times() {
    let times = |seed| {
        let mut sim = small_sim(SimConfig {
            seed,
            ..SimConfig::default()
        });
        (0..20)
            .map(|i| sim.send(hello("edu.cn", "cn"), i).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(times(7), times(7));
    assert_ne!(times(7), times(8));
}

#[test]
fn registration_errors_surface() {
    let mut sim = Simulation::new(SimConfig::default()).unwrap();
    sim.register_node(d("cn"), Level::Root).unwrap();
    assert!(matches!(
        sim.register_node(d("hust.edu.cn"), Level::Org),
        Err(SimError::Topology(TopologyError::OrphanDomain { .. }))
    ));
    sim.register_node(d("edu.cn"), Level::Subnet).unwrap();
    assert!(matches!(
        sim.register_node(d("edu.cn"), Level::Subnet),
        Err(SimError::Topology(TopologyError::DuplicateDomain(_)))
    ));
}

#[test]
fn invalid_config_rejected() {
    let bad = [
        SimConfig {
            latency: LatencyModel {
                min_ms: 9,
                max_ms: 3,
            },
            ..SimConfig::default()
        },
        SimConfig {
            harvest_period: 0,
            ..SimConfig::default()
        },
        SimConfig {
            drop_probability: 1.5,
            ..SimConfig::default()
        },
    ];
    for c in bad {
        assert!(matches!(
            Simulation::new(c),
            Err(SimError::InvalidConfig(_))
        ));
    }
}

#[test]
fn stimulus_at_end_rejected() {
    let mut sim = small_sim(SimConfig::default());
    let err = sim
        .run(vec![Stimulus::query(2 * 86_400, "x", 1)])
        .unwrap_err();
    assert!(matches!(err, SimError::StimulusAfterEnd { .. }));
}

#[test]
fn first_subnet_visibility_after_one_period() {
    let config = SimConfig::default();
    let max_rtt = 2 * config.latency.max_ms * 1000;
    let mut sim = small_sim(config);
    sim.run(vec![Stimulus::upsert(0, doc("d1", "a.edu.cn", "apple"))])
        .unwrap();
    let c = &sim.changes()[0];
    let seen = c.subnet_at.unwrap();
    let day = 86_400 * MICROS_PER_SECOND;
    assert!(seen > day && seen <= day + max_rtt, "{seen}");
    // the push scheduled at the same tick waits for that harvest
    let root = c.root_at.unwrap();
    assert!(root > seen && root <= seen + max_rtt / 2);
    assert_eq!(
        sim.root(&d("cn"))
            .unwrap()
            .registry()
            .get(&d("edu.cn"))
            .unwrap()
            .live_count,
        1
    );
}

#[test]
fn identical_runs_hash_identically() {
    let scenario = || {
        vec![
            Stimulus::upsert(0, doc("d1", "a.edu.cn", "apple banana")),
            Stimulus::upsert(10, doc("d2", "b.edu.cn", "apple apple")),
            Stimulus::delete(90_000, "d1", d("a.edu.cn")),
            Stimulus::query(100_000, "apple", 5),
        ]
    };
    let run = |seed| {
        let mut sim = small_sim(SimConfig {
            seed,
            drop_probability: 0.2,
            ..SimConfig::default()
        });
        sim.run(scenario()).unwrap().trace_hash()
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}

#[test]
fn harvests_fire_at_exact_multiples() {
    let mut config = SimConfig {
        harvest_period: 3_600,
        end_time: 86_400 + 60,
        ..SimConfig::default()
    };
    config.child_harvest_periods.insert(d("b.edu.cn"), 5_000);
    let mut sim = small_sim(config);
    sim.run(Vec::new()).unwrap();
    let starts = |child: &str| -> Vec<SimTime> {
        sim.trace()
            .of_kind(EventKind::HarvestStart)
            .filter(|e| e.peer == Some(d(child)))
            .map(|e| e.t)
            .collect()
    };
    let a: Vec<SimTime> = (1..=24).map(|k| k * 3_600 * MICROS_PER_SECOND).collect();
    let b: Vec<SimTime> = (1..=17).map(|k| k * 5_000 * MICROS_PER_SECOND).collect();
    assert_eq!(starts("a.edu.cn"), a);
    assert_eq!(starts("b.edu.cn"), b);
    let pushes: Vec<SimTime> = sim.trace().of_kind(EventKind::Push).map(|e| e.t).collect();
    assert_eq!(pushes.len(), 1);
    assert!(pushes[0] >= 86_400 * MICROS_PER_SECOND);
}

#[test]
fn federated_query_in_sim_matches_metadata_oracle() {
    let mut sim = small_sim(SimConfig::default());
    sim.run(vec![
        Stimulus::upsert(0, doc("d1", "a.edu.cn", "apple banana")),
        Stimulus::upsert(0, doc("d2", "a.edu.cn", "apple apple")),
        Stimulus::upsert(0, doc("d3", "b.edu.cn", "cherry")),
        Stimulus::query(90_000, "apple", 10),
    ])
    .unwrap();
    let q = &sim.queries()[0];
    assert_eq!(q.error, None);
    let ids: Vec<_> = q.hits.iter().map(|h| h.doc_id.as_str()).collect();
    assert_eq!(ids, ["d2", "d1"]);
    assert_eq!(q.hits[0].path, [d("cn"), d("edu.cn"), d("a.edu.cn")]);
    let oracle = &q.oracle.as_ref().unwrap().metadata;
    assert_eq!(
        oracle.iter().map(|h| &h.doc_id).collect::<Vec<_>>(),
        q.hits.iter().map(|h| &h.doc_id).collect::<Vec<_>>()
    );
    assert!(q.latency().unwrap() > 0);
    assert!(!q.degraded);
}

#[test]
fn query_before_any_registration_reports_error() {
    let mut sim = small_sim(SimConfig::default());
    sim.run(vec![Stimulus::query(5, "apple", 3)]).unwrap();
    assert!(sim.queries()[0]
        .error
        .as_deref()
        .unwrap()
        .contains("no collections"));
}

#[test]
fn lost_search_replies_degrade_queries() {
    let mut sim = small_sim(SimConfig::default());
    sim.run_until(
        vec![Stimulus::upsert(0, doc("d1", "a.edu.cn", "apple"))],
        90_000,
    )
    .unwrap();
    sim.config.drop_probability = 1.0;
    sim.run(vec![Stimulus::query(100_000, "apple", 3)]).unwrap();
    let q = &sim.queries()[0];
    assert!(q.degraded);
    assert_eq!(q.failed, [d("edu.cn")]);
    assert!(q.hits.is_empty());
    assert_eq!(
        q.latency(),
        Some(sim.config().timeout_us()),
        "answered when the timeout fired"
    );
}

#[test]
fn compaction_forces_a_full_reharvest() {
    let mut sim = small_sim(SimConfig {
        end_time: 3 * 86_400,
        ..SimConfig::default()
    });
    sim.run_until(
        vec![
            Stimulus::upsert(0, doc("d1", "a.edu.cn", "apple")),
            Stimulus::upsert(0, doc("d2", "a.edu.cn", "pear")),
        ],
        90_000,
    )
    .unwrap();
    sim.run_until(
        vec![Stimulus::delete(100_000, "d1", d("a.edu.cn"))],
        100_000,
    )
    .unwrap();
    sim.run_until(
        vec![Stimulus::upsert(100_001, doc("d3", "a.edu.cn", "fig"))],
        100_001,
    )
    .unwrap();
    sim.org_mut(&d("a.edu.cn")).unwrap().compact_log();
    sim.run(Vec::new()).unwrap();
    let union = sim.subnet(&d("edu.cn")).unwrap().union();
    let live: Vec<_> = union.live_records().map(|r| r.doc_id.as_str()).collect();
    assert_eq!(live, ["d2", "d3"]);
    assert_eq!(
        union.records().count(),
        2,
        "the stale tombstone went with the purge"
    );
    assert_eq!(union.term_dfs(), union.recompute_term_dfs());
}

#[test]
fn node_errors_become_trace_events() {
    let mut sim = small_sim(SimConfig::default());
    sim.run(vec![
        Stimulus::upsert(0, doc("d1", "z.edu.cn", "x")),
        Stimulus::delete(1, "ghost", d("a.edu.cn")),
    ])
    .unwrap();
    assert_eq!(sim.trace().of_kind(EventKind::NodeError).count(), 2);
}

#[test]
fn trace_times_never_decrease() {
    let mut sim = small_sim(SimConfig {
        drop_probability: 0.3,
        seed: 11,
        ..SimConfig::default()
    });
    sim.run(vec![
        Stimulus::upsert(0, doc("d1", "a.edu.cn", "apple")),
        Stimulus::query(100_000, "apple", 3),
    ])
    .unwrap();
    let ts: Vec<_> = sim.trace().events().iter().map(|e| e.t).collect();
    assert!(ts.windows(2).all(|w| w[0] <= w[1]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn root_visibility_bound(
        seed in any::<u64>(),
        times in prop::collection::vec(0u64..3 * 86_400, 1..25),
        max_ms in 1u64..500,
    ) {
        let config = SimConfig {
            seed,
            latency: LatencyModel { min_ms: 1, max_ms },
            end_time: 5 * 86_400,
            ..SimConfig::default()
        };
        let bound = (config.harvest_period + config.description_push_period) * MICROS_PER_SECOND
            + 2 * max_ms * 1000;
        let mut sim = small_sim(config);
        let mut times = times;
        times.sort();
        let scenario = times
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let owner = if i % 2 == 0 { "a.edu.cn" } else { "b.edu.cn" };
                Stimulus::upsert(*t, doc(&format!("d{i}"), owner, &format!("tok{i} common")))
            })
            .collect();
        sim.run(scenario).unwrap();
        for c in sim.changes() {
            let delay = c.root_delay().expect("visible before the end");
            prop_assert!(delay <= bound, "delay {} > bound {}", delay, bound);
        }
    }
}

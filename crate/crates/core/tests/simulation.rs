use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dris_core::corpus::{generate_corpus, unique_token, Corpus, CorpusConfig};
use dris_core::model::{DomainName, Level};
use dris_core::report::cmd_run;
use dris_core::simnet::{SimConfig, Stimulus, Topology, TopologySpec};
use dris_core::text::tokenize;

const DAY: u64 = 86_400;

fn topology() -> Topology {
    TopologySpec {
        domains: [
            "cn",
            "edu.cn",
            "com.cn",
            "hust.edu.cn",
            "pku.edu.cn",
            "acme.com.cn",
        ]
        .iter()
        .map(|s| s.parse::<DomainName>().unwrap())
        .collect(),
        level_table: None,
    }
    .build()
    .unwrap()
}

fn corpus(topo: &Topology, seed: u64) -> Corpus {
    let orgs: Vec<_> = topo.with_level(Level::Org).cloned().collect();
    generate_corpus(
        &CorpusConfig {
            seed,
            docs_per_org: 40,
            unique_token_repeats: 3,
            ..CorpusConfig::default()
        },
        &orgs,
    )
    .unwrap()
}

fn upserts(c: &Corpus) -> Vec<Stimulus> {
    c.docs
        .iter()
        .map(|d| Stimulus::upsert(0, d.clone()))
        .collect()
}

#[test]
fn multi_term_queries_over_the_wire_match_the_oracle() {
    let topo = topology();
    let c = corpus(&topo, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut scenario = upserts(&c);
    for i in 0..40 {
        let words = tokenize(&c.docs.choose(&mut rng).unwrap().body);
        let n = rng.random_range(2..=4);
        let text: Vec<_> = (0..n)
            .map(|_| words.choose(&mut rng).unwrap().clone())
            .collect();
        scenario.push(Stimulus::query(DAY + 600 + i * 60, text.join(" "), 10));
    }
    let config = SimConfig {
        seed: 3,
        end_time: DAY + 7_200,
        ..SimConfig::default()
    };
    let out = cmd_run(&topo, config, scenario).unwrap();
    let r = &out.report;
    assert_eq!(r.node_errors, 0);
    assert_eq!(r.degraded_queries, 0);
    assert_eq!(r.failed_queries, 0);
    assert_eq!(r.topk_exact_rate, Some(1.0));
}

#[test]
fn deletion_reaches_the_root() {
    let topo = topology();
    let c = corpus(&topo, 4);
    let victim = &c.docs[5];
    let token = unique_token(5);
    let mut scenario = upserts(&c);
    scenario.push(Stimulus::query(DAY + 600, token.clone(), 5));
    scenario.push(Stimulus::delete(
        DAY + 1_200,
        victim.doc_id.clone(),
        victim.owner.clone(),
    ));
    scenario.push(Stimulus::query(2 * DAY + 600, token, 5));
    let config = SimConfig {
        seed: 4,
        end_time: 2 * DAY + 3_600,
        ..SimConfig::default()
    };
    let out = cmd_run(&topo, config, scenario).unwrap();
    let q = out.sim.queries();
    assert_eq!(
        q[0].hits.first().map(|h| h.doc_id.as_str()),
        Some(victim.doc_id.as_str())
    );
    assert!(q[1].hits.iter().all(|h| h.doc_id != victim.doc_id));
    assert_eq!(out.report.live_docs, c.docs.len() as u64 - 1);
    assert_eq!(out.report.changes_pending, 0);
}

#[test]
fn lossy_network_degrades_without_node_errors() {
    let topo = topology();
    let c = corpus(&topo, 5);
    let mut scenario = upserts(&c);
    for i in 0..30 {
        scenario.push(Stimulus::query(
            DAY + 600 + i * 600,
            unique_token(i as usize),
            5,
        ));
    }
    let config = SimConfig {
        seed: 5,
        drop_probability: 0.3,
        end_time: 3 * DAY,
        ..SimConfig::default()
    };
    let out = cmd_run(&topo, config, scenario).unwrap();
    assert_eq!(out.report.node_errors, 0);
    assert!(out.report.dropped_messages > 0);
    assert!(out.sim.queries().iter().all(|q| q.finished_at.is_some()));
}

//! Operator-level commands: loading corpora into a topology, running a
//! scenario, and summarizing the result.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::broker::{BrokerError, MergeMode};
use crate::federation::{Federation, Snapshot};
use crate::model::{Document, Level, Query, QueryError, ScoredHit, MICROS_PER_SECOND};
use crate::oracle::compare_topk;
use crate::org::{IndexError, OrgConfig};
use crate::simnet::{
    EventKind, SimConfig, SimError, Simulation, Stimulus, StimulusOp, Topology, TopologyError,
    TopologySpec,
};
use crate::wire::{canonical_json, MsgType};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("documents owned by unregistered organizations: {}", doc_ids.join(", "))]
    UnknownOwner { doc_ids: Vec<String> },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("document {doc_id}: {source}")]
    Index { doc_id: String, source: IndexError },
}

fn check_owners(docs: &[Document], topology: &Topology) -> Result<(), IngestError> {
    let doc_ids: Vec<String> = docs
        .iter()
        .filter(|d| topology.level(&d.owner) != Some(Level::Org))
        .map(|d| d.doc_id.clone())
        .collect();
    if doc_ids.is_empty() {
        Ok(())
    } else {
        Err(IngestError::UnknownOwner { doc_ids })
    }
}

/// Builds the topology and upserts every document at its owner, at its
/// `modified` time.
pub fn cmd_ingest(docs: &[Document], spec: &TopologySpec) -> Result<Federation, IngestError> {
    let topology = spec.build()?;
    check_owners(docs, &topology)?;
    let mut fed = Federation::new(topology, OrgConfig::default());
    for doc in sorted_by_modified(docs) {
        let now = doc.modified * MICROS_PER_SECOND;
        let org = fed.org_mut(&doc.owner).expect("owners checked");
        org.upsert_document(doc, now)
            .map_err(|source| IngestError::Index {
                doc_id: doc.doc_id.clone(),
                source,
            })?;
    }
    Ok(fed)
}

fn sorted_by_modified(docs: &[Document]) -> Vec<&Document> {
    let mut v: Vec<&Document> = docs.iter().collect();
    v.sort_by_key(|d| d.modified);
    v
}

/// Upsert stimuli for a corpus, at each document's `modified` time, merged
/// ahead of any scenario stimuli at the same second.
pub fn corpus_stimuli(
    docs: &[Document],
    topology: &Topology,
    scenario: Vec<Stimulus>,
) -> Result<Vec<Stimulus>, IngestError> {
    check_owners(docs, topology)?;
    let mut all: Vec<Stimulus> = sorted_by_modified(docs)
        .into_iter()
        .map(|d| Stimulus::upsert(d.modified, d.clone()))
        .collect();
    all.extend(scenario);
    all.sort_by_key(|s| s.t);
    Ok(all)
}

/// Summary statistics of a set of durations, in sim-seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    pub count: u64,
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl DurationStats {
    /// `None` for an empty set. Input in microseconds.
    pub fn from_micros(values: impl IntoIterator<Item = u64>) -> Option<Self> {
        let mut v: Vec<u64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_unstable();
        let secs = |us: u64| us as f64 / MICROS_PER_SECOND as f64;
        let n = v.len();
        let median = if n % 2 == 1 {
            secs(v[n / 2])
        } else {
            (secs(v[n / 2 - 1]) + secs(v[n / 2])) / 2.0
        };
        let sum: u128 = v.iter().map(|x| *x as u128).sum();
        Some(DurationStats {
            count: n as u64,
            min: secs(v[0]),
            median,
            mean: sum as f64 / n as f64 / MICROS_PER_SECOND as f64,
            max: secs(v[n - 1]),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario_id: String,
    pub trace_hash: String,
    pub live_docs: u64,
    /// Share of live documents whose content has reached a root; 1.0 when
    /// there are none.
    pub coverage: f64,
    /// Largest change-to-root delay, sim-seconds.
    pub max_staleness: Option<f64>,
    pub staleness: Option<DurationStats>,
    /// Changes that never reached a root before the end.
    pub changes_pending: u64,
    pub bytes_on_wire: BTreeMap<MsgType, u64>,
    pub messages: BTreeMap<MsgType, u64>,
    pub harvest_record_bytes: u64,
    pub dropped_messages: u64,
    pub queries: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk_exact_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_overlap: Option<f64>,
    /// Overlap against the full-text oracle: what metadata truncation costs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_text_mean_overlap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_latency: Option<DurationStats>,
    pub degraded_queries: u64,
    pub failed_queries: u64,
    pub node_errors: u64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Human-readable summary.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let _ = writeln!(out, "scenario        {}", self.scenario_id);
        let _ = writeln!(out, "trace_hash      {}", self.trace_hash);
        let _ = writeln!(out, "live docs       {}", self.live_docs);
        let _ = writeln!(out, "coverage        {:.4}", self.coverage);
        let _ = writeln!(out, "max staleness   {} s", opt(self.max_staleness));
        let _ = writeln!(out, "pending changes {}", self.changes_pending);
        for (t, b) in &self.bytes_on_wire {
            let n = self.messages.get(t).copied().unwrap_or(0);
            let _ = writeln!(out, "  {:<20} {:>8} msgs {:>12} bytes", t.as_str(), n, b);
        }
        let _ = writeln!(out, "record bytes    {}", self.harvest_record_bytes);
        let _ = writeln!(out, "dropped         {}", self.dropped_messages);
        let _ = writeln!(out, "queries         {}", self.queries);
        let _ = writeln!(out, "top-k exact     {}", opt(self.topk_exact_rate));
        let _ = writeln!(out, "mean overlap    {}", opt(self.mean_overlap));
        let _ = writeln!(out, "full-text ovl   {}", opt(self.full_text_mean_overlap));
        if let Some(l) = &self.query_latency {
            let _ = writeln!(
                out,
                "query latency   median {:.4} s, max {:.4} s",
                l.median, l.max
            );
        }
        let _ = writeln!(out, "degraded        {}", self.degraded_queries);
        let _ = writeln!(out, "failed          {}", self.failed_queries);
        let _ = writeln!(out, "node errors     {}", self.node_errors);
        out
    }
}

/// Short digest identifying a scenario by content.
pub fn scenario_id(scenario: &[Stimulus]) -> String {
    let mut h = Sha256::new();
    for s in scenario {
        h.update(canonical_json(s));
        h.update(b"\n");
    }
    hex::encode(h.finalize())[..16].to_string()
}

pub fn summarize(sim: &Simulation, scenario_id: String) -> RunReport {
    let docs: Vec<&Document> = sim.live_documents().collect();
    let covered = docs
        .iter()
        .filter(|d| sim.tracker().is_root_visible(&d.owner, &d.doc_id))
        .count();
    let coverage = if docs.is_empty() {
        1.0
    } else {
        covered as f64 / docs.len() as f64
    };
    let staleness = DurationStats::from_micros(sim.changes().iter().filter_map(|c| c.root_delay()));
    let changes_pending = sim.changes().iter().filter(|c| c.root_at.is_none()).count() as u64;

    let queries = sim.queries();
    let answered: Vec<_> = queries
        .iter()
        .filter(|q| q.error.is_none() && q.finished_at.is_some())
        .collect();
    let compared: Vec<_> = answered
        .iter()
        .filter_map(|q| Some((q, q.oracle.as_ref()?)))
        .collect();
    let (topk_exact_rate, mean_overlap, full_text_mean_overlap) = if compared.is_empty() {
        (None, None, None)
    } else {
        let n = compared.len() as f64;
        let mut exact = 0usize;
        let mut overlap = 0.0;
        let mut ft = 0.0;
        for (q, o) in &compared {
            let m = compare_topk(&q.hits, &o.metadata, q.k);
            exact += m.exact_match as usize;
            overlap += m.overlap;
            ft += compare_topk(&q.hits, &o.full_text, q.k).overlap;
        }
        (Some(exact as f64 / n), Some(overlap / n), Some(ft / n))
    };
    let wire = sim.wire_stats();
    RunReport {
        scenario_id,
        trace_hash: sim.trace().trace_hash(),
        live_docs: docs.len() as u64,
        coverage,
        max_staleness: staleness.map(|s| s.max),
        staleness,
        changes_pending,
        bytes_on_wire: wire.bytes.clone(),
        messages: wire.messages.clone(),
        harvest_record_bytes: wire.record_bytes,
        dropped_messages: wire.dropped,
        queries: queries.len() as u64,
        topk_exact_rate,
        mean_overlap,
        full_text_mean_overlap,
        query_latency: DurationStats::from_micros(answered.iter().filter_map(|q| q.latency())),
        degraded_queries: queries.iter().filter(|q| q.degraded).count() as u64,
        failed_queries: (queries.len() - answered.len()) as u64,
        node_errors: sim.trace().of_kind(EventKind::NodeError).count() as u64,
    }
}

pub struct RunOutput {
    pub report: RunReport,
    pub sim: Simulation,
}

/// Runs a scenario to the end and summarizes it. Queries are answered both
/// by the federation and by the oracles.
pub fn cmd_run(
    topology: &Topology,
    config: SimConfig,
    scenario: Vec<Stimulus>,
) -> Result<RunOutput, SimError> {
    let id = scenario_id(&scenario);
    let mut sim = Simulation::from_topology(config, topology)?;
    sim.run(scenario)?;
    let report = summarize(&sim, id);
    Ok(RunOutput { report, sim })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: MergeMode,
    pub queries: u64,
    pub topk_exact_rate: Option<f64>,
    pub mean_overlap: Option<f64>,
    pub full_text_mean_overlap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub scenario_id: String,
    pub modes: Vec<ModeSummary>,
}

/// Runs the scenario once per merge mode, overriding any mode the queries
/// set, and reports agreement with the oracles for each.
pub fn cmd_compare(
    topology: &Topology,
    config: SimConfig,
    scenario: Vec<Stimulus>,
) -> Result<CompareReport, SimError> {
    let id = scenario_id(&scenario);
    let mut modes = Vec::new();
    for mode in [MergeMode::Global, MergeMode::Raw] {
        let forced: Vec<Stimulus> = scenario
            .iter()
            .cloned()
            .map(|mut s| {
                if let StimulusOp::Query(q) = &mut s.op {
                    q.mode = Some(mode);
                }
                s
            })
            .collect();
        let out = cmd_run(topology, config.clone(), forced)?;
        modes.push(ModeSummary {
            mode,
            queries: out.report.queries,
            topk_exact_rate: out.report.topk_exact_rate,
            mean_overlap: out.report.mean_overlap,
            full_text_mean_overlap: out.report.full_text_mean_overlap,
        });
    }
    Ok(CompareReport {
        scenario_id: id,
        modes,
    })
}

#[derive(Debug, Error)]
pub enum QueryCmdError {
    #[error(transparent)]
    BadQuery(#[from] QueryError),
    #[error("width must be positive")]
    BadWidth,
    #[error("nothing to search: no collection has registered with the root yet")]
    EmptyRegistry,
    #[error(transparent)]
    Broker(BrokerError),
}

/// One-shot federated search against frozen state.
pub fn cmd_query(
    snapshot: &Snapshot,
    text: &str,
    k: usize,
    width: Option<usize>,
    mode: MergeMode,
) -> Result<Vec<ScoredHit>, QueryCmdError> {
    let query = Query::from_text(text, k)?;
    if width == Some(0) {
        return Err(QueryCmdError::BadWidth);
    }
    match snapshot.search(&query, width.unwrap_or(usize::MAX), mode) {
        Ok(res) => Ok(res.hits),
        Err(BrokerError::EmptyRegistry) => Err(QueryCmdError::EmptyRegistry),
        Err(e) => Err(QueryCmdError::Broker(e)),
    }
}

/// Rank, score, doc_id, owner and path of each hit, one per line.
pub fn format_hits(hits: &[ScoredHit]) -> String {
    let mut out = String::new();
    for (i, h) in hits.iter().enumerate() {
        let path: Vec<String> = h.path.iter().map(|p| p.to_string()).collect();
        let _ = writeln!(
            out,
            "{:>3}  {:>10.6}  {}  {}  {}",
            i + 1,
            h.score,
            h.doc_id,
            h.owner,
            path.join(" > ")
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DomainName;

    fn d(s: &str) -> DomainName {
        s.parse().unwrap()
    }

    fn spec() -> TopologySpec {
        TopologySpec {
            domains: ["cn", "edu.cn", "a.edu.cn", "b.edu.cn"]
                .iter()
                .map(|s| d(s))
                .collect(),
            level_table: None,
        }
    }

    fn doc(id: &str, owner: &str, body: &str, modified: u64) -> Document {
        Document {
            doc_id: id.into(),
            owner: d(owner),
            url: String::new(),
            title: String::new(),
            body: body.into(),
            modified,
        }
    }

    fn fruit() -> Vec<Document> {
        vec![
            doc("d1", "a.edu.cn", "apple banana", 0),
            doc("d2", "a.edu.cn", "apple apple", 0),
            doc("d3", "b.edu.cn", "cherry", 0),
        ]
    }

    #[test]
    fn ingest_distributes_by_owner() {
        let fed = cmd_ingest(&fruit(), &spec()).unwrap();
        assert_eq!(fed.org(&d("a.edu.cn")).unwrap().doc_count(), 2);
        assert_eq!(fed.org(&d("b.edu.cn")).unwrap().doc_count(), 1);
        let empty = cmd_ingest(&[], &spec()).unwrap();
        assert_eq!(empty.org(&d("a.edu.cn")).unwrap().doc_count(), 0);
    }

    #[test]
    fn ingest_lists_unknown_owners() {
        let mut docs = fruit();
        docs.push(doc("x1", "z.edu.cn", "x", 0));
        docs.push(doc("x2", "edu.cn", "x", 0));
        match cmd_ingest(&docs, &spec()) {
            Err(IngestError::UnknownOwner { doc_ids }) => assert_eq!(doc_ids, ["x1", "x2"]),
            Err(e) => panic!("{e}"),
            Ok(_) => panic!("accepted"),
        }
    }

    #[test]
    fn no_queries_no_topk_fields() {
        let topo = spec().build().unwrap();
        let stimuli = corpus_stimuli(&fruit(), &topo, Vec::new()).unwrap();
        let out = cmd_run(&topo, SimConfig::default(), stimuli).unwrap();
        let r = &out.report;
        assert_eq!(r.coverage, 1.0);
        assert!(r.max_staleness.unwrap() > 86_400.0);
        assert_eq!(r.topk_exact_rate, None);
        let json = r.to_json();
        assert!(!json.contains("topk_exact_rate"));
        assert!(!json.contains("mean_overlap"));
    }

    #[test]
    fn reports_are_reproducible() {
        let topo = spec().build().unwrap();
        let run = || {
            let stimuli =
                corpus_stimuli(&fruit(), &topo, vec![Stimulus::query(100_000, "apple", 5)])
                    .unwrap();
            cmd_run(&topo, SimConfig::default(), stimuli)
                .unwrap()
                .report
                .to_json()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.contains("\"topk_exact_rate\": 1.0"));
    }

    #[test]
    fn query_on_snapshot() {
        let topo = spec().build().unwrap();
        let stimuli = corpus_stimuli(&fruit(), &topo, Vec::new()).unwrap();
        let out = cmd_run(&topo, SimConfig::default(), stimuli).unwrap();
        let snap = out.sim.snapshot();
        let hits = cmd_query(&snap, "apple", 10, None, MergeMode::Global).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, ["d2", "d1"]);
        assert!(format_hits(&hits).contains("cn > edu.cn > a.edu.cn"));
        assert!(matches!(
            cmd_query(&snap, "apple", 0, None, MergeMode::Global),
            Err(QueryCmdError::BadQuery(_))
        ));
    }

    #[test]
    fn query_before_registration_is_readable() {
        let snap = Federation::from_spec(&spec()).unwrap().snapshot();
        let err = cmd_query(&snap, "apple", 3, None, MergeMode::Raw).unwrap_err();
        assert!(err.to_string().contains("no collection has registered"));
    }

    #[test]
    fn duration_stats() {
        let s = DurationStats::from_micros([3_000_000, 1_000_000, 2_000_000, 4_000_000]).unwrap();
        assert_eq!((s.min, s.median, s.mean, s.max), (1.0, 2.5, 2.5, 4.0));
        assert!(DurationStats::from_micros([]).is_none());
    }

    #[test]
    fn compare_runs_both_modes() {
        let topo = spec().build().unwrap();
        let stimuli =
            corpus_stimuli(&fruit(), &topo, vec![Stimulus::query(100_000, "apple", 5)]).unwrap();
        let c = cmd_compare(&topo, SimConfig::default(), stimuli).unwrap();
        assert_eq!(c.modes.len(), 2);
        assert_eq!(c.modes[0].topk_exact_rate, Some(1.0));
    }
}

//! Deterministic discrete-event network.
//!
//! Nodes exchange encoded wire envelopes through a single event queue ordered
//! by (time, insertion order). Latency and drops come from one seeded
//! generator, so a run is a pure function of its configuration, the order in
//! which nodes were registered, and the scenario.

mod scenario;
mod topology;
mod trace;
mod visibility;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use scenario::{
    read_scenario, DeleteStimulus, QueryStimulus, ScenarioError, Stimulus, StimulusOp,
};
pub use topology::{NodeHandle, Topology, TopologyError, TopologySpec};
pub use trace::{EventKind, EventTrace, TraceEvent};
pub use visibility::{ChangeVisibility, VisibilityTracker};

use crate::broker::{
    answer_search, finish_federated, select_collections, target_request, MergeMode, RootBroker,
};
use crate::harvest::{HarvestError, HarvestNode, HarvestStep};
use crate::model::{
    Document, DomainName, Level, Query, ScoredHit, SimSeconds, SimTime, MICROS_PER_SECOND,
};
use crate::oracle::{oracle_search, GlobalOracle};
use crate::org::{ChangeOp, IndexError, OrgConfig, OrgIndex};
use crate::wire::{self, Ack, Envelope, ErrorBody, MsgType, Payload, SearchResponse, WireError};

const STALE_TOKEN: &str = "stale_token";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    pub min_ms: u64,
    pub max_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub latency: LatencyModel,
    pub harvest_period: SimSeconds,
    pub description_push_period: SimSeconds,
    pub drop_probability: f64,
    pub end_time: SimSeconds,
    /// Harvest period overrides for individual organizations.
    pub child_harvest_periods: BTreeMap<DomainName, SimSeconds>,
    /// How long a node waits for a response. Defaults to twice the maximum
    /// latency plus one second.
    pub rpc_timeout_ms: Option<u64>,
    /// Default fan-out for queries that do not set one; all collections when
    /// absent.
    pub query_width: Option<usize>,
    pub merge_mode: MergeMode,
    pub org: OrgConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            latency: LatencyModel {
                min_ms: 10,
                max_ms: 100,
            },
            harvest_period: 86_400,
            description_push_period: 86_400,
            drop_probability: 0.0,
            end_time: 2 * 86_400,
            child_harvest_periods: BTreeMap::new(),
            rpc_timeout_ms: None,
            query_width: None,
            merge_mode: MergeMode::Global,
            org: OrgConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.latency.min_ms > self.latency.max_ms {
            return bad("latency min_ms exceeds max_ms");
        }
        if self.harvest_period == 0 || self.description_push_period == 0 {
            return bad("periods must be positive");
        }
        if self.child_harvest_periods.values().any(|p| *p == 0) {
            return bad("periods must be positive");
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return bad("drop_probability must lie in [0, 1]");
        }
        if self.rpc_timeout_ms == Some(0) {
            return bad("rpc timeout must be positive");
        }
        if self.query_width == Some(0) {
            return bad("query width must be positive");
        }
        if self.org.batch_size == 0 {
            return bad("batch size must be positive");
        }
        Ok(())
    }

    pub fn end_us(&self) -> SimTime {
        self.end_time.saturating_mul(MICROS_PER_SECOND)
    }

    pub fn timeout_us(&self) -> SimTime {
        let ms = self
            .rpc_timeout_ms
            .unwrap_or(2 * self.latency.max_ms + 1000);
        ms * 1000
    }

    pub fn harvest_period_of(&self, child: &DomainName) -> SimSeconds {
        self.child_harvest_periods
            .get(child)
            .copied()
            .unwrap_or(self.harvest_period)
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("unknown recipient {0}")]
    UnknownRecipient(DomainName),
    #[error("unknown sender {0}")]
    UnknownSender(DomainName),
    #[error("stimulus at t={t} is not before end_time {end}")]
    StimulusAfterEnd { t: SimSeconds, end: SimSeconds },
    #[error("cannot act at {now}us, the clock is already at {clock}us")]
    TimeTravel { now: SimTime, clock: SimTime },
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Top-k answers of the brute-force oracles at the moment a query was issued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleAnswers {
    pub metadata: Vec<ScoredHit>,
    pub full_text: Vec<ScoredHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub id: usize,
    pub entry: Option<DomainName>,
    pub text: String,
    pub k: usize,
    pub mode: MergeMode,
    pub width: Option<usize>,
    pub issued_at: SimTime,
    pub finished_at: Option<SimTime>,
    pub hits: Vec<ScoredHit>,
    pub degraded: bool,
    pub failed: Vec<DomainName>,
    pub error: Option<String>,
    pub oracle: Option<OracleAnswers>,
}

impl QueryOutcome {
    pub fn latency(&self) -> Option<SimTime> {
        self.finished_at.map(|f| f - self.issued_at)
    }
}

/// Per message type counters of encoded traffic.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireStats {
    pub bytes: BTreeMap<MsgType, u64>,
    pub messages: BTreeMap<MsgType, u64>,
    /// Metadata record bytes inside harvest responses.
    pub record_bytes: u64,
    pub dropped: u64,
}

impl WireStats {
    pub fn bytes_of(&self, t: MsgType) -> u64 {
        self.bytes.get(&t).copied().unwrap_or(0)
    }

    /// Harvest request plus response bytes.
    pub fn harvest_bytes(&self) -> u64 {
        self.bytes_of(MsgType::HarvestRequest) + self.bytes_of(MsgType::HarvestResponse)
    }
}

#[derive(Debug)]
enum Event {
    Stimulus(StimulusOp),
    Deliver {
        from: DomainName,
        to: DomainName,
        msg_type: MsgType,
        request_id: u64,
        digest: String,
        bytes: Vec<u8>,
    },
    Tick(DomainName),
    Timeout {
        node: DomainName,
        request_id: u64,
    },
}

#[derive(Debug)]
struct Queued {
    time: SimTime,
    seq: u64,
    event: Event,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

#[derive(Debug)]
struct SubnetState {
    harvest: HarvestNode,
    push_pending: bool,
}

#[derive(Debug)]
enum NodeState {
    Root(RootBroker),
    Subnet(SubnetState),
    Org(OrgIndex),
}

#[derive(Debug)]
struct SimNode {
    state: NodeState,
    next_request_id: u64,
}

#[derive(Debug, Clone)]
enum Pending {
    Harvest { child: DomainName },
    Search { query: usize, target: DomainName },
    Register { root: DomainName },
}

impl Pending {
    fn peer(&self) -> &DomainName {
        match self {
            Pending::Harvest { child } => child,
            Pending::Search { target, .. } => target,
            Pending::Register { root } => root,
        }
    }
}

#[derive(Debug)]
struct ActiveQuery {
    request: wire::SearchRequest,
    outstanding: BTreeSet<DomainName>,
    lists: Vec<Vec<ScoredHit>>,
}

pub struct Simulation {
    config: SimConfig,
    topology: Topology,
    nodes: BTreeMap<DomainName, SimNode>,
    queue: BinaryHeap<Queued>,
    next_seq: u64,
    now: SimTime,
    rng: ChaCha8Rng,
    trace: EventTrace,
    pending: BTreeMap<(DomainName, u64), Pending>,
    tracker: VisibilityTracker,
    queries: Vec<QueryOutcome>,
    active: BTreeMap<usize, ActiveQuery>,
    wire: WireStats,
    docs: BTreeMap<String, Document>,
    started: bool,
    oracle_checks: bool,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        Self::with_level_table(config, Default::default())
    }

    pub fn with_level_table(
        config: SimConfig,
        table: crate::model::LevelTable,
    ) -> Result<Self, SimError> {
        config.validate()?;
        Ok(Simulation {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            topology: Topology::new(table),
            nodes: BTreeMap::new(),
            queue: BinaryHeap::new(),
            next_seq: 0,
            now: 0,
            trace: EventTrace::new(),
            pending: BTreeMap::new(),
            tracker: VisibilityTracker::default(),
            queries: Vec::new(),
            active: BTreeMap::new(),
            wire: WireStats::default(),
            docs: BTreeMap::new(),
            started: false,
            oracle_checks: true,
        })
    }

    /// Builds a simulation and registers every node of `topology` in order.
    pub fn from_topology(config: SimConfig, topology: &Topology) -> Result<Self, SimError> {
        let mut sim = Self::with_level_table(config, *topology.level_table())?;
        for (domain, level) in topology.nodes() {
            sim.register_node(domain.clone(), level)?;
        }
        Ok(sim)
    }

    /// Whether queries are also answered by the brute-force oracles.
    pub fn set_oracle_checks(&mut self, on: bool) {
        self.oracle_checks = on;
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn trace(&self) -> &EventTrace {
        &self.trace
    }

    pub fn changes(&self) -> &[ChangeVisibility] {
        self.tracker.changes()
    }

    pub fn tracker(&self) -> &VisibilityTracker {
        &self.tracker
    }

    pub fn queries(&self) -> &[QueryOutcome] {
        &self.queries
    }

    pub fn wire_stats(&self) -> &WireStats {
        &self.wire
    }

    /// Documents currently live at their organizations.
    pub fn live_documents(&self) -> impl Iterator<Item = &Document> {
        self.docs.values()
    }

    pub fn org(&self, domain: &DomainName) -> Option<&OrgIndex> {
        match &self.nodes.get(domain)?.state {
            NodeState::Org(o) => Some(o),
            _ => None,
        }
    }

    pub fn org_mut(&mut self, domain: &DomainName) -> Option<&mut OrgIndex> {
        match &mut self.nodes.get_mut(domain)?.state {
            NodeState::Org(o) => Some(o),
            _ => None,
        }
    }

    pub fn subnet(&self, domain: &DomainName) -> Option<&HarvestNode> {
        match &self.nodes.get(domain)?.state {
            NodeState::Subnet(s) => Some(&s.harvest),
            _ => None,
        }
    }

    pub fn root(&self, domain: &DomainName) -> Option<&RootBroker> {
        match &self.nodes.get(domain)?.state {
            NodeState::Root(r) => Some(r),
            _ => None,
        }
    }

    /// Frozen root and union state, in registration order.
    pub fn snapshot(&self) -> crate::federation::Snapshot {
        let mut roots = Vec::new();
        let mut subnets = Vec::new();
        for (d, _) in self.topology.nodes() {
            match &self.nodes[d].state {
                NodeState::Root(r) => roots.push(r.clone()),
                NodeState::Subnet(s) => subnets.push(s.harvest.clone()),
                NodeState::Org(_) => {}
            }
        }
        crate::federation::Snapshot { roots, subnets }
    }

    pub fn register_node(
        &mut self,
        domain: DomainName,
        role: Level,
    ) -> Result<NodeHandle, SimError> {
        let handle = self.topology.register_node(domain.clone(), role)?;
        let state = match role {
            Level::Root => NodeState::Root(RootBroker::new(domain.clone())),
            Level::Subnet => NodeState::Subnet(SubnetState {
                harvest: HarvestNode::new(domain.clone()),
                push_pending: false,
            }),
            Level::Org => {
                let harvester = self
                    .topology
                    .harvester_of(&domain)
                    .expect("registered orgs have a subnet ancestor");
                if let Some(SimNode {
                    state: NodeState::Subnet(s),
                    ..
                }) = self.nodes.get_mut(&harvester)
                {
                    s.harvest.register_child(domain.clone());
                }
                NodeState::Org(OrgIndex::with_config(domain.clone(), self.config.org))
            }
        };
        self.nodes.insert(
            domain.clone(),
            SimNode {
                state,
                next_request_id: 1,
            },
        );
        if self.started && role == Level::Subnet {
            self.schedule_next_tick(&domain, self.now);
        }
        Ok(handle)
    }

    fn enqueue(&mut self, time: SimTime, event: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued { time, seq, event });
    }

    /// Encodes and transmits `envelope` at `now`. Returns the delivery time,
    /// or `None` when the message was dropped.
    pub fn send(&mut self, envelope: Envelope, now: SimTime) -> Result<Option<SimTime>, SimError> {
        if !self.nodes.contains_key(&envelope.sender) {
            return Err(SimError::UnknownSender(envelope.sender));
        }
        if !self.nodes.contains_key(&envelope.recipient) {
            return Err(SimError::UnknownRecipient(envelope.recipient));
        }
        if now < self.now {
            return Err(SimError::TimeTravel {
                now,
                clock: self.now,
            });
        }
        self.now = now;
        Ok(self.transmit(&envelope)?)
    }

    fn transmit(&mut self, envelope: &Envelope) -> Result<Option<SimTime>, WireError> {
        let bytes = wire::encode(envelope)?;
        let msg_type = envelope.msg_type();
        let digest = trace::digest_hex(&bytes);
        let latency = self
            .rng
            .random_range(self.config.latency.min_ms * 1000..=self.config.latency.max_ms * 1000);
        let dropped = self.rng.random::<f64>() < self.config.drop_probability;

        let len = bytes.len() as u64;
        *self.wire.bytes.entry(msg_type).or_default() += len;
        *self.wire.messages.entry(msg_type).or_default() += 1;
        let record_bytes = match &envelope.payload {
            Payload::HarvestResponse(batch) => {
                let n: u64 = batch.records.iter().map(|r| r.encoded_len() as u64).sum();
                self.wire.record_bytes += n;
                Some(n)
            }
            _ => None,
        };

        let mut ev = TraceEvent::new(self.now, EventKind::Send, envelope.sender.clone())
            .peer(envelope.recipient.clone());
        ev.msg_type = Some(msg_type);
        ev.request_id = Some(envelope.request_id);
        ev.bytes = Some(len);
        ev.record_bytes = record_bytes;
        ev.digest = Some(digest.clone());
        self.trace.push(ev.clone());

        if dropped {
            self.wire.dropped += 1;
            ev.kind = EventKind::Dropped;
            ev.record_bytes = None;
            self.trace.push(ev);
            return Ok(None);
        }
        let at = self.now + latency;
        self.enqueue(
            at,
            Event::Deliver {
                from: envelope.sender.clone(),
                to: envelope.recipient.clone(),
                msg_type,
                request_id: envelope.request_id,
                digest,
                bytes,
            },
        );
        Ok(Some(at))
    }

    /// Sends a request and arms its timeout. An envelope that cannot be
    /// encoded behaves like a lost message.
    fn request(&mut self, from: &DomainName, to: &DomainName, payload: Payload, pending: Pending) {
        let node = self.nodes.get_mut(from).expect("requester is registered");
        let request_id = node.next_request_id;
        node.next_request_id += 1;
        let envelope = Envelope::new(from.clone(), to.clone(), request_id, payload);
        if let Err(e) = self.transmit(&envelope) {
            self.node_error(from, format!("cannot send {}: {e}", envelope.msg_type()));
        }
        self.pending.insert((from.clone(), request_id), pending);
        let at = self.now + self.config.timeout_us();
        self.enqueue(
            at,
            Event::Timeout {
                node: from.clone(),
                request_id,
            },
        );
    }

    fn reply(&mut self, to: &Envelope, payload: Payload) {
        let envelope = to.reply(payload);
        if let Err(e) = self.transmit(&envelope) {
            self.node_error(
                &envelope.sender,
                format!("cannot send {}: {e}", envelope.msg_type()),
            );
        }
    }

    fn reply_error(&mut self, to: &Envelope, code: &str, message: String) {
        self.reply(
            to,
            Payload::Error(ErrorBody {
                code: code.into(),
                message,
            }),
        );
    }

    fn node_error(&mut self, node: &DomainName, detail: String) {
        self.trace
            .push(TraceEvent::new(self.now, EventKind::NodeError, node.clone()).detail(detail));
    }

    fn period_set(&self, subnet: &DomainName) -> BTreeSet<SimTime> {
        let mut periods: BTreeSet<SimTime> = self
            .topology
            .children_of(subnet)
            .iter()
            .map(|c| self.config.harvest_period_of(c) * MICROS_PER_SECOND)
            .collect();
        periods.insert(self.config.description_push_period * MICROS_PER_SECOND);
        periods
    }

    fn schedule_next_tick(&mut self, subnet: &DomainName, after: SimTime) {
        let next = self
            .period_set(subnet)
            .into_iter()
            .map(|p| (after / p + 1) * p)
            .min()
            .expect("push period is always present");
        if next <= self.config.end_us() {
            self.enqueue(next, Event::Tick(subnet.clone()));
        }
    }

    /// Processes stimuli and every event due up to `end_time`.
    pub fn run(&mut self, scenario: Vec<Stimulus>) -> Result<EventTrace, SimError> {
        self.run_until(scenario, self.config.end_time)
    }

    /// Like [`Simulation::run`] but stops after the events due at `until`
    /// sim-seconds; a later call resumes from there.
    pub fn run_until(
        &mut self,
        scenario: Vec<Stimulus>,
        until: SimSeconds,
    ) -> Result<EventTrace, SimError> {
        let end = self.config.end_time;
        if let Some(s) = scenario.iter().find(|s| s.t >= end) {
            return Err(SimError::StimulusAfterEnd { t: s.t, end });
        }
        if !self.started {
            self.started = true;
            let subnets: Vec<DomainName> =
                self.topology.with_level(Level::Subnet).cloned().collect();
            for s in subnets {
                self.schedule_next_tick(&s, self.now);
            }
        }
        for s in scenario {
            let at = s.t * MICROS_PER_SECOND;
            if at < self.now {
                return Err(SimError::TimeTravel {
                    now: at,
                    clock: self.now,
                });
            }
            self.enqueue(at, Event::Stimulus(s.op));
        }
        let stop = self
            .config
            .end_us()
            .min(until.saturating_mul(MICROS_PER_SECOND));
        while self.queue.peek().is_some_and(|q| q.time <= stop) {
            let Queued { time, event, .. } = self.queue.pop().expect("peeked");
            debug_assert!(time >= self.now);
            self.now = time;
            match event {
                Event::Stimulus(op) => self.on_stimulus(op),
                Event::Deliver {
                    from,
                    to,
                    msg_type,
                    request_id,
                    digest,
                    bytes,
                } => {
                    let mut ev = TraceEvent::new(time, EventKind::Deliver, to.clone()).peer(from);
                    ev.msg_type = Some(msg_type);
                    ev.request_id = Some(request_id);
                    ev.bytes = Some(bytes.len() as u64);
                    ev.digest = Some(digest);
                    self.trace.push(ev);
                    self.on_deliver(&to, &bytes);
                }
                Event::Tick(subnet) => self.on_tick(&subnet),
                Event::Timeout { node, request_id } => self.on_timeout(&node, request_id),
            }
        }
        Ok(self.trace.clone())
    }

    fn on_stimulus(&mut self, op: StimulusOp) {
        match op {
            StimulusOp::Upsert(doc) => {
                let owner = doc.owner.clone();
                let now = self.now;
                let result = match self.org_mut(&owner) {
                    Some(org) => org.upsert_document(&doc, now),
                    None => {
                        self.node_error(
                            &owner,
                            format!("upsert {}: no such organization", doc.doc_id),
                        );
                        return;
                    }
                };
                match result {
                    Ok(seq) => {
                        self.trace.push(
                            TraceEvent::new(now, EventKind::Upsert, owner.clone())
                                .detail(doc.doc_id.clone()),
                        );
                        self.tracker
                            .record_change(&owner, &doc.doc_id, seq, ChangeOp::Upsert, now);
                        self.docs.insert(doc.doc_id.clone(), doc);
                    }
                    Err(e) => self.node_error(&owner, format!("upsert {}: {e}", doc.doc_id)),
                }
            }
            StimulusOp::Delete(DeleteStimulus { doc_id, owner }) => {
                let now = self.now;
                let result = match self.org_mut(&owner) {
                    Some(org) => org.delete_document(&doc_id, now),
                    None => {
                        self.node_error(&owner, format!("delete {doc_id}: no such organization"));
                        return;
                    }
                };
                match result {
                    Ok(seq) => {
                        self.trace.push(
                            TraceEvent::new(now, EventKind::Delete, owner.clone())
                                .detail(doc_id.clone()),
                        );
                        self.tracker
                            .record_change(&owner, &doc_id, seq, ChangeOp::Delete, now);
                        self.docs.remove(&doc_id);
                    }
                    Err(e) => self.node_error(&owner, format!("delete {doc_id}: {e}")),
                }
            }
            StimulusOp::Query(q) => self.issue_query(q),
        }
    }

    fn oracle_answers(&self, query: &Query) -> OracleAnswers {
        let records = self
            .nodes
            .values()
            .filter_map(|n| match &n.state {
                NodeState::Subnet(s) => Some(s.harvest.union().live_records().cloned()),
                _ => None,
            })
            .flatten();
        let metadata = oracle_search(&GlobalOracle::metadata(records), query);
        let full_text = oracle_search(&GlobalOracle::full_text(self.docs.values().cloned()), query);
        OracleAnswers {
            metadata,
            full_text,
        }
    }

    fn issue_query(&mut self, q: QueryStimulus) {
        let id = self.queries.len();
        let entry = q
            .entry
            .clone()
            .or_else(|| self.topology.primary_root().cloned());
        let mode = q.mode.unwrap_or(self.config.merge_mode);
        let width = q.width.or(self.config.query_width);
        let mut outcome = QueryOutcome {
            id,
            entry: entry.clone(),
            text: q.text.clone(),
            k: q.k,
            mode,
            width,
            issued_at: self.now,
            finished_at: None,
            hits: Vec::new(),
            degraded: false,
            failed: Vec::new(),
            error: None,
            oracle: None,
        };
        if let Some(e) = &entry {
            self.trace.push(
                TraceEvent::new(self.now, EventKind::QueryIssue, e.clone()).detail(id.to_string()),
            );
        }

        let query = match Query::from_text(&q.text, q.k) {
            Ok(query) => query,
            Err(e) => {
                outcome.error = Some(e.to_string());
                return self.conclude(outcome, entry.as_ref());
            }
        };
        if self.oracle_checks {
            outcome.oracle = Some(self.oracle_answers(&query));
        }
        let Some(entry) = entry else {
            outcome.error = Some("no root to submit the query to".into());
            return self.conclude(outcome, None);
        };
        let Some(node) = self.nodes.get(&entry) else {
            outcome.error = Some(format!("unknown entry node {entry}"));
            return self.conclude(outcome, None);
        };
        match &node.state {
            NodeState::Org(org) => {
                outcome.hits = org.search_local(&query);
                self.conclude(outcome, Some(&entry))
            }
            NodeState::Subnet(s) => {
                outcome.hits = s.harvest.search_union(&query);
                self.conclude(outcome, Some(&entry))
            }
            NodeState::Root(root) => {
                let width = width.unwrap_or(usize::MAX);
                let plan = match select_collections(root.registry(), &query, width) {
                    Ok(plan) => plan,
                    Err(e) => {
                        outcome.error = Some(e.to_string());
                        return self.conclude(outcome, Some(&entry));
                    }
                };
                let request = target_request(root.registry(), &query, mode);
                self.queries.push(outcome);
                self.active.insert(
                    id,
                    ActiveQuery {
                        request: request.clone(),
                        outstanding: plan.targets.iter().cloned().collect(),
                        lists: Vec::new(),
                    },
                );
                for target in plan.targets {
                    self.request(
                        &entry,
                        &target,
                        Payload::SearchRequest(request.clone()),
                        Pending::Search {
                            query: id,
                            target: target.clone(),
                        },
                    );
                }
            }
        }
    }

    fn conclude(&mut self, mut outcome: QueryOutcome, node: Option<&DomainName>) {
        outcome.finished_at = Some(self.now);
        let detail = match &outcome.error {
            Some(e) => format!("{} error: {e}", outcome.id),
            None => format!("{} hits={}", outcome.id, outcome.hits.len()),
        };
        if let Some(node) = node {
            self.trace
                .push(TraceEvent::new(self.now, EventKind::QueryDone, node.clone()).detail(detail));
        }
        self.queries.push(outcome);
    }

    fn query_answered(&mut self, id: usize, target: &DomainName, answer: Option<Vec<ScoredHit>>) {
        let Some(active) = self.active.get_mut(&id) else {
            return;
        };
        active.outstanding.remove(target);
        match answer {
            Some(hits) => active.lists.push(hits),
            None => self.queries[id].failed.push(target.clone()),
        }
        if !active.outstanding.is_empty() {
            return;
        }
        let active = self.active.remove(&id).expect("present");
        let outcome = &mut self.queries[id];
        let entry = outcome.entry.clone().expect("routed queries have an entry");
        outcome.hits = finish_federated(&entry, active.lists, outcome.k, &active.request);
        outcome.degraded = !outcome.failed.is_empty();
        outcome.finished_at = Some(self.now);
        let detail = format!("{id} hits={}", outcome.hits.len());
        self.trace
            .push(TraceEvent::new(self.now, EventKind::QueryDone, entry).detail(detail));
    }

    fn subnet_state(&mut self, subnet: &DomainName) -> &mut SubnetState {
        match &mut self.nodes.get_mut(subnet).expect("registered").state {
            NodeState::Subnet(s) => s,
            _ => panic!("{subnet} is not a subnet"),
        }
    }

    fn on_tick(&mut self, subnet: &DomainName) {
        let now = self.now;
        for child in self.topology.children_of(subnet) {
            let period = self.config.harvest_period_of(&child) * MICROS_PER_SECOND;
            if !now.is_multiple_of(period) {
                continue;
            }
            match self.subnet_state(subnet).harvest.start_harvest(&child) {
                Ok(req) => {
                    self.trace.push(
                        TraceEvent::new(now, EventKind::HarvestStart, subnet.clone())
                            .peer(child.clone())
                            .detail(format!("from_seq={}", req.from_seq)),
                    );
                    self.request(
                        subnet,
                        &child,
                        Payload::HarvestRequest(req),
                        Pending::Harvest {
                            child: child.clone(),
                        },
                    );
                }
                Err(e) => {
                    let kind = match e {
                        HarvestError::AlreadyInProgress(_) => EventKind::HarvestSkip,
                        _ => EventKind::NodeError,
                    };
                    self.trace.push(
                        TraceEvent::new(now, kind, subnet.clone())
                            .peer(child)
                            .detail(e.to_string()),
                    );
                }
            }
        }
        if now.is_multiple_of(self.config.description_push_period * MICROS_PER_SECOND) {
            self.subnet_state(subnet).push_pending = true;
        }
        self.maybe_push(subnet);
        self.schedule_next_tick(subnet, now);
    }

    /// Pushes a due description once no harvest is running, so that a push
    /// scheduled together with a harvest reflects that harvest.
    fn maybe_push(&mut self, subnet: &DomainName) {
        let now = self.now;
        let s = self.subnet_state(subnet);
        if !s.push_pending || s.harvest.any_in_flight() {
            return;
        }
        s.push_pending = false;
        let desc = s.harvest.build_collection_description(now);
        let Some(root) = self.topology.root_of(subnet) else {
            return;
        };
        self.trace.push(
            TraceEvent::new(now, EventKind::Push, subnet.clone())
                .peer(root.clone())
                .detail(format!("live={}", desc.live_count)),
        );
        self.request(
            subnet,
            &root,
            Payload::RegisterDescription(desc),
            Pending::Register { root: root.clone() },
        );
    }

    fn on_timeout(&mut self, node: &DomainName, request_id: u64) {
        let Some(pending) = self.pending.remove(&(node.clone(), request_id)) else {
            return;
        };
        let mut ev = TraceEvent::new(self.now, EventKind::Timeout, node.clone())
            .peer(pending.peer().clone());
        ev.request_id = Some(request_id);
        self.trace.push(ev);
        match pending {
            Pending::Harvest { child } => self.harvest_failed(node, &child, "timed out".into()),
            Pending::Search { query, target } => self.query_answered(query, &target, None),
            Pending::Register { .. } => {}
        }
    }

    fn harvest_failed(&mut self, subnet: &DomainName, child: &DomainName, why: String) {
        self.subnet_state(subnet).harvest.on_unreachable(child);
        self.trace.push(
            TraceEvent::new(self.now, EventKind::HarvestFail, subnet.clone())
                .peer(child.clone())
                .detail(why),
        );
        self.maybe_push(subnet);
    }

    fn take_pending(&mut self, env: &Envelope) -> Option<Pending> {
        let key = (env.recipient.clone(), env.request_id);
        match self.pending.get(&key) {
            Some(p) if *p.peer() == env.sender => self.pending.remove(&key),
            _ => {
                let mut ev = TraceEvent::new(self.now, EventKind::LateReply, env.recipient.clone())
                    .peer(env.sender.clone());
                ev.msg_type = Some(env.msg_type());
                ev.request_id = Some(env.request_id);
                self.trace.push(ev);
                None
            }
        }
    }

    fn on_deliver(&mut self, to: &DomainName, bytes: &[u8]) {
        let env = match wire::decode(bytes) {
            Ok(env) => env,
            Err(e) => return self.node_error(to, format!("undecodable message: {e}")),
        };
        let level = self
            .topology
            .level(to)
            .expect("deliveries target registered nodes");
        match (&env.payload, level) {
            (Payload::HarvestRequest(req), Level::Org) => {
                let result = self
                    .org(to)
                    .expect("org")
                    .list_records(req.from_seq, req.token.as_deref());
                match result {
                    Ok(batch) => self.reply(&env, Payload::HarvestResponse(batch)),
                    Err(IndexError::StaleToken) => {
                        self.reply_error(&env, STALE_TOKEN, "resumption token is stale".into())
                    }
                    Err(e) => self.reply_error(&env, "internal", e.to_string()),
                }
            }
            (Payload::SearchRequest(req), Level::Subnet) => {
                let node = self.subnet(to).expect("subnet");
                match answer_search(node, req) {
                    Ok(hits) => self.reply(
                        &env,
                        Payload::SearchResponse(SearchResponse {
                            hits,
                            degraded: false,
                        }),
                    ),
                    Err(e) => self.reply_error(&env, "rejected", e.to_string()),
                }
            }
            (Payload::RegisterDescription(desc), Level::Root) => {
                if desc.collection != env.sender {
                    return self.reply_error(
                        &env,
                        "invalid_description",
                        "description names a different collection".into(),
                    );
                }
                let root = match &mut self.nodes.get_mut(to).expect("root").state {
                    NodeState::Root(r) => r,
                    _ => unreachable!(),
                };
                match root.register_collection(desc.clone()) {
                    Ok(()) => {
                        self.trace.push(
                            TraceEvent::new(self.now, EventKind::Register, to.clone())
                                .peer(env.sender.clone())
                                .detail(format!("as_of={}", desc.as_of)),
                        );
                        self.tracker
                            .on_root_register(&desc.collection, desc.as_of, self.now);
                        self.reply(&env, Payload::Ack(Ack {}));
                    }
                    Err(e) => self.reply_error(&env, "rejected", e.to_string()),
                }
            }
            (Payload::SearchRequest(_), _)
            | (Payload::HarvestRequest(_), _)
            | (Payload::RegisterDescription(_), _) => {
                let msg = format!("{level} nodes do not serve {}", env.msg_type());
                self.reply_error(&env, "unsupported", msg)
            }
            _ => self.on_response(env),
        }
    }

    fn on_response(&mut self, env: Envelope) {
        let Some(pending) = self.take_pending(&env) else {
            return;
        };
        let me = env.recipient.clone();
        match (pending, env.payload) {
            (Pending::Harvest { child }, Payload::HarvestResponse(batch)) => {
                for r in batch.records.iter().filter(|r| r.owner == child) {
                    self.tracker
                        .on_subnet_apply(&me, &r.owner, &r.doc_id, r.seq_no, self.now);
                }
                let now = self.now;
                match self.subnet_state(&me).harvest.on_batch(&child, batch, now) {
                    Ok(HarvestStep::Continue(next)) => self.request(
                        &me,
                        &child,
                        Payload::HarvestRequest(next),
                        Pending::Harvest {
                            child: child.clone(),
                        },
                    ),
                    Ok(HarvestStep::Done { applied }) => {
                        self.trace.push(
                            TraceEvent::new(now, EventKind::HarvestDone, me.clone())
                                .peer(child)
                                .detail(format!("applied={applied}")),
                        );
                        self.maybe_push(&me);
                    }
                    Err(e) => self.node_error(&me, e.to_string()),
                }
            }
            (Pending::Harvest { child }, Payload::Error(err)) if err.code == STALE_TOKEN => {
                match self.subnet_state(&me).harvest.on_stale_token(&child) {
                    Ok(req) => self.request(
                        &me,
                        &child,
                        Payload::HarvestRequest(req),
                        Pending::Harvest {
                            child: child.clone(),
                        },
                    ),
                    Err(e) => {
                        self.trace.push(
                            TraceEvent::new(self.now, EventKind::HarvestFail, me.clone())
                                .peer(child)
                                .detail(e.to_string()),
                        );
                        self.maybe_push(&me);
                    }
                }
            }
            (Pending::Harvest { child }, other) => {
                let why = match other {
                    Payload::Error(err) => format!("{}: {}", err.code, err.message),
                    other => format!("unexpected {}", other.msg_type()),
                };
                self.harvest_failed(&me, &child, why);
            }
            (Pending::Search { query, target }, Payload::SearchResponse(resp)) => {
                self.query_answered(query, &target, Some(resp.hits));
                if resp.degraded {
                    if let Some(q) = self.queries.get_mut(query) {
                        q.degraded = true;
                    }
                }
            }
            (Pending::Search { query, target }, _) => self.query_answered(query, &target, None),
            (Pending::Register { .. }, Payload::Ack(_)) => {}
            (Pending::Register { root }, other) => {
                let why = match other {
                    Payload::Error(err) => format!("{}: {}", err.code, err.message),
                    other => format!("unexpected {}", other.msg_type()),
                };
                self.node_error(&me, format!("registration with {root} failed: {why}"));
            }
        }
    }
}

#[cfg(test)]
mod tests;

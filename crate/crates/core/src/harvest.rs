//! Sub-network node: pulls metadata records from child organizations into a
//! union index, answers queries over it, and summarizes it as a
//! [`CollectionDescription`] for the root.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broker::GlobalStats;
use crate::model::{idf, sort_hits, DomainName, Query, ScoredHit, SimTime, TermWeight};
use crate::org::{HarvestBatch, IndexError, MetadataRecord, OrgIndex};
use crate::wire::HarvestRequest;

/// Restarts from seq 0 allowed within one harvest before giving up.
const MAX_RESTARTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarvestError {
    #[error("{0} is not a registered child")]
    UnknownChild(DomainName),
    #[error("child {0} is unreachable")]
    ChildUnreachable(DomainName),
    #[error("a harvest of {0} is already in progress")]
    AlreadyInProgress(DomainName),
    #[error("no harvest of {0} is in progress")]
    NotInProgress(DomainName),
    #[error("child {0} kept returning stale tokens")]
    TooManyRestarts(DomainName),
}

/// Failure modes of a harvest endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EndpointError {
    #[error("endpoint unreachable")]
    Unreachable,
    #[error("stale resumption token")]
    StaleToken,
}

/// Anything that can serve `list_records` for a child organization.
pub trait HarvestEndpoint {
    fn list_records(
        &mut self,
        child: &DomainName,
        from_seq: u64,
        token: Option<&str>,
    ) -> Result<HarvestBatch, EndpointError>;
}

/// In-process endpoint over a set of organization indexes.
impl HarvestEndpoint for BTreeMap<DomainName, OrgIndex> {
    fn list_records(
        &mut self,
        child: &DomainName,
        from_seq: u64,
        token: Option<&str>,
    ) -> Result<HarvestBatch, EndpointError> {
        let org = self.get(child).ok_or(EndpointError::Unreachable)?;
        org.list_records(from_seq, token).map_err(|e| match e {
            IndexError::StaleToken => EndpointError::StaleToken,
            _ => EndpointError::Unreachable,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChildCursor {
    pub last_seq: u64,
    pub last_harvest_time: Option<SimTime>,
    pub consecutive_failures: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestState {
    children: BTreeMap<DomainName, ChildCursor>,
}

impl HarvestState {
    pub fn cursor(&self, child: &DomainName) -> Option<&ChildCursor> {
        self.children.get(child)
    }

    pub fn children(&self) -> impl Iterator<Item = &DomainName> {
        self.children.keys()
    }
}

/// Per-collection statistics a root uses to route queries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionDescription {
    pub collection: DomainName,
    pub live_count: u64,
    pub term_df: BTreeMap<String, u64>,
    pub as_of: SimTime,
}

impl CollectionDescription {
    pub fn df(&self, term: &str) -> u64 {
        self.term_df.get(term).copied().unwrap_or(0)
    }

    /// Checks `df <= live_count` and that no term has df 0.
    pub fn is_consistent(&self) -> bool {
        self.term_df
            .values()
            .all(|&df| df >= 1 && df <= self.live_count)
    }
}

/// Union of harvested metadata records, tombstones included.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnionIndex {
    records: BTreeMap<String, MetadataRecord>,
    /// term -> live records whose key terms contain it
    term_docs: BTreeMap<String, BTreeSet<String>>,
    live_count: u64,
}

fn distinct_key_terms(record: &MetadataRecord) -> BTreeSet<&str> {
    record.key_terms.iter().map(|tw| tw.term.as_str()).collect()
}

impl UnionIndex {
    pub fn new() -> Self {
        UnionIndex::default()
    }

    pub fn live_count(&self) -> u64 {
        self.live_count
    }

    pub fn term_df(&self, term: &str) -> u64 {
        self.term_docs.get(term).map_or(0, |s| s.len() as u64)
    }

    /// Incrementally maintained document frequencies.
    pub fn term_dfs(&self) -> BTreeMap<String, u64> {
        self.term_docs
            .iter()
            .map(|(t, s)| (t.clone(), s.len() as u64))
            .collect()
    }

    /// Document frequencies recomputed from the stored records.
    pub fn recompute_term_dfs(&self) -> BTreeMap<String, u64> {
        let mut df: BTreeMap<String, u64> = BTreeMap::new();
        for r in self.records.values().filter(|r| !r.deleted) {
            for t in distinct_key_terms(r) {
                *df.entry(t.to_string()).or_default() += 1;
            }
        }
        df
    }

    pub fn get(&self, doc_id: &str) -> Option<&MetadataRecord> {
        self.records.get(doc_id)
    }

    pub fn records(&self) -> impl Iterator<Item = &MetadataRecord> {
        self.records.values()
    }

    pub fn live_records(&self) -> impl Iterator<Item = &MetadataRecord> {
        self.records.values().filter(|r| !r.deleted)
    }

    /// Applies one record. Returns false when an equal or newer record from the
    /// same owner is already present.
    pub fn apply(&mut self, record: MetadataRecord) -> bool {
        if let Some(old) = self.records.get(&record.doc_id) {
            if old.owner == record.owner && old.seq_no >= record.seq_no {
                return false;
            }
        }
        if let Some(old) = self.records.remove(&record.doc_id) {
            self.unlink(&old);
        }
        if !record.deleted {
            self.live_count += 1;
            for t in distinct_key_terms(&record) {
                self.term_docs
                    .entry(t.to_string())
                    .or_default()
                    .insert(record.doc_id.clone());
            }
        }
        self.records.insert(record.doc_id.clone(), record);
        true
    }

    fn unlink(&mut self, old: &MetadataRecord) {
        if old.deleted {
            return;
        }
        self.live_count -= 1;
        for t in distinct_key_terms(old) {
            if let Some(set) = self.term_docs.get_mut(t) {
                set.remove(&old.doc_id);
                if set.is_empty() {
                    self.term_docs.remove(t);
                }
            }
        }
    }

    /// Drops every record owned by `owner`.
    pub fn remove_owner(&mut self, owner: &DomainName) {
        let doomed: Vec<String> = self
            .records
            .values()
            .filter(|r| &r.owner == owner)
            .map(|r| r.doc_id.clone())
            .collect();
        for doc_id in doomed {
            if let Some(old) = self.records.remove(&doc_id) {
                self.unlink(&old);
            }
        }
    }

    /// Scores with this index's own `live_count` and `term_df`.
    pub fn search_union(&self, query: &Query, me: &DomainName) -> Vec<ScoredHit> {
        self.search_with(query, me, None)
    }

    /// Scores each live record by `sum weight(t) * ln(1 + N/df(t))` over
    /// distinct query terms present in its key terms. `N` and `df` come from
    /// `stats` when given, otherwise from this index.
    pub fn search_with(
        &self,
        query: &Query,
        me: &DomainName,
        stats: Option<&GlobalStats>,
    ) -> Vec<ScoredHit> {
        let terms = query.distinct_terms();
        let n = stats.map_or(self.live_count, |s| s.n);
        let mut candidates: BTreeSet<&str> = BTreeSet::new();
        for t in &terms {
            if let Some(set) = self.term_docs.get(*t) {
                candidates.extend(set.iter().map(String::as_str));
            }
        }
        let mut hits = Vec::new();
        for doc_id in candidates {
            let record = &self.records[doc_id];
            let mut score = 0.0;
            let mut matched = Vec::new();
            for t in &terms {
                let Some(weight) = record.weight_of(t) else {
                    continue;
                };
                let df = stats.map_or_else(|| self.term_df(t), |s| s.df(t));
                if df == 0 {
                    continue;
                }
                score += weight * idf(n, df);
                matched.push(TermWeight::new(*t, weight));
            }
            if score > 0.0 {
                hits.push(ScoredHit {
                    doc_id: doc_id.to_string(),
                    score,
                    owner: record.owner.clone(),
                    path: vec![me.clone(), record.owner.clone()],
                    term_weights: matched,
                });
            }
        }
        sort_hits(&mut hits);
        hits.truncate(query.k());
        hits
    }

    pub fn build_collection_description(
        &self,
        me: &DomainName,
        now: SimTime,
    ) -> CollectionDescription {
        CollectionDescription {
            collection: me.clone(),
            live_count: self.live_count,
            term_df: self.term_dfs(),
            as_of: now,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct InFlight {
    from_seq: u64,
    applied: usize,
    restarts: u32,
}

/// What a harvester should do after receiving a page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HarvestStep {
    /// Ask for the next page.
    Continue(HarvestRequest),
    /// The child is exhausted; `applied` records were applied in total.
    Done { applied: usize },
}

/// A sub-network node: union index plus per-child harvest cursors.
///
/// Harvesting is exposed both as a blocking [`HarvestNode::run_harvest`] over
/// a [`HarvestEndpoint`] and as the underlying step functions
/// (`start_harvest` / `on_batch` / `on_stale_token` / `on_unreachable`) that
/// a message-driven caller invokes as responses arrive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestNode {
    me: DomainName,
    union: UnionIndex,
    state: HarvestState,
    in_flight: BTreeMap<DomainName, InFlight>,
}

impl HarvestNode {
    pub fn new(me: DomainName) -> Self {
        HarvestNode {
            me,
            union: UnionIndex::new(),
            state: HarvestState::default(),
            in_flight: BTreeMap::new(),
        }
    }

    pub fn domain(&self) -> &DomainName {
        &self.me
    }

    pub fn union(&self) -> &UnionIndex {
        &self.union
    }

    pub fn state(&self) -> &HarvestState {
        &self.state
    }

    pub fn register_child(&mut self, child: DomainName) {
        self.state.children.entry(child).or_default();
    }

    pub fn is_harvesting(&self, child: &DomainName) -> bool {
        self.in_flight.contains_key(child)
    }

    pub fn any_in_flight(&self) -> bool {
        !self.in_flight.is_empty()
    }

    pub fn start_harvest(&mut self, child: &DomainName) -> Result<HarvestRequest, HarvestError> {
        let cursor = self
            .state
            .children
            .get(child)
            .ok_or_else(|| HarvestError::UnknownChild(child.clone()))?;
        if self.in_flight.contains_key(child) {
            return Err(HarvestError::AlreadyInProgress(child.clone()));
        }
        let from_seq = cursor.last_seq;
        self.in_flight.insert(
            child.clone(),
            InFlight {
                from_seq,
                applied: 0,
                restarts: 0,
            },
        );
        Ok(HarvestRequest {
            from_seq,
            token: None,
        })
    }

    /// Applies a page. Records are applied one at a time; the cursor moves only
    /// once the child reports no further pages.
    pub fn on_batch(
        &mut self,
        child: &DomainName,
        batch: HarvestBatch,
        now: SimTime,
    ) -> Result<HarvestStep, HarvestError> {
        let flight = self
            .in_flight
            .get_mut(child)
            .ok_or_else(|| HarvestError::NotInProgress(child.clone()))?;
        for record in batch.records {
            if self.union.apply(record) {
                flight.applied += 1;
            }
        }
        if let Some(token) = batch.next_token {
            return Ok(HarvestStep::Continue(HarvestRequest {
                from_seq: flight.from_seq,
                token: Some(token),
            }));
        }
        let applied = flight.applied;
        self.in_flight.remove(child);
        let cursor = self.state.children.entry(child.clone()).or_default();
        cursor.last_seq = cursor.last_seq.max(batch.high_seq);
        cursor.last_harvest_time = Some(now);
        cursor.consecutive_failures = 0;
        Ok(HarvestStep::Done { applied })
    }

    /// The child rejected our cursor: forget what we hold from it and start
    /// over from seq 0.
    pub fn on_stale_token(&mut self, child: &DomainName) -> Result<HarvestRequest, HarvestError> {
        let flight = self
            .in_flight
            .get_mut(child)
            .ok_or_else(|| HarvestError::NotInProgress(child.clone()))?;
        if flight.restarts >= MAX_RESTARTS {
            self.on_unreachable(child);
            return Err(HarvestError::TooManyRestarts(child.clone()));
        }
        flight.restarts += 1;
        flight.from_seq = 0;
        self.union.remove_owner(child);
        Ok(HarvestRequest {
            from_seq: 0,
            token: None,
        })
    }

    /// Abandons the in-flight harvest and counts a failure. The cursor is left
    /// where it was.
    pub fn on_unreachable(&mut self, child: &DomainName) {
        self.in_flight.remove(child);
        if let Some(cursor) = self.state.children.get_mut(child) {
            cursor.consecutive_failures += 1;
        }
    }

    /// Pages through the child's changes until exhausted and returns the number
    /// of records applied.
    pub fn run_harvest<E: HarvestEndpoint + ?Sized>(
        &mut self,
        child: &DomainName,
        now: SimTime,
        endpoint: &mut E,
    ) -> Result<usize, HarvestError> {
        let mut request = self.start_harvest(child)?;
        loop {
            match endpoint.list_records(child, request.from_seq, request.token.as_deref()) {
                Ok(batch) => match self.on_batch(child, batch, now)? {
                    HarvestStep::Continue(next) => request = next,
                    HarvestStep::Done { applied } => return Ok(applied),
                },
                Err(EndpointError::StaleToken) => request = self.on_stale_token(child)?,
                Err(EndpointError::Unreachable) => {
                    self.on_unreachable(child);
                    return Err(HarvestError::ChildUnreachable(child.clone()));
                }
            }
        }
    }

    pub fn search_union(&self, query: &Query) -> Vec<ScoredHit> {
        self.union.search_union(query, &self.me)
    }

    pub fn search_with(&self, query: &Query, stats: Option<&GlobalStats>) -> Vec<ScoredHit> {
        self.union.search_with(query, &self.me, stats)
    }

    pub fn build_collection_description(&self, now: SimTime) -> CollectionDescription {
        self.union.build_collection_description(&self.me, now)
    }
}

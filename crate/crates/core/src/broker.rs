//! Root broker: holds only collection descriptions, routes each query to the
//! most promising child collections, and merges their answers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harvest::{CollectionDescription, HarvestNode};
use crate::model::{idf, sort_hits, DomainName, Query, ScoredHit, SimTime};
use crate::wire::SearchRequest;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BrokerError {
    #[error("no collections registered")]
    EmptyRegistry,
    #[error("description for {collection} as of {offered} is older than stored {stored}")]
    StaleDescription {
        collection: DomainName,
        stored: SimTime,
        offered: SimTime,
    },
    #[error("description for {0} has a df above live_count or a zero df entry")]
    InvalidDescription(DomainName),
    #[error("fan-out width must be at least 1")]
    BadWidth,
}

/// Federation-wide `N` and per-term `df`, summed over registered collections.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalStats {
    pub n: u64,
    pub df: BTreeMap<String, u64>,
}

impl GlobalStats {
    pub fn df(&self, term: &str) -> u64 {
        self.df.get(term).copied().unwrap_or(0)
    }

    /// Sums `live_count` and the query terms' `df` across every registered
    /// description.
    pub fn from_registry(registry: &CollectionRegistry, query: &Query) -> Self {
        let mut stats = GlobalStats::default();
        for desc in registry.entries.values() {
            stats.n += desc.live_count;
            for t in query.distinct_terms() {
                *stats.df.entry(t.to_string()).or_default() += desc.df(t);
            }
        }
        stats.df.retain(|_, df| *df > 0);
        stats
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionRegistry {
    entries: BTreeMap<DomainName, CollectionDescription>,
    order: Vec<DomainName>,
}

impl CollectionRegistry {
    pub fn new() -> Self {
        CollectionRegistry::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, collection: &DomainName) -> Option<&CollectionDescription> {
        self.entries.get(collection)
    }

    /// Collections in the order they were first registered.
    pub fn registration_order(&self) -> &[DomainName] {
        &self.order
    }

    pub fn descriptions(&self) -> impl Iterator<Item = &CollectionDescription> {
        self.order.iter().map(|c| &self.entries[c])
    }

    pub fn register(&mut self, desc: CollectionDescription) -> Result<(), BrokerError> {
        if !desc.is_consistent() {
            return Err(BrokerError::InvalidDescription(desc.collection));
        }
        match self.entries.get(&desc.collection) {
            Some(stored) if desc.as_of < stored.as_of => Err(BrokerError::StaleDescription {
                collection: desc.collection,
                stored: stored.as_of,
                offered: desc.as_of,
            }),
            Some(_) => {
                self.entries.insert(desc.collection.clone(), desc);
                Ok(())
            }
            None => {
                self.order.push(desc.collection.clone());
                self.entries.insert(desc.collection.clone(), desc);
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanoutPlan {
    pub query: Query,
    /// Selected collections, best first.
    pub targets: Vec<DomainName>,
    /// Selection score of each target, parallel to `targets`.
    pub scores: Vec<f64>,
    pub width: usize,
}

/// Selection score of one collection:
/// `sum df_c(t) / live_count_c * ln(1 + C / cf(t))`.
fn collection_score(
    desc: &CollectionDescription,
    terms: &[&str],
    collections: u64,
    cf: &BTreeMap<&str, u64>,
) -> f64 {
    if desc.live_count == 0 {
        return 0.0;
    }
    let mut score = 0.0;
    for t in terms {
        let df = desc.df(t);
        let cf_t = cf[t];
        if df == 0 || cf_t == 0 {
            continue;
        }
        score += df as f64 / desc.live_count as f64 * idf(collections, cf_t);
    }
    score
}

/// Ranks collections for `query` and keeps the best `width`. Collections
/// scoring zero are dropped, unless every collection scores zero, in which
/// case all of them are kept (ordered by name).
pub fn select_collections(
    registry: &CollectionRegistry,
    query: &Query,
    width: usize,
) -> Result<FanoutPlan, BrokerError> {
    if width == 0 {
        return Err(BrokerError::BadWidth);
    }
    if registry.is_empty() {
        return Err(BrokerError::EmptyRegistry);
    }
    let terms = query.distinct_terms();
    let collections = registry.len() as u64;
    let cf: BTreeMap<&str, u64> = terms
        .iter()
        .map(|t| {
            let n = registry.entries.values().filter(|d| d.df(t) >= 1).count() as u64;
            (*t, n)
        })
        .collect();
    let mut scored: Vec<(&DomainName, f64)> = registry
        .entries
        .iter()
        .map(|(name, desc)| (name, collection_score(desc, &terms, collections, &cf)))
        .collect();
    if scored.iter().any(|(_, s)| *s > 0.0) {
        scored.retain(|(_, s)| *s > 0.0);
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    scored.truncate(width);
    Ok(FanoutPlan {
        query: query.clone(),
        targets: scored.iter().map(|(n, _)| (*n).clone()).collect(),
        scores: scored.iter().map(|(_, s)| *s).collect(),
        width,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    /// Interleave by the scores each collection reported.
    Raw,
    /// Rescore every hit with federation-wide statistics first.
    Global,
}

#[derive(Debug, Clone, Copy)]
pub enum MergeStrategy<'a> {
    Raw,
    GlobalStats(&'a GlobalStats),
}

/// Rescores a metadata hit from its carried term weights. Hits without term
/// weights keep their reported score.
pub fn rescore(hit: &ScoredHit, stats: &GlobalStats) -> f64 {
    if hit.term_weights.is_empty() {
        return hit.score;
    }
    let mut score = 0.0;
    for tw in &hit.term_weights {
        let df = stats.df(&tw.term);
        if df == 0 {
            continue;
        }
        score += tw.weight * idf(stats.n, df);
    }
    score
}

/// Merges per-collection lists into one top-`k` list. A doc_id reported by
/// several collections is kept once, with its highest score.
pub fn merge_results(
    lists: &[Vec<ScoredHit>],
    k: usize,
    strategy: MergeStrategy<'_>,
) -> Vec<ScoredHit> {
    let mut best: BTreeMap<String, ScoredHit> = BTreeMap::new();
    for hit in lists.iter().flatten() {
        let mut hit = hit.clone();
        if let MergeStrategy::GlobalStats(stats) = strategy {
            hit.score = rescore(&hit, stats);
        }
        if hit.score <= 0.0 {
            continue;
        }
        match best.get(&hit.doc_id) {
            Some(existing) if existing.score >= hit.score => {}
            _ => {
                best.insert(hit.doc_id.clone(), hit);
            }
        }
    }
    let mut merged: Vec<ScoredHit> = best.into_values().collect();
    sort_hits(&mut merged);
    merged.truncate(k);
    merged
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TargetError {
    #[error("target unreachable")]
    Unreachable,
    #[error("target timed out")]
    TimedOut,
    #[error("target rejected the request: {0}")]
    Rejected(String),
}

/// Anything that can answer a search request on behalf of a collection.
pub trait SearchEndpoint {
    fn search(
        &mut self,
        target: &DomainName,
        request: &SearchRequest,
    ) -> Result<Vec<ScoredHit>, TargetError>;
}

/// In-process endpoint over a set of sub-network nodes.
impl SearchEndpoint for BTreeMap<DomainName, HarvestNode> {
    fn search(
        &mut self,
        target: &DomainName,
        request: &SearchRequest,
    ) -> Result<Vec<ScoredHit>, TargetError> {
        let node = self.get(target).ok_or(TargetError::Unreachable)?;
        answer_search(node, request)
    }
}

/// How a sub-network node answers a wire search request.
pub fn answer_search(
    node: &HarvestNode,
    request: &SearchRequest,
) -> Result<Vec<ScoredHit>, TargetError> {
    let query = Query::new(request.terms.clone(), request.k as usize)
        .map_err(|e| TargetError::Rejected(e.to_string()))?;
    Ok(node.search_with(&query, request.global_stats.as_ref()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedResult {
    pub hits: Vec<ScoredHit>,
    /// True when at least one target failed to answer.
    pub degraded: bool,
    pub failed: Vec<DomainName>,
    pub plan: FanoutPlan,
}

/// The search request a broker sends to each target.
pub fn target_request(
    registry: &CollectionRegistry,
    query: &Query,
    mode: MergeMode,
) -> SearchRequest {
    SearchRequest {
        terms: query.terms().to_vec(),
        k: query.k() as u32,
        global_stats: match mode {
            MergeMode::Raw => None,
            MergeMode::Global => Some(GlobalStats::from_registry(registry, query)),
        },
    }
}

/// Prepends the broker to every hit's path and merges.
pub fn finish_federated(
    root: &DomainName,
    lists: Vec<Vec<ScoredHit>>,
    k: usize,
    request: &SearchRequest,
) -> Vec<ScoredHit> {
    let lists: Vec<Vec<ScoredHit>> = lists
        .into_iter()
        .map(|list| {
            list.into_iter()
                .map(|mut h| {
                    h.path.insert(0, root.clone());
                    h
                })
                .collect()
        })
        .collect();
    let strategy = match &request.global_stats {
        Some(stats) => MergeStrategy::GlobalStats(stats),
        None => MergeStrategy::Raw,
    };
    merge_results(&lists, k, strategy)
}

/// Plans, fans out, and merges one query. Targets that fail are reported in
/// `failed` and set `degraded`; the remaining answers are still merged.
pub fn federated_search<E: SearchEndpoint + ?Sized>(
    root: &DomainName,
    registry: &CollectionRegistry,
    query: &Query,
    width: usize,
    mode: MergeMode,
    endpoint: &mut E,
) -> Result<FederatedResult, BrokerError> {
    let plan = select_collections(registry, query, width)?;
    let request = target_request(registry, query, mode);
    let mut lists = Vec::with_capacity(plan.targets.len());
    let mut failed = Vec::new();
    for target in &plan.targets {
        match endpoint.search(target, &request) {
            Ok(hits) => lists.push(hits),
            Err(_) => failed.push(target.clone()),
        }
    }
    let hits = finish_federated(root, lists, query.k(), &request);
    Ok(FederatedResult {
        hits,
        degraded: !failed.is_empty(),
        failed,
        plan,
    })
}

/// The root node. Its entire state is the collection registry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootBroker {
    me: DomainName,
    registry: CollectionRegistry,
}

impl RootBroker {
    pub fn new(me: DomainName) -> Self {
        RootBroker {
            me,
            registry: CollectionRegistry::new(),
        }
    }

    pub fn domain(&self) -> &DomainName {
        &self.me
    }

    pub fn registry(&self) -> &CollectionRegistry {
        &self.registry
    }

    pub fn register_collection(&mut self, desc: CollectionDescription) -> Result<(), BrokerError> {
        self.registry.register(desc)
    }

    pub fn federated_search<E: SearchEndpoint + ?Sized>(
        &self,
        query: &Query,
        width: usize,
        mode: MergeMode,
        endpoint: &mut E,
    ) -> Result<FederatedResult, BrokerError> {
        federated_search(&self.me, &self.registry, query, width, mode, endpoint)
    }
}

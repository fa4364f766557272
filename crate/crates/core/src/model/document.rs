use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::domain::{DomainName, Level, LevelTable};
use crate::text::tokenize;

/// Upper bound on a document body, in bytes.
pub const MAX_BODY_BYTES: usize = 1 << 22;
/// Upper bound on the number of results a query may request.
pub const MAX_K: usize = 1000;

/// Simulation time in whole seconds.
pub type SimSeconds = u64;
/// Simulation time in microseconds.
pub type SimTime = u64;
pub const MICROS_PER_SECOND: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DocumentError {
    #[error("document has an empty doc_id")]
    EmptyId,
    #[error("document {doc_id}: owner {owner} is not an organization domain")]
    OwnerNotOrg { doc_id: String, owner: DomainName },
    #[error("document {doc_id}: body is {len} bytes, limit is {MAX_BODY_BYTES}")]
    BodyTooLarge { doc_id: String, len: usize },
}

/// A full-text item owned by exactly one organization node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub doc_id: String,
    pub owner: DomainName,
    pub url: String,
    pub title: String,
    pub body: String,
    pub modified: SimSeconds,
}

impl Document {
    pub fn validate(&self, table: &LevelTable) -> Result<(), DocumentError> {
        if self.doc_id.is_empty() {
            return Err(DocumentError::EmptyId);
        }
        if table.level_of(&self.owner) != Level::Org {
            return Err(DocumentError::OwnerNotOrg {
                doc_id: self.doc_id.clone(),
                owner: self.owner.clone(),
            });
        }
        if self.body.len() > MAX_BODY_BYTES {
            return Err(DocumentError::BodyTooLarge {
                doc_id: self.doc_id.clone(),
                len: self.body.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("query has no terms")]
    NoTerms,
    #[error("query term {0:?} is not a normalized token")]
    UnnormalizedTerm(String),
    #[error("k must be between 1 and {MAX_K}, got {0}")]
    BadK(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    terms: Vec<String>,
    k: usize,
}

impl Query {
    pub fn new(terms: Vec<String>, k: usize) -> Result<Self, QueryError> {
        if !(1..=MAX_K).contains(&k) {
            return Err(QueryError::BadK(k));
        }
        if terms.is_empty() {
            return Err(QueryError::NoTerms);
        }
        for t in &terms {
            if tokenize(t) != [t.as_str()] {
                return Err(QueryError::UnnormalizedTerm(t.clone()));
            }
        }
        Ok(Query { terms, k })
    }

    /// Tokenizes free text into a query.
    pub fn from_text(text: &str, k: usize) -> Result<Self, QueryError> {
        Query::new(tokenize(text), k)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Query terms with repeats removed, in first-occurrence order. Scores sum
    /// over this sequence so every scorer adds terms in the same order.
    pub fn distinct_terms(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            if !out.contains(&t.as_str()) {
                out.push(t);
            }
        }
        out
    }
}

/// A weighted term, serialized as a two-element array `["term", weight]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "(String, f64)", into = "(String, f64)")]
pub struct TermWeight {
    pub term: String,
    pub weight: f64,
}

impl TermWeight {
    pub fn new(term: impl Into<String>, weight: f64) -> Self {
        TermWeight {
            term: term.into(),
            weight,
        }
    }
}

impl From<(String, f64)> for TermWeight {
    fn from((term, weight): (String, f64)) -> Self {
        TermWeight { term, weight }
    }
}

impl From<TermWeight> for (String, f64) {
    fn from(tw: TermWeight) -> Self {
        (tw.term, tw.weight)
    }
}

/// A ranked result.
///
/// `path` lists the nodes from the one that answered down to the owner.
/// `term_weights` carries the per-term weights that produced `score` for
/// metadata-level hits, which lets a broker rescore with federation-wide
/// statistics; it is empty for full-text hits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredHit {
    pub doc_id: String,
    pub score: f64,
    pub owner: DomainName,
    pub path: Vec<DomainName>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub term_weights: Vec<TermWeight>,
}

/// `ln(1 + n / df)`, the inverse document frequency used by every ranker.
pub fn idf(n: u64, df: u64) -> f64 {
    (1.0 + n as f64 / df as f64).ln()
}

/// Sorts hits by score descending, then doc_id ascending.
pub fn sort_hits(hits: &mut [ScoredHit]) {
    hits.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
}

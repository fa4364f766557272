//! Organization node: a centralized inverted index over the node's own
//! documents, plus the server half of incremental metadata harvesting.
//!
//! Every mutation appends to a change log keyed by a strictly increasing
//! sequence number. Only the newest entry per document is live; harvesters
//! page through live entries above their cursor and receive one compact
//! [`MetadataRecord`] per entry, or a tombstone for deletions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    idf, sort_hits, Document, DocumentError, DomainName, Query, ScoredHit, SimSeconds, SimTime,
    TermWeight, MICROS_PER_SECOND,
};
use crate::text::tokenize;
use crate::wire::canonical_json;

/// Hard cap on the canonical serialized size of a metadata record.
pub const METADATA_RECORD_CAP: usize = 1024;
/// Most key terms a metadata record carries.
pub const MAX_KEY_TERMS: usize = 32;
pub const DEFAULT_BATCH_SIZE: usize = 100;
pub const DEFAULT_DOC_CAP: usize = 1_000_000;

/// Key-term weights are rounded to this many decimal places.
const WEIGHT_SCALE: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IndexError {
    #[error("document owner {got} does not match index owner {expected}")]
    WrongOwner {
        expected: DomainName,
        got: DomainName,
    },
    #[error("index already holds its cap of {cap} documents")]
    CapacityExceeded { cap: usize },
    #[error("unknown document {0:?}")]
    UnknownDoc(String),
    #[error("metadata record for {doc_id:?} needs at least {min_len} bytes, cap is {METADATA_RECORD_CAP}")]
    UncompressibleRecord { doc_id: String, min_len: usize },
    #[error("resumption token is stale or was not issued by this index")]
    StaleToken,
    #[error(transparent)]
    InvalidDocument(#[from] DocumentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChangeOp {
    Upsert,
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeEntry {
    pub seq_no: u64,
    pub doc_id: String,
    pub op: ChangeOp,
    pub time: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocStats {
    /// Body length in tokens.
    pub length: u64,
    pub modified: SimSeconds,
    pub url: String,
    pub title: String,
    pub term_freqs: BTreeMap<String, u32>,
}

/// Compact surrogate for a document, harvested upward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetadataRecord {
    pub doc_id: String,
    pub owner: DomainName,
    pub url: String,
    pub title: String,
    /// Sorted by weight descending, ties by term ascending.
    pub key_terms: Vec<TermWeight>,
    pub modified: SimSeconds,
    pub seq_no: u64,
    pub deleted: bool,
}

impl MetadataRecord {
    /// Deletion marker; `modified` is the deletion time in seconds.
    pub fn tombstone(doc_id: &str, owner: &DomainName, time: SimTime, seq_no: u64) -> Self {
        MetadataRecord {
            doc_id: doc_id.to_string(),
            owner: owner.clone(),
            url: String::new(),
            title: String::new(),
            key_terms: Vec::new(),
            modified: time / MICROS_PER_SECOND,
            seq_no,
            deleted: true,
        }
    }

    /// Length of the canonical JSON encoding.
    pub fn encoded_len(&self) -> usize {
        canonical_json(self).len()
    }

    pub fn weight_of(&self, term: &str) -> Option<f64> {
        self.key_terms
            .iter()
            .find(|tw| tw.term == term)
            .map(|tw| tw.weight)
    }
}

/// One page of a harvest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarvestBatch {
    pub records: Vec<MetadataRecord>,
    pub next_token: Option<String>,
    pub high_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrgConfig {
    pub batch_size: usize,
    pub doc_cap: usize,
}

impl Default for OrgConfig {
    fn default() -> Self {
        OrgConfig {
            batch_size: DEFAULT_BATCH_SIZE,
            doc_cap: DEFAULT_DOC_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrgIndex {
    owner: DomainName,
    config: OrgConfig,
    postings: BTreeMap<String, BTreeMap<String, u32>>,
    doc_stats: BTreeMap<String, DocStats>,
    /// Ordered by `seq_no`; only ever extended at the end, except by
    /// [`OrgIndex::compact_log`].
    change_log: Vec<ChangeEntry>,
    /// doc_id -> seq_no of its live change-log entry.
    live: BTreeMap<String, u64>,
    last_seq: u64,
    log_epoch: u32,
    /// Highest tombstone seq_no dropped by compaction.
    compacted_through: u64,
}

impl OrgIndex {
    pub fn new(owner: DomainName) -> Self {
        OrgIndex::with_config(owner, OrgConfig::default())
    }

    pub fn with_config(owner: DomainName, config: OrgConfig) -> Self {
        assert!(config.batch_size > 0, "batch_size must be positive");
        OrgIndex {
            owner,
            config,
            postings: BTreeMap::new(),
            doc_stats: BTreeMap::new(),
            change_log: Vec::new(),
            live: BTreeMap::new(),
            last_seq: 0,
            log_epoch: 0,
            compacted_through: 0,
        }
    }

    pub fn owner(&self) -> &DomainName {
        &self.owner
    }

    pub fn config(&self) -> &OrgConfig {
        &self.config
    }

    pub fn doc_count(&self) -> usize {
        self.doc_stats.len()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.doc_stats.contains_key(doc_id)
    }

    pub fn doc_stats(&self, doc_id: &str) -> Option<&DocStats> {
        self.doc_stats.get(doc_id)
    }

    /// Document frequency of `term` in this index.
    pub fn df(&self, term: &str) -> u64 {
        self.postings.get(term).map_or(0, |p| p.len() as u64)
    }

    /// Postings for `term` as (doc_id, term frequency).
    pub fn postings(&self, term: &str) -> impl Iterator<Item = (&str, u32)> {
        self.postings
            .get(term)
            .into_iter()
            .flat_map(|p| p.iter().map(|(d, tf)| (d.as_str(), *tf)))
    }

    pub fn change_log(&self) -> &[ChangeEntry] {
        &self.change_log
    }

    /// Highest sequence number issued so far.
    pub fn max_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn upsert_document(&mut self, doc: &Document, now: SimTime) -> Result<u64, IndexError> {
        if doc.owner != self.owner {
            return Err(IndexError::WrongOwner {
                expected: self.owner.clone(),
                got: doc.owner.clone(),
            });
        }
        if doc.doc_id.is_empty() {
            return Err(DocumentError::EmptyId.into());
        }
        if doc.body.len() > crate::model::MAX_BODY_BYTES {
            return Err(DocumentError::BodyTooLarge {
                doc_id: doc.doc_id.clone(),
                len: doc.body.len(),
            }
            .into());
        }
        let replacing = self.doc_stats.contains_key(&doc.doc_id);
        if !replacing && self.doc_stats.len() >= self.config.doc_cap {
            return Err(IndexError::CapacityExceeded {
                cap: self.config.doc_cap,
            });
        }
        let floor = self.minimal_record(&doc.doc_id, &doc.url, doc.modified, u64::MAX);
        let min_len = floor.encoded_len();
        if min_len > METADATA_RECORD_CAP {
            return Err(IndexError::UncompressibleRecord {
                doc_id: doc.doc_id.clone(),
                min_len,
            });
        }

        if replacing {
            self.purge_postings(&doc.doc_id);
        }
        let tokens = tokenize(&doc.body);
        let mut term_freqs: BTreeMap<String, u32> = BTreeMap::new();
        for t in &tokens {
            *term_freqs.entry(t.clone()).or_default() += 1;
        }
        for (term, tf) in &term_freqs {
            self.postings
                .entry(term.clone())
                .or_default()
                .insert(doc.doc_id.clone(), *tf);
        }
        self.doc_stats.insert(
            doc.doc_id.clone(),
            DocStats {
                length: tokens.len() as u64,
                modified: doc.modified,
                url: doc.url.clone(),
                title: doc.title.clone(),
                term_freqs,
            },
        );
        Ok(self.log_change(&doc.doc_id, ChangeOp::Upsert, now))
    }

    pub fn delete_document(&mut self, doc_id: &str, now: SimTime) -> Result<u64, IndexError> {
        if !self.doc_stats.contains_key(doc_id) {
            return Err(IndexError::UnknownDoc(doc_id.to_string()));
        }
        self.purge_postings(doc_id);
        self.doc_stats.remove(doc_id);
        Ok(self.log_change(doc_id, ChangeOp::Delete, now))
    }

    fn purge_postings(&mut self, doc_id: &str) {
        let Some(stats) = self.doc_stats.get(doc_id) else {
            return;
        };
        for term in stats.term_freqs.keys() {
            if let Some(list) = self.postings.get_mut(term) {
                list.remove(doc_id);
                if list.is_empty() {
                    self.postings.remove(term);
                }
            }
        }
    }

    fn log_change(&mut self, doc_id: &str, op: ChangeOp, now: SimTime) -> u64 {
        self.last_seq += 1;
        let seq_no = self.last_seq;
        self.change_log.push(ChangeEntry {
            seq_no,
            doc_id: doc_id.to_string(),
            op,
            time: now,
        });
        self.live.insert(doc_id.to_string(), seq_no);
        seq_no
    }

    /// Top-k documents by `sum tf(t,d) * ln(1 + N/df(t))` over distinct query
    /// terms, ties by doc_id.
    pub fn search_local(&self, query: &Query) -> Vec<ScoredHit> {
        let n = self.doc_count() as u64;
        let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
        for term in query.distinct_terms() {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let w = idf(n, list.len() as u64);
            for (doc_id, tf) in list {
                *scores.entry(doc_id.as_str()).or_insert(0.0) += f64::from(*tf) * w;
            }
        }
        let mut hits: Vec<ScoredHit> = scores
            .into_iter()
            .filter(|(_, s)| *s > 0.0)
            .map(|(doc_id, score)| ScoredHit {
                doc_id: doc_id.to_string(),
                score,
                owner: self.owner.clone(),
                path: vec![self.owner.clone()],
                term_weights: Vec::new(),
            })
            .collect();
        sort_hits(&mut hits);
        hits.truncate(query.k());
        hits
    }

    /// Builds the metadata record for `doc` as if it were indexed here: key
    /// terms are its highest TF-IDF terms under this index's document
    /// frequencies.
    pub fn extract_metadata(
        &self,
        doc: &Document,
        seq_no: u64,
    ) -> Result<MetadataRecord, IndexError> {
        let mut term_freqs: BTreeMap<String, u32> = BTreeMap::new();
        for t in tokenize(&doc.body) {
            *term_freqs.entry(t).or_default() += 1;
        }
        let indexed = self.doc_stats.get(&doc.doc_id);
        let extra_doc = u64::from(indexed.is_none());
        let weights = term_freqs
            .iter()
            .map(|(term, tf)| {
                let mut df = self.df(term);
                if indexed.is_none_or(|s| !s.term_freqs.contains_key(term)) {
                    df += 1;
                }
                (term.as_str(), *tf, df)
            })
            .collect::<Vec<_>>();
        self.build_record(
            &doc.doc_id,
            &doc.url,
            &doc.title,
            doc.modified,
            seq_no,
            self.doc_count() as u64 + extra_doc,
            weights,
        )
    }

    fn record_for_indexed(&self, doc_id: &str, seq_no: u64) -> Result<MetadataRecord, IndexError> {
        let stats = self
            .doc_stats
            .get(doc_id)
            .ok_or_else(|| IndexError::UnknownDoc(doc_id.to_string()))?;
        let weights = stats
            .term_freqs
            .iter()
            .map(|(term, tf)| (term.as_str(), *tf, self.df(term)))
            .collect();
        self.build_record(
            doc_id,
            &stats.url,
            &stats.title,
            stats.modified,
            seq_no,
            self.doc_count() as u64,
            weights,
        )
    }

    fn minimal_record(
        &self,
        doc_id: &str,
        url: &str,
        modified: SimSeconds,
        seq_no: u64,
    ) -> MetadataRecord {
        MetadataRecord {
            doc_id: doc_id.to_string(),
            owner: self.owner.clone(),
            url: url.to_string(),
            title: String::new(),
            key_terms: Vec::new(),
            modified,
            seq_no,
            deleted: false,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn build_record(
        &self,
        doc_id: &str,
        url: &str,
        title: &str,
        modified: SimSeconds,
        seq_no: u64,
        n: u64,
        weights: Vec<(&str, u32, u64)>,
    ) -> Result<MetadataRecord, IndexError> {
        let mut key_terms: Vec<TermWeight> = weights
            .into_iter()
            .map(|(term, tf, df)| {
                let w = f64::from(tf) * idf(n, df);
                TermWeight::new(term, (w * WEIGHT_SCALE).round() / WEIGHT_SCALE)
            })
            .collect();
        key_terms.sort_by(|a, b| {
            b.weight
                .total_cmp(&a.weight)
                .then_with(|| a.term.cmp(&b.term))
        });
        key_terms.truncate(MAX_KEY_TERMS);

        let mut record = self.minimal_record(doc_id, url, modified, seq_no);
        record.title = title.to_string();
        record.key_terms = key_terms;
        fit_to_cap(record)
    }

    /// Live change-log entries above `from_seq` (or above the cursor in
    /// `token`, when given), one page at a time.
    pub fn list_records(
        &self,
        from_seq: u64,
        token: Option<&str>,
    ) -> Result<HarvestBatch, IndexError> {
        let after = match token {
            Some(t) => self.parse_token(t)?,
            None if from_seq > 0 && from_seq < self.compacted_through => {
                return Err(IndexError::StaleToken)
            }
            None => from_seq,
        };
        let start = self.change_log.partition_point(|e| e.seq_no <= after);
        let mut live_entries = self.change_log[start..]
            .iter()
            .filter(|e| self.live.get(&e.doc_id) == Some(&e.seq_no));

        let mut records = Vec::new();
        for entry in live_entries.by_ref().take(self.config.batch_size) {
            let record = match entry.op {
                ChangeOp::Upsert => self.record_for_indexed(&entry.doc_id, entry.seq_no)?,
                ChangeOp::Delete => {
                    MetadataRecord::tombstone(&entry.doc_id, &self.owner, entry.time, entry.seq_no)
                }
            };
            records.push(record);
        }
        let high_seq = records.last().map_or(after, |r| r.seq_no);
        let next_token = live_entries
            .next()
            .map(|_| format!("{}/{}/{}", self.owner, self.log_epoch, high_seq));
        Ok(HarvestBatch {
            records,
            next_token,
            high_seq,
        })
    }

    fn parse_token(&self, token: &str) -> Result<u64, IndexError> {
        let mut parts = token.rsplitn(3, '/');
        let (Some(seq), Some(epoch), Some(owner)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(IndexError::StaleToken);
        };
        if owner != self.owner.to_string() || epoch != self.log_epoch.to_string() {
            return Err(IndexError::StaleToken);
        }
        seq.parse().map_err(|_| IndexError::StaleToken)
    }

    /// Drops superseded entries and tombstones from the change log. Tokens
    /// issued before this call, and cursors below the highest dropped
    /// tombstone, become stale; a harvester must restart from zero.
    pub fn compact_log(&mut self) {
        let live = &self.live;
        let mut dropped_tombstone = self.compacted_through;
        self.change_log.retain(|e| {
            let keep = live.get(&e.doc_id) == Some(&e.seq_no) && e.op == ChangeOp::Upsert;
            if !keep && e.op == ChangeOp::Delete {
                dropped_tombstone = dropped_tombstone.max(e.seq_no);
            }
            keep
        });
        let doc_stats = &self.doc_stats;
        self.live.retain(|doc_id, _| doc_stats.contains_key(doc_id));
        self.compacted_through = dropped_tombstone;
        self.log_epoch += 1;
    }
}

/// Drops lowest-weight key terms, then truncates the title, until the record
/// fits under [`METADATA_RECORD_CAP`].
fn fit_to_cap(mut record: MetadataRecord) -> Result<MetadataRecord, IndexError> {
    loop {
        let len = record.encoded_len();
        if len <= METADATA_RECORD_CAP {
            return Ok(record);
        }
        if record.key_terms.pop().is_some() {
            continue;
        }
        if record.title.is_empty() {
            return Err(IndexError::UncompressibleRecord {
                doc_id: record.doc_id,
                min_len: len,
            });
        }
        // Escaping never shrinks a character, so cutting `excess` raw bytes
        // removes at least `excess` encoded bytes.
        let excess = len - METADATA_RECORD_CAP;
        let mut cut = record.title.len().saturating_sub(excess);
        while !record.title.is_char_boundary(cut) {
            cut -= 1;
        }
        record.title.truncate(cut);
    }
}

//! Brute-force ground truth: one flat list of everything in the federation,
//! scored by linear scan. No inverted index and no shared ranking code, so it
//! can be checked by eye and used to validate the federated path.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{Document, Query, ScoredHit, TermWeight};
use crate::org::MetadataRecord;
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleMode {
    FullText,
    Metadata,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GlobalOracle {
    FullText(Vec<Document>),
    Metadata(Vec<MetadataRecord>),
}

impl GlobalOracle {
    pub fn full_text(docs: impl IntoIterator<Item = Document>) -> Self {
        GlobalOracle::FullText(docs.into_iter().collect())
    }

    /// Tombstones are dropped; only live records are searchable.
    pub fn metadata(records: impl IntoIterator<Item = MetadataRecord>) -> Self {
        GlobalOracle::Metadata(records.into_iter().filter(|r| !r.deleted).collect())
    }

    pub fn mode(&self) -> OracleMode {
        match self {
            GlobalOracle::FullText(_) => OracleMode::FullText,
            GlobalOracle::Metadata(_) => OracleMode::Metadata,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            GlobalOracle::FullText(d) => d.len(),
            GlobalOracle::Metadata(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn unique_terms(query: &Query) -> Vec<String> {
    let mut seen = Vec::new();
    for t in query.terms() {
        if !seen.contains(t) {
            seen.push(t.clone());
        }
    }
    seen
}

pub fn oracle_search(oracle: &GlobalOracle, query: &Query) -> Vec<ScoredHit> {
    let terms = unique_terms(query);
    let mut hits = match oracle {
        GlobalOracle::FullText(docs) => full_text_scan(docs, &terms),
        GlobalOracle::Metadata(records) => metadata_scan(records, &terms),
    };
    hits.retain(|h| h.score > 0.0);
    hits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite scores")
            .then(a.doc_id.cmp(&b.doc_id))
    });
    hits.truncate(query.k());
    hits
}

fn full_text_scan(docs: &[Document], terms: &[String]) -> Vec<ScoredHit> {
    let tokenized: Vec<Vec<String>> = docs.iter().map(|d| tokenize(&d.body)).collect();
    let n = docs.len() as f64;
    let df: Vec<f64> = terms
        .iter()
        .map(|t| tokenized.iter().filter(|toks| toks.contains(t)).count() as f64)
        .collect();
    docs.iter()
        .zip(&tokenized)
        .map(|(doc, toks)| {
            let mut score = 0.0;
            for (t, df) in terms.iter().zip(&df) {
                if *df == 0.0 {
                    continue;
                }
                let tf = toks.iter().filter(|x| *x == t).count() as f64;
                score += tf * (1.0 + n / df).ln();
            }
            ScoredHit {
                doc_id: doc.doc_id.clone(),
                score,
                owner: doc.owner.clone(),
                path: vec![doc.owner.clone()],
                term_weights: Vec::new(),
            }
        })
        .collect()
}

fn metadata_scan(records: &[MetadataRecord], terms: &[String]) -> Vec<ScoredHit> {
    let weight = |r: &MetadataRecord, t: &str| {
        r.key_terms
            .iter()
            .find(|tw| tw.term == t)
            .map(|tw| tw.weight)
    };
    let n = records.len() as f64;
    let df: Vec<f64> = terms
        .iter()
        .map(|t| records.iter().filter(|r| weight(r, t).is_some()).count() as f64)
        .collect();
    records
        .iter()
        .map(|r| {
            let mut score = 0.0;
            let mut matched = Vec::new();
            for (t, df) in terms.iter().zip(&df) {
                if let Some(w) = weight(r, t) {
                    score += w * (1.0 + n / df).ln();
                    matched.push(TermWeight::new(t.clone(), w));
                }
            }
            ScoredHit {
                doc_id: r.doc_id.clone(),
                score,
                owner: r.owner.clone(),
                path: vec![r.owner.clone()],
                term_weights: matched,
            }
        })
        .collect()
}

/// Agreement between two ranked lists, judged on their first `k` ids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopkComparison {
    /// The id sequences agree up to `k`.
    pub exact_match: bool,
    /// Shared ids over `min(k, |a|, |b|)`; 1.0 when both lists are empty.
    pub overlap: f64,
}

pub fn compare_topk(a: &[ScoredHit], b: &[ScoredHit], k: usize) -> TopkComparison {
    let a: Vec<&str> = a.iter().take(k).map(|h| h.doc_id.as_str()).collect();
    let b: Vec<&str> = b.iter().take(k).map(|h| h.doc_id.as_str()).collect();
    let exact_match = a == b;
    let denom = k.min(a.len()).min(b.len());
    let overlap = if denom == 0 {
        if a.is_empty() && b.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        let sa: BTreeSet<&str> = a.iter().copied().collect();
        let shared = b.iter().filter(|id| sa.contains(*id)).count();
        shared as f64 / denom as f64
    };
    TopkComparison {
        exact_match,
        overlap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DomainName;
    use proptest::prelude::*;

    fn owner() -> DomainName {
        "a.edu.cn".parse().unwrap()
    }

    fn doc(id: &str, body: &str) -> Document {
        Document {
            doc_id: id.into(),
            owner: owner(),
            url: String::new(),
            title: String::new(),
            body: body.into(),
            modified: 0,
        }
    }

    fn hits(ids: &[&str]) -> Vec<ScoredHit> {
        ids.iter()
            .map(|id| ScoredHit {
                doc_id: id.to_string(),
                score: 1.0,
                owner: owner(),
                path: vec![owner()],
                term_weights: Vec::new(),
            })
            .collect()
    }

    #[test]
    fn fruit_corpus_by_hand() {
        let o = GlobalOracle::full_text([
            doc("d1", "apple banana"),
            doc("d2", "apple apple"),
            doc("d3", "cherry"),
        ]);
        let res = oracle_search(&o, &Query::from_text("apple", 10).unwrap());
        let ids: Vec<_> = res.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, ["d2", "d1"]);
        // N = 3, df(apple) = 2
        assert_eq!(res[0].score, 2.0 * 2.5f64.ln());
        assert_eq!(res[1].score, 2.5f64.ln());
    }

    #[test]
    fn empty_oracle() {
        let q = Query::from_text("x", 3).unwrap();
        assert!(oracle_search(&GlobalOracle::full_text([]), &q).is_empty());
        assert!(oracle_search(&GlobalOracle::metadata([]), &q).is_empty());
    }

    #[test]
    fn metadata_mode_skips_tombstones() {
        let mut live = MetadataRecord::tombstone("live", &owner(), 0, 1);
        live.deleted = false;
        live.key_terms = vec![TermWeight::new("x", 1.0)];
        let mut dead = MetadataRecord::tombstone("dead", &owner(), 0, 2);
        dead.key_terms = vec![TermWeight::new("x", 5.0)];
        let o = GlobalOracle::metadata([live, dead]);
        assert_eq!(o.len(), 1);
        let res = oracle_search(&o, &Query::from_text("x", 3).unwrap());
        assert_eq!(res.len(), 1);
        assert_eq!(res[0].doc_id, "live");
        assert_eq!(res[0].score, 2f64.ln());
    }

    #[test]
    fn compare_cases() {
        let a = hits(&["a", "b", "c"]);
        assert_eq!(
            compare_topk(&a, &a, 3),
            TopkComparison {
                exact_match: true,
                overlap: 1.0
            }
        );
        assert_eq!(
            compare_topk(&a, &hits(&["x", "y", "z"]), 3),
            TopkComparison {
                exact_match: false,
                overlap: 0.0
            }
        );
        assert_eq!(
            compare_topk(&a, &hits(&["c", "a", "b"]), 3),
            TopkComparison {
                exact_match: false,
                overlap: 1.0
            }
        );
        assert_eq!(compare_topk(&a, &hits(&["a"]), 3).overlap, 1.0);
        assert!(!compare_topk(&a, &hits(&["a"]), 3).exact_match);
        assert!(compare_topk(&a, &hits(&["a", "b", "z"]), 2).exact_match);
        assert_eq!(compare_topk(&[], &[], 5).overlap, 1.0);
        assert_eq!(compare_topk(&a, &[], 5).overlap, 0.0);
    }

    proptest! {
        #[test]
        fn overlap_is_symmetric(
            a in prop::collection::vec("[a-f]", 0..8),
            b in prop::collection::vec("[a-f]", 0..8),
            k in 1usize..10,
        ) {
            let dedup = |v: Vec<String>| {
                let mut seen = Vec::new();
                for x in v { if !seen.contains(&x) { seen.push(x); } }
                seen
            };
            let a = dedup(a);
            let b = dedup(b);
            let ha = hits(&a.iter().map(String::as_str).collect::<Vec<_>>());
            let hb = hits(&b.iter().map(String::as_str).collect::<Vec<_>>());
            let ab = compare_topk(&ha, &hb, k);
            let ba = compare_topk(&hb, &ha, k);
            prop_assert_eq!(ab.overlap, ba.overlap);
            prop_assert_eq!(ab.exact_match, ba.exact_match);
            prop_assert!((0.0..=1.0).contains(&ab.overlap));
        }
    }
}

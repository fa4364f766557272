//! Seeded synthetic corpora and the JSON Lines corpus format.
//!
//! Words are drawn from a Zipf distribution over a fixed vocabulary. Each
//! organization sees the vocabulary in its own rotated rank order, so
//! collections differ in what is common. On top of that a generator can plant
//! a token unique to every document, terms confined to one organization, and
//! a few very large documents.

use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Document, DomainName, SimSeconds};
use crate::wire::canonical_json;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid corpus configuration: {0}")]
    InvalidConfig(String),
    #[error("reading corpus: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub docs_per_org: usize,
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Plant [`unique_token`] in every document this many times (0 = off).
    pub unique_token_repeats: usize,
    /// Terms that occur only inside one organization.
    pub rare_terms_per_org: usize,
    /// Documents of the organization that carry each rare term.
    pub rare_term_docs: usize,
    /// Every n-th document (0 = none) is grown to a random size up to
    /// `large_doc_max_bytes`.
    pub large_doc_every: usize,
    pub large_doc_max_bytes: usize,
    /// `modified` timestamp given to every document.
    pub modified: SimSeconds,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 0,
            docs_per_org: 100,
            vocab_size: 5_000,
            zipf_exponent: 1.1,
            min_tokens: 30,
            max_tokens: 200,
            unique_token_repeats: 0,
            rare_terms_per_org: 0,
            rare_term_docs: 3,
            large_doc_every: 0,
            large_doc_max_bytes: 1 << 20,
            modified: 0,
        }
    }
}

pub fn vocab_word(rank: usize) -> String {
    format!("w{rank}")
}

/// The token planted in document number `index` of a corpus.
pub fn unique_token(index: usize) -> String {
    format!("uq{index}")
}

/// Rare term `j` of organization number `org`.
pub fn rare_term(org: usize, j: usize) -> String {
    format!("rare{org}x{j}")
}

/// A generated corpus plus the planted terms, for building queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub docs: Vec<Document>,
    /// `(term, owner)` for every planted rare term.
    pub rare_terms: Vec<(String, DomainName)>,
}

impl CorpusConfig {
    fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidConfig(m.into()));
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive");
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf_exponent must be finite and non-negative");
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad("need 0 < min_tokens <= max_tokens");
        }
        if self.large_doc_max_bytes > crate::model::MAX_BODY_BYTES {
            return bad("large documents may not exceed the body cap");
        }
        Ok(())
    }
}

pub fn generate_corpus(config: &CorpusConfig, orgs: &[DomainName]) -> Result<Corpus, CorpusError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let zipf = Zipf::new(config.vocab_size as f64, config.zipf_exponent)
        .map_err(|e| CorpusError::InvalidConfig(e.to_string()))?;
    let mut docs = Vec::with_capacity(orgs.len() * config.docs_per_org);
    let mut rare_terms = Vec::new();

    for (oi, owner) in orgs.iter().enumerate() {
        let rotation = oi * config.vocab_size / orgs.len().max(1);
        let word = |rank: usize| vocab_word((rank - 1 + rotation) % config.vocab_size);
        let first = docs.len();
        for i in 0..config.docs_per_org {
            let index = docs.len();
            let len = rng.random_range(config.min_tokens..=config.max_tokens);
            let mut words: Vec<String> = (0..len)
                .map(|_| word(zipf.sample(&mut rng) as usize))
                .collect();
            for _ in 0..config.unique_token_repeats {
                words.push(unique_token(index));
            }
            let title = words.iter().take(4).cloned().collect::<Vec<_>>().join(" ");
            let mut body = words.join(" ");
            if config.large_doc_every > 0 && (i + 1) % config.large_doc_every == 0 {
                let target =
                    rng.random_range(body.len()..=config.large_doc_max_bytes.max(body.len()));
                loop {
                    let w = word(zipf.sample(&mut rng) as usize);
                    if body.len() + 1 + w.len() > target {
                        break;
                    }
                    body.push(' ');
                    body.push_str(&w);
                }
            }
            docs.push(Document {
                doc_id: format!("{owner}/{i:05}"),
                owner: owner.clone(),
                url: format!("http://{owner}/doc/{i}"),
                title,
                body,
                modified: config.modified,
            });
        }
        let own = first..docs.len();
        if own.is_empty() {
            continue;
        }
        for j in 0..config.rare_terms_per_org {
            let term = rare_term(oi, j);
            for _ in 0..config.rare_term_docs {
                let doc = &mut docs[rng.random_range(own.clone())];
                for _ in 0..2 {
                    doc.body.push(' ');
                    doc.body.push_str(&term);
                }
            }
            rare_terms.push((term, owner.clone()));
        }
    }
    Ok(Corpus { docs, rare_terms })
}

/// Reads a JSON Lines corpus. Blank lines are skipped.
pub fn read_corpus<R: BufRead>(input: R) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus<W: Write>(docs: &[Document], mut out: W) -> io::Result<()> {
    for d in docs {
        out.write_all(&canonical_json(d))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

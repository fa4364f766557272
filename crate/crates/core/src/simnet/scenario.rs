use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::broker::MergeMode;
use crate::model::{Document, DomainName, SimSeconds};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: stimulus at t={t} precedes the previous one at t={prev}")]
    OutOfOrder {
        line: usize,
        t: SimSeconds,
        prev: SimSeconds,
    },
    #[error("reading scenario: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeleteStimulus {
    pub doc_id: String,
    pub owner: DomainName,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryStimulus {
    pub text: String,
    pub k: usize,
    /// Collections to fan out to; all of them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<MergeMode>,
    /// Node the query is submitted to; the first root when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry: Option<DomainName>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StimulusOp {
    Upsert(Document),
    Delete(DeleteStimulus),
    Query(QueryStimulus),
}

/// One external input, applied at `t` sim-seconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stimulus {
    pub t: SimSeconds,
    pub op: StimulusOp,
}

impl Stimulus {
    pub fn upsert(t: SimSeconds, doc: Document) -> Self {
        Stimulus {
            t,
            op: StimulusOp::Upsert(doc),
        }
    }

    pub fn delete(t: SimSeconds, doc_id: impl Into<String>, owner: DomainName) -> Self {
        Stimulus {
            t,
            op: StimulusOp::Delete(DeleteStimulus {
                doc_id: doc_id.into(),
                owner,
            }),
        }
    }

    pub fn query(t: SimSeconds, text: impl Into<String>, k: usize) -> Self {
        Stimulus {
            t,
            op: StimulusOp::Query(QueryStimulus {
                text: text.into(),
                k,
                width: None,
                mode: None,
                entry: None,
            }),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStimulus {
    t: SimSeconds,
    op: String,
    payload: Value,
}

impl Serialize for Stimulus {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::Error;
        let (op, payload) = match &self.op {
            StimulusOp::Upsert(d) => ("upsert", serde_json::to_value(d)),
            StimulusOp::Delete(d) => ("delete", serde_json::to_value(d)),
            StimulusOp::Query(q) => ("query", serde_json::to_value(q)),
        };
        RawStimulus {
            t: self.t,
            op: op.into(),
            payload: payload.map_err(S::Error::custom)?,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Stimulus {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = RawStimulus::deserialize(d)?;
        let op = match raw.op.as_str() {
            "upsert" => {
                StimulusOp::Upsert(serde_json::from_value(raw.payload).map_err(D::Error::custom)?)
            }
            "delete" => {
                StimulusOp::Delete(serde_json::from_value(raw.payload).map_err(D::Error::custom)?)
            }
            "query" => {
                StimulusOp::Query(serde_json::from_value(raw.payload).map_err(D::Error::custom)?)
            }
            other => return Err(D::Error::custom(format!("unknown op {other:?}"))),
        };
        Ok(Stimulus { t: raw.t, op })
    }
}

/// Reads JSON Lines stimuli. Blank lines are skipped; times must not go
/// backwards.
pub fn read_scenario<R: BufRead>(input: R) -> Result<Vec<Stimulus>, ScenarioError> {
    let mut out: Vec<Stimulus> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let s: Stimulus = serde_json::from_str(&line).map_err(|e| ScenarioError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if let Some(prev) = out.last() {
            if s.t < prev.t {
                return Err(ScenarioError::OutOfOrder {
                    line: lineno,
                    t: s.t,
                    prev: prev.t,
                });
            }
        }
        out.push(s);
    }
    Ok(out)
}

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{DomainName, SimTime};
use crate::wire::{canonical_json, MsgType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Send,
    Deliver,
    Dropped,
    Timeout,
    /// A response arrived after its request was abandoned.
    LateReply,
    Upsert,
    Delete,
    HarvestStart,
    /// The previous harvest of this child was still running at the tick.
    HarvestSkip,
    HarvestDone,
    HarvestFail,
    Push,
    Register,
    QueryIssue,
    QueryDone,
    NodeError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Microseconds.
    pub t: SimTime,
    pub kind: EventKind,
    pub node: DomainName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<DomainName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub msg_type: Option<MsgType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes: Option<u64>,
    /// Bytes of harvested metadata records inside a harvest response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_bytes: Option<u64>,
    /// SHA-256 of the encoded envelope, hex.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl TraceEvent {
    pub fn new(t: SimTime, kind: EventKind, node: DomainName) -> Self {
        TraceEvent {
            t,
            kind,
            node,
            peer: None,
            msg_type: None,
            request_id: None,
            bytes: None,
            record_bytes: None,
            digest: None,
            detail: None,
        }
    }

    pub fn peer(mut self, peer: DomainName) -> Self {
        self.peer = Some(peer);
        self
    }

    pub fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

/// Everything that happened in one run, in processing order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventTrace {
    events: Vec<TraceEvent>,
}

impl EventTrace {
    pub fn new() -> Self {
        EventTrace::default()
    }

    pub fn push(&mut self, event: TraceEvent) {
        debug_assert!(self.events.last().is_none_or(|e| e.t <= event.t));
        self.events.push(event);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// SHA-256 over the canonical JSON line of every event, hex.
    pub fn trace_hash(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.events {
            h.update(canonical_json(e));
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// JSON Lines: one event per line, then `{"trace_hash":...}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.events {
            out.write_all(&canonical_json(e))?;
            out.write_all(b"\n")?;
        }
        let tail = serde_json::json!({ "trace_hash": self.trace_hash() });
        out.write_all(&canonical_json(&tail))?;
        out.write_all(b"\n")
    }
}

pub(crate) fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trace_hash_is_sha_of_nothing() {
        assert_eq!(
            EventTrace::new().trace_hash(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn export_ends_with_hash_line() {
        let mut t = EventTrace::new();
        t.push(TraceEvent::new(5, EventKind::Upsert, "a.edu.cn".parse().unwrap()).detail("d1"));
        let mut out = Vec::new();
        t.write_jsonl(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(
            lines[0],
            r#"{"detail":"d1","kind":"upsert","node":"a.edu.cn","t":5}"#
        );
        assert_eq!(
            lines[1],
            format!(r#"{{"trace_hash":"{}"}}"#, t.trace_hash())
        );
    }
}

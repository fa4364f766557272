//! The standard node-to-node interface: newline-terminated canonical JSON
//! envelopes.
//!
//! Canonical form: UTF-8 JSON with object keys in lexicographic order, no
//! insignificant whitespace, and exactly one trailing `\n`. Decoding is strict;
//! a message is accepted only if re-encoding it reproduces the input bytes.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::broker::GlobalStats;
use crate::harvest::CollectionDescription;
use crate::model::{DomainName, ScoredHit};
use crate::org::HarvestBatch;

pub const WIRE_VERSION: u64 = 1;
/// Largest accepted canonical payload, in bytes.
pub const MAX_PAYLOAD_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("payload is {len} bytes, limit is {MAX_PAYLOAD_BYTES}")]
    PayloadTooLarge { len: usize },
    #[error("malformed message at byte {position}: {reason}")]
    MalformedMessage { position: usize, reason: String },
    #[error("unknown msg_type {0:?}")]
    UnknownType(String),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u64),
    #[error("message is valid JSON but not in canonical form")]
    NonCanonical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MsgType {
    SearchRequest,
    SearchResponse,
    HarvestRequest,
    HarvestResponse,
    RegisterDescription,
    Ack,
    Error,
}

impl MsgType {
    pub const ALL: [MsgType; 7] = [
        MsgType::SearchRequest,
        MsgType::SearchResponse,
        MsgType::HarvestRequest,
        MsgType::HarvestResponse,
        MsgType::RegisterDescription,
        MsgType::Ack,
        MsgType::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MsgType::SearchRequest => "SearchRequest",
            MsgType::SearchResponse => "SearchResponse",
            MsgType::HarvestRequest => "HarvestRequest",
            MsgType::HarvestResponse => "HarvestResponse",
            MsgType::RegisterDescription => "RegisterDescription",
            MsgType::Ack => "Ack",
            MsgType::Error => "Error",
        }
    }

    pub fn from_name(name: &str) -> Option<MsgType> {
        MsgType::ALL.into_iter().find(|t| t.as_str() == name)
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    pub terms: Vec<String>,
    pub k: u32,
    /// Federation-wide statistics the answering node should score with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_stats: Option<GlobalStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchResponse {
    pub hits: Vec<ScoredHit>,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarvestRequest {
    pub from_seq: u64,
    pub token: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ack {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    SearchRequest(SearchRequest),
    SearchResponse(SearchResponse),
    HarvestRequest(HarvestRequest),
    HarvestResponse(HarvestBatch),
    RegisterDescription(CollectionDescription),
    Ack(Ack),
    Error(ErrorBody),
}

impl Payload {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Payload::SearchRequest(_) => MsgType::SearchRequest,
            Payload::SearchResponse(_) => MsgType::SearchResponse,
            Payload::HarvestRequest(_) => MsgType::HarvestRequest,
            Payload::HarvestResponse(_) => MsgType::HarvestResponse,
            Payload::RegisterDescription(_) => MsgType::RegisterDescription,
            Payload::Ack(_) => MsgType::Ack,
            Payload::Error(_) => MsgType::Error,
        }
    }

    fn to_value(&self) -> Value {
        let v = match self {
            Payload::SearchRequest(p) => serde_json::to_value(p),
            Payload::SearchResponse(p) => serde_json::to_value(p),
            Payload::HarvestRequest(p) => serde_json::to_value(p),
            Payload::HarvestResponse(p) => serde_json::to_value(p),
            Payload::RegisterDescription(p) => serde_json::to_value(p),
            Payload::Ack(p) => serde_json::to_value(p),
            Payload::Error(p) => serde_json::to_value(p),
        };
        v.expect("payload types serialize to JSON")
    }

    fn from_value(msg_type: MsgType, value: Value) -> serde_json::Result<Payload> {
        Ok(match msg_type {
            MsgType::SearchRequest => Payload::SearchRequest(serde_json::from_value(value)?),
            MsgType::SearchResponse => Payload::SearchResponse(serde_json::from_value(value)?),
            MsgType::HarvestRequest => Payload::HarvestRequest(serde_json::from_value(value)?),
            MsgType::HarvestResponse => Payload::HarvestResponse(serde_json::from_value(value)?),
            MsgType::RegisterDescription => {
                Payload::RegisterDescription(serde_json::from_value(value)?)
            }
            MsgType::Ack => Payload::Ack(serde_json::from_value(value)?),
            MsgType::Error => Payload::Error(serde_json::from_value(value)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub sender: DomainName,
    pub recipient: DomainName,
    pub request_id: u64,
    pub payload: Payload,
}

impl Envelope {
    pub fn new(
        sender: DomainName,
        recipient: DomainName,
        request_id: u64,
        payload: Payload,
    ) -> Self {
        Envelope {
            sender,
            recipient,
            request_id,
            payload,
        }
    }

    pub fn msg_type(&self) -> MsgType {
        self.payload.msg_type()
    }

    /// A response travelling back to the sender, echoing the request id.
    pub fn reply(&self, payload: Payload) -> Envelope {
        Envelope {
            sender: self.recipient.clone(),
            recipient: self.sender.clone(),
            request_id: self.request_id,
            payload,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnvelope {
    v: u64,
    msg_type: String,
    sender: DomainName,
    recipient: DomainName,
    request_id: u64,
    payload: Value,
}

/// Canonical JSON bytes of any serializable value (no trailing newline).
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let value = serde_json::to_value(value).expect("value serializes to JSON");
    let mut out = Vec::new();
    write_canonical(&value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            out.push(b'{');
            for (i, (k, v)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                serde_json::to_writer(&mut *out, k).expect("string serializes");
                out.push(b':');
                write_canonical(v, out);
            }
            out.push(b'}');
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_canonical(v, out);
            }
            out.push(b']');
        }
        scalar => serde_json::to_writer(&mut *out, scalar).expect("scalar serializes"),
    }
}

pub fn encode(envelope: &Envelope) -> Result<Vec<u8>, WireError> {
    let payload = envelope.payload.to_value();
    let mut payload_bytes = Vec::new();
    write_canonical(&payload, &mut payload_bytes);
    if payload_bytes.len() > MAX_PAYLOAD_BYTES {
        return Err(WireError::PayloadTooLarge {
            len: payload_bytes.len(),
        });
    }
    let mut map = serde_json::Map::new();
    map.insert("v".into(), WIRE_VERSION.into());
    map.insert("msg_type".into(), envelope.msg_type().as_str().into());
    map.insert("sender".into(), envelope.sender.to_string().into());
    map.insert("recipient".into(), envelope.recipient.to_string().into());
    map.insert("request_id".into(), envelope.request_id.into());
    map.insert("payload".into(), payload);
    let mut out = Vec::with_capacity(payload_bytes.len() + 128);
    write_canonical(&Value::Object(map), &mut out);
    out.push(b'\n');
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Envelope, WireError> {
    let Some(newline) = bytes.iter().position(|&b| b == b'\n') else {
        return Err(WireError::MalformedMessage {
            position: bytes.len(),
            reason: "missing terminating newline".into(),
        });
    };
    if newline + 1 != bytes.len() {
        return Err(WireError::MalformedMessage {
            position: newline + 1,
            reason: "trailing bytes after newline".into(),
        });
    }
    let body = &bytes[..newline];
    let raw: RawEnvelope = serde_json::from_slice(body).map_err(|e| malformed(body, &e))?;
    if raw.v != WIRE_VERSION {
        return Err(WireError::UnsupportedVersion(raw.v));
    }
    let msg_type = MsgType::from_name(&raw.msg_type).ok_or(WireError::UnknownType(raw.msg_type))?;
    let mut payload_bytes = Vec::new();
    write_canonical(&raw.payload, &mut payload_bytes);
    if payload_bytes.len() > MAX_PAYLOAD_BYTES {
        return Err(WireError::PayloadTooLarge {
            len: payload_bytes.len(),
        });
    }
    let payload =
        Payload::from_value(msg_type, raw.payload).map_err(|e| WireError::MalformedMessage {
            position: 0,
            reason: format!("bad {msg_type} payload: {e}"),
        })?;
    let envelope = Envelope {
        sender: raw.sender,
        recipient: raw.recipient,
        request_id: raw.request_id,
        payload,
    };
    if encode(&envelope)? != bytes {
        return Err(WireError::NonCanonical);
    }
    Ok(envelope)
}

fn malformed(body: &[u8], err: &serde_json::Error) -> WireError {
    // serde_json reports 1-based line/column; map back to a byte offset.
    let mut position = 0;
    let mut line = 1;
    for (i, &b) in body.iter().enumerate() {
        if line == err.line() {
            position = i + err.column().saturating_sub(1);
            break;
        }
        if b == b'\n' {
            line += 1;
        }
    }
    WireError::MalformedMessage {
        position: position.min(body.len()),
        reason: err.to_string(),
    }
}

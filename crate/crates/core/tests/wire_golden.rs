use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dris_core::wire::{decode, encode, WireError};

fn golden(sub: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(sub)
}

fn messages(sub: &str) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(golden(sub))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "msg"))
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            (name, fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn variant(e: &WireError) -> &'static str {
    match e {
        WireError::PayloadTooLarge { .. } => "PayloadTooLarge",
        WireError::MalformedMessage { .. } => "MalformedMessage",
        WireError::UnknownType(_) => "UnknownType",
        WireError::UnsupportedVersion(_) => "UnsupportedVersion",
        WireError::NonCanonical => "NonCanonical",
    }
}

#[test]
fn accepted_messages_round_trip_byte_for_byte() {
    let cases = messages("accept");
    assert_eq!(cases.len(), 12);
    for (name, bytes) in cases {
        let env = decode(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(encode(&env).unwrap(), bytes, "{name}");
        let expected: serde_json::Value = serde_json::from_slice(
            &fs::read(golden("accept").join(format!("{name}.json"))).unwrap(),
        )
        .unwrap();
        let parsed: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(parsed, expected, "{name}");
        assert_eq!(env.msg_type().as_str(), expected["msg_type"], "{name}");
        assert_eq!(env.request_id, expected["request_id"].as_u64().unwrap());
    }
}

#[test]
fn every_message_type_is_covered() {
    let mut seen: Vec<String> = messages("accept")
        .iter()
        .map(|(_, b)| decode(b).unwrap().msg_type().as_str().to_string())
        .collect();
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), 7, "{seen:?}");
}

#[test]
fn rejected_messages_fail_with_the_expected_error() {
    let expected: BTreeMap<String, String> =
        serde_json::from_slice(&fs::read(golden("reject").join("expected.json")).unwrap()).unwrap();
    let cases = messages("reject");
    assert_eq!(cases.len(), expected.len());
    for (name, bytes) in cases {
        let err = decode(&bytes).expect_err(&name);
        assert_eq!(variant(&err), expected[&name], "{name}: {err}");
    }
}

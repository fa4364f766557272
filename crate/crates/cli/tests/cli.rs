use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TOPOLOGY: &str = r#"{"domains":["cn","edu.cn","a.edu.cn","b.edu.cn"]}"#;

const FRUIT: &str = concat!(
    r#"{"doc_id":"d1","owner":"a.edu.cn","url":"","title":"","body":"apple banana","modified":0}"#,
    "\n",
    r#"{"doc_id":"d2","owner":"a.edu.cn","url":"","title":"","body":"apple apple","modified":0}"#,
    "\n",
    r#"{"doc_id":"d3","owner":"b.edu.cn","url":"","title":"","body":"cherry","modified":0}"#,
    "\n",
);

fn dris(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dris"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Fixture {
            dir: tempfile::tempdir().unwrap(),
        };
        f.write("topo.json", TOPOLOGY);
        f.write("fruit.jsonl", FRUIT);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn write(&self, name: &str, text: &str) {
        fs::write(self.path(name), text).unwrap();
    }
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn ingest_counts_per_org() {
    let f = Fixture::new();
    let o = dris(&[
        "ingest",
        "--topology",
        &f.p("topo.json"),
        "--corpus",
        &f.p("fruit.jsonl"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "a.edu.cn\t2\nb.edu.cn\t1\n");
}

#[test]
fn ingest_unknown_owner_exits_1() {
    let f = Fixture::new();
    f.write(
        "bad.jsonl",
        r#"{"doc_id":"x9","owner":"z.edu.cn","url":"","title":"","body":"x","modified":0}"#,
    );
    let o = dris(&[
        "ingest",
        "--topology",
        &f.p("topo.json"),
        "--corpus",
        &f.p("bad.jsonl"),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("x9"));
}

#[test]
fn corpus_parse_error_names_line() {
    let f = Fixture::new();
    f.write("broken.jsonl", &format!("{FRUIT}{{not json\n"));
    let o = dris(&[
        "ingest",
        "--topology",
        &f.p("topo.json"),
        "--corpus",
        &f.p("broken.jsonl"),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn run_then_query_snapshot() {
    let f = Fixture::new();
    let o = dris(&[
        "run",
        "--topology",
        &f.p("topo.json"),
        "--corpus",
        &f.p("fruit.jsonl"),
        "--seed",
        "3",
        "--report",
        &f.p("report.json"),
        "--trace",
        &f.p("trace.jsonl"),
        "--snapshot",
        &f.p("snap.json"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("coverage        1.0000"));
    let report: serde_json::Value = serde_json::from_str(&read(&f.path("report.json"))).unwrap();
    assert_eq!(report["coverage"], 1.0);
    assert!(report.get("topk_exact_rate").is_none());
    let trace = read(&f.path("trace.jsonl"));
    let last = trace.lines().last().unwrap();
    assert_eq!(
        last,
        format!(r#"{{"trace_hash":{}}}"#, report["trace_hash"])
    );

    let q = dris(&["query", "--snapshot", &f.p("snap.json"), "apple"]);
    assert!(q.status.success(), "{}", stderr(&q));
    let lines: Vec<String> = stdout(&q).lines().map(String::from).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].contains("d2") && lines[0].contains("cn > edu.cn > a.edu.cn"));
    assert!(lines[1].contains("d1"));
}

#[test]
fn run_is_reproducible() {
    let f = Fixture::new();
    f.write(
        "scenario.jsonl",
        r#"{"t":100000,"op":"query","payload":{"text":"apple","k":5}}"#,
    );
    let go = |name: &str| {
        let o = dris(&[
            "run",
            "--topology",
            &f.p("topo.json"),
            "--corpus",
            &f.p("fruit.jsonl"),
            "--scenario",
            &f.p("scenario.jsonl"),
            "--drop-prob",
            "0.1",
            "--merge-mode",
            "raw",
            "--report",
            &f.p(name),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        read(&f.path(name))
    };
    assert_eq!(go("r1.json"), go("r2.json"));
}

#[test]
fn query_validation() {
    let f = Fixture::new();
    let missing = f.p("nope.json");
    let o = dris(&["query", "--snapshot", &missing, "apple"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(&missing));

    dris(&[
        "run",
        "--topology",
        &f.p("topo.json"),
        "--end-time",
        "10",
        "--snapshot",
        &f.p("empty.json"),
    ]);
    let o = dris(&[
        "query",
        "--snapshot",
        &f.p("empty.json"),
        "--k",
        "0",
        "apple",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = dris(&["query", "--snapshot", &f.p("empty.json"), "apple"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no collection has registered"));
}

#[test]
fn bad_flags_exit_1() {
    let f = Fixture::new();
    let o = dris(&[
        "run",
        "--topology",
        &f.p("topo.json"),
        "--merge-mode",
        "fancy",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = dris(&["run", "--topology", &f.p("topo.json"), "--drop-prob", "2"]);
    assert_eq!(o.status.code(), Some(1));
    let o = dris(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(dris(&["--help"]).status.success());
}

#[test]
fn unwritable_output_is_internal() {
    let f = Fixture::new();
    let o = dris(&[
        "run",
        "--topology",
        &f.p("topo.json"),
        "--end-time",
        "10",
        "--report",
        &f.p("no/such/dir/report.json"),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_corpus_is_seeded() {
    let f = Fixture::new();
    let gen = |seed: &str| {
        let o = dris(&[
            "gen-corpus",
            "--topology",
            &f.p("topo.json"),
            "--seed",
            seed,
            "--docs-per-org",
            "5",
            "--unique-tokens",
            "2",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    let a = gen("1");
    assert_eq!(a, gen("1"));
    assert_ne!(a, gen("2"));
    assert_eq!(a.lines().count(), 10);
    f.write("gen.jsonl", &a);
    let o = dris(&[
        "ingest",
        "--topology",
        &f.p("topo.json"),
        "--corpus",
        &f.p("gen.jsonl"),
    ]);
    assert_eq!(stdout(&o), "a.edu.cn\t5\nb.edu.cn\t5\n");
}

#[test]
fn compare_reports_both_modes() {
    let f = Fixture::new();
    f.write(
        "scenario.jsonl",
        r#"{"t":100000,"op":"query","payload":{"text":"apple","k":5}}"#,
    );
    let o = dris(&[
        "compare",
        "--topology",
        &f.p("topo.json"),
        "--corpus",
        &f.p("fruit.jsonl"),
        "--scenario",
        &f.p("scenario.jsonl"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let modes: Vec<_> = v["modes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["mode"].clone())
        .collect();
    assert_eq!(
        modes,
        [serde_json::json!("global"), serde_json::json!("raw")]
    );
}

//! Runs the built `bookend` binary end to end on stub backends.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

const STARTS: [&str; 3] = [
    "A husband and his wife are looking for a new home.",
    "Tom went to the store.",
    "The dog barked at the mailman.",
];

fn bookend() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bookend"));
    for var in [
        "BOOKEND_BACKEND",
        "BOOKEND_BACKEND_URL",
        "BOOKEND_CONFIG",
        "BOOKEND_PORT",
        "BOOKEND_SEED",
    ] {
        cmd.env_remove(var);
    }
    cmd
}

fn run(args: &[&str]) -> Output {
    bookend().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn error_of(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let last = text.lines().last().expect("stderr has an error line");
    serde_json::from_str::<Value>(last).unwrap()["error"].clone()
}

fn generate_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec!["generate", "--out", out, "--seed", "11"];
    for s in STARTS {
        args.extend(["--start", s]);
    }
    args.extend(extra);
    args
}

#[test]
fn generate_one_start_gives_one_five_sentence_story() {
    let dir = tempfile::tempdir().unwrap();
    // output directories are created on demand
    let out = dir.path().join("runs/a/one.jsonl");
    let trace = dir.path().join("traces/one.jsonl");
    ok(&[
        "generate",
        "--start",
        STARTS[0],
        "--n",
        "5",
        "--out",
        out.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(lines(&trace).len(), 1);
    let stories = lines(&out);
    assert_eq!(stories.len(), 1);
    let sentences = stories[0]["sentences"].as_array().unwrap();
    assert_eq!(sentences.len(), 5);
    assert_eq!(sentences[0], STARTS[0]);
}

#[test]
fn generate_is_byte_identical_across_runs_and_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let (a, b, c) = (p("a.jsonl"), p("b.jsonl"), p("c.jsonl"));
    ok(&generate_args(&a, &[]));
    ok(&generate_args(&b, &[]));
    ok(&generate_args(&c, &["--jobs", "3"]));
    let bytes = |f: &str| std::fs::read(f).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    assert_eq!(bytes(&a), bytes(&c));
    assert_eq!(lines(Path::new(&a)).len(), STARTS.len());

    let run = read_json(Path::new(&format!("{a}.run.json")));
    assert_eq!(run["config"]["seed"], 11);
    assert_eq!(run["config"]["scheme"], "lm");
    assert_eq!(run["config"]["backend"]["kind"], "stub");
    assert_eq!(run["written"], 3);
    assert_eq!(run["failures"], serde_json::json!([]));
}

#[test]
fn generate_llm_methods_and_variants() {
    let dir = tempfile::tempdir().unwrap();
    for (method, variant) in [
        ("1", "bookend"),
        ("4", "bookend"),
        ("6", "long"),
        ("2", "baseline"),
        ("2", "ablation"),
    ] {
        let out = dir.path().join(format!("{method}-{variant}.jsonl"));
        let trace = dir.path().join(format!("{method}-{variant}.trace.jsonl"));
        let (o, t) = (out.to_str().unwrap(), trace.to_str().unwrap());
        let mut args = generate_args(
            o,
            &[
                "--scheme",
                "llm",
                "--method",
                method,
                "--variant",
                variant,
                "--trace",
                t,
            ],
        );
        if variant == "bookend" {
            args.extend(["--n", "6"]);
        }
        ok(&args);
        let stories = lines(&out);
        assert_eq!(stories.len(), 3);
        for (story, start) in stories.iter().zip(STARTS) {
            assert_eq!(story["sentences"][0], start);
        }
        if variant == "bookend" {
            assert!(stories.iter().all(|s| s["sentences"].as_array().unwrap().len() == 6));
        }
        let traces = lines(&trace);
        assert_eq!(traces[1]["index"], 1);
        assert!(!traces[0]["transcript"]["exchanges"].as_array().unwrap().is_empty());
        let run = read_json(&dir.path().join(format!("{method}-{variant}.jsonl.run.json")));
        assert_eq!(run["config"]["cleaning_rules_version"], 1);
        assert_eq!(run["config"]["params"]["max_new_tokens"], 512);
    }
}

#[test]
fn lm_trace_records_every_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let (out, trace) = (dir.path().join("s.jsonl"), dir.path().join("t.jsonl"));
    ok(&generate_args(
        out.to_str().unwrap(),
        &["--n", "7", "--trace", trace.to_str().unwrap()],
    ));
    for t in lines(&trace) {
        assert_eq!(t["trace"].as_array().unwrap().len(), 5);
        assert!(t["stop"].is_string());
    }
}

#[test]
fn starts_from_corpus_keep_ids() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    std::fs::write(
        &corpus,
        r#"{"id":"s-1","sentences":["Ann baked bread.","It rose.","She ate it."]}
{"id":"s-2","sentences":["Bo lost a key.","He looked.","He found it."]}
"#,
    )
    .unwrap();
    let out = dir.path().join("out.jsonl");
    ok(&[
        "generate",
        "--starts",
        corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let stories = lines(&out);
    assert_eq!(stories[0]["id"], "s-1");
    assert_eq!(stories[1]["sentences"][0], "Bo lost a key.");

    let txt = dir.path().join("starts.txt");
    std::fs::write(&txt, "Ann baked bread.\n\nBo lost a key.\n").unwrap();
    ok(&[
        "generate",
        "--starts",
        txt.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(lines(&out).len(), 2);
}

#[test]
fn eval_candidates_equal_references() {
    let dir = tempfile::tempdir().unwrap();
    let stories = dir.path().join("same.jsonl");
    std::fs::write(
        &stories,
        r#"{"sentences":["The cat sat on the mat.","It purred.","The cat sat on the mat."]}
{"sentences":["We went home early.","It rained all day.","We went home early."]}
"#,
    )
    .unwrap();
    let report = dir.path().join("report.json");
    let out = ok(&[
        "eval",
        "--stories",
        stories.to_str().unwrap(),
        "--references",
        stories.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("BLEU"), "{table}");
    assert!(table.lines().any(|l| l.starts_with("same")), "{table}");

    let r = read_json(&report);
    let row = &r["rows"][0]["report"];
    assert_eq!(row["bleu"]["corpus"]["score"], 100.0);
    assert_eq!(row["lexical_overlap"]["mean"], 1.0);
    assert_eq!(row["count"], 2);
    assert_eq!(r["config"]["options"]["smoothing"], "none");
}

#[test]
fn eval_multiple_files_labels_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let gen = dir.path().join("g.jsonl");
    ok(&generate_args(a.to_str().unwrap(), &[]));
    ok(&generate_args(
        gen.to_str().unwrap(),
        &["--scheme", "llm", "--method", "5"],
    ));
    let out = ok(&[
        "eval",
        "--stories",
        a.to_str().unwrap(),
        "--stories",
        gen.to_str().unwrap(),
        "--label",
        "lm",
        "--label",
        "llm-5",
        "--smoothing",
        "add-one",
    ]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.lines().any(|l| l.starts_with("lm ")), "{table}");
    assert!(table.lines().any(|l| l.starts_with("llm-5")), "{table}");

    let short = dir.path().join("short.jsonl");
    std::fs::write(&short, r#"{"sentences":["One here.","Two here."]}"#).unwrap();
    let bad = run(&[
        "eval",
        "--stories",
        a.to_str().unwrap(),
        "--references",
        short.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(error_of(&bad)["code"], "metrics");
}

#[test]
fn preprocess_one_story_counts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("one.csv");
    std::fs::write(
        &corpus,
        "id,title,sentence1,sentence2,sentence3,sentence4,sentence5\n\
         a1,Home,A husband and his wife are looking for a new home.,They look at a house.,It is too small.,They look at another.,They find a new home they love.\n",
    )
    .unwrap();
    let out = dir.path().join("samples");
    ok(&[
        "preprocess",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "4",
    ]);
    let count = |f: &str| lines(&out.join(f)).len();
    assert_eq!(count("stop.jsonl"), 1);
    assert_eq!(count("phrase_list.jsonl"), 1);
    assert_eq!(count("infill.jsonl"), 3);
    assert!(count("position.jsonl") >= 2);

    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["outputs"]["all"]["counts"]["infill"], 3);
    assert_eq!(manifest["config"]["preprocess"]["gamma"], 0.7);
    assert_eq!(manifest["config"]["preprocess"]["seed"], 4);
}

#[test]
fn preprocess_split_writes_both_parts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    let rows: String = (0..10)
        .map(|i| {
            format!(
                "{{\"sentences\":[\"Start {i} here.\",\"Middle {i} one.\",\"Middle {i} two.\",\"End {i} here.\"]}}\n"
            )
        })
        .collect();
    std::fs::write(&corpus, rows).unwrap();
    let out = dir.path().join("s");
    ok(&[
        "preprocess",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--split",
        "0.8",
    ]);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["outputs"]["train"]["stories"], 8);
    assert_eq!(manifest["outputs"]["validation"]["stories"], 2);
    assert_eq!(lines(&out.join("validation/stop.jsonl")).len(), 2);
    assert_eq!(lines(&out.join("train/infill.jsonl")).len(), 16);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 99\n[generate]\nn = 4\nmax_new_tokens = 32\n").unwrap();
    let out = dir.path().join("s.jsonl");
    let o = out.to_str().unwrap();
    ok(&[
        "--config",
        cfg.to_str().unwrap(),
        "generate",
        "--start",
        STARTS[1],
        "--out",
        o,
        "--n",
        "6",
    ]);
    let record = read_json(&dir.path().join("s.jsonl.run.json"));
    assert_eq!(record["config"]["seed"], 99);
    assert_eq!(record["config"]["n"], 6);
    assert_eq!(record["config"]["params"]["max_new_tokens"], 32);
    assert_eq!(lines(&out)[0]["sentences"].as_array().unwrap().len(), 6);

    std::fs::write(&cfg, "[generate]\nbogus = 1\n").unwrap();
    let bad = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "generate",
        "--start",
        STARTS[1],
        "--out",
        o,
    ]);
    assert_eq!(error_of(&bad)["code"], "config");
}

#[test]
fn failures_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("x.jsonl");
    let o = o.to_str().unwrap();

    let cases: [(&[&str], &str); 6] = [
        (&["generate", "--start", "One. Two.", "--out", o], "invalid_input"),
        (
            &["generate", "--start", STARTS[0], "--out", o, "--scheme", "llm"],
            "invalid_input",
        ),
        (
            &["generate", "--start", STARTS[0], "--out", o, "--method", "2"],
            "invalid_input",
        ),
        (
            &["generate", "--start", STARTS[0], "--out", o, "--n", "1"],
            "invalid_input",
        ),
        (
            &["generate", "--start", STARTS[0], "--out", o, "--backend", "remote"],
            "invalid_input",
        ),
        (&["eval", "--stories", "/nonexistent/file.jsonl"], "corpus"),
    ];
    for (args, code) in cases {
        let out = run(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = error_of(&out);
        assert_eq!(err["code"], code, "{args:?}: {err}");
        assert!(!err["message"].as_str().unwrap().is_empty());
    }
    let missing = error_of(&run(&["eval", "--stories", "/nonexistent/file.jsonl"]));
    assert!(
        missing["message"].as_str().unwrap().contains("/nonexistent/file.jsonl"),
        "{missing}"
    );

    let usage = run(&["generate", "--out", o]);
    assert_eq!(usage.status.code(), Some(2));
    assert_eq!(error_of(&usage)["code"], "usage");
}

#[test]
fn remote_backend_failure_is_recorded_per_start() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let out = dir.path().join("r.jsonl");
    let url = format!("http://127.0.0.1:{port}");
    let res = run(&generate_args(
        out.to_str().unwrap(),
        &["--backend", "remote", "--backend-url", &url],
    ));
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(error_of(&res)["code"], "generation_failed");
    let record = read_json(&dir.path().join("r.jsonl.run.json"));
    assert_eq!(record["written"], 0);
    assert_eq!(record["failures"].as_array().unwrap().len(), 3);
    assert_eq!(record["failures"][2]["error"]["code"], "endpoint_failed");
    assert_eq!(record["config"]["backend"]["url"], url);
}

#[test]
fn serve_answers_health_and_create() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = bookend()
        .args(["serve", "--port", "0", "--seed", "5", "--data-dir"])
        .arg(dir.path())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut first)
        .unwrap();
    let banner: Value = serde_json::from_str(&first).unwrap();
    let addr = banner["listening"]
        .as_str()
        .unwrap()
        .trim_start_matches("http://")
        .to_string();
    assert_eq!(banner["config"]["session_defaults"]["seed"], 5);

    let request = |method: &str, path: &str, body: &str| -> String {
        let mut s = TcpStream::connect(&addr).unwrap();
        write!(
            s,
            "{method} {path} HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        let mut resp = String::new();
        s.read_to_string(&mut resp).unwrap();
        resp
    };
    let health = request("GET", "/healthz", "");
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    let created = request("POST", "/sessions", &format!("{{\"start\":\"{}\"}}", STARTS[1]));
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(created.starts_with("HTTP/1.1 201"), "{created}");
    assert!(created.contains("\"seed\":5"), "{created}");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

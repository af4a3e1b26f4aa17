mod common;

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use kgllm::backend::{BackendConfig, BackendError, HttpBackend};
use kgllm::runlog::read_log;
use kgllm::runner::{run_with_backend, BackendSpec, RunControl, RunError, RunSpec};
use kgllm::{DatasetKind, KnowledgeGraph, Task};
use serde_json::Value;

type Reply = (u16, String);

struct FakeServer {
    url: String,
    requests: Arc<Mutex<Vec<Value>>>,
    max_active: Arc<AtomicUsize>,
}

fn read_request(stream: &mut TcpStream) -> Option<Value> {
    let mut reader = BufReader::new(stream);
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        if line == "\r\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    serde_json::from_slice(&body).ok()
}

fn write_reply(stream: &mut TcpStream, (status, body): &Reply) {
    let resp = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(resp.as_bytes());
}

fn ok_body(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]})
        .to_string()
}

/// Serves scripted replies in order, then `fallback` forever. Each
/// connection is handled on its own thread after `delay`.
fn serve(script: Vec<Reply>, fallback: Reply, delay: Duration) -> FakeServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let script = Arc::new(Mutex::new(VecDeque::from(script)));
    let requests = Arc::new(Mutex::new(Vec::new()));
    let active = Arc::new(AtomicUsize::new(0));
    let max_active = Arc::new(AtomicUsize::new(0));
    {
        let (requests, max_active) = (requests.clone(), max_active.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let (script, requests, active, max_active, fallback) = (
                    script.clone(),
                    requests.clone(),
                    active.clone(),
                    max_active.clone(),
                    fallback.clone(),
                );
                thread::spawn(move || {
                    let Some(req) = read_request(&mut stream) else {
                        return;
                    };
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    max_active.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(delay);
                    let reply = script.lock().unwrap().pop_front().unwrap_or(fallback);
                    requests.lock().unwrap().push(req);
                    active.fetch_sub(1, Ordering::SeqCst);
                    write_reply(&mut stream, &reply);
                });
            }
        });
    }
    FakeServer {
        url,
        requests,
        max_active,
    }
}

fn config(url: &str) -> BackendConfig {
    BackendConfig {
        endpoint: url.to_string(),
        model: "tiny".into(),
        initial_backoff_ms: 1,
        max_backoff_ms: 5,
        max_retries: 3,
        timeout_secs: 10,
        api_key_env: "KGLLM_TEST_NO_SUCH_KEY".into(),
        ..BackendConfig::default()
    }
}

#[test]
fn retries_429_then_succeeds() {
    let server = serve(
        vec![(429, "{}".into()), (429, "{}".into())],
        (200, ok_body("Yes, this is true.")),
        Duration::ZERO,
    );
    let backend = HttpBackend::new(config(&server.url)).unwrap();
    let result = backend
        .complete_prompt("Is this true: Steve Jobs founded Apple Inc.?")
        .unwrap();
    assert_eq!(result.text, "Yes, this is true.");
    assert_eq!(result.attempts, 3);

    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs.len(), 3);
    let req = &reqs[2];
    assert_eq!(req["model"], "tiny");
    assert_eq!(req["temperature"], 0.0);
    assert_eq!(req["max_tokens"], 64);
    assert_eq!(req["messages"][0]["role"], "user");
    assert_eq!(
        req["messages"][0]["content"],
        "Is this true: Steve Jobs founded Apple Inc.?"
    );
}

#[test]
fn error_kinds_are_distinguishable() {
    let server = serve(
        vec![],
        (401, r#"{"error":"bad key"}"#.into()),
        Duration::ZERO,
    );
    let err = HttpBackend::new(config(&server.url))
        .unwrap()
        .complete_prompt("x")
        .unwrap_err();
    assert!(
        matches!(err, BackendError::Status { status: 401, .. }),
        "{err}"
    );
    assert!(!err.is_retry_exhausted());

    let server = serve(vec![], (200, "not json".into()), Duration::ZERO);
    let err = HttpBackend::new(config(&server.url))
        .unwrap()
        .complete_prompt("x")
        .unwrap_err();
    assert!(matches!(err, BackendError::Malformed(_)), "{err}");

    let server = serve(vec![], (503, "{}".into()), Duration::ZERO);
    let err = HttpBackend::new(config(&server.url))
        .unwrap()
        .complete_prompt("x")
        .unwrap_err();
    assert_eq!(
        err,
        BackendError::Transport {
            attempts: 4,
            message: "status 503".into()
        }
    );
    assert_eq!(server.requests.lock().unwrap().len(), 4);

    // nothing listening
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let mut cfg = config(&format!("http://127.0.0.1:{port}/v1"));
    cfg.max_retries = 1;
    let err = HttpBackend::new(cfg)
        .unwrap()
        .complete_prompt("x")
        .unwrap_err();
    assert!(
        matches!(err, BackendError::Transport { attempts: 2, .. }),
        "{err}"
    );
}

#[test]
fn in_flight_limit_holds_across_threads() {
    let server = serve(vec![], (200, ok_body("ok")), Duration::from_millis(40));
    let mut cfg = config(&server.url);
    cfg.max_in_flight = 2;
    let backend = HttpBackend::new(cfg).unwrap();
    thread::scope(|s| {
        for i in 0..8 {
            let backend = &backend;
            s.spawn(move || backend.complete_prompt(&format!("prompt {i}")).unwrap());
        }
    });
    assert_eq!(server.requests.lock().unwrap().len(), 8);
    let peak = server.max_active.load(Ordering::SeqCst);
    assert!((1..=2).contains(&peak), "peak in-flight {peak}");
}

#[test]
fn debug_log_mirrors_traffic() {
    let server = serve(vec![], (200, ok_body("male")), Duration::ZERO);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(&server.url);
    cfg.debug_log = Some(dir.path().join("debug.jsonl"));
    HttpBackend::new(cfg)
        .unwrap()
        .complete_prompt("Josip Škorić has gender")
        .unwrap();
    let log = std::fs::read_to_string(dir.path().join("debug.jsonl")).unwrap();
    let line: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(line["status"], 200);
    assert_eq!(
        line["request"]["messages"][0]["content"],
        "Josip Škorić has gender"
    );
}

fn http_spec(data: &std::path::Path, out: &std::path::Path, cfg: BackendConfig) -> RunSpec {
    let mut spec = RunSpec::new(data, DatasetKind::Fb13, Task::TripleClassification, out);
    spec.subset = Some(6);
    spec.concurrency = 1;
    spec.backend = BackendSpec::Http(cfg);
    spec
}

#[test]
fn hard_failure_aborts_with_partial_log() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("FB13");
    common::small_synthetic(&data, DatasetKind::Fb13, 40);
    let kg = KnowledgeGraph::load(&data, DatasetKind::Fb13).unwrap();

    let server = serve(
        vec![(200, ok_body("Yes")), (200, ok_body("No"))],
        (404, "{}".into()),
        Duration::ZERO,
    );
    let cfg = config(&server.url);
    let spec = http_spec(&data, &tmp.path().join("run"), cfg.clone());
    let backend = HttpBackend::new(cfg).unwrap();
    let err = run_with_backend(&spec, &kg, &backend, RunControl::default()).unwrap_err();
    match err {
        RunError::Backend { logged, source, .. } => {
            assert_eq!(logged, 2);
            assert!(matches!(source, BackendError::Status { status: 404, .. }));
        }
        other => panic!("unexpected {other}"),
    }
    let log = read_log(&tmp.path().join("run").join("run.jsonl")).unwrap();
    assert_eq!(log.entries.len(), 2);
}

#[test]
fn exhausted_retries_are_flagged_not_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("FB13");
    common::small_synthetic(&data, DatasetKind::Fb13, 40);
    let kg = KnowledgeGraph::load(&data, DatasetKind::Fb13).unwrap();

    let server = serve(
        vec![(503, "{}".into())],
        (200, ok_body("Yes, this is true.")),
        Duration::ZERO,
    );
    let mut cfg = config(&server.url);
    cfg.max_retries = 0;
    let spec = http_spec(&data, &tmp.path().join("run"), cfg.clone());
    let backend = HttpBackend::new(cfg).unwrap();
    let outcome = run_with_backend(&spec, &kg, &backend, RunControl::default()).unwrap();
    let m = outcome.metrics().unwrap();
    assert_eq!(m.n, 6);
    assert_eq!(m.backend_failures, 1);
    assert!(m.failures.iter().any(|j| j.backend_failure));
}

//! HTTP backend against a local one-shot server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use cohort_core::backends::{
    Backend, BackendError, BackendRequest, HttpBackend, HttpConfig, Payload, RequestKey, Role,
};
use cohort_core::command::RawCommand;
use cohort_core::world::{init_scene, Difficulty};

struct Seen {
    auth: String,
    body: serde_json::Value,
}

type Reply = Box<dyn Fn(&serde_json::Value) -> (u16, String) + Send + Sync>;

struct Server {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
    peak: Arc<AtomicUsize>,
}

fn read_request(stream: &mut TcpStream) -> Option<(String, serde_json::Value)> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut len = 0;
    let mut auth = String::new();
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).ok()?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            len = v.trim().parse().ok()?;
        }
        if lower.starts_with("authorization:") {
            auth = line["authorization:".len()..].trim().to_string();
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some((auth, serde_json::from_slice(&body).ok()?))
}

/// Serves `replies` in order, one per connection, then repeats the last.
fn serve(replies: Vec<Reply>, delay: Duration) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let peak = Arc::new(AtomicUsize::new(0));
    let active = Arc::new(AtomicUsize::new(0));
    let replies = Arc::new(replies);
    let (seen2, peak2) = (seen.clone(), peak.clone());
    thread::spawn(move || {
        for (n, stream) in listener.incoming().enumerate() {
            let Ok(mut stream) = stream else { continue };
            let (seen, peak, active, replies) = (seen2.clone(), peak2.clone(), active.clone(), replies.clone());
            thread::spawn(move || {
                let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                if let Some((auth, body)) = read_request(&mut stream) {
                    thread::sleep(delay);
                    let (status, text) = replies[n.min(replies.len() - 1)](&body);
                    seen.lock().unwrap().push(Seen { auth, body });
                    let head = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                        text.len()
                    );
                    active.fetch_sub(1, Ordering::SeqCst);
                    let _ = stream.write_all(head.as_bytes());
                    let _ = stream.write_all(text.as_bytes());
                } else {
                    active.fetch_sub(1, Ordering::SeqCst);
                }
            });
        }
    });
    Server { url, seen, peak }
}

fn completion(content: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": 12, "completion_tokens": 3},
    })
    .to_string()
}

fn echo() -> Reply {
    Box::new(|body| (200, completion(body["messages"][1]["content"].as_str().unwrap_or(""))))
}

fn status(code: u16) -> Reply {
    Box::new(move |_| (code, format!("{{\"error\": \"status {code}\"}}")))
}

fn request(prompt: &str) -> BackendRequest {
    BackendRequest {
        key: RequestKey {
            cycle: 0,
            role: Role::CapabilityScorer,
            gid: None,
            agent: None,
            attempt: 0,
        },
        system: "system text".into(),
        rendered_prompt: prompt.into(),
        schema: "",
        roster: Vec::new(),
        layout: init_scene(0, Difficulty::Easy).unwrap().layout,
        payload: Payload::Capability {
            command: RawCommand::new("group 1: agent franka(1) [wait]"),
        },
    }
}

fn backend(url: &str, max_in_flight: usize) -> HttpBackend {
    HttpBackend::with_key(
        HttpConfig {
            endpoint: url.to_string(),
            model: "test-model".into(),
            temperature: 0.25,
            max_in_flight,
            backoff_ms: 10,
            timeout_secs: 10,
            ..HttpConfig::default()
        },
        "secret",
    )
    .unwrap()
}

#[test]
fn echoes_prompt_and_records_usage() {
    let server = serve(vec![echo()], Duration::ZERO);
    let r = backend(&server.url, 1).complete(&request("hello robots")).unwrap();
    assert_eq!(r.text, "hello robots");
    assert_eq!(r.usage.map(|u| (u.prompt_tokens, u.completion_tokens)), Some((12, 3)));
    assert!(r.latency.is_some_and(|l| l >= 0.0));
    let seen = server.seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].auth, "Bearer secret");
    assert_eq!(seen[0].body["model"], "test-model");
    assert_eq!(seen[0].body["temperature"], 0.25);
    assert_eq!(seen[0].body["messages"][0]["role"], "system");
    assert_eq!(seen[0].body["messages"][0]["content"], "system text");
}

#[test]
fn server_error_then_success_retries_once() {
    let server = serve(vec![status(500), echo()], Duration::ZERO);
    let r = backend(&server.url, 1).complete(&request("again")).unwrap();
    assert_eq!(r.text, "again");
    assert_eq!(server.seen.lock().unwrap().len(), 2);
}

#[test]
fn bad_credentials_are_not_retried() {
    let server = serve(vec![status(401), echo()], Duration::ZERO);
    let err = backend(&server.url, 1).complete(&request("x")).unwrap_err();
    assert!(matches!(err, BackendError::Rejected { status: 401, .. }), "{err}");
    assert_eq!(server.seen.lock().unwrap().len(), 1);
}

#[test]
fn exhausted_retries_surface_as_transport_failure() {
    let server = serve(vec![status(503)], Duration::ZERO);
    let err = backend(&server.url, 1).complete(&request("x")).unwrap_err();
    assert!(matches!(err, BackendError::Transport { attempts: 3, .. }), "{err}");
    assert_eq!(server.seen.lock().unwrap().len(), 3);
}

#[test]
fn missing_content_is_retried() {
    let empty: Reply = Box::new(|_| (200, "{\"choices\": []}".into()));
    let server = serve(vec![empty, echo()], Duration::ZERO);
    assert_eq!(backend(&server.url, 1).complete(&request("y")).unwrap().text, "y");
}

#[test]
fn concurrent_requests_respect_in_flight_limit() {
    let server = serve(vec![echo()], Duration::from_millis(80));
    let b = Arc::new(backend(&server.url, 2));
    let handles: Vec<_> = (0..6)
        .map(|i| {
            let b = b.clone();
            thread::spawn(move || b.complete(&request(&format!("p{i}"))).unwrap().text)
        })
        .collect();
    let mut texts: Vec<String> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    texts.sort();
    assert_eq!(texts, ["p0", "p1", "p2", "p3", "p4", "p5"]);
    assert!(server.peak.load(Ordering::SeqCst) <= 2);
}

#[test]
fn missing_key_is_a_configuration_error() {
    let config = HttpConfig {
        api_key_env: "COHORT_TEST_KEY_THAT_IS_NEVER_SET".into(),
        ..HttpConfig::default()
    };
    assert!(matches!(HttpBackend::new(config), Err(BackendError::Config(_))));
}

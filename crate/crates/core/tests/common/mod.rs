//! Shared fixtures and a tiny HTTP stub for the integration tests.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use mtle::corpus::{load_corpus, Corpus, FormatConfig};
use mtle::gateway::parse_fill_reply;
use mtle::gateway::{MatchKind, MockFixture, MockReply, MockRule};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

pub fn pairs10() -> Corpus {
    load_corpus(fixture("pairs10.csv"), &FormatConfig::default()).unwrap()
}

pub fn augment_fixture() -> MockFixture {
    MockFixture::load(fixture("mock_augment.json")).unwrap()
}

/// The augment fixture with every pair's six candidates relabeled by
/// `pattern` (acceptable fills first, then unacceptable).
pub fn augment_fixture_relabeled(pattern: [u8; 6]) -> MockFixture {
    let base = augment_fixture();
    let mut out = MockFixture {
        delay_ms: base.delay_ms,
        ..MockFixture::default()
    };
    for rule in base.rules.iter().filter(|r| r.pattern.contains("<>")) {
        let mask = rule.pattern.trim_start_matches("文: ");
        let (prefix, suffix) = mask.split_once("<>").unwrap();
        let reply = match &rule.responses[0] {
            MockReply::Text(t) => t.clone(),
            other => panic!("unexpected reply {other:?}"),
        };
        let (acc, unacc) = parse_fill_reply(&reply).unwrap();
        out.rules.push(rule.clone());
        for (fill, label) in acc.iter().chain(&unacc).zip(pattern) {
            out.rules.push(MockRule::sequence(
                MatchKind::Substring,
                format!("文: {prefix}{fill}{suffix}"),
                [label.to_string()],
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// HTTP stub

pub struct StubReply {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl StubReply {
    pub fn chat(content: &str) -> Self {
        let body = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": content}}]
        });
        StubReply {
            status: 200,
            headers: Vec::new(),
            body: body.to_string(),
        }
    }

    pub fn status(status: u16) -> Self {
        StubReply {
            status,
            headers: Vec::new(),
            body: "{\"error\":\"stub\"}".into(),
        }
    }

    pub fn header(mut self, k: &str, v: &str) -> Self {
        self.headers.push((k.into(), v.into()));
        self
    }
}

type Script = dyn Fn(usize, &serde_json::Value) -> StubReply + Send + Sync;

/// Counts requests and the peak number of requests being served at once.
pub struct StubServer {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
    pub peak: Arc<AtomicUsize>,
    pub bodies: Arc<Mutex<Vec<serde_json::Value>>>,
    pub auth_headers: Arc<Mutex<Vec<String>>>,
    stop: Arc<AtomicBool>,
}

impl StubServer {
    /// `script` sees the zero-based request index and the parsed JSON body.
    pub fn start<F>(delay: Duration, script: F) -> StubServer
    where
        F: Fn(usize, &serde_json::Value) -> StubReply + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        listener.set_nonblocking(true).unwrap();
        let url = format!(
            "http://{}/v1/chat/completions",
            listener.local_addr().unwrap()
        );
        let requests = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let auth_headers = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let script: Arc<Script> = Arc::new(script);

        let s = StubServer {
            url,
            requests: requests.clone(),
            peak: peak.clone(),
            bodies: bodies.clone(),
            auth_headers: auth_headers.clone(),
            stop: stop.clone(),
        };
        thread::spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                let stream = match listener.accept() {
                    Ok((stream, _)) => stream,
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        thread::sleep(Duration::from_millis(2));
                        continue;
                    }
                    Err(_) => break,
                };
                let requests = requests.clone();
                let peak = peak.clone();
                let in_flight = in_flight.clone();
                let bodies = bodies.clone();
                let auth_headers = auth_headers.clone();
                let script = script.clone();
                thread::spawn(move || {
                    stream.set_nonblocking(false).unwrap();
                    let Some((auth, body)) = read_request(&stream) else {
                        return;
                    };
                    let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    let index = requests.fetch_add(1, Ordering::SeqCst);
                    auth_headers.lock().unwrap().push(auth);
                    bodies.lock().unwrap().push(body.clone());
                    thread::sleep(delay);
                    let reply = script(index, &body);
                    in_flight.fetch_sub(1, Ordering::SeqCst);
                    write_reply(stream, &reply);
                });
            }
        });
        s
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

fn read_request(stream: &TcpStream) -> Option<(String, serde_json::Value)> {
    let mut r = BufReader::new(stream);
    let mut line = String::new();
    r.read_line(&mut line).ok()?;
    let mut len = 0usize;
    let mut auth = String::new();
    loop {
        line.clear();
        r.read_line(&mut line).ok()?;
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        let (k, v) = l.split_once(':')?;
        match k.to_ascii_lowercase().as_str() {
            "content-length" => len = v.trim().parse().ok()?,
            "authorization" => auth = v.trim().to_string(),
            _ => {}
        }
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).ok()?;
    Some((auth, serde_json::from_slice(&body).ok()?))
}

fn write_reply(mut stream: TcpStream, reply: &StubReply) {
    let mut head = format!(
        "HTTP/1.1 {} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
        reply.status,
        reply.body.len()
    );
    for (k, v) in &reply.headers {
        head.push_str(&format!("{k}: {v}\r\n"));
    }
    head.push_str("\r\n");
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(reply.body.as_bytes());
    let _ = stream.flush();
}

/// The last user message of a captured request body.
pub fn user_text(body: &serde_json::Value) -> String {
    body["messages"]
        .as_array()
        .and_then(|m| m.last())
        .and_then(|m| m["content"].as_str())
        .unwrap_or_default()
        .to_string()
}

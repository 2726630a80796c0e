mod common;

use std::sync::Arc;
use std::time::Duration;

use common::{user_text, StubReply, StubServer};
use mtle::gateway::{
    BackendConfig, ChatExchange, DecodeParams, Gateway, GatewayError, HttpChatBackend, PromptSet,
};

fn config(stub: &StubServer, max_concurrent: usize) -> BackendConfig {
    BackendConfig {
        endpoint_url: Some(stub.url.clone()),
        max_concurrent_requests: max_concurrent,
        retry_base_delay: Duration::from_millis(5),
        retry_max_delay: Duration::from_millis(50),
        request_timeout: Duration::from_secs(10),
        ..BackendConfig::default()
    }
}

fn gateway(cfg: BackendConfig) -> Gateway {
    let backend = HttpChatBackend::new(
        cfg.endpoint_url.clone().unwrap(),
        "sk-test",
        cfg.request_timeout,
    )
    .unwrap();
    Gateway::with_backend(cfg, PromptSet::default(), Arc::new(backend)).unwrap()
}

fn exchange(user: &str) -> ChatExchange {
    ChatExchange::new("system", user, DecodeParams::deterministic(8))
}

#[test]
fn concurrency_is_bounded() {
    let stub = StubServer::start(Duration::from_millis(40), |_, body| {
        StubReply::chat(&user_text(body))
    });
    let gw = gateway(config(&stub, 3));
    std::thread::scope(|s| {
        for i in 0..12 {
            let gw = &gw;
            s.spawn(move || {
                assert_eq!(
                    gw.complete(&exchange(&format!("q{i}"))).unwrap(),
                    format!("q{i}")
                )
            });
        }
    });
    assert_eq!(stub.requests(), 12);
    assert!(stub.peak() <= 3, "peak {}", stub.peak());
    assert!(stub.peak() >= 2, "requests never overlapped");
    assert!(gw.stats().peak_in_flight <= 3);
}

#[test]
fn rate_limited_then_ok_retries_once() {
    let stub = StubServer::start(Duration::ZERO, |i, _| {
        if i == 0 {
            StubReply::status(429).header("Retry-After", "0")
        } else {
            StubReply::chat("0")
        }
    });
    let gw = gateway(config(&stub, 1));
    assert_eq!(gw.complete(&exchange("q")).unwrap(), "0");
    assert_eq!(stub.requests(), 2);
    assert_eq!(gw.stats().retries, 1);
}

#[test]
fn warm_cache_issues_no_requests() {
    let dir = tempfile::tempdir().unwrap();
    let stub = StubServer::start(Duration::ZERO, |_, body| StubReply::chat(&user_text(body)));
    let mut cfg = config(&stub, 2);
    cfg.cache_path = Some(dir.path().join("cache.jsonl"));
    {
        let gw = gateway(cfg.clone());
        for q in ["a", "b", "c"] {
            gw.complete(&exchange(q)).unwrap();
        }
    }
    assert_eq!(stub.requests(), 3);
    let gw = gateway(cfg);
    for q in ["a", "b", "c"] {
        assert_eq!(gw.complete(&exchange(q)).unwrap(), q);
    }
    assert_eq!(stub.requests(), 3);
    assert_eq!(gw.stats().cache_hits, 3);
}

#[test]
fn auth_failure_is_not_retried() {
    let stub = StubServer::start(Duration::ZERO, |_, _| StubReply::status(401));
    let gw = gateway(config(&stub, 1));
    assert!(matches!(
        gw.complete(&exchange("q")),
        Err(GatewayError::Auth(_))
    ));
    assert_eq!(stub.requests(), 1);
}

#[test]
fn persistent_server_errors_exhaust_the_budget() {
    let stub = StubServer::start(Duration::ZERO, |_, _| StubReply::status(503));
    let gw = gateway(config(&stub, 1));
    match gw.complete(&exchange("q")) {
        Err(GatewayError::Exhausted {
            attempts, status, ..
        }) => {
            assert_eq!(attempts, 4);
            assert_eq!(status, Some(503));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(stub.requests(), 4);
}

#[test]
fn client_errors_are_fatal() {
    let stub = StubServer::start(Duration::ZERO, |_, _| StubReply::status(400));
    let gw = gateway(config(&stub, 1));
    assert!(matches!(
        gw.complete(&exchange("q")),
        Err(GatewayError::Rejected(_))
    ));
    assert_eq!(stub.requests(), 1);
}

#[test]
fn request_shape() {
    let stub = StubServer::start(Duration::ZERO, |_, _| StubReply::chat("1"));
    let gw = gateway(config(&stub, 1));
    let verdict = gw.relabel("赤ちゃんにお酒を飲ませる").unwrap();
    assert_eq!(verdict.verdict.as_u8(), 1);
    let body = stub.bodies.lock().unwrap()[0].clone();
    assert_eq!(body["model"], mtle::gateway::DEFAULT_MODEL);
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["messages"][0]["role"], "system");
    assert!(user_text(&body).ends_with("文: 赤ちゃんにお酒を飲ませる"));
    assert_eq!(stub.auth_headers.lock().unwrap()[0], "Bearer sk-test");
}

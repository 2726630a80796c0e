mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use common::{fixture, pairs10};
use mtle::corpus::{pair_sentences, PairingStrategy};
use mtle::masker::{extract_mask, MaskOutcome};
use mtle::segmenter::{Segmenter, SegmenterConfig};

fn python() -> Option<&'static str> {
    Command::new("python3").arg("--version").output().ok()?;
    Some("python3")
}

fn analyzer(script: &str) -> Option<SegmenterConfig> {
    let py = python()?;
    let path = fixture("analyzers").join(script);
    Some(SegmenterConfig::external([
        py.to_string(),
        path.display().to_string(),
    ]))
}

#[test]
fn analyzer_tokens_drive_the_mask() {
    let Some(cfg) = analyzer("pairs.py") else {
        eprintln!("python3 not found; skipping");
        return;
    };
    let mut seg = Segmenter::new(cfg).unwrap();
    let seq = seg.segment("赤ちゃんに薬を").unwrap();
    assert_eq!(seq.tokens(), ["赤ち", "ゃん", "に薬", "を"]);

    let pairs = pair_sentences(&pairs10(), PairingStrategy::Adjacent).pairs;
    let MaskOutcome::Accepted(t) = extract_mask(&pairs[0], &mut seg).unwrap() else {
        panic!("rejected")
    };
    // Two-character tokens cannot split "にお" from "に薬".
    assert_eq!(t.render(), "赤ちゃん<>");
    assert!(seg.warnings().is_empty());
}

#[test]
fn lossy_output_falls_back_to_characters() {
    let Some(cfg) = analyzer("lossy.py") else {
        return;
    };
    let mut seg = Segmenter::new(cfg).unwrap();
    let seq = seg.segment("赤ちゃんに薬を飲ませる").unwrap();
    assert_eq!(seq.len(), 11);
    assert_eq!(seg.warnings().len(), 1);
}

#[test]
fn silent_analyzer_times_out() {
    let Some(mut cfg) = analyzer("silent.py") else {
        return;
    };
    cfg.analyzer_timeout = Duration::from_millis(300);
    let mut seg = Segmenter::new(cfg).unwrap();
    let t = Instant::now();
    let err = seg.segment("赤ちゃん").unwrap_err();
    assert!(err.to_string().contains("did not answer"), "{err}");
    assert!(t.elapsed() < Duration::from_secs(5));
}

#[test]
fn missing_analyzer_is_reported() {
    let cfg = SegmenterConfig::external(["/nonexistent/analyzer"]);
    let mut seg = Segmenter::new(cfg).unwrap();
    let err = seg.segment("赤ちゃん").unwrap_err();
    assert!(err.to_string().contains("/nonexistent/analyzer"), "{err}");
}

#[test]
fn newline_cannot_reach_the_analyzer() {
    let Some(cfg) = analyzer("pairs.py") else {
        return;
    };
    let mut seg = Segmenter::new(cfg).unwrap();
    assert!(seg.segment("一行目\n二行目").is_err());
}

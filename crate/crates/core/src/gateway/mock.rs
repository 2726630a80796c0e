//! Scripted offline backend.
//!
//! A fixture is a list of rules. Each rule matches the user message exactly or
//! by substring and replies from a per-rule sequence; once the sequence is
//! exhausted its last entry repeats. An exact match beats any substring match,
//! and among substring matches the longest pattern wins (ties go to the first
//! rule), so overlapping sentence patterns resolve to the most specific one.
//!
//! Rules with multi-step sequences keep shared counters; drive them from one
//! thread if the step order matters.

use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatExchange};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    #[default]
    Substring,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailKind {
    Transient,
    Auth,
    Fatal,
}

/// A scripted reply: either text, or an injected failure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Fail { fail: FailKind },
}

impl From<&str> for MockReply {
    fn from(s: &str) -> Self {
        MockReply::Text(s.to_string())
    }
}

impl From<String> for MockReply {
    fn from(s: String) -> Self {
        MockReply::Text(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match", default)]
    pub kind: MatchKind,
    pub pattern: String,
    pub responses: Vec<MockReply>,
}

impl MockRule {
    pub fn substring(pattern: impl Into<String>, reply: impl Into<MockReply>) -> Self {
        MockRule {
            kind: MatchKind::Substring,
            pattern: pattern.into(),
            responses: vec![reply.into()],
        }
    }

    pub fn exact(pattern: impl Into<String>, reply: impl Into<MockReply>) -> Self {
        MockRule {
            kind: MatchKind::Exact,
            pattern: pattern.into(),
            responses: vec![reply.into()],
        }
    }

    pub fn sequence<I, R>(kind: MatchKind, pattern: impl Into<String>, replies: I) -> Self
    where
        I: IntoIterator<Item = R>,
        R: Into<MockReply>,
    {
        MockRule {
            kind,
            pattern: pattern.into(),
            responses: replies.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockFixture {
    pub rules: Vec<MockRule>,
    /// Reply used when no rule matches; without it an unmatched prompt fails.
    pub fallback: Option<String>,
    /// Artificial latency per call.
    pub delay_ms: u64,
}

impl MockFixture {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fixture: MockFixture = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        if let Some(r) = fixture.rules.iter().find(|r| r.responses.is_empty()) {
            return Err(Error::Config(format!(
                "mock rule {:?} has no responses",
                r.pattern
            )));
        }
        Ok(fixture)
    }

    pub fn rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }
}

pub struct MockBackend {
    fixture: MockFixture,
    counters: Vec<AtomicUsize>,
    calls: AtomicU64,
}

impl MockBackend {
    pub fn new(fixture: MockFixture) -> Self {
        let counters = fixture.rules.iter().map(|_| AtomicUsize::new(0)).collect();
        MockBackend {
            fixture,
            counters,
            calls: AtomicU64::new(0),
        }
    }

    /// Number of calls served so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn find_rule(&self, user: &str) -> Option<usize> {
        let rules = &self.fixture.rules;
        if let Some(i) = rules
            .iter()
            .position(|r| r.kind == MatchKind::Exact && r.pattern == user)
        {
            return Some(i);
        }
        let mut best: Option<usize> = None;
        for (i, r) in rules.iter().enumerate() {
            if r.kind == MatchKind::Substring && user.contains(r.pattern.as_str()) {
                let better = best.is_none_or(|b| r.pattern.len() > rules[b].pattern.len());
                if better {
                    best = Some(i);
                }
            }
        }
        best
    }
}

impl ChatBackend for MockBackend {
    fn send(&self, _model: &str, exchange: &ChatExchange) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.fixture.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.fixture.delay_ms));
        }
        let Some(i) = self.find_rule(&exchange.user_text) else {
            return match &self.fixture.fallback {
                Some(text) => Ok(text.clone()),
                None => Err(BackendError::Fatal(format!(
                    "no mock rule matches prompt starting {:?}",
                    exchange.user_text.chars().take(40).collect::<String>()
                ))),
            };
        };
        let rule = &self.fixture.rules[i];
        let step = self.counters[i].fetch_add(1, Ordering::SeqCst);
        let reply = &rule.responses[step.min(rule.responses.len() - 1)];
        match reply {
            MockReply::Text(t) => Ok(t.clone()),
            MockReply::Fail { fail } => Err(match fail {
                FailKind::Transient => BackendError::Transient {
                    status: Some(503),
                    message: "scripted transient failure".into(),
                    retry_after: None,
                },
                FailKind::Auth => BackendError::Auth("scripted authentication failure".into()),
                FailKind::Fatal => BackendError::Fatal("scripted fatal failure".into()),
            }),
        }
    }

    fn name(&self) -> &str {
        "mock"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::DecodeParams;

    fn ask(m: &MockBackend, user: &str) -> Result<String, BackendError> {
        m.send(
            "m",
            &ChatExchange::new("", user, DecodeParams::deterministic(4)),
        )
    }

    #[test]
    fn exact_beats_substring_and_longest_substring_wins() {
        let m = MockBackend::new(
            MockFixture::default()
                .rule(MockRule::substring("文: 本", "short"))
                .rule(MockRule::substring("文: 本を読む", "long"))
                .rule(MockRule::exact("文: 本", "exact")),
        );
        assert_eq!(ask(&m, "文: 本").unwrap(), "exact");
        assert_eq!(ask(&m, "x 文: 本を読む").unwrap(), "long");
        assert_eq!(ask(&m, "x 文: 本棚").unwrap(), "short");
        assert!(ask(&m, "nothing").is_err());
        assert_eq!(m.calls(), 4);
    }

    #[test]
    fn sequences_repeat_last() {
        let m = MockBackend::new(MockFixture::default().rule(MockRule::sequence(
            MatchKind::Substring,
            "q",
            ["maybe", "1"],
        )));
        let got: Vec<String> = (0..4).map(|_| ask(&m, "q").unwrap()).collect();
        assert_eq!(got, ["maybe", "1", "1", "1"]);
    }

    #[test]
    fn fixture_json_shape() {
        let json = r#"{
            "rules": [
                {"match": "exact", "pattern": "a", "responses": ["x"]},
                {"pattern": "b", "responses": [{"fail": "transient"}, "y"]}
            ],
            "fallback": "2"
        }"#;
        let f: MockFixture = serde_json::from_str(json).unwrap();
        let m = MockBackend::new(f);
        assert_eq!(ask(&m, "a").unwrap(), "x");
        assert!(matches!(ask(&m, "b"), Err(BackendError::Transient { .. })));
        assert_eq!(ask(&m, "b").unwrap(), "y");
        assert_eq!(ask(&m, "zzz").unwrap(), "2");
    }
}

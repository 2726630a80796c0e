//! Lossless surface segmentation.
//!
//! The default backend emits one token per extended grapheme cluster. The
//! external backend drives a morphological analyzer over a line protocol: one
//! line of raw text in, one line of surfaces joined by U+241F out.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, Result};

/// Token separator on the analyzer protocol (SYMBOL FOR UNIT SEPARATOR).
pub const UNIT_SEPARATOR: char = '\u{241F}';

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<String>,
    source: String,
}

impl TokenSequence {
    /// Builds a sequence, checking that the tokens are non-empty and
    /// concatenate to `source`.
    pub fn new(tokens: Vec<String>, source: impl Into<String>) -> Option<Self> {
        let source = source.into();
        if tokens.iter().any(String::is_empty) || tokens.concat() != source {
            return None;
        }
        Some(TokenSequence { tokens, source })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterBackend {
    #[default]
    CharacterLevel,
    ExternalAnalyzer,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub backend: SegmenterBackend,
    /// Program and arguments, e.g. `["python3", "scripts/ginza_segment.py"]`.
    pub analyzer_command: Option<Vec<String>>,
    #[serde(with = "crate::duration_secs")]
    pub analyzer_timeout: Duration,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            backend: SegmenterBackend::CharacterLevel,
            analyzer_command: None,
            analyzer_timeout: Duration::from_secs(30),
        }
    }
}

impl SegmenterConfig {
    pub fn character_level() -> Self {
        SegmenterConfig::default()
    }

    pub fn external<I, S>(command: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        SegmenterConfig {
            backend: SegmenterBackend::ExternalAnalyzer,
            analyzer_command: Some(command.into_iter().map(Into::into).collect()),
            ..SegmenterConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.backend == SegmenterBackend::ExternalAnalyzer
            && self.analyzer_command.as_ref().is_none_or(Vec::is_empty)
        {
            return Err(Error::Config(
                "external analyzer backend requires analyzer_command".into(),
            ));
        }
        Ok(())
    }
}

pub fn segment_graphemes(text: &str) -> TokenSequence {
    TokenSequence {
        tokens: text.graphemes(true).map(str::to_string).collect(),
        source: text.to_string(),
    }
}

/// Grapheme-cluster count, the character unit used throughout the crate.
pub fn grapheme_len(text: &str) -> usize {
    text.graphemes(true).count()
}

struct AnalyzerProcess {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Drop for AnalyzerProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A segmenter instance. The external backend keeps one child process per
/// instance; create one instance per worker thread.
pub struct Segmenter {
    config: SegmenterConfig,
    process: Option<AnalyzerProcess>,
    warnings: Vec<String>,
}

impl Segmenter {
    pub fn new(config: SegmenterConfig) -> Result<Self> {
        config.validate()?;
        Ok(Segmenter {
            config,
            process: None,
            warnings: Vec::new(),
        })
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    /// Warnings recorded when analyzer output failed validation and the
    /// character-level fallback was used.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn segment(&mut self, text: &str) -> Result<TokenSequence> {
        if text.is_empty() {
            return Err(Error::Segmenter("cannot segment empty text".into()));
        }
        match self.config.backend {
            SegmenterBackend::CharacterLevel => Ok(segment_graphemes(text)),
            SegmenterBackend::ExternalAnalyzer => self.segment_external(text),
        }
    }

    fn segment_external(&mut self, text: &str) -> Result<TokenSequence> {
        if text.contains(UNIT_SEPARATOR) || text.contains('\n') || text.contains('\r') {
            return Err(Error::Segmenter(
                "text contains a newline or U+241F and cannot be sent to the analyzer".into(),
            ));
        }
        let reply = match self.exchange(text) {
            Ok(r) => r,
            Err(e) => {
                // A dead or wedged child is not reused.
                self.process = None;
                return Err(e);
            }
        };
        let tokens: Vec<String> = reply
            .split(UNIT_SEPARATOR)
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();
        match TokenSequence::new(tokens, text) {
            Some(seq) => Ok(seq),
            None => {
                let msg = format!(
                    "analyzer output for {text:?} is not lossless; fell back to character-level"
                );
                log::warn!("{msg}");
                self.warnings.push(msg);
                Ok(segment_graphemes(text))
            }
        }
    }

    fn exchange(&mut self, text: &str) -> Result<String> {
        if self.process.is_none() {
            self.process = Some(self.spawn()?);
        }
        let timeout = self.config.analyzer_timeout;
        let proc = self.process.as_mut().expect("spawned above");
        writeln!(proc.stdin, "{text}")
            .and_then(|_| proc.stdin.flush())
            .map_err(|e| Error::Segmenter(format!("writing to analyzer: {e}")))?;
        match proc.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::Segmenter(format!("reading from analyzer: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Segmenter(format!(
                "analyzer did not answer within {timeout:?}"
            ))),
            Err(RecvTimeoutError::Disconnected) => {
                let status = proc.child.try_wait().ok().flatten();
                Err(Error::Segmenter(format!(
                    "analyzer closed its output (exit status: {status:?})"
                )))
            }
        }
    }

    fn spawn(&self) -> Result<AnalyzerProcess> {
        let argv = self
            .config
            .analyzer_command
            .as_ref()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::Config("analyzer_command is not set".into()))?;
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Segmenter(format!("spawning {:?}: {e}", argv[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let line = line.map(|l| l.trim_end_matches('\r').to_string());
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(AnalyzerProcess {
            child,
            stdin,
            lines: rx,
        })
    }
}

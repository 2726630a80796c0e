//! Corpus data model and file I/O.
//!
//! A corpus is an ordered list of labeled sentences. Source corpora arrive as
//! delimiter-separated files with a header row; pipeline intermediates use one
//! JSON record per line. Both directions preserve row order exactly.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Binary moral judgment. Serialized as the integers 0 and 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum MoralLabel {
    Acceptable = 0,
    Unacceptable = 1,
}

/// Three-way judgment produced by relabeling. `Indistinguishable` is the
/// discard class and never reaches a final corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Judgment {
    Acceptable = 0,
    Unacceptable = 1,
    Indistinguishable = 2,
}

impl MoralLabel {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn other(self) -> MoralLabel {
        match self {
            MoralLabel::Acceptable => MoralLabel::Unacceptable,
            MoralLabel::Unacceptable => MoralLabel::Acceptable,
        }
    }
}

impl Judgment {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    /// The binary label, or `None` for `Indistinguishable`.
    pub fn binary(self) -> Option<MoralLabel> {
        match self {
            Judgment::Acceptable => Some(MoralLabel::Acceptable),
            Judgment::Unacceptable => Some(MoralLabel::Unacceptable),
            Judgment::Indistinguishable => None,
        }
    }
}

impl From<MoralLabel> for u8 {
    fn from(l: MoralLabel) -> u8 {
        l.as_u8()
    }
}

impl From<Judgment> for u8 {
    fn from(j: Judgment) -> u8 {
        j.as_u8()
    }
}

impl From<MoralLabel> for Judgment {
    fn from(l: MoralLabel) -> Judgment {
        match l {
            MoralLabel::Acceptable => Judgment::Acceptable,
            MoralLabel::Unacceptable => Judgment::Unacceptable,
        }
    }
}

impl TryFrom<u8> for MoralLabel {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(MoralLabel::Acceptable),
            1 => Ok(MoralLabel::Unacceptable),
            other => Err(format!("binary label must be 0 or 1, got {other}")),
        }
    }
}

impl TryFrom<u8> for Judgment {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Judgment::Acceptable),
            1 => Ok(Judgment::Unacceptable),
            2 => Ok(Judgment::Indistinguishable),
            other => Err(format!("judgment must be 0, 1 or 2, got {other}")),
        }
    }
}

impl fmt::Display for MoralLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

impl fmt::Display for Judgment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Original,
    Generated,
}

/// One corpus row.
///
/// The label is stored as a [`Judgment`] so that intermediate files may carry
/// label 2; final corpora only ever hold 0 and 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub id: String,
    pub text: String,
    pub label: Judgment,
    #[serde(default)]
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
}

impl LabeledSentence {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: MoralLabel) -> Self {
        LabeledSentence {
            id: id.into(),
            text: text.into(),
            label: label.into(),
            origin: Origin::Original,
            pair_id: None,
        }
    }
}

/// An acceptable/unacceptable sentence pair differing in a contiguous span.
///
/// Pairs with identical texts are representable so that the masker can
/// record them as a rejection instead of failing the run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub pair_id: String,
    pub acceptable: LabeledSentence,
    pub unacceptable: LabeledSentence,
}

impl SentencePair {
    /// Builds a pair from two sentences in either order. Returns `None` unless
    /// exactly one of them is labeled 0 and the other 1.
    pub fn from_members(
        pair_id: impl Into<String>,
        a: LabeledSentence,
        b: LabeledSentence,
    ) -> Option<SentencePair> {
        let pair_id = pair_id.into();
        let (mut acceptable, mut unacceptable) = match (a.label, b.label) {
            (Judgment::Acceptable, Judgment::Unacceptable) => (a, b),
            (Judgment::Unacceptable, Judgment::Acceptable) => (b, a),
            _ => return None,
        };
        acceptable.pair_id = Some(pair_id.clone());
        unacceptable.pair_id = Some(pair_id.clone());
        Some(SentencePair {
            pair_id,
            acceptable,
            unacceptable,
        })
    }

    pub fn texts(&self) -> [&str; 2] {
        [&self.acceptable.text, &self.unacceptable.text]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub source: String,
    pub split: Option<Split>,
    pub note: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub sentences: Vec<LabeledSentence>,
    pub meta: CorpusMeta,
}

impl Corpus {
    pub fn new(sentences: Vec<LabeledSentence>) -> Self {
        Corpus {
            sentences,
            meta: CorpusMeta::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Checks id uniqueness and non-empty texts.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.sentences.len());
        for s in &self.sentences {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate sentence id {:?}",
                    s.id
                )));
            }
            if normalize_text(&s.text).is_empty() {
                return Err(Error::InvalidInput(format!(
                    "sentence {:?} has empty text",
                    s.id
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// File formats

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    #[default]
    Csv,
    Tsv,
    /// One JSON record per line, fields named as in [`LabeledSentence`].
    JsonLines,
}

impl FileFormat {
    fn delimiter(self) -> u8 {
        match self {
            FileFormat::Tsv => b'\t',
            _ => b',',
        }
    }
}

/// A column addressed by header name or by zero-based position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl ColumnRef {
    pub fn name(n: impl Into<String>) -> Self {
        ColumnRef::Name(n.into())
    }
}

impl From<&str> for ColumnRef {
    fn from(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        }
    }
}

/// Column and delimiter mapping for corpus files.
///
/// The defaults match the released JCM training files: comma-separated with a
/// header row and the columns `sent,label`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FormatConfig {
    pub format: FileFormat,
    pub has_header: bool,
    pub text_column: ColumnRef,
    pub label_column: ColumnRef,
    pub id_column: Option<ColumnRef>,
    pub pair_column: Option<ColumnRef>,
    /// Permit label 2 (intermediate pipeline files only).
    pub allow_label_2: bool,
}

impl Default for FormatConfig {
    fn default() -> Self {
        FormatConfig {
            format: FileFormat::Csv,
            has_header: true,
            text_column: ColumnRef::name("sent"),
            label_column: ColumnRef::name("label"),
            id_column: None,
            pair_column: None,
            allow_label_2: false,
        }
    }
}

impl FormatConfig {
    pub fn json_lines() -> Self {
        FormatConfig {
            format: FileFormat::JsonLines,
            ..FormatConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Field {
    Id,
    Text,
    Label,
    Pair,
}

impl Field {
    fn default_name(self) -> &'static str {
        match self {
            Field::Id => "id",
            Field::Text => "text",
            Field::Label => "label",
            Field::Pair => "pair_id",
        }
    }
}

fn configured_fields(cfg: &FormatConfig) -> Vec<(Field, &ColumnRef)> {
    let mut out = Vec::with_capacity(4);
    if let Some(c) = &cfg.id_column {
        out.push((Field::Id, c));
    }
    out.push((Field::Text, &cfg.text_column));
    out.push((Field::Label, &cfg.label_column));
    if let Some(c) = &cfg.pair_column {
        out.push((Field::Pair, c));
    }
    out
}

fn resolve_column(col: &ColumnRef, header: Option<&[String]>, path: &Path) -> Result<usize> {
    match (col, header) {
        (ColumnRef::Index(i), _) => Ok(*i),
        (ColumnRef::Name(name), Some(h)) => h
            .iter()
            .position(|c| c.trim().eq_ignore_ascii_case(name.trim()))
            .ok_or_else(|| Error::Malformed {
                path: path.to_path_buf(),
                line: 1,
                message: format!("header has no column named {name:?} (columns: {h:?})"),
            }),
        (ColumnRef::Name(name), None) => Err(Error::Config(format!(
            "column {name:?} is addressed by name but the file has no header row"
        ))),
    }
}

fn parse_label(raw: &str, allow_label_2: bool, path: &Path, line: u64) -> Result<Judgment> {
    let bad = || Error::Label {
        path: path.to_path_buf(),
        line,
        value: raw.to_string(),
    };
    let v: u8 = raw.trim().parse().map_err(|_| bad())?;
    match Judgment::try_from(v) {
        Ok(Judgment::Indistinguishable) if !allow_label_2 => Err(bad()),
        Ok(j) => Ok(j),
        Err(_) => Err(bad()),
    }
}

/// Reads a corpus file. Rows keep their file order; without an id column the
/// zero-based row index becomes the id.
pub fn load_corpus(path: impl AsRef<Path>, cfg: &FormatConfig) -> Result<Corpus> {
    let path = path.as_ref();
    let sentences = match cfg.format {
        FileFormat::JsonLines => load_json_lines(path, cfg)?,
        FileFormat::Csv | FileFormat::Tsv => load_delimited(path, cfg)?,
    };
    let mut seen = HashSet::with_capacity(sentences.len());
    for s in &sentences {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line: 0,
                message: format!("duplicate id {:?}", s.id),
            });
        }
    }
    Ok(Corpus {
        sentences,
        meta: CorpusMeta {
            source: path.display().to_string(),
            split: None,
            note: String::new(),
        },
    })
}

fn load_delimited(path: &Path, cfg: &FormatConfig) -> Result<Vec<LabeledSentence>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(cfg.format.delimiter())
        .has_headers(false)
        .flexible(true)
        .from_reader(BufReader::new(file));

    let mut records = reader.byte_records();
    let header: Option<Vec<String>> = if cfg.has_header {
        match records.next() {
            None => return Ok(Vec::new()),
            Some(rec) => {
                let rec = rec.map_err(|e| csv_error(path, e))?;
                let mut names = Vec::with_capacity(rec.len());
                for field in rec.iter() {
                    let s = std::str::from_utf8(field).map_err(|_| Error::Encoding {
                        path: path.to_path_buf(),
                        line: 1,
                    })?;
                    names.push(s.trim_start_matches('\u{feff}').to_string());
                }
                Some(names)
            }
        }
    } else {
        None
    };

    let fields = configured_fields(cfg);
    let mut positions = Vec::with_capacity(fields.len());
    for (field, col) in &fields {
        positions.push((*field, resolve_column(col, header.as_deref(), path)?));
    }
    let min_width = positions.iter().map(|(_, i)| i + 1).max().unwrap_or(0);
    let expected_width = header.as_ref().map(Vec::len);

    let mut out = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let width = rec.len();
        let ok = match expected_width {
            Some(w) => width == w,
            None => width >= min_width,
        };
        if !ok {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line,
                message: format!(
                    "expected {} columns, found {width}",
                    expected_width.unwrap_or(min_width)
                ),
            });
        }
        let get = |i: usize| -> Result<&str> {
            std::str::from_utf8(&rec[i]).map_err(|_| Error::Encoding {
                path: path.to_path_buf(),
                line,
            })
        };

        let row_index = out.len();
        let mut sentence = LabeledSentence {
            id: row_index.to_string(),
            text: String::new(),
            label: Judgment::Acceptable,
            origin: Origin::Original,
            pair_id: None,
        };
        for (field, idx) in &positions {
            let value = get(*idx)?;
            match field {
                Field::Id => sentence.id = value.to_string(),
                Field::Text => sentence.text = value.to_string(),
                Field::Label => sentence.label = parse_label(value, cfg.allow_label_2, path, line)?,
                Field::Pair => {
                    if !value.trim().is_empty() {
                        sentence.pair_id = Some(value.to_string());
                    }
                }
            }
        }
        if normalize_text(&sentence.text).is_empty() {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line,
                message: "empty text".into(),
            });
        }
        out.push(sentence);
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        csv::ErrorKind::Utf8 { .. } => Error::Encoding {
            path: path.to_path_buf(),
            line,
        },
        other => Error::Malformed {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

#[derive(Deserialize)]
struct JsonRow {
    id: Option<String>,
    text: String,
    label: u8,
    #[serde(default)]
    origin: Origin,
    #[serde(default)]
    pair_id: Option<String>,
}

fn load_json_lines(path: &Path, cfg: &FormatConfig) -> Result<Vec<LabeledSentence>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut buf = Vec::new();
    let mut reader = BufReader::new(file);
    let mut line_no = 0u64;
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let line = std::str::from_utf8(&buf).map_err(|_| Error::Encoding {
            path: path.to_path_buf(),
            line: line_no,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonRow = serde_json::from_str(line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let label = parse_label(&row.label.to_string(), cfg.allow_label_2, path, line_no)?;
        if normalize_text(&row.text).is_empty() {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line: line_no,
                message: "empty text".into(),
            });
        }
        out.push(LabeledSentence {
            id: row.id.unwrap_or_else(|| out.len().to_string()),
            text: row.text,
            label,
            origin: row.origin,
            pair_id: row.pair_id,
        });
    }
    Ok(out)
}

/// Writes a corpus so that [`load_corpus`] with the same config reproduces its
/// texts, labels and order.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>, cfg: &FormatConfig) -> Result<()> {
    let path = path.as_ref();
    if !cfg.allow_label_2 {
        if let Some(s) = corpus
            .sentences
            .iter()
            .find(|s| s.label == Judgment::Indistinguishable)
        {
            return Err(Error::InvalidInput(format!(
                "sentence {:?} carries label 2, which final corpora may not contain",
                s.id
            )));
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match cfg.format {
        FileFormat::JsonLines => {
            for s in &corpus.sentences {
                serde_json::to_writer(&mut w, s)
                    .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
                w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
        }
        FileFormat::Csv | FileFormat::Tsv => write_delimited(corpus, &mut w, cfg, path)?,
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_delimited<W: Write>(corpus: &Corpus, w: W, cfg: &FormatConfig, path: &Path) -> Result<()> {
    // Indexed columns keep their position; named ones fill the free slots in
    // id, text, label, pair order.
    let fields = configured_fields(cfg);
    let width = fields
        .iter()
        .map(|(_, c)| match c {
            ColumnRef::Index(i) => i + 1,
            ColumnRef::Name(_) => 0,
        })
        .max()
        .unwrap_or(0)
        .max(fields.len());
    let mut slots: Vec<Option<(Field, String)>> = vec![None; width];
    for (field, col) in &fields {
        if let ColumnRef::Index(i) = col {
            if slots[*i].is_some() {
                return Err(Error::Config(format!("two fields mapped to column {i}")));
            }
            slots[*i] = Some((*field, field.default_name().to_string()));
        }
    }
    for (field, col) in &fields {
        if let ColumnRef::Name(name) = col {
            let free = slots.iter().position(Option::is_none).ok_or_else(|| {
                Error::Invariant("no free column slot while laying out corpus".into())
            })?;
            slots[free] = Some((*field, name.clone()));
        }
    }

    let mut writer = csv::WriterBuilder::new()
        .delimiter(cfg.format.delimiter())
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(w);
    let wrap = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    if cfg.has_header {
        let header: Vec<&str> = slots
            .iter()
            .map(|s| s.as_ref().map(|(_, n)| n.as_str()).unwrap_or(""))
            .collect();
        writer.write_record(&header).map_err(wrap)?;
    }
    for s in &corpus.sentences {
        let label = s.label.to_string();
        let row: Vec<&str> = slots
            .iter()
            .map(|slot| match slot {
                None => "",
                Some((Field::Id, _)) => s.id.as_str(),
                Some((Field::Text, _)) => s.text.as_str(),
                Some((Field::Label, _)) => label.as_str(),
                Some((Field::Pair, _)) => s.pair_id.as_deref().unwrap_or(""),
            })
            .collect();
        writer.write_record(&row).map_err(wrap)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Pairing

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingStrategy {
    /// Rows (2k, 2k+1) form a pair when their labels are {0, 1}.
    #[default]
    Adjacent,
    /// Rows sharing a `pair_id` form a pair; each group needs one 0 and one 1.
    ExplicitColumn,
}

#[derive(Clone, Debug, Default)]
pub struct Pairing {
    pub pairs: Vec<SentencePair>,
    pub unpaired: Vec<LabeledSentence>,
}

pub fn pair_sentences(corpus: &Corpus, strategy: PairingStrategy) -> Pairing {
    let mut out = Pairing::default();
    match strategy {
        PairingStrategy::Adjacent => {
            let mut chunks = corpus.sentences.chunks_exact(2);
            for (k, chunk) in chunks.by_ref().enumerate() {
                let pair_id = format!("p{k}");
                match SentencePair::from_members(&pair_id, chunk[0].clone(), chunk[1].clone()) {
                    Some(p) => out.pairs.push(p),
                    None => {
                        log::warn!(
                            "rows {:?} and {:?} do not form a 0/1 pair; left unpaired",
                            chunk[0].id,
                            chunk[1].id
                        );
                        out.unpaired.extend(chunk.iter().cloned());
                    }
                }
            }
            if let [last] = chunks.remainder() {
                log::warn!("trailing row {:?} has no partner; left unpaired", last.id);
                out.unpaired.push(last.clone());
            }
        }
        PairingStrategy::ExplicitColumn => {
            let mut order: Vec<&str> = Vec::new();
            let mut groups: HashMap<&str, Vec<&LabeledSentence>> = HashMap::new();
            for s in &corpus.sentences {
                match s.pair_id.as_deref() {
                    Some(id) => {
                        let g = groups.entry(id).or_default();
                        if g.is_empty() {
                            order.push(id);
                        }
                        g.push(s);
                    }
                    None => out.unpaired.push(s.clone()),
                }
            }
            for id in order {
                let group = &groups[id];
                let pair = match group.as_slice() {
                    [a, b] => SentencePair::from_members(id, (*a).clone(), (*b).clone()),
                    _ => None,
                };
                match pair {
                    Some(p) => out.pairs.push(p),
                    None => {
                        log::warn!(
                            "pair group {id:?} has {} members without one 0 and one 1; left unpaired",
                            group.len()
                        );
                        out.unpaired.extend(group.iter().map(|s| (*s).clone()));
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Normalization and overlap keys

/// NFKC, trim, and collapse internal whitespace runs to one ASCII space.
pub fn normalize_text(text: &str) -> String {
    let folded: String = text.nfkc().collect();
    let mut out = String::with_capacity(folded.len());
    for word in folded.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Equality key for overlap checks; equal iff the normalized texts are equal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DedupKey(String);

impl DedupKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

pub fn dedup_key(text: &str) -> DedupKey {
    DedupKey(normalize_text(text))
}

// ---------------------------------------------------------------------------
// Statistics

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsDelta {
    pub acceptable: i64,
    pub unacceptable: i64,
    pub total: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub acceptable: u64,
    pub unacceptable: u64,
    pub total: u64,
    pub delta_vs_base: Option<StatsDelta>,
}

fn count_labels(corpus: &Corpus) -> Result<(u64, u64)> {
    let mut counts = (0u64, 0u64);
    for s in &corpus.sentences {
        match s.label {
            Judgment::Acceptable => counts.0 += 1,
            Judgment::Unacceptable => counts.1 += 1,
            Judgment::Indistinguishable => {
                return Err(Error::InvalidInput(format!(
                    "sentence {:?} has label 2; statistics are defined on final corpora only",
                    s.id
                )))
            }
        }
    }
    Ok(counts)
}

pub fn compute_stats(corpus: &Corpus, base: Option<&Corpus>) -> Result<DatasetStats> {
    let (acceptable, unacceptable) = count_labels(corpus)?;
    let delta_vs_base = match base {
        None => None,
        Some(b) => {
            let (ba, bu) = count_labels(b)?;
            Some(StatsDelta {
                acceptable: acceptable as i64 - ba as i64,
                unacceptable: unacceptable as i64 - bu as i64,
                total: (acceptable + unacceptable) as i64 - (ba + bu) as i64,
            })
        }
    };
    Ok(DatasetStats {
        acceptable,
        unacceptable,
        total: acceptable + unacceptable,
        delta_vs_base,
    })
}

/// `12345` -> `"12,345"`.
pub fn group_thousands(n: i64) -> String {
    let digits = n.unsigned_abs().to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3 + 1);
    if n < 0 {
        out.push('-');
    }
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn signed(n: i64) -> String {
    if n >= 0 {
        format!("+{}", group_thousands(n))
    } else {
        group_thousands(n)
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} / {} / {}",
            group_thousands(self.acceptable as i64),
            group_thousands(self.unacceptable as i64),
            group_thousands(self.total as i64)
        )
    }
}

impl StatsDelta {
    pub fn render(&self) -> String {
        format!(
            "{} / {} / {}",
            signed(self.acceptable),
            signed(self.unacceptable),
            signed(self.total)
        )
    }
}

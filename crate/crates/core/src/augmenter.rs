//! The augmentation pipeline: mask, fill, reconstruct, relabel, filter.
//!
//! Pairs are processed by a bounded worker pool and gathered back in input
//! order, so the emitted corpus depends only on the LLM replies, never on
//! scheduling. Interrupted runs resume through the gateway's response cache.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    dedup_key, pair_sentences, Corpus, DedupKey, Judgment, LabeledSentence, MoralLabel, Origin,
    PairingStrategy, SentencePair,
};
use crate::error::{Error, Result};
use crate::gateway::{sanitize_fill, FillOutcome, Gateway, GatewayError, GatewayStats};
use crate::masker::{extract_mask, MaskOutcome, MaskRejection, MaskTemplate, TemplateRecord};
use crate::segmenter::{Segmenter, SegmenterConfig};

/// Kept candidates per final label and pair.
pub const CAP_PER_LABEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    Kept,
    DroppedIndistinguishable,
    DroppedDuplicateOfOriginal,
    DroppedDuplicateOfSibling,
    DroppedOverCap,
    DroppedSanitization,
    /// Only produced when cross-pair deduplication is switched on.
    DroppedDuplicateGlobal,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub pair_id: String,
    pub fill: String,
    pub text: String,
    pub intended_label: MoralLabel,
    pub relabel: Option<Judgment>,
    pub disposition: Disposition,
    pub reason: Option<String>,
    pub order_index: usize,
}

impl Candidate {
    /// The label a kept candidate is emitted with.
    pub fn final_label(&self) -> Option<MoralLabel> {
        self.relabel.and_then(Judgment::binary)
    }
}

/// `prefix + fill + suffix`. The fill must already be sanitized.
pub fn reconstruct(template: &MaskTemplate, fill: &str) -> Result<String> {
    match sanitize_fill(fill) {
        Ok(clean) if clean == fill => Ok(format!("{}{}{}", template.prefix, fill, template.suffix)),
        Ok(_) => Err(Error::InvalidInput(format!(
            "fill {fill:?} has surrounding whitespace"
        ))),
        Err(reason) => Err(Error::InvalidInput(format!("fill {fill:?}: {reason}"))),
    }
}

/// Assigns dispositions to a pair's relabeled candidates.
///
/// Rules apply in order: indistinguishable verdicts, duplicates of either
/// original sentence, duplicates of an earlier surviving sibling, then the
/// per-label cap keeping the earliest by `order_index`. Candidates already
/// dropped at sanitization keep that disposition.
pub fn filter_and_cap(pair: &SentencePair, mut candidates: Vec<Candidate>) -> Vec<Candidate> {
    candidates.sort_by_key(|c| c.order_index);
    let originals: [DedupKey; 2] = pair.texts().map(dedup_key);
    let mut seen: HashSet<DedupKey> = HashSet::new();
    let mut kept = [0usize; 2];

    for c in candidates.iter_mut() {
        if c.disposition == Disposition::DroppedSanitization {
            continue;
        }
        let Some(label) = c.final_label() else {
            c.disposition = Disposition::DroppedIndistinguishable;
            continue;
        };
        let key = dedup_key(&c.text);
        if originals.contains(&key) {
            c.disposition = Disposition::DroppedDuplicateOfOriginal;
            continue;
        }
        if !seen.insert(key) {
            c.disposition = Disposition::DroppedDuplicateOfSibling;
            continue;
        }
        let slot = &mut kept[label.as_u8() as usize];
        if *slot >= CAP_PER_LABEL {
            c.disposition = Disposition::DroppedOverCap;
        } else {
            *slot += 1;
            c.disposition = Disposition::Kept;
        }
    }
    candidates
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    pub indistinguishable: u64,
    pub duplicate_of_original: u64,
    pub duplicate_of_sibling: u64,
    pub over_cap: u64,
    pub sanitization: u64,
    pub duplicate_global: u64,
}

impl DropCounts {
    pub fn total(&self) -> u64 {
        self.indistinguishable
            + self.duplicate_of_original
            + self.duplicate_of_sibling
            + self.over_cap
            + self.sanitization
            + self.duplicate_global
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeptCounts {
    pub acceptable: u64,
    pub unacceptable: u64,
}

impl KeptCounts {
    pub fn total(&self) -> u64 {
        self.acceptable + self.unacceptable
    }
}

/// Logical LLM requests, counting parse re-asks but not transport retries or
/// cache hits, so the numbers are identical across warm and cold runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmCallCounts {
    pub generation: u64,
    pub relabel: u64,
    pub paraphrase: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    #[default]
    Mtle,
    Paraphrase,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentationReport {
    pub mode: AugmentMode,
    pub sentences_in: u64,
    pub sentences_out: u64,
    pub pairs_processed: u64,
    pub unpaired_sentences: u64,
    pub masks_accepted: u64,
    pub masks_rejected_short: u64,
    pub masks_rejected_identical: u64,
    pub segmentation_failed: u64,
    pub generation_failed: u64,
    /// Paraphrase mode: sentences whose reply never parsed.
    pub sentences_skipped: u64,
    pub candidates_generated: u64,
    pub dropped: DropCounts,
    pub relabel_unparsable: u64,
    pub kept: KeptCounts,
    pub llm_call_counts: LlmCallCounts,
    /// Effective configuration echoed for provenance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    /// Run-dependent; kept out of the serialized report.
    #[serde(skip)]
    pub wall_time: Duration,
    #[serde(skip)]
    pub gateway: GatewayStats,
}

impl AugmentationReport {
    pub fn is_flow_conserved(&self) -> bool {
        self.candidates_generated == self.kept.total() + self.dropped.total()
    }

    fn count(&mut self, c: &Candidate) {
        self.candidates_generated += 1;
        let d = &mut self.dropped;
        match c.disposition {
            Disposition::Kept => match c.final_label() {
                Some(MoralLabel::Acceptable) => self.kept.acceptable += 1,
                Some(MoralLabel::Unacceptable) => self.kept.unacceptable += 1,
                None => unreachable!("kept candidates carry a binary label"),
            },
            Disposition::DroppedIndistinguishable => d.indistinguishable += 1,
            Disposition::DroppedDuplicateOfOriginal => d.duplicate_of_original += 1,
            Disposition::DroppedDuplicateOfSibling => d.duplicate_of_sibling += 1,
            Disposition::DroppedOverCap => d.over_cap += 1,
            Disposition::DroppedSanitization => d.sanitization += 1,
            Disposition::DroppedDuplicateGlobal => d.duplicate_global += 1,
        }
    }

    /// Writes the deterministic part of the report as pretty JSON.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

// ---------------------------------------------------------------------------
// Pipeline

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum PairStatus {
    Augmented { rendered: String },
    RejectedShort { char_len: usize },
    RejectedIdentical,
    SegmentationFailed { error: String },
    GenerationFailed { error: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairResult {
    pub pair_id: String,
    pub status: PairStatus,
    pub template: Option<MaskTemplate>,
    pub candidates: Vec<Candidate>,
    pub generation_requests: u64,
    pub relabel_requests: u64,
    pub relabel_unparsable: u64,
}

impl PairResult {
    pub fn template_record(&self) -> TemplateRecord {
        let outcome = match (&self.template, &self.status) {
            (Some(t), _) => MaskOutcome::Accepted(t.clone()),
            (None, PairStatus::RejectedShort { char_len }) => {
                MaskOutcome::Rejected(MaskRejection::TooShort {
                    char_len: *char_len,
                })
            }
            _ => MaskOutcome::Rejected(MaskRejection::Identical),
        };
        let mut rec = TemplateRecord::from_outcome(&self.pair_id, &outcome);
        if let PairStatus::SegmentationFailed { .. } = self.status {
            rec.disposition = "segmentation_failed".into();
        }
        rec
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentOptions {
    pub pairing: PairingStrategy,
    /// Worker threads; `None` uses the gateway's concurrency bound.
    pub workers: Option<usize>,
    /// Also drop generated sentences that duplicate any original or any
    /// earlier kept sentence from another pair.
    pub global_dedup: bool,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            pairing: PairingStrategy::Adjacent,
            workers: None,
            global_dedup: false,
        }
    }
}

pub struct AugmentOutput {
    pub corpus: Corpus,
    pub report: AugmentationReport,
    pub pairs: Vec<PairResult>,
}

/// One line of the candidate audit file.
#[derive(Serialize)]
struct CandidateRecord<'a> {
    pair_id: &'a str,
    text: &'a str,
    intended_label: MoralLabel,
    relabel: Option<Judgment>,
    disposition: Disposition,
    reason: Option<&'a str>,
}

/// Writes one record per candidate, in emission order.
pub fn write_candidate_audit(path: impl AsRef<Path>, pairs: &[PairResult]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for c in pairs.iter().flat_map(|p| &p.candidates) {
        let rec = CandidateRecord {
            pair_id: &c.pair_id,
            text: &c.text,
            intended_label: c.intended_label,
            relabel: c.relabel,
            disposition: c.disposition,
            reason: c.reason.as_deref(),
        };
        serde_json::to_writer(&mut w, &rec)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn require_binary(corpus: &Corpus) -> Result<()> {
    match corpus
        .sentences
        .iter()
        .find(|s| s.label == Judgment::Indistinguishable)
    {
        Some(s) => Err(Error::InvalidInput(format!(
            "sentence {:?} has label 2; augmentation needs a binary corpus",
            s.id
        ))),
        None => Ok(()),
    }
}

/// Runs `work` over `0..n` on `workers` threads and returns results in index
/// order. Stops early on cancellation or on the first fatal error.
fn run_pool<T, S>(
    n: usize,
    workers: usize,
    cancel: Option<&AtomicBool>,
    init: impl Fn() -> Result<S> + Sync,
    work: impl Fn(&mut S, usize) -> Result<T> + Sync,
) -> Result<Vec<T>>
where
    T: Send,
{
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    let fatal: Mutex<Option<Error>> = Mutex::new(None);
    let started = Instant::now();

    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            s.spawn(|| {
                let mut state = match init() {
                    Ok(st) => st,
                    Err(e) => {
                        stop.store(true, Ordering::SeqCst);
                        fatal.lock().unwrap().get_or_insert(e);
                        return;
                    }
                };
                loop {
                    if stop.load(Ordering::SeqCst)
                        || cancel.is_some_and(|c| c.load(Ordering::SeqCst))
                    {
                        return;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= n {
                        return;
                    }
                    match work(&mut state, i) {
                        Ok(v) => {
                            slots.lock().unwrap()[i] = Some(v);
                            let k = done.fetch_add(1, Ordering::SeqCst) + 1;
                            if k.is_multiple_of(500) || k == n {
                                log::info!("{k}/{n} items done ({:.1?})", started.elapsed());
                            }
                        }
                        Err(e) => {
                            stop.store(true, Ordering::SeqCst);
                            fatal.lock().unwrap().get_or_insert(e);
                            return;
                        }
                    }
                }
            });
        }
    });

    if let Some(e) = fatal.into_inner().unwrap() {
        return Err(e);
    }
    let slots = slots.into_inner().unwrap();
    if slots.iter().any(Option::is_none) {
        return Err(Error::Interrupted);
    }
    Ok(slots.into_iter().map(Option::unwrap).collect())
}

fn process_pair(
    pair: &SentencePair,
    segmenter: &mut Segmenter,
    gateway: &Gateway,
) -> Result<PairResult> {
    let mut result = PairResult {
        pair_id: pair.pair_id.clone(),
        status: PairStatus::RejectedIdentical,
        template: None,
        candidates: Vec::new(),
        generation_requests: 0,
        relabel_requests: 0,
        relabel_unparsable: 0,
    };
    let template = match extract_mask(pair, segmenter) {
        Ok(MaskOutcome::Accepted(t)) => t,
        Ok(MaskOutcome::Rejected(MaskRejection::Identical)) => return Ok(result),
        Ok(MaskOutcome::Rejected(MaskRejection::TooShort { char_len })) => {
            result.status = PairStatus::RejectedShort { char_len };
            return Ok(result);
        }
        Err(e) => {
            log::warn!("pair {}: segmentation failed: {e}", pair.pair_id);
            result.status = PairStatus::SegmentationFailed {
                error: e.to_string(),
            };
            return Ok(result);
        }
    };
    let rendered = template.render();

    let fills = match gateway.generate_fills(&template) {
        Ok(FillOutcome::Filled(set)) => {
            result.generation_requests = set.attempts as u64;
            set
        }
        Ok(FillOutcome::GenerationFailed {
            attempts,
            last_reply,
        }) => {
            result.generation_requests = attempts as u64;
            result.status = PairStatus::GenerationFailed {
                error: format!("no usable fills; last reply {last_reply:?}"),
            };
            result.template = Some(template);
            return Ok(result);
        }
        Err(e) if e.is_fatal() => return Err(e.into()),
        Err(e) => {
            log::warn!("pair {}: generation failed: {e}", pair.pair_id);
            result.generation_requests = 1;
            result.status = PairStatus::GenerationFailed {
                error: e.to_string(),
            };
            result.template = Some(template);
            return Ok(result);
        }
    };

    let mut candidates = Vec::with_capacity(fills.entries.len());
    for (order_index, entry) in fills.entries.iter().enumerate() {
        let mut c = Candidate {
            pair_id: pair.pair_id.clone(),
            fill: entry.raw.clone(),
            text: format!("{}{}{}", template.prefix, entry.raw, template.suffix),
            intended_label: entry.intended,
            relabel: None,
            disposition: Disposition::DroppedSanitization,
            reason: None,
            order_index,
        };
        match &entry.fill {
            Err(reason) => c.reason = Some(reason.clone()),
            Ok(fill) => {
                c.fill = fill.clone();
                c.text = reconstruct(&template, fill)?;
                let verdict = match gateway.relabel(&c.text) {
                    Ok(v) => v,
                    Err(e) if e.is_fatal() => return Err(e.into()),
                    Err(e) => {
                        // Treated like an unparsable verdict.
                        log::warn!("pair {}: relabel failed: {e}", pair.pair_id);
                        result.relabel_requests += 1;
                        result.relabel_unparsable += 1;
                        c.relabel = Some(Judgment::Indistinguishable);
                        c.reason = Some(format!("relabel_failed: {e}"));
                        c.disposition = Disposition::Kept;
                        candidates.push(c);
                        continue;
                    }
                };
                result.relabel_requests += verdict.attempts as u64;
                if verdict.unparsable {
                    result.relabel_unparsable += 1;
                    c.reason = Some("relabel_unparsable".into());
                }
                c.relabel = Some(verdict.verdict);
                c.disposition = Disposition::Kept;
            }
        }
        candidates.push(c);
    }

    result.candidates = filter_and_cap(pair, candidates);
    result.status = PairStatus::Augmented { rendered };
    result.template = Some(template);
    Ok(result)
}

/// Runs the full pipeline over `corpus`.
///
/// The extended corpus holds every original sentence unchanged, followed by
/// the kept candidates in pair order and generation order.
pub fn augment_corpus(
    corpus: &Corpus,
    segmenter_config: &SegmenterConfig,
    gateway: &Gateway,
    options: &AugmentOptions,
    cancel: Option<&AtomicBool>,
) -> Result<AugmentOutput> {
    let started = Instant::now();
    require_binary(corpus)?;
    corpus.validate()?;
    segmenter_config.validate()?;
    let pairing = pair_sentences(corpus, options.pairing);
    log::info!(
        "{} pairs, {} unpaired sentences",
        pairing.pairs.len(),
        pairing.unpaired.len()
    );

    let workers = options
        .workers
        .unwrap_or(gateway.config().max_concurrent_requests);
    let mut pairs = run_pool(
        pairing.pairs.len(),
        workers,
        cancel,
        || Segmenter::new(segmenter_config.clone()),
        |seg, i| process_pair(&pairing.pairs[i], seg, gateway),
    )?;

    let mut pair_of: HashMap<&str, &str> = HashMap::new();
    for p in &pairing.pairs {
        pair_of.insert(&p.acceptable.id, &p.pair_id);
        pair_of.insert(&p.unacceptable.id, &p.pair_id);
    }

    if options.global_dedup {
        let mut seen: HashSet<DedupKey> = corpus
            .sentences
            .iter()
            .map(|s| dedup_key(&s.text))
            .collect();
        for c in pairs.iter_mut().flat_map(|p| p.candidates.iter_mut()) {
            if c.disposition == Disposition::Kept && !seen.insert(dedup_key(&c.text)) {
                c.disposition = Disposition::DroppedDuplicateGlobal;
            }
        }
    }

    let mut report = AugmentationReport {
        mode: AugmentMode::Mtle,
        sentences_in: corpus.len() as u64,
        pairs_processed: pairs.len() as u64,
        unpaired_sentences: pairing.unpaired.len() as u64,
        ..AugmentationReport::default()
    };
    let mut sentences: Vec<LabeledSentence> = corpus
        .sentences
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.pair_id = pair_of.get(s.id.as_str()).map(|p| p.to_string());
            s
        })
        .collect();

    for p in &pairs {
        match &p.status {
            PairStatus::Augmented { .. } => report.masks_accepted += 1,
            PairStatus::GenerationFailed { .. } => {
                report.masks_accepted += 1;
                report.generation_failed += 1;
            }
            PairStatus::RejectedShort { .. } => report.masks_rejected_short += 1,
            PairStatus::RejectedIdentical => report.masks_rejected_identical += 1,
            PairStatus::SegmentationFailed { .. } => report.segmentation_failed += 1,
        }
        report.llm_call_counts.generation += p.generation_requests;
        report.llm_call_counts.relabel += p.relabel_requests;
        report.relabel_unparsable += p.relabel_unparsable;
        for c in &p.candidates {
            report.count(c);
            if c.disposition != Disposition::Kept {
                continue;
            }
            let template = p.template.as_ref().ok_or_else(|| {
                Error::Invariant(format!(
                    "pair {} kept a candidate without a template",
                    p.pair_id
                ))
            })?;
            if c.text != format!("{}{}{}", template.prefix, c.fill, template.suffix) {
                return Err(Error::Invariant(format!(
                    "candidate {:?} does not follow its template",
                    c.text
                )));
            }
            let label = c.final_label().ok_or_else(|| {
                Error::Invariant(format!("kept candidate {:?} has no binary label", c.text))
            })?;
            sentences.push(LabeledSentence {
                id: format!("{}-g{}", p.pair_id, c.order_index),
                text: c.text.clone(),
                label: label.into(),
                origin: Origin::Generated,
                pair_id: Some(p.pair_id.clone()),
            });
        }
    }
    // Fold the rejected candidates back into emission order for auditing.
    for p in pairs.iter_mut() {
        p.candidates.sort_by_key(|c| c.order_index);
    }

    let mut out = Corpus {
        sentences,
        meta: corpus.meta.clone(),
    };
    out.meta.note = "original sentences followed by masked-template generations".into();
    out.validate()
        .map_err(|e| Error::Invariant(e.to_string()))?;
    report.sentences_out = out.len() as u64;
    report.wall_time = started.elapsed();
    report.gateway = gateway.stats();
    if !report.is_flow_conserved() {
        return Err(Error::Invariant("report violates flow conservation".into()));
    }
    gateway.flush_audit();
    Ok(AugmentOutput {
        corpus: out,
        report,
        pairs,
    })
}

/// Paraphrase baseline: three label-preserving rewrites per sentence, no
/// relabeling. Sentences whose reply never parses are left unexpanded.
pub fn paraphrase_augment(
    corpus: &Corpus,
    gateway: &Gateway,
    options: &AugmentOptions,
    cancel: Option<&AtomicBool>,
) -> Result<AugmentOutput> {
    let started = Instant::now();
    require_binary(corpus)?;
    corpus.validate()?;
    let workers = options
        .workers
        .unwrap_or(gateway.config().max_concurrent_requests);

    let results = run_pool(
        corpus.len(),
        workers,
        cancel,
        || Ok(()),
        |_, i| {
            let source = &corpus.sentences[i];
            let label = source.label;
            let mut result = PairResult {
                pair_id: source.id.clone(),
                status: PairStatus::Augmented {
                    rendered: source.text.clone(),
                },
                template: None,
                candidates: Vec::new(),
                generation_requests: 0,
                relabel_requests: 0,
                relabel_unparsable: 0,
            };
            let set = match gateway.paraphrase(&source.text) {
                Ok(set) => set,
                Err(e) if e.is_fatal() => return Err(e.into()),
                Err(e) => {
                    log::warn!("sentence {}: paraphrase skipped: {e}", source.id);
                    result.generation_requests = match e {
                        GatewayError::Unparsable { attempts, .. } => attempts as u64,
                        _ => 1,
                    };
                    result.status = PairStatus::GenerationFailed {
                        error: e.to_string(),
                    };
                    return Ok(result);
                }
            };
            result.generation_requests = set.attempts as u64;
            let source_key = dedup_key(&source.text);
            let mut seen = HashSet::new();
            for (order_index, (raw, clean)) in set.entries.iter().enumerate() {
                let mut c = Candidate {
                    pair_id: source.id.clone(),
                    fill: raw.clone(),
                    text: raw.clone(),
                    intended_label: label.binary().expect("binary corpus"),
                    relabel: Some(label),
                    disposition: Disposition::Kept,
                    reason: None,
                    order_index,
                };
                match clean {
                    Err(reason) => {
                        c.disposition = Disposition::DroppedSanitization;
                        c.reason = Some(reason.clone());
                    }
                    Ok(text) => {
                        c.text = text.clone();
                        c.fill = text.clone();
                        let key = dedup_key(text);
                        if key == source_key {
                            c.disposition = Disposition::DroppedDuplicateOfOriginal;
                        } else if !seen.insert(key) {
                            c.disposition = Disposition::DroppedDuplicateOfSibling;
                        }
                    }
                }
                result.candidates.push(c);
            }
            Ok(result)
        },
    )?;

    let mut report = AugmentationReport {
        mode: AugmentMode::Paraphrase,
        sentences_in: corpus.len() as u64,
        ..AugmentationReport::default()
    };
    let mut sentences = corpus.sentences.clone();
    let mut results = results;
    if options.global_dedup {
        let mut seen: HashSet<DedupKey> = corpus
            .sentences
            .iter()
            .map(|s| dedup_key(&s.text))
            .collect();
        for c in results.iter_mut().flat_map(|p| p.candidates.iter_mut()) {
            if c.disposition == Disposition::Kept && !seen.insert(dedup_key(&c.text)) {
                c.disposition = Disposition::DroppedDuplicateGlobal;
            }
        }
    }
    for r in &results {
        if let PairStatus::GenerationFailed { .. } = r.status {
            report.sentences_skipped += 1;
        }
        report.llm_call_counts.paraphrase += r.generation_requests;
        for c in &r.candidates {
            report.count(c);
            if c.disposition == Disposition::Kept {
                sentences.push(LabeledSentence {
                    id: format!("{}-para{}", r.pair_id, c.order_index),
                    text: c.text.clone(),
                    label: c.relabel.expect("inherited label"),
                    origin: Origin::Generated,
                    pair_id: Some(r.pair_id.clone()),
                });
            }
        }
    }
    let mut out = Corpus {
        sentences,
        meta: corpus.meta.clone(),
    };
    out.meta.note = "original sentences followed by paraphrase-baseline generations".into();
    out.validate()
        .map_err(|e| Error::Invariant(e.to_string()))?;
    report.sentences_out = out.len() as u64;
    report.wall_time = started.elapsed();
    report.gateway = gateway.stats();
    if !report.is_flow_conserved() {
        return Err(Error::Invariant("report violates flow conservation".into()));
    }
    gateway.flush_audit();
    Ok(AugmentOutput {
        corpus: out,
        report,
        pairs: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabeledSentence;

    fn pair() -> SentencePair {
        SentencePair::from_members(
            "p0",
            LabeledSentence::new("0", "赤ちゃんに薬を飲ませる", MoralLabel::Acceptable),
            LabeledSentence::new("1", "赤ちゃんにお酒を飲ませる", MoralLabel::Unacceptable),
        )
        .unwrap()
    }

    fn template() -> MaskTemplate {
        MaskTemplate {
            pair_id: "p0".into(),
            prefix: "赤ちゃんに".into(),
            suffix: "を飲ませる".into(),
            pair: pair(),
        }
    }

    fn cand(i: usize, fill: &str, relabel: u8) -> Candidate {
        Candidate {
            pair_id: "p0".into(),
            fill: fill.into(),
            text: format!("赤ちゃんに{fill}を飲ませる"),
            intended_label: if i < 3 {
                MoralLabel::Acceptable
            } else {
                MoralLabel::Unacceptable
            },
            relabel: Some(Judgment::try_from(relabel).unwrap()),
            disposition: Disposition::Kept,
            reason: None,
            order_index: i,
        }
    }

    fn dispositions(cs: &[Candidate]) -> Vec<Disposition> {
        cs.iter().map(|c| c.disposition).collect()
    }

    #[test]
    fn reconstruct_examples() {
        let t = MaskTemplate {
            prefix: "１９歳の子に".into(),
            suffix: "をあげた".into(),
            ..template()
        };
        assert_eq!(
            reconstruct(&t, "お菓子").unwrap(),
            "１９歳の子にお菓子をあげた"
        );
        let t = MaskTemplate {
            prefix: "".into(),
            suffix: "をあげた".into(),
            ..template()
        };
        assert_eq!(reconstruct(&t, "本").unwrap(), "本をあげた");
        assert!(reconstruct(&t, "").is_err());
        assert!(reconstruct(&t, "a<>b").is_err());
    }

    #[test]
    fn five_kept_one_indistinguishable() {
        let cs: Vec<Candidate> = ["水", "ミルク", "白湯", "ビール", "ワイン", "タバコ"]
            .iter()
            .zip([0, 0, 0, 1, 1, 2])
            .enumerate()
            .map(|(i, (f, r))| cand(i, f, r))
            .collect();
        let out = filter_and_cap(&pair(), cs);
        use Disposition::*;
        assert_eq!(
            dispositions(&out),
            [Kept, Kept, Kept, Kept, Kept, DroppedIndistinguishable]
        );
    }

    #[test]
    fn duplicate_of_original_and_sibling() {
        let cs = vec![
            cand(0, "お酒", 1),
            cand(1, "AB", 0),
            cand(2, "ＡＢ", 0),
            cand(3, "薬", 0),
        ];
        let out = filter_and_cap(&pair(), cs);
        use Disposition::*;
        assert_eq!(
            dispositions(&out),
            [
                DroppedDuplicateOfOriginal,
                Kept,
                DroppedDuplicateOfSibling,
                DroppedDuplicateOfOriginal
            ]
        );
    }

    #[test]
    fn all_acceptable_caps_at_three() {
        let cs: Vec<Candidate> = ["a", "b", "c", "d", "e", "f"]
            .iter()
            .enumerate()
            .map(|(i, f)| cand(i, f, 0))
            .collect();
        let out = filter_and_cap(&pair(), cs);
        use Disposition::*;
        assert_eq!(
            dispositions(&out),
            [
                Kept,
                Kept,
                Kept,
                DroppedOverCap,
                DroppedOverCap,
                DroppedOverCap
            ]
        );
    }

    #[test]
    fn sanitization_drops_are_preserved() {
        let mut c = cand(0, "x", 0);
        c.disposition = Disposition::DroppedSanitization;
        c.relabel = None;
        let out = filter_and_cap(&pair(), vec![c]);
        assert_eq!(out[0].disposition, Disposition::DroppedSanitization);
    }
}

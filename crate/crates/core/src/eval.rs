//! One-shot classification harness and binary classification metrics.
//!
//! The positive class is `Unacceptable` (1). Abstentions (items the backend
//! never answered parsably) are excluded from the confusion matrix and
//! reported separately.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, MoralLabel};
use crate::error::{Error, Result};
use crate::gateway::{sha256_hex, Exemplar, Gateway, GatewayError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub abstentions: u64,
}

impl ConfusionMatrix {
    pub fn evaluated(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn submitted(&self) -> u64 {
        self.evaluated() + self.abstentions
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub matrix: ConfusionMatrix,
    pub accuracy: f64,
    pub f1_binary: f64,
    pub f1_macro: f64,
    pub n_evaluated: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalResult {
    pub fn from_matrix(matrix: ConfusionMatrix) -> Self {
        let ConfusionMatrix {
            tp, fp, fn_, tn, ..
        } = matrix;
        let f1_pos = ratio(2 * tp, 2 * tp + fp + fn_);
        let f1_neg = ratio(2 * tn, 2 * tn + fn_ + fp);
        EvalResult {
            matrix,
            accuracy: ratio(tp + tn, tp + tn + fp + fn_),
            f1_binary: f1_pos,
            f1_macro: (f1_pos + f1_neg) / 2.0,
            n_evaluated: matrix.evaluated(),
        }
    }
}

/// Scores predictions against gold labels; `None` predictions are abstentions.
pub fn evaluate_predictions(
    gold: &[MoralLabel],
    pred: &[Option<MoralLabel>],
) -> Result<EvalResult> {
    if gold.len() != pred.len() {
        return Err(Error::InvalidInput(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let mut m = ConfusionMatrix::default();
    for (g, p) in gold.iter().zip(pred) {
        match (g, p) {
            (_, None) => m.abstentions += 1,
            (MoralLabel::Unacceptable, Some(MoralLabel::Unacceptable)) => m.tp += 1,
            (MoralLabel::Acceptable, Some(MoralLabel::Unacceptable)) => m.fp += 1,
            (MoralLabel::Unacceptable, Some(MoralLabel::Acceptable)) => m.fn_ += 1,
            (MoralLabel::Acceptable, Some(MoralLabel::Acceptable)) => m.tn += 1,
        }
    }
    if m.evaluated() == 0 {
        return Err(Error::InvalidInput(
            "no non-abstained predictions to score".into(),
        ));
    }
    Ok(EvalResult::from_matrix(m))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub size: usize,
    pub seed: u64,
}

/// Indices of a seeded sample, in corpus order.
pub fn sample_indices(n: usize, spec: Option<SampleSpec>) -> Vec<usize> {
    match spec {
        None => (0..n).collect(),
        Some(SampleSpec { size, .. }) if size >= n => (0..n).collect(),
        Some(SampleSpec { size, seed }) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, n, size).into_vec();
            idx.sort_unstable();
            idx
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub text: String,
    pub gold: MoralLabel,
    pub pred: Option<MoralLabel>,
    pub abstained: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub result: EvalResult,
    pub model: String,
    pub backend: String,
    pub exemplar: Exemplar,
    pub sample: Option<SampleSpec>,
    pub source: String,
    pub prompt_version: String,
    pub prompt_digest: String,
    pub config_digest: String,
    pub f1_note: String,
}

pub struct EvalRun {
    pub result: EvalResult,
    pub records: Vec<ItemRecord>,
}

/// Classifies each (sampled) sentence with the one-shot prompt. Items whose
/// reply never parses, or whose request fails, count as abstentions.
pub fn run_one_shot_eval(
    corpus: &Corpus,
    exemplar: &Exemplar,
    gateway: &Gateway,
    sample: Option<SampleSpec>,
) -> Result<EvalRun> {
    let mut gold = Vec::with_capacity(corpus.len());
    for s in &corpus.sentences {
        gold.push(s.label.binary().ok_or_else(|| {
            Error::InvalidInput(format!(
                "sentence {:?} has label 2; evaluation needs binary gold labels",
                s.id
            ))
        })?);
    }
    let picked = sample_indices(corpus.len(), sample);
    let preds: Mutex<Vec<Option<Option<MoralLabel>>>> = Mutex::new(vec![None; picked.len()]);
    let fatal: Mutex<Option<GatewayError>> = Mutex::new(None);
    let next = AtomicUsize::new(0);
    let workers = gateway
        .config()
        .max_concurrent_requests
        .clamp(1, picked.len().max(1));

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if fatal.lock().unwrap().is_some() {
                    return;
                }
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= picked.len() {
                    return;
                }
                let sentence = &corpus.sentences[picked[k]];
                let pred = match gateway.one_shot_classify(&sentence.text, exemplar) {
                    Ok(label) => Some(label),
                    Err(e) if e.is_fatal() => {
                        fatal.lock().unwrap().get_or_insert(e);
                        return;
                    }
                    Err(e) => {
                        log::warn!("item {}: abstained: {e}", sentence.id);
                        None
                    }
                };
                preds.lock().unwrap()[k] = Some(pred);
            });
        }
    });
    if let Some(e) = fatal.into_inner().unwrap() {
        return Err(e.into());
    }

    let preds = preds.into_inner().unwrap();
    let mut records = Vec::with_capacity(picked.len());
    let mut sub_gold = Vec::with_capacity(picked.len());
    let mut sub_pred = Vec::with_capacity(picked.len());
    for (k, &i) in picked.iter().enumerate() {
        let pred =
            preds[k].ok_or_else(|| Error::Invariant(format!("item {i} was never classified")))?;
        let s = &corpus.sentences[i];
        records.push(ItemRecord {
            id: s.id.clone(),
            text: s.text.clone(),
            gold: gold[i],
            pred,
            abstained: pred.is_none(),
        });
        sub_gold.push(gold[i]);
        sub_pred.push(pred);
    }
    let result = evaluate_predictions(&sub_gold, &sub_pred)?;
    gateway.flush_audit();
    Ok(EvalRun { result, records })
}

impl EvalSummary {
    pub fn new(
        run: &EvalRun,
        gateway: &Gateway,
        exemplar: &Exemplar,
        sample: Option<SampleSpec>,
        source: &str,
        config: &serde_json::Value,
    ) -> Self {
        EvalSummary {
            result: run.result,
            model: gateway.config().model_name.clone(),
            backend: gateway.backend_name().to_string(),
            exemplar: exemplar.clone(),
            sample,
            source: source.to_string(),
            prompt_version: gateway.prompts().version.clone(),
            prompt_digest: gateway.prompts().digest(),
            config_digest: sha256_hex(config.to_string().as_bytes()),
            f1_note: "f1_binary uses Unacceptable (1) as the positive class; f1_macro averages both classes".into(),
        }
    }
}

pub fn write_records(path: impl AsRef<Path>, records: &[ItemRecord]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ItemRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use MoralLabel::{Acceptable as A, Unacceptable as U};

    #[test]
    fn perfect_prediction() {
        let gold = [A, U, U, A, U];
        let pred: Vec<_> = gold.iter().copied().map(Some).collect();
        let r = evaluate_predictions(&gold, &pred).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.f1_binary, 1.0);
        assert_eq!(r.f1_macro, 1.0);
    }

    #[test]
    fn hand_case() {
        // tp=2, fp=1, fn=1, tn=1
        let gold = [U, U, A, U, A];
        let pred = [Some(U), Some(U), Some(U), Some(A), Some(A)];
        let r = evaluate_predictions(&gold, &pred).unwrap();
        assert_eq!(
            r.matrix,
            ConfusionMatrix {
                tp: 2,
                fp: 1,
                fn_: 1,
                tn: 1,
                abstentions: 0
            }
        );
        assert!((r.accuracy - 0.6).abs() < 1e-12);
        assert!((r.f1_binary - 2.0 / 3.0).abs() < 1e-12);
        // negative class: 2*1 / (2 + 1 + 1) = 0.5
        assert!((r.f1_macro - (2.0 / 3.0 + 0.5) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn all_unacceptable_predictions() {
        let gold = [A, A, A, A, A, U, U, U, U, U];
        let pred = [Some(U); 10];
        let r = evaluate_predictions(&gold, &pred).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert!((r.f1_binary - 10.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn abstentions_are_excluded() {
        let gold = [A, U, U];
        let pred = [Some(A), None, Some(U)];
        let r = evaluate_predictions(&gold, &pred).unwrap();
        assert_eq!(r.matrix.abstentions, 1);
        assert_eq!(r.n_evaluated, 2);
        assert_eq!(r.matrix.submitted(), 3);
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn errors() {
        assert!(evaluate_predictions(&[A], &[]).is_err());
        assert!(evaluate_predictions(&[A, U], &[None, None]).is_err());
    }

    #[test]
    fn zero_denominator_f1_is_zero() {
        let r = evaluate_predictions(&[A, A], &[Some(A), Some(A)]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.f1_binary, 0.0);
        assert_eq!(r.f1_macro, 0.5);
    }

    #[test]
    fn true_negatives_do_not_move_f1() {
        let gold = vec![U, U, A, U, A];
        let pred = vec![Some(U), Some(U), Some(U), Some(A), Some(A)];
        let base = evaluate_predictions(&gold, &pred).unwrap();
        let mut g2 = gold.clone();
        let mut p2 = pred.clone();
        g2.extend([A; 7]);
        p2.extend([Some(A); 7]);
        let more = evaluate_predictions(&g2, &p2).unwrap();
        assert_eq!(base.f1_binary, more.f1_binary);
        assert!(more.accuracy > base.accuracy);
    }

    #[test]
    fn sampling_is_seeded_and_ordered() {
        let a = sample_indices(100, Some(SampleSpec { size: 10, seed: 7 }));
        let b = sample_indices(100, Some(SampleSpec { size: 10, seed: 7 }));
        let c = sample_indices(100, Some(SampleSpec { size: 10, seed: 8 }));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(
            sample_indices(3, Some(SampleSpec { size: 10, seed: 1 })),
            [0, 1, 2]
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn label() -> impl Strategy<Value = MoralLabel> {
            prop_oneof![Just(A), Just(U)]
        }

        proptest! {
            #[test]
            fn permutation_invariance(
                items in prop::collection::vec((label(), label()), 1..60),
                seed in any::<u64>(),
            ) {
                use rand::seq::SliceRandom;
                let gold: Vec<_> = items.iter().map(|(g, _)| *g).collect();
                let pred: Vec<_> = items.iter().map(|(_, p)| Some(*p)).collect();
                let base = evaluate_predictions(&gold, &pred).unwrap();
                let mut shuffled = items.clone();
                shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                let gold2: Vec<_> = shuffled.iter().map(|(g, _)| *g).collect();
                let pred2: Vec<_> = shuffled.iter().map(|(_, p)| Some(*p)).collect();
                prop_assert_eq!(base, evaluate_predictions(&gold2, &pred2).unwrap());
            }
        }
    }
}

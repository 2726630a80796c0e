//! Masked-template augmentation for paired moral-judgment corpora.
//!
//! Each acceptable/unacceptable sentence pair is reduced to a mask sentence
//! (shared prefix, `<>`, shared suffix). An LLM proposes replacements for the
//! placeholder, judges every reconstructed sentence as acceptable,
//! unacceptable or indistinguishable, and the survivors are deduplicated and
//! capped at three per label before being appended to the source corpus.
//!
//! | module | role |
//! |---|---|
//! | [`corpus`] | data model, file I/O, pairing, normalization, statistics |
//! | [`segmenter`] | lossless character-level or external-analyzer segmentation |
//! | [`masker`] | mask-sentence extraction and the minimum-length filter |
//! | [`gateway`] | chat backends, prompts, retries, rate limits, cache, mock |
//! | [`augmenter`] | end-to-end pipeline and the paraphrase baseline |
//! | [`eval`] | one-shot classification harness and metrics |
//! | [`cli`] | the `mtle` command-line front end |
//!
//! The `examples/` directory of this crate has one runnable program per
//! capability; start with `cargo run --example offline_augment`.

pub mod augmenter;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod masker;
pub mod segmenter;

pub use error::{Error, Result};

pub(crate) mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        if !secs.is_finite() || secs < 0.0 {
            return Err(serde::de::Error::custom(
                "duration must be a non-negative number of seconds",
            ));
        }
        Ok(Duration::from_secs_f64(secs))
    }
}

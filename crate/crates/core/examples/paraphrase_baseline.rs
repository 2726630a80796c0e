//! The paraphrase baseline: three label-preserving rewrites per sentence.
//!
//! The mock here answers every paraphrase prompt with the same three
//! rewrites, one of which repeats the source and is dropped.
//!
//! ```text
//! cargo run --example paraphrase_baseline
//! ```

use std::path::Path;
use std::sync::Arc;

use mtle::augmenter::{paraphrase_augment, AugmentOptions};
use mtle::corpus::{load_corpus, FormatConfig};
use mtle::gateway::{BackendConfig, Gateway, MockBackend, MockFixture, MockRule, PromptSet};

fn main() -> mtle::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/pairs10.csv");
    let corpus = load_corpus(&path, &FormatConfig::default())?;

    let mut fixture = MockFixture::default();
    for s in &corpus.sentences {
        let reply = serde_json::json!({
            "paraphrases": [format!("{}。", s.text), format!("実は{}", s.text), s.text]
        });
        fixture = fixture.rule(MockRule::substring(
            format!("文: {}\n", s.text),
            reply.to_string(),
        ));
    }
    let gateway = Gateway::with_backend(
        BackendConfig::mock(),
        PromptSet::default(),
        Arc::new(MockBackend::new(fixture)),
    )?;

    let out = paraphrase_augment(&corpus, &gateway, &AugmentOptions::default(), None)?;
    for s in out.corpus.sentences.iter().skip(corpus.len()).take(6) {
        println!("{}\t{}\t{}", s.id, s.label, s.text);
    }
    let r = &out.report;
    println!(
        "\n{} in, {} out; {} duplicates of the source dropped; {} paraphrase requests",
        r.sentences_in,
        r.sentences_out,
        r.dropped.duplicate_of_original,
        r.llm_call_counts.paraphrase
    );
    Ok(())
}

//! Full augmentation run against the scripted mock backend.
//!
//! Ten fixture pairs become twenty originals plus sixty generated sentences.
//! Swap `BackendConfig::mock()` for a real config to run it live (see
//! `live_augment`).
//!
//! ```text
//! cargo run --example offline_augment
//! ```

use std::path::Path;
use std::sync::Arc;

use mtle::augmenter::{augment_corpus, AugmentOptions, Disposition};
use mtle::corpus::{compute_stats, load_corpus, FormatConfig};
use mtle::gateway::{BackendConfig, Gateway, MockBackend, MockFixture, PromptSet};
use mtle::segmenter::SegmenterConfig;

fn main() -> mtle::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let corpus = load_corpus(fixtures.join("pairs10.csv"), &FormatConfig::default())?;
    let backend = MockBackend::new(MockFixture::load(fixtures.join("mock_augment.json"))?);
    let gateway = Gateway::with_backend(
        BackendConfig::mock(),
        PromptSet::default(),
        Arc::new(backend),
    )?;

    let out = augment_corpus(
        &corpus,
        &SegmenterConfig::character_level(),
        &gateway,
        &AugmentOptions::default(),
        None,
    )?;

    for pair in out.pairs.iter().take(2) {
        println!("{}", pair.template_record().rendered.unwrap_or_default());
        for c in &pair.candidates {
            let mark = if c.disposition == Disposition::Kept {
                "+"
            } else {
                "-"
            };
            println!("  {mark} {} -> {:?}", c.text, c.final_label());
        }
    }
    let stats = compute_stats(&out.corpus, Some(&corpus))?;
    println!("\nextended corpus: {stats}");
    println!(
        "delta: {}",
        stats.delta_vs_base.expect("base given").render()
    );
    println!(
        "{}",
        serde_json::to_string_pretty(&out.report).expect("report serializes")
    );
    Ok(())
}

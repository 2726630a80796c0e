//! Masks from word-level tokens produced by an external analyzer.
//!
//! Defaults to `scripts/segment_ja.py` at the workspace root, which needs
//! fugashi or SudachiPy. Any command speaking the same line protocol works:
//!
//! ```text
//! cargo run --example external_segmenter -- python3 my_analyzer.py
//! ```

use std::path::Path;

use mtle::corpus::{load_corpus, pair_sentences, FormatConfig, PairingStrategy};
use mtle::masker::{extract_mask, MaskOutcome};
use mtle::segmenter::{Segmenter, SegmenterConfig};

fn main() -> mtle::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let mut command: Vec<String> = std::env::args().skip(1).collect();
    if command.is_empty() {
        let script = root.join("../../scripts/segment_ja.py");
        command = vec!["python3".into(), script.display().to_string()];
    }
    let corpus = load_corpus(root.join("fixtures/pairs10.csv"), &FormatConfig::default())?;
    let pairs = pair_sentences(&corpus, PairingStrategy::Adjacent).pairs;

    let mut chars = Segmenter::new(SegmenterConfig::character_level())?;
    let mut words = Segmenter::new(SegmenterConfig::external(command))?;
    for pair in &pairs {
        let show = |o: MaskOutcome| match o {
            MaskOutcome::Accepted(t) => t.render(),
            MaskOutcome::Rejected(r) => format!("({r:?})"),
        };
        let c = show(extract_mask(pair, &mut chars)?);
        let w = show(extract_mask(pair, &mut words)?);
        println!("{:<24} {w}", c);
    }
    for w in words.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(())
}

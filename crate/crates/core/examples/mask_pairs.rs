//! Extract mask sentences from a paired corpus.
//!
//! ```text
//! cargo run --example mask_pairs [-- path/to/pairs.csv]
//! ```

use std::path::PathBuf;

use mtle::corpus::{load_corpus, pair_sentences, FormatConfig, PairingStrategy};
use mtle::masker::{extract_mask, MaskOutcome};
use mtle::segmenter::{Segmenter, SegmenterConfig};

fn main() -> mtle::Result<()> {
    let path = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/pairs10.csv"));
    let corpus = load_corpus(&path, &FormatConfig::default())?;
    let pairing = pair_sentences(&corpus, PairingStrategy::Adjacent);
    let mut seg = Segmenter::new(SegmenterConfig::character_level())?;

    for pair in &pairing.pairs {
        match extract_mask(pair, &mut seg)? {
            MaskOutcome::Accepted(t) => {
                let [a, u] = t.middles();
                println!("{}\t{}\t0:{a}\t1:{u}", pair.pair_id, t.render());
            }
            MaskOutcome::Rejected(why) => println!("{}\trejected: {why:?}", pair.pair_id),
        }
    }
    if !pairing.unpaired.is_empty() {
        println!("{} sentences left unpaired", pairing.unpaired.len());
    }
    Ok(())
}

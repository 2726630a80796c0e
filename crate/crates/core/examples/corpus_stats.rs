//! Label counts for a corpus, optionally against a base corpus.
//!
//! ```text
//! cargo run --example corpus_stats -- data/ejcm_train.csv data/jcm_train.csv
//! ```

use std::path::{Path, PathBuf};

use mtle::corpus::{compute_stats, load_corpus, FormatConfig};

fn main() -> mtle::Result<()> {
    let mut args = std::env::args_os().skip(1).map(PathBuf::from);
    let input = args
        .next()
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/pairs10.csv"));
    let cfg = FormatConfig::default();
    let corpus = load_corpus(&input, &cfg)?;
    let base = args.next().map(|b| load_corpus(b, &cfg)).transpose()?;

    let stats = compute_stats(&corpus, base.as_ref())?;
    println!("{}: {stats}", input.display());
    if let Some(d) = stats.delta_vs_base {
        println!("delta vs base: {}", d.render());
    }
    Ok(())
}

//! Augmentation against a live chat-completions endpoint.
//!
//! Reads the key from `OPENAI_API_KEY` (or the variable named by
//! `MTLE_API_KEY_ENV`), caches every reply next to the output so an
//! interrupted run resumes where it stopped, and logs each exchange.
//!
//! ```text
//! OPENAI_API_KEY=... cargo run --example live_augment -- data/jcm_train.csv out/
//! ```
//!
//! The `mtle augment` subcommand does the same with more knobs.

use std::path::PathBuf;
use std::sync::atomic::AtomicBool;

use mtle::augmenter::{augment_corpus, AugmentOptions};
use mtle::corpus::{load_corpus, save_corpus, FormatConfig};
use mtle::gateway::{BackendConfig, Gateway, PromptSet};
use mtle::segmenter::SegmenterConfig;

fn main() -> mtle::Result<()> {
    env_logger::init();
    let mut args = std::env::args_os().skip(1).map(PathBuf::from);
    let (Some(input), Some(out_dir)) = (args.next(), args.next()) else {
        eprintln!("usage: live_augment INPUT.csv OUT_DIR");
        std::process::exit(2);
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| mtle::Error::io(&out_dir, e))?;

    let mut config = BackendConfig {
        cache_path: Some(out_dir.join("cache.jsonl")),
        ..BackendConfig::default()
    };
    if let Ok(var) = std::env::var("MTLE_API_KEY_ENV") {
        config.api_key_env = Some(var);
    }
    let mut gateway = Gateway::from_config(config, PromptSet::default())?;
    gateway.enable_audit(out_dir.join("exchanges.jsonl"))?;

    let format = FormatConfig::default();
    let corpus = load_corpus(&input, &format)?;
    let cancel = AtomicBool::new(false);
    let out = augment_corpus(
        &corpus,
        &SegmenterConfig::character_level(),
        &gateway,
        &AugmentOptions::default(),
        Some(&cancel),
    )?;
    save_corpus(&out.corpus, out_dir.join("extended.csv"), &format)?;
    out.report.save(out_dir.join("report.json"))?;
    println!(
        "{} -> {} sentences ({} backend requests, {} cache hits)",
        out.report.sentences_in,
        out.report.sentences_out,
        out.report.gateway.backend_requests,
        out.report.gateway.cache_hits
    );
    Ok(())
}

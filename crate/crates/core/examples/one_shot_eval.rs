//! One-shot classification with metrics, against a scripted mock.
//!
//! The fixture answers three items wrongly and one unparsably, so the run
//! ends with 19 evaluated items and one abstention.
//!
//! ```text
//! cargo run --example one_shot_eval
//! ```

use std::path::Path;
use std::sync::Arc;

use mtle::corpus::{load_corpus, FormatConfig, MoralLabel};
use mtle::eval::{run_one_shot_eval, SampleSpec};
use mtle::gateway::{BackendConfig, Exemplar, Gateway, MockBackend, MockFixture, PromptSet};

fn main() -> mtle::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let corpus = load_corpus(fixtures.join("pairs10.csv"), &FormatConfig::default())?;
    let backend = MockBackend::new(MockFixture::load(fixtures.join("mock_eval.json"))?);
    let gateway = Gateway::with_backend(
        BackendConfig::mock(),
        PromptSet::default(),
        Arc::new(backend),
    )?;
    let exemplar = Exemplar {
        text: "人の悪口を言いふらした".into(),
        label: MoralLabel::Unacceptable,
    };

    let run = run_one_shot_eval(&corpus, &exemplar, &gateway, None)?;
    let r = run.result;
    println!("{:?}", r.matrix);
    println!(
        "accuracy {:.4}  f1 {:.4}  macro-f1 {:.4}",
        r.accuracy, r.f1_binary, r.f1_macro
    );
    for rec in run.records.iter().filter(|x| x.pred != Some(x.gold)) {
        println!(
            "  {} gold {} pred {:?}",
            rec.text,
            rec.gold,
            rec.pred.map(|p| p.as_u8())
        );
    }

    // A seeded subsample picks the same items every time.
    let sample = run_one_shot_eval(
        &corpus,
        &exemplar,
        &gateway,
        Some(SampleSpec { size: 8, seed: 7 }),
    )?;
    let ids: Vec<_> = sample.records.iter().map(|x| x.id.as_str()).collect();
    println!("sample of 8 (seed 7): {ids:?}");
    Ok(())
}

//! `mtle` command-line front end: `mask`, `augment`, `stats` and `eval`.
//!
//! Settings resolve as flags > `--config` TOML file > built-in defaults, and
//! the effective configuration is echoed into every report. Progress goes to
//! standard error; result summaries go to standard output; machine-readable
//! artifacts go to files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::augmenter::{
    augment_corpus, paraphrase_augment, write_candidate_audit, AugmentOptions, AugmentOutput,
};
use crate::corpus::{
    compute_stats, load_corpus, pair_sentences, save_corpus, ColumnRef, FileFormat, FormatConfig,
    MoralLabel, PairingStrategy,
};
use crate::error::{Error, Result};
use crate::eval::{run_one_shot_eval, write_records, EvalSummary, SampleSpec};
use crate::gateway::{
    BackendConfig, BackendKind, ChatBackend, Exemplar, Gateway, PromptOverrides, PromptSet,
};
use crate::masker::{extract_mask, MaskOutcome, MaskRejection, TemplateRecord};
use crate::segmenter::{Segmenter, SegmenterBackend, SegmenterConfig};

pub mod exit {
    pub const OK: u8 = 0;
    pub const INTERNAL: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;
    pub const BACKEND: u8 = 4;
    pub const CONFIG: u8 = 5;
    pub const INTERRUPTED: u8 = 130;
}

pub fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io { .. }
        | Error::Malformed { .. }
        | Error::Label { .. }
        | Error::Encoding { .. } => exit::IO,
        Error::InvalidInput(_) => exit::IO,
        Error::Config(_) => exit::CONFIG,
        Error::Segmenter(_) | Error::Gateway(_) => exit::BACKEND,
        Error::Interrupted => exit::INTERRUPTED,
        Error::Invariant(_) => exit::INTERNAL,
    }
}

/// Everything a run needs, serializable as TOML.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub format: FormatConfig,
    pub segmenter: SegmenterConfig,
    pub backend: BackendConfig,
    pub prompts: PromptOverrides,
    pub augment: AugmentOptions,
    pub sample_size: Option<usize>,
    pub seed: Option<u64>,
    pub audit_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// The config as JSON for report echoes. Holds the key's variable name
    /// only, never the key.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "mtle",
    version,
    about = "Masked-template augmentation for paired moral-judgment corpora"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default)]
pub struct GlobalArgs {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendArg>,
    /// Mock fixture file (JSON).
    #[arg(long, global = true)]
    pub fixtures: Option<PathBuf>,
    /// Response cache; also the resume checkpoint.
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    /// Directory for audit logs (exchanges, templates, candidates, metrics).
    #[arg(long, global = true)]
    pub audit_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[arg(long, global = true)]
    pub api_key_env: Option<String>,
    #[arg(long, global = true)]
    pub max_concurrent: Option<usize>,
    #[arg(long, global = true)]
    pub max_retries: Option<u32>,
    #[command(flatten)]
    pub format: FormatArgs,
    /// -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Args, Debug, Default)]
pub struct FormatArgs {
    #[arg(long = "format", global = true, value_enum)]
    pub file_format: Option<FormatArg>,
    /// Text column (header name or zero-based index).
    #[arg(long, global = true)]
    pub text_column: Option<String>,
    #[arg(long, global = true)]
    pub label_column: Option<String>,
    #[arg(long, global = true)]
    pub id_column: Option<String>,
    #[arg(long, global = true)]
    pub pair_column: Option<String>,
    #[arg(long, global = true)]
    pub no_header: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BackendArg {
    Http,
    Mock,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Csv,
    Tsv,
    Jsonl,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PairingArg {
    Adjacent,
    Explicit,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SegmenterArg {
    Character,
    External,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BaselineArg {
    Paraphrase,
}

#[derive(Args, Debug, Default)]
pub struct MaskingArgs {
    #[arg(long, value_enum)]
    pub pairing: Option<PairingArg>,
    #[arg(long, value_enum)]
    pub segmenter: Option<SegmenterArg>,
    /// Analyzer command line, split on whitespace.
    #[arg(long)]
    pub analyzer: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Extract mask sentences from sentence pairs.
    Mask {
        input: PathBuf,
        /// Template dump (JSON lines).
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        masking: MaskingArgs,
    },
    /// Run the full augmentation pipeline.
    Augment {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Report path; defaults to OUTPUT with a `.report.json` suffix.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
        #[arg(long)]
        global_dedup: bool,
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        masking: MaskingArgs,
    },
    /// Count sentences per label, optionally against a base corpus.
    Stats {
        input: PathBuf,
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// One-shot LLM classification over a labeled corpus.
    Eval {
        input: Option<PathBuf>,
        /// Evaluate this file instead of INPUT (e.g. a curated subset).
        #[arg(long)]
        subset: Option<PathBuf>,
        /// Text of the single labeled example shown in the prompt.
        #[arg(long)]
        exemplar: String,
        #[arg(long)]
        exemplar_label: u8,
        #[arg(long)]
        sample: Option<usize>,
        /// Per-item record file (JSON lines).
        #[arg(long, default_value = "eval_records.jsonl")]
        records: PathBuf,
        /// Summary document; defaults to RECORDS with a `.summary.json` suffix.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn column(s: &str) -> ColumnRef {
    ColumnRef::from(s)
}

/// Applies flags over the config file over defaults.
pub fn resolve_config(
    global: &GlobalArgs,
    masking: Option<&MaskingArgs>,
) -> Result<PipelineConfig> {
    let mut cfg = match &global.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(b) = global.backend {
        cfg.backend.kind = match b {
            BackendArg::Http => BackendKind::Http,
            BackendArg::Mock => BackendKind::Mock,
        };
    }
    if let Some(f) = &global.fixtures {
        cfg.backend.fixtures = Some(f.clone());
    }
    if let Some(c) = &global.cache {
        cfg.backend.cache_path = Some(c.clone());
    }
    if let Some(m) = &global.model {
        cfg.backend.model_name = m.clone();
    }
    if let Some(e) = &global.endpoint {
        cfg.backend.endpoint_url = Some(e.clone());
    }
    if let Some(k) = &global.api_key_env {
        cfg.backend.api_key_env = Some(k.clone());
    }
    if let Some(n) = global.max_concurrent {
        cfg.backend.max_concurrent_requests = n;
    }
    if let Some(n) = global.max_retries {
        cfg.backend.max_retries = n;
    }
    if let Some(d) = &global.audit_dir {
        cfg.audit_dir = Some(d.clone());
    }
    if let Some(s) = global.seed {
        cfg.seed = Some(s);
    }

    let f = &global.format;
    if let Some(ff) = f.file_format {
        cfg.format.format = match ff {
            FormatArg::Csv => FileFormat::Csv,
            FormatArg::Tsv => FileFormat::Tsv,
            FormatArg::Jsonl => FileFormat::JsonLines,
        };
    }
    if let Some(c) = &f.text_column {
        cfg.format.text_column = column(c);
    }
    if let Some(c) = &f.label_column {
        cfg.format.label_column = column(c);
    }
    if let Some(c) = &f.id_column {
        cfg.format.id_column = Some(column(c));
    }
    if let Some(c) = &f.pair_column {
        cfg.format.pair_column = Some(column(c));
    }
    if f.no_header {
        cfg.format.has_header = false;
    }

    if let Some(m) = masking {
        if let Some(p) = m.pairing {
            cfg.augment.pairing = match p {
                PairingArg::Adjacent => PairingStrategy::Adjacent,
                PairingArg::Explicit => PairingStrategy::ExplicitColumn,
            };
        }
        if let Some(s) = m.segmenter {
            cfg.segmenter.backend = match s {
                SegmenterArg::Character => SegmenterBackend::CharacterLevel,
                SegmenterArg::External => SegmenterBackend::ExternalAnalyzer,
            };
        }
        if let Some(a) = &m.analyzer {
            cfg.segmenter.analyzer_command =
                Some(a.split_whitespace().map(str::to_string).collect());
        }
    }
    if cfg.backend.kind == BackendKind::Mock {
        // Scripted failures should not stall offline runs.
        let mock = BackendConfig::mock();
        cfg.backend.retry_base_delay = cfg.backend.retry_base_delay.min(mock.retry_base_delay);
        cfg.backend.retry_max_delay = cfg.backend.retry_max_delay.min(mock.retry_max_delay);
    }
    Ok(cfg)
}

/// Process-wide interrupt flag, installed once by [`main`].
fn interrupt_flag() -> &'static Arc<AtomicBool> {
    static FLAG: OnceLock<Arc<AtomicBool>> = OnceLock::new();
    FLAG.get_or_init(|| Arc::new(AtomicBool::new(false)))
}

/// Entry point for the `mtle` binary.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            });
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    let flag = interrupt_flag().clone();
    if let Err(e) = ctrlc::set_handler(move || {
        eprintln!("interrupt received; finishing in-flight work and flushing the cache");
        flag.store(true, Ordering::SeqCst);
    }) {
        log::warn!("could not install interrupt handler: {e}");
    }
    ExitCode::from(run(cli, &mut std::io::stdout(), Some(interrupt_flag())))
}

/// Runs a parsed command line, writing the human summary to `out`. Returns the
/// process exit code.
pub fn run(cli: Cli, out: &mut dyn Write, cancel: Option<&AtomicBool>) -> u8 {
    match dispatch(cli, out, cancel, None) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

/// Like [`run`] but takes argv, for embedding and tests. Usage errors return
/// [`exit::USAGE`].
pub fn run_args<I, T>(args: I, out: &mut dyn Write, cancel: Option<&AtomicBool>) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli, out, cancel),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            }
        }
    }
}

/// Runs with an injected backend instead of the configured one.
pub fn run_with_backend(
    cli: Cli,
    out: &mut dyn Write,
    cancel: Option<&AtomicBool>,
    backend: Arc<dyn ChatBackend>,
) -> u8 {
    match dispatch(cli, out, cancel, Some(backend)) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn build_gateway(cfg: &PipelineConfig, backend: Option<Arc<dyn ChatBackend>>) -> Result<Gateway> {
    let prompts = PromptSet::with_overrides(&cfg.prompts)?;
    let mut gw = match backend {
        Some(b) => Gateway::with_backend(cfg.backend.clone(), prompts, b)?,
        None => Gateway::from_config(cfg.backend.clone(), prompts)?,
    };
    if let Some(dir) = &cfg.audit_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        gw.enable_audit(dir.join("exchanges.jsonl"))?;
    }
    Ok(gw)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn io_out(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn dispatch(
    cli: Cli,
    out: &mut dyn Write,
    cancel: Option<&AtomicBool>,
    backend: Option<Arc<dyn ChatBackend>>,
) -> Result<()> {
    match cli.command {
        Command::Mask {
            input,
            output,
            masking,
        } => {
            let cfg = resolve_config(&cli.global, Some(&masking))?;
            cmd_mask(&cfg, &input, output.as_deref(), out)
        }
        Command::Augment {
            input,
            output,
            report,
            baseline,
            global_dedup,
            workers,
            masking,
        } => {
            let mut cfg = resolve_config(&cli.global, Some(&masking))?;
            if global_dedup {
                cfg.augment.global_dedup = true;
            }
            if workers.is_some() {
                cfg.augment.workers = workers;
            }
            let report = report.unwrap_or_else(|| with_suffix(&output, ".report.json"));
            cmd_augment(
                &cfg,
                &input,
                &output,
                &report,
                baseline.is_some(),
                backend,
                out,
                cancel,
            )
        }
        Command::Stats { input, base, json } => {
            let cfg = resolve_config(&cli.global, None)?;
            cmd_stats(&cfg, &input, base.as_deref(), json.as_deref(), out)
        }
        Command::Eval {
            input,
            subset,
            exemplar,
            exemplar_label,
            sample,
            records,
            summary,
        } => {
            let mut cfg = resolve_config(&cli.global, None)?;
            if sample.is_some() {
                cfg.sample_size = sample;
            }
            let path = subset
                .or(input)
                .ok_or_else(|| Error::Config("eval needs an INPUT file or --subset".into()))?;
            let label = MoralLabel::try_from(exemplar_label).map_err(Error::Config)?;
            let exemplar = Exemplar {
                text: exemplar,
                label,
            };
            let summary = summary.unwrap_or_else(|| with_suffix(&records, ".summary.json"));
            cmd_eval(&cfg, &path, &exemplar, &records, &summary, backend, out)
        }
    }
}

pub fn cmd_mask(
    cfg: &PipelineConfig,
    input: &Path,
    output: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let corpus = load_corpus(input, &cfg.format)?;
    let pairing = pair_sentences(&corpus, cfg.augment.pairing);
    let mut segmenter = Segmenter::new(cfg.segmenter.clone())?;
    let mut writer = match output {
        Some(p) => Some((
            BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?),
            p,
        )),
        None => None,
    };
    let (mut accepted, mut short, mut identical) = (0u64, 0u64, 0u64);
    for pair in &pairing.pairs {
        let outcome = extract_mask(pair, &mut segmenter)?;
        match &outcome {
            MaskOutcome::Accepted(_) => accepted += 1,
            MaskOutcome::Rejected(MaskRejection::TooShort { .. }) => short += 1,
            MaskOutcome::Rejected(MaskRejection::Identical) => identical += 1,
        }
        if let Some((w, p)) = writer.as_mut() {
            let rec = TemplateRecord::from_outcome(&pair.pair_id, &outcome);
            serde_json::to_writer(&mut *w, &rec)
                .map_err(|e| Error::io(*p, std::io::Error::other(e)))?;
            w.write_all(b"\n").map_err(|e| Error::io(*p, e))?;
        }
    }
    if let Some((mut w, p)) = writer {
        w.flush().map_err(|e| Error::io(p, e))?;
    }
    for warning in segmenter.warnings() {
        log::warn!("{warning}");
    }
    writeln!(
        out,
        "sentences: {}\npairs: {}\nunpaired: {}\ntemplates: {accepted}\nrejected (too short): {short}\nrejected (identical): {identical}",
        corpus.len(),
        pairing.pairs.len(),
        pairing.unpaired.len()
    )
    .map_err(io_out)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_augment(
    cfg: &PipelineConfig,
    input: &Path,
    output: &Path,
    report_path: &Path,
    paraphrase: bool,
    backend: Option<Arc<dyn ChatBackend>>,
    out: &mut dyn Write,
    cancel: Option<&AtomicBool>,
) -> Result<()> {
    let corpus = load_corpus(input, &cfg.format)?;
    let gateway = build_gateway(cfg, backend)?;
    let result = if paraphrase {
        paraphrase_augment(&corpus, &gateway, &cfg.augment, cancel)
    } else {
        augment_corpus(&corpus, &cfg.segmenter, &gateway, &cfg.augment, cancel)
    };
    gateway.flush_audit();
    let AugmentOutput {
        corpus: extended,
        mut report,
        pairs,
    } = result?;
    report.config = Some(cfg.echo());

    save_corpus(&extended, output, &cfg.format)?;
    report.save(report_path)?;
    if let Some(dir) = &cfg.audit_dir {
        write_candidate_audit(dir.join("candidates.jsonl"), &pairs)?;
        if !paraphrase {
            let path = dir.join("templates.jsonl");
            let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
            for p in &pairs {
                serde_json::to_writer(&mut w, &p.template_record())
                    .map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
                w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        write_json(
            &dir.join("metrics.json"),
            &serde_json::json!({
                "wall_time_secs": report.wall_time.as_secs_f64(),
                "gateway": report.gateway,
            }),
        )?;
    }
    eprintln!(
        "{} backend requests, {} cache hits, {:.1?}",
        report.gateway.backend_requests, report.gateway.cache_hits, report.wall_time
    );
    writeln!(
        out,
        "input: {}\noutput: {}\ncandidates: {}\nkept: {} (acceptable {}, unacceptable {})\ndropped: {}",
        report.sentences_in,
        report.sentences_out,
        report.candidates_generated,
        report.kept.total(),
        report.kept.acceptable,
        report.kept.unacceptable,
        report.dropped.total()
    )
    .map_err(io_out)
}

pub fn cmd_stats(
    cfg: &PipelineConfig,
    input: &Path,
    base: Option<&Path>,
    json: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let corpus = load_corpus(input, &cfg.format)?;
    let base_corpus = base.map(|b| load_corpus(b, &cfg.format)).transpose()?;
    let stats = compute_stats(&corpus, base_corpus.as_ref())?;
    writeln!(out, "acceptable / unacceptable / total: {stats}").map_err(io_out)?;
    if let Some(d) = stats.delta_vs_base {
        writeln!(out, "delta vs base: {}", d.render()).map_err(io_out)?;
    }
    if let Some(p) = json {
        write_json(p, &stats)?;
    }
    Ok(())
}

pub fn cmd_eval(
    cfg: &PipelineConfig,
    input: &Path,
    exemplar: &Exemplar,
    records_path: &Path,
    summary_path: &Path,
    backend: Option<Arc<dyn ChatBackend>>,
    out: &mut dyn Write,
) -> Result<()> {
    let sample = match (cfg.sample_size, cfg.seed) {
        (None, _) => None,
        (Some(size), Some(seed)) => Some(SampleSpec { size, seed }),
        (Some(_), None) => return Err(Error::Config("--sample requires --seed".into())),
    };
    let corpus = load_corpus(input, &cfg.format)?;
    let gateway = build_gateway(cfg, backend)?;
    let run = run_one_shot_eval(&corpus, exemplar, &gateway, sample)?;
    write_records(records_path, &run.records)?;
    let summary = EvalSummary::new(
        &run,
        &gateway,
        exemplar,
        sample,
        &input.display().to_string(),
        &cfg.echo(),
    );
    write_json(summary_path, &summary)?;
    let r = &run.result;
    writeln!(
        out,
        "evaluated: {} (abstained {})\naccuracy: {:.3}\nf1 (positive = 1): {:.3}\nf1 (macro): {:.3}",
        r.n_evaluated, r.matrix.abstentions, r.accuracy, r.f1_binary, r.f1_macro
    )
    .map_err(io_out)
}

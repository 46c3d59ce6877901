//! The `chatmt` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal invariant violation. Outputs are written to a temporary file
//! in the destination directory and renamed into place, so an interrupted
//! run never leaves a partial file behind.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::attention::reference::kernels_check;
use crate::bsce::{select_ensemble, ScoreSet};
use crate::chatprep::{self, ContextConfig, ContextMode, ContextOrder};
use crate::corpus::{self, BitextRecord, BitextWriter, FailMode, Format, Origin};
use crate::denoise::{self, DenoiseConfig};
use crate::filter::{self, FilterConfig, MaxRatio, Rule};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => m,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(
    name = "chatmt",
    version,
    about = "Chat-translation data preparation and ensemble selection"
)]
struct Cli {
    /// Worker threads; defaults to all cores. Never changes output bytes.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize, length-filter, dedup and ratio-filter a bitext corpus.
    Filter(FilterArgs),
    /// Build speaker-tagged, context-augmented pairs from chat JSONL.
    Chatprep(ChatprepArgs),
    /// Add seeded target-side noise to a prepared corpus.
    Denoise(DenoiseArgs),
    /// Pick an ensemble from COMET and pairwise similarity scores.
    BsceSelect(BsceArgs),
    /// Check the attention kernels against loop-level oracles.
    KernelsCheck(KernelsArgs),
    /// Run filter, chatprep and denoise from one config file.
    Pipeline(PipelineArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum FailModeArg {
    FailFast,
    Skip,
}

impl From<FailModeArg> for FailMode {
    fn from(m: FailModeArg) -> Self {
        match m {
            FailModeArg::FailFast => FailMode::FailFast,
            FailModeArg::Skip => FailMode::SkipAndCount,
        }
    }
}

#[derive(Args, Debug)]
struct IoArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the format inferred from file extensions.
    #[arg(long)]
    format: Option<Format>,
    #[arg(long, value_enum, default_value = "fail-fast")]
    fail_mode: FailModeArg,
    /// Write the run report here instead of stderr.
    #[arg(long)]
    report: Option<PathBuf>,
}

impl IoArgs {
    fn in_format(&self) -> Format {
        self.format
            .unwrap_or_else(|| Format::from_path(&self.input))
    }

    fn out_format(&self) -> Format {
        self.format.unwrap_or_else(|| Format::from_path(&self.out))
    }
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[command(flatten)]
    io: IoArgs,
    #[arg(long, default_value_t = 100)]
    max_words: usize,
    #[arg(long, default_value_t = 40)]
    max_word_chars: usize,
    /// Maximum word ratio, e.g. `4`, `4:1` or `3/2`.
    #[arg(long, default_value = "4")]
    max_ratio: MaxRatio,
    /// Rules to skip (normalize, length, dedup, ratio).
    #[arg(long = "disable")]
    disable: Vec<Rule>,
    /// Prefix `<BT>` to the sources of kept synthetic pairs.
    #[arg(long)]
    tag_synthetic: bool,
}

#[derive(Args, Debug)]
struct ChatprepArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    format: Option<Format>,
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=3))]
    n_prev: u8,
    #[arg(long, default_value = "same")]
    mode: ContextMode,
    #[arg(long, value_enum, default_value = "on")]
    speaker_tags: OnOff,
    #[arg(long, default_value = "nearest-first")]
    context_order: ContextOrder,
    #[arg(long, default_value = "en")]
    agent_lang: String,
    #[arg(long, default_value = "de")]
    customer_lang: String,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    #[command(flatten)]
    io: IoArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.3)]
    pair_fraction: f64,
    #[arg(long, default_value_t = 0.15)]
    token_prob: f64,
}

#[derive(Args, Debug)]
struct BsceArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    ensemble_size: usize,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct KernelsArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed` from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `out_dir`; relative to the working directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    fail_mode: Option<FailModeArg>,
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("chatmt: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Filter(a) => cmd_filter(a),
        Command::Chatprep(a) => cmd_chatprep(a),
        Command::Denoise(a) => cmd_denoise(a),
        Command::BsceSelect(a) => cmd_bsce(a),
        Command::KernelsCheck(a) => cmd_kernels(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    })
}

fn open_input(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Usage(format!("cannot open input {}: {e}", path.display())))
}

/// Writes through a temp file in the destination directory, then renames.
pub fn write_atomic<F>(path: &Path, fill: F) -> CliResult<()>
where
    F: FnOnce(&mut dyn Write) -> CliResult<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| data_err(dir, e))?;
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| data_err(dir, e))?;
    let mut w = BufWriter::new(tmp);
    fill(&mut w)?;
    let tmp = w.into_inner().map_err(|e| data_err(path, e.error()))?;
    tmp.persist(path).map_err(|e| data_err(path, e.error))?;
    Ok(())
}

fn emit_report(path: Option<&Path>, report: &Value) -> CliResult<()> {
    let text =
        serde_json::to_string_pretty(report).map_err(|e| CliError::Internal(e.to_string()))?;
    match path {
        Some(p) => write_atomic(p, |w| writeln!(w, "{text}").map_err(|e| data_err(p, e))),
        None => {
            eprintln!("{text}");
            Ok(())
        }
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn read_records(path: &Path, format: Format, mode: FailMode) -> CliResult<corpus::ReadOutcome> {
    corpus::read_bitext(open_input(path)?, format, mode).map_err(|e| data_err(path, e))
}

fn write_records<'a>(
    path: &Path,
    format: Format,
    records: impl IntoIterator<Item = (&'a corpus::BitextPair, Option<corpus::TokenSpan>)>,
) -> CliResult<()> {
    write_atomic(path, |w| {
        let mut writer = BitextWriter::new(w, format);
        for (pair, span) in records {
            writer
                .write_record(pair, span)
                .map_err(|e| data_err(path, e))?;
        }
        Ok(())
    })
}

// ---- stages -------------------------------------------------------------

struct FilterStage<'a> {
    input: &'a Path,
    output: &'a Path,
    in_format: Format,
    out_format: Format,
    fail_mode: FailMode,
    cfg: FilterConfig,
    tag_synthetic: bool,
}

fn run_filter(stage: FilterStage<'_>) -> CliResult<Value> {
    let start = Instant::now();
    stage
        .cfg
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let read = read_records(stage.input, stage.in_format, stage.fail_mode)?;
    let (kept, report) = filter::filter_corpus(read.pairs(), &stage.cfg);
    if !report.is_balanced() {
        return Err(CliError::Internal(format!(
            "filter accounting does not balance: {report:?}"
        )));
    }
    let kept = if stage.tag_synthetic {
        kept.iter()
            .map(|p| match p.origin {
                Origin::Synthetic => chatprep::tag_synthetic(p),
                Origin::Genuine => Ok(p.clone()),
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| data_err(stage.input, e))?
    } else {
        kept
    };
    write_records(
        stage.output,
        stage.out_format,
        kept.iter().map(|p| (p, None)),
    )?;
    info!(
        "filter: kept {} of {}",
        report.kept_count, report.input_count
    );
    Ok(json!({
        "stage": "filter",
        "input": stage.input,
        "output": stage.output,
        "config": to_json(&stage.cfg),
        "tag_synthetic": stage.tag_synthetic,
        "skipped_records": read.skipped,
        "report": to_json(&report),
        "elapsed_ms": elapsed_ms(start),
    }))
}

fn run_chatprep(
    input: &Path,
    output: &Path,
    out_format: Format,
    cfg: &ContextConfig,
) -> CliResult<Value> {
    let start = Instant::now();
    let dialogues = corpus::parse_chat(open_input(input)?).map_err(|e| data_err(input, e))?;
    let prepared = chatprep::prepare_corpus(&dialogues, cfg).map_err(|e| data_err(input, e))?;
    write_records(
        output,
        out_format,
        prepared
            .iter()
            .map(|p| (&p.pair, Some(p.target_payload_span))),
    )?;
    info!(
        "chatprep: {} dialogues, {} pairs",
        dialogues.len(),
        prepared.len()
    );
    Ok(json!({
        "stage": "chatprep",
        "input": input,
        "output": output,
        "config": to_json(cfg),
        "dialogues": dialogues.len(),
        "pairs": prepared.len(),
        "elapsed_ms": elapsed_ms(start),
    }))
}

fn run_denoise(
    input: &Path,
    output: &Path,
    in_format: Format,
    out_format: Format,
    fail_mode: FailMode,
    cfg: &DenoiseConfig,
) -> CliResult<Value> {
    let start = Instant::now();
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let read = read_records(input, in_format, fail_mode)?;
    let (noised, stats) =
        denoise::denoise_corpus(&read.records, cfg).map_err(|e| data_err(input, e))?;
    write_records(
        output,
        out_format,
        noised
            .iter()
            .map(|r: &BitextRecord| (&r.pair, r.payload_span)),
    )?;
    info!(
        "denoise: noised {} of {} pairs",
        stats.chosen_count, stats.input_count
    );
    Ok(json!({
        "stage": "denoise",
        "input": input,
        "output": output,
        "config": to_json(cfg),
        "skipped_records": read.skipped,
        "stats": to_json(&stats),
        "replacement_rate": stats.replacement_rate(),
        "elapsed_ms": elapsed_ms(start),
    }))
}

fn context_config(
    n_prev: usize,
    mode: ContextMode,
    order: ContextOrder,
    tags: bool,
    agent: &str,
    customer: &str,
) -> CliResult<ContextConfig> {
    Ok(ContextConfig::new(n_prev, mode)
        .map_err(|e| CliError::Usage(e.to_string()))?
        .with_order(order)
        .with_speaker_tags(tags)
        .with_languages(agent, customer))
}

// ---- subcommands --------------------------------------------------------

fn cmd_filter(a: FilterArgs) -> CliResult<()> {
    let mut cfg = FilterConfig {
        max_sentence_words: a.max_words,
        max_word_chars: a.max_word_chars,
        max_ratio: a.max_ratio,
        ..FilterConfig::default()
    };
    for rule in &a.disable {
        cfg.rules_enabled.remove(rule);
    }
    let report = run_filter(FilterStage {
        input: &a.io.input,
        output: &a.io.out,
        in_format: a.io.in_format(),
        out_format: a.io.out_format(),
        fail_mode: a.io.fail_mode.into(),
        cfg,
        tag_synthetic: a.tag_synthetic,
    })?;
    emit_report(a.io.report.as_deref(), &report)
}

fn cmd_chatprep(a: ChatprepArgs) -> CliResult<()> {
    let cfg = context_config(
        a.n_prev as usize,
        a.mode,
        a.context_order,
        matches!(a.speaker_tags, OnOff::On),
        &a.agent_lang,
        &a.customer_lang,
    )?;
    let out_format = a.format.unwrap_or_else(|| Format::from_path(&a.out));
    let report = run_chatprep(&a.input, &a.out, out_format, &cfg)?;
    emit_report(a.report.as_deref(), &report)
}

fn cmd_denoise(a: DenoiseArgs) -> CliResult<()> {
    let cfg = DenoiseConfig {
        pair_fraction: a.pair_fraction,
        token_replace_prob: a.token_prob,
        seed: a.seed,
    };
    let report = run_denoise(
        &a.io.input,
        &a.io.out,
        a.io.in_format(),
        a.io.out_format(),
        a.io.fail_mode.into(),
        &cfg,
    )?;
    emit_report(a.io.report.as_deref(), &report)
}

fn cmd_bsce(a: BsceArgs) -> CliResult<()> {
    if a.ensemble_size == 0 {
        return Err(CliError::Usage("--ensemble-size must be at least 1".into()));
    }
    let scores: ScoreSet =
        serde_json::from_reader(open_input(&a.scores)?).map_err(|e| data_err(&a.scores, e))?;
    if a.ensemble_size > scores.len() {
        return Err(CliError::Usage(format!(
            "--ensemble-size {} exceeds the {} candidate models",
            a.ensemble_size,
            scores.len()
        )));
    }
    let selection =
        select_ensemble(&scores, a.ensemble_size).map_err(|e| CliError::Usage(e.to_string()))?;
    let text =
        serde_json::to_string_pretty(&selection).map_err(|e| CliError::Internal(e.to_string()))?;
    match &a.out {
        Some(path) => write_atomic(path, |w| {
            writeln!(w, "{text}").map_err(|e| data_err(path, e))
        }),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_kernels(a: KernelsArgs) -> CliResult<()> {
    let check = kernels_check(a.seed, a.instances);
    let mut out = io::stdout().lock();
    for line in &check.checks {
        let _ = writeln!(
            out,
            "{:<36} max_dev={:.3e} tol={:.0e} {}",
            line.name,
            line.max_deviation,
            line.tolerance,
            if line.passed { "PASS" } else { "FAIL" }
        );
    }
    if let Some(path) = &a.report {
        emit_report(Some(path), &to_json(&check))?;
    }
    if check.passed() {
        Ok(())
    } else {
        Err(CliError::Internal(
            "attention kernels deviate from their oracles".into(),
        ))
    }
}

// ---- pipeline -----------------------------------------------------------

/// Pipeline config file (TOML). Keys mirror the subcommand flags.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fail_mode: FailMode,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub filter: Option<FilterSection>,
    pub chatprep: Option<ChatprepSection>,
    pub denoise: Option<DenoiseSection>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub input: PathBuf,
    #[serde(default = "FilterSection::default_output")]
    pub output: PathBuf,
    #[serde(default = "FilterSection::default_max_words")]
    pub max_words: usize,
    #[serde(default = "FilterSection::default_max_word_chars")]
    pub max_word_chars: usize,
    #[serde(default)]
    pub max_ratio: MaxRatio,
    #[serde(default)]
    pub disable: Vec<Rule>,
    #[serde(default)]
    pub tag_synthetic: bool,
}

impl FilterSection {
    fn default_output() -> PathBuf {
        "filtered.tsv".into()
    }
    fn default_max_words() -> usize {
        100
    }
    fn default_max_word_chars() -> usize {
        40
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ChatprepSection {
    pub input: PathBuf,
    #[serde(default = "ChatprepSection::default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub n_prev: usize,
    #[serde(default = "ChatprepSection::default_mode")]
    pub mode: String,
    #[serde(default = "ChatprepSection::default_tags")]
    pub speaker_tags: bool,
    #[serde(default)]
    pub context_order: ContextOrder,
    #[serde(default = "ChatprepSection::default_agent")]
    pub agent_lang: String,
    #[serde(default = "ChatprepSection::default_customer")]
    pub customer_lang: String,
}

impl ChatprepSection {
    fn default_output() -> PathBuf {
        "chat.prepared.jsonl".into()
    }
    fn default_mode() -> String {
        "same".into()
    }
    fn default_tags() -> bool {
        true
    }
    fn default_agent() -> String {
        "en".into()
    }
    fn default_customer() -> String {
        "de".into()
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseSection {
    /// Defaults to the output of the previous stage.
    pub input: Option<PathBuf>,
    #[serde(default = "DenoiseSection::default_output")]
    pub output: PathBuf,
    #[serde(default = "DenoiseSection::default_fraction")]
    pub pair_fraction: f64,
    #[serde(default = "DenoiseSection::default_prob")]
    pub token_prob: f64,
}

impl DenoiseSection {
    fn default_output() -> PathBuf {
        "noised.jsonl".into()
    }
    fn default_fraction() -> f64 {
        0.3
    }
    fn default_prob() -> f64 {
        0.15
    }
}

fn cmd_pipeline(a: PipelineArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", a.config.display())))?;
    let mut cfg: PipelineConfig = toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", a.config.display())))?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = a.fail_mode {
        cfg.fail_mode = mode.into();
    }
    let base = a.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let out_dir = match a.out_dir {
        Some(dir) => dir,
        None => base.join(&cfg.out_dir),
    };
    let report = run_pipeline(&cfg, &base, &out_dir)?;
    emit_report(a.report.as_deref(), &report)
}

/// Validates everything up front, then runs the configured stages in order.
pub fn run_pipeline(cfg: &PipelineConfig, base: &Path, out_dir: &Path) -> CliResult<Value> {
    let usage = |m: String| CliError::Usage(m);

    // Validation pass: nothing runs until every input and setting checks out.
    let mut missing = Vec::new();
    let mut check_input = |p: &Path| {
        if !p.is_file() {
            missing.push(p.display().to_string());
        }
    };
    let filter_plan = match &cfg.filter {
        Some(f) => {
            let input = base.join(&f.input);
            check_input(&input);
            let mut fc = FilterConfig {
                max_sentence_words: f.max_words,
                max_word_chars: f.max_word_chars,
                max_ratio: f.max_ratio,
                ..FilterConfig::default()
            };
            for rule in &f.disable {
                fc.rules_enabled.remove(rule);
            }
            fc.validate().map_err(|e| usage(e.to_string()))?;
            Some((input, out_dir.join(&f.output), fc, f.tag_synthetic))
        }
        None => None,
    };
    let chat_plan = match &cfg.chatprep {
        Some(c) => {
            let input = base.join(&c.input);
            check_input(&input);
            let mode: ContextMode = c.mode.parse().map_err(usage)?;
            let cc = context_config(
                c.n_prev,
                mode,
                c.context_order,
                c.speaker_tags,
                &c.agent_lang,
                &c.customer_lang,
            )?;
            Some((input, out_dir.join(&c.output), cc))
        }
        None => None,
    };
    let denoise_plan = match &cfg.denoise {
        Some(d) => {
            let previous = chat_plan
                .as_ref()
                .map(|c| c.1.clone())
                .or_else(|| filter_plan.as_ref().map(|f| f.1.clone()));
            let input = match (&d.input, previous) {
                (Some(explicit), _) => {
                    let p = base.join(explicit);
                    check_input(&p);
                    p
                }
                (None, Some(prev)) => prev,
                (None, None) => {
                    return Err(usage("denoise has no input and no earlier stage".into()))
                }
            };
            let dc = DenoiseConfig {
                pair_fraction: d.pair_fraction,
                token_replace_prob: d.token_prob,
                seed: cfg.seed,
            };
            dc.validate().map_err(|e| usage(e.to_string()))?;
            Some((input, out_dir.join(&d.output), dc))
        }
        None => None,
    };
    if !missing.is_empty() {
        return Err(usage(format!(
            "missing input file(s): {}",
            missing.join(", ")
        )));
    }
    if filter_plan.is_none() && chat_plan.is_none() && denoise_plan.is_none() {
        return Err(usage("config enables no stages".into()));
    }

    let start = Instant::now();
    let mut stages = Vec::new();
    if let Some((input, output, fc, tag)) = &filter_plan {
        stages.push(run_filter(FilterStage {
            input,
            output,
            in_format: Format::from_path(input),
            out_format: Format::from_path(output),
            fail_mode: cfg.fail_mode,
            cfg: fc.clone(),
            tag_synthetic: *tag,
        })?);
    }
    if let Some((input, output, cc)) = &chat_plan {
        stages.push(run_chatprep(input, output, Format::from_path(output), cc)?);
    }
    if let Some((input, output, dc)) = &denoise_plan {
        stages.push(run_denoise(
            input,
            output,
            Format::from_path(input),
            Format::from_path(output),
            cfg.fail_mode,
            dc,
        )?);
    }
    Ok(json!({
        "stage": "pipeline",
        "seed": cfg.seed,
        "out_dir": out_dir,
        "stages": stages,
        "elapsed_ms": elapsed_ms(start),
    }))
}

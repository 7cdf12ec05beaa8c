//! `mpager` — batch CLI over the toolkit: normalization, CER scoring,
//! ROVER combination, MPA GER runs, and report analysis.
//!
//! Exit codes are stable: 0 success, 1 data error, 2 configuration
//! error, 3 transport error.

use std::collections::BTreeSet;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mpager::corpus::{self, load_trn, CorpusError};
use mpager::pipeline::{
    self, load_scheme_file, parse_report_str, report_to_jsonl, PipelineError, ResolvedScheme,
    RunReport, UtteranceResult,
};
use mpager::rover::{rover_combine, RoverError, VoteOptions};
use mpager::scoring::{
    bucket_report, corpus_cer, paired_ttest, score_pair, PairedTTest, ScoreRecord, ScoringError,
};
use mpager::textnorm::{normalize, tokenize, NormalizationOptions, PunctuationSet, TokenMode};

#[derive(Parser)]
#[command(name = "mpager", version, about = "ASR transcript scoring, ROVER voting, and multi-pass LLM error correction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize text line by line (width folding, punctuation, whitespace).
    Normalize(NormalizeArgs),
    /// Score hypothesis transcripts against references (CER).
    Score(ScoreArgs),
    /// Combine hypothesis files with ROVER voting.
    Rover(RoverArgs),
    /// Run an MPA GER or baseline ROVER scheme over a corpus.
    Mpa(MpaArgs),
    /// Analyze run reports: length buckets and paired significance tests.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct NormFlags {
    /// Keep full-width characters as they are.
    #[arg(long)]
    no_fold_width: bool,
    /// Keep punctuation.
    #[arg(long)]
    no_strip_punctuation: bool,
    /// Keep whitespace runs as they are.
    #[arg(long)]
    no_collapse_whitespace: bool,
    /// Strip exactly these characters instead of the default set.
    #[arg(long, value_name = "CHARS")]
    punctuation: Option<String>,
}

impl NormFlags {
    fn options(&self) -> Result<NormalizationOptions, CliError> {
        let punctuation = match &self.punctuation {
            Some(chars) => PunctuationSet::Custom(chars.chars().collect::<BTreeSet<char>>()),
            None => PunctuationSet::Default,
        };
        let opts = NormalizationOptions {
            fold_width: !self.no_fold_width,
            strip_punctuation: !self.no_strip_punctuation,
            punctuation,
            collapse_whitespace: !self.no_collapse_whitespace,
        };
        opts.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(opts)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Char,
    Whitespace,
}

impl From<ModeArg> for TokenMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Char => TokenMode::Char,
            ModeArg::Whitespace => TokenMode::Whitespace,
        }
    }
}

#[derive(Args)]
struct NormalizeArgs {
    /// Input file; stdin when omitted.
    input: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    norm: NormFlags,
}

#[derive(Args)]
struct ScoreArgs {
    /// Reference transcripts (trn: "tokens (utt_id)" per line).
    #[arg(long)]
    refs: PathBuf,
    /// Hypothesis transcripts (trn).
    #[arg(long)]
    hyps: PathBuf,
    #[arg(long, value_enum, default_value = "char")]
    mode: ModeArg,
    #[command(flatten)]
    norm: NormFlags,
    /// Emit the full report as JSON.
    #[arg(long)]
    json: bool,
    /// List every utterance in the human-readable table.
    #[arg(long)]
    per_utterance: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoverFormat {
    /// One utterance per line, files aligned by line number.
    Plain,
    /// One {"utt_id", "text"} object per line, aligned by utterance id.
    Jsonl,
}

#[derive(Args)]
struct RoverArgs {
    /// Hypothesis files to combine; the first is the anchor.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "plain")]
    format: RoverFormat,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    null_confidence: f64,
    #[arg(long, value_enum, default_value = "char")]
    mode: ModeArg,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MpaArgs {
    /// Hypothesis corpus (JSONL).
    #[arg(long)]
    corpus: PathBuf,
    /// Scheme file (JSON) describing the run.
    #[arg(long)]
    scheme: PathBuf,
    /// Optional reference transcripts (trn) to attach before scoring.
    #[arg(long)]
    refs: Option<PathBuf>,
    /// Where to write the run report (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Utterance-level parallelism; 1 keeps log order bit-stable.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Override every HTTP backend's endpoint URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Print the run summary as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum CompareMetric {
    /// Per-utterance CER.
    Cer,
    /// Per-utterance error counts.
    Errors,
}

#[derive(Args)]
struct ReportArgs {
    /// Run report (JSONL) produced by `mpager mpa`.
    report: PathBuf,
    /// Reference-length bucket width in characters.
    #[arg(long, default_value_t = 10)]
    bucket_width: usize,
    /// Second run report for a paired significance test.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Which per-utterance metric the paired t-test compares.
    #[arg(long, value_enum, default_value = "cer")]
    metric: CompareMetric,
    #[arg(long)]
    json: bool,
}

#[derive(Debug)]
enum CliError {
    Data(String),
    Config(String),
    Transport(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Data(_) => 1,
            CliError::Config(_) => 2,
            CliError::Transport(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Data(m) | CliError::Config(m) | CliError::Transport(m) => m,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(err: CorpusError) -> Self {
        match err {
            CorpusError::BadStreamSpec(_) => CliError::Config(err.to_string()),
            _ => CliError::Data(err.to_string()),
        }
    }
}

impl From<ScoringError> for CliError {
    fn from(err: ScoringError) -> Self {
        match err {
            ScoringError::InvalidBucketWidth => CliError::Config(err.to_string()),
            _ => CliError::Data(err.to_string()),
        }
    }
}

impl From<RoverError> for CliError {
    fn from(err: RoverError) -> Self {
        match err {
            RoverError::InvalidAlpha(_) | RoverError::ConfidenceCountMismatch { .. } => {
                CliError::Config(err.to_string())
            }
            _ => CliError::Data(err.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(err: PipelineError) -> Self {
        match err {
            PipelineError::Config(_) => CliError::Config(err.to_string()),
            PipelineError::Corpus(e) => e.into(),
            PipelineError::Scoring(e) => e.into(),
            PipelineError::Rover(e) => e.into(),
            PipelineError::Llm(e) => CliError::Transport(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Normalize(args) => cmd_normalize(args),
        Command::Score(args) => cmd_score(args),
        Command::Rover(args) => cmd_rover(args),
        Command::Mpa(args) => cmd_mpa(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}

fn read_input(path: Option<&Path>) -> Result<String, CliError> {
    let bytes = match path {
        Some(path) => fs::read(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?,
        None => {
            let mut buf = Vec::new();
            std::io::stdin()
                .read_to_end(&mut buf)
                .map_err(|e| CliError::Data(format!("cannot read stdin: {e}")))?;
            buf
        }
    };
    String::from_utf8(bytes).map_err(|e| CliError::Data(format!("input is not valid UTF-8: {e}")))
}

fn write_output(path: Option<&Path>, content: &str) -> Result<(), CliError> {
    match path {
        Some(path) => fs::write(path, content)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(content.as_bytes())
            .map_err(|e| CliError::Data(format!("cannot write stdout: {e}"))),
    }
}

fn cmd_normalize(args: NormalizeArgs) -> Result<(), CliError> {
    let opts = args.norm.options()?;
    let input = read_input(args.input.as_deref())?;
    let mut out = String::new();
    for line in input.lines() {
        out.push_str(&normalize(line, &opts));
        out.push('\n');
    }
    write_output(args.output.as_deref(), &out)
}

fn cmd_score(args: ScoreArgs) -> Result<(), CliError> {
    let opts = args.norm.options()?;
    let mode: TokenMode = args.mode.into();
    let refs = load_trn(&args.refs)?;
    let hyps = load_trn(&args.hyps)?;
    let hyp_map: std::collections::HashMap<&str, &str> = hyps
        .iter()
        .map(|(id, text)| (id.as_str(), text.as_str()))
        .collect();
    if hyp_map.len() != hyps.len() {
        return Err(CliError::Data("duplicate utterance id in hypotheses".into()));
    }
    let ref_ids: std::collections::HashSet<&str> = refs.iter().map(|(id, _)| id.as_str()).collect();
    if ref_ids.len() != refs.len() {
        return Err(CliError::Data("duplicate utterance id in references".into()));
    }
    for (id, _) in &hyps {
        if !ref_ids.contains(id.as_str()) {
            return Err(CliError::Data(format!(
                "hypothesis utterance {id} has no reference"
            )));
        }
    }
    let mut records = Vec::with_capacity(refs.len());
    for (utt_id, reference) in &refs {
        let hyp = hyp_map.get(utt_id.as_str()).ok_or_else(|| {
            CliError::Data(format!("missing hypothesis for utterance {utt_id}"))
        })?;
        records.push(score_pair(utt_id, reference, hyp, &opts, mode));
    }
    let report = corpus_cer(records)?;
    if args.json {
        println!("{}", serde_json::to_string(&report).expect("serializable report"));
        return Ok(());
    }
    if args.per_utterance {
        println!("{:<24} {:>6} {:>6} {:>6} {:>8} {:>8}", "utt_id", "subs", "dels", "ins", "ref_len", "cer%");
        for r in &report.per_utterance {
            match r.cer() {
                Some(cer) => println!(
                    "{:<24} {:>6} {:>6} {:>6} {:>8} {:>8.2}",
                    r.utt_id,
                    r.subs,
                    r.dels,
                    r.ins,
                    r.ref_len,
                    cer * 100.0
                ),
                None => println!(
                    "{:<24} {:>6} {:>6} {:>6} {:>8} {:>8}",
                    r.utt_id, r.subs, r.dels, r.ins, r.ref_len, "n/a"
                ),
            }
        }
        println!();
    }
    println!(
        "utterances: {}  subs: {}  dels: {}  ins: {}  ref_len: {}",
        report.per_utterance.len(),
        report.totals.subs,
        report.totals.dels,
        report.totals.ins,
        report.totals.ref_len
    );
    if !report.flagged.is_empty() {
        println!(
            "excluded (empty reference after normalization): {}",
            report.flagged.join(", ")
        );
    }
    println!("corpus CER: {:.4}%", report.corpus_cer * 100.0);
    Ok(())
}

fn cmd_rover(args: RoverArgs) -> Result<(), CliError> {
    let opts = VoteOptions {
        alpha: args.alpha,
        null_confidence: args.null_confidence,
        ..Default::default()
    };
    opts.validate().map_err(CliError::from)?;
    let mode: TokenMode = args.mode.into();
    let contents: Vec<String> = args
        .inputs
        .iter()
        .map(|p| read_input(Some(p)))
        .collect::<Result<_, _>>()?;

    let mut out = String::new();
    match args.format {
        RoverFormat::Plain => {
            let files: Vec<Vec<&str>> = contents.iter().map(|c| c.lines().collect()).collect();
            let n = files[0].len();
            for (i, file) in files.iter().enumerate() {
                if file.len() != n {
                    return Err(CliError::Data(format!(
                        "{} has {} lines, expected {} (files are aligned by line number)",
                        args.inputs[i].display(),
                        file.len(),
                        n
                    )));
                }
            }
            for row in 0..n {
                let hyps: Vec<_> = files.iter().map(|f| tokenize(f[row], mode)).collect();
                let merged = rover_combine(&hyps, &opts)?;
                out.push_str(&merged.join());
                out.push('\n');
            }
        }
        RoverFormat::Jsonl => {
            let mut files = Vec::with_capacity(contents.len());
            for (content, path) in contents.iter().zip(&args.inputs) {
                files.push(parse_utt_lines(content, path)?);
            }
            let first = &files[0];
            for (i, file) in files.iter().enumerate().skip(1) {
                if file.len() != first.len() {
                    return Err(CliError::Data(format!(
                        "{} has {} utterances, expected {}",
                        args.inputs[i].display(),
                        file.len(),
                        first.len()
                    )));
                }
            }
            for (utt_id, _) in first {
                let mut hyps = Vec::with_capacity(files.len());
                for (file, path) in files.iter().zip(&args.inputs) {
                    let text = file
                        .iter()
                        .find(|(id, _)| id == utt_id)
                        .map(|(_, text)| text)
                        .ok_or_else(|| {
                            CliError::Data(format!(
                                "utterance {utt_id} missing from {}",
                                path.display()
                            ))
                        })?;
                    hyps.push(tokenize(text, mode));
                }
                let merged = rover_combine(&hyps, &opts)?;
                let line = serde_json::json!({"utt_id": utt_id, "text": merged.join()});
                out.push_str(&line.to_string());
                out.push('\n');
            }
        }
    }
    write_output(args.output.as_deref(), &out)
}

fn parse_utt_lines(content: &str, path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| {
            CliError::Data(format!("{} line {}: {e}", path.display(), idx + 1))
        })?;
        let utt_id = value
            .get("utt_id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                CliError::Data(format!("{} line {}: missing utt_id", path.display(), idx + 1))
            })?;
        let text = value.get("text").and_then(|v| v.as_str()).ok_or_else(|| {
            CliError::Data(format!("{} line {}: missing text", path.display(), idx + 1))
        })?;
        out.push((utt_id.to_string(), text.to_string()));
    }
    Ok(out)
}

fn cmd_mpa(args: MpaArgs) -> Result<(), CliError> {
    let mut corpus = corpus::load_jsonl(&args.corpus)?;
    if let Some(refs) = &args.refs {
        let refs = load_trn(refs)?;
        corpus.attach_references(&refs)?;
    }
    let scheme = load_scheme_file(&args.scheme, args.endpoint.as_deref())?;
    let report = match &scheme {
        ResolvedScheme::Mpa(scheme) => pipeline::run_mpa(&corpus, scheme, args.workers)?,
        ResolvedScheme::BaselineRover(scheme) => {
            pipeline::run_baseline_rover(&corpus, scheme, args.workers)?
        }
    };
    fs::write(&args.out, report_to_jsonl(&report))
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", args.out.display())))?;
    print_mpa_summary(&report, args.json);

    // A backend that never produced a completion is a transport-level
    // failure of the whole run, not a per-utterance degradation.
    for (id, stats) in &report.summary.backends {
        if stats.attempted > 0 && stats.succeeded == 0 {
            return Err(CliError::Transport(format!(
                "backend {id} failed all {} requests (report written to {})",
                stats.attempted,
                args.out.display()
            )));
        }
    }
    Ok(())
}

fn print_mpa_summary(report: &RunReport, json: bool) {
    if json {
        let summary = serde_json::json!({
            "digest": report.digest,
            "summary": report.summary,
            "merged_cer": report.merged_cer.as_ref().map(|r| r.corpus_cer),
            "anchor_cer": report.anchor_cer.as_ref().map(|r| r.corpus_cer),
        });
        println!("{summary}");
        return;
    }
    println!(
        "utterances: {}  outputs: {}  corrected: {}  guard_rejected: {}  backend_failed: {}",
        report.summary.utterances,
        report.summary.outputs,
        report.summary.corrected,
        report.summary.guard_rejected,
        report.summary.backend_failed
    );
    if !report.summary.skipped.is_empty() {
        println!("skipped utterances: {}", report.summary.skipped.len());
    }
    match (&report.anchor_cer, &report.merged_cer) {
        (Some(anchor), Some(merged)) => {
            println!(
                "anchor CER: {:.4}%  merged CER: {:.4}%",
                anchor.corpus_cer * 100.0,
                merged.corpus_cer * 100.0
            );
        }
        _ => println!("no references attached; CER not computed"),
    }
    println!("digest: {}", report.digest);
}

fn utterance_metric(
    utterances: &[UtteranceResult],
    metric: CompareMetric,
) -> Result<Vec<(String, f64)>, CliError> {
    utterances
        .iter()
        .map(|utt| {
            let score = utt.merged_score.as_ref().ok_or_else(|| {
                CliError::Data(format!(
                    "utterance {} has no score (was the run given references?)",
                    utt.utt_id
                ))
            })?;
            let value = match metric {
                CompareMetric::Cer => score.cer().unwrap_or(0.0),
                CompareMetric::Errors => score.errors() as f64,
            };
            Ok((utt.utt_id.clone(), value))
        })
        .collect()
}

fn merged_records(utterances: &[UtteranceResult]) -> Result<Vec<ScoreRecord>, CliError> {
    utterances
        .iter()
        .map(|utt| {
            utt.merged_score.clone().ok_or_else(|| {
                CliError::Data(format!(
                    "utterance {} has no score (was the run given references?)",
                    utt.utt_id
                ))
            })
        })
        .collect()
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let data = fs::read_to_string(&args.report)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", args.report.display())))?;
    let (_header, utterances) = parse_report_str(&data)?;
    let records = merged_records(&utterances)?;
    let buckets = bucket_report(&records, args.bucket_width)?;

    let ttest: Option<Result<PairedTTest, ScoringError>> = match &args.compare {
        Some(other_path) => {
            let other_data = fs::read_to_string(other_path).map_err(|e| {
                CliError::Data(format!("cannot read {}: {e}", other_path.display()))
            })?;
            let (_, other_utts) = parse_report_str(&other_data)?;
            let a = utterance_metric(&utterances, args.metric)?;
            let b = utterance_metric(&other_utts, args.metric)?;
            let (left, right) = mpager::scoring::pair_by_utt_id(&a, &b)?;
            match paired_ttest(&left, &right) {
                Ok(result) => Some(Ok(result)),
                Err(ScoringError::ZeroVariance) => Some(Err(ScoringError::ZeroVariance)),
                Err(other) => return Err(other.into()),
            }
        }
        None => None,
    };

    if args.json {
        let ttest_json = match &ttest {
            Some(Ok(result)) => serde_json::to_value(result).expect("serializable"),
            Some(Err(_)) => serde_json::Value::Null,
            None => serde_json::Value::Null,
        };
        let payload = serde_json::json!({
            "bucket_width": buckets.bucket_width,
            "buckets": buckets.buckets,
            "t_test": ttest_json,
            "zero_variance": matches!(ttest, Some(Err(ScoringError::ZeroVariance))),
        });
        println!("{payload}");
    } else {
        println!("{:<12} {:>10} {:>10}", "ref_len", "utterances", "cer%");
        for bucket in &buckets.buckets {
            match bucket.cer {
                Some(cer) => println!(
                    "{:<12} {:>10} {:>10.2}",
                    format!("{}-{}", bucket.lo, bucket.hi - 1),
                    bucket.utterances,
                    cer * 100.0
                ),
                None => println!(
                    "{:<12} {:>10} {:>10}",
                    format!("{}-{}", bucket.lo, bucket.hi - 1),
                    bucket.utterances,
                    "n/a"
                ),
            }
        }
        match &ttest {
            Some(Ok(result)) => println!(
                "paired t-test: t = {:.6}, df = {}, p = {:.6}",
                result.t, result.df, result.p_two_sided
            ),
            Some(Err(_)) => {}
            None => {}
        }
    }
    if matches!(ttest, Some(Err(ScoringError::ZeroVariance))) {
        eprintln!("warning: paired differences have zero variance; t statistic is undefined");
    }
    Ok(())
}

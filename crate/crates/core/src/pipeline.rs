//! End-to-end orchestration: LLM GER over candidate streams, ROVER
//! merging of the anchor with every correction, and report assembly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, MissingStreamPolicy, StreamSpec, Utterance};
use crate::llm::http::{HttpBackend, ENDPOINT_ENV};
use crate::llm::mock::{MockBackend, MockDefault, MockReply};
use crate::llm::{
    guard_output, BackendConfig, GuardDecision, GuardPolicy, GuardReason, LlmClient, LlmError,
    PromptTemplate,
};
use crate::rover::{rover_combine, RoverError, VoteOptions};
use crate::scoring::{corpus_cer, score_pair, CerReport, CerTotals, ScoreRecord, ScoringError};
use crate::textnorm::{normalize, tokenize, NormalizationOptions, TokenMode};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Rover(#[from] RoverError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("invalid scheme: {0}")]
    Config(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// How a GER run's candidate list was assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GerVariant {
    /// Top-N hypotheses of a single system.
    NBestOfOneSystem,
    /// 1-best hypotheses of N different systems.
    OneBestOfNSystems,
}

/// One LLM correction pass: a candidate source, the backend that corrects
/// it, and the prompt template in use.
pub struct GerRun {
    pub variant: GerVariant,
    pub streams: Vec<StreamSpec>,
    pub backend_id: String,
    pub client: Arc<LlmClient>,
    pub template: PromptTemplate,
}

/// A fully resolved MPA GER scheme, ready to run.
pub struct MpaScheme {
    pub anchor: StreamSpec,
    pub ger_runs: Vec<GerRun>,
    pub merge: VoteOptions,
    pub guard: GuardPolicy,
    pub token_mode: TokenMode,
    /// Normalize candidate texts before prompting (scoring always
    /// normalizes; this extends the same treatment to LLM inputs).
    pub normalize_llm_input: bool,
    pub normalization: NormalizationOptions,
    pub missing_streams: MissingStreamPolicy,
    /// Snapshot of the originating configuration, embedded in reports.
    pub config: Value,
}

impl MpaScheme {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.ger_runs.is_empty() {
            return Err(PipelineError::Config("at least one ger_run is required".into()));
        }
        for run in &self.ger_runs {
            if run.streams.is_empty() {
                return Err(PipelineError::Config(format!(
                    "ger_run for backend {} names no streams",
                    run.backend_id
                )));
            }
        }
        self.merge.validate()?;
        self.normalization
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }
}

/// ROVER over raw ASR streams with no LLM stage.
pub struct BaselineRoverScheme {
    pub streams: Vec<StreamSpec>,
    pub merge: VoteOptions,
    pub token_mode: TokenMode,
    pub normalization: NormalizationOptions,
    pub missing_streams: MissingStreamPolicy,
    pub config: Value,
}

/// Why a merged stream carries the text it does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum GerOutcome {
    Corrected,
    GuardRejected { reason: GuardReason },
    BackendFailed { transport: bool, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GerRecord {
    pub variant: GerVariant,
    /// What the backend returned, when it returned anything.
    pub raw: Option<String>,
    pub outcome: GerOutcome,
}

/// One non-anchor input to the per-utterance ROVER merge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedStream {
    /// Backend id for GER outputs; stream specifier for baseline inputs.
    pub label: String,
    /// The text that entered the merge.
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ger: Option<GerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceResult {
    pub utt_id: String,
    pub anchor: String,
    pub outputs: Vec<MergedStream>,
    pub merged: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merged_score: Option<ScoreRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor_score: Option<ScoreRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BackendStats {
    pub attempted: usize,
    /// Requests for which the backend produced a completion, whether or
    /// not the guard later rejected it.
    pub succeeded: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub utterances: usize,
    pub skipped: Vec<String>,
    pub outputs: usize,
    pub corrected: usize,
    pub guard_rejected: usize,
    pub backend_failed: usize,
    /// Utterances whose merge saw an anchor substituted for an LLM output.
    pub fallback_utterances: usize,
    pub backends: BTreeMap<String, BackendStats>,
}

/// Corpus-level CER digestible into a report header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CerSummary {
    pub corpus_cer: f64,
    pub totals: CerTotals,
    pub flagged: Vec<String>,
    pub utterances: usize,
}

impl From<&CerReport> for CerSummary {
    fn from(report: &CerReport) -> Self {
        Self {
            corpus_cer: report.corpus_cer,
            totals: report.totals,
            flagged: report.flagged.clone(),
            utterances: report.per_utterance.len(),
        }
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub utterances: Vec<UtteranceResult>,
    pub summary: RunSummary,
    pub merged_cer: Option<CerReport>,
    pub anchor_cer: Option<CerReport>,
    pub config: Value,
    /// SHA-256 over the config line and every utterance line of the JSONL
    /// rendering; byte-stable across repeated runs with mock backends.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GerResult {
    /// The text to merge (the correction, or the fallback anchor).
    pub text: String,
    pub raw: Option<String>,
    pub outcome: GerOutcome,
}

/// Runs one correction pass and guards the result. `candidates[0]` is the
/// run's anchor: rejected, failed, or empty corrections degrade to it
/// rather than aborting the corpus run.
pub fn llm_ger(
    client: &LlmClient,
    utt_id: &str,
    candidates: &[String],
    template: &PromptTemplate,
    guard: &GuardPolicy,
) -> Result<GerResult, PipelineError> {
    let anchor = candidates
        .first()
        .ok_or(LlmError::EmptyCandidates)?
        .clone();
    match client.correct(utt_id, candidates, template) {
        Ok(corrected) => match guard_output(&anchor, &corrected, guard) {
            GuardDecision::Accepted(text) => Ok(GerResult {
                text,
                raw: Some(corrected),
                outcome: GerOutcome::Corrected,
            }),
            GuardDecision::Rejected { fallback, reason } => Ok(GerResult {
                text: fallback,
                raw: Some(corrected),
                outcome: GerOutcome::GuardRejected { reason },
            }),
        },
        Err(LlmError::EmptyCandidates) => Err(LlmError::EmptyCandidates.into()),
        Err(err) => {
            let transport = matches!(err, LlmError::Transport { .. });
            Ok(GerResult {
                text: anchor,
                raw: None,
                outcome: GerOutcome::BackendFailed {
                    transport,
                    error: err.to_string(),
                },
            })
        }
    }
}

fn find_stream<'a>(utt: &'a Utterance, spec: &StreamSpec) -> Option<&'a str> {
    utt.entries
        .iter()
        .find(|e| e.system == spec.system && e.rank == spec.rank)
        .map(|e| e.text.as_str())
}

fn resolve_streams(
    utt: &Utterance,
    specs: &[StreamSpec],
    policy: MissingStreamPolicy,
) -> Result<Option<Vec<String>>, PipelineError> {
    let mut texts = Vec::with_capacity(specs.len());
    for spec in specs {
        match (find_stream(utt, spec), policy) {
            (Some(text), _) => texts.push(text.to_string()),
            (None, MissingStreamPolicy::Error) => {
                return Err(CorpusError::MissingStream {
                    utt_id: utt.utt_id.clone(),
                    stream: spec.to_string(),
                }
                .into());
            }
            (None, MissingStreamPolicy::SkipUtterance) => return Ok(None),
        }
    }
    Ok(Some(texts))
}

/// Runs the MPA GER scheme over the corpus: per utterance, every GER run
/// produces one corrected stream, and ROVER merges `[anchor, output_1,
/// ..., output_k]` in that order. Utterance processing is pure given the
/// corpus and backends, so it parallelizes across `workers` threads with
/// byte-identical results.
pub fn run_mpa(
    corpus: &Corpus,
    scheme: &MpaScheme,
    workers: usize,
) -> Result<RunReport, PipelineError> {
    scheme.validate()?;
    let results = par_map_utterances(corpus, workers, |utt| {
        let anchor = match resolve_streams(
            utt,
            std::slice::from_ref(&scheme.anchor),
            scheme.missing_streams,
        )? {
            Some(mut texts) => texts.remove(0),
            None => return Ok(None),
        };
        let mut outputs = Vec::with_capacity(scheme.ger_runs.len());
        for run in &scheme.ger_runs {
            let candidates = match resolve_streams(utt, &run.streams, scheme.missing_streams)? {
                Some(texts) => texts,
                None => return Ok(None),
            };
            let candidates: Vec<String> = if scheme.normalize_llm_input {
                candidates
                    .iter()
                    .map(|c| normalize(c, &scheme.normalization))
                    .collect()
            } else {
                candidates
            };
            let result = llm_ger(
                &run.client,
                &utt.utt_id,
                &candidates,
                &run.template,
                &scheme.guard,
            )?;
            outputs.push(MergedStream {
                label: run.backend_id.clone(),
                text: result.text,
                ger: Some(GerRecord {
                    variant: run.variant,
                    raw: result.raw,
                    outcome: result.outcome,
                }),
            });
        }
        finish_utterance(
            utt,
            anchor,
            outputs,
            scheme.token_mode,
            &scheme.merge,
            &scheme.normalization,
        )
        .map(Some)
    })?;
    assemble_report(corpus, results, scheme.config.clone())
}

/// ROVER directly over ASR streams, reported in the same shape as
/// [`run_mpa`]. `streams[0]` is the anchor/base hypothesis.
pub fn run_baseline_rover(
    corpus: &Corpus,
    scheme: &BaselineRoverScheme,
    workers: usize,
) -> Result<RunReport, PipelineError> {
    if scheme.streams.is_empty() {
        return Err(PipelineError::Config("baseline needs at least one stream".into()));
    }
    scheme.merge.validate()?;
    let results = par_map_utterances(corpus, workers, |utt| {
        let texts = match resolve_streams(utt, &scheme.streams, scheme.missing_streams)? {
            Some(texts) => texts,
            None => return Ok(None),
        };
        let mut texts = texts.into_iter();
        let anchor = texts.next().expect("streams is non-empty");
        let outputs: Vec<MergedStream> = scheme
            .streams
            .iter()
            .skip(1)
            .zip(texts)
            .map(|(spec, text)| MergedStream {
                label: spec.to_string(),
                text,
                ger: None,
            })
            .collect();
        finish_utterance(
            utt,
            anchor,
            outputs,
            scheme.token_mode,
            &scheme.merge,
            &scheme.normalization,
        )
        .map(Some)
    })?;
    assemble_report(corpus, results, scheme.config.clone())
}

/// Merges the anchor with the collected streams and scores both against
/// the reference when one exists.
fn finish_utterance(
    utt: &Utterance,
    anchor: String,
    outputs: Vec<MergedStream>,
    mode: TokenMode,
    merge: &VoteOptions,
    norm: &NormalizationOptions,
) -> Result<UtteranceResult, PipelineError> {
    let mut sequences = Vec::with_capacity(outputs.len() + 1);
    sequences.push(tokenize(&anchor, mode));
    sequences.extend(outputs.iter().map(|o| tokenize(&o.text, mode)));
    let merged = rover_combine(&sequences, merge)?.join();
    let (merged_score, anchor_score) = match &utt.reference {
        Some(reference) => (
            Some(score_pair(&utt.utt_id, reference, &merged, norm, mode)),
            Some(score_pair(&utt.utt_id, reference, &anchor, norm, mode)),
        ),
        None => (None, None),
    };
    Ok(UtteranceResult {
        utt_id: utt.utt_id.clone(),
        anchor,
        outputs,
        merged,
        merged_score,
        anchor_score,
    })
}

fn par_map_utterances<F>(
    corpus: &Corpus,
    workers: usize,
    per_utterance: F,
) -> Result<Vec<Option<UtteranceResult>>, PipelineError>
where
    F: Fn(&Utterance) -> Result<Option<UtteranceResult>, PipelineError> + Sync,
{
    let utterances = corpus.utterances();
    if workers <= 1 || utterances.len() <= 1 {
        return utterances.iter().map(&per_utterance).collect();
    }
    let slots: Vec<Mutex<Option<Result<Option<UtteranceResult>, PipelineError>>>> =
        utterances.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.min(utterances.len()) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= utterances.len() {
                    break;
                }
                let outcome = per_utterance(&utterances[idx]);
                *slots[idx].lock().unwrap() = Some(outcome);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("all indices processed"))
        .collect()
}

fn assemble_report(
    corpus: &Corpus,
    results: Vec<Option<UtteranceResult>>,
    config: Value,
) -> Result<RunReport, PipelineError> {
    let mut utterances = Vec::with_capacity(results.len());
    let mut summary = RunSummary::default();
    for (utt, result) in corpus.utterances().iter().zip(results) {
        let Some(result) = result else {
            summary.skipped.push(utt.utt_id.clone());
            continue;
        };
        summary.utterances += 1;
        let mut fell_back = false;
        for output in &result.outputs {
            let Some(ger) = &output.ger else { continue };
            summary.outputs += 1;
            let stats = summary.backends.entry(output.label.clone()).or_default();
            stats.attempted += 1;
            if ger.raw.is_some() {
                stats.succeeded += 1;
            }
            match &ger.outcome {
                GerOutcome::Corrected => summary.corrected += 1,
                GerOutcome::GuardRejected { .. } => {
                    summary.guard_rejected += 1;
                    fell_back = true;
                }
                GerOutcome::BackendFailed { .. } => {
                    summary.backend_failed += 1;
                    fell_back = true;
                }
            }
        }
        if fell_back {
            summary.fallback_utterances += 1;
        }
        utterances.push(result);
    }

    let merged_records: Vec<ScoreRecord> = utterances
        .iter()
        .filter_map(|u| u.merged_score.clone())
        .collect();
    let anchor_records: Vec<ScoreRecord> = utterances
        .iter()
        .filter_map(|u| u.anchor_score.clone())
        .collect();
    let merged_cer = match merged_records.is_empty() {
        true => None,
        false => Some(corpus_cer(merged_records)?),
    };
    let anchor_cer = match anchor_records.is_empty() {
        true => None,
        false => Some(corpus_cer(anchor_records)?),
    };

    let digest = compute_digest(&config, &utterances);
    Ok(RunReport {
        utterances,
        summary,
        merged_cer,
        anchor_cer,
        config,
        digest,
    })
}

fn compute_digest(config: &Value, utterances: &[UtteranceResult]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config.to_string().as_bytes());
    hasher.update(b"\n");
    for utt in utterances {
        hasher.update(utterance_line(utt).as_bytes());
        hasher.update(b"\n");
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ReportLine {
    Header(ReportHeader),
    Utterance(UtteranceResult),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportHeader {
    pub config: Value,
    pub digest: String,
    pub summary: RunSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merged_cer: Option<CerSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor_cer: Option<CerSummary>,
}

fn utterance_line(utt: &UtteranceResult) -> String {
    serde_json::to_string(&ReportLine::Utterance(utt.clone())).expect("serializable result")
}

/// Renders a run report as JSONL: a header line followed by one line per
/// utterance. The digest covers the config and the utterance lines.
pub fn report_to_jsonl(report: &RunReport) -> String {
    let header = ReportLine::Header(ReportHeader {
        config: report.config.clone(),
        digest: report.digest.clone(),
        summary: report.summary.clone(),
        merged_cer: report.merged_cer.as_ref().map(CerSummary::from),
        anchor_cer: report.anchor_cer.as_ref().map(CerSummary::from),
    });
    let mut out = serde_json::to_string(&header).expect("serializable header");
    out.push('\n');
    for utt in &report.utterances {
        out.push_str(&utterance_line(utt));
        out.push('\n');
    }
    out
}

/// Parses a JSONL report back into its header and utterance results.
pub fn parse_report_str(
    data: &str,
) -> Result<(ReportHeader, Vec<UtteranceResult>), PipelineError> {
    let mut lines = data
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| PipelineError::Config("empty report".into()))?;
    let header = match serde_json::from_str::<ReportLine>(first) {
        Ok(ReportLine::Header(header)) => header,
        Ok(_) => {
            return Err(PipelineError::Config(
                "first report line is not a header".into(),
            ))
        }
        Err(e) => return Err(PipelineError::Config(format!("line 1: {e}"))),
    };
    let mut utterances = Vec::new();
    for (idx, line) in lines {
        match serde_json::from_str::<ReportLine>(line) {
            Ok(ReportLine::Utterance(utt)) => utterances.push(utt),
            Ok(_) => {
                return Err(PipelineError::Config(format!(
                    "line {}: unexpected extra header",
                    idx + 1
                )))
            }
            Err(e) => return Err(PipelineError::Config(format!("line {}: {e}", idx + 1))),
        }
    }
    Ok((header, utterances))
}

pub fn load_report(
    path: impl AsRef<Path>,
) -> Result<(ReportHeader, Vec<UtteranceResult>), PipelineError> {
    let data = std::fs::read_to_string(&path).map_err(|e| {
        PipelineError::Config(format!("cannot read report {:?}: {e}", path.as_ref()))
    })?;
    parse_report_str(&data)
}

// ---------------------------------------------------------------------------
// Scheme files
// ---------------------------------------------------------------------------

/// On-disk scheme description (JSON).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum SchemeFile {
    Mpa(MpaSchemeFile),
    BaselineRover(BaselineRoverFile),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpaSchemeFile {
    pub anchor: StreamSpec,
    pub ger_runs: Vec<GerRunFile>,
    #[serde(default)]
    pub merge: VoteOptions,
    #[serde(default)]
    pub guard: GuardPolicy,
    #[serde(default)]
    pub token_mode: TokenMode,
    #[serde(default)]
    pub normalize_llm_input: bool,
    #[serde(default)]
    pub normalization: NormalizationOptions,
    #[serde(default)]
    pub missing_streams: MissingStreamPolicy,
    pub backends: BTreeMap<String, BackendSpec>,
    #[serde(default)]
    pub templates: BTreeMap<String, TemplateSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineRoverFile {
    pub streams: Vec<StreamSpec>,
    #[serde(default)]
    pub merge: VoteOptions,
    #[serde(default)]
    pub token_mode: TokenMode,
    #[serde(default)]
    pub normalization: NormalizationOptions,
    #[serde(default)]
    pub missing_streams: MissingStreamPolicy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GerRunFile {
    pub variant: GerVariant,
    pub streams: Vec<StreamSpec>,
    pub backend: String,
    #[serde(default = "default_template_name")]
    pub template: String,
}

fn default_template_name() -> String {
    "english".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// Scriptable in-process backend; acceptance runs use this.
    Mock {
        #[serde(default)]
        default: MockDefault,
        /// utt_id → scripted completion text.
        #[serde(default)]
        outputs: BTreeMap<String, String>,
        /// Utterances that fail with a transport error.
        #[serde(default)]
        fail_utts: Vec<String>,
        /// Transport failures injected before any request succeeds.
        #[serde(default)]
        fail_first: u32,
        #[serde(default)]
        config: BackendConfig,
    },
    /// JSON-over-HTTP completion endpoint.
    Http {
        #[serde(flatten)]
        config: BackendConfig,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TemplateSpec {
    File { file: PathBuf },
    Inline(PromptTemplate),
}

pub enum ResolvedScheme {
    Mpa(MpaScheme),
    BaselineRover(BaselineRoverScheme),
}

/// Parses a scheme file and resolves it against backends and templates.
/// `endpoint_override` takes precedence over the `MPAGER_ENDPOINT`
/// environment variable, which takes precedence over the file.
pub fn load_scheme_str(
    data: &str,
    endpoint_override: Option<&str>,
) -> Result<ResolvedScheme, PipelineError> {
    let file: SchemeFile =
        serde_json::from_str(data).map_err(|e| PipelineError::Config(e.to_string()))?;
    let snapshot: Value =
        serde_json::from_str(data).map_err(|e| PipelineError::Config(e.to_string()))?;
    match file {
        SchemeFile::Mpa(mpa) => {
            let scheme = build_mpa_scheme(mpa, snapshot, endpoint_override)?;
            scheme.validate()?;
            Ok(ResolvedScheme::Mpa(scheme))
        }
        SchemeFile::BaselineRover(baseline) => {
            let scheme = BaselineRoverScheme {
                streams: baseline.streams,
                merge: baseline.merge,
                token_mode: baseline.token_mode,
                normalization: baseline.normalization,
                missing_streams: baseline.missing_streams,
                config: snapshot,
            };
            if scheme.streams.is_empty() {
                return Err(PipelineError::Config(
                    "baseline needs at least one stream".into(),
                ));
            }
            scheme.merge.validate()?;
            Ok(ResolvedScheme::BaselineRover(scheme))
        }
    }
}

pub fn load_scheme_file(
    path: impl AsRef<Path>,
    endpoint_override: Option<&str>,
) -> Result<ResolvedScheme, PipelineError> {
    let data = std::fs::read_to_string(&path).map_err(|e| {
        PipelineError::Config(format!("cannot read scheme {:?}: {e}", path.as_ref()))
    })?;
    load_scheme_str(&data, endpoint_override)
}

fn build_mpa_scheme(
    file: MpaSchemeFile,
    snapshot: Value,
    endpoint_override: Option<&str>,
) -> Result<MpaScheme, PipelineError> {
    let mut clients: BTreeMap<String, Arc<LlmClient>> = BTreeMap::new();
    for (id, spec) in &file.backends {
        clients.insert(id.clone(), Arc::new(build_backend(spec, endpoint_override)?));
    }
    let mut runs = Vec::with_capacity(file.ger_runs.len());
    for run in &file.ger_runs {
        let client = clients
            .get(&run.backend)
            .ok_or_else(|| PipelineError::Config(format!("unknown backend {:?}", run.backend)))?
            .clone();
        let template = resolve_template(&run.template, &file.templates)?;
        runs.push(GerRun {
            variant: run.variant,
            streams: run.streams.clone(),
            backend_id: run.backend.clone(),
            client,
            template,
        });
    }
    Ok(MpaScheme {
        anchor: file.anchor,
        ger_runs: runs,
        merge: file.merge,
        guard: file.guard,
        token_mode: file.token_mode,
        normalize_llm_input: file.normalize_llm_input,
        normalization: file.normalization,
        missing_streams: file.missing_streams,
        config: snapshot,
    })
}

fn build_backend(
    spec: &BackendSpec,
    endpoint_override: Option<&str>,
) -> Result<LlmClient, PipelineError> {
    match spec {
        BackendSpec::Mock {
            default,
            outputs,
            fail_utts,
            fail_first,
            config,
        } => {
            let mut backend = match default {
                MockDefault::Echo => MockBackend::echo(),
                MockDefault::FailTransport => MockBackend::unreachable(),
            };
            for (utt_id, text) in outputs {
                backend = backend.with_reply(utt_id.clone(), MockReply::Output(text.clone()));
            }
            for utt_id in fail_utts {
                backend = backend.with_reply(utt_id.clone(), MockReply::FailTransport);
            }
            if *fail_first > 0 {
                backend = backend.failing_first(*fail_first);
            }
            Ok(LlmClient::new(Arc::new(backend), config.clone())?)
        }
        BackendSpec::Http { config } => {
            let endpoint = endpoint_override
                .map(str::to_string)
                .or_else(|| std::env::var(ENDPOINT_ENV).ok())
                .unwrap_or_else(|| config.endpoint_url.clone());
            if endpoint.is_empty() {
                return Err(PipelineError::Config(
                    "http backend has no endpoint_url (set it in the scheme, via \
                     MPAGER_ENDPOINT, or with --endpoint)"
                        .into(),
                ));
            }
            let api_key = std::env::var(crate::llm::http::API_KEY_ENV).ok();
            let backend = HttpBackend::new(config, endpoint, api_key);
            Ok(LlmClient::new(Arc::new(backend), config.clone())?)
        }
    }
}

fn resolve_template(
    name: &str,
    templates: &BTreeMap<String, TemplateSpec>,
) -> Result<PromptTemplate, PipelineError> {
    if let Some(spec) = templates.get(name) {
        let template = match spec {
            TemplateSpec::Inline(template) => template.clone(),
            TemplateSpec::File { file } => PromptTemplate::from_file(file)?,
        };
        template.validate()?;
        return Ok(template);
    }
    PromptTemplate::builtin(name)
        .ok_or_else(|| PipelineError::Config(format!("unknown template {name:?}")))
}

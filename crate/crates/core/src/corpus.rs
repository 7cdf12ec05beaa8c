//! Data model, ingestion, and persistence for utterances, references, and
//! multi-system hypothesis streams.
//!
//! The canonical interchange format is JSONL: one hypothesis per line,
//! `{"utt_id", "system", "rank", "text"}` plus optional `"score"` and
//! `"reference"` fields, UTF-8 with LF line endings. SCTK-style trn files
//! (`tokens (utt_id)` per line) are supported for interoperability.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate hypothesis for ({utt_id}, {system}, rank {rank})")]
    DuplicateEntry {
        line: usize,
        utt_id: String,
        system: String,
        rank: u32,
    },
    #[error("line {line}: reference for {utt_id} conflicts with an earlier line")]
    ConflictingReference { line: usize, utt_id: String },
    #[error("duplicate utterance id {0}")]
    DuplicateUtterance(String),
    #[error("utterance {utt_id}: system {system} has no rank-1 hypothesis")]
    MissingRankOne { utt_id: String, system: String },
    #[error("utterance {utt_id}: no hypotheses")]
    EmptyUtterance { utt_id: String },
    #[error("invalid stream specifier {0:?} (expected \"system\" or \"system@rank\")")]
    BadStreamSpec(String),
    #[error("utterance {utt_id}: missing stream {stream}")]
    MissingStream { utt_id: String, stream: String },
    #[error("no reference available for utterance {0}")]
    MissingReference(String),
    #[error("unknown utterance id {0}")]
    UnknownUtterance(String),
    #[error("io error: {0}")]
    Io(String),
}

/// One candidate transcription with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisEntry {
    pub system: String,
    pub rank: u32,
    pub text: String,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub utt_id: String,
    pub reference: Option<String>,
    pub entries: Vec<HypothesisEntry>,
}

/// An immutable, ordered collection of utterances with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    utterances: Vec<Utterance>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Validates and indexes the utterances: ids unique, `(system, rank)`
    /// unique within an utterance, ranks positive, rank 1 present for
    /// every system, and at least one hypothesis each.
    pub fn from_utterances(utterances: Vec<Utterance>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(utterances.len());
        for (pos, utt) in utterances.iter().enumerate() {
            if index.insert(utt.utt_id.clone(), pos).is_some() {
                return Err(CorpusError::DuplicateUtterance(utt.utt_id.clone()));
            }
            if utt.entries.is_empty() {
                return Err(CorpusError::EmptyUtterance {
                    utt_id: utt.utt_id.clone(),
                });
            }
            let mut seen = HashSet::new();
            let mut rank_one: HashSet<&str> = HashSet::new();
            for entry in &utt.entries {
                if entry.rank == 0 {
                    return Err(CorpusError::Malformed {
                        line: 0,
                        message: format!(
                            "utterance {}: rank must be positive for system {}",
                            utt.utt_id, entry.system
                        ),
                    });
                }
                if !seen.insert((entry.system.clone(), entry.rank)) {
                    return Err(CorpusError::DuplicateEntry {
                        line: 0,
                        utt_id: utt.utt_id.clone(),
                        system: entry.system.clone(),
                        rank: entry.rank,
                    });
                }
                if entry.rank == 1 {
                    rank_one.insert(&entry.system);
                }
            }
            for entry in &utt.entries {
                if !rank_one.contains(entry.system.as_str()) {
                    return Err(CorpusError::MissingRankOne {
                        utt_id: utt.utt_id.clone(),
                        system: entry.system.clone(),
                    });
                }
            }
        }
        Ok(Self { utterances, index })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn get(&self, utt_id: &str) -> Option<&Utterance> {
        self.index.get(utt_id).map(|&i| &self.utterances[i])
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Attaches references from `(utt_id, text)` pairs (e.g. a trn file).
    /// Unknown ids are an error; utterances without a pair keep their
    /// current reference.
    pub fn attach_references(&mut self, refs: &[(String, String)]) -> Result<(), CorpusError> {
        for (utt_id, text) in refs {
            let &pos = self
                .index
                .get(utt_id)
                .ok_or_else(|| CorpusError::UnknownUtterance(utt_id.clone()))?;
            self.utterances[pos].reference = Some(text.clone());
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlRecord {
    utt_id: String,
    system: String,
    rank: u32,
    text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<String>,
}

/// Parses a JSONL hypothesis corpus, reporting malformed lines by number.
pub fn from_jsonl_str(data: &str) -> Result<Corpus, CorpusError> {
    let mut order: Vec<String> = Vec::new();
    let mut utts: HashMap<String, Utterance> = HashMap::new();
    let mut seen: HashSet<(String, String, u32)> = HashSet::new();
    for (idx, line) in data.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        if record.utt_id.is_empty() {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "utt_id must be non-empty".into(),
            });
        }
        if record.rank == 0 {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "rank must be positive".into(),
            });
        }
        let key = (record.utt_id.clone(), record.system.clone(), record.rank);
        if !seen.insert(key) {
            return Err(CorpusError::DuplicateEntry {
                line: line_no,
                utt_id: record.utt_id,
                system: record.system,
                rank: record.rank,
            });
        }
        let utt = utts.entry(record.utt_id.clone()).or_insert_with(|| {
            order.push(record.utt_id.clone());
            Utterance {
                utt_id: record.utt_id.clone(),
                reference: None,
                entries: Vec::new(),
            }
        });
        if let Some(reference) = record.reference {
            match &utt.reference {
                Some(existing) if *existing != reference => {
                    return Err(CorpusError::ConflictingReference {
                        line: line_no,
                        utt_id: record.utt_id,
                    });
                }
                _ => utt.reference = Some(reference),
            }
        }
        utt.entries.push(HypothesisEntry {
            system: record.system,
            rank: record.rank,
            text: record.text,
            score: record.score,
        });
    }
    let utterances = order
        .into_iter()
        .map(|id| utts.remove(&id).expect("ordered ids exist"))
        .collect();
    Corpus::from_utterances(utterances)
}

/// Serializes a corpus back to JSONL. The reference, when present, is
/// carried on the utterance's first line so that save→load round-trips
/// exactly.
pub fn to_jsonl_string(corpus: &Corpus) -> String {
    let mut out = String::new();
    for utt in corpus.utterances() {
        for (i, entry) in utt.entries.iter().enumerate() {
            let record = JsonlRecord {
                utt_id: utt.utt_id.clone(),
                system: entry.system.clone(),
                rank: entry.rank,
                text: entry.text.clone(),
                score: entry.score,
                reference: if i == 0 { utt.reference.clone() } else { None },
            };
            out.push_str(&serde_json::to_string(&record).expect("serializable record"));
            out.push('\n');
        }
    }
    out
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let data = fs::read_to_string(path).map_err(|e| CorpusError::Io(e.to_string()))?;
    from_jsonl_str(&data)
}

pub fn save_jsonl(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    fs::write(path, to_jsonl_string(corpus)).map_err(|e| CorpusError::Io(e.to_string()))
}

/// Parses SCTK trn content: one `tokens (utt_id)` line per utterance.
pub fn parse_trn_str(data: &str) -> Result<Vec<(String, String)>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in data.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let stripped = line.strip_suffix(')').ok_or_else(|| CorpusError::Malformed {
            line: line_no,
            message: "expected trailing \"(utt_id)\"".into(),
        })?;
        let open = stripped.rfind('(').ok_or_else(|| CorpusError::Malformed {
            line: line_no,
            message: "expected trailing \"(utt_id)\"".into(),
        })?;
        let utt_id = &stripped[open + 1..];
        if utt_id.is_empty() {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "empty utterance id".into(),
            });
        }
        let text = match stripped[..open].strip_suffix(' ') {
            Some(t) => t,
            None if stripped[..open].is_empty() => "",
            None => {
                return Err(CorpusError::Malformed {
                    line: line_no,
                    message: "expected a space before \"(utt_id)\"".into(),
                })
            }
        };
        out.push((utt_id.to_string(), text.to_string()));
    }
    Ok(out)
}

/// Renders `(utt_id, text)` pairs as trn lines. Note trn stores
/// space-joined tokens; leading/trailing whitespace is not representable.
pub fn format_trn(entries: &[(String, String)]) -> String {
    let mut out = String::new();
    for (utt_id, text) in entries {
        if text.is_empty() {
            out.push_str(&format!("({utt_id})\n"));
        } else {
            out.push_str(&format!("{text} ({utt_id})\n"));
        }
    }
    out
}

pub fn load_trn(path: impl AsRef<Path>) -> Result<Vec<(String, String)>, CorpusError> {
    let data = fs::read_to_string(path).map_err(|e| CorpusError::Io(e.to_string()))?;
    parse_trn_str(&data)
}

pub fn save_trn(entries: &[(String, String)], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    fs::write(path, format_trn(entries)).map_err(|e| CorpusError::Io(e.to_string()))
}

/// A `system@rank` stream specifier; the rank defaults to 1 when omitted,
/// so `"whisper"` names a system's 1-best stream.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StreamSpec {
    pub system: String,
    pub rank: u32,
}

impl StreamSpec {
    pub fn new(system: impl Into<String>, rank: u32) -> Self {
        Self {
            system: system.into(),
            rank,
        }
    }
}

impl fmt::Display for StreamSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.system, self.rank)
    }
}

impl FromStr for StreamSpec {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CorpusError::BadStreamSpec(s.to_string());
        match s.split_once('@') {
            Some((system, rank)) => {
                if system.is_empty() {
                    return Err(bad());
                }
                let rank: u32 = rank.parse().map_err(|_| bad())?;
                if rank == 0 {
                    return Err(bad());
                }
                Ok(StreamSpec::new(system, rank))
            }
            None if !s.is_empty() => Ok(StreamSpec::new(s, 1)),
            None => Err(bad()),
        }
    }
}

impl TryFrom<String> for StreamSpec {
    type Error = CorpusError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<StreamSpec> for String {
    fn from(spec: StreamSpec) -> Self {
        spec.to_string()
    }
}

/// What to do when an utterance lacks a requested stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingStreamPolicy {
    /// Fail the whole run; silent drops would bias CER comparisons.
    #[default]
    Error,
    /// Leave the utterance out of the selection.
    SkipUtterance,
}

/// Resolves a scheme of stream specifiers to per-utterance candidate
/// lists, in scheme order, for every utterance in corpus order.
pub fn select_streams(
    corpus: &Corpus,
    scheme: &[StreamSpec],
    policy: MissingStreamPolicy,
) -> Result<Vec<(String, Vec<String>)>, CorpusError> {
    let mut out = Vec::with_capacity(corpus.len());
    'utt: for utt in corpus.utterances() {
        let mut candidates = Vec::with_capacity(scheme.len());
        for spec in scheme {
            let entry = utt
                .entries
                .iter()
                .find(|e| e.system == spec.system && e.rank == spec.rank);
            match (entry, policy) {
                (Some(entry), _) => candidates.push(entry.text.clone()),
                (None, MissingStreamPolicy::Error) => {
                    return Err(CorpusError::MissingStream {
                        utt_id: utt.utt_id.clone(),
                        stream: spec.to_string(),
                    });
                }
                (None, MissingStreamPolicy::SkipUtterance) => continue 'utt,
            }
        }
        out.push((utt.utt_id.clone(), candidates));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_jsonl() -> &'static str {
        concat!(
            "{\"utt_id\":\"u1\",\"system\":\"A\",\"rank\":1,\"text\":\"a b c\",\"reference\":\"a b c\"}\n",
            "{\"utt_id\":\"u1\",\"system\":\"B\",\"rank\":1,\"text\":\"a x c\"}\n",
            "{\"utt_id\":\"u2\",\"system\":\"A\",\"rank\":1,\"text\":\"d e\"}\n",
            "{\"utt_id\":\"u2\",\"system\":\"A\",\"rank\":2,\"text\":\"d f\"}\n",
            "{\"utt_id\":\"u2\",\"system\":\"A\",\"rank\":3,\"text\":\"d g\",\"score\":-1.5}\n",
            "{\"utt_id\":\"u2\",\"system\":\"B\",\"rank\":1,\"text\":\"d e\"}\n",
        )
    }

    #[test]
    fn loads_two_systems_and_nbest() {
        let corpus = from_jsonl_str(sample_jsonl()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.get("u1").unwrap().entries.len(), 2);
        let u2 = corpus.get("u2").unwrap();
        assert_eq!(u2.entries.iter().filter(|e| e.system == "A").count(), 3);
        assert_eq!(u2.entries[2].score, Some(-1.5));
        assert_eq!(corpus.get("u1").unwrap().reference.as_deref(), Some("a b c"));
    }

    #[test]
    fn duplicate_key_names_the_line() {
        let data = concat!(
            "{\"utt_id\":\"u1\",\"system\":\"A\",\"rank\":1,\"text\":\"a\"}\n",
            "{\"utt_id\":\"u1\",\"system\":\"A\",\"rank\":1,\"text\":\"b\"}\n",
        );
        match from_jsonl_str(data) {
            Err(CorpusError::DuplicateEntry { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn missing_utt_id_is_malformed() {
        let data = "{\"system\":\"A\",\"rank\":1,\"text\":\"a\"}\n";
        assert!(matches!(
            from_jsonl_str(data),
            Err(CorpusError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn missing_rank_one_is_rejected() {
        let data = "{\"utt_id\":\"u1\",\"system\":\"A\",\"rank\":2,\"text\":\"a\"}\n";
        assert!(matches!(
            from_jsonl_str(data),
            Err(CorpusError::MissingRankOne { .. })
        ));
    }

    #[test]
    fn jsonl_round_trips() {
        let corpus = from_jsonl_str(sample_jsonl()).unwrap();
        let saved = to_jsonl_string(&corpus);
        let reloaded = from_jsonl_str(&saved).unwrap();
        assert_eq!(corpus, reloaded);
        assert_eq!(to_jsonl_string(&reloaded), saved);
    }

    #[test]
    fn trn_parses_and_formats() {
        assert_eq!(
            parse_trn_str("a b c (utt1)\n").unwrap(),
            [("utt1".to_string(), "a b c".to_string())]
        );
        assert_eq!(
            parse_trn_str("(utt1)\n").unwrap(),
            [("utt1".to_string(), String::new())]
        );
        assert!(matches!(
            parse_trn_str("no id here\n"),
            Err(CorpusError::Malformed { line: 1, .. })
        ));
        let entries = vec![
            ("u1".to_string(), "a (b) c".to_string()),
            ("u2".to_string(), String::new()),
        ];
        assert_eq!(parse_trn_str(&format_trn(&entries)).unwrap(), entries);
    }

    #[test]
    fn stream_specs_parse() {
        assert_eq!("whisper@2".parse::<StreamSpec>().unwrap(), StreamSpec::new("whisper", 2));
        assert_eq!("whisper".parse::<StreamSpec>().unwrap(), StreamSpec::new("whisper", 1));
        assert!("@1".parse::<StreamSpec>().is_err());
        assert!("sys@0".parse::<StreamSpec>().is_err());
        assert!("sys@x".parse::<StreamSpec>().is_err());
    }

    #[test]
    fn select_streams_follows_scheme_order() {
        let corpus = from_jsonl_str(sample_jsonl()).unwrap();
        let scheme = vec![StreamSpec::new("B", 1), StreamSpec::new("A", 1)];
        let selected = select_streams(&corpus, &scheme, MissingStreamPolicy::Error).unwrap();
        assert_eq!(selected[0].1, ["a x c", "a b c"]);
        assert_eq!(selected[1].1, ["d e", "d e"]);
    }

    #[test]
    fn nbest_scheme_selects_depth() {
        let corpus = from_jsonl_str(sample_jsonl()).unwrap();
        let scheme = vec![
            StreamSpec::new("A", 1),
            StreamSpec::new("A", 2),
            StreamSpec::new("A", 3),
        ];
        match select_streams(&corpus, &scheme, MissingStreamPolicy::Error) {
            Err(CorpusError::MissingStream { utt_id, .. }) => assert_eq!(utt_id, "u1"),
            other => panic!("expected missing stream, got {other:?}"),
        }
        let skipped = select_streams(&corpus, &scheme, MissingStreamPolicy::SkipUtterance).unwrap();
        assert_eq!(skipped.len(), 1);
        assert_eq!(skipped[0].0, "u2");
        assert_eq!(skipped[0].1, ["d e", "d f", "d g"]);
    }

    #[test]
    fn attach_references_by_id() {
        let mut corpus = from_jsonl_str(sample_jsonl()).unwrap();
        corpus
            .attach_references(&[("u2".to_string(), "d e".to_string())])
            .unwrap();
        assert_eq!(corpus.get("u2").unwrap().reference.as_deref(), Some("d e"));
        assert!(corpus
            .attach_references(&[("nope".to_string(), "x".to_string())])
            .is_err());
    }

    #[test]
    fn conflicting_references_are_rejected() {
        let data = concat!(
            "{\"utt_id\":\"u1\",\"system\":\"A\",\"rank\":1,\"text\":\"a\",\"reference\":\"r1\"}\n",
            "{\"utt_id\":\"u1\",\"system\":\"B\",\"rank\":1,\"text\":\"b\",\"reference\":\"r2\"}\n",
        );
        assert!(matches!(
            from_jsonl_str(data),
            Err(CorpusError::ConflictingReference { line: 2, .. })
        ));
    }
}

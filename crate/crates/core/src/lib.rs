//! # mpager
//!
//! A toolkit for post-processing ASR transcripts: CER scoring with
//! Japanese-aware text normalization, ROVER hypothesis combination, and
//! multi-pass augmented generative error correction (MPA GER) driven by
//! pluggable LLM completion backends.
//!
//! The pieces compose bottom-up:
//!
//! * [`textnorm`] — deterministic normalization and tokenization,
//! * [`alignment`] — minimum-edit-distance alignment of token sequences,
//! * [`rover`] — token transition networks and per-slot voting,
//! * [`scoring`] — CER aggregation, length buckets, paired t-tests,
//! * [`corpus`] — JSONL/trn ingestion of multi-system hypothesis streams,
//! * [`llm`] — prompt construction, completion backends, output guarding,
//! * [`pipeline`] — end-to-end GER and MPA GER runs over a corpus.

pub mod alignment;
pub mod corpus;
pub mod llm;
pub mod pipeline;
pub mod rover;
pub mod scoring;
pub mod textnorm;

pub use alignment::{align, edit_counts, Alignment, EditCounts, EditOp, EditOpKind};
pub use corpus::{Corpus, HypothesisEntry, StreamSpec, Utterance};
pub use llm::{build_prompt, guard_output, GuardDecision, GuardPolicy, LlmClient, PromptTemplate};
pub use rover::{build_wtn, rover_combine, vote, TransitionNetwork, VoteOptions};
pub use scoring::{
    bucket_report, corpus_cer, paired_ttest, score_pair, students_t_p_two_sided, CerReport,
    ScoreRecord,
};
pub use textnorm::{normalize, tokenize, NormalizationOptions, TokenMode, TokenSequence};

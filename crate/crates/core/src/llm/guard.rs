//! Rejection of degenerate LLM output (runaway length, looped
//! repetitions) with fallback to the anchor hypothesis.

use serde::{Deserialize, Serialize};

/// Thresholds for rejecting a correction. A correction is rejected when
/// its character count exceeds `max_length_ratio` times the anchor's, or
/// when some `ngram_size`-gram repeats back-to-back more than
/// `max_ngram_repeats` times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardPolicy {
    pub max_length_ratio: f64,
    pub ngram_size: usize,
    pub max_ngram_repeats: u32,
}

impl Default for GuardPolicy {
    fn default() -> Self {
        // An 11x repetition must trip the ratio rule while ordinary
        // disfluency edits stay comfortably under it.
        Self {
            max_length_ratio: 3.0,
            ngram_size: 4,
            max_ngram_repeats: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum GuardReason {
    LengthRatio { ratio: f64, limit: f64 },
    NgramRepetition { ngram_size: usize, repeats: u32, limit: u32 },
}

impl std::fmt::Display for GuardReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GuardReason::LengthRatio { ratio, limit } => {
                write!(f, "length ratio {ratio:.2} exceeds {limit}")
            }
            GuardReason::NgramRepetition { ngram_size, repeats, limit } => {
                write!(f, "{ngram_size}-gram repeated {repeats}x (limit {limit})")
            }
        }
    }
}

/// Either the corrected text, or the anchor with the rule that fired.
#[derive(Debug, Clone, PartialEq)]
pub enum GuardDecision {
    Accepted(String),
    Rejected { fallback: String, reason: GuardReason },
}

impl GuardDecision {
    /// The text the pipeline should use downstream.
    pub fn text(&self) -> &str {
        match self {
            GuardDecision::Accepted(text) => text,
            GuardDecision::Rejected { fallback, .. } => fallback,
        }
    }

    pub fn is_accepted(&self) -> bool {
        matches!(self, GuardDecision::Accepted(_))
    }
}

/// Checks `corrected` against the policy, falling back to `anchor` on
/// rejection. Both rules look at Unicode scalars; the length rule is
/// skipped when the anchor is empty.
pub fn guard_output(anchor: &str, corrected: &str, policy: &GuardPolicy) -> GuardDecision {
    let anchor_len = anchor.chars().count();
    let corrected_len = corrected.chars().count();
    if anchor_len > 0 {
        let ratio = corrected_len as f64 / anchor_len as f64;
        if ratio > policy.max_length_ratio {
            return GuardDecision::Rejected {
                fallback: anchor.to_string(),
                reason: GuardReason::LengthRatio {
                    ratio,
                    limit: policy.max_length_ratio,
                },
            };
        }
    }
    if policy.ngram_size > 0 {
        // Repetition is detected on the non-whitespace character stream so
        // spaced and unspaced transcripts behave alike.
        let chars: Vec<char> = corrected.chars().filter(|c| !c.is_whitespace()).collect();
        if let Some(repeats) = max_consecutive_ngram_repeats(&chars, policy.ngram_size) {
            if repeats > policy.max_ngram_repeats {
                return GuardDecision::Rejected {
                    fallback: anchor.to_string(),
                    reason: GuardReason::NgramRepetition {
                        ngram_size: policy.ngram_size,
                        repeats,
                        limit: policy.max_ngram_repeats,
                    },
                };
            }
        }
    }
    GuardDecision::Accepted(corrected.to_string())
}

/// Largest number of back-to-back occurrences of any `n`-gram, or None
/// when the text is shorter than one n-gram.
fn max_consecutive_ngram_repeats(chars: &[char], n: usize) -> Option<u32> {
    if chars.len() < n {
        return None;
    }
    let mut best = 1u32;
    for start in 0..=(chars.len() - n) {
        let gram = &chars[start..start + n];
        let mut count = 1u32;
        let mut pos = start + n;
        while pos + n <= chars.len() && &chars[pos..pos + n] == gram {
            count += 1;
            pos += n;
        }
        best = best.max(count);
    }
    Some(best)
}

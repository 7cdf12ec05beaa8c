//! Text normalization and tokenization applied identically to hypotheses
//! and references before scoring or combination.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;
use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

/// Japanese marks stripped by the default punctuation set in addition to
/// everything in the Unicode P* general categories.
pub const JAPANESE_PUNCTUATION: [char; 7] = ['。', '、', '「', '」', '・', '！', '？'];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextnormError {
    #[error("strip_punctuation is enabled but the custom punctuation set is empty")]
    EmptyPunctuationSet,
    #[error("invalid token {token:?} for {mode:?} mode: {reason}")]
    InvalidToken {
        token: String,
        mode: TokenMode,
        reason: &'static str,
    },
}

/// Which characters count as punctuation when stripping.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PunctuationSet {
    /// Unicode general categories P* plus [`JAPANESE_PUNCTUATION`].
    #[default]
    Default,
    /// Exactly these characters.
    Custom(BTreeSet<char>),
}

impl PunctuationSet {
    pub fn contains(&self, c: char) -> bool {
        match self {
            PunctuationSet::Default => {
                c.general_category_group() == GeneralCategoryGroup::Punctuation
                    || JAPANESE_PUNCTUATION.contains(&c)
            }
            PunctuationSet::Custom(set) => set.contains(&c),
        }
    }
}

/// Options controlling [`normalize`]. Steps run in a fixed order:
/// width folding, punctuation stripping, whitespace collapsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationOptions {
    /// Map full-width/half-width compatibility forms (U+FF00..=U+FFEF and
    /// the ideographic space) to their canonical counterparts.
    pub fold_width: bool,
    pub strip_punctuation: bool,
    pub punctuation: PunctuationSet,
    /// Trim and collapse whitespace runs to a single ASCII space.
    pub collapse_whitespace: bool,
}

impl Default for NormalizationOptions {
    fn default() -> Self {
        Self {
            fold_width: true,
            strip_punctuation: true,
            punctuation: PunctuationSet::Default,
            collapse_whitespace: true,
        }
    }
}

impl NormalizationOptions {
    /// No-op normalization; useful when text is already canonical.
    pub fn none() -> Self {
        Self {
            fold_width: false,
            strip_punctuation: false,
            punctuation: PunctuationSet::Default,
            collapse_whitespace: false,
        }
    }

    pub fn validate(&self) -> Result<(), TextnormError> {
        match (&self.punctuation, self.strip_punctuation) {
            (PunctuationSet::Custom(set), true) if set.is_empty() => {
                Err(TextnormError::EmptyPunctuationSet)
            }
            _ => Ok(()),
        }
    }
}

/// Width folding scoped to the Halfwidth and Fullwidth Forms block: each
/// character in U+FF00..=U+FFEF is replaced by its compatibility
/// decomposition (full-width ASCII becomes ASCII, half-width katakana
/// becomes katakana), the ideographic space becomes an ASCII space, and a
/// final canonical composition merges stray voicing marks (ｶﾞ → ガ).
fn fold_width(text: &str) -> String {
    let expanded = text.chars().flat_map(|c| {
        let wide = ('\u{FF00}'..='\u{FFEF}').contains(&c);
        let mapped: Vec<char> = if wide {
            std::iter::once(c).nfkc().collect()
        } else if c == '\u{3000}' {
            vec![' ']
        } else {
            vec![c]
        };
        mapped
    });
    expanded.collect::<String>().nfc().collect()
}

/// Normalizes `text` per `opts`. Idempotent; empty input yields empty output.
pub fn normalize(text: &str, opts: &NormalizationOptions) -> String {
    let mut out = if opts.fold_width {
        fold_width(text)
    } else {
        text.to_string()
    };
    if opts.strip_punctuation {
        out.retain(|c| !opts.punctuation.contains(c));
    }
    if opts.collapse_whitespace {
        out = out.split_whitespace().collect::<Vec<_>>().join(" ");
    }
    out
}

/// Token granularity for alignment, voting, and scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenMode {
    /// One token per non-whitespace Unicode scalar (CER).
    #[default]
    Char,
    /// Split on whitespace runs (WER-style).
    Whitespace,
}

/// A tokenized transcript; the unit of alignment and voting.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<String>,
    mode: TokenMode,
}

impl TokenSequence {
    /// Builds a sequence from pre-split tokens, validating the mode
    /// invariants (char tokens are single non-whitespace scalars;
    /// whitespace tokens contain no whitespace, and none are empty).
    pub fn from_tokens(tokens: Vec<String>, mode: TokenMode) -> Result<Self, TextnormError> {
        for token in &tokens {
            let reason = match mode {
                TokenMode::Char if token.chars().count() != 1 => {
                    Some("char tokens must be exactly one Unicode scalar")
                }
                _ if token.is_empty() => Some("tokens must be non-empty"),
                _ if token.chars().any(char::is_whitespace) => {
                    Some("tokens must not contain whitespace")
                }
                _ => None,
            };
            if let Some(reason) = reason {
                return Err(TextnormError::InvalidToken {
                    token: token.clone(),
                    mode,
                    reason,
                });
            }
        }
        Ok(Self { tokens, mode })
    }

    /// Crate-internal constructor for tokens already known to satisfy the
    /// mode invariants (e.g. tokens pulled from validated sequences).
    pub(crate) fn from_tokens_unchecked(tokens: Vec<String>, mode: TokenMode) -> Self {
        Self { tokens, mode }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn mode(&self) -> TokenMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Renders the sequence back to text: char tokens are concatenated,
    /// whitespace tokens joined by single spaces.
    pub fn join(&self) -> String {
        match self.mode {
            TokenMode::Char => self.tokens.concat(),
            TokenMode::Whitespace => self.tokens.join(" "),
        }
    }
}

/// Tokenizes already-normalized text. Char mode drops all whitespace so
/// spacing differences never count as errors.
pub fn tokenize(text: &str, mode: TokenMode) -> TokenSequence {
    let tokens = match mode {
        TokenMode::Char => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect(),
        TokenMode::Whitespace => text.split_whitespace().map(String::from).collect(),
    };
    TokenSequence { tokens, mode }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_fullwidth_forms() {
        assert_eq!(normalize("Ａ１", &NormalizationOptions::default()), "A1");
        assert_eq!(fold_width("ＡＢＣ　ｄｅｆ"), "ABC def");
    }

    #[test]
    fn folds_halfwidth_katakana_and_composes_voicing() {
        assert_eq!(fold_width("ｶﾞｷﾞｭｳ"), "ガギュウ");
        assert_eq!(fold_width("ﾊﾟﾝ"), "パン");
    }

    #[test]
    fn strips_japanese_punctuation() {
        assert_eq!(normalize("です。", &NormalizationOptions::default()), "です");
        assert_eq!(
            normalize("「えー、そう」です！", &NormalizationOptions::default()),
            "えーそうです"
        );
    }

    #[test]
    fn keeps_prolonged_sound_mark() {
        // ー is a letter modifier, not punctuation.
        assert_eq!(normalize("えーと", &NormalizationOptions::default()), "えーと");
    }

    #[test]
    fn custom_punctuation_set() {
        let opts = NormalizationOptions {
            punctuation: PunctuationSet::Custom(BTreeSet::from(['x'])),
            ..Default::default()
        };
        assert_eq!(normalize("a.x.b", &opts), "a..b");
    }

    #[test]
    fn collapse_whitespace_trims_and_joins() {
        let opts = NormalizationOptions::default();
        assert_eq!(normalize("  a \t b\u{3000}c ", &opts), "a b c");
    }

    #[test]
    fn empty_input_yields_empty_output() {
        assert_eq!(normalize("", &NormalizationOptions::default()), "");
    }

    #[test]
    fn validate_rejects_empty_custom_set() {
        let opts = NormalizationOptions {
            punctuation: PunctuationSet::Custom(BTreeSet::new()),
            ..Default::default()
        };
        assert_eq!(opts.validate(), Err(TextnormError::EmptyPunctuationSet));
        assert!(NormalizationOptions::default().validate().is_ok());
    }

    #[test]
    fn tokenize_char_drops_whitespace() {
        assert_eq!(tokenize("a b", TokenMode::Char).tokens(), ["a", "b"]);
        assert_eq!(
            tokenize("拘 束 条 件", TokenMode::Char).tokens(),
            ["拘", "束", "条", "件"]
        );
    }

    #[test]
    fn tokenize_whitespace_splits_on_runs() {
        assert_eq!(
            tokenize("hello  world", TokenMode::Whitespace).tokens(),
            ["hello", "world"]
        );
    }

    #[test]
    fn join_round_trips_token_shapes() {
        let seq = tokenize("拘 束 条 件", TokenMode::Char);
        assert_eq!(seq.join(), "拘束条件");
        let seq = tokenize("hello world", TokenMode::Whitespace);
        assert_eq!(seq.join(), "hello world");
    }

    #[test]
    fn from_tokens_validates_modes() {
        assert!(TokenSequence::from_tokens(vec!["ab".into()], TokenMode::Char).is_err());
        assert!(TokenSequence::from_tokens(vec!["".into()], TokenMode::Whitespace).is_err());
        assert!(TokenSequence::from_tokens(vec!["a b".into()], TokenMode::Whitespace).is_err());
        assert!(TokenSequence::from_tokens(vec!["ab".into()], TokenMode::Whitespace).is_ok());
    }
}

//! Deterministic prompt rendering for hypothesis-to-transcription
//! correction.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguageVariant {
    #[default]
    English,
    EnglishJapanese,
}

/// A correction prompt: an instruction followed by the enumerated
/// candidate hypotheses, one per line.
///
/// `item_format` must contain a `{text}` placeholder and may contain
/// `{index}` (1-based). Templates are stored as JSON text files with the
/// same field names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub instruction: String,
    #[serde(default = "default_item_format")]
    pub item_format: String,
    #[serde(default)]
    pub variant: LanguageVariant,
}

fn default_item_format() -> String {
    "{index}. {text}".to_string()
}

impl PromptTemplate {
    pub fn english() -> Self {
        Self {
            instruction: "Below are the best hypotheses produced by an automatic speech \
                          recognition system for one utterance, ordered from most to least \
                          likely. Infer the true transcription of the utterance from them \
                          and reply with that transcription only."
                .to_string(),
            item_format: default_item_format(),
            variant: LanguageVariant::English,
        }
    }

    pub fn english_japanese() -> Self {
        Self {
            instruction: format!(
                "{}\n{}",
                Self::english().instruction,
                "以下は音声認識システムが一つの発話に対して出力した上位の仮説であり、\
                 尤度の高い順に並んでいます。これらの仮説からこの発話の正しい書き起こしを\
                 推定し、その書き起こしのみを出力してください。"
            ),
            item_format: default_item_format(),
            variant: LanguageVariant::EnglishJapanese,
        }
    }

    /// Resolves a builtin template name ("english" or "english_japanese").
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "english" => Some(Self::english()),
            "english_japanese" => Some(Self::english_japanese()),
            _ => None,
        }
    }

    pub fn from_json_str(data: &str) -> Result<Self, LlmError> {
        let template: PromptTemplate =
            serde_json::from_str(data).map_err(|e| LlmError::Config(e.to_string()))?;
        template.validate()?;
        Ok(template)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let data = fs::read_to_string(&path).map_err(|e| {
            LlmError::Config(format!("cannot read template {:?}: {e}", path.as_ref()))
        })?;
        Self::from_json_str(&data)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !self.item_format.contains("{text}") {
            return Err(LlmError::Config(
                "item_format must contain a {text} placeholder".into(),
            ));
        }
        Ok(())
    }
}

/// Renders the prompt: instruction, blank line, then one item line per
/// candidate in input order. Pure function of its arguments; newlines
/// inside candidates are flattened so each candidate stays on one line.
pub fn build_prompt(candidates: &[String], template: &PromptTemplate) -> Result<String, LlmError> {
    if candidates.is_empty() {
        return Err(LlmError::EmptyCandidates);
    }
    let mut prompt = template.instruction.clone();
    prompt.push_str("\n\n");
    for (i, candidate) in candidates.iter().enumerate() {
        let flat = candidate.replace(['\n', '\r'], " ");
        let line = template
            .item_format
            .replace("{index}", &(i + 1).to_string())
            .replace("{text}", &flat);
        prompt.push_str(&line);
        prompt.push('\n');
    }
    Ok(prompt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_one_line_per_candidate() {
        let template = PromptTemplate::english();
        let prompt = build_prompt(&["a b".into(), "a c".into(), "x".into()], &template).unwrap();
        let items: Vec<&str> = prompt.lines().skip_while(|l| !l.starts_with("1.")).collect();
        assert_eq!(items, ["1. a b", "2. a c", "3. x"]);
    }

    #[test]
    fn single_candidate_single_item() {
        let prompt = build_prompt(&["only".into()], &PromptTemplate::english()).unwrap();
        assert!(prompt.ends_with("1. only\n"));
    }

    #[test]
    fn empty_candidates_error() {
        assert_eq!(
            build_prompt(&[], &PromptTemplate::english()),
            Err(LlmError::EmptyCandidates)
        );
    }

    #[test]
    fn identical_calls_are_byte_identical() {
        let cands = vec!["あ い".to_string(), "あ え".to_string()];
        let template = PromptTemplate::english_japanese();
        assert_eq!(
            build_prompt(&cands, &template).unwrap(),
            build_prompt(&cands, &template).unwrap()
        );
    }

    #[test]
    fn embedded_newlines_cannot_break_the_line_count() {
        let template = PromptTemplate::english();
        let prompt = build_prompt(&["a\nb".into(), "c".into()], &template).unwrap();
        let items: Vec<&str> = prompt.lines().filter(|l| l.starts_with(['1', '2'])).collect();
        assert_eq!(items.len(), 2);
    }

    #[test]
    fn template_json_round_trip_and_validation() {
        let json = serde_json::to_string(&PromptTemplate::english_japanese()).unwrap();
        let parsed = PromptTemplate::from_json_str(&json).unwrap();
        assert_eq!(parsed, PromptTemplate::english_japanese());

        let bad = "{\"instruction\":\"x\",\"item_format\":\"no placeholder\"}";
        assert!(PromptTemplate::from_json_str(bad).is_err());
    }
}

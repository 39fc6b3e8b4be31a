use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;

/// One prompt, optionally with 0/1 labels for its perturbable tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
}

/// Reads JSON-lines records (`{"prompt": ..., "labels": [...]}`) or, when the
/// first non-blank line is not a JSON object, one plain prompt per line.
pub fn parse_prompt_batch(text: &str) -> Result<Vec<PromptRecord>, PipelineError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let structured = lines
        .first()
        .is_some_and(|(_, l)| l.trim_start().starts_with('{'));
    lines
        .into_iter()
        .map(|(n, line)| {
            if structured {
                let rec: PromptRecord = serde_json::from_str(line)
                    .map_err(|e| PipelineError::Invalid(format!("line {}: {e}", n + 1)))?;
                if let Some(bad) = rec.labels.iter().flatten().find(|l| **l > 1) {
                    return Err(PipelineError::Invalid(format!(
                        "line {}: label {bad} is not 0 or 1",
                        n + 1
                    )));
                }
                Ok(rec)
            } else {
                Ok(PromptRecord {
                    prompt: line.trim().to_string(),
                    labels: None,
                })
            }
        })
        .collect()
}

pub fn load_prompt_batch(path: impl AsRef<Path>) -> Result<Vec<PromptRecord>, PipelineError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_prompt_batch(&text)
}

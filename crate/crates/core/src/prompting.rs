//! The Context/Tagged prompt scaffold.
//!
//! A k-shot prompt is k demonstration blocks followed by the test block:
//!
//! ```text
//! Context: Swiss bonds ended mostly higher
//! Tagged: Swiss_B-MISC bonds_O ended_O mostly_O higher_O
//! Context: <test sentence>
//! Tagged:
//! ```

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{check_token, LabelScheme, TaggedSentence, TOKEN_LABEL_DELIMITER};
use crate::error::{Error, Result};

pub const CONTEXT_MARKER: &str = "Context:";
pub const TAGGED_MARKER: &str = "Tagged:";

/// What separates the final `Tagged:` from the first test token during decoding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompletionLead {
    /// `Tagged: EU_` on the same line.
    #[default]
    SameLine,
    /// `Tagged:` then a newline, then `EU_`.
    NewLine,
}

impl CompletionLead {
    pub fn as_str(&self) -> &'static str {
        match self {
            CompletionLead::SameLine => " ",
            CompletionLead::NewLine => "\n",
        }
    }
}

/// Order of the selected demonstrations inside the prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExampleOrder {
    /// Highest-scoring demonstration first.
    #[default]
    Descending,
    Ascending,
    Shuffled { seed: u64 },
}

impl ExampleOrder {
    /// Reorders ids given best-first.
    pub fn arrange(&self, best_first: &[usize]) -> Vec<usize> {
        let mut ids = best_first.to_vec();
        match self {
            ExampleOrder::Descending => {}
            ExampleOrder::Ascending => ids.reverse(),
            ExampleOrder::Shuffled { seed } => ids.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed)),
        }
        ids
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub text: String,
    pub example_ids: Vec<usize>,
    pub test_id: usize,
    pub scheme: LabelScheme,
}

impl RenderedPrompt {
    /// Hex SHA-256 of the prompt text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }

    /// Writes the prompt verbatim to `<dir>/<test_id>.txt`.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(format!("{}.txt", self.test_id));
        std::fs::write(&path, self.text.as_bytes())?;
        Ok(path)
    }
}

fn check_renderable(sentence: &TaggedSentence) -> Result<()> {
    for token in &sentence.tokens {
        check_token(token).map_err(|e| Error::Render(format!("sentence {}: {e}", sentence.id)))?;
    }
    Ok(())
}

/// `token_LABEL` units joined by single spaces.
pub fn tagged_line(tokens: &[String], labels: &[String]) -> String {
    tokens
        .iter()
        .zip(labels)
        .map(|(t, l)| format!("{t}{TOKEN_LABEL_DELIMITER}{l}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Renders the demonstrations in the given order followed by the unlabeled test block.
pub fn render_prompt(
    examples: &[&TaggedSentence],
    test: &TaggedSentence,
    scheme: &LabelScheme,
) -> Result<RenderedPrompt> {
    if examples.is_empty() {
        return Err(Error::Render("a prompt needs at least one demonstration".into()));
    }
    let mut text = String::new();
    for example in examples {
        check_renderable(example)?;
        if example.tokens.len() != example.labels.len() {
            return Err(Error::Render(format!(
                "demonstration {} has misaligned labels",
                example.id
            )));
        }
        text.push_str(CONTEXT_MARKER);
        text.push(' ');
        text.push_str(&example.text());
        text.push('\n');
        text.push_str(TAGGED_MARKER);
        text.push(' ');
        text.push_str(&tagged_line(&example.tokens, &example.labels));
        text.push('\n');
    }
    check_renderable(test)?;
    text.push_str(CONTEXT_MARKER);
    text.push(' ');
    text.push_str(&test.text());
    text.push('\n');
    text.push_str(TAGGED_MARKER);
    Ok(RenderedPrompt {
        text,
        example_ids: examples.iter().map(|e| e.id).collect(),
        test_id: test.id,
        scheme: scheme.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelViolation {
    pub position: usize,
    pub raw: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedLine {
    pub tokens: Vec<String>,
    pub labels: Vec<String>,
    pub violations: Vec<LabelViolation>,
}

fn split_unit(unit: &str) -> Result<(&str, &str)> {
    let (token, label) = unit
        .rsplit_once(TOKEN_LABEL_DELIMITER)
        .ok_or_else(|| Error::Format(format!("unit {unit:?} has no token/label delimiter")))?;
    if token.is_empty() {
        return Err(Error::Format(format!("unit {unit:?} has an empty token")));
    }
    Ok((token, label))
}

/// Inverse of [`tagged_line`]. Units are split at their last underscore;
/// labels outside the scheme become the scheme's fallback label and are
/// reported as violations.
pub fn parse_tagged_line(line: &str, scheme: &LabelScheme) -> Result<ParsedLine> {
    let mut parsed = ParsedLine::default();
    for (position, unit) in line.split_whitespace().enumerate() {
        let (token, label) = split_unit(unit)?;
        parsed.tokens.push(token.to_string());
        if scheme.contains(label) {
            parsed.labels.push(label.to_string());
        } else {
            parsed.labels.push(scheme.fallback_label().to_string());
            parsed.violations.push(LabelViolation {
                position,
                raw: label.to_string(),
            });
        }
    }
    Ok(parsed)
}

/// The unfinished test block at the end of a prompt being decoded.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptTail {
    /// Tokens of the final `Context:` line.
    pub context: Vec<String>,
    /// `(token, label)` pairs already emitted after the final `Tagged:`.
    pub labeled: Vec<(String, String)>,
    /// Token awaiting its label (`token_` at the very end of the text).
    pub pending: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub demonstrations: Vec<(Vec<String>, Vec<String>)>,
    pub tail: PromptTail,
}

fn unit_pairs(content: &str) -> Result<(Vec<String>, Vec<String>)> {
    let mut tokens = Vec::new();
    let mut labels = Vec::new();
    for unit in content.split_whitespace() {
        let (t, l) = split_unit(unit)?;
        tokens.push(t.to_string());
        labels.push(l.to_string());
    }
    Ok((tokens, labels))
}

/// Splits a (possibly partially decoded) prompt into its demonstrations and tail.
/// Labels are returned verbatim, without scheme validation.
pub fn parse_prompt(text: &str) -> Result<ParsedPrompt> {
    let mut segments: Vec<&str> = Vec::new();
    let mut rest = text;
    loop {
        let start = if rest.starts_with(CONTEXT_MARKER) {
            Some(0)
        } else {
            rest.find(&format!("\n{CONTEXT_MARKER}")).map(|i| i + 1)
        };
        let Some(start) = start else { break };
        let after = &rest[start + CONTEXT_MARKER.len()..];
        let end = after
            .find(&format!("\n{CONTEXT_MARKER}"))
            .map(|i| i + 1)
            .unwrap_or(after.len());
        segments.push(&after[..end]);
        rest = &after[end..];
        if rest.is_empty() {
            break;
        }
    }
    let Some((last, demos)) = segments.split_last() else {
        return Err(Error::Format("prompt has no Context block".into()));
    };

    let split_segment = |segment: &str| -> Result<(Vec<String>, String)> {
        let (context, remainder) = segment.split_once('\n').unwrap_or((segment, ""));
        let tagged = remainder
            .strip_prefix(TAGGED_MARKER)
            .ok_or_else(|| Error::Format(format!("Context line {context:?} is not followed by Tagged:")))?;
        Ok((
            context.split_whitespace().map(str::to_string).collect(),
            tagged.to_string(),
        ))
    };

    let mut parsed = ParsedPrompt::default();
    for segment in demos {
        let (context, tagged) = split_segment(segment)?;
        let (tokens, labels) = unit_pairs(&tagged)?;
        if tokens != context {
            return Err(Error::Format(format!(
                "tagged tokens do not match the context {:?}",
                context.join(" ")
            )));
        }
        parsed.demonstrations.push((tokens, labels));
    }

    let (context, tagged) = split_segment(last)?;
    parsed.tail.context = context;
    let mut units: Vec<&str> = tagged.split_whitespace().collect();
    if !tagged.ends_with(char::is_whitespace) {
        if let Some(last_unit) = units.last() {
            if let Some(token) = last_unit.strip_suffix(TOKEN_LABEL_DELIMITER) {
                if !token.is_empty() {
                    parsed.tail.pending = Some(token.to_string());
                    units.pop();
                }
            }
        }
    }
    for unit in units {
        let (t, l) = split_unit(unit)?;
        parsed.tail.labeled.push((t.to_string(), l.to_string()));
    }
    Ok(parsed)
}

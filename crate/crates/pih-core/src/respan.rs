//! Response analysis: negation-aware extraction of the first numeric or
//! color mention, surface-form detection, copy-form classification, and the
//! prompt/true/no-value match metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seq::TokenSeq;
use crate::vocab::{TokenClass, TokenId, Vocabulary};

/// Default lookback window (in assistant tokens) for negation cues.
pub const DEFAULT_NEGATION_WINDOW: usize = 4;

const NEGATION_CUES: [&str; 4] = ["not", "no", "never", "without"];

/// A value mentioned in a response or prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Value {
    Count(u8),
    /// Palette index of a color word.
    Color(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Surface {
    Digit,
    Word,
    Attributive,
    Predicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedValue {
    pub value: Value,
    pub surface: Surface,
    /// Index of the matched token in the full sequence.
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CopyForm {
    ExactCopy,
    SoftCopy,
    FormatCopy,
    NoCopy,
    NoValue,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RespanError {
    #[error("prompted and true value coincide; instance is not misaligned")]
    DegenerateInstance,
    #[error("empty instance set")]
    EmptySet,
}

fn is_negation(vocab: &Vocabulary, id: TokenId) -> bool {
    NEGATION_CUES.iter().any(|c| vocab.id(c) == Some(id))
}

/// True when a negation cue occurs within `window` assistant tokens before
/// index `i` (indices into the assistant slice).
fn negated(assistant: &[TokenId], i: usize, vocab: &Vocabulary, window: usize) -> bool {
    let start = i.saturating_sub(window);
    assistant[start..i].iter().any(|&t| is_negation(vocab, t))
}

/// First non-negated numeric mention in the assistant suffix.
pub fn extract_first_number(
    seq: &TokenSeq,
    vocab: &Vocabulary,
    negation_window: usize,
) -> Option<ExtractedValue> {
    let base = seq.first_assistant()?;
    let assistant = seq.assistant_ids();
    for (i, &id) in assistant.iter().enumerate() {
        let surface = match vocab.class(id) {
            TokenClass::DigitNumeral => Surface::Digit,
            TokenClass::NumberWord => Surface::Word,
            _ => continue,
        };
        if negated(assistant, i, vocab, negation_window) {
            continue;
        }
        let value = vocab.number_value(id).expect("numeric class carries value");
        return Some(ExtractedValue {
            value: Value::Count(value),
            surface,
            position: base + i,
        });
    }
    None
}

/// First non-negated color mention in the assistant suffix. The surface is
/// attributive when the color sits within the two tokens immediately before
/// the first later mention of `object_token`, else predicative.
pub fn extract_first_color(
    seq: &TokenSeq,
    vocab: &Vocabulary,
    object_token: TokenId,
    negation_window: usize,
) -> Option<ExtractedValue> {
    let base = seq.first_assistant()?;
    let assistant = seq.assistant_ids();
    for (i, &id) in assistant.iter().enumerate() {
        let Some(color) = vocab.color_index(id) else {
            continue;
        };
        if negated(assistant, i, vocab, negation_window) {
            continue;
        }
        let object_pos = assistant
            .iter()
            .enumerate()
            .skip(i + 1)
            .find_map(|(j, &t)| (t == object_token).then_some(j));
        let surface = match object_pos {
            Some(j) if j - i <= 2 => Surface::Attributive,
            _ => Surface::Predicative,
        };
        return Some(ExtractedValue {
            value: Value::Color(color),
            surface,
            position: base + i,
        });
    }
    None
}

/// Classifies a response against the misaligned prompt.
///
/// Values equal to neither the prompted nor the true value fold into
/// `NoValue` here; callers keep the raw extraction for logging.
pub fn classify_copy_form(
    extracted: Option<&ExtractedValue>,
    prompted: Value,
    truth: Value,
    prompt_surface: Surface,
) -> Result<CopyForm, RespanError> {
    if prompted == truth {
        return Err(RespanError::DegenerateInstance);
    }
    let Some(e) = extracted else {
        return Ok(CopyForm::NoValue);
    };
    let same_surface = e.surface == prompt_surface;
    Ok(if e.value == prompted {
        if same_surface {
            CopyForm::ExactCopy
        } else {
            CopyForm::SoftCopy
        }
    } else if e.value == truth {
        if same_surface {
            CopyForm::FormatCopy
        } else {
            CopyForm::NoCopy
        }
    } else {
        CopyForm::NoValue
    })
}

/// The three-way outcome partition over an instance set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchMetrics {
    pub prompt_match: f64,
    pub true_match: f64,
    pub no_value: f64,
}

/// Per-instance outcome triple: (extracted value, prompted value, true value).
pub type OutcomeTriple = (Option<Value>, Value, Value);

/// Fractions of responses matching the prompted value, the true value, or
/// carrying no usable value. The three buckets partition every instance set.
pub fn compute_match_metrics(items: &[OutcomeTriple]) -> Result<MatchMetrics, RespanError> {
    if items.is_empty() {
        return Err(RespanError::EmptySet);
    }
    let n = items.len() as f64;
    let mut prompt = 0usize;
    let mut truth = 0usize;
    let mut none = 0usize;
    for (extracted, prompted, true_value) in items {
        match extracted {
            Some(v) if v == prompted => prompt += 1,
            Some(v) if v == true_value => truth += 1,
            _ => none += 1,
        }
    }
    Ok(MatchMetrics {
        prompt_match: prompt as f64 / n,
        true_match: truth as f64 / n,
        no_value: none as f64 / n,
    })
}

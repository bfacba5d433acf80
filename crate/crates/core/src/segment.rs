//! Partition a response's tokens into reasoning steps.
//!
//! Delimiters are textual while log probabilities attach to tokens, so
//! boundaries are found on the concatenated token text and then mapped back
//! to token indices: a boundary at byte offset `b` starts a new step at the
//! smallest token whose first byte lies at or after `b`. No token is ever
//! split; a token that straddles a delimiter stays with the earlier step.
//! The resulting spans always partition `[0, token_count)`.

use crate::corpus::Response;
use serde::{Deserialize, Serialize};

/// A contiguous token-index range forming one reasoning step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSpan {
    /// Inclusive token index.
    pub start: usize,
    /// Exclusive token index.
    pub end: usize,
}

impl StepSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    /// The step's first token, the one a drop-style score excludes.
    pub fn first_token_index(&self) -> usize {
        self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitterKind {
    /// Boundary after every "\n\n".
    Blankline,
    /// Boundary after every '.' that is followed by whitespace.
    Period,
    /// Rule-based sentence boundaries: '.', '!' or '?' followed by
    /// whitespace, excluding single-letter abbreviations.
    Sentence,
}

impl SplitterKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "blankline" => Some(Self::Blankline),
            "period" => Some(Self::Period),
            "sentence" => Some(Self::Sentence),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Blankline => "blankline",
            Self::Period => "period",
            Self::Sentence => "sentence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitterSpec {
    pub kind: SplitterKind,
    /// Steps shorter than this merge into the preceding step.
    pub min_step_tokens: usize,
}

impl SplitterSpec {
    pub fn new(kind: SplitterKind) -> Self {
        SplitterSpec {
            kind,
            min_step_tokens: 1,
        }
    }
}

impl Default for SplitterSpec {
    fn default() -> Self {
        SplitterSpec::new(SplitterKind::Blankline)
    }
}

/// Byte offsets immediately after each delimiter occurrence in `text`.
fn boundary_offsets(text: &str, kind: SplitterKind) -> Vec<usize> {
    let mut out = Vec::new();
    match kind {
        SplitterKind::Blankline => {
            let bytes = text.as_bytes();
            let mut i = 0;
            while i + 1 < bytes.len() {
                if bytes[i] == b'\n' && bytes[i + 1] == b'\n' {
                    out.push(i + 2);
                    i += 2;
                } else {
                    i += 1;
                }
            }
        }
        SplitterKind::Period | SplitterKind::Sentence => {
            let sentence = kind == SplitterKind::Sentence;
            let mut chars = text.char_indices().peekable();
            let mut prev: Option<char> = None;
            let mut prev2: Option<char> = None;
            while let Some((i, c)) = chars.next() {
                let terminator = if sentence {
                    matches!(c, '.' | '!' | '?')
                } else {
                    c == '.'
                };
                if terminator {
                    let next_ws = chars
                        .peek()
                        .map(|&(_, n)| n.is_whitespace())
                        .unwrap_or(false);
                    // A decimal point is never followed by whitespace, so
                    // "3.14" needs no extra rule here.
                    let abbrev = sentence
                        && c == '.'
                        && matches!(prev, Some(p) if p.is_alphabetic())
                        && !matches!(prev2, Some(p2) if p2.is_alphanumeric());
                    if next_ws && !abbrev {
                        out.push(i + c.len_utf8());
                    }
                }
                prev2 = prev;
                prev = Some(c);
            }
        }
    }
    out
}

/// Split a response into step spans under `spec`.
///
/// The spans are sorted, non-overlapping, and cover every token exactly once.
/// A response with no delimiter yields a single span. Trailing text after the
/// last delimiter forms the final step.
pub fn segment(response: &Response, spec: &SplitterSpec) -> Vec<StepSpan> {
    let n = response.tokens.len();
    if n == 0 {
        return Vec::new();
    }
    // Byte offset of each token's first character in the concatenated text.
    let mut starts = Vec::with_capacity(n);
    let mut offset = 0usize;
    for tok in &response.tokens {
        starts.push(offset);
        offset += tok.text.len();
    }
    let text = response.token_text();

    let mut cuts: Vec<usize> = Vec::new();
    for b in boundary_offsets(&text, spec.kind) {
        let idx = starts.partition_point(|&s| s < b);
        if idx > 0 && idx < n && cuts.last() != Some(&idx) {
            cuts.push(idx);
        }
    }

    let mut spans: Vec<StepSpan> = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0usize;
    for cut in cuts.into_iter().chain(std::iter::once(n)) {
        let span = StepSpan { start, end: cut };
        // Short steps merge into the preceding one; the first step always
        // stands so every response keeps at least one first token.
        if span.len() < spec.min_step_tokens && !spans.is_empty() {
            spans.last_mut().unwrap().end = cut;
        } else {
            spans.push(span);
        }
        start = cut;
    }
    spans
}

/// Tokens per span. The sum equals the response's token count.
pub fn step_lengths(spans: &[StepSpan]) -> Vec<usize> {
    spans.iter().map(StepSpan::len).collect()
}

//! Line-delimited response corpora with token-level log probabilities.
//!
//! One JSON object per line, one [`Response`] per object. The reader streams:
//! memory use is bounded by the largest single record (plus a small per-record
//! id digest kept for duplicate detection), never by corpus size.
//!
//! All log probabilities are natural log (nats). Positive values are accepted
//! with a warning since some scoring backends emit tiny positive values from
//! numerical error.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// One generated token with its conditional log probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    /// Decoded surface form.
    pub text: String,
    /// Conditional log probability in nats; finite, normally <= 0.
    pub logprob: f64,
    /// Candidate logprobs in descending order, chosen token included.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk: Option<Vec<f64>>,
}

/// Truncated-context logprobs for one step, produced upstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalStepRecord {
    pub step_index: u32,
    pub token_logprobs: Vec<f64>,
}

/// A problem's candidate answer: ordered tokens plus identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub problem_id: String,
    pub response_id: String,
    pub source: String,
    pub text: String,
    pub tokens: Vec<TokenRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_steps: Option<Vec<LocalStepRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, String>>,
}

impl Response {
    /// Concatenation of token surface forms. Metrics and segmentation work on
    /// this, never on the (possibly normalized) `text` field.
    pub fn token_text(&self) -> String {
        let cap = self.tokens.iter().map(|t| t.text.len()).sum();
        let mut s = String::with_capacity(cap);
        for t in &self.tokens {
            s.push_str(&t.text);
        }
        s
    }

    /// Structural validation. Returns field-path messages for violations that
    /// are fatal in strict mode; soft issues land in `warnings`.
    pub fn validate(&self, warnings: &mut Vec<String>) -> Result<(), String> {
        if self.tokens.is_empty() {
            return Err("tokens: must be non-empty".into());
        }
        for (i, tok) in self.tokens.iter().enumerate() {
            if !tok.logprob.is_finite() {
                return Err(format!("tokens[{i}].logprob: not finite"));
            }
            if tok.logprob > 0.0 {
                warnings.push(format!(
                    "{}/{}: tokens[{i}].logprob = {} > 0 (accepted)",
                    self.problem_id, self.response_id, tok.logprob
                ));
            }
            if let Some(topk) = &tok.topk {
                if topk.is_empty() {
                    return Err(format!("tokens[{i}].topk: empty list"));
                }
                if topk.iter().any(|v| !v.is_finite()) {
                    return Err(format!("tokens[{i}].topk: non-finite entry"));
                }
                if topk.windows(2).any(|w| w[0] < w[1]) {
                    return Err(format!("tokens[{i}].topk: not sorted non-increasing"));
                }
                if tok.logprob > topk[0] + 1e-9 {
                    return Err(format!(
                        "tokens[{i}].topk: chosen logprob {} exceeds topk[0] {}",
                        tok.logprob, topk[0]
                    ));
                }
            }
        }
        if let Some(steps) = &self.local_steps {
            let mut prev: Option<u32> = None;
            for (i, s) in steps.iter().enumerate() {
                if s.token_logprobs.is_empty() {
                    return Err(format!("local_steps[{i}].token_logprobs: empty"));
                }
                if let Some(p) = prev {
                    if s.step_index <= p {
                        return Err(format!(
                            "local_steps[{i}].step_index: not strictly increasing"
                        ));
                    }
                }
                prev = Some(s.step_index);
            }
        }
        if self.token_text() != self.text {
            warnings.push(format!(
                "{}/{}: token texts do not concatenate to `text` (detokenization may normalize whitespace)",
                self.problem_id, self.response_id
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Schema { line: u64, message: String },
    #[error("line {line}: duplicate (problem_id, response_id) = ({problem_id}, {response_id})")]
    DuplicateId {
        line: u64,
        problem_id: String,
        response_id: String,
    },
}

/// 128-bit FNV-1a over the id pair. Collisions are negligible at corpus scale
/// and the digest keeps duplicate tracking at 16 bytes per record instead of
/// retaining the id strings.
fn id_digest(problem_id: &str, response_id: &str) -> u128 {
    const OFFSET: u128 = 0x6c62272e07bb014262b821756295c58d;
    const PRIME: u128 = 0x0000000001000000000000000000013b;
    let mut h = OFFSET;
    for b in problem_id
        .as_bytes()
        .iter()
        .chain([0x1fu8].iter())
        .chain(response_id.as_bytes())
    {
        h ^= *b as u128;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Streaming reader over a corpus file.
///
/// In strict mode any invariant violation aborts iteration with an error; in
/// lenient mode malformed lines are skipped and counted.
pub struct CorpusReader<R: BufRead> {
    input: R,
    path: PathBuf,
    strict: bool,
    line_no: u64,
    buf: String,
    seen: HashSet<u128>,
    /// Malformed lines skipped so far (lenient mode only).
    pub skipped: u64,
    /// Soft validation issues (positive logprobs, text mismatches).
    pub warnings: Vec<String>,
}

impl CorpusReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>, strict: bool) -> Result<Self, CorpusError> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|source| CorpusError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(Self::from_reader(BufReader::new(file), path, strict))
    }
}

impl<R: BufRead> CorpusReader<R> {
    pub fn from_reader(input: R, path: PathBuf, strict: bool) -> Self {
        CorpusReader {
            input,
            path,
            strict,
            line_no: 0,
            buf: String::new(),
            seen: HashSet::new(),
            skipped: 0,
            warnings: Vec::new(),
        }
    }

    fn parse_line(&mut self) -> Result<Option<Response>, CorpusError> {
        let line = self.buf.trim();
        if line.is_empty() {
            return Ok(None);
        }
        let resp: Response = serde_json::from_str(line).map_err(|e| CorpusError::Schema {
            line: self.line_no,
            message: e.to_string(),
        })?;
        resp.validate(&mut self.warnings)
            .map_err(|message| CorpusError::Schema {
                line: self.line_no,
                message,
            })?;
        if !self.seen.insert(id_digest(&resp.problem_id, &resp.response_id)) {
            return Err(CorpusError::DuplicateId {
                line: self.line_no,
                problem_id: resp.problem_id.clone(),
                response_id: resp.response_id.clone(),
            });
        }
        Ok(Some(resp))
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Response, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.input.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(source) => {
                    return Some(Err(CorpusError::Io {
                        path: self.path.clone(),
                        source,
                    }))
                }
            }
            self.line_no += 1;
            match self.parse_line() {
                Ok(Some(resp)) => return Some(Ok(resp)),
                Ok(None) => continue, // blank line
                Err(e) if self.strict => return Some(Err(e)),
                Err(_) => {
                    self.skipped += 1;
                    continue;
                }
            }
        }
    }
}

/// Serialize one response as a single JSONL line (no trailing newline).
pub fn to_jsonl_line(resp: &Response) -> String {
    serde_json::to_string(resp).expect("response serialization cannot fail")
}

/// Token-count distribution and coverage counters for a corpus.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub responses: u64,
    pub per_problem: BTreeMap<String, u64>,
    pub per_source: BTreeMap<String, u64>,
    pub token_count_min: u64,
    pub token_count_median: u64,
    pub token_count_p95: u64,
    pub token_count_max: u64,
    pub frac_with_topk: f64,
    pub frac_with_local_steps: f64,
}

/// Aggregate summary statistics over a response stream.
pub fn corpus_summary<'a>(responses: impl IntoIterator<Item = &'a Response>) -> CorpusSummary {
    let mut summary = CorpusSummary::default();
    let mut lengths: Vec<u64> = Vec::new();
    let mut with_topk = 0u64;
    let mut with_local = 0u64;
    for resp in responses {
        summary.responses += 1;
        *summary.per_problem.entry(resp.problem_id.clone()).or_insert(0) += 1;
        *summary.per_source.entry(resp.source.clone()).or_insert(0) += 1;
        lengths.push(resp.tokens.len() as u64);
        if resp.tokens.iter().all(|t| t.topk.is_some()) {
            with_topk += 1;
        }
        if resp.local_steps.is_some() {
            with_local += 1;
        }
    }
    if summary.responses > 0 {
        let n = summary.responses as f64;
        lengths.sort_unstable();
        summary.token_count_min = lengths[0];
        summary.token_count_max = *lengths.last().unwrap();
        summary.token_count_median =
            crate::numeric::nearest_rank_percentile(&lengths, 0.5).unwrap();
        summary.token_count_p95 =
            crate::numeric::nearest_rank_percentile(&lengths, 0.95).unwrap();
        summary.frac_with_topk = with_topk as f64 / n;
        summary.frac_with_local_steps = with_local as f64 / n;
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn tok(text: &str, logprob: f64) -> TokenRecord {
        TokenRecord {
            text: text.into(),
            logprob,
            topk: None,
        }
    }

    pub(crate) fn response(pid: &str, rid: &str, logprobs: &[f64]) -> Response {
        let tokens: Vec<TokenRecord> = logprobs.iter().map(|&lp| tok("x ", lp)).collect();
        let text = tokens.iter().map(|t| t.text.as_str()).collect();
        Response {
            problem_id: pid.into(),
            response_id: rid.into(),
            source: "s".into(),
            text,
            tokens,
            local_steps: None,
            meta: None,
        }
    }

    fn read_all(data: &str, strict: bool) -> (Vec<Response>, u64, Option<CorpusError>) {
        let mut reader =
            CorpusReader::from_reader(Cursor::new(data.to_string()), "mem".into(), strict);
        let mut out = Vec::new();
        let mut err = None;
        for item in &mut reader {
            match item {
                Ok(r) => out.push(r),
                Err(e) => {
                    err = Some(e);
                    break;
                }
            }
        }
        (out, reader.skipped, err)
    }

    #[test]
    fn valid_lines_pass_through() {
        let lines: Vec<String> = (0..3)
            .map(|i| to_jsonl_line(&response("p", &format!("r{i}"), &[-1.0, -2.0])))
            .collect();
        let (out, skipped, err) = read_all(&(lines.join("\n") + "\n"), true);
        assert!(err.is_none());
        assert_eq!(out.len(), 3);
        assert_eq!(skipped, 0);
    }

    #[test]
    fn empty_tokens_rejected_in_strict_mode() {
        let mut r = response("p", "r", &[-1.0]);
        r.tokens.clear();
        let (out, _, err) = read_all(&to_jsonl_line(&r), true);
        assert!(out.is_empty());
        match err {
            Some(CorpusError::Schema { line: 1, message }) => {
                assert!(message.contains("tokens"), "{message}")
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn unsorted_topk_rejected() {
        let mut r = response("p", "r", &[-1.0]);
        r.tokens[0].topk = Some(vec![-0.1, -0.05]);
        let (_, _, err) = read_all(&to_jsonl_line(&r), true);
        let msg = err.expect("must fail").to_string();
        assert!(msg.contains("not sorted"), "{msg}");
    }

    #[test]
    fn lenient_mode_skips_and_counts() {
        let good = to_jsonl_line(&response("p", "r0", &[-1.0]));
        let data = format!("{good}\nnot json at all\n{}\n", to_jsonl_line(&response("p", "r1", &[-1.0])));
        let (out, skipped, err) = read_all(&data, false);
        assert!(err.is_none());
        assert_eq!(out.len(), 2);
        assert_eq!(skipped, 1);
    }

    #[test]
    fn duplicate_ids_rejected_in_strict_mode() {
        let line = to_jsonl_line(&response("p", "r", &[-1.0]));
        let data = format!("{line}\n{line}\n");
        let (out, _, err) = read_all(&data, true);
        assert_eq!(out.len(), 1);
        assert!(matches!(err, Some(CorpusError::DuplicateId { line: 2, .. })));
    }

    #[test]
    fn positive_logprob_warns_but_passes() {
        let r = response("p", "r", &[1e-7, -1.0]);
        let mut reader = CorpusReader::from_reader(
            Cursor::new(to_jsonl_line(&r)),
            "mem".into(),
            true,
        );
        assert!(reader.next().unwrap().is_ok());
        assert_eq!(reader.warnings.len(), 1);
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let mut r = response("p", "r", &[-1.25e-3, -2.0000000000000004]);
        r.tokens[0].topk = Some(vec![-1.25e-3, -7.5]);
        r.local_steps = Some(vec![LocalStepRecord {
            step_index: 0,
            token_logprobs: vec![-0.1, -0.30000000000000004],
        }]);
        r.meta = Some([("k".to_string(), "v".to_string())].into());
        let line = to_jsonl_line(&r);
        let back: Response = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
        // Numbers survive a second trip byte-for-byte.
        assert_eq!(to_jsonl_line(&back), line);
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let line = r#"{"problem_id":"p","response_id":"r","source":"s","text":"a","tokens":[{"text":"a","logprob":-1.0,"extra":1}],"future_field":{}}"#;
        let (out, _, err) = read_all(line, true);
        assert!(err.is_none());
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn summary_counts_problems_and_extrema() {
        let responses: Vec<Response> = vec![
            response("p1", "a", &[-1.0; 10]),
            response("p1", "b", &[-1.0; 10]),
            response("p2", "a", &[-1.0; 10]),
            response("p2", "b", &vec![-1.0; 100]),
        ];
        let s = corpus_summary(&responses);
        assert_eq!(s.responses, 4);
        assert_eq!(s.per_problem["p1"], 2);
        assert_eq!(s.per_problem["p2"], 2);
        assert_eq!(s.token_count_min, 10);
        assert_eq!(s.token_count_max, 100);
        assert_eq!(s.frac_with_topk, 0.0);
    }

    #[test]
    fn summary_of_empty_stream_is_zero() {
        let s = corpus_summary(&[]);
        assert_eq!(s.responses, 0);
        assert!(s.per_problem.is_empty());
    }
}

//! Reasoning-chain segmentation and the trajectory-masked SFT corpus.
//!
//! A chain `[s_1..s_L]` with answer `a` expands into `L` training samples,
//! one per truncation index `m`: the model sees `s_1..s_{m-1}` as context and
//! must regenerate `s_m..s_L` followed by `a`.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::LazyLock;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("chain text is empty")]
    EmptyChain,
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("malformed corpus record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
}

/// A segmented reasoning chain: ordered steps plus the final answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningChain {
    pub steps: Vec<String>,
    pub answer: String,
}

impl ReasoningChain {
    /// Number of steps, `L`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// One augmented (context, target) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftSample {
    pub case_ref: String,
    pub question: String,
    pub context: Vec<String>,
    pub target_steps: Vec<String>,
    pub target_answer: String,
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
}

impl SftSample {
    /// Join context and target steps back into the full chain text.
    pub fn reconstruct(&self) -> String {
        self.context
            .iter()
            .chain(self.target_steps.iter())
            .cloned()
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Default)]
pub struct SegmentOptions {
    /// Extra abbreviation guards for the sentence splitter.
    pub extra_abbreviations: Vec<String>,
}

static TERMINAL_STEP: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\(\$?s_?\{?\d+\}?\$?\)").expect("valid regex"));
static TERMINAL_ANSWER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\(\$?a\$?\)").expect("valid regex"));
static STEP_OPEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\[Step \d+:[^\]]*\]").expect("valid regex"));

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MarkerKind {
    TerminalStep,
    TerminalAnswer,
    StepOpen,
}

#[derive(Debug)]
struct Segment {
    body: String,
    is_answer: bool,
}

fn marker_segments(chain: &str) -> Vec<Segment> {
    let mut markers: Vec<(usize, usize, MarkerKind)> = Vec::new();
    for m in TERMINAL_STEP.find_iter(chain) {
        markers.push((m.start(), m.end(), MarkerKind::TerminalStep));
    }
    for m in TERMINAL_ANSWER.find_iter(chain) {
        markers.push((m.start(), m.end(), MarkerKind::TerminalAnswer));
    }
    for m in STEP_OPEN.find_iter(chain) {
        markers.push((m.start(), m.end(), MarkerKind::StepOpen));
    }
    markers.sort_by_key(|(start, _, _)| *start);

    let mut segments = Vec::new();
    let mut cursor = 0usize;
    let mut push = |body: &str, is_answer: bool| {
        let body = body.trim();
        if !body.is_empty() {
            segments.push(Segment {
                body: body.to_string(),
                is_answer,
            });
        }
    };
    for (start, end, kind) in markers {
        if start < cursor {
            continue; // overlapping match already consumed
        }
        match kind {
            MarkerKind::TerminalStep => push(&chain[cursor..start], false),
            MarkerKind::TerminalAnswer => push(&chain[cursor..start], true),
            MarkerKind::StepOpen => push(&chain[cursor..start], false),
        }
        cursor = end;
    }
    push(&chain[cursor..], false);
    segments
}

fn is_conclusion(segment: &str) -> bool {
    let lower = segment.to_lowercase();
    lower.contains("final diagnosis") || lower.contains("conclusion:")
}

/// Segment a chain text into steps and an answer.
///
/// Explicit markers (`(s_k)` / `(a)` terminators or `[Step k: ...]` headers)
/// take precedence and are removed; otherwise the text splits on sentence
/// boundaries. The answer is the `(a)`-marked segment when present, else the
/// last segment carrying a conclusion cue, else the last segment.
pub fn segment_chain(chain: &str) -> Result<ReasoningChain, CorpusError> {
    segment_chain_with(chain, &SegmentOptions::default())
}

pub fn segment_chain_with(
    chain: &str,
    options: &SegmentOptions,
) -> Result<ReasoningChain, CorpusError> {
    if chain.trim().is_empty() {
        return Err(CorpusError::EmptyChain);
    }
    let has_markers = TERMINAL_STEP.is_match(chain)
        || TERMINAL_ANSWER.is_match(chain)
        || STEP_OPEN.is_match(chain);
    let segments = if has_markers {
        marker_segments(chain)
    } else {
        text::split_sentences(chain, &options.extra_abbreviations)
            .into_iter()
            .map(|body| Segment {
                body,
                is_answer: false,
            })
            .collect()
    };
    if segments.is_empty() {
        return Err(CorpusError::EmptyChain);
    }

    let answer_idx = segments
        .iter()
        .rposition(|s| s.is_answer)
        .or_else(|| segments.iter().rposition(|s| is_conclusion(&s.body)))
        .unwrap_or(segments.len() - 1);
    let answer = segments[answer_idx].body.clone();
    let mut steps: Vec<String> = segments
        .into_iter()
        .enumerate()
        .filter(|(i, _)| *i != answer_idx)
        .map(|(_, s)| s.body)
        .collect();
    if steps.is_empty() {
        steps.push(answer.clone());
    }
    Ok(ReasoningChain { steps, answer })
}

/// Expand a chain into its full family of `L` truncation samples, ordered by
/// ascending `m`.
pub fn augment_trajectories(
    chain: &ReasoningChain,
    case_ref: &str,
    question: &str,
) -> Vec<SftSample> {
    let l = chain.len();
    (1..=l)
        .map(|m| SftSample {
            case_ref: case_ref.to_string(),
            question: question.to_string(),
            context: chain.steps[..m - 1].to_vec(),
            target_steps: chain.steps[m - 1..].to_vec(),
            target_answer: chain.answer.clone(),
            m,
            l,
        })
        .collect()
}

/// Emit `k` samples with truncation indices drawn uniformly from `1..=L`
/// (seeded; draws may repeat).
pub fn sample_trajectories(
    chain: &ReasoningChain,
    case_ref: &str,
    question: &str,
    k: usize,
    seed: u64,
) -> Vec<SftSample> {
    let all = augment_trajectories(chain, case_ref, question);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| all[rng.gen_range(0..all.len())].clone())
        .collect()
}

/// Write samples as JSONL; returns the number of records written.
pub fn emit_corpus(samples: &[SftSample], path: &Path) -> Result<usize, CorpusError> {
    let mut file = std::fs::File::create(path)?;
    for sample in samples {
        let line = serde_json::to_string(sample).expect("sample serialization");
        writeln!(file, "{line}")?;
    }
    Ok(samples.len())
}

/// Read samples back from JSONL, validating the truncation invariants.
pub fn load_corpus(path: &Path) -> Result<Vec<SftSample>, CorpusError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: SftSample =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })?;
        let ok = sample.m >= 1
            && sample.m <= sample.l
            && sample.context.len() == sample.m - 1
            && sample.target_steps.len() == sample.l - sample.m + 1;
        if !ok {
            return Err(CorpusError::MalformedRecord {
                line: i + 1,
                message: format!("inconsistent truncation: m={}, L={}", sample.m, sample.l),
            });
        }
        samples.push(sample);
    }
    Ok(samples)
}

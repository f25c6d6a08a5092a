//! Answer-quality and reasoning-quality metrics: BLEU, ROUGE-1/2/L, a
//! greedy-matching embedding F1, and judge-scored rubrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompts;
use crate::services::{checked_embed, cosine_similarity, Embedder, LlmClient, ServiceError};
use crate::text;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("reference text has no tokens")]
    EmptyReference,
    #[error("candidate text has no tokens")]
    EmptyCandidate,
    #[error("judge failed: {0}")]
    JudgeFailed(#[from] ServiceError),
    #[error("judge reply {0:?} is not a score in 1..=5")]
    JudgeOutOfRange(String),
}

/// Lexical overlap scores, all in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalScores {
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
}

/// Full per-sample metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub embed_f1: f64,
    pub llm_score: f64,
    pub a_score: f64,
    pub q_score: f64,
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts: BTreeMap<&[String], usize> = BTreeMap::new();
    if tokens.len() >= n && n > 0 {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_matches(cand: &[String], reference: &[String], n: usize) -> (usize, usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let matches = c
        .iter()
        .map(|(gram, count)| (*count).min(r.get(gram).copied().unwrap_or(0)))
        .sum();
    let c_total = cand.len().saturating_sub(n - 1);
    let r_total = reference.len().saturating_sub(n - 1);
    (matches, c_total, r_total)
}

/// BLEU with modified n-gram precisions up to 4-grams, add-1 smoothing on
/// zero counts for n >= 2, and the brevity penalty. A zero unigram precision
/// gives zero outright.
fn bleu(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let (m1, t1, _) = clipped_matches(cand, reference, 1);
    if m1 == 0 {
        return 0.0;
    }
    let mut log_sum = (m1 as f64 / t1 as f64).ln();
    for n in 2..=4 {
        let (m, t, _) = clipped_matches(cand, reference, n);
        let p = if m == 0 || t == 0 {
            (m as f64 + 1.0) / (t as f64 + 1.0)
        } else {
            m as f64 / t as f64
        };
        log_sum += p.ln();
    }
    let gm = (log_sum / 4.0).exp();
    let c = cand.len() as f64;
    let r = reference.len() as f64;
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    (gm * bp).clamp(0.0, 1.0)
}

/// F1 over n-gram overlap, computed as `2M / (|cand n-grams| + |ref n-grams|)`.
fn rouge_n(cand: &[String], reference: &[String], n: usize) -> f64 {
    let (m, c_total, r_total) = clipped_matches(cand, reference, n);
    if c_total + r_total == 0 {
        return 0.0;
    }
    2.0 * m as f64 / (c_total + r_total) as f64
}

fn lcs_length(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 via the longest common subsequence: `2L / (|cand| + |ref|)`.
fn rouge_l(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() && reference.is_empty() {
        return 0.0;
    }
    let l = lcs_length(cand, reference);
    2.0 * l as f64 / (cand.len() + reference.len()) as f64
}

/// All lexical metrics for one candidate/reference pair. Tokenization is a
/// lowercase whitespace/punctuation split.
pub fn lexical_metrics(candidate: &str, reference: &str) -> Result<LexicalScores, EvalError> {
    let r = text::tokenize(reference);
    if r.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let c = text::tokenize(candidate);
    Ok(LexicalScores {
        bleu: bleu(&c, &r),
        rouge1: rouge_n(&c, &r, 1),
        rouge2: rouge_n(&c, &r, 2),
        rouge_l: rouge_l(&c, &r),
    })
}

/// Greedy-matching embedding F1 over tokens: precision is the mean best
/// clamped cosine for each candidate token against the reference tokens,
/// recall the converse, combined as F1.
pub fn embedding_f1(
    candidate: &str,
    reference: &str,
    embedder: &dyn Embedder,
) -> Result<f64, EvalError> {
    let c_tokens = text::tokenize(candidate);
    let r_tokens = text::tokenize(reference);
    if r_tokens.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    if c_tokens.is_empty() {
        return Err(EvalError::EmptyCandidate);
    }
    let embed_all = |tokens: &[String]| -> Result<Vec<Vec<f64>>, EvalError> {
        tokens
            .iter()
            .map(|t| checked_embed(embedder, t).map_err(EvalError::from))
            .collect()
    };
    let c_vecs = embed_all(&c_tokens)?;
    let r_vecs = embed_all(&r_tokens)?;
    let best = |from: &[Vec<f64>], to: &[Vec<f64>]| -> Result<f64, EvalError> {
        let mut total = 0.0;
        for u in from {
            let mut top = 0.0f64;
            for v in to {
                top = top.max(cosine_similarity(u, v)?.clamp(0.0, 1.0));
            }
            total += top;
        }
        Ok(total / from.len() as f64)
    };
    let precision = best(&c_vecs, &r_vecs)?;
    let recall = best(&r_vecs, &c_vecs)?;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Which judge rubric to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JudgeKind {
    /// Clinical accuracy of the predicted answer against the ground truth.
    AnswerScore,
    /// Factual/logical alignment of the reasoning with the reference.
    AScore,
    /// Intrinsic reasoning quality, reference-free.
    QScore,
}

/// Send the rubric prompt for `kind` and parse the single 1-5 integer reply.
pub fn judge_eval(
    pred: &str,
    reference: &str,
    kind: JudgeKind,
    judge: &LlmClient,
) -> Result<f64, EvalError> {
    let prompt = match kind {
        JudgeKind::AnswerScore => prompts::answer_score_prompt(reference, pred),
        JudgeKind::AScore => prompts::alignment_score_prompt(reference, pred),
        JudgeKind::QScore => prompts::quality_score_prompt(pred),
    };
    let reply = judge.request(&prompt)?;
    let score = text::first_standalone_integer(&reply)
        .ok_or_else(|| EvalError::JudgeOutOfRange(reply.clone()))?;
    if !(1..=5).contains(&score) {
        return Err(EvalError::JudgeOutOfRange(reply));
    }
    Ok(score as f64)
}

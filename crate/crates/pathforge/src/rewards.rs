//! Structured-response parsing and the multi-granular reward
//! `R = R_format + R_semantic + alpha * R_entity`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{KnowledgeGraph, NodeKind};
use crate::prompts;
use crate::reasoning::{anchor_mentions, EntityMention, SchemaKind};
use crate::services::{checked_embed, cosine_similarity, Embedder, LlmClient, ServiceError};
use crate::text;

/// Default weight of the entity reward inside the total.
pub const DEFAULT_ALPHA: f64 = 1.0;
/// Default scaling of soft (unmatched) entity similarity.
pub const DEFAULT_BETA: f64 = 0.5;
/// Default denominator stabilizer for the soft-Dice coefficient.
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("judge call failed: {0}")]
    JudgeFailed(#[from] ServiceError),
    #[error("judge reply {0:?} is not a score in 1..=5")]
    JudgeOutOfRange(String),
    #[error("response is not well-formed")]
    NotWellFormed,
    #[error("invalid parameter: {0}")]
    BadParameter(String),
}

/// A response decomposed into its observe / think / answer blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredResponse {
    pub observe: String,
    pub think: String,
    pub answer: String,
    pub well_formed: bool,
}

const TAGS: [&str; 3] = ["observe", "think", "answer"];

fn find_all(haystack: &str, needle: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        out.push(from + pos);
        from += pos + needle.len();
    }
    out
}

/// Extract the observe/think/answer blocks of `text`.
///
/// `well_formed` is true only when each tag occurs exactly once, every open
/// tag is properly closed, the blocks appear in canonical
/// observe -> think -> answer order, and every block has non-empty content.
/// Text outside the tags is ignored. Malformed input is reported through the
/// flag, never as an error.
pub fn parse_structured(text: &str) -> StructuredResponse {
    let mut contents: [String; 3] = [String::new(), String::new(), String::new()];
    let mut well_formed = true;
    let mut last_close_end = 0usize;
    for (i, tag) in TAGS.iter().enumerate() {
        let open = format!("<{tag}>");
        let close = format!("</{tag}>");
        let opens = find_all(text, &open);
        let closes = find_all(text, &close);
        if opens.len() != 1 || closes.len() != 1 {
            well_formed = false;
        }
        let (content, span) = match (opens.first(), closes.first()) {
            (Some(&o), Some(&c)) if c > o => {
                (text[o + open.len()..c].trim().to_string(), Some((o, c + close.len())))
            }
            _ => (String::new(), None),
        };
        match span {
            Some((o, end)) => {
                if o < last_close_end {
                    well_formed = false; // out of canonical order or overlapping
                }
                last_close_end = end;
            }
            None => well_formed = false,
        }
        if content.is_empty() {
            well_formed = false;
        }
        contents[i] = content;
    }
    let [observe, think, answer] = contents;
    StructuredResponse {
        observe,
        think,
        answer,
        well_formed,
    }
}

/// Canonical tag emission; `parse_structured(render_structured(r))` is an
/// identity for well-formed responses.
pub fn render_structured(r: &StructuredResponse) -> String {
    format!(
        "<observe> {} </observe> <think> {} </think> <answer> {} </answer>",
        r.observe, r.think, r.answer
    )
}

/// Binary format reward.
pub fn reward_format(r: &StructuredResponse) -> f64 {
    if r.well_formed {
        1.0
    } else {
        0.0
    }
}

/// Judge-scored semantic reward: the 1-5 rubric score mapped onto `[0, 1]`
/// via `(s - 1) / 4`.
pub fn reward_semantic(
    pred_answer: &str,
    gt_answer: &str,
    judge: &LlmClient,
) -> Result<f64, RewardError> {
    if gt_answer.trim().is_empty() {
        return Err(RewardError::BadParameter(
            "ground-truth answer is empty".to_string(),
        ));
    }
    let prompt = prompts::answer_score_prompt(gt_answer, pred_answer);
    let reply = judge.request(&prompt)?;
    let score = text::first_standalone_integer(&reply)
        .ok_or_else(|| RewardError::JudgeOutOfRange(reply.clone()))?;
    if !(1..=5).contains(&score) {
        return Err(RewardError::JudgeOutOfRange(reply));
    }
    Ok((score - 1) as f64 / 4.0)
}

/// A set of canonical entity keys: graph node ids for anchored entities,
/// normalized surface strings otherwise.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySet {
    entries: BTreeSet<String>,
}

impl EntitySet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from raw keys; keys are canonicalized (lowercased, trimmed).
    pub fn from_keys<I, S>(keys: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let entries = keys
            .into_iter()
            .map(|k| k.as_ref().trim().to_lowercase())
            .filter(|k| !k.is_empty())
            .collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &String> {
        self.entries.iter()
    }
}

fn schema_kind_for(kind: NodeKind) -> SchemaKind {
    match kind {
        NodeKind::PhysicalEntity | NodeKind::GeneProtein => SchemaKind::PhysicalEntity,
        NodeKind::Phenotype | NodeKind::ClinicalPhenotype => SchemaKind::Phenotype,
        NodeKind::Diagnosis | NodeKind::Disease => SchemaKind::Diagnosis,
    }
}

/// Scan `section` for the longest non-overlapping token runs that match a
/// graph node name (or alias), returning the matched surface spans with the
/// schema kind of the owning node.
fn scan_node_names(section: &str, dictionary: &NameDictionary) -> Vec<EntityMention> {
    let tokens = text::tokenize_with_spans(section);
    let mut mentions = Vec::new();
    let mut i = 0usize;
    while i < tokens.len() {
        let mut matched: Option<(usize, SchemaKind)> = None;
        let max_len = dictionary.max_tokens.min(tokens.len() - i);
        for len in (1..=max_len).rev() {
            let key: Vec<&str> = tokens[i..i + len].iter().map(|t| t.0.as_str()).collect();
            if let Some(kind) = dictionary.by_tokens.get(&key.join(" ")) {
                matched = Some((len, *kind));
                break;
            }
        }
        match matched {
            Some((len, kind)) => {
                let start = tokens[i].1;
                let end = tokens[i + len - 1].2;
                mentions.push(EntityMention {
                    label: format!("R{}", mentions.len() + 1),
                    text: section[start..end].to_string(),
                    schema_kind: kind,
                });
                i += len;
            }
            None => i += 1,
        }
    }
    mentions
}

struct NameDictionary {
    by_tokens: BTreeMap<String, SchemaKind>,
    max_tokens: usize,
}

fn build_dictionary(g: &KnowledgeGraph) -> NameDictionary {
    let mut by_tokens: BTreeMap<String, SchemaKind> = BTreeMap::new();
    let mut max_tokens = 0usize;
    for node in g.nodes() {
        for name in std::iter::once(node.name.as_str()).chain(node.aliases.iter().map(|a| a.as_str())) {
            let toks = text::tokenize(name);
            if toks.is_empty() {
                continue;
            }
            max_tokens = max_tokens.max(toks.len());
            by_tokens.entry(toks.join(" ")).or_insert(schema_kind_for(node.kind));
        }
    }
    NameDictionary {
        by_tokens,
        max_tokens,
    }
}

/// Extract the entity set of a well-formed response: longest-match node-name
/// scanning over the observe and think sections, with the matched spans
/// anchored back to node ids through [`anchor_mentions`]. Unanchored spans
/// are excluded.
pub fn extract_reward_entities(
    r: &StructuredResponse,
    g: &KnowledgeGraph,
    embedder: &dyn Embedder,
    threshold: f64,
) -> Result<EntitySet, RewardError> {
    if !r.well_formed {
        return Err(RewardError::NotWellFormed);
    }
    let dictionary = build_dictionary(g);
    let mut mentions = scan_node_names(&r.observe, &dictionary);
    let offset = mentions.len();
    for (i, mut m) in scan_node_names(&r.think, &dictionary).into_iter().enumerate() {
        m.label = format!("R{}", offset + i + 1);
        mentions.push(m);
    }
    let anchored = anchor_mentions(&mentions, g, embedder, threshold)
        .map_err(|e| match e {
            crate::reasoning::ReasoningError::Service(s) => RewardError::JudgeFailed(s),
            other => RewardError::BadParameter(other.to_string()),
        })?;
    Ok(EntitySet::from_keys(
        anchored.iter().filter_map(|a| a.node_id.as_deref()),
    ))
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Soft intersection of predicted and ground-truth entity sets: the exact
/// overlap plus `beta` times the best clamped cosine for each spurious
/// prediction. An empty ground truth contributes no soft credit.
pub fn soft_intersection(
    pred: &EntitySet,
    gt: &EntitySet,
    embedder: &dyn Embedder,
    beta: f64,
) -> Result<f64, RewardError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(RewardError::BadParameter(format!("beta {beta} outside [0, 1]")));
    }
    let exact = pred.iter().filter(|e| gt.contains(e)).count() as f64;
    let mut soft = 0.0;
    for e in pred.iter().filter(|e| !gt.contains(e)) {
        let ve = checked_embed(embedder, e).map_err(RewardError::JudgeFailed)?;
        let mut best = 0.0f64;
        for e_gt in gt.iter() {
            let vg = checked_embed(embedder, e_gt).map_err(RewardError::JudgeFailed)?;
            let sim = clamp01(cosine_similarity(&ve, &vg).map_err(RewardError::JudgeFailed)?);
            best = best.max(sim);
        }
        soft += best;
    }
    Ok(exact + beta * soft)
}

/// Soft-Dice entity reward: `2 * I_soft / (|pred| + |gt| + epsilon)`,
/// clamped into `[0, 1]`. The clamp only bites for `beta > 0.5` with
/// near-duplicate predictions; at `beta <= 0.5` the raw value already lies
/// in range.
pub fn reward_entity(
    pred: &EntitySet,
    gt: &EntitySet,
    embedder: &dyn Embedder,
    beta: f64,
    epsilon: f64,
) -> Result<f64, RewardError> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(RewardError::BadParameter(format!("epsilon {epsilon} must be > 0")));
    }
    let i_soft = soft_intersection(pred, gt, embedder, beta)?;
    let denom = pred.len() as f64 + gt.len() as f64 + epsilon;
    Ok(clamp01(2.0 * i_soft / denom))
}

/// One response's reward components and weighted total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub semantic: f64,
    pub entity: f64,
    pub alpha: f64,
    pub total: f64,
}

/// Combine components into the total `R = R_format + R_semantic + alpha * R_entity`.
pub fn total_reward(r_format: f64, r_semantic: f64, r_entity: f64, alpha: f64) -> RewardBreakdown {
    RewardBreakdown {
        format: r_format,
        semantic: r_semantic,
        entity: r_entity,
        alpha,
        total: r_format + r_semantic + alpha * r_entity,
    }
}

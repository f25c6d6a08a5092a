//! Entity-mention parsing, graph anchoring, and priority-weighted shortest
//! reasoning-path retrieval from finding anchors to diagnosis end nodes.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{KnowledgeGraph, NodeKind};
use crate::services::{checked_embed, cosine_similarity, Embedder, ServiceError};
use crate::text;

#[derive(Debug, Error)]
pub enum ReasoningError {
    #[error("malformed extraction JSON: {0}")]
    MalformedJson(String),
    #[error("unknown schema kind {0:?}")]
    UnknownSchemaKind(String),
    #[error("no start anchors supplied")]
    NoStarts,
    #[error("no end anchors supplied")]
    NoEnds,
    #[error("unknown node id {0}")]
    UnknownNode(String),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

/// Extraction schema kinds (the NER output vocabulary).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemaKind {
    PhysicalEntity,
    Phenotype,
    Diagnosis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityMention {
    pub label: String,
    pub text: String,
    pub schema_kind: SchemaKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorMethod {
    Exact,
    Normalized,
    Embedding,
    Unanchored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchoredEntity {
    pub mention: EntityMention,
    pub node_id: Option<String>,
    pub method: AnchorMethod,
    pub score: f64,
}

/// Role of a retrieved path in the downstream reasoning narrative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathRole {
    Support,
    Contrast,
    Exclusion,
    Context,
}

impl PathRole {
    pub fn as_str(self) -> &'static str {
        match self {
            PathRole::Support => "Support",
            PathRole::Contrast => "Contrast",
            PathRole::Exclusion => "Exclusion",
            PathRole::Context => "Context",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningPath {
    pub nodes: Vec<String>,
    pub relations: Vec<String>,
    pub role: PathRole,
    pub cost: f64,
}

#[derive(Deserialize)]
struct ExtractionFile {
    extracted_entities: Vec<ExtractionEntry>,
}

#[derive(Deserialize)]
struct ExtractionEntry {
    id: String,
    #[serde(default)]
    name: String,
    #[serde(rename = "type")]
    kind: String,
}

/// Parse an NER extraction document into mentions. The file's `type` field
/// maps Structure -> PhysicalEntity; Phenotype and Diagnosis map onto
/// themselves.
pub fn parse_extraction(doc: &str) -> Result<Vec<EntityMention>, ReasoningError> {
    let file: ExtractionFile =
        serde_json::from_str(doc).map_err(|e| ReasoningError::MalformedJson(e.to_string()))?;
    let mut seen = BTreeSet::new();
    let mut mentions = Vec::with_capacity(file.extracted_entities.len());
    for entry in file.extracted_entities {
        let schema_kind = match entry.kind.as_str() {
            "Structure" => SchemaKind::PhysicalEntity,
            "Phenotype" => SchemaKind::Phenotype,
            "Diagnosis" => SchemaKind::Diagnosis,
            other => return Err(ReasoningError::UnknownSchemaKind(other.to_string())),
        };
        if !seen.insert(entry.id.clone()) {
            return Err(ReasoningError::MalformedJson(format!(
                "duplicate mention label {}",
                entry.id
            )));
        }
        mentions.push(EntityMention {
            label: entry.id,
            text: entry.name,
            schema_kind,
        });
    }
    Ok(mentions)
}

/// Graph node kinds a mention of each schema kind may anchor to. The
/// extraction schema has three buckets; molecular entities ride in the
/// structural one.
fn compatible_kinds(kind: SchemaKind) -> &'static [NodeKind] {
    match kind {
        SchemaKind::PhysicalEntity => &[NodeKind::PhysicalEntity, NodeKind::GeneProtein],
        SchemaKind::Phenotype => &[NodeKind::Phenotype, NodeKind::ClinicalPhenotype],
        SchemaKind::Diagnosis => &[NodeKind::Diagnosis, NodeKind::Disease],
    }
}

fn node_name_candidates(node: &crate::kg::Node) -> impl Iterator<Item = &str> {
    std::iter::once(node.name.as_str()).chain(node.aliases.iter().map(|a| a.as_str()))
}

/// Anchor mentions to graph nodes. Resolution order per mention: exact
/// case-sensitive name match, then normalized match, then best embedding
/// cosine at or above `threshold` among kind-compatible nodes; otherwise the
/// mention is returned flagged `Unanchored`. Ties break on node id.
pub fn anchor_mentions(
    mentions: &[EntityMention],
    g: &KnowledgeGraph,
    embedder: &dyn Embedder,
    threshold: f64,
) -> Result<Vec<AnchoredEntity>, ReasoningError> {
    let mut out = Vec::with_capacity(mentions.len());
    for mention in mentions {
        let kinds = compatible_kinds(mention.schema_kind);
        let candidates: Vec<_> = g.nodes().filter(|n| kinds.contains(&n.kind)).collect();

        let exact = candidates
            .iter()
            .find(|n| node_name_candidates(n).any(|name| name == mention.text));
        if let Some(node) = exact {
            out.push(AnchoredEntity {
                mention: mention.clone(),
                node_id: Some(node.id.clone()),
                method: AnchorMethod::Exact,
                score: 1.0,
            });
            continue;
        }

        let wanted = text::normalize_name(&mention.text);
        let normalized = candidates
            .iter()
            .find(|n| node_name_candidates(n).any(|name| text::normalize_name(name) == wanted));
        if let Some(node) = normalized {
            out.push(AnchoredEntity {
                mention: mention.clone(),
                node_id: Some(node.id.clone()),
                method: AnchorMethod::Normalized,
                score: 1.0,
            });
            continue;
        }

        let mention_vec = checked_embed(embedder, &mention.text)?;
        let mut best: Option<(f64, &str)> = None;
        for node in &candidates {
            let node_vec = checked_embed(embedder, &node.name)?;
            let sim = cosine_similarity(&mention_vec, &node_vec)?;
            let better = match best {
                None => sim >= threshold,
                Some((bs, bid)) => sim > bs || (sim == bs && node.id.as_str() < bid),
            };
            if better && sim >= threshold {
                best = Some((sim, &node.id));
            }
        }
        match best {
            Some((score, id)) => out.push(AnchoredEntity {
                mention: mention.clone(),
                node_id: Some(id.to_string()),
                method: AnchorMethod::Embedding,
                score,
            }),
            None => out.push(AnchoredEntity {
                mention: mention.clone(),
                node_id: None,
                method: AnchorMethod::Unanchored,
                score: 0.0,
            }),
        }
    }
    Ok(out)
}

/// Per-relation traversal-cost multipliers. Diagnostic-logic relations get a
/// discount by default so retrieval prefers routes through them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityMap(pub BTreeMap<String, f64>);

/// Default discount applied to diagnostic-logic relations.
pub const DEFAULT_PRIORITY_DISCOUNT: f64 = 0.5;
/// Default bound on total path cost (about six unit hops).
pub const DEFAULT_MAX_COST: f64 = 6.0;
/// Cost factor for traversing an edge against its stored direction.
pub const REVERSE_COST_FACTOR: f64 = 2.0;

impl Default for PriorityMap {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert("hasSupportEvidence".to_string(), DEFAULT_PRIORITY_DISCOUNT);
        m.insert("hasContradictEvidence".to_string(), DEFAULT_PRIORITY_DISCOUNT);
        Self(m)
    }
}

impl PriorityMap {
    pub fn multiplier(&self, relation: &str) -> f64 {
        self.0.get(relation).copied().unwrap_or(1.0)
    }
}

/// Search state ordered by (cost, node sequence) so equal-cost ties resolve
/// to the lexicographically smallest id sequence.
#[derive(Debug, Clone)]
struct SearchState {
    cost: f64,
    nodes: Vec<String>,
    relations: Vec<String>,
}

impl PartialEq for SearchState {
    fn eq(&self, other: &Self) -> bool {
        self.cost.total_cmp(&other.cost).is_eq()
            && self.nodes == other.nodes
            && self.relations == other.relations
    }
}

impl Eq for SearchState {}

impl Ord for SearchState {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then_with(|| self.nodes.cmp(&other.nodes))
            .then_with(|| self.relations.cmp(&other.relations))
    }
}

impl PartialOrd for SearchState {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Hop<'a> {
    to: &'a str,
    relation: &'a str,
    base_cost: f64,
}

fn adjacency<'a>(g: &'a KnowledgeGraph, priority: &PriorityMap) -> BTreeMap<&'a str, Vec<Hop<'a>>> {
    let mut adj: BTreeMap<&str, Vec<Hop>> = BTreeMap::new();
    for edge in g.edges() {
        let cost = edge.weight * priority.multiplier(&edge.relation);
        adj.entry(&edge.src).or_default().push(Hop {
            to: &edge.dst,
            relation: &edge.relation,
            base_cost: cost,
        });
        adj.entry(&edge.dst).or_default().push(Hop {
            to: &edge.src,
            relation: &edge.relation,
            base_cost: cost * REVERSE_COST_FACTOR,
        });
    }
    adj
}

fn role_for(relations: &[String]) -> PathRole {
    if relations.iter().any(|r| r == "hasContradictEvidence") {
        PathRole::Contrast
    } else if relations.iter().any(|r| r == "excludes") {
        PathRole::Exclusion
    } else {
        PathRole::Support
    }
}

/// Minimum-cost path from `start` to `end` under the effective edge cost
/// `weight x multiplier(relation)`, traversing edges forward at stated cost
/// and backward at twice the cost. Returns `None` when unreachable.
pub fn shortest_path(
    g: &KnowledgeGraph,
    start: &str,
    end: &str,
    priority: &PriorityMap,
) -> Result<Option<ReasoningPath>, ReasoningError> {
    for id in [start, end] {
        if !g.contains_node(id) {
            return Err(ReasoningError::UnknownNode(id.to_string()));
        }
    }
    let adj = adjacency(g, priority);
    let mut heap: BinaryHeap<std::cmp::Reverse<SearchState>> = BinaryHeap::new();
    let mut settled: BTreeSet<&str> = BTreeSet::new();
    heap.push(std::cmp::Reverse(SearchState {
        cost: 0.0,
        nodes: vec![start.to_string()],
        relations: vec![],
    }));
    while let Some(std::cmp::Reverse(state)) = heap.pop() {
        let here = state.nodes.last().expect("states are non-empty").clone();
        if here == end {
            let role = role_for(&state.relations);
            return Ok(Some(ReasoningPath {
                nodes: state.nodes,
                relations: state.relations,
                role,
                cost: state.cost,
            }));
        }
        let here_ref = g.node(&here).expect("settled nodes exist").id.as_str();
        if !settled.insert(here_ref) {
            continue;
        }
        if let Some(hops) = adj.get(here.as_str()) {
            for hop in hops {
                if settled.contains(hop.to) {
                    continue;
                }
                let mut nodes = state.nodes.clone();
                nodes.push(hop.to.to_string());
                let mut relations = state.relations.clone();
                relations.push(hop.relation.to_string());
                heap.push(std::cmp::Reverse(SearchState {
                    cost: state.cost + hop.base_cost,
                    nodes,
                    relations,
                }));
            }
        }
    }
    Ok(None)
}

/// Retrieve the minimum-cost reasoning path for every (start, end) pair,
/// omitting paths whose cost exceeds `max_cost`. Output is grouped
/// start-major in input order.
pub fn retrieve_paths(
    g: &KnowledgeGraph,
    starts: &[String],
    ends: &[String],
    priority: &PriorityMap,
    max_cost: f64,
) -> Result<Vec<ReasoningPath>, ReasoningError> {
    if starts.is_empty() {
        return Err(ReasoningError::NoStarts);
    }
    if ends.is_empty() {
        return Err(ReasoningError::NoEnds);
    }
    let mut out = Vec::new();
    for start in starts {
        for end in ends {
            if let Some(path) = shortest_path(g, start, end, priority)? {
                if path.cost <= max_cost {
                    out.push(path);
                }
            }
        }
    }
    Ok(out)
}

/// Start anchors for retrieval: anchored finding mentions (physical entities
/// and phenotypes), deduplicated in first-seen order.
pub fn finding_anchor_ids(anchored: &[AnchoredEntity]) -> Vec<String> {
    anchor_ids(anchored, &[SchemaKind::PhysicalEntity, SchemaKind::Phenotype])
}

/// End anchors for retrieval: anchored diagnosis mentions.
pub fn diagnosis_anchor_ids(anchored: &[AnchoredEntity]) -> Vec<String> {
    anchor_ids(anchored, &[SchemaKind::Diagnosis])
}

fn anchor_ids(anchored: &[AnchoredEntity], kinds: &[SchemaKind]) -> Vec<String> {
    let mut out = Vec::new();
    for entity in anchored {
        if !kinds.contains(&entity.mention.schema_kind) {
            continue;
        }
        if let Some(id) = &entity.node_id {
            if !out.contains(id) {
                out.push(id.clone());
            }
        }
    }
    out
}

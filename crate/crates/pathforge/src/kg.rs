//! Multi-scale knowledge-graph substrate: build, align, fuse, prune, persist.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::services::{checked_embed, cosine_similarity, Embedder, ServiceError};

#[derive(Debug, Error)]
pub enum KgError {
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed graph file: {0}")]
    MalformedFile(String),
    #[error("edge {src} -[{relation}]-> {dst} references unknown node id {missing}")]
    DanglingEdge {
        src: String,
        dst: String,
        relation: String,
        missing: String,
    },
    #[error("duplicate node id {0}")]
    DuplicateNodeId(String),
    #[error("aligned nodes {a} and {b} have kinds that are not a permitted bridge")]
    ConflictingKinds { a: String, b: String },
    #[error("graph is empty")]
    EmptyGraph,
    #[error("unknown node id {0}")]
    UnknownNode(String),
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

/// Node taxonomy spanning both source graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    PhysicalEntity,
    Phenotype,
    Diagnosis,
    Disease,
    GeneProtein,
    ClinicalPhenotype,
}

/// Which substrate a node came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeSource {
    GraphA,
    GraphB,
    Fused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub name: String,
    pub kind: NodeKind,
    pub source: NodeSource,
    #[serde(default)]
    pub external_ids: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub relation: String,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

impl Edge {
    fn sort_key(&self) -> (&str, &str, &str, f64) {
        (&self.src, &self.dst, &self.relation, self.weight)
    }
}

/// Immutable after construction; shareable read-only across workers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeGraph {
    nodes: BTreeMap<String, Node>,
    edges: Vec<Edge>,
    relation_vocab: BTreeSet<String>,
}

/// On-disk JSON shape: `{"nodes":[...],"edges":[...],"relations":[...]}`.
#[derive(Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    #[serde(default)]
    relations: Vec<String>,
}

impl KnowledgeGraph {
    /// Build a graph from parts, validating node/edge invariants. Input
    /// order is irrelevant: the same sets produce the same graph.
    pub fn from_parts(
        nodes: Vec<Node>,
        edges: Vec<Edge>,
        relations: impl IntoIterator<Item = String>,
    ) -> Result<Self, KgError> {
        let mut node_map = BTreeMap::new();
        for node in nodes {
            if node_map.contains_key(&node.id) {
                return Err(KgError::DuplicateNodeId(node.id));
            }
            node_map.insert(node.id.clone(), node);
        }
        let mut vocab: BTreeSet<String> = relations.into_iter().collect();
        for edge in &edges {
            for endpoint in [&edge.src, &edge.dst] {
                if !node_map.contains_key(endpoint) {
                    return Err(KgError::DanglingEdge {
                        src: edge.src.clone(),
                        dst: edge.dst.clone(),
                        relation: edge.relation.clone(),
                        missing: endpoint.clone(),
                    });
                }
            }
            if edge.weight.is_nan() || edge.weight <= 0.0 {
                return Err(KgError::MalformedFile(format!(
                    "edge {} -> {} has non-positive weight {}",
                    edge.src, edge.dst, edge.weight
                )));
            }
            vocab.insert(edge.relation.clone());
        }
        let mut edges = edges;
        edges.sort_by(|a, b| a.sort_key().partial_cmp(&b.sort_key()).expect("finite keys"));
        Ok(Self {
            nodes: node_map,
            edges,
            relation_vocab: vocab,
        })
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn contains_node(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    /// Nodes in ascending id order.
    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    /// Edges sorted by (src, dst, relation, weight).
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn relation_vocab(&self) -> &BTreeSet<String> {
        &self.relation_vocab
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// True when an edge (src, dst, relation) exists, ignoring weight.
    pub fn has_edge(&self, src: &str, dst: &str, relation: &str) -> bool {
        self.edges
            .iter()
            .any(|e| e.src == src && e.dst == dst && e.relation == relation)
    }
}

/// Load a graph from its JSON file format.
pub fn load_graph(path: &Path) -> Result<KnowledgeGraph, KgError> {
    let data = std::fs::read_to_string(path)?;
    parse_graph(&data)
}

/// Parse a graph from its JSON document text.
pub fn parse_graph(data: &str) -> Result<KnowledgeGraph, KgError> {
    let file: GraphFile =
        serde_json::from_str(data).map_err(|e| KgError::MalformedFile(e.to_string()))?;
    KnowledgeGraph::from_parts(file.nodes, file.edges, file.relations)
}

/// Write a graph to its JSON file format (nodes by id, edges sorted,
/// relations sorted), so emit/load round trips are stable.
pub fn save_graph(g: &KnowledgeGraph, path: &Path) -> Result<(), KgError> {
    std::fs::write(path, emit_graph(g))?;
    Ok(())
}

/// Serialize a graph to its canonical JSON document text.
pub fn emit_graph(g: &KnowledgeGraph) -> String {
    let file = GraphFile {
        nodes: g.nodes.values().cloned().collect(),
        edges: g.edges.clone(),
        relations: g.relation_vocab.iter().cloned().collect(),
    };
    let mut out = serde_json::to_string_pretty(&file).expect("graph serialization");
    out.push('\n');
    out
}

/// How a node pair was aligned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignMethod {
    ExactId,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPair {
    pub a_id: String,
    pub b_id: String,
    pub method: AlignMethod,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMap {
    pub pairs: Vec<AlignmentPair>,
}

/// Kind pairs eligible for cross-graph embedding alignment.
fn is_embedding_bridge(a: NodeKind, b: NodeKind) -> bool {
    matches!(
        (a, b),
        (NodeKind::Diagnosis, NodeKind::Disease)
            | (NodeKind::Disease, NodeKind::Diagnosis)
            | (NodeKind::Phenotype, NodeKind::ClinicalPhenotype)
            | (NodeKind::ClinicalPhenotype, NodeKind::Phenotype)
    )
}

/// Kind pairs that may collapse into one fused node.
fn is_fusable(a: NodeKind, b: NodeKind) -> bool {
    a == b || is_embedding_bridge(a, b)
}

/// Align nodes of `a` and `b`: exact external-id matches first (score 1.0),
/// then embedding similarity above `threshold` over the permitted kind
/// bridges, greedily in descending-similarity order. Each node is aligned at
/// most once; ties break on lexicographic node ids.
pub fn align_nodes(
    a: &KnowledgeGraph,
    b: &KnowledgeGraph,
    embedder: &dyn Embedder,
    threshold: f64,
) -> Result<AlignmentMap, KgError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(KgError::InvalidThreshold(threshold));
    }
    let mut used_a: BTreeSet<&str> = BTreeSet::new();
    let mut used_b: BTreeSet<&str> = BTreeSet::new();
    let mut pairs = Vec::new();

    // Exact stage: any shared namespaced identifier pins the pair.
    let mut exact: Vec<(&str, &str)> = Vec::new();
    let mut b_by_ext: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for node in b.nodes() {
        for ext in &node.external_ids {
            b_by_ext.entry(ext).or_default().push(&node.id);
        }
    }
    for node in a.nodes() {
        for ext in &node.external_ids {
            if let Some(matches) = b_by_ext.get(ext.as_str()) {
                for b_id in matches {
                    exact.push((&node.id, b_id));
                }
            }
        }
    }
    exact.sort();
    exact.dedup();
    for (a_id, b_id) in exact {
        if used_a.contains(a_id) || used_b.contains(b_id) {
            continue;
        }
        used_a.insert(a_id);
        used_b.insert(b_id);
        pairs.push(AlignmentPair {
            a_id: a_id.to_string(),
            b_id: b_id.to_string(),
            method: AlignMethod::ExactId,
            score: 1.0,
        });
    }

    // Embedding stage over the declared kind bridges.
    let mut candidates: Vec<(f64, &str, &str)> = Vec::new();
    let mut b_vectors: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for node_a in a.nodes() {
        if used_a.contains(node_a.id.as_str()) {
            continue;
        }
        let mut vec_a: Option<Vec<f64>> = None;
        for node_b in b.nodes() {
            if used_b.contains(node_b.id.as_str()) {
                continue;
            }
            if !is_embedding_bridge(node_a.kind, node_b.kind) {
                continue;
            }
            let va = match &vec_a {
                Some(v) => v,
                None => {
                    vec_a = Some(checked_embed(embedder, &node_a.name)?);
                    vec_a.as_ref().expect("just set")
                }
            };
            if !b_vectors.contains_key(node_b.id.as_str()) {
                b_vectors.insert(&node_b.id, checked_embed(embedder, &node_b.name)?);
            }
            let vb = &b_vectors[node_b.id.as_str()];
            let sim = cosine_similarity(va, vb)?;
            if sim > threshold {
                candidates.push((sim, &node_a.id, &node_b.id));
            }
        }
    }
    candidates.sort_by(|x, y| {
        y.0.total_cmp(&x.0)
            .then_with(|| x.1.cmp(y.1))
            .then_with(|| x.2.cmp(y.2))
    });
    for (sim, a_id, b_id) in candidates {
        if used_a.contains(a_id) || used_b.contains(b_id) {
            continue;
        }
        used_a.insert(a_id);
        used_b.insert(b_id);
        pairs.push(AlignmentPair {
            a_id: a_id.to_string(),
            b_id: b_id.to_string(),
            method: AlignMethod::Embedding,
            score: sim,
        });
    }
    Ok(AlignmentMap { pairs })
}

/// Fuse two graphs under an alignment: each aligned pair collapses into one
/// `Fused` node keeping graph-a's id and kind, the union of external ids,
/// and the partner's name as an alias. All edges re-target the fused node.
pub fn fuse_graphs(
    a: &KnowledgeGraph,
    b: &KnowledgeGraph,
    alignment: &AlignmentMap,
) -> Result<KnowledgeGraph, KgError> {
    let mut b_to_fused: BTreeMap<&str, &str> = BTreeMap::new();
    let mut fused_a: BTreeSet<&str> = BTreeSet::new();
    for pair in &alignment.pairs {
        let node_a = a
            .node(&pair.a_id)
            .ok_or_else(|| KgError::UnknownNode(pair.a_id.clone()))?;
        let node_b = b
            .node(&pair.b_id)
            .ok_or_else(|| KgError::UnknownNode(pair.b_id.clone()))?;
        if !is_fusable(node_a.kind, node_b.kind) {
            return Err(KgError::ConflictingKinds {
                a: pair.a_id.clone(),
                b: pair.b_id.clone(),
            });
        }
        b_to_fused.insert(&pair.b_id, &pair.a_id);
        fused_a.insert(&pair.a_id);
    }

    let mut nodes: Vec<Node> = Vec::with_capacity(a.node_count() + b.node_count());
    for node in a.nodes() {
        nodes.push(node.clone());
    }
    for node in b.nodes() {
        if let Some(target) = b_to_fused.get(node.id.as_str()) {
            let fused = nodes
                .iter_mut()
                .find(|n| n.id == **target)
                .expect("fused target collected above");
            fused.source = NodeSource::Fused;
            fused.external_ids.extend(node.external_ids.iter().cloned());
            let mut aliases: BTreeSet<String> = fused.aliases.iter().cloned().collect();
            aliases.extend(node.aliases.iter().cloned());
            if node.name != fused.name {
                aliases.insert(node.name.clone());
            }
            fused.aliases = aliases.into_iter().collect();
        } else {
            nodes.push(node.clone());
        }
    }

    let remap = |id: &str| -> String {
        b_to_fused
            .get(id)
            .map(|t| t.to_string())
            .unwrap_or_else(|| id.to_string())
    };
    let mut edges: Vec<Edge> = a.edges().to_vec();
    for edge in b.edges() {
        edges.push(Edge {
            src: remap(&edge.src),
            dst: remap(&edge.dst),
            relation: edge.relation.clone(),
            weight: edge.weight,
        });
    }
    let vocab = a
        .relation_vocab()
        .iter()
        .chain(b.relation_vocab().iter())
        .cloned();
    KnowledgeGraph::from_parts(nodes, edges, vocab)
}

/// Undirected connected components, as sorted node-id sets.
pub fn connected_components(g: &KnowledgeGraph) -> Vec<BTreeSet<String>> {
    let mut adjacency: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for node in g.nodes() {
        adjacency.entry(&node.id).or_default();
    }
    for edge in g.edges() {
        adjacency.entry(&edge.src).or_default().push(&edge.dst);
        adjacency.entry(&edge.dst).or_default().push(&edge.src);
    }
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut components = Vec::new();
    for node in g.nodes() {
        if seen.contains(node.id.as_str()) {
            continue;
        }
        let mut component = BTreeSet::new();
        let mut stack = vec![node.id.as_str()];
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            component.insert(id.to_string());
            if let Some(neigh) = adjacency.get(id) {
                stack.extend(neigh.iter().copied());
            }
        }
        components.push(component);
    }
    components
}

/// Deduplicate parallel (src, dst, relation) edges and keep only the largest
/// connected component (ties break toward the component holding the smallest
/// node id).
pub fn prune_graph(g: &KnowledgeGraph) -> Result<KnowledgeGraph, KgError> {
    if g.node_count() == 0 {
        return Err(KgError::EmptyGraph);
    }
    let components = connected_components(g);
    let keep = components
        .iter()
        .max_by(|x, y| {
            x.len()
                .cmp(&y.len())
                // On size ties prefer the smaller minimum id, i.e. the
                // *greater* element under reversed id comparison.
                .then_with(|| y.iter().next().cmp(&x.iter().next()))
        })
        .expect("non-empty graph has a component")
        .clone();
    let nodes: Vec<Node> = g
        .nodes()
        .filter(|n| keep.contains(&n.id))
        .cloned()
        .collect();
    let mut edges: Vec<Edge> = Vec::new();
    let mut seen: BTreeSet<(String, String, String)> = BTreeSet::new();
    for edge in g.edges() {
        if !keep.contains(&edge.src) || !keep.contains(&edge.dst) {
            continue;
        }
        let key = (edge.src.clone(), edge.dst.clone(), edge.relation.clone());
        if seen.insert(key) {
            edges.push(edge.clone());
        }
    }
    KnowledgeGraph::from_parts(nodes, edges, g.relation_vocab().iter().cloned())
}

/// Aggregate counts for one graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes_by_kind: BTreeMap<NodeKind, usize>,
    pub total_nodes: usize,
    pub total_edges: usize,
    pub relation_count: usize,
}

pub fn graph_stats(g: &KnowledgeGraph) -> GraphStats {
    let mut by_kind: BTreeMap<NodeKind, usize> = BTreeMap::new();
    for node in g.nodes() {
        *by_kind.entry(node.kind).or_insert(0) += 1;
    }
    GraphStats {
        nodes_by_kind: by_kind,
        total_nodes: g.node_count(),
        total_edges: g.edge_count(),
        relation_count: g.relation_vocab().len(),
    }
}

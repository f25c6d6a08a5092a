//! Knowledge-constrained triplet synthesis and the three-stage quality
//! filter (consistency, visual dependency, sufficiency).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::KnowledgeGraph;
use crate::parallel;
use crate::prompts;
use crate::reasoning::{AnchoredEntity, ReasoningPath};
use crate::rewards::parse_structured;
use crate::services::{LlmClient, ServiceError};
use crate::text;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("no reasoning paths supplied")]
    NoPaths,
    #[error("generation failed: {0}")]
    GenerationFailed(ServiceError),
    #[error("unparseable generation response: {0}")]
    UnparseableResponse(String),
    #[error("judge failed: {0}")]
    JudgeFailed(String),
}

/// One synthesized sample: question, ground-truth answer, reasoning chain,
/// and the anchors/paths it was grounded on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub question: String,
    pub answer: String,
    pub chain: String,
    #[serde(rename = "entities")]
    pub anchored_entities: Vec<AnchoredEntity>,
    pub paths: Vec<ReasoningPath>,
    pub meta: TripletMeta,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TripletMeta {
    pub case_id: String,
    pub cancer_type: String,
    pub source: String,
    /// Path-entity names the generated chain failed to mention.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_entities: Vec<String>,
}

/// Outcome of the three filter checks for one triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub consistency: bool,
    pub visual_dependency: bool,
    pub sufficiency: bool,
    pub kept: bool,
    pub reasons: Vec<String>,
}

/// Which generation template to embed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptTemplate {
    Option1,
    Option2,
    Option3,
}

impl PromptTemplate {
    fn text(self) -> &'static str {
        match self {
            PromptTemplate::Option1 => prompts::GENERATION_OPTION1,
            PromptTemplate::Option2 => prompts::GENERATION_OPTION2,
            PromptTemplate::Option3 => prompts::GENERATION_OPTION3,
        }
    }
}

impl std::str::FromStr for PromptTemplate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "option1" | "1" => Ok(PromptTemplate::Option1),
            "option2" | "2" => Ok(PromptTemplate::Option2),
            "option3" | "3" => Ok(PromptTemplate::Option3),
            other => Err(format!("unknown template {other:?}")),
        }
    }
}

fn display_name(g: &KnowledgeGraph, id: &str) -> String {
    g.node(id).map(|n| n.name.clone()).unwrap_or_else(|| id.to_string())
}

/// Serialized form of one path inside a generation prompt:
/// `- (Role, cost C) [Name] --relation--> [Name] ...`.
pub fn render_path(g: &KnowledgeGraph, path: &ReasoningPath) -> String {
    let mut line = format!("- ({}, cost {:.2}) ", path.role.as_str(), path.cost);
    for (i, node) in path.nodes.iter().enumerate() {
        if i > 0 {
            line.push_str(&format!(" --{}--> ", path.relations[i - 1]));
        }
        line.push_str(&format!("[{}]", display_name(g, node)));
    }
    line
}

/// Assemble a knowledge-constrained generation prompt: the chosen template
/// verbatim, the serialized path section (every node and relation), the
/// anchored entities, and the question slot.
pub fn build_generation_prompt(
    g: &KnowledgeGraph,
    paths: &[ReasoningPath],
    entities: &[AnchoredEntity],
    template: PromptTemplate,
    question: &str,
) -> Result<String, SynthesisError> {
    if paths.is_empty() {
        return Err(SynthesisError::NoPaths);
    }
    let mut prompt = String::from(template.text());
    prompt.push_str("\n\n");
    prompt.push_str(prompts::KNOWLEDGE_HEADER);
    prompt.push('\n');
    for path in paths {
        prompt.push_str(&render_path(g, path));
        prompt.push('\n');
    }
    if !entities.is_empty() {
        prompt.push('\n');
        prompt.push_str(prompts::ENTITY_HEADER);
        prompt.push('\n');
        for entity in entities {
            let anchor = match &entity.node_id {
                Some(id) => format!("{} (anchored to {id})", entity.mention.text),
                None => format!("{} (unanchored)", entity.mention.text),
            };
            prompt.push_str(&format!("- {}: {anchor}\n", entity.mention.label));
        }
    }
    prompt.push_str(&format!("\nQuestion: {question}\n"));
    Ok(prompt)
}

/// The question slot of a generation prompt built by
/// [`build_generation_prompt`].
pub fn question_from_prompt(prompt: &str) -> Option<String> {
    prompt
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix("Question: "))
        .map(|q| q.trim().to_string())
}

/// Strip a template section label ("Final Answer:" etc.) from the start of a
/// tagged block's content.
fn strip_label(content: &str, label: &str) -> String {
    let trimmed = content.trim();
    if trimmed.len() >= label.len() && trimmed[..label.len()].eq_ignore_ascii_case(label) {
        trimmed[label.len()..].trim().to_string()
    } else {
        trimmed.to_string()
    }
}

/// Send the prompt through the generation client and parse the tagged
/// response into a triplet. The chain is the observe and think sections
/// joined; the answer comes from the answer section; the question is read
/// back from the prompt's question slot. Path entities missing from the
/// chain are recorded in `meta.missing_entities`.
pub fn synthesize_triplet(
    prompt: &str,
    generator: &LlmClient,
    entities: &[AnchoredEntity],
    paths: &[ReasoningPath],
    meta: TripletMeta,
) -> Result<Triplet, SynthesisError> {
    let reply = generator
        .request(prompt)
        .map_err(SynthesisError::GenerationFailed)?;
    let parsed = parse_structured(&reply);
    if !parsed.well_formed {
        return Err(SynthesisError::UnparseableResponse(reply));
    }
    let observe = strip_label(&parsed.observe, "Histopathological Findings:");
    let think = strip_label(&parsed.think, "Clinical Reasoning:");
    let answer = strip_label(&parsed.answer, "Final Answer:");
    let chain = format!("{observe} {think}");
    let question = question_from_prompt(prompt).unwrap_or_default();

    let path_nodes: Vec<&str> = paths
        .iter()
        .flat_map(|p| p.nodes.iter().map(|n| n.as_str()))
        .collect();
    let mut missing = Vec::new();
    for entity in entities {
        let on_path = entity
            .node_id
            .as_deref()
            .map(|id| path_nodes.contains(&id))
            .unwrap_or(false);
        if on_path && !text::contains_normalized(&chain, &entity.mention.text) {
            missing.push(entity.mention.text.clone());
        }
    }
    let mut meta = meta;
    meta.missing_entities = missing;
    Ok(Triplet {
        question,
        answer,
        chain,
        anchored_entities: entities.to_vec(),
        paths: paths.to_vec(),
        meta,
    })
}

fn require_eligible(t: &Triplet) -> Result<(), SynthesisError> {
    if t.question.trim().is_empty() || t.answer.trim().is_empty() || t.chain.trim().is_empty() {
        return Err(SynthesisError::JudgeFailed(
            "triplet is not filter-eligible: empty question, answer, or chain".to_string(),
        ));
    }
    Ok(())
}

/// Logical-consistency check: false iff the judge reports that the chain's
/// conclusion contradicts the answer.
pub fn check_consistency(t: &Triplet, judge: &LlmClient) -> Result<bool, SynthesisError> {
    require_eligible(t)?;
    let reply = judge
        .request(&prompts::consistency_prompt(&t.chain, &t.answer))
        .map_err(|e| SynthesisError::JudgeFailed(e.to_string()))?;
    Ok(!reply.trim().to_uppercase().starts_with("YES"))
}

/// Visual-dependency check: the judge predicts the answer blind from the
/// question alone; false (discard) iff that prediction already aligns with
/// the answer, i.e. the question leaks it.
pub fn check_visual_dependency(t: &Triplet, judge: &LlmClient) -> Result<bool, SynthesisError> {
    require_eligible(t)?;
    let prediction = judge
        .request(&prompts::blind_prediction_prompt(&t.question))
        .map_err(|e| SynthesisError::JudgeFailed(e.to_string()))?;
    Ok(!text::contains_normalized(&prediction, &t.answer))
}

/// Sufficiency check: true iff an answer inferred from the chain alone
/// aligns with the ground-truth answer.
pub fn check_sufficiency(t: &Triplet, judge: &LlmClient) -> Result<bool, SynthesisError> {
    require_eligible(t)?;
    let inferred = judge
        .request(&prompts::sufficiency_prompt(&t.chain))
        .map_err(|e| SynthesisError::JudgeFailed(e.to_string()))?;
    Ok(text::contains_normalized(&inferred, &t.answer))
}

/// Result of filtering a batch: kept triplets plus dropped ones with their
/// verdicts, both in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<Triplet>,
    pub dropped: Vec<(Triplet, FilterVerdict)>,
}

fn verdict_for(t: &Triplet, judge: &LlmClient) -> FilterVerdict {
    let mut reasons = Vec::new();
    let mut run = |name: &str, result: Result<bool, SynthesisError>| match result {
        Ok(true) => true,
        Ok(false) => {
            reasons.push(name.to_string());
            false
        }
        Err(e) => {
            reasons.push(format!("{name}: {e}"));
            false
        }
    };
    let consistency = run("consistency", check_consistency(t, judge));
    let visual_dependency = run("visual_dependency", check_visual_dependency(t, judge));
    let sufficiency = run("sufficiency", check_sufficiency(t, judge));
    FilterVerdict {
        consistency,
        visual_dependency,
        sufficiency,
        kept: consistency && visual_dependency && sufficiency,
        reasons,
    }
}

/// Apply all three checks to every triplet. A failed judge call drops only
/// that item, with the failure recorded in its verdict reasons. Items are
/// evaluated with up to `jobs` concurrent workers; output order always
/// equals input order.
pub fn filter_corpus(ts: Vec<Triplet>, judge: &LlmClient, jobs: usize) -> FilterOutcome {
    let verdicts = parallel::ordered_map(&ts, jobs, |t| verdict_for(t, judge));
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (t, v) in ts.into_iter().zip(verdicts) {
        if v.kept {
            kept.push(t);
        } else {
            dropped.push((t, v));
        }
    }
    FilterOutcome { kept, dropped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{KnowledgeGraph, Node, NodeKind, NodeSource};
    use crate::reasoning::{AnchorMethod, EntityMention, PathRole, SchemaKind};
    use crate::services::Role;

    fn tiny_graph() -> KnowledgeGraph {
        let nodes = vec![
            Node {
                id: "bm".into(),
                name: "Basement Membrane".into(),
                kind: NodeKind::PhysicalEntity,
                source: NodeSource::GraphA,
                external_ids: Default::default(),
                aliases: vec![],
            },
            Node {
                id: "scc".into(),
                name: "Squamous Cell Carcinoma".into(),
                kind: NodeKind::Diagnosis,
                source: NodeSource::GraphA,
                external_ids: Default::default(),
                aliases: vec![],
            },
        ];
        KnowledgeGraph::from_parts(nodes, vec![], []).unwrap()
    }

    fn support_path() -> ReasoningPath {
        ReasoningPath {
            nodes: vec!["bm".into(), "scc".into()],
            relations: vec!["keyFeatureOf".into()],
            role: PathRole::Support,
            cost: 1.0,
        }
    }

    fn anchored(label: &str, textv: &str, node: &str, kind: SchemaKind) -> AnchoredEntity {
        AnchoredEntity {
            mention: EntityMention {
                label: label.into(),
                text: textv.into(),
                schema_kind: kind,
            },
            node_id: Some(node.into()),
            method: AnchorMethod::Exact,
            score: 1.0,
        }
    }

    fn triplet(question: &str, answer: &str, chain: &str) -> Triplet {
        Triplet {
            question: question.into(),
            answer: answer.into(),
            chain: chain.into(),
            anchored_entities: vec![],
            paths: vec![],
            meta: TripletMeta::default(),
        }
    }

    #[test]
    fn prompt_embeds_template_paths_and_question() {
        let g = tiny_graph();
        let prompt = build_generation_prompt(
            &g,
            &[support_path()],
            &[anchored("E1", "Basement membrane", "bm", SchemaKind::PhysicalEntity)],
            PromptTemplate::Option1,
            "What is the most likely diagnosis?",
        )
        .unwrap();
        assert!(prompt.contains("Histopathological Findings"));
        assert!(prompt.contains("[Basement Membrane] --keyFeatureOf--> [Squamous Cell Carcinoma]"));
        assert!(prompt.ends_with("Question: What is the most likely diagnosis?\n"));
    }

    #[test]
    fn option3_contract_is_single_line() {
        let g = tiny_graph();
        let prompt =
            build_generation_prompt(&g, &[support_path()], &[], PromptTemplate::Option3, "q?")
                .unwrap();
        assert!(prompt
            .contains("<observe> ... </observe> <think> ... </think> <answer> ... </answer>"));
    }

    #[test]
    fn empty_path_list_is_rejected() {
        let g = tiny_graph();
        assert!(matches!(
            build_generation_prompt(&g, &[], &[], PromptTemplate::Option1, "q?"),
            Err(SynthesisError::NoPaths)
        ));
    }

    #[test]
    fn mock_generation_produces_full_triplet() {
        let g = tiny_graph();
        let entities = vec![anchored("E1", "Basement Membrane", "bm", SchemaKind::PhysicalEntity)];
        let paths = vec![support_path()];
        let prompt = build_generation_prompt(
            &g,
            &paths,
            &entities,
            PromptTemplate::Option1,
            "What is the most likely diagnosis?",
        )
        .unwrap();
        let generator = LlmClient::mock(Role::Generator);
        let t = synthesize_triplet(&prompt, &generator, &entities, &paths, TripletMeta::default())
            .unwrap();
        assert_eq!(t.question, "What is the most likely diagnosis?");
        assert!(!t.answer.is_empty());
        assert!(!t.chain.is_empty());
        assert!(t.chain.to_lowercase().contains("squamous cell carcinoma"));
        assert!(t.meta.missing_entities.is_empty());
    }

    #[test]
    fn fixed_reasoning_response_lands_in_the_chain() {
        let reasoning = "Histologically, the lesion is localized within the Main Bronchus. \
                         A defining pathological event is observed: invasion through the \
                         Basement Membrane. Therefore, the final diagnosis answer is \
                         squamous cell carcinoma.";
        let generator = LlmClient::mock_with(
            Role::Generator,
            std::sync::Arc::new(crate::services::FixedResponder(format!(
                "<observe> Keratinizing nests are present. </observe> \
                 <think> {reasoning} </think> \
                 <answer> Squamous cell carcinoma </answer>"
            ))),
            1,
        );
        let t = synthesize_triplet(
            "Question: What is the diagnosis?\n",
            &generator,
            &[],
            &[],
            TripletMeta::default(),
        )
        .unwrap();
        assert!(t.chain.contains("squamous cell carcinoma"));
        assert_eq!(t.answer, "Squamous cell carcinoma");
    }

    #[test]
    fn response_missing_answer_tag_is_unparseable() {
        let generator = LlmClient::mock_with(
            Role::Generator,
            std::sync::Arc::new(crate::services::FixedResponder(
                "<observe> a </observe> <think> b </think>".to_string(),
            )),
            1,
        );
        let err = synthesize_triplet("Question: q?\n", &generator, &[], &[], TripletMeta::default())
            .unwrap_err();
        assert!(matches!(err, SynthesisError::UnparseableResponse(_)));
    }

    #[test]
    fn consistency_check_compares_conclusion_with_answer() {
        let judge = LlmClient::mock(Role::Judge);
        let good = triplet(
            "What is it?",
            "Squamous cell carcinoma",
            "Invasion is seen. The diagnosis is squamous cell carcinoma.",
        );
        assert!(check_consistency(&good, &judge).unwrap());
        let bad = triplet(
            "What is it?",
            "Squamous cell carcinoma",
            "Glands everywhere. The diagnosis is adenocarcinoma.",
        );
        assert!(!check_consistency(&bad, &judge).unwrap());
    }

    #[test]
    fn empty_chain_surfaces_as_judge_failure() {
        let judge = LlmClient::mock(Role::Judge);
        let t = triplet("q", "a", "   ");
        assert!(matches!(
            check_consistency(&t, &judge),
            Err(SynthesisError::JudgeFailed(_))
        ));
    }

    #[test]
    fn visual_dependency_flags_leaky_questions() {
        let judge = LlmClient::mock(Role::Judge);
        let leaky = triplet(
            "What is the diagnosis, given it is squamous cell carcinoma?",
            "squamous cell carcinoma",
            "The chain concludes squamous cell carcinoma.",
        );
        assert!(!check_visual_dependency(&leaky, &judge).unwrap());
        let clean = triplet(
            "What is the most likely diagnosis?",
            "squamous cell carcinoma",
            "The chain concludes squamous cell carcinoma.",
        );
        assert!(check_visual_dependency(&clean, &judge).unwrap());
        // Deterministic across repeated calls.
        assert!(check_visual_dependency(&clean, &judge).unwrap());
    }

    #[test]
    fn sufficiency_requires_answer_in_chain() {
        let judge = LlmClient::mock(Role::Judge);
        let good = triplet(
            "q?",
            "adenocarcinoma",
            "Glandular structures manifest. This is adenocarcinoma, not otherwise specified.",
        );
        assert!(check_sufficiency(&good, &judge).unwrap());
        let truncated = triplet("q?", "adenocarcinoma", "Glandular structures are noted.");
        assert!(!check_sufficiency(&truncated, &judge).unwrap());
    }

    #[test]
    fn filter_batch_partitions_in_order_with_reasons() {
        let judge = LlmClient::mock(Role::Judge);
        let ts = vec![
            triplet("q one?", "benign nevus", "Uniform cells. This is a benign nevus."),
            triplet(
                "Is this a benign nevus?",
                "benign nevus",
                "Uniform cells. This is a benign nevus.",
            ),
            triplet("q three?", "melanoma", "Atypia everywhere. This is melanoma."),
        ];
        let outcome = filter_corpus(ts, &judge, 1);
        assert_eq!(outcome.kept.len(), 2);
        assert_eq!(outcome.dropped.len(), 1);
        let (dropped, verdict) = &outcome.dropped[0];
        assert_eq!(dropped.question, "Is this a benign nevus?");
        assert_eq!(verdict.reasons, vec!["visual_dependency"]);
        assert!(!verdict.kept);
        assert_eq!(outcome.kept[0].question, "q one?");
        assert_eq!(outcome.kept[1].question, "q three?");
    }

    #[test]
    fn filter_of_empty_batch_is_empty() {
        let judge = LlmClient::mock(Role::Judge);
        let outcome = filter_corpus(vec![], &judge, 4);
        assert!(outcome.kept.is_empty());
        assert!(outcome.dropped.is_empty());
    }

    #[test]
    fn mixed_failure_records_both_reasons() {
        let judge = LlmClient::mock(Role::Judge);
        // Answer appears nowhere in the chain: consistency and sufficiency
        // both fail, visual dependency passes.
        let t = triplet("q?", "melanoma", "Uniform cells. This is a benign nevus.");
        let outcome = filter_corpus(vec![t], &judge, 1);
        let (_, verdict) = &outcome.dropped[0];
        assert_eq!(verdict.reasons, vec!["consistency", "sufficiency"]);
        assert!(!verdict.consistency);
        assert!(verdict.visual_dependency);
        assert!(!verdict.sufficiency);
    }
}

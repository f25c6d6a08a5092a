//! Property tests for the invariants that hold on arbitrary inputs, not
//! just fixtures.

use std::collections::{BTreeMap, BTreeSet};

use proptest::collection::vec;
use proptest::prelude::*;

use pathforge::corpus::{augment_trajectories, emit_corpus, load_corpus, ReasoningChain};
use pathforge::grpo::{
    clipped_surrogate, group_advantages, grpo_loss, kl_penalty, Group, GroupSample, GrpoConfig,
};
use pathforge::kg::{
    emit_graph, parse_graph, Edge, KnowledgeGraph, Node, NodeKind, NodeSource,
};
use pathforge::reasoning::{
    anchor_mentions, shortest_path, AnchorMethod, EntityMention, PriorityMap, SchemaKind,
};
use pathforge::rewards::{parse_structured, render_structured, StructuredResponse};
use pathforge::services::MockEmbedder;
use pathforge::synthesis::{filter_corpus, Triplet, TripletMeta};
use pathforge::services::{LlmClient, Role};

fn arb_kind() -> impl Strategy<Value = NodeKind> {
    prop_oneof![
        Just(NodeKind::PhysicalEntity),
        Just(NodeKind::Phenotype),
        Just(NodeKind::Diagnosis),
        Just(NodeKind::Disease),
        Just(NodeKind::GeneProtein),
        Just(NodeKind::ClinicalPhenotype),
    ]
}

prop_compose! {
    fn arb_graph()(
        n in 1usize..7,
        kinds in vec(arb_kind(), 7),
        names in vec("[a-z]{2,8}( [a-z]{2,8})?", 7),
        exts in vec(proptest::option::of("MONDO:[0-9]{4}"), 7),
        edge_picks in vec((0usize..7, 0usize..7, 0u8..3, 0.1f64..3.0), 0..14),
    ) -> KnowledgeGraph {
        let relations = ["associated_with", "hasSupportEvidence", "indicated_by"];
        let nodes: Vec<Node> = (0..n).map(|i| Node {
            id: format!("n{i}"),
            name: names[i].clone(),
            kind: kinds[i],
            source: NodeSource::GraphA,
            external_ids: exts[i].iter().cloned().collect::<BTreeSet<_>>(),
            aliases: Vec::new(),
        }).collect();
        let edges: Vec<Edge> = edge_picks.iter()
            .filter(|(s, d, _, _)| *s < n && *d < n)
            .map(|(s, d, r, w)| Edge {
                src: format!("n{s}"),
                dst: format!("n{d}"),
                relation: relations[*r as usize].to_string(),
                weight: *w,
            })
            .collect();
        KnowledgeGraph::from_parts(nodes, edges, []).unwrap()
    }
}

proptest! {
    // load(emit(g)) == g, structural equality.
    #[test]
    fn graph_round_trip(g in arb_graph()) {
        let emitted = emit_graph(&g);
        let loaded = parse_graph(&emitted).unwrap();
        prop_assert_eq!(loaded, g);
    }

    // Lowering a priority multiplier never increases any returned path cost.
    #[test]
    fn path_cost_monotone_in_priority(g in arb_graph(), discount in 0.1f64..1.0) {
        let base = PriorityMap(BTreeMap::new());
        let mut discounted_map = BTreeMap::new();
        discounted_map.insert("hasSupportEvidence".to_string(), discount);
        let discounted = PriorityMap(discounted_map);
        let ids: Vec<String> = g.nodes().map(|n| n.id.clone()).collect();
        for s in &ids {
            for e in &ids {
                let before = shortest_path(&g, s, e, &base).unwrap();
                let after = shortest_path(&g, s, e, &discounted).unwrap();
                match (before, after) {
                    (Some(b), Some(a)) => prop_assert!(a.cost <= b.cost + 1e-12),
                    (None, None) => {}
                    (b, a) => prop_assert!(false, "reachability changed: {:?} vs {:?}", b, a),
                }
            }
        }
    }

    // Anchoring a mention that is exactly a node name always lands Exact.
    #[test]
    fn anchoring_exact_idempotence(g in arb_graph()) {
        let embedder = MockEmbedder::new();
        for node in g.nodes() {
            let schema_kind = match node.kind {
                NodeKind::PhysicalEntity | NodeKind::GeneProtein => SchemaKind::PhysicalEntity,
                NodeKind::Phenotype | NodeKind::ClinicalPhenotype => SchemaKind::Phenotype,
                NodeKind::Diagnosis | NodeKind::Disease => SchemaKind::Diagnosis,
            };
            let mention = EntityMention {
                label: "M1".to_string(),
                text: node.name.clone(),
                schema_kind,
            };
            let anchored = anchor_mentions(&[mention], &g, &embedder, 0.85).unwrap();
            prop_assert_eq!(anchored[0].method, AnchorMethod::Exact);
            prop_assert_eq!(anchored[0].score, 1.0);
        }
    }

    // |augment(chain)| == L and every sample reconstructs the chain.
    #[test]
    fn augmentation_counts_and_reconstruction(
        steps in vec("[a-z]{1,12}( [a-z]{1,12}){0,3}", 1..13),
        answer in "[a-z]{1,12}",
    ) {
        let chain = ReasoningChain { steps: steps.clone(), answer };
        let family = augment_trajectories(&chain, "c", "q");
        prop_assert_eq!(family.len(), steps.len());
        let joined = steps.join(" ");
        for sample in &family {
            prop_assert_eq!(sample.reconstruct(), joined.clone());
        }
    }

    // Corpus emit/load is an identity on the sample list.
    #[test]
    fn corpus_emit_load_identity(
        steps in vec("[a-z]{1,10}", 1..7),
        answer in "[a-z]{1,10}",
    ) {
        let chain = ReasoningChain { steps, answer };
        let family = augment_trajectories(&chain, "case", "question");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let written = emit_corpus(&family, &path).unwrap();
        prop_assert_eq!(written, family.len());
        let loaded = load_corpus(&path).unwrap();
        prop_assert_eq!(loaded, family);
    }

    // parse(render(r)) == r for well-formed responses.
    #[test]
    fn structured_round_trip(
        observe in "[a-zA-Z,. ]{1,40}",
        think in "[a-zA-Z,. ]{1,40}",
        answer in "[a-zA-Z,. ]{1,40}",
    ) {
        prop_assume!(!observe.trim().is_empty());
        prop_assume!(!think.trim().is_empty());
        prop_assume!(!answer.trim().is_empty());
        let r = StructuredResponse {
            observe: observe.trim().to_string(),
            think: think.trim().to_string(),
            answer: answer.trim().to_string(),
            well_formed: true,
        };
        prop_assert_eq!(parse_structured(&render_structured(&r)), r);
    }

    // Advantages are invariant under affine reward maps R -> cR + d, c > 0.
    #[test]
    fn advantages_affine_invariant(
        rewards in vec(-5.0f64..5.0, 2..12),
        c in 0.1f64..5.0,
        d in -5.0f64..5.0,
    ) {
        let base = group_advantages(&rewards, 1e-8).unwrap();
        let mapped: Vec<f64> = rewards.iter().map(|r| c * r + d).collect();
        let transformed = group_advantages(&mapped, 1e-8).unwrap();
        for (a, b) in base.iter().zip(&transformed) {
            prop_assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
        }
    }

    // min dominance: the clipped surrogate never exceeds r * A.
    #[test]
    fn clipped_surrogate_min_dominance(
        logp_new in -4.0f64..0.0,
        logp_old in -4.0f64..0.0,
        advantage in -3.0f64..3.0,
        eps in 0.01f64..0.5,
    ) {
        let value = clipped_surrogate(logp_new, logp_old, advantage, eps).unwrap();
        let ratio = (logp_new - logp_old).exp();
        prop_assert!(value <= ratio * advantage + 1e-12);
    }

    // KL estimator is nonnegative and zero only at agreement.
    #[test]
    fn kl_nonnegative(logp_new in -6.0f64..0.0, logp_ref in -6.0f64..0.0) {
        let v = kl_penalty(logp_new, logp_ref).unwrap();
        prop_assert!(v >= 0.0);
        if (logp_new - logp_ref).abs() > 1e-9 {
            prop_assert!(v > 0.0);
        }
    }

    // Group loss is invariant under permutations of the group members.
    #[test]
    fn grpo_loss_permutation_invariant(
        samples in vec((-2.0f64..4.0, -3.0f64..0.0, -3.0f64..0.0, -3.0f64..0.0), 4..9),
        rotation in 0usize..8,
    ) {
        let config = GrpoConfig { group_size: samples.len(), ..GrpoConfig::default() };
        let group = Group {
            samples: samples.iter().map(|(r, ln, lo, lr)| GroupSample {
                reward: *r, logp_new: *ln, logp_old: *lo, logp_ref: *lr,
            }).collect(),
        };
        let mut rotated = group.samples.clone();
        let shift = rotation % rotated.len();
        rotated.rotate_left(shift);
        let base = grpo_loss(&group, &config).unwrap();
        let permuted = grpo_loss(&Group { samples: rotated }, &config).unwrap();
        prop_assert!((base - permuted).abs() < 1e-9, "{} vs {}", base, permuted);
    }

    // filter_corpus partitions its input without loss, duplication, or
    // reordering, and kept equals the conjunction of the three flags.
    #[test]
    fn filter_partitions_in_order(specs in vec((any::<bool>(), any::<bool>()), 0..10)) {
        let judge = LlmClient::mock(Role::Judge);
        let triplets: Vec<Triplet> = specs.iter().enumerate().map(|(i, (leak, sufficient))| {
            let answer = format!("diagnosis{i}");
            let question = if *leak {
                format!("Is case {i} {answer}?")
            } else {
                format!("What is case {i}?")
            };
            let chain = if *sufficient {
                format!("Findings reviewed. The conclusion is {answer}.")
            } else {
                "Findings reviewed. The conclusion is elsewhere.".to_string()
            };
            Triplet {
                question,
                answer,
                chain,
                anchored_entities: vec![],
                paths: vec![],
                meta: TripletMeta { case_id: format!("t{i}"), ..TripletMeta::default() },
            }
        }).collect();
        let expect_kept: Vec<&str> = specs.iter().enumerate()
            .filter(|(_, (leak, sufficient))| !leak && *sufficient)
            .map(|(i, _)| Box::leak(format!("t{i}").into_boxed_str()) as &str)
            .collect();
        let outcome = filter_corpus(triplets, &judge, 2);
        prop_assert_eq!(outcome.kept.len() + outcome.dropped.len(), specs.len());
        let kept_ids: Vec<&str> = outcome.kept.iter().map(|t| t.meta.case_id.as_str()).collect();
        prop_assert_eq!(kept_ids, expect_kept);
        for (_, v) in &outcome.dropped {
            prop_assert_eq!(v.kept, v.consistency && v.visual_dependency && v.sufficiency);
            prop_assert!(!v.kept);
        }
    }
}

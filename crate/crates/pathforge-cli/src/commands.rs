//! Subcommand implementations: file IO at the edges, library calls inside.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use pathforge::config::PipelineConfig;
use pathforge::corpus;
use pathforge::evalmetrics::{self, JudgeKind, MetricReport};
use pathforge::grpo::{self, ToyEnv};
use pathforge::kg;
use pathforge::parallel;
use pathforge::reasoning::{self, AnchoredEntity, ReasoningPath};
use pathforge::rewards::{self, EntitySet};
use pathforge::services::{ClientConfig, Embedder, LlmClient, MockEmbedder, Role, ServiceError};
use pathforge::synthesis::{self, PromptTemplate, Triplet, TripletMeta};

/// Classify an error chain: service failures exit with code 2.
pub fn is_service_failure(err: &anyhow::Error) -> bool {
    for cause in err.chain() {
        if cause.downcast_ref::<ServiceError>().is_some() {
            return true;
        }
        if let Some(e) = cause.downcast_ref::<synthesis::SynthesisError>() {
            if matches!(
                e,
                synthesis::SynthesisError::GenerationFailed(_)
                    | synthesis::SynthesisError::JudgeFailed(_)
            ) {
                return true;
            }
        }
        if let Some(e) = cause.downcast_ref::<rewards::RewardError>() {
            if matches!(
                e,
                rewards::RewardError::JudgeFailed(_) | rewards::RewardError::JudgeOutOfRange(_)
            ) {
                return true;
            }
        }
        if let Some(e) = cause.downcast_ref::<evalmetrics::EvalError>() {
            if matches!(
                e,
                evalmetrics::EvalError::JudgeFailed(_) | evalmetrics::EvalError::JudgeOutOfRange(_)
            ) {
                return true;
            }
        }
        if let Some(kg::KgError::Service(_)) = cause.downcast_ref::<kg::KgError>() {
            return true;
        }
        if let Some(reasoning::ReasoningError::Service(_)) =
            cause.downcast_ref::<reasoning::ReasoningError>()
        {
            return true;
        }
    }
    false
}


fn resolve_graph<'a>(flag: Option<&'a Path>, config_path: &'a Option<std::path::PathBuf>, what: &str) -> anyhow::Result<&'a Path> {
    flag.or(config_path.as_deref()).ok_or_else(|| {
        anyhow::anyhow!("no graph file given: pass --{what} or set graph.{what} in the config")
    })
}

fn embedder(_config: &PipelineConfig) -> MockEmbedder {
    // The embedding provider ships with its deterministic hashed
    // implementation; live LLM roles are the configurable endpoints.
    MockEmbedder::new()
}

fn client(config: &PipelineConfig, role: Role, settings: &ClientConfig) -> LlmClient {
    if config.mock || settings.endpoint.is_empty() {
        LlmClient::mock(role)
    } else {
        LlmClient::live(role, settings.clone())
    }
}

fn judge(config: &PipelineConfig) -> LlmClient {
    client(config, Role::Judge, &config.services.judge)
}

fn generator(config: &PipelineConfig) -> LlmClient {
    client(config, Role::Generator, &config.services.generator)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let reader = BufReader::new(
        std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?,
    );
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: T = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push(value);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> anyhow::Result<()> {
    let mut file = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))?;
    for item in items {
        writeln!(file, "{}", serde_json::to_string(item)?)?;
    }
    Ok(())
}

pub fn kg_build(
    config: &PipelineConfig,
    graph_a: Option<&Path>,
    graph_b: Option<&Path>,
    out: &Path,
    threshold: Option<f64>,
) -> anyhow::Result<()> {
    let threshold = threshold.unwrap_or(config.align_threshold);
    let a = kg::load_graph(resolve_graph(graph_a, &config.graph.a, "graph-a")?)?;
    let b = kg::load_graph(resolve_graph(graph_b, &config.graph.b, "graph-b")?)?;
    let embedder = embedder(config);
    let alignment = kg::align_nodes(&a, &b, &embedder, threshold)?;
    let fused = kg::fuse_graphs(&a, &b, &alignment)?;
    kg::save_graph(&fused, out)?;
    println!(
        "fused {} + {} nodes into {} ({} aligned pairs)",
        a.node_count(),
        b.node_count(),
        fused.node_count(),
        alignment.pairs.len()
    );
    Ok(())
}

pub fn kg_stats(graph: &Path) -> anyhow::Result<()> {
    let g = kg::load_graph(graph)?;
    let stats = kg::graph_stats(&g);
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

pub fn kg_prune(graph: &Path, out: &Path) -> anyhow::Result<()> {
    let g = kg::load_graph(graph)?;
    let pruned = kg::prune_graph(&g)?;
    kg::save_graph(&pruned, out)?;
    println!(
        "pruned {} -> {} nodes, {} -> {} edges",
        g.node_count(),
        pruned.node_count(),
        g.edge_count(),
        pruned.edge_count()
    );
    Ok(())
}

pub fn anchor(
    config: &PipelineConfig,
    graph: Option<&Path>,
    extraction: &Path,
    out: &Path,
    threshold: Option<f64>,
) -> anyhow::Result<()> {
    let threshold = threshold.unwrap_or(config.anchor_threshold);
    let g = kg::load_graph(resolve_graph(graph, &config.graph.fused, "graph")?)?;
    let doc = std::fs::read_to_string(extraction)?;
    let mentions = reasoning::parse_extraction(&doc)?;
    let embedder = embedder(config);
    let anchored = reasoning::anchor_mentions(&mentions, &g, &embedder, threshold)?;
    write_jsonl(out, &anchored)?;
    let hit = anchored.iter().filter(|a| a.node_id.is_some()).count();
    println!("anchored {hit}/{} mentions", anchored.len());
    Ok(())
}

pub fn paths(
    config: &PipelineConfig,
    graph: Option<&Path>,
    anchored: &Path,
    out: &Path,
    max_cost: Option<f64>,
) -> anyhow::Result<()> {
    let max_cost = max_cost.unwrap_or(config.max_path_cost);
    let g = kg::load_graph(resolve_graph(graph, &config.graph.fused, "graph")?)?;
    let anchored: Vec<AnchoredEntity> = read_jsonl(anchored)?;
    let starts = reasoning::finding_anchor_ids(&anchored);
    let ends = reasoning::diagnosis_anchor_ids(&anchored);
    let paths = reasoning::retrieve_paths(&g, &starts, &ends, &config.priority_map(), max_cost)?;
    write_jsonl(out, &paths)?;
    println!("retrieved {} paths for {} starts x {} ends", paths.len(), starts.len(), ends.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn synth(
    config: &PipelineConfig,
    graph: Option<&Path>,
    anchored: &Path,
    paths: &Path,
    out: &Path,
    question: &str,
    template: &str,
    case_id: &str,
    cancer_type: &str,
    source: &str,
) -> anyhow::Result<()> {
    let template: PromptTemplate = template.parse().map_err(anyhow::Error::msg)?;
    let g = kg::load_graph(resolve_graph(graph, &config.graph.fused, "graph")?)?;
    let anchored: Vec<AnchoredEntity> = read_jsonl(anchored)?;
    let paths: Vec<ReasoningPath> = read_jsonl(paths)?;
    let prompt = synthesis::build_generation_prompt(&g, &paths, &anchored, template, question)?;
    let generator = generator(config);
    let meta = TripletMeta {
        case_id: case_id.to_string(),
        cancer_type: cancer_type.to_string(),
        source: source.to_string(),
        missing_entities: Vec::new(),
    };
    let triplet = synthesis::synthesize_triplet(&prompt, &generator, &anchored, &paths, meta)?;
    write_jsonl(out, &[triplet])?;
    println!("synthesized 1 triplet");
    Ok(())
}

#[derive(Serialize)]
struct DroppedRecord<'a> {
    triplet: &'a Triplet,
    verdict: &'a synthesis::FilterVerdict,
}

pub fn filter(
    config: &PipelineConfig,
    input: &Path,
    kept_path: &Path,
    dropped_path: &Path,
) -> anyhow::Result<()> {
    let triplets: Vec<Triplet> = read_jsonl(input)?;
    let judge = judge(config);
    let outcome = synthesis::filter_corpus(triplets, &judge, config.jobs);
    write_jsonl(kept_path, &outcome.kept)?;
    let dropped: Vec<DroppedRecord> = outcome
        .dropped
        .iter()
        .map(|(t, v)| DroppedRecord {
            triplet: t,
            verdict: v,
        })
        .collect();
    write_jsonl(dropped_path, &dropped)?;
    println!("kept {}, dropped {}", outcome.kept.len(), outcome.dropped.len());
    Ok(())
}

pub fn augment(
    config: &PipelineConfig,
    input: &Path,
    out: &Path,
    sample_k: Option<usize>,
) -> anyhow::Result<()> {
    let triplets: Vec<Triplet> = read_jsonl(input)?;
    let mut samples = Vec::new();
    for triplet in &triplets {
        let chain = corpus::segment_chain(&triplet.chain)?;
        let family = match sample_k {
            Some(k) => corpus::sample_trajectories(
                &chain,
                &triplet.meta.case_id,
                &triplet.question,
                k,
                config.seed,
            ),
            None => corpus::augment_trajectories(&chain, &triplet.meta.case_id, &triplet.question),
        };
        samples.extend(family);
    }
    let written = corpus::emit_corpus(&samples, out)?;
    println!("emitted {written} samples from {} chains", triplets.len());
    Ok(())
}

#[derive(Deserialize)]
struct PredRecord {
    response: String,
}

#[derive(Deserialize)]
struct GtRecord {
    answer: String,
    #[serde(default)]
    entities: Vec<String>,
}

pub fn reward(
    config: &PipelineConfig,
    pred: &Path,
    gt: &Path,
    graph: Option<&Path>,
    out: &Path,
    alpha: Option<f64>,
    beta: Option<f64>,
) -> anyhow::Result<()> {
    let alpha = alpha.unwrap_or(config.reward.alpha);
    let beta = beta.unwrap_or(config.reward.beta);
    let epsilon = config.reward.epsilon;
    let preds: Vec<PredRecord> = read_jsonl(pred)?;
    let gts: Vec<GtRecord> = read_jsonl(gt)?;
    anyhow::ensure!(
        preds.len() == gts.len(),
        "prediction/ground-truth length mismatch: {} vs {}",
        preds.len(),
        gts.len()
    );
    let g = kg::load_graph(resolve_graph(graph, &config.graph.fused, "graph")?)?;
    let embedder = embedder(config);
    let judge = judge(config);
    let pairs: Vec<(PredRecord, GtRecord)> = preds.into_iter().zip(gts).collect();
    let results = parallel::ordered_map(&pairs, config.jobs, |(p, t)| {
        score_one(p, t, &g, &embedder, &judge, alpha, beta, epsilon, config.anchor_threshold)
    });
    let breakdowns = results.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    write_jsonl(out, &breakdowns)?;
    println!("scored {} predictions", breakdowns.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn score_one(
    pred: &PredRecord,
    gt: &GtRecord,
    g: &kg::KnowledgeGraph,
    embedder: &dyn Embedder,
    judge: &LlmClient,
    alpha: f64,
    beta: f64,
    epsilon: f64,
    anchor_threshold: f64,
) -> anyhow::Result<rewards::RewardBreakdown> {
    let parsed = rewards::parse_structured(&pred.response);
    let r_format = rewards::reward_format(&parsed);
    let pred_answer = if parsed.answer.is_empty() {
        pred.response.as_str()
    } else {
        parsed.answer.as_str()
    };
    let r_semantic = rewards::reward_semantic(pred_answer, &gt.answer, judge)?;
    let gt_set = EntitySet::from_keys(&gt.entities);
    let r_entity = if parsed.well_formed {
        let pred_set = rewards::extract_reward_entities(&parsed, g, embedder, anchor_threshold)?;
        rewards::reward_entity(&pred_set, &gt_set, embedder, beta, epsilon)?
    } else {
        0.0
    };
    Ok(rewards::total_reward(r_format, r_semantic, r_entity, alpha))
}

pub fn grpo_demo(
    config: &PipelineConfig,
    iters: usize,
    out: Option<&Path>,
    rewards_arg: &str,
) -> anyhow::Result<()> {
    let rewards: Vec<f64> = rewards_arg
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(anyhow::Error::from))
        .collect::<anyhow::Result<_>>()?;
    let env = ToyEnv::from_rewards(rewards)?;
    let records = grpo::run_toy_training(&env, &config.grpo, iters, config.seed)?;
    if let Some(path) = out {
        grpo::write_trajectory_csv(&records, path)?;
    }
    let last = records.last().context("no iterations requested")?;
    println!(
        "final mean reward {} (best candidate {}) after {} iterations",
        last.mean_reward,
        env.best_reward(),
        records.len()
    );
    Ok(())
}

#[derive(Deserialize)]
struct EvalRecord {
    answer: String,
    #[serde(default)]
    reasoning: String,
}

#[derive(Serialize)]
struct EvalSummary {
    count: usize,
    bleu: f64,
    rouge1: f64,
    rouge2: f64,
    #[serde(rename = "rougeL")]
    rouge_l: f64,
    embed_f1: f64,
    llm_score: f64,
    a_score: f64,
    q_score: f64,
}

pub fn eval(
    config: &PipelineConfig,
    pred: &Path,
    reference: &Path,
    out: &Path,
    summary: Option<&Path>,
) -> anyhow::Result<()> {
    let preds: Vec<EvalRecord> = read_jsonl(pred)?;
    let refs: Vec<EvalRecord> = read_jsonl(reference)?;
    anyhow::ensure!(
        preds.len() == refs.len(),
        "prediction/reference length mismatch: {} vs {}",
        preds.len(),
        refs.len()
    );
    let embedder = embedder(config);
    let judge = judge(config);
    let pairs: Vec<(EvalRecord, EvalRecord)> = preds.into_iter().zip(refs).collect();
    let results = parallel::ordered_map(&pairs, config.jobs, |(p, r)| -> anyhow::Result<MetricReport> {
        let lex = evalmetrics::lexical_metrics(&p.answer, &r.answer)?;
        let embed_f1 = evalmetrics::embedding_f1(&p.answer, &r.answer, &embedder)?;
        let llm_score = evalmetrics::judge_eval(&p.answer, &r.answer, JudgeKind::AnswerScore, &judge)?;
        let a_score = evalmetrics::judge_eval(&p.reasoning, &r.reasoning, JudgeKind::AScore, &judge)?;
        let q_score = evalmetrics::judge_eval(&p.reasoning, "", JudgeKind::QScore, &judge)?;
        Ok(MetricReport {
            bleu: lex.bleu,
            rouge1: lex.rouge1,
            rouge2: lex.rouge2,
            rouge_l: lex.rouge_l,
            embed_f1,
            llm_score,
            a_score,
            q_score,
        })
    });
    let reports = results.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    write_jsonl(out, &reports)?;
    if let Some(summary_path) = summary {
        let n = reports.len().max(1) as f64;
        let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let agg = EvalSummary {
            count: reports.len(),
            bleu: mean(|r| r.bleu),
            rouge1: mean(|r| r.rouge1),
            rouge2: mean(|r| r.rouge2),
            rouge_l: mean(|r| r.rouge_l),
            embed_f1: mean(|r| r.embed_f1),
            llm_score: mean(|r| r.llm_score),
            a_score: mean(|r| r.a_score),
            q_score: mean(|r| r.q_score),
        };
        std::fs::write(summary_path, serde_json::to_string_pretty(&agg)?)?;
    }
    println!("evaluated {} pairs", reports.len());
    Ok(())
}

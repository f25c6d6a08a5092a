//! Prompt templates for generation, filtering, and judging.
//!
//! Slot values are wrapped in `<<< >>>` fences so the deterministic mock
//! clients can recover them without natural-language parsing; live LLM
//! endpoints treat the fences as ordinary delimiters.

/// Opening fence for a slot value.
pub const FENCE_OPEN: &str = "<<<";
/// Closing fence for a slot value.
pub const FENCE_CLOSE: &str = ">>>";

/// Wrap a slot value in fences.
pub fn fence(value: &str) -> String {
    format!("{FENCE_OPEN}{value}{FENCE_CLOSE}")
}

/// Extract every fenced slot value from a prompt, in order.
pub fn fenced_blocks(prompt: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = prompt;
    while let Some(start) = rest.find(FENCE_OPEN) {
        let after = &rest[start + FENCE_OPEN.len()..];
        match after.find(FENCE_CLOSE) {
            Some(end) => {
                blocks.push(&after[..end]);
                rest = &after[end + FENCE_CLOSE.len()..];
            }
            None => break,
        }
    }
    blocks
}

/// Generation prompt, detailed step-list variant.
pub const GENERATION_OPTION1: &str = "You are an expert AI pathologist. Carefully analyze the provided whole slide image (WSI) to answer the following question.
Follow these steps:
1. Observe and describe key histopathological findings relevant to the question.
2. Perform step-by-step clinical reasoning to connect findings with your conclusion.
3. Provide the final concise answer.
Please respond in the exact format below:
<observe> Histopathological Findings: ... </observe>
<think> Clinical Reasoning: ... </think>
<answer> Final Answer: ... </answer>";

/// Generation prompt, labeled-sections variant.
pub const GENERATION_OPTION2: &str = "You are an AI pathology assistant. Answer the following question based on the provided WSI. Please structure your reasoning clearly and respond in this exact format:
<observe> Histopathological Findings: Describe key findings. </observe>
<think> Clinical Reasoning: Explain your diagnostic reasoning step-by-step. </think>
<answer> Final Answer: Provide the short, conclusive answer. </answer>";

/// Generation prompt, single-line format contract.
pub const GENERATION_OPTION3: &str = "You are a digital pathology consultant. Analyze the provided WSI and answer the question using structured reasoning. Respond strictly in this format:
<observe> ... </observe> <think> ... </think> <answer> ... </answer>";

/// Marker line that opens the serialized knowledge-path section of a
/// generation prompt. The mock generator keys on it.
pub const KNOWLEDGE_HEADER: &str = "Retrieved Knowledge Paths (ground every statement in these):";

/// Marker line that opens the anchored-entity section of a generation prompt.
pub const ENTITY_HEADER: &str = "Anchored Entities:";

/// Answer-quality scoring rubric (single integer 1-5).
pub fn answer_score_prompt(ground_truth: &str, model_output: &str) -> String {
    format!(
        "You are a senior pathologist with 20+ years of clinical experience. Your task is to score the model's answer to a medical visual question based on its clinical accuracy compared to the ground truth diagnosis.

Scoring Criteria (1-5):
5: Perfectly correct. Clinically equivalent to ground truth, uses precise terminology, no errors.
4: Mostly correct. Minor phrasing issues (e.g., word order), but clinically sound and accurate.
3: Partially correct. Captures key elements but misses critical details (e.g., tumor grade, margin status).
2: Related but incorrect. Mentions a relevant category but gets the specific diagnosis wrong.
1: Incorrect or irrelevant. Hallucinated, off-topic, or contradicts the ground truth.

Instructions:
- Focus on clinical meaning, not exact wording.
- Treat standard synonyms and abbreviations (e.g., \"IDC\") as acceptable.
- Penalize overgeneralization or inclusion of false information.
- Binary answers: incorrect responses must receive a low score (1 or 2).

Ground Truth: {}
Model Prediction: {}

Constraint: Respond ONLY with a single integer from 1 to 5.",
        fence(ground_truth),
        fence(model_output)
    )
}

/// Reasoning-alignment scoring rubric: model reasoning vs reference reasoning.
pub fn alignment_score_prompt(reference_reasoning: &str, model_reasoning: &str) -> String {
    format!(
        "You are a senior pathologist with extensive experience in diagnostic reasoning. Below are two pieces of text:
- Reference Reasoning: The gold-standard explanation provided by an expert pathologist.
- Model Reasoning: The reasoning generated by an AI system analyzing the same pathology image.

Task: Your task is to score the Model Reasoning on a scale of 1 to 5 based on its factual and logical alignment with the Reference Reasoning. Focus on whether the model captures the same key observations, interpretive steps, and diagnostic logic.

Scoring Criteria:
5: Nearly identical. Captures all critical findings and implications correctly in a similar reasoning flow.
4: Strong alignment. Minor omissions or rephrasing, but no meaningful deviation in logic or facts.
3: Partial alignment. Includes some correct elements but misses/misrepresents key diagnostic features.
2: Weak alignment. Mentions related concepts but diverges significantly or omits essential evidence.
1: Minimal/No alignment. Contains hallucinations, contradictions, or fails to reflect expert reasoning.

Reference Reasoning: {}
Model Reasoning: {}

Respond ONLY with a single integer from 1 to 5.",
        fence(reference_reasoning),
        fence(model_reasoning)
    )
}

/// Intrinsic reasoning-quality rubric (no reference).
pub fn quality_score_prompt(model_reasoning: &str) -> String {
    format!(
        "You are an expert in computational pathology with extensive experience in histopathological analysis. Please evaluate the following AI-generated interpretation of a pathology image based on the quality of its reasoning process.

Assessment Criteria:
1. Logical Clarity: Is the argument presented in a clear, stepwise manner? Are conclusions supported by prior statements without gaps or contradictions?
2. Evidence Alignment: Does the reasoning explicitly connect each claim to observable morphological features (e.g., nuclear size, chromatin pattern, architecture)?
3. Professional Rigor: Are pathological terms used precisely? Does the reasoning reflect sound principles and avoid speculative interpretations?
4. Explainability: Would a practicing pathologist find the reasoning transparent? Does it articulate how visual findings lead to conclusions?
5. Comprehensiveness: Does it address relevant diagnostic features and acknowledge key differential considerations or limitations?

Scoring Scale (for each dimension and overall):
5 = Excellent  4 = Good  3 = Fair  2 = Poor  1 = Very poor

AI-generated reasoning to evaluate: {}

Respond ONLY with a single integer from 1 to 5.",
        fence(model_reasoning)
    )
}

/// Logical-consistency check: does the chain's conclusion contradict the answer?
pub fn consistency_prompt(chain: &str, answer: &str) -> String {
    format!(
        "You are a meticulous pathology QA reviewer. Read the reasoning chain and the final answer below and decide whether the conclusion stated in the reasoning chain contradicts the final answer.

Reasoning Chain: {}
Final Answer: {}

Respond ONLY with YES if the conclusion contradicts the answer, otherwise respond NO.",
        fence(chain),
        fence(answer)
    )
}

/// Blind-prediction check: predict the answer from the question alone.
pub fn blind_prediction_prompt(question: &str) -> String {
    format!(
        "You are a pathology exam taker who cannot see any slide or image. Predict the most likely final answer using only the question text below.

Question: {}

Reply with your predicted answer only.",
        fence(question)
    )
}

/// Sufficiency check: infer the answer from the reasoning chain alone.
pub fn sufficiency_prompt(chain: &str) -> String {
    format!(
        "You are a pathology resident. Using only the reasoning chain below, infer the answer it supports. Do not use outside knowledge of the case.

Reasoning Chain: {}

Reply with the inferred answer only.",
        fence(chain)
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fences_round_trip() {
        let p = format!("header {} mid {} tail", fence("alpha"), fence("beta b"));
        assert_eq!(fenced_blocks(&p), vec!["alpha", "beta b"]);
    }

    #[test]
    fn unterminated_fence_is_ignored() {
        assert_eq!(fenced_blocks("a <<<open b"), Vec::<&str>::new());
    }

    #[test]
    fn score_prompts_carry_the_integer_constraint() {
        assert!(answer_score_prompt("a", "b").contains("single integer from 1 to 5"));
        assert!(alignment_score_prompt("a", "b").contains("Reference Reasoning"));
    }

    #[test]
    fn quality_prompt_lists_all_five_criteria() {
        let p = quality_score_prompt("some reasoning");
        for heading in [
            "Logical Clarity",
            "Evidence Alignment",
            "Professional Rigor",
            "Explainability",
            "Comprehensiveness",
        ] {
            assert!(p.contains(heading), "missing {heading}");
        }
    }
}

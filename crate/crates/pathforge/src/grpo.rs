//! Group-relative policy optimization: advantages normalized within a
//! sampled group, the clipped surrogate objective, a nonnegative per-sample
//! KL estimator against a frozen reference, and a toy softmax policy that
//! trains against the reward stack with gradient verification.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::KnowledgeGraph;
use crate::rewards::{
    extract_reward_entities, parse_structured, reward_entity, reward_format, reward_semantic,
    total_reward, EntitySet, RewardBreakdown, RewardError,
};
use crate::services::{Embedder, LlmClient};

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("group of {got} samples is too small (need {needed})")]
    GroupTooSmall { needed: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub sigma_tol: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            kl_coef: 0.03,
            sigma_tol: 1e-8,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.group_size < 2 {
            return Err(GrpoError::BadConfig(format!(
                "group_size {} must be >= 2",
                self.group_size
            )));
        }
        if self.clip_eps.is_nan() || self.clip_eps <= 0.0 {
            return Err(GrpoError::BadConfig(format!(
                "clip_eps {} must be > 0",
                self.clip_eps
            )));
        }
        if self.kl_coef < 0.0 {
            return Err(GrpoError::BadConfig(format!(
                "kl_coef {} must be >= 0",
                self.kl_coef
            )));
        }
        if self.sigma_tol.is_nan() || self.sigma_tol <= 0.0 {
            return Err(GrpoError::BadConfig(format!(
                "sigma_tol {} must be > 0",
                self.sigma_tol
            )));
        }
        Ok(())
    }
}

/// One sampled output: its scalar reward and sequence-level log-probabilities
/// under the new, old, and frozen reference policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub reward: f64,
    pub logp_new: f64,
    pub logp_old: f64,
    pub logp_ref: f64,
}

/// The group of G outputs sampled for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub samples: Vec<GroupSample>,
}

/// Group-normalized advantages `(R_i - mean) / sigma` using the population
/// standard deviation; a degenerate group (sigma below `sigma_tol`) yields
/// all-zero advantages.
pub fn group_advantages(rewards: &[f64], sigma_tol: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall {
            needed: 2,
            got: rewards.len(),
        });
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(GrpoError::NonFinite("rewards"));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if sigma < sigma_tol {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / sigma).collect())
}

/// Clipped surrogate term `min(r A, clip(r, 1-eps, 1+eps) A)` with
/// `r = exp(logp_new - logp_old)`.
pub fn clipped_surrogate(
    logp_new: f64,
    logp_old: f64,
    advantage: f64,
    clip_eps: f64,
) -> Result<f64, GrpoError> {
    if !(logp_new.is_finite() && logp_old.is_finite() && advantage.is_finite()) {
        return Err(GrpoError::NonFinite("clipped_surrogate inputs"));
    }
    let ratio = (logp_new - logp_old).exp();
    if !ratio.is_finite() {
        return Err(GrpoError::NonFinite("probability ratio"));
    }
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    Ok(unclipped.min(clipped))
}

/// Per-sample KL estimator `exp(delta) - delta - 1` with
/// `delta = logp_ref - logp_new`. Nonnegative by convexity; zero iff the
/// policies agree on the sample.
pub fn kl_penalty(logp_new: f64, logp_ref: f64) -> Result<f64, GrpoError> {
    if !(logp_new.is_finite() && logp_ref.is_finite()) {
        return Err(GrpoError::NonFinite("kl_penalty inputs"));
    }
    let delta = logp_ref - logp_new;
    let value = delta.exp() - delta - 1.0;
    if !value.is_finite() {
        return Err(GrpoError::NonFinite("kl penalty"));
    }
    Ok(value)
}

/// Full group loss: the negated mean clipped surrogate plus the KL penalty
/// term, `-( mean_i min(r_i A_i, clip(r_i) A_i) - kl_coef * mean_i KL_i )`.
pub fn grpo_loss(group: &Group, config: &GrpoConfig) -> Result<f64, GrpoError> {
    if group.samples.len() != config.group_size {
        return Err(GrpoError::GroupTooSmall {
            needed: config.group_size,
            got: group.samples.len(),
        });
    }
    let rewards: Vec<f64> = group.samples.iter().map(|s| s.reward).collect();
    let advantages = group_advantages(&rewards, config.sigma_tol)?;
    let g = group.samples.len() as f64;
    let mut surrogate = 0.0;
    let mut kl = 0.0;
    for (sample, advantage) in group.samples.iter().zip(&advantages) {
        surrogate += clipped_surrogate(
            sample.logp_new,
            sample.logp_old,
            *advantage,
            config.clip_eps,
        )?;
        kl += kl_penalty(sample.logp_new, sample.logp_ref)?;
    }
    Ok(-(surrogate / g - config.kl_coef * kl / g))
}

/// Softmax policy over a fixed candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    logits: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn uniform(k: usize) -> Self {
        Self {
            logits: vec![0.0; k],
        }
    }

    pub fn from_logits(logits: Vec<f64>) -> Self {
        Self { logits }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn probs(&self) -> Vec<f64> {
        let max = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    pub fn logp(&self, index: usize) -> f64 {
        let max = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + self
                .logits
                .iter()
                .map(|l| (l - max).exp())
                .sum::<f64>()
                .ln();
        self.logits[index] - lse
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let probs = self.probs();
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}

/// A sampled group expressed against the toy policy's candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBatch {
    pub indices: Vec<usize>,
    pub rewards: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
}

fn batch_group(logits: &[f64], batch: &ToyBatch) -> Group {
    let policy = SoftmaxPolicy::from_logits(logits.to_vec());
    let samples = batch
        .indices
        .iter()
        .zip(&batch.rewards)
        .zip(batch.logp_old.iter().zip(&batch.logp_ref))
        .map(|((&idx, &reward), (&logp_old, &logp_ref))| GroupSample {
            reward,
            logp_new: policy.logp(idx),
            logp_old,
            logp_ref,
        })
        .collect();
    Group { samples }
}

/// Group loss as a function of the toy policy's logits.
pub fn toy_loss(logits: &[f64], batch: &ToyBatch, config: &GrpoConfig) -> Result<f64, GrpoError> {
    grpo_loss(&batch_group(logits, batch), config)
}

/// Analytic gradient of [`toy_loss`] with respect to the logits.
///
/// The min in the surrogate selects the unclipped branch wherever
/// `r A <= clip(r) A` (gradient `A r (e_i - p)`), and contributes zero
/// gradient where the clipped branch is active outside the clip band.
pub fn toy_grad(logits: &[f64], batch: &ToyBatch, config: &GrpoConfig) -> Result<Vec<f64>, GrpoError> {
    let policy = SoftmaxPolicy::from_logits(logits.to_vec());
    let probs = policy.probs();
    let advantages = group_advantages(&batch.rewards, config.sigma_tol)?;
    let k = logits.len();
    let g = batch.indices.len() as f64;
    let mut grad = vec![0.0; k];
    for (((&idx, advantage), &logp_old), &logp_ref) in batch
        .indices
        .iter()
        .zip(&advantages)
        .zip(&batch.logp_old)
        .zip(&batch.logp_ref)
    {
        let logp_new = policy.logp(idx);
        let ratio = (logp_new - logp_old).exp();
        let unclipped = ratio * advantage;
        let clipped = ratio.clamp(1.0 - config.clip_eps, 1.0 + config.clip_eps) * advantage;
        let surrogate_coef = if unclipped <= clipped { advantage * ratio } else { 0.0 };
        let delta = logp_ref - logp_new;
        let kl_coef_sample = 1.0 - delta.exp();
        for (j, gj) in grad.iter_mut().enumerate() {
            let dlogp = if j == idx { 1.0 - probs[j] } else { -probs[j] };
            *gj += (-surrogate_coef / g + config.kl_coef * kl_coef_sample / g) * dlogp;
        }
    }
    if grad.iter().any(|x| !x.is_finite()) {
        return Err(GrpoError::NonFinite("gradient"));
    }
    Ok(grad)
}

/// Margin (in ratio units, as a multiple of `h`) kept between evaluation
/// points and the clip kinks during finite differencing.
const KINK_MARGIN: f64 = 10.0;

/// Compare the analytic gradient against central finite differences of the
/// loss and return the maximum relative error over coordinates.
///
/// Evaluation points are first nudged away from the clip kinks
/// (`|r - (1 +/- eps)| < 10h`) where the min is nondifferentiable. Errors are
/// measured relative to `max(|analytic|, |numeric|, 1e-3)`, so near-zero
/// coordinates are compared on an absolute floor.
pub fn finite_difference_check(
    logits: &[f64],
    batch: &ToyBatch,
    config: &GrpoConfig,
    h: f64,
) -> Result<f64, GrpoError> {
    if h.is_nan() || h <= 0.0 {
        return Err(GrpoError::BadConfig(format!("step {h} must be > 0")));
    }
    let mut batch = batch.clone();
    let policy = SoftmaxPolicy::from_logits(logits.to_vec());
    for (i, &idx) in batch.indices.clone().iter().enumerate() {
        loop {
            let ratio = (policy.logp(idx) - batch.logp_old[i]).exp();
            let near_kink = (ratio - (1.0 - config.clip_eps)).abs() < KINK_MARGIN * h
                || (ratio - (1.0 + config.clip_eps)).abs() < KINK_MARGIN * h;
            if !near_kink {
                break;
            }
            batch.logp_old[i] += 5.0 * KINK_MARGIN * h;
        }
    }
    let analytic = toy_grad(logits, &batch, config)?;
    let mut max_rel = 0.0f64;
    let mut probe = logits.to_vec();
    for j in 0..logits.len() {
        probe[j] = logits[j] + h;
        let plus = toy_loss(&probe, &batch, config)?;
        probe[j] = logits[j] - h;
        let minus = toy_loss(&probe, &batch, config)?;
        probe[j] = logits[j];
        let numeric = (plus - minus) / (2.0 * h);
        let denom = analytic[j].abs().max(numeric.abs()).max(1e-3);
        max_rel = max_rel.max((analytic[j] - numeric).abs() / denom);
    }
    Ok(max_rel)
}

/// A fixed candidate-selection task: each candidate response has one
/// deterministic reward.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEnv {
    rewards: Vec<f64>,
    breakdowns: Option<Vec<RewardBreakdown>>,
}

impl ToyEnv {
    pub fn from_rewards(rewards: Vec<f64>) -> Result<Self, GrpoError> {
        if rewards.len() < 2 {
            return Err(GrpoError::BadConfig(
                "toy environment needs at least 2 candidates".to_string(),
            ));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(GrpoError::NonFinite("candidate rewards"));
        }
        Ok(Self {
            rewards,
            breakdowns: None,
        })
    }

    /// Score each candidate response once through the reward stack (format +
    /// judge semantics + graph entity reward) and freeze the totals.
    #[allow(clippy::too_many_arguments)]
    pub fn from_candidates(
        candidates: &[String],
        gt_answer: &str,
        gt_entities: &EntitySet,
        graph: &KnowledgeGraph,
        embedder: &dyn Embedder,
        judge: &LlmClient,
        alpha: f64,
        beta: f64,
        epsilon: f64,
        anchor_threshold: f64,
    ) -> Result<Self, GrpoError> {
        let mut breakdowns = Vec::with_capacity(candidates.len());
        for candidate in candidates {
            let parsed = parse_structured(candidate);
            let r_format = reward_format(&parsed);
            let pred_answer = if parsed.answer.is_empty() {
                candidate.as_str()
            } else {
                parsed.answer.as_str()
            };
            let r_semantic = reward_semantic(pred_answer, gt_answer, judge)?;
            let r_entity = if parsed.well_formed {
                let pred = extract_reward_entities(&parsed, graph, embedder, anchor_threshold)?;
                reward_entity(&pred, gt_entities, embedder, beta, epsilon)?
            } else {
                0.0
            };
            breakdowns.push(total_reward(r_format, r_semantic, r_entity, alpha));
        }
        let rewards: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
        let mut env = Self::from_rewards(rewards)?;
        env.breakdowns = Some(breakdowns);
        Ok(env)
    }

    pub fn reward(&self, candidate: usize) -> f64 {
        self.rewards[candidate]
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn best_reward(&self) -> f64 {
        self.rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn breakdowns(&self) -> Option<&[RewardBreakdown]> {
        self.breakdowns.as_deref()
    }
}

/// Fixed gradient step size of the toy optimizer.
pub const TOY_STEP_SIZE: f64 = 0.1;

/// One iteration's telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub mean_reward: f64,
    pub loss: f64,
    pub kl: f64,
}

/// Train the toy softmax policy on a candidate-selection task. Per
/// iteration: snapshot the old policy, sample G candidates, normalize their
/// rewards into advantages, take one gradient step on the group loss.
/// Deterministic given the seed.
pub fn run_toy_training(
    env: &ToyEnv,
    config: &GrpoConfig,
    iters: usize,
    seed: u64,
) -> Result<Vec<TrainRecord>, GrpoError> {
    config.validate()?;
    if env.len() < 2 {
        return Err(GrpoError::BadConfig(
            "toy environment needs at least 2 candidates".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = SoftmaxPolicy::uniform(env.len());
    let reference = policy.clone();
    let mut records = Vec::with_capacity(iters);
    for iteration in 0..iters {
        let old = policy.clone();
        let indices: Vec<usize> = (0..config.group_size).map(|_| old.sample(&mut rng)).collect();
        let rewards: Vec<f64> = indices.iter().map(|&i| env.reward(i)).collect();
        let batch = ToyBatch {
            logp_old: indices.iter().map(|&i| old.logp(i)).collect(),
            logp_ref: indices.iter().map(|&i| reference.logp(i)).collect(),
            rewards: rewards.clone(),
            indices,
        };
        let loss = toy_loss(policy.logits(), &batch, config)?;
        let grad = toy_grad(policy.logits(), &batch, config)?;
        let kl = batch
            .indices
            .iter()
            .zip(&batch.logp_ref)
            .map(|(&i, &lr)| kl_penalty(policy.logp(i), lr))
            .sum::<Result<f64, _>>()?
            / batch.indices.len() as f64;
        let logits: Vec<f64> = policy
            .logits()
            .iter()
            .zip(&grad)
            .map(|(l, g)| l - TOY_STEP_SIZE * g)
            .collect();
        policy = SoftmaxPolicy::from_logits(logits);
        records.push(TrainRecord {
            iteration,
            mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
            loss,
            kl,
        });
    }
    Ok(records)
}

/// Write a training trajectory as CSV (`iteration,mean_reward,loss,kl`).
pub fn write_trajectory_csv(records: &[TrainRecord], path: &Path) -> Result<(), GrpoError> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "iteration,mean_reward,loss,kl")?;
    for r in records {
        writeln!(file, "{},{},{},{}", r.iteration, r.mean_reward, r.loss, r.kl)?;
    }
    Ok(())
}

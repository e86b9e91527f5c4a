//! Clipped-ratio policy optimization over rollout trees.
//!
//! Each iteration snapshots the current parameters, builds one tree per
//! question under that snapshot, samples trajectories, and takes one plain
//! gradient-ascent step on
//!
//! ```text
//! J = mean over questions of
//!       (1 / total generated tokens) * sum over tokens of
//!         ( min(ratio * A, clamp(ratio, 1-eps, 1+eps) * A)
//!           - beta * KL(current distribution || reference distribution) )
//! ```
//!
//! where `ratio` compares the current and snapshot probabilities of the
//! taken action and `A` is the per-node advantage (or a per-trajectory
//! outcome score in the ablation). The tabular policy emits one action
//! template per step, so a step is one token; observation text never enters
//! the objective. Gradients are analytic, and the KL term is the exact
//! categorical divergence at each visited feature.

use crate::credit::{self, CreditError};
use crate::engine::{build_tree, EngineError, Retriever, RolloutConfig};
use crate::experience::{self, ExperienceError};
use crate::model::{AgentState, NodeId, PromptContext};
use crate::policy::{PolicyError, TabularParams, TabularPolicy};
use crate::seeding;
use crate::sim_env::TaskIndex;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

/// Per-question tree seeds and per-question path-sampling seeds live in
/// disjoint stream families.
const TREE_DOMAIN: u64 = 3;
const PATH_DOMAIN: u64 = 4;

/// Step size a gradient step of this objective would use on a full
/// language-model policy; the tabular table takes much larger steps.
pub const LLM_REFERENCE_LEARNING_RATE: f64 = 1e-6;

/// What the per-token advantage means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    /// Per-node advantages from subtree value estimates.
    #[default]
    Process,
    /// Ablation: one standardized outcome score per trajectory, shared by
    /// all of its steps.
    OutcomeGrpo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rollout: RolloutConfig,
    pub clip_epsilon: f64,
    pub kl_coefficient: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    /// Trajectories sampled per tree for the update.
    pub paths_per_tree: usize,
    /// Distractor search templates offered to the tabular policy.
    pub noise_templates: usize,
    pub advantage_mode: AdvantageMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rollout: RolloutConfig::default(),
            clip_epsilon: 0.2,
            kl_coefficient: 0.001,
            learning_rate: 0.1,
            iterations: 200,
            paths_per_tree: 8,
            noise_templates: 2,
            advantage_mode: AdvantageMode::Process,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.rollout.validate()?;
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(TrainError::Config("clip_epsilon must lie in (0, 1)".into()));
        }
        if self.kl_coefficient < 0.0 {
            return Err(TrainError::Config("kl_coefficient must be nonnegative".into()));
        }
        let learning_rate_ok = self.learning_rate.is_finite() && self.learning_rate > 0.0;
        if !learning_rate_ok {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(TrainError::Config("iterations must be positive".into()));
        }
        if self.paths_per_tree == 0 {
            return Err(TrainError::Config("paths_per_tree must be positive".into()));
        }
        Ok(())
    }
}

/// Standardized outcome scores: `(r - mean) / population std`, all zeros
/// when the rewards do not vary.
pub fn grpo_outcome_advantages(rewards: &[u8]) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().map(|&r| f64::from(r)).sum::<f64>() / n;
    let variance = rewards
        .iter()
        .map(|&r| (f64::from(r) - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = variance.sqrt();
    if std < 1e-8 {
        return vec![0.0; rewards.len()];
    }
    rewards
        .iter()
        .map(|&r| (f64::from(r) - mean) / std)
        .collect()
}

/// One taken action with everything the update needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSample {
    pub feature: usize,
    pub template: usize,
    /// Log probability under the collection-time snapshot.
    pub logprob_old: f64,
    pub advantage: f64,
    /// Which sampled trajectory of the question this step belongs to.
    pub path_index: usize,
}

/// All sampled steps of one question's tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionGroup {
    pub question_id: String,
    pub steps: Vec<StepSample>,
    /// Total generated tokens across the question's sampled trajectories.
    pub token_normalizer: f64,
}

/// A collected update batch, bound to the parameter snapshot that produced
/// it. Evaluating it against any other snapshot is an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainBatch {
    pub groups: Vec<QuestionGroup>,
    pub theta_old_digest: String,
    /// Mean leaf reward over all sampled trajectories; training curve signal.
    pub mean_reward: f64,
}

/// Builds one tree per task under the snapshot policy and extracts samples.
pub fn collect_batch<R: Retriever + ?Sized>(
    policy_old: &TabularPolicy,
    retriever: &R,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<TrainBatch, TrainError> {
    let tasks = Arc::clone(policy_old.tasks());
    if tasks.is_empty() {
        return Err(TrainError::Config("no tasks to train on".into()));
    }
    let temperature = cfg.rollout.temperature;
    let mut groups = Vec::with_capacity(tasks.len());
    let mut reward_sum = 0u64;
    let mut reward_count = 0u64;

    for (question_index, task) in tasks.iter().enumerate() {
        let mut rollout = cfg.rollout.clone();
        rollout.seed = seeding::derive_seed(
            cfg.rollout.seed,
            &[TREE_DOMAIN, iteration as u64, question_index as u64],
        );
        let context = PromptContext::new(task.question.clone());
        let tree = build_tree(context, policy_old, retriever, &rollout)?;
        let (rewards, credit) = credit::score_tree(&tree)?;

        let mut rng = seeding::stream(
            cfg.rollout.seed,
            &[PATH_DOMAIN, iteration as u64, question_index as u64],
        );
        let paths = experience::sample_paths(&tree, cfg.paths_per_tree, &mut rng)?;

        let leaf_reward = |leaf: NodeId| -> Result<u8, TrainError> {
            rewards
                .iter()
                .find(|r| r.node_id == leaf)
                .map(|r| r.reward)
                .ok_or(TrainError::MissingReward { leaf })
        };
        let outcome_scores = match cfg.advantage_mode {
            AdvantageMode::Process => Vec::new(),
            AdvantageMode::OutcomeGrpo => {
                let path_rewards = paths
                    .iter()
                    .map(|p| leaf_reward(p.leaf_node_id))
                    .collect::<Result<Vec<_>, _>>()?;
                grpo_outcome_advantages(&path_rewards)
            }
        };

        let mut steps = Vec::new();
        for (path_index, path) in paths.iter().enumerate() {
            reward_sum += u64::from(leaf_reward(path.leaf_node_id)?);
            reward_count += 1;
            let mut state = AgentState::initial(tree.context.clone());
            for (offset, (step, &node_id)) in
                path.steps.iter().zip(path.node_ids.iter().skip(1)).enumerate()
            {
                let feature = policy_old.feature_of(&state)?;
                let template = policy_old.template_for_action(&state, &step.action)?;
                let logprob_old = policy_old.params.log_probs(feature, temperature)[template];
                let advantage = match cfg.advantage_mode {
                    AdvantageMode::Process => credit
                        .get(node_id.index())
                        .and_then(|slot| slot.as_ref())
                        .and_then(|c| c.advantage)
                        .ok_or(TrainError::MissingAdvantage { node: node_id })?,
                    AdvantageMode::OutcomeGrpo => outcome_scores[path_index],
                };
                steps.push(StepSample {
                    feature,
                    template,
                    logprob_old,
                    advantage,
                    path_index,
                });
                if offset + 1 < path.steps.len() {
                    state = state.append_step(step.clone(), rollout.max_depth)?;
                }
            }
        }
        let token_normalizer = steps.len() as f64;
        groups.push(QuestionGroup {
            question_id: task.question.id.clone(),
            steps,
            token_normalizer,
        });
    }

    Ok(TrainBatch {
        groups,
        theta_old_digest: policy_old.params.digest(),
        mean_reward: reward_sum as f64 / reward_count.max(1) as f64,
    })
}

/// Objective value with its analytic gradient and diagnostics.
#[derive(Debug, Clone)]
pub struct SurrogateEval {
    pub objective: f64,
    pub gradient: TabularParams,
    /// Fraction of steps whose ratio left the clip window.
    pub clip_fraction: f64,
    /// Token-weighted mean KL against the reference distribution.
    pub mean_kl: f64,
}

/// Evaluates the clipped objective at `theta` on a batch collected under
/// `theta_old`, with the KL penalty taken against `theta_ref`.
pub fn surrogate_objective(
    theta: &TabularParams,
    theta_old: &TabularParams,
    theta_ref: &TabularParams,
    batch: &TrainBatch,
    cfg: &TrainConfig,
) -> Result<SurrogateEval, TrainError> {
    let found = theta_old.digest();
    if batch.theta_old_digest != found {
        return Err(TrainError::StaleSnapshot {
            expected: batch.theta_old_digest.clone(),
            found,
        });
    }
    let tau = cfg.rollout.temperature;
    let eps = cfg.clip_epsilon;
    let beta = cfg.kl_coefficient;
    let templates = theta.template_count();
    let mut gradient = TabularParams::zeros(theta.feature_count(), templates);
    let mut objective = 0.0;
    let mut weighted_kl = 0.0;
    let mut clipped = 0usize;
    let mut total = 0usize;
    let question_count = batch.groups.len() as f64;

    for group in &batch.groups {
        let weight = 1.0 / (group.token_normalizer * question_count);
        for sample in &group.steps {
            total += 1;
            let probs = theta.probs(sample.feature, tau);
            let log_probs = theta.log_probs(sample.feature, tau);
            let ratio = (log_probs[sample.template] - sample.logprob_old).exp();
            if (ratio - 1.0).abs() > eps {
                clipped += 1;
            }
            let unclipped = ratio * sample.advantage;
            let clamped = ratio.clamp(1.0 - eps, 1.0 + eps) * sample.advantage;
            objective += weight * unclipped.min(clamped);
            if unclipped <= clamped {
                // the ratio branch is active; d log prob / d logit over tau
                let coefficient = weight * unclipped / tau;
                for (t, p) in probs.iter().enumerate() {
                    let indicator = if t == sample.template { 1.0 } else { 0.0 };
                    gradient.logits[sample.feature][t] += coefficient * (indicator - p);
                }
            }

            let ref_log_probs = theta_ref.log_probs(sample.feature, tau);
            let kl: f64 = (0..templates)
                .map(|t| probs[t] * (log_probs[t] - ref_log_probs[t]))
                .sum();
            objective -= weight * beta * kl;
            weighted_kl += weight * kl;
            for t in 0..templates {
                let dkl = probs[t] * ((log_probs[t] - ref_log_probs[t]) - kl) / tau;
                gradient.logits[sample.feature][t] -= weight * beta * dkl;
            }
        }
    }

    Ok(SurrogateEval {
        objective,
        gradient,
        clip_fraction: clipped as f64 / total.max(1) as f64,
        mean_kl: weighted_kl,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub objective: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub mean_reward: f64,
}

/// One snapshot-collect-update cycle; mutates the policy in place.
pub fn train_iteration<R: Retriever + ?Sized>(
    policy: &mut TabularPolicy,
    theta_ref: &TabularParams,
    retriever: &R,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<IterationMetrics, TrainError> {
    let theta_old = policy.params.clone();
    let batch = collect_batch(policy, retriever, cfg, iteration)?;
    let eval = surrogate_objective(&policy.params, &theta_old, theta_ref, &batch, cfg)?;
    for (row, gradient_row) in policy.params.logits.iter_mut().zip(&eval.gradient.logits) {
        for (logit, g) in row.iter_mut().zip(gradient_row) {
            *logit += cfg.learning_rate * g;
        }
    }
    Ok(IterationMetrics {
        iteration,
        objective: eval.objective,
        mean_kl: eval.mean_kl,
        clip_fraction: eval.clip_fraction,
        mean_reward: batch.mean_reward,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: TabularPolicy,
    pub metrics: Vec<IterationMetrics>,
}

/// Trains a fresh uniform tabular policy on every task in the index.
pub fn run_training<R: Retriever + ?Sized>(
    tasks: Arc<TaskIndex>,
    retriever: &R,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mut policy = TabularPolicy::uniform(tasks, cfg.rollout.max_depth, cfg.noise_templates);
    let theta_ref = policy.params.clone();
    let mut metrics = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        metrics.push(train_iteration(&mut policy, &theta_ref, retriever, cfg, iteration)?);
    }
    Ok(TrainOutcome { policy, metrics })
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Credit(#[from] CreditError),
    #[error(transparent)]
    Experience(#[from] ExperienceError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("no advantage available for node {node}")]
    MissingAdvantage { node: NodeId },
    #[error("no reward recorded for leaf {leaf}")]
    MissingReward { leaf: NodeId },
    #[error("batch was collected under snapshot {expected} but evaluated against {found}")]
    StaleSnapshot { expected: String, found: String },
}

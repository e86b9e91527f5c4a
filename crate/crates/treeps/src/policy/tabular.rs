//! Trainable tabular softmax policy.
//!
//! The action space is the finite template inventory of [`TemplateSet`]; the
//! state is collapsed to a feature id combining the step position with a
//! signature of what the last retrieval hit. One logit row per feature, one
//! column per template; sampling draws from `softmax(row / temperature)`.
//! This is the desk-scale stand-in for a language-model policy: one action
//! template plays the role of one generated token.

use super::templates::{ActionTemplate, TemplateSet};
use super::{Policy, PolicyError, StepDraft};
use crate::model::{Action, ActionKind, AgentState};
use crate::seeding;
use crate::sim_env::{ChainTask, TaskIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Logit table, indexed `[feature][template]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularParams {
    pub logits: Vec<Vec<f64>>,
}

impl TabularParams {
    pub fn zeros(features: usize, templates: usize) -> Self {
        TabularParams {
            logits: vec![vec![0.0; templates]; features],
        }
    }

    pub fn feature_count(&self) -> usize {
        self.logits.len()
    }

    pub fn template_count(&self) -> usize {
        self.logits.first().map_or(0, Vec::len)
    }

    /// Sampling distribution over templates for one feature.
    pub fn probs(&self, feature: usize, temperature: f64) -> Vec<f64> {
        let row = &self.logits[feature];
        let peak = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = row.iter().map(|z| ((z - peak) / temperature).exp()).collect();
        let total: f64 = scaled.iter().sum();
        scaled.into_iter().map(|w| w / total).collect()
    }

    /// Log of [`Self::probs`], computed without exponentiating first.
    pub fn log_probs(&self, feature: usize, temperature: f64) -> Vec<f64> {
        let row = &self.logits[feature];
        let peak = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_norm: f64 = row
            .iter()
            .map(|z| ((z - peak) / temperature).exp())
            .sum::<f64>()
            .ln();
        row.iter().map(|z| (z - peak) / temperature - log_norm).collect()
    }

    /// Row-major flattening, for numeric probes over the parameter vector.
    pub fn flatten(&self) -> Vec<f64> {
        self.logits.iter().flatten().copied().collect()
    }

    /// Inverse of [`Self::flatten`]; panics on a length mismatch.
    pub fn from_flat(features: usize, templates: usize, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), features * templates);
        TabularParams {
            logits: flat.chunks(templates).map(<[f64]>::to_vec).collect(),
        }
    }

    /// Content digest for staleness checks on parameter snapshots.
    pub fn digest(&self) -> String {
        let mut bytes = Vec::with_capacity(self.logits.len() * self.template_count() * 8 + 16);
        bytes.extend_from_slice(&(self.logits.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.template_count() as u64).to_le_bytes());
        for row in &self.logits {
            for &z in row {
                bytes.extend_from_slice(&z.to_le_bytes());
            }
        }
        seeding::fingerprint_hex(&bytes)
    }
}

/// Maps agent states to feature ids: the step position crossed with which
/// chain hop (if any) the last retrieval hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSpace {
    pub max_depth: usize,
    pub hop_count: usize,
}

impl FeatureSpace {
    pub fn count(&self) -> usize {
        self.max_depth * (self.hop_count + 1)
    }

    /// Signature of the last observation: `1 + h` when it contains the gold
    /// passage of hop `h` (the deepest such hop), 0 on a miss or when the
    /// last step retrieved nothing.
    fn last_hit_signature(&self, task: &ChainTask, state: &AgentState) -> usize {
        let Some(observation) = state.last_observation() else {
            return 0;
        };
        (0..task.gold_passage_ids.len())
            .rev()
            .find(|&hop| {
                observation
                    .passage_ids()
                    .any(|id| id == task.gold_passage_ids[hop])
            })
            .map_or(0, |hop| hop + 1)
    }

    pub fn feature_of(&self, task: &ChainTask, state: &AgentState) -> usize {
        let position = state.history.len().min(self.max_depth - 1);
        position * (self.hop_count + 1) + self.last_hit_signature(task, state)
    }
}

/// Softmax-over-templates policy with trainable logits.
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    pub params: TabularParams,
    templates: TemplateSet,
    features: FeatureSpace,
    tasks: Arc<TaskIndex>,
}

impl TabularPolicy {
    /// Fresh uniform policy (all logits zero).
    pub fn uniform(tasks: Arc<TaskIndex>, max_depth: usize, noise_count: usize) -> Self {
        let templates = TemplateSet {
            hop_count: tasks.hop_count(),
            noise_count,
        };
        let features = FeatureSpace {
            max_depth,
            hop_count: tasks.hop_count(),
        };
        let params = TabularParams::zeros(features.count(), templates.len());
        TabularPolicy {
            params,
            templates,
            features,
            tasks,
        }
    }

    /// Same shape as `self`, different parameters.
    pub fn with_params(&self, params: TabularParams) -> Self {
        assert_eq!(params.feature_count(), self.features.count());
        assert_eq!(params.template_count(), self.templates.len());
        TabularPolicy {
            params,
            templates: self.templates,
            features: self.features,
            tasks: Arc::clone(&self.tasks),
        }
    }

    pub fn template_set(&self) -> TemplateSet {
        self.templates
    }

    pub fn feature_space(&self) -> FeatureSpace {
        self.features
    }

    pub fn tasks(&self) -> &Arc<TaskIndex> {
        &self.tasks
    }

    fn task_for(&self, state: &AgentState) -> Result<&ChainTask, PolicyError> {
        let id = &state.context.question.id;
        self.tasks
            .get(id)
            .ok_or_else(|| PolicyError::UnknownQuestion(id.clone()))
    }

    pub fn feature_of(&self, state: &AgentState) -> Result<usize, PolicyError> {
        Ok(self.features.feature_of(self.task_for(state)?, state))
    }

    /// Which template would have produced `action` in `state`. Answer
    /// actions all belong to the single answer template; search actions must
    /// reproduce a template's query verbatim.
    pub fn template_for_action(&self, state: &AgentState, action: &Action) -> Result<usize, PolicyError> {
        if action.kind == ActionKind::Answer {
            return Ok(self.templates.answer_index());
        }
        let task = self.task_for(state)?;
        for (index, template) in self.templates.templates().enumerate() {
            if template == ActionTemplate::Answer {
                continue;
            }
            if template.instantiate(task, state) == *action {
                return Ok(index);
            }
        }
        Err(PolicyError::UnknownTemplate(action.payload.clone()))
    }

    /// Log probability the policy assigns to `action` in `state`.
    pub fn action_logprob(
        &self,
        state: &AgentState,
        action: &Action,
        temperature: f64,
    ) -> Result<f64, PolicyError> {
        let feature = self.feature_of(state)?;
        let template = self.template_for_action(state, action)?;
        Ok(self.params.log_probs(feature, temperature)[template])
    }
}

impl Policy for TabularPolicy {
    fn generate_step(
        &self,
        state: &AgentState,
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<StepDraft, PolicyError> {
        let task = self.task_for(state)?;
        let feature = self.features.feature_of(task, state);
        let probs = self.params.probs(feature, temperature);
        let draw: f64 = rng.gen();
        let mut cumulative = 0.0;
        let mut chosen = probs.len() - 1;
        for (index, p) in probs.iter().enumerate() {
            cumulative += p;
            if draw < cumulative {
                chosen = index;
                break;
            }
        }
        let template = self.templates.get(chosen).expect("sampled index in range");
        Ok(StepDraft {
            reasoning: String::new(),
            action: template.instantiate(task, state),
        })
    }
}

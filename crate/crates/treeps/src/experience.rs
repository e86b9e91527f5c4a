//! Turning finished trees into training and export records.
//!
//! A trajectory is one root-to-leaf path. Enumeration visits leaves in id
//! order; sampling picks a uniform subset without replacement and keeps that
//! order, so downstream consumers never depend on rng state for ordering.
//! Records pair each step with the advantage of the node that produced it
//! and with token counts split into the generated part (reasoning plus
//! action tags) and the observation part, which optimization must ignore.

use crate::credit::{CreditTable, RewardRecord};
use crate::model::{Action, NodeId, Observation, Trajectory, Tree};
use crate::policy::{render_observation_text, render_step_generated};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{self, BufRead, Write};
use thiserror::Error;

/// Counts tokens for budget accounting and loss normalization.
pub trait Tokenizer {
    fn count_tokens(&self, text: &str) -> u32;
}

/// Splits on ASCII whitespace; the accounting baseline everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count_tokens(&self, text: &str) -> u32 {
        text.split_whitespace().count() as u32
    }
}

/// All root-to-leaf paths, ordered by leaf node id.
pub fn enumerate_paths(tree: &Tree) -> Vec<Trajectory> {
    tree.leaf_ids()
        .into_iter()
        .map(|leaf| {
            let node_ids = tree.path_to(leaf);
            let steps = node_ids
                .iter()
                .filter_map(|&id| tree.node(id).step.clone())
                .collect();
            Trajectory {
                question_id: tree.question_id.clone(),
                steps,
                leaf_node_id: leaf,
                node_ids,
            }
        })
        .collect()
}

/// Uniform sample of `count` distinct paths (all of them when fewer exist),
/// returned in leaf id order.
pub fn sample_paths(
    tree: &Tree,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Trajectory>, ExperienceError> {
    let paths = enumerate_paths(tree);
    if paths.is_empty() {
        return Err(ExperienceError::EmptyPaths);
    }
    if count >= paths.len() {
        return Ok(paths);
    }
    let keep: std::collections::BTreeSet<usize> =
        rand::seq::index::sample(rng, paths.len(), count).into_iter().collect();
    Ok(paths
        .into_iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(i))
        .map(|(_, path)| path)
        .collect())
}

/// One step of a stored trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub reasoning: String,
    pub action: Action,
    pub observation: Option<Observation>,
    /// Advantage of the node that generated this step; every generated token
    /// of the step trains against this value.
    pub advantage: f64,
    pub generated_token_count: u32,
    pub observation_token_count: u32,
}

/// One trajectory with its leaf reward, ready for JSONL storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceRecord {
    pub question_id: String,
    /// Leaf node id rendered as text; unique within one tree.
    pub trajectory_id: String,
    pub reward: u8,
    pub steps: Vec<StepRecord>,
}

/// Joins sampled trajectories with rewards and per-node advantages.
pub fn build_records<T: Tokenizer>(
    tree: &Tree,
    trajectories: &[Trajectory],
    credit: &CreditTable,
    rewards: &[RewardRecord],
    tokenizer: &T,
) -> Result<Vec<ExperienceRecord>, ExperienceError> {
    let tags = &tree.context.template.tags;
    trajectories
        .iter()
        .map(|trajectory| {
            let leaf = trajectory.leaf_node_id;
            let reward = rewards
                .iter()
                .find(|r| r.node_id == leaf)
                .ok_or(ExperienceError::MissingReward { leaf })?
                .reward;
            let steps = trajectory
                .steps
                .iter()
                .zip(trajectory.node_ids.iter().skip(1))
                .map(|(step, &node_id)| {
                    let advantage = credit
                        .get(node_id.index())
                        .and_then(|slot| slot.as_ref())
                        .and_then(|c| c.advantage)
                        .ok_or(ExperienceError::MissingAdvantage { node: node_id })?;
                    let generated =
                        render_step_generated(&step.reasoning, &step.action, tags);
                    let observation_token_count = step
                        .observation
                        .as_ref()
                        .map_or(0, |obs| tokenizer.count_tokens(&render_observation_text(obs)));
                    Ok(StepRecord {
                        reasoning: step.reasoning.clone(),
                        action: step.action.clone(),
                        observation: step.observation.clone(),
                        advantage,
                        generated_token_count: tokenizer.count_tokens(&generated),
                        observation_token_count,
                    })
                })
                .collect::<Result<Vec<_>, ExperienceError>>()?;
            Ok(ExperienceRecord {
                question_id: trajectory.question_id.clone(),
                trajectory_id: leaf.to_string(),
                reward,
                steps,
            })
        })
        .collect()
}

/// One record per line.
pub fn write_jsonl<W: Write>(records: &[ExperienceRecord], mut out: W) -> io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<ExperienceRecord>, ExperienceError> {
    input
        .lines()
        .filter(|line| line.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|line| {
            let line = line?;
            serde_json::from_str(&line).map_err(|e| ExperienceError::Format(e.to_string()))
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum ExperienceError {
    #[error("tree has no leaves to sample")]
    EmptyPaths,
    #[error("no advantage available for node {node}")]
    MissingAdvantage { node: NodeId },
    #[error("no reward recorded for leaf {leaf}")]
    MissingReward { leaf: NodeId },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed experience line: {0}")]
    Format(String),
}

//! Outcome rewards and Monte Carlo credit assignment.
//!
//! Leaves earn an exact-match reward in {0, 1}. Every non-pruned node is then
//! valued as the mean reward of its descendant leaves (a leaf's value is its
//! own reward), computed in one bottom-up sweep. The per-step advantage of a
//! node n combines its improvement over the tree as a whole and over its own
//! parent, damped by how many leaves back the estimate:
//!
//! ```text
//! A(n) = (2 V(n) - V(root) - V(parent(n))) / sqrt(leaf_count(n))
//! ```
//!
//! Values and counts computed this way satisfy, at every internal node,
//! `value * leaf_count = sum over children of value * leaf_count`, which the
//! tests check against an independent enumeration oracle.

use crate::model::{ActionKind, Node, NodeId, NodeStatus, Tree};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reward assigned to one leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub node_id: NodeId,
    pub reward: u8,
}

/// Credit bookkeeping for one non-pruned node. `advantage` and its two
/// components are absent on the root, which has no parent to compare against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCredit {
    pub node_id: NodeId,
    pub leaf_count: u64,
    pub value: f64,
    pub advantage: Option<f64>,
    /// value(n) - value(root)
    pub global_gap: Option<f64>,
    /// value(n) - value(parent)
    pub local_gap: Option<f64>,
}

/// Per-tree credit table indexed by node id; pruned nodes hold `None`.
pub type CreditTable = Vec<Option<NodeCredit>>;

/// Canonical answer form for exact-match comparison: lowercase, ASCII
/// punctuation removed, the articles "a"/"an"/"the" dropped, whitespace
/// collapsed to single spaces.
pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered
        .split_whitespace()
        .filter(|token| !matches!(*token, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Exact-match outcome reward: 1 when the normalized forms agree, else 0.
pub fn exact_match_reward(predicted: &str, gold: &str) -> u8 {
    u8::from(normalize_answer(predicted) == normalize_answer(gold))
}

/// Extracts the predicted answer a leaf committed to. Searches cut off at
/// the depth limit never produced an answer, so they predict the empty
/// string and always score 0.
pub fn predicted_answer(leaf: &Node) -> &str {
    match leaf.step.as_ref() {
        Some(step) if step.action.kind == ActionKind::Answer => &step.action.payload,
        _ => "",
    }
}

/// Scores every leaf of `tree` against its question's gold answer.
pub fn leaf_rewards(tree: &Tree) -> Vec<RewardRecord> {
    let gold = &tree.context.question.gold_answer;
    tree.nodes
        .iter()
        .filter(|n| n.status == NodeStatus::Leaf)
        .map(|leaf| RewardRecord {
            node_id: leaf.node_id,
            reward: exact_match_reward(predicted_answer(leaf), gold),
        })
        .collect()
}

/// Bottom-up value estimation. Returns one entry per node id; pruned nodes
/// get `None`. Node ids grow away from the root, so a single reverse sweep
/// sees every child before its parent.
pub fn estimate_values(tree: &Tree, rewards: &[RewardRecord]) -> Result<CreditTable, CreditError> {
    let mut reward_of: Vec<Option<u8>> = vec![None; tree.len()];
    for record in rewards {
        reward_of[record.node_id.index()] = Some(record.reward);
    }

    // reward sum and leaf count accumulated per node
    let mut sums = vec![0u64; tree.len()];
    let mut counts = vec![0u64; tree.len()];
    for node in tree.nodes.iter().rev() {
        match node.status {
            NodeStatus::Pruned => continue,
            NodeStatus::Leaf => {
                let reward =
                    reward_of[node.node_id.index()].ok_or(CreditError::MissingReward(node.node_id))?;
                sums[node.node_id.index()] = u64::from(reward);
                counts[node.node_id.index()] = 1;
            }
            NodeStatus::RetainedInternal => {
                if counts[node.node_id.index()] == 0 {
                    return Err(CreditError::OrphanInternal(node.node_id));
                }
            }
        }
        if let Some(parent) = node.parent_id {
            sums[parent.index()] += sums[node.node_id.index()];
            counts[parent.index()] += counts[node.node_id.index()];
        }
    }

    Ok(tree
        .nodes
        .iter()
        .map(|node| {
            (node.status != NodeStatus::Pruned).then(|| {
                let leaf_count = counts[node.node_id.index()];
                NodeCredit {
                    node_id: node.node_id,
                    leaf_count,
                    value: sums[node.node_id.index()] as f64 / leaf_count as f64,
                    advantage: None,
                    global_gap: None,
                    local_gap: None,
                }
            })
        })
        .collect())
}

/// The process advantage formula on raw ingredients. Values live in [0, 1]
/// and `leaf_count >= 1`, so the result is always within [-2, 2].
pub fn process_advantage(value: f64, root_value: f64, parent_value: f64, leaf_count: u64) -> f64 {
    (2.0 * value - root_value - parent_value) / (leaf_count as f64).sqrt()
}

/// Fills in advantages for every non-root entry of `credits`. Depth-1 nodes
/// use the root as their parent. Advantages are deliberately not normalized
/// across the batch; the scale carries meaning.
pub fn compute_advantages(tree: &Tree, credits: &mut CreditTable) -> Result<(), CreditError> {
    let root_value = credits[0]
        .as_ref()
        .ok_or(CreditError::MissingCredit(NodeId(0)))?
        .value;
    for node in &tree.nodes {
        if node.is_root() || node.status == NodeStatus::Pruned {
            continue;
        }
        let parent = node.parent_id.expect("non-root nodes have parents");
        let parent_value = credits[parent.index()]
            .as_ref()
            .ok_or(CreditError::MissingCredit(parent))?
            .value;
        let entry = credits[node.node_id.index()]
            .as_mut()
            .ok_or(CreditError::MissingCredit(node.node_id))?;
        entry.advantage = Some(process_advantage(
            entry.value,
            root_value,
            parent_value,
            entry.leaf_count,
        ));
        entry.global_gap = Some(entry.value - root_value);
        entry.local_gap = Some(entry.value - parent_value);
    }
    Ok(())
}

/// Convenience composition used by rollout pipelines: rewards, values, and
/// advantages in one call.
pub fn score_tree(tree: &Tree) -> Result<(Vec<RewardRecord>, CreditTable), CreditError> {
    let rewards = leaf_rewards(tree);
    let mut credits = estimate_values(tree, &rewards)?;
    compute_advantages(tree, &mut credits)?;
    Ok((rewards, credits))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CreditError {
    #[error("leaf {0} has no reward record")]
    MissingReward(NodeId),
    #[error("internal node {0} has no surviving descendant leaves")]
    OrphanInternal(NodeId),
    #[error("node {0} is missing from the credit table")]
    MissingCredit(NodeId),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        Action, NodeStatus, PromptContext, Question, Step, Tree, TreeBuilder,
    };

    fn context() -> PromptContext {
        PromptContext::new(Question {
            id: "q".to_owned(),
            text: "which river?".to_owned(),
            gold_answer: "the nile".to_owned(),
        })
    }

    fn search_step() -> Step {
        Step::new("looking", Action::search("river length").unwrap(), None)
    }

    fn answer_step(text: &str) -> Step {
        Step::new("", Action::answer(text).unwrap(), None)
    }

    /// Root with `per_branch` answer leaves under each of two depth-1 search
    /// nodes; leaf rewards given per branch.
    fn two_branch_tree(left: &[u8], right: &[u8]) -> (Tree, Vec<RewardRecord>) {
        let mut builder = TreeBuilder::new(context());
        let root = builder.root_id();
        let mut rewards = Vec::new();
        for branch in [left, right] {
            let parent = builder
                .add_child(root, search_step(), NodeStatus::RetainedInternal)
                .unwrap();
            for &r in branch {
                let leaf = builder
                    .add_child(parent, answer_step("nile"), NodeStatus::Leaf)
                    .unwrap();
                rewards.push(RewardRecord {
                    node_id: leaf,
                    reward: r,
                });
            }
        }
        (builder.finish(), rewards)
    }

    #[test]
    fn normalization_strips_articles_punctuation_and_spacing() {
        assert_eq!(normalize_answer("The Eiffel Tower."), "eiffel tower");
        assert_eq!(normalize_answer("  A  dog "), "dog");
        assert_eq!(normalize_answer("Paris"), "paris");
    }

    #[test]
    fn exact_match_examples() {
        assert_eq!(exact_match_reward("the Paris", "paris"), 1);
        assert_eq!(exact_match_reward("Paris, France", "paris"), 0);
        assert_eq!(exact_match_reward("", "paris"), 0);
    }

    #[test]
    fn single_leaf_value_is_its_reward() {
        let mut builder = TreeBuilder::new(context());
        let root = builder.root_id();
        let leaf = builder
            .add_child(root, answer_step("the nile"), NodeStatus::Leaf)
            .unwrap();
        let tree = builder.finish();
        let rewards = leaf_rewards(&tree);
        assert_eq!(rewards, vec![RewardRecord { node_id: leaf, reward: 1 }]);
        let credits = estimate_values(&tree, &rewards).unwrap();
        let entry = credits[leaf.index()].as_ref().unwrap();
        assert_eq!(entry.value, 1.0);
        assert_eq!(entry.leaf_count, 1);
    }

    #[test]
    fn internal_value_averages_descendant_leaves() {
        let (tree, rewards) = two_branch_tree(&[1, 0, 1], &[0]);
        let credits = estimate_values(&tree, &rewards).unwrap();
        // first depth-1 node is id 1, its three leaves ids 2..=4
        let internal = credits[1].as_ref().unwrap();
        assert!((internal.value - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(internal.leaf_count, 3);
    }

    #[test]
    fn root_value_spans_all_branches() {
        let (tree, rewards) = two_branch_tree(&[1, 1, 0, 0], &[0, 0, 0, 0]);
        let credits = estimate_values(&tree, &rewards).unwrap();
        let root = credits[0].as_ref().unwrap();
        assert_eq!(root.value, 0.25);
        assert_eq!(root.leaf_count, 8);
    }

    #[test]
    fn missing_reward_is_an_error() {
        let (tree, mut rewards) = two_branch_tree(&[1], &[0]);
        rewards.pop();
        assert!(matches!(
            estimate_values(&tree, &rewards),
            Err(CreditError::MissingReward(_))
        ));
    }

    #[test]
    fn orphan_internal_is_an_error() {
        let mut builder = TreeBuilder::new(context());
        let root = builder.root_id();
        builder
            .add_child(root, search_step(), NodeStatus::RetainedInternal)
            .unwrap();
        let tree = builder.finish();
        assert!(matches!(
            estimate_values(&tree, &[]),
            Err(CreditError::OrphanInternal(_))
        ));
    }

    #[test]
    fn advantage_rewards_above_average_branches() {
        // perfect branch of four leaves against a failing branch of four
        let (tree, rewards) = two_branch_tree(&[1, 1, 1, 1], &[0, 0, 0, 0]);
        let mut credits = estimate_values(&tree, &rewards).unwrap();
        compute_advantages(&tree, &mut credits).unwrap();
        let good = credits[1].as_ref().unwrap();
        assert_eq!(good.value, 1.0);
        assert_eq!(good.leaf_count, 4);
        assert_eq!(good.advantage, Some(0.5));
        assert_eq!(good.global_gap, Some(0.5));
        assert_eq!(good.local_gap, Some(0.5));
    }

    #[test]
    fn advantage_punishes_a_failing_leaf_under_a_weak_parent() {
        // parent value 0.25 (one success in four), root value 0.5 overall
        let (tree, rewards) = two_branch_tree(&[0, 0, 0, 1], &[1, 1, 1, 0]);
        let mut credits = estimate_values(&tree, &rewards).unwrap();
        compute_advantages(&tree, &mut credits).unwrap();
        let root = credits[0].as_ref().unwrap();
        assert_eq!(root.value, 0.5);
        let parent = credits[1].as_ref().unwrap();
        assert_eq!(parent.value, 0.25);
        // first failing leaf under that parent is id 2
        let leaf = credits[2].as_ref().unwrap();
        assert_eq!(leaf.value, 0.0);
        assert_eq!(leaf.advantage, Some(-0.75));
    }

    #[test]
    fn uniform_outcomes_produce_zero_advantages() {
        let (tree, rewards) = two_branch_tree(&[1, 1], &[1, 1]);
        let mut credits = estimate_values(&tree, &rewards).unwrap();
        compute_advantages(&tree, &mut credits).unwrap();
        for entry in credits.iter().flatten().skip(1) {
            assert_eq!(entry.advantage, Some(0.0));
        }
    }

    #[test]
    fn forced_termination_leaves_score_zero() {
        let mut builder = TreeBuilder::new(context());
        let root = builder.root_id();
        let cut_off = builder
            .add_child(root, search_step(), NodeStatus::Leaf)
            .unwrap();
        let tree = builder.finish();
        let rewards = leaf_rewards(&tree);
        assert_eq!(
            rewards,
            vec![RewardRecord {
                node_id: cut_off,
                reward: 0
            }]
        );
    }

    #[test]
    fn pruned_nodes_are_outside_the_credit_table() {
        let mut builder = TreeBuilder::new(context());
        let root = builder.root_id();
        let pruned = builder
            .add_child(root, search_step(), NodeStatus::Pruned)
            .unwrap();
        builder
            .add_child(root, answer_step("the nile"), NodeStatus::Leaf)
            .unwrap();
        let tree = builder.finish();
        let (_, credits) = score_tree(&tree).unwrap();
        assert!(credits[pruned.index()].is_none());
        assert_eq!(credits[0].as_ref().unwrap().leaf_count, 1);
    }
}

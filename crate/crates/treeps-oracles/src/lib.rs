//! Slow, independent reference implementations used by tests to cross-check
//! the fast paths in `treeps`.
//!
//! The value oracle re-derives every node's statistics by explicitly walking
//! that node's subtree and enumerating descendant leaves, sharing nothing
//! with the production bottom-up sweep. It reports exact integers (reward
//! sum and leaf count), so comparisons against the float pipeline can pin
//! both the rational value and a 1e-12 float tolerance.
//!
//! Nothing in this crate is meant to ship; it exists for test builds only.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treeps::credit::RewardRecord;
use treeps::model::{
    Action, NodeId, NodeStatus, PromptContext, Question, Step, Tree, TreeBuilder,
};

/// Exact per-node statistics: the node's value is `reward_sum / leaf_count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleValue {
    pub node_id: NodeId,
    pub reward_sum: u64,
    pub leaf_count: u64,
}

impl OracleValue {
    pub fn value(&self) -> f64 {
        assert!(self.leaf_count > 0, "node {} has no leaves", self.node_id);
        self.reward_sum as f64 / self.leaf_count as f64
    }
}

/// Re-derives value statistics for every non-pruned node by enumerating the
/// descendant leaves of each node independently (no sharing between nodes).
/// Panics on malformed input; this is test support, not a production path.
pub fn brute_force_values(tree: &Tree, rewards: &[RewardRecord]) -> Vec<Option<OracleValue>> {
    let children = tree.children_index();
    let reward_of = |id: NodeId| -> u64 {
        let record = rewards
            .iter()
            .find(|r| r.node_id == id)
            .unwrap_or_else(|| panic!("leaf {id} has no reward record"));
        u64::from(record.reward)
    };

    tree.nodes
        .iter()
        .map(|node| {
            if node.status == NodeStatus::Pruned {
                return None;
            }
            let mut reward_sum = 0;
            let mut leaf_count = 0;
            let mut stack = vec![node.node_id];
            while let Some(id) = stack.pop() {
                let current = tree.node(id);
                match current.status {
                    NodeStatus::Pruned => continue,
                    NodeStatus::Leaf => {
                        reward_sum += reward_of(id);
                        leaf_count += 1;
                    }
                    NodeStatus::RetainedInternal => {
                        stack.extend(children[id.index()].iter().copied());
                    }
                }
            }
            Some(OracleValue {
                node_id: node.node_id,
                reward_sum,
                leaf_count,
            })
        })
        .collect()
}

/// Central-difference gradient of `objective` at `theta`.
pub fn finite_difference_gradient<F>(objective: F, theta: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut gradient = Vec::with_capacity(theta.len());
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        probe[i] = theta[i] + step;
        let up = objective(&probe);
        probe[i] = theta[i] - step;
        let down = objective(&probe);
        probe[i] = theta[i];
        gradient.push((up - down) / (2.0 * step));
    }
    gradient
}

/// Relative disagreement between two gradients, scaled by the larger norm.
pub fn gradient_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let norm_a: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm_a.max(norm_b).max(1e-12)
}

/// Pass/fail ledger for a batch of oracle comparisons.
#[derive(Debug, Default)]
pub struct OracleReport {
    pub checks: Vec<OracleCheck>,
}

#[derive(Debug)]
pub struct OracleCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl OracleReport {
    pub fn record(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(OracleCheck {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&OracleCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

/// Deterministic random tree fixture with rewards, used to fuzz the credit
/// pipeline. Trees stay under `node_budget` nodes, mix answer leaves, pruned
/// branches, and depth-capped searches, and never leave an internal node
/// without a surviving leaf below it.
pub fn random_tree(seed: u64, node_budget: usize) -> (Tree, Vec<RewardRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let question = Question {
        id: format!("fixture-{seed}"),
        text: "fixture question".to_owned(),
        gold_answer: "fixture".to_owned(),
    };
    let mut builder = TreeBuilder::new(PromptContext::new(question));
    let mut rewards = Vec::new();
    let max_depth = rng.gen_range(2..=4);
    let mut frontier = vec![builder.root_id()];

    for depth in 1..=max_depth {
        let mut next = Vec::new();
        let closing = depth == max_depth;
        for parent in frontier {
            let out_of_budget = builder.next_id().0 as usize + 4 >= node_budget;
            let fanout = if closing || out_of_budget {
                1
            } else {
                rng.gen_range(1..=4)
            };
            let mut survivor_placed = false;
            for slot in 0..fanout {
                let last_slot = slot + 1 == fanout;
                let roll: f64 = rng.gen();
                let make_answer = closing || out_of_budget || roll < 0.4 || (last_slot && !survivor_placed && roll < 0.7);
                if make_answer {
                    let text = if rng.gen_bool(0.5) { "fixture" } else { "miss" };
                    let leaf = builder
                        .add_child(
                            parent,
                            Step::new("", Action::answer(text).unwrap(), None),
                            NodeStatus::Leaf,
                        )
                        .expect("fixture parents are retained");
                    rewards.push(RewardRecord {
                        node_id: leaf,
                        reward: u8::from(text == "fixture"),
                    });
                    survivor_placed = true;
                } else {
                    let step = Step::new("", Action::search("fixture probe").unwrap(), None);
                    let prune = survivor_placed && !last_slot && rng.gen_bool(0.25);
                    if prune {
                        builder
                            .add_child(parent, step, NodeStatus::Pruned)
                            .expect("fixture parents are retained");
                    } else if last_slot && !survivor_placed {
                        // guarantee the parent keeps a surviving line: make
                        // this search terminal as a depth-capped leaf
                        let leaf = builder
                            .add_child(parent, step, NodeStatus::Leaf)
                            .expect("fixture parents are retained");
                        rewards.push(RewardRecord {
                            node_id: leaf,
                            reward: 0,
                        });
                        survivor_placed = true;
                    } else {
                        let child = builder
                            .add_child(parent, step, NodeStatus::RetainedInternal)
                            .expect("fixture parents are retained");
                        next.push(child);
                        survivor_placed = true;
                    }
                }
            }
        }
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    (builder.finish(), rewards)
}

//! Layer-wise rollout tree construction.
//!
//! Each depth is built in two phases. Fan-out: every retained parent drafts
//! the same number of children (`ceil(budget / parents)`, or a fixed
//! per-depth count), sampling steps from the policy in parallel and running
//! retrieval for search actions. Prune: per parent, the search children are
//! clustered by retrieval overlap and only cluster representatives stay
//! expandable; answer children become leaves immediately. Nodes at the depth
//! limit are forced terminal without retrieval.
//!
//! Everything is deterministic for a fixed seed: each draft owns an rng
//! stream keyed by (seed, parent id, sample index), retention draws from a
//! separate per-parent stream, and node ids follow insertion order
//! (layer-major, then parent-major, then sample order). Draft failures are
//! retried once on the same stream; a draft that fails twice is dropped
//! without consuming a node id.

use crate::model::{
    AgentState, ModelError, NodeId, NodeStatus, Observation, PromptContext, Step, Tree,
    TreeBuilder,
};
use crate::policy::Policy;
use crate::pruner::{self, Linkage, PassageSet, PruneError};
use crate::seeding;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Domain tags keeping generation and retention rng streams disjoint.
const GENERATION_DOMAIN: u64 = 1;
const RETENTION_DOMAIN: u64 = 2;

/// Supplies observations for search queries. Implementations must be cheap
/// to call from worker threads.
pub trait Retriever: Sync {
    fn retrieve(&self, query: &str) -> Result<Observation, RetrieverError>;
}

/// A failed retrieval aborts the whole tree: unlike a policy hiccup there is
/// no useful way to continue without the observation.
#[derive(Debug, Error)]
#[error("retrieval failed: {0}")]
pub struct RetrieverError(pub String);

/// Which children of a parent stay expandable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruningMode {
    /// Cluster search children by retrieval-set distance, keep medoids.
    #[default]
    Similarity,
    /// Keep a uniform random subset; ablation baseline.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    /// Target number of children generated per depth (N).
    pub rollout_budget: usize,
    /// Maximum number of steps on any path (D).
    pub max_depth: usize,
    /// Expandable children kept per parent after pruning.
    pub retention_budget: usize,
    /// Sampling temperature forwarded to the policy.
    pub temperature: f64,
    /// Overrides the per-depth children-per-parent counts when set; must
    /// hold one entry per depth.
    pub fixed_branching: Option<Vec<usize>>,
    pub seed: u64,
    pub pruning: PruningMode,
    pub linkage: Linkage,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            rollout_budget: 8,
            max_depth: 4,
            retention_budget: 2,
            temperature: 1.0,
            fixed_branching: None,
            seed: 0,
            pruning: PruningMode::Similarity,
            linkage: Linkage::Average,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.rollout_budget == 0 {
            return Err(EngineError::Config("rollout_budget must be positive".into()));
        }
        if self.max_depth == 0 {
            return Err(EngineError::Config("max_depth must be positive".into()));
        }
        if self.retention_budget == 0 {
            return Err(EngineError::Config("retention_budget must be positive".into()));
        }
        let temperature_ok = self.temperature.is_finite() && self.temperature > 0.0;
        if !temperature_ok {
            return Err(EngineError::Config("temperature must be positive".into()));
        }
        if let Some(fixed) = &self.fixed_branching {
            if fixed.len() != self.max_depth {
                return Err(EngineError::Config(format!(
                    "fixed_branching holds {} entries for max_depth {}",
                    fixed.len(),
                    self.max_depth
                )));
            }
            if fixed.contains(&0) {
                return Err(EngineError::Config("fixed_branching entries must be positive".into()));
            }
        }
        Ok(())
    }

    /// Children drafted per retained parent at `depth` (1-based).
    pub fn branching_at(&self, depth: usize, retained_parents: usize) -> usize {
        match &self.fixed_branching {
            Some(fixed) => fixed[depth - 1],
            None => self.rollout_budget.div_ceil(retained_parents),
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid rollout configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Retrieval(#[from] RetrieverError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error("every draft under node {parent} failed twice; tree cannot continue")]
    ParentStarved { parent: NodeId },
}

/// Replays root-to-`id` steps from a partially built tree.
fn state_for(builder: &TreeBuilder, context: &PromptContext, id: NodeId) -> AgentState {
    let mut steps = Vec::new();
    let mut cursor = id;
    loop {
        let node = builder.node(cursor);
        match (&node.step, node.parent_id) {
            (Some(step), Some(parent)) => {
                steps.push(step.clone());
                cursor = parent;
            }
            _ => break,
        }
    }
    steps.reverse();
    AgentState {
        context: context.clone(),
        history: steps,
    }
}

/// Drafts one child step, retrying a policy failure once on the same rng
/// stream. `Ok(None)` marks a dropped draft.
fn draft_step<P, R>(
    policy: &P,
    retriever: &R,
    cfg: &RolloutConfig,
    state: &AgentState,
    parent: NodeId,
    sample: usize,
    child_depth: usize,
) -> Result<Option<Step>, RetrieverError>
where
    P: Policy + ?Sized,
    R: Retriever + ?Sized,
{
    let mut rng = seeding::stream(
        cfg.seed,
        &[GENERATION_DOMAIN, u64::from(parent.0), sample as u64],
    );
    let draft = policy
        .generate_step(state, cfg.temperature, &mut rng)
        .or_else(|first| {
            log::warn!("policy failed under {parent} (sample {sample}): {first}; retrying once");
            policy.generate_step(state, cfg.temperature, &mut rng)
        });
    let draft = match draft {
        Ok(draft) => draft,
        Err(second) => {
            log::warn!("dropping draft under {parent} (sample {sample}): {second}");
            return Ok(None);
        }
    };
    let observation = if draft.action.is_answer() || child_depth >= cfg.max_depth {
        None
    } else {
        Some(retriever.retrieve(&draft.action.payload)?)
    };
    Ok(Some(Step::new(draft.reasoning, draft.action, observation)))
}

/// Decides which predicted child ids stay expandable for one parent.
fn retained_for_parent(
    cfg: &RolloutConfig,
    parent: NodeId,
    search_sets: &[PassageSet],
) -> Result<BTreeSet<NodeId>, PruneError> {
    if search_sets.is_empty() {
        return Ok(BTreeSet::new());
    }
    let keep = cfg.retention_budget.min(search_sets.len());
    let ids = match cfg.pruning {
        PruningMode::Similarity => pruner::select_representatives(search_sets, keep, cfg.linkage)?,
        PruningMode::Random => {
            let mut rng = seeding::stream(cfg.seed, &[RETENTION_DOMAIN, u64::from(parent.0)]);
            pruner::random_retain(search_sets, keep, &mut rng)?
        }
    };
    Ok(ids.into_iter().collect())
}

/// Builds one rollout tree for the question in `context`.
pub fn build_tree<P, R>(
    context: PromptContext,
    policy: &P,
    retriever: &R,
    cfg: &RolloutConfig,
) -> Result<Tree, EngineError>
where
    P: Policy + ?Sized,
    R: Retriever + ?Sized,
{
    cfg.validate()?;
    let mut builder = TreeBuilder::new(context.clone());
    let mut frontier = vec![NodeId(0)];

    for child_depth in 1..=cfg.max_depth {
        let branching = cfg.branching_at(child_depth, frontier.len());
        let parent_states: Vec<(NodeId, AgentState)> = frontier
            .iter()
            .map(|&id| (id, state_for(&builder, &context, id)))
            .collect();

        let jobs: Vec<(usize, usize)> = (0..parent_states.len())
            .flat_map(|p| (0..branching).map(move |s| (p, s)))
            .collect();
        let drafts: Vec<Result<Option<Step>, RetrieverError>> = jobs
            .par_iter()
            .map(|&(parent_index, sample)| {
                let (parent, state) = &parent_states[parent_index];
                draft_step(policy, retriever, cfg, state, *parent, sample, child_depth)
            })
            .collect();

        let mut next_frontier = Vec::new();
        for (parent_index, chunk) in drafts.chunks(branching).enumerate() {
            let parent = parent_states[parent_index].0;
            let mut steps = Vec::with_capacity(branching);
            for outcome in chunk {
                match outcome {
                    Ok(Some(step)) => steps.push(step.clone()),
                    Ok(None) => {}
                    Err(err) => return Err(EngineError::Retrieval(RetrieverError(err.to_string()))),
                }
            }
            if steps.is_empty() {
                return Err(EngineError::ParentStarved { parent });
            }

            let base = builder.next_id();
            let retained = if child_depth < cfg.max_depth {
                let search_sets: Vec<PassageSet> = steps
                    .iter()
                    .enumerate()
                    .filter(|(_, step)| !step.action.is_answer())
                    .map(|(offset, step)| {
                        PassageSet::new(
                            NodeId(base.0 + offset as u32),
                            step.observation.iter().flat_map(Observation::passage_ids),
                        )
                    })
                    .collect();
                retained_for_parent(cfg, parent, &search_sets)?
            } else {
                BTreeSet::new()
            };

            for step in steps {
                let id = builder.next_id();
                let status = if step.action.is_answer() || child_depth >= cfg.max_depth {
                    NodeStatus::Leaf
                } else if retained.contains(&id) {
                    NodeStatus::RetainedInternal
                } else {
                    NodeStatus::Pruned
                };
                let inserted = builder.add_child(parent, step, status)?;
                debug_assert_eq!(inserted, id);
                if status == NodeStatus::RetainedInternal {
                    next_frontier.push(id);
                }
            }
        }

        if next_frontier.is_empty() {
            break;
        }
        builder.push_layer(next_frontier.clone());
        frontier = next_frontier;
    }

    Ok(builder.finish())
}

/// Children drafted per retained parent at each expanded depth, recovered
/// from a finished tree. Panics if some parent in a layer received a
/// different child count than its peers (the engine never does this).
pub fn branching_profile(tree: &Tree) -> Vec<usize> {
    let mut per_depth: Vec<usize> = Vec::new();
    for node in &tree.nodes {
        if node.depth > 0 {
            if per_depth.len() < node.depth {
                per_depth.resize(node.depth, 0);
            }
            per_depth[node.depth - 1] += 1;
        }
    }
    per_depth
        .iter()
        .enumerate()
        .map(|(layer, &count)| {
            let parents = tree.layers[layer].len();
            assert_eq!(count % parents, 0, "uneven fan-out at depth {}", layer + 1);
            count / parents
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActionKind, PromptContext};
    use crate::policy::{Policy, PolicyError, ScriptedPolicy, StepDraft, TabularPolicy};
    use crate::sim_env::{generate_corpus, EnvConfig, SimRetriever, TaskIndex};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn fixture() -> (PromptContext, SimRetriever, Arc<TaskIndex>) {
        let corpus = Arc::new(generate_corpus(&EnvConfig::default()).unwrap());
        let tasks = Arc::new(TaskIndex::from_corpus(&corpus));
        let question = tasks.get("0").unwrap().question.clone();
        let retriever = SimRetriever::new(Arc::clone(&corpus), 3, 512);
        (PromptContext::new(question), retriever, tasks)
    }

    #[test]
    fn default_budget_gives_halving_branching() {
        let (context, retriever, tasks) = fixture();
        let policy = ScriptedPolicy::never_answer(tasks);
        let cfg = RolloutConfig::default();
        let tree = build_tree(context, &policy, &retriever, &cfg).unwrap();

        assert_eq!(branching_profile(&tree), vec![8, 4, 2, 1]);
        assert_eq!(tree.len(), 33);
        let retained_per_layer: Vec<usize> = tree.layers.iter().map(Vec::len).collect();
        assert_eq!(retained_per_layer, vec![1, 2, 4, 8]);

        // depth-limit children are leaves without observations
        for node in tree.nodes.iter().filter(|n| n.depth == cfg.max_depth) {
            assert_eq!(node.status, NodeStatus::Leaf);
            assert!(node.step.as_ref().unwrap().observation.is_none());
        }
        // interior search children carry observations and a final status
        for node in tree.nodes.iter().filter(|n| n.depth > 0 && n.depth < cfg.max_depth) {
            assert!(node.step.as_ref().unwrap().observation.is_some());
            assert_ne!(node.status, NodeStatus::Leaf);
        }
    }

    #[test]
    fn fixed_branching_overrides_the_budget() {
        let (context, retriever, tasks) = fixture();
        let policy = ScriptedPolicy::never_answer(tasks);
        let cfg = RolloutConfig {
            fixed_branching: Some(vec![9, 7, 5, 1]),
            retention_budget: 3,
            ..RolloutConfig::default()
        };
        let tree = build_tree(context, &policy, &retriever, &cfg).unwrap();
        assert_eq!(branching_profile(&tree), vec![9, 7, 5, 1]);
        assert_eq!(
            tree.layers.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![1, 3, 9, 27]
        );
        assert_eq!(tree.len(), 1 + 9 + 21 + 45 + 27);
    }

    #[test]
    fn answers_terminate_immediately() {
        let (context, retriever, tasks) = fixture();
        let policy = ScriptedPolicy::always_answer(tasks);
        let cfg = RolloutConfig::default();
        let tree = build_tree(context, &policy, &retriever, &cfg).unwrap();
        assert_eq!(tree.len(), 9);
        assert_eq!(tree.layers.len(), 1);
        for node in tree.nodes.iter().skip(1) {
            assert_eq!(node.status, NodeStatus::Leaf);
            assert_eq!(node.depth, 1);
            let step = node.step.as_ref().unwrap();
            assert_eq!(step.action.kind, ActionKind::Answer);
            assert!(step.observation.is_none());
        }
    }

    #[test]
    fn fan_out_matches_the_budget_formula_layer_by_layer() {
        let (context, retriever, tasks) = fixture();
        let policy = ScriptedPolicy::planted(tasks, 0.9, 0.1);
        for seed in 0..12 {
            let cfg = RolloutConfig { seed, ..RolloutConfig::default() };
            let tree = build_tree(context.clone(), &policy, &retriever, &cfg).unwrap();
            let mut per_depth = vec![0usize; cfg.max_depth];
            for node in tree.nodes.iter().skip(1) {
                per_depth[node.depth - 1] += 1;
            }
            for (layer, parents) in tree.layers.iter().enumerate() {
                let m = parents.len();
                let expected = m * cfg.branching_at(layer + 1, m);
                assert_eq!(per_depth[layer], expected, "seed {seed} depth {}", layer + 1);
                assert!(per_depth[layer] >= cfg.rollout_budget.min(expected));
            }
        }
    }

    #[test]
    fn same_seed_reproduces_the_tree_exactly() {
        let (context, retriever, tasks) = fixture();
        let policy = ScriptedPolicy::planted(tasks, 0.9, 0.1);
        let cfg = RolloutConfig { seed: 77, ..RolloutConfig::default() };
        let a = build_tree(context.clone(), &policy, &retriever, &cfg).unwrap();
        let b = build_tree(context.clone(), &policy, &retriever, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );

        let other = RolloutConfig { seed: 78, ..cfg };
        let c = build_tree(context, &policy, &retriever, &other).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    /// Fails its first `failures` calls, then delegates to a scripted policy.
    struct Flaky {
        inner: ScriptedPolicy,
        failures: AtomicUsize,
    }

    impl Policy for Flaky {
        fn generate_step(
            &self,
            state: &AgentState,
            temperature: f64,
            rng: &mut rand_chacha::ChaCha8Rng,
        ) -> Result<StepDraft, PolicyError> {
            if self.failures.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1)).is_ok() {
                return Err(PolicyError::Malformed("synthetic failure".into()));
            }
            self.inner.generate_step(state, temperature, rng)
        }
    }

    #[test]
    fn single_policy_failures_are_retried_in_place() {
        let (context, retriever, tasks) = fixture();
        let policy = Flaky {
            inner: ScriptedPolicy::never_answer(tasks),
            failures: AtomicUsize::new(1),
        };
        let tree = build_tree(context, &policy, &retriever, &RolloutConfig::default()).unwrap();
        assert_eq!(tree.len(), 33);
    }

    /// Always fails; every draft under the root is dropped.
    struct Broken;

    impl Policy for Broken {
        fn generate_step(
            &self,
            _state: &AgentState,
            _temperature: f64,
            _rng: &mut rand_chacha::ChaCha8Rng,
        ) -> Result<StepDraft, PolicyError> {
            Err(PolicyError::Malformed("always".into()))
        }
    }

    #[test]
    fn total_draft_failure_is_fatal() {
        let (context, retriever, _) = fixture();
        let err = build_tree(context, &Broken, &retriever, &RolloutConfig::default()).unwrap_err();
        assert!(matches!(err, EngineError::ParentStarved { parent: NodeId(0) }));
    }

    struct FailingRetriever;

    impl Retriever for FailingRetriever {
        fn retrieve(&self, _query: &str) -> Result<Observation, RetrieverError> {
            Err(RetrieverError("index offline".into()))
        }
    }

    #[test]
    fn retrieval_failure_is_fatal() {
        let (context, _, tasks) = fixture();
        let policy = ScriptedPolicy::never_answer(tasks);
        let err =
            build_tree(context, &policy, &FailingRetriever, &RolloutConfig::default()).unwrap_err();
        assert!(matches!(err, EngineError::Retrieval(_)));
    }

    #[test]
    fn random_retention_changes_survivors_somewhere() {
        let (context, retriever, tasks) = fixture();
        let policy = TabularPolicy::uniform(tasks, 4, 2);
        let mut any_difference = false;
        for seed in 0..10 {
            let similarity = RolloutConfig { seed, ..RolloutConfig::default() };
            let random = RolloutConfig {
                pruning: PruningMode::Random,
                ..similarity.clone()
            };
            let a = build_tree(context.clone(), &policy, &retriever, &similarity).unwrap();
            let b = build_tree(context.clone(), &policy, &retriever, &random).unwrap();
            if a.layers != b.layers {
                any_difference = true;
                break;
            }
        }
        assert!(any_difference, "random retention never diverged from similarity retention");
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let bad_len = RolloutConfig {
            fixed_branching: Some(vec![9, 7, 5]),
            ..RolloutConfig::default()
        };
        assert!(matches!(bad_len.validate(), Err(EngineError::Config(_))));
        let zero_budget = RolloutConfig { rollout_budget: 0, ..RolloutConfig::default() };
        assert!(zero_budget.validate().is_err());
        let cold = RolloutConfig { temperature: 0.0, ..RolloutConfig::default() };
        assert!(cold.validate().is_err());
    }
}

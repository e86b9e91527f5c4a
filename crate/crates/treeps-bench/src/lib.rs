//! Shared fixtures for the criterion benches: a small deterministic corpus
//! plus helpers that build representative inputs for each hot path.

use std::sync::Arc;

use treeps::engine::{build_tree, RolloutConfig};
use treeps::model::{NodeId, PassageId, PromptContext, Tree};
use treeps::policy::scripted::ScriptedPolicy;
use treeps::pruner::PassageSet;
use treeps::sim_env::{generate_corpus, Corpus, EnvConfig, SimRetriever, TaskIndex};

pub struct Fixture {
    pub corpus: Arc<Corpus>,
    pub tasks: Arc<TaskIndex>,
    pub retriever: SimRetriever,
}

impl Fixture {
    pub fn new() -> Self {
        let corpus = Arc::new(generate_corpus(&EnvConfig::default()).expect("default corpus"));
        let tasks = Arc::new(TaskIndex::from_corpus(&corpus));
        let retriever = SimRetriever::from_corpus(Arc::clone(&corpus));
        Fixture {
            corpus,
            tasks,
            retriever,
        }
    }

    pub fn context(&self) -> PromptContext {
        PromptContext::new(self.corpus.questions[0].clone())
    }

    /// Search-at-every-depth policy, so trees always reach the full budget.
    pub fn policy(&self) -> ScriptedPolicy {
        ScriptedPolicy::never_answer(Arc::clone(&self.tasks))
    }

    pub fn tree(&self, cfg: &RolloutConfig) -> Tree {
        build_tree(self.context(), &self.policy(), &self.retriever, cfg).expect("rollout")
    }

    /// First hop of the first task, the query shape retrieval sees most.
    pub fn typical_query(&self) -> String {
        let task = self
            .tasks
            .get(&self.corpus.questions[0].id)
            .expect("first task");
        format!("{} {}", task.entities[0], task.relations[0])
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}

/// Sibling retrieval sets with staggered overlap, the shape pruning sees.
pub fn sibling_sets(count: usize, set_size: usize) -> Vec<PassageSet> {
    (0..count)
        .map(|i| {
            let ids = (0..set_size).map(move |j| PassageId((i + j) as u32));
            PassageSet::new(NodeId(i as u32), ids)
        })
        .collect()
}

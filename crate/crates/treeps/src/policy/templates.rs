//! Action templates shared by the scripted and tabular policies.
//!
//! One template is one parametrized behaviour, instantiated against a
//! question's chain and whatever evidence the history already holds. A chain
//! hop can only be queried precisely once its head entity has been observed;
//! before that the query degrades to the bare relation, which the corpus
//! construction guarantees is swallowed by distractors. The answer template
//! commits to the chain's final entity only when the final hop's passage has
//! been observed, and to a placeholder guess otherwise.

use crate::model::{Action, AgentState, PassageId};
use crate::sim_env::ChainTask;

/// Answer emitted when the evidence does not pin down the final entity.
pub const UNSUPPORTED_ANSWER: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionTemplate {
    /// Query hop `j` of the chain.
    SearchHop(usize),
    /// Off-chain probe: the question's origin entity under a spare relation.
    NoiseSearch(usize),
    /// Commit to the answer the evidence supports.
    Answer,
}

/// The fixed template inventory for a task family: `hop_count` chain
/// queries, `noise_count` probe queries, and one answer template, in that
/// index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemplateSet {
    pub hop_count: usize,
    pub noise_count: usize,
}

impl TemplateSet {
    pub fn len(&self) -> usize {
        self.hop_count + self.noise_count + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, index: usize) -> Option<ActionTemplate> {
        if index < self.hop_count {
            Some(ActionTemplate::SearchHop(index))
        } else if index < self.hop_count + self.noise_count {
            Some(ActionTemplate::NoiseSearch(index - self.hop_count))
        } else if index == self.hop_count + self.noise_count {
            Some(ActionTemplate::Answer)
        } else {
            None
        }
    }

    pub fn answer_index(&self) -> usize {
        self.hop_count + self.noise_count
    }

    pub fn templates(&self) -> impl Iterator<Item = ActionTemplate> + '_ {
        (0..self.len()).map(|i| self.get(i).expect("index within bounds"))
    }
}

fn history_contains(state: &AgentState, passage: PassageId) -> bool {
    state
        .history
        .iter()
        .filter_map(|step| step.observation.as_ref())
        .any(|obs| obs.passage_ids().any(|id| id == passage))
}

/// The entity at chain position `j`, if the history has earned it. Position
/// 0 is given by the question itself; position `j > 0` becomes known once
/// hop `j - 1` has been observed.
pub fn known_entity<'a>(task: &'a ChainTask, state: &AgentState, position: usize) -> Option<&'a str> {
    if position == 0 {
        return Some(&task.entities[0]);
    }
    history_contains(state, task.gold_passage_ids[position - 1])
        .then(|| task.entities[position].as_str())
}

impl ActionTemplate {
    /// Concrete action for this template under `task` and `state`.
    pub fn instantiate(&self, task: &ChainTask, state: &AgentState) -> Action {
        match self {
            ActionTemplate::SearchHop(j) => {
                let relation = &task.relations[*j];
                let query = match known_entity(task, state, *j) {
                    Some(entity) => format!("{entity} {relation}"),
                    None => relation.clone(),
                };
                Action::search(query).expect("relation names are nonempty")
            }
            ActionTemplate::NoiseSearch(i) => {
                // bare off-corpus relation: matches no passage terms, so the
                // ranker falls back to the low-id distractor block
                let relation = &task.noise_relations[i % task.noise_relations.len()];
                Action::search(relation.clone()).expect("probe queries are nonempty")
            }
            ActionTemplate::Answer => {
                let final_hop = task.gold_passage_ids.len() - 1;
                let payload = if history_contains(state, task.gold_passage_ids[final_hop]) {
                    task.entities.last().expect("chains are nonempty").clone()
                } else {
                    UNSUPPORTED_ANSWER.to_owned()
                };
                Action::answer(payload).expect("answers are nonempty")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentState, PromptContext, Step};
    use crate::sim_env::{generate_corpus, retrieve, EnvConfig, TaskIndex};

    fn fixture() -> (crate::sim_env::Corpus, TaskIndex) {
        let corpus = generate_corpus(&EnvConfig::default()).unwrap();
        let tasks = TaskIndex::from_corpus(&corpus);
        (corpus, tasks)
    }

    #[test]
    fn template_indexing_is_total_and_ordered() {
        let set = TemplateSet { hop_count: 2, noise_count: 2 };
        assert_eq!(set.len(), 5);
        assert_eq!(set.get(0), Some(ActionTemplate::SearchHop(0)));
        assert_eq!(set.get(1), Some(ActionTemplate::SearchHop(1)));
        assert_eq!(set.get(2), Some(ActionTemplate::NoiseSearch(0)));
        assert_eq!(set.get(4), Some(ActionTemplate::Answer));
        assert_eq!(set.answer_index(), 4);
        assert_eq!(set.get(5), None);
    }

    #[test]
    fn hop_queries_sharpen_as_evidence_arrives() {
        let (corpus, tasks) = fixture();
        let task = tasks.get("0").unwrap();
        let state = AgentState::initial(PromptContext::new(task.question.clone()));

        // before any evidence: hop 0 is fully specified, hop 1 is bare
        let q0 = ActionTemplate::SearchHop(0).instantiate(task, &state);
        assert_eq!(q0.payload, format!("{} {}", task.entities[0], task.relations[0]));
        let q1 = ActionTemplate::SearchHop(1).instantiate(task, &state);
        assert_eq!(q1.payload, task.relations[1]);
        // and the answer is only a guess
        let a = ActionTemplate::Answer.instantiate(task, &state);
        assert_eq!(a.payload, UNSUPPORTED_ANSWER);

        // observe hop 0, then hop 1 becomes a precise query
        let obs = retrieve(&q0.payload, &corpus, 3, 512);
        let state = state
            .append_step(Step::new("", q0, Some(obs)), 4)
            .unwrap();
        let q1 = ActionTemplate::SearchHop(1).instantiate(task, &state);
        assert_eq!(q1.payload, format!("{} {}", task.entities[1], task.relations[1]));

        // observe hop 1, then the answer template commits to gold
        let obs = retrieve(&q1.payload, &corpus, 3, 512);
        let state = state
            .append_step(Step::new("", q1, Some(obs)), 4)
            .unwrap();
        let a = ActionTemplate::Answer.instantiate(task, &state);
        assert_eq!(a.payload, task.question.gold_answer);
    }

    #[test]
    fn distinct_templates_instantiate_distinct_actions() {
        let (_, tasks) = fixture();
        let task = tasks.get("1").unwrap();
        let state = AgentState::initial(PromptContext::new(task.question.clone()));
        let set = TemplateSet { hop_count: 2, noise_count: 2 };
        let actions: Vec<Action> = set.templates().map(|t| t.instantiate(task, &state)).collect();
        for i in 0..actions.len() {
            for j in (i + 1)..actions.len() {
                assert_ne!(actions[i], actions[j]);
            }
        }
    }
}

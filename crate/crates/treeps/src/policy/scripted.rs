//! Rule-table policies with known statistics.
//!
//! A scripted policy picks among a small set of choices with fixed
//! probabilities, optionally conditioned on step depth and on how the
//! trajectory opened. Tests use these to plant a known credit structure in a
//! tree (one opening move is good, the other bad) and then check that value
//! and advantage estimates recover it.

use super::templates::ActionTemplate;
use super::{Policy, PolicyError, StepDraft};
use crate::model::{Action, AgentState};
use crate::sim_env::{ChainTask, TaskIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Deliberately wrong answer payload; never normalizes equal to a gold
/// answer because gold answers are generated entity names.
pub const WRONG_ANSWER: &str = "certainly not";

/// One sampleable move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptChoice {
    SearchHop(usize),
    NoiseSearch(usize),
    AnswerCorrect,
    AnswerWrong,
}

/// Gate on the trajectory so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptCondition {
    Always,
    /// The first step searched for chain hop `h` (matched by exact query).
    FirstSearchHop(usize),
}

/// First matching rule wins; `depth: None` matches any depth.
#[derive(Debug, Clone)]
pub struct ScriptRule {
    pub depth: Option<usize>,
    pub condition: ScriptCondition,
    pub choices: Vec<(ScriptChoice, f64)>,
}

#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    tasks: Arc<TaskIndex>,
    rules: Vec<ScriptRule>,
}

impl ScriptedPolicy {
    pub fn new(tasks: Arc<TaskIndex>, rules: Vec<ScriptRule>) -> Self {
        assert!(!rules.is_empty(), "a scripted policy needs at least one rule");
        for rule in &rules {
            assert!(!rule.choices.is_empty(), "every rule needs choices");
            assert!(
                rule.choices.iter().all(|(_, w)| *w >= 0.0)
                    && rule.choices.iter().map(|(_, w)| w).sum::<f64>() > 0.0,
                "choice weights must be nonnegative with positive total"
            );
        }
        ScriptedPolicy { tasks, rules }
    }

    /// Immediately answers with the gold answer.
    pub fn always_answer(tasks: Arc<TaskIndex>) -> Self {
        Self::new(
            tasks,
            vec![ScriptRule {
                depth: None,
                condition: ScriptCondition::Always,
                choices: vec![(ScriptChoice::AnswerCorrect, 1.0)],
            }],
        )
    }

    /// Searches forever; exercises forced termination at the depth limit.
    pub fn never_answer(tasks: Arc<TaskIndex>) -> Self {
        Self::new(
            tasks,
            vec![ScriptRule {
                depth: None,
                condition: ScriptCondition::Always,
                choices: vec![(ScriptChoice::SearchHop(0), 1.0)],
            }],
        )
    }

    /// Plants an asymmetric opening: half the trajectories open with the
    /// useful hop-0 search and then answer correctly with probability
    /// `p_good`; the other half open with a noise search and answer
    /// correctly with probability `p_bad`.
    pub fn planted(tasks: Arc<TaskIndex>, p_good: f64, p_bad: f64) -> Self {
        assert!((0.0..=1.0).contains(&p_good) && (0.0..=1.0).contains(&p_bad));
        Self::new(
            tasks,
            vec![
                ScriptRule {
                    depth: Some(0),
                    condition: ScriptCondition::Always,
                    choices: vec![
                        (ScriptChoice::SearchHop(0), 0.5),
                        (ScriptChoice::NoiseSearch(0), 0.5),
                    ],
                },
                ScriptRule {
                    depth: None,
                    condition: ScriptCondition::FirstSearchHop(0),
                    choices: vec![
                        (ScriptChoice::AnswerCorrect, p_good),
                        (ScriptChoice::AnswerWrong, 1.0 - p_good),
                    ],
                },
                ScriptRule {
                    depth: None,
                    condition: ScriptCondition::Always,
                    choices: vec![
                        (ScriptChoice::AnswerCorrect, p_bad),
                        (ScriptChoice::AnswerWrong, 1.0 - p_bad),
                    ],
                },
            ],
        )
    }

    fn task_for(&self, state: &AgentState) -> Result<&ChainTask, PolicyError> {
        let id = &state.context.question.id;
        self.tasks
            .get(id)
            .ok_or_else(|| PolicyError::UnknownQuestion(id.clone()))
    }

    fn condition_holds(condition: ScriptCondition, task: &ChainTask, state: &AgentState) -> bool {
        match condition {
            ScriptCondition::Always => true,
            ScriptCondition::FirstSearchHop(hop) => {
                let Some(first) = state.history.first() else {
                    return false;
                };
                let opening = AgentState::initial(state.context.clone());
                first.action == ActionTemplate::SearchHop(hop).instantiate(task, &opening)
            }
        }
    }

    fn instantiate(choice: ScriptChoice, task: &ChainTask, state: &AgentState) -> Action {
        match choice {
            ScriptChoice::SearchHop(hop) => ActionTemplate::SearchHop(hop).instantiate(task, state),
            ScriptChoice::NoiseSearch(slot) => {
                ActionTemplate::NoiseSearch(slot).instantiate(task, state)
            }
            ScriptChoice::AnswerCorrect => Action::answer(&task.question.gold_answer)
                .expect("gold answers are nonempty"),
            ScriptChoice::AnswerWrong => {
                Action::answer(WRONG_ANSWER).expect("constant is nonempty")
            }
        }
    }
}

impl Policy for ScriptedPolicy {
    fn generate_step(
        &self,
        state: &AgentState,
        _temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<StepDraft, PolicyError> {
        let task = self.task_for(state)?;
        let depth = state.history.len();
        let rule = self
            .rules
            .iter()
            .find(|rule| {
                rule.depth.is_none_or(|d| d == depth)
                    && Self::condition_holds(rule.condition, task, state)
            })
            .ok_or(PolicyError::NoScriptRule { depth })?;
        let total: f64 = rule.choices.iter().map(|(_, w)| w).sum();
        let draw: f64 = rng.gen::<f64>() * total;
        let mut cumulative = 0.0;
        let mut picked = rule.choices.last().expect("rules are nonempty").0;
        for &(choice, weight) in &rule.choices {
            cumulative += weight;
            if draw < cumulative {
                picked = choice;
                break;
            }
        }
        Ok(StepDraft {
            reasoning: String::new(),
            action: Self::instantiate(picked, task, state),
        })
    }
}

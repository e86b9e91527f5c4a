//! Policies: everything that can propose the next step.
//!
//! A policy turns an agent state into a reasoning string plus one committed
//! action. Three implementations live here: table-driven stochastic scripts
//! (fixtures and ablation baselines), a trainable tabular softmax policy over
//! action templates, and a client for a remote text-generation endpoint whose
//! raw completions are parsed by tag conventions.
//!
//! Generation wraps content in the four tags of a [`TagSet`]; parsing is the
//! inverse and accepts exactly one well-formed action pair per completion
//! (the earliest one wins, trailing text is discarded).

pub mod remote;
pub mod scripted;
pub mod tabular;
mod templates;

pub use remote::{remote_generate, RemoteEndpointConfig, RemotePolicy};
pub use scripted::{ScriptChoice, ScriptCondition, ScriptRule, ScriptedPolicy};
pub use tabular::{TabularParams, TabularPolicy};
pub use templates::{ActionTemplate, TemplateSet};

use crate::model::{Action, ActionKind, AgentState, Observation, Step, TagSet, QUESTION_PLACEHOLDER};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// A proposed step before the environment reacts: reasoning plus action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepDraft {
    pub reasoning: String,
    pub action: Action,
}

/// Anything that can propose the next step. Implementations must be safe to
/// call from concurrent rollout tasks; all sampling goes through the caller's
/// RNG so results depend only on the stream handed in.
pub trait Policy: Sync {
    fn generate_step(
        &self,
        state: &AgentState,
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<StepDraft, PolicyError>;
}

/// Byte range of the first well-formed `<tag>...</tag>` pair: returns
/// (open position, content range).
fn find_pair(raw: &str, tags: &TagSet, name: &str) -> Option<(usize, std::ops::Range<usize>)> {
    let open = tags.open(name);
    let close = tags.close(name);
    let mut search_from = 0;
    while let Some(relative) = raw[search_from..].find(&open) {
        let open_at = search_from + relative;
        let content_start = open_at + open.len();
        if let Some(close_relative) = raw[content_start..].find(&close) {
            return Some((open_at, content_start..content_start + close_relative));
        }
        search_from = content_start;
    }
    None
}

/// Parses a raw completion into (reasoning, action).
///
/// The action is the earliest well-formed search or answer pair; anything
/// after it is discarded. Reasoning comes from a reason pair opening before
/// the action, or failing that from the untagged prefix. A completion with
/// no complete action pair, or an action with an empty payload, is malformed.
pub fn parse_action(raw: &str, tags: &TagSet) -> Result<(String, Action), PolicyError> {
    let search = find_pair(raw, tags, &tags.search);
    let answer = find_pair(raw, tags, &tags.answer);
    let (kind, open_at, content) = match (search, answer) {
        (Some((s_at, s_range)), Some((a_at, a_range))) => {
            if s_at < a_at {
                (ActionKind::Search, s_at, s_range)
            } else {
                (ActionKind::Answer, a_at, a_range)
            }
        }
        (Some((at, range)), None) => (ActionKind::Search, at, range),
        (None, Some((at, range))) => (ActionKind::Answer, at, range),
        (None, None) => {
            return Err(PolicyError::Malformed(
                "no complete search or answer tag pair".to_owned(),
            ))
        }
    };
    let action = Action::new(kind, &raw[content])
        .map_err(|_| PolicyError::Malformed("action payload is empty".to_owned()))?;

    let reasoning = match find_pair(raw, tags, &tags.reason) {
        Some((at, range)) if at < open_at => raw[range].trim().to_owned(),
        _ => raw[..open_at].trim().to_owned(),
    };
    Ok((reasoning, action))
}

/// Renders the generated half of a step (reasoning and action tags; no
/// observation). Empty reasoning renders no reason block at all, so
/// rendering and parsing are mutual inverses on trimmed content.
pub fn render_step_generated(reasoning: &str, action: &Action, tags: &TagSet) -> String {
    let mut out = String::new();
    if !reasoning.is_empty() {
        out.push_str(&tags.open(&tags.reason));
        out.push_str(reasoning);
        out.push_str(&tags.close(&tags.reason));
    }
    let tag = match action.kind {
        ActionKind::Search => &tags.search,
        ActionKind::Answer => &tags.answer,
    };
    out.push_str(&tags.open(tag));
    out.push_str(&action.payload);
    out.push_str(&tags.close(tag));
    out
}

/// The observation text as the agent consumed it: passage texts in rank
/// order, space-joined. Token accounting for observations runs over this.
pub fn render_observation_text(observation: &Observation) -> String {
    observation
        .passages
        .iter()
        .map(|p| p.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

fn render_information_block(observation: &Observation, tags: &TagSet) -> String {
    format!(
        "{}{}{}",
        tags.open(&tags.information),
        render_observation_text(observation),
        tags.close(&tags.information)
    )
}

/// Full prompt for a remote generator: instruction template with the
/// question substituted, followed by the history rendered step by step with
/// observations in information blocks.
pub fn render_prompt(state: &AgentState) -> String {
    let template = &state.context.template;
    let mut prompt = template
        .text
        .replace(QUESTION_PLACEHOLDER, &state.context.question.text);
    for step in &state.history {
        prompt.push('\n');
        prompt.push_str(&render_step_generated(&step.reasoning, &step.action, &template.tags));
        if let Some(observation) = &step.observation {
            prompt.push('\n');
            prompt.push_str(&render_information_block(observation, &template.tags));
        }
    }
    prompt
}

/// Renders a full step for audit output: generated text, then the
/// observation text if any, separated by one space.
pub fn render_step_full(step: &Step, tags: &TagSet) -> String {
    let mut out = render_step_generated(&step.reasoning, &step.action, tags);
    if let Some(observation) = &step.observation {
        out.push(' ');
        out.push_str(&render_observation_text(observation));
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("malformed generation: {0}")]
    Malformed(String),
    #[error("no chain task known for question {0}")]
    UnknownQuestion(String),
    #[error("action does not match any template: {0}")]
    UnknownTemplate(String),
    #[error("no script rule covers depth {depth}")]
    NoScriptRule { depth: usize },
    #[error("remote endpoint returned status {0}")]
    RemoteStatus(u16),
    #[error("remote transport failure: {0}")]
    RemoteTransport(String),
    #[error("remote response did not match the expected schema: {0}")]
    RemoteSchema(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PromptContext, Question};
    use proptest::prelude::*;

    fn tags() -> TagSet {
        TagSet::default()
    }

    #[test]
    fn parses_reasoned_search() {
        let raw = "<reason>need founder</reason><search>who founded X</search>";
        let (reasoning, action) = parse_action(raw, &tags()).unwrap();
        assert_eq!(reasoning, "need founder");
        assert_eq!(action.kind, ActionKind::Search);
        assert_eq!(action.payload, "who founded X");
    }

    #[test]
    fn parses_bare_answer_with_empty_reasoning() {
        let (reasoning, action) = parse_action("<answer>Paris</answer>", &tags()).unwrap();
        assert_eq!(reasoning, "");
        assert_eq!(action.kind, ActionKind::Answer);
        assert_eq!(action.payload, "Paris");
    }

    #[test]
    fn unclosed_tag_is_malformed() {
        assert!(matches!(
            parse_action("<search>unclosed", &tags()),
            Err(PolicyError::Malformed(_))
        ));
        assert!(matches!(
            parse_action("no tags here", &tags()),
            Err(PolicyError::Malformed(_))
        ));
        assert!(matches!(
            parse_action("<answer>   </answer>", &tags()),
            Err(PolicyError::Malformed(_))
        ));
    }

    #[test]
    fn earliest_action_pair_wins_and_trailing_text_is_dropped() {
        let raw = "<search>first</search><answer>second</answer> trailing";
        let (_, action) = parse_action(raw, &tags()).unwrap();
        assert_eq!(action.kind, ActionKind::Search);
        assert_eq!(action.payload, "first");

        let raw = "<answer>early</answer><search>late</search>";
        let (_, action) = parse_action(raw, &tags()).unwrap();
        assert_eq!(action.kind, ActionKind::Answer);
        assert_eq!(action.payload, "early");
    }

    #[test]
    fn untagged_prefix_becomes_reasoning() {
        let (reasoning, action) = parse_action("hmm, try looking <search>q</search>", &tags()).unwrap();
        assert_eq!(reasoning, "hmm, try looking");
        assert_eq!(action.payload, "q");
    }

    #[test]
    fn renamed_tags_round_trip() {
        let custom = TagSet {
            reason: "think".to_owned(),
            search: "query".to_owned(),
            information: "docs".to_owned(),
            answer: "final".to_owned(),
        };
        let action = Action::search("renamed tags").unwrap();
        let rendered = render_step_generated("because", &action, &custom);
        assert_eq!(rendered, "<think>because</think><query>renamed tags</query>");
        let (reasoning, parsed) = parse_action(&rendered, &custom).unwrap();
        assert_eq!(reasoning, "because");
        assert_eq!(parsed, action);
    }

    #[test]
    fn prompt_carries_question_and_history() {
        let question = Question {
            id: "7".to_owned(),
            text: "who kept the lighthouse?".to_owned(),
            gold_answer: "maren".to_owned(),
        };
        let state = AgentState::initial(PromptContext::new(question));
        let prompt = render_prompt(&state);
        assert!(prompt.contains("who kept the lighthouse?"));
        assert!(!prompt.contains(QUESTION_PLACEHOLDER));

        let step = Step::new(
            "look it up",
            Action::search("lighthouse keeper").unwrap(),
            Some(Observation {
                passages: vec![crate::model::Passage {
                    id: crate::model::PassageId(3),
                    text: "maren kept the lighthouse".to_owned(),
                }],
                truncated_token_count: 4,
            }),
        );
        let deeper = state.append_step(step, 4).unwrap();
        let prompt = render_prompt(&deeper);
        assert!(prompt.contains("<search>lighthouse keeper</search>"));
        assert!(prompt.contains("<information>maren kept the lighthouse</information>"));
    }

    proptest! {
        #[test]
        fn rendering_then_parsing_is_identity(
            reasoning in "[a-zA-Z0-9 ,.?]{0,40}",
            payload in "[a-zA-Z0-9 ,.?]{0,40}",
            is_answer in any::<bool>(),
        ) {
            // well-formed inputs: trimmed reasoning, nonempty trimmed payload
            let reasoning = reasoning.trim().to_owned();
            let payload = payload.trim().to_owned();
            prop_assume!(!payload.is_empty());
            let action = if is_answer {
                Action::answer(payload).unwrap()
            } else {
                Action::search(payload).unwrap()
            };
            let rendered = render_step_generated(&reasoning, &action, &tags());
            let (parsed_reasoning, parsed_action) = parse_action(&rendered, &tags()).unwrap();
            prop_assert_eq!(parsed_reasoning, reasoning);
            prop_assert_eq!(parsed_action, action);
        }
    }
}

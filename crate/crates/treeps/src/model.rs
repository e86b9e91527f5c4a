//! Data model for rollout trees.
//!
//! A tree is grown layer by layer: every node below the root carries the
//! [`Step`] that produced it, so a root-to-leaf walk replays one complete
//! interaction with the environment. Nodes are identified by creation order,
//! which is layer-major and, within a layer, parent-major; child ids are
//! therefore always larger than their parent's, and a reverse id sweep visits
//! children before parents.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Identifier of a passage in a retrieval corpus.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct PassageId(pub u32);

impl fmt::Display for PassageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Identifier of a node within one tree, assigned in creation order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// A question posed to the agent together with its reference answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub gold_answer: String,
}

/// Names of the four interaction tags. All four must be distinct and
/// nonempty; rendering and parsing both go through this set, so renaming a
/// tag here renames it everywhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSet {
    pub reason: String,
    pub search: String,
    pub information: String,
    pub answer: String,
}

impl Default for TagSet {
    fn default() -> Self {
        TagSet {
            reason: "reason".to_owned(),
            search: "search".to_owned(),
            information: "information".to_owned(),
            answer: "answer".to_owned(),
        }
    }
}

impl TagSet {
    pub fn validate(&self) -> Result<(), ModelError> {
        let names = [&self.reason, &self.search, &self.information, &self.answer];
        for (i, a) in names.iter().enumerate() {
            if a.is_empty() {
                return Err(ModelError::InvalidTagSet);
            }
            if names[i + 1..].contains(a) {
                return Err(ModelError::InvalidTagSet);
            }
        }
        Ok(())
    }

    pub fn open(&self, name: &str) -> String {
        format!("<{name}>")
    }

    pub fn close(&self, name: &str) -> String {
        format!("</{name}>")
    }
}

/// Instruction prose shown to the policy before the first step. The
/// `{input_question}` placeholder is replaced with the question text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub text: String,
    pub tags: TagSet,
}

pub const QUESTION_PLACEHOLDER: &str = "{input_question}";

impl Default for PromptTemplate {
    fn default() -> Self {
        let text = "Work towards the final answer in rounds. In each round, first lay out \
                    your thinking inside <reason>...</reason>. Then either request evidence \
                    with a query inside <search>...</search>, or finish with the short final \
                    answer inside <answer>...</answer>. Retrieved passages will be shown to \
                    you inside <information>...</information>. Question: {input_question}"
            .to_owned();
        PromptTemplate {
            text,
            tags: TagSet::default(),
        }
    }
}

/// A question bound to the prompt template it will be asked under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub template: PromptTemplate,
    pub question: Question,
}

impl PromptContext {
    pub fn new(question: Question) -> Self {
        PromptContext {
            template: PromptTemplate::default(),
            question,
        }
    }
}

/// What kind of action a step commits to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Search,
    Answer,
}

/// A committed action. The payload is a search query or an answer string and
/// is guaranteed nonempty after trimming.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    pub payload: String,
}

impl Action {
    pub fn new(kind: ActionKind, payload: impl Into<String>) -> Result<Self, ModelError> {
        let payload = payload.into().trim().to_owned();
        if payload.is_empty() {
            return Err(ModelError::EmptyPayload);
        }
        Ok(Action { kind, payload })
    }

    pub fn search(query: impl Into<String>) -> Result<Self, ModelError> {
        Action::new(ActionKind::Search, query)
    }

    pub fn answer(text: impl Into<String>) -> Result<Self, ModelError> {
        Action::new(ActionKind::Answer, text)
    }

    pub fn is_answer(&self) -> bool {
        self.kind == ActionKind::Answer
    }
}

/// One retrieved passage as the agent saw it (possibly truncated).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: PassageId,
    pub text: String,
}

/// Result of one retrieval call: at most K passages in rank order, with the
/// total token count that survived the combined truncation cap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub passages: Vec<Passage>,
    pub truncated_token_count: u32,
}

impl Observation {
    pub fn passage_ids(&self) -> impl Iterator<Item = PassageId> + '_ {
        self.passages.iter().map(|p| p.id)
    }
}

/// One generated step: free-form reasoning, a committed action, and the
/// observation the environment returned. The observation is present exactly
/// when the action is a search, except for searches forcibly terminated at
/// the depth limit, which carry none.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub reasoning: String,
    pub action: Action,
    pub observation: Option<Observation>,
}

impl Step {
    pub fn new(reasoning: impl Into<String>, action: Action, observation: Option<Observation>) -> Self {
        Step {
            reasoning: reasoning.into(),
            action,
            observation,
        }
    }
}

/// The information available to the policy when it generates the next step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub context: PromptContext,
    pub history: Vec<Step>,
}

impl AgentState {
    pub fn initial(context: PromptContext) -> Self {
        AgentState {
            context,
            history: Vec::new(),
        }
    }

    /// Depth of the node the next generated step would create.
    pub fn next_depth(&self) -> usize {
        self.history.len() + 1
    }

    /// Returns a new state extended by `step`. Fails once the history already
    /// holds `max_depth` steps, since no further step may be generated.
    pub fn append_step(&self, step: Step, max_depth: usize) -> Result<AgentState, ModelError> {
        if self.history.len() >= max_depth {
            return Err(ModelError::DepthLimitExceeded { max_depth });
        }
        let mut history = self.history.clone();
        history.push(step);
        Ok(AgentState {
            context: self.context.clone(),
            history,
        })
    }

    pub fn last_observation(&self) -> Option<&Observation> {
        self.history.last().and_then(|s| s.observation.as_ref())
    }
}

/// Lifecycle of a node after its layer has been pruned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    /// Survived pruning and will be (or was) expanded.
    RetainedInternal,
    /// Terminal: an answer node, or a search node cut off at the depth limit.
    Leaf,
    /// Dropped by pruning; kept for inspection, excluded from credit.
    Pruned,
}

/// One node of a rollout tree. The root carries no step; every other node
/// carries exactly one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub node_id: NodeId,
    pub parent_id: Option<NodeId>,
    pub depth: usize,
    pub step: Option<Step>,
    pub status: NodeStatus,
}

impl Node {
    pub fn is_root(&self) -> bool {
        self.parent_id.is_none()
    }

    pub fn action(&self) -> Option<&Action> {
        self.step.as_ref().map(|s| &s.action)
    }

    /// A node is terminal when it committed to an answer or sits at the
    /// depth limit. The root is never terminal.
    pub fn is_terminal(&self, max_depth: usize) -> bool {
        match &self.step {
            Some(step) => step.action.is_answer() || self.depth >= max_depth,
            None => false,
        }
    }
}

/// A frozen rollout tree. `layers[d]` lists the retained parent set at depth
/// `d` in creation order; `layers[0]` is always just the root. Pruned nodes
/// stay in `nodes` (with their observation) so trees can be audited, but they
/// never appear in `layers`, never have children, and are skipped by credit
/// estimation and path extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub question_id: String,
    pub context: PromptContext,
    pub nodes: Vec<Node>,
    pub layers: Vec<Vec<NodeId>>,
}

impl Tree {
    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Child lists indexed by node id, rebuilt from parent pointers.
    pub fn children_index(&self) -> Vec<Vec<NodeId>> {
        let mut children = vec![Vec::new(); self.nodes.len()];
        for node in &self.nodes {
            if let Some(parent) = node.parent_id {
                children[parent.index()].push(node.node_id);
            }
        }
        children
    }

    /// Ids of all leaves, in id (creation) order.
    pub fn leaf_ids(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.status == NodeStatus::Leaf)
            .map(|n| n.node_id)
            .collect()
    }

    /// Root-to-node id path.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cursor = id;
        while let Some(parent) = self.node(cursor).parent_id {
            path.push(parent);
            cursor = parent;
        }
        path.reverse();
        path
    }

    /// Replays the steps along the path to `id` into an agent state. The
    /// resulting history has one step per non-root node on the path.
    pub fn state_at(&self, id: NodeId) -> AgentState {
        let mut history = Vec::new();
        for node_id in self.path_to(id) {
            if let Some(step) = &self.node(node_id).step {
                history.push(step.clone());
            }
        }
        AgentState {
            context: self.context.clone(),
            history,
        }
    }
}

/// Single-writer assembly handle for [`Tree`]. The engine (and test fixtures)
/// appends nodes in creation order; once `finish` runs the tree is plain data.
#[derive(Debug)]
pub struct TreeBuilder {
    tree: Tree,
}

impl TreeBuilder {
    pub fn new(context: PromptContext) -> Self {
        let root = Node {
            node_id: NodeId(0),
            parent_id: None,
            depth: 0,
            step: None,
            status: NodeStatus::RetainedInternal,
        };
        TreeBuilder {
            tree: Tree {
                question_id: context.question.id.clone(),
                context,
                nodes: vec![root],
                layers: vec![vec![NodeId(0)]],
            },
        }
    }

    pub fn root_id(&self) -> NodeId {
        NodeId(0)
    }

    /// Id the next inserted node will receive.
    pub fn next_id(&self) -> NodeId {
        NodeId(self.tree.nodes.len() as u32)
    }

    pub fn node(&self, id: NodeId) -> &Node {
        self.tree.node(id)
    }

    /// Appends a child under `parent`. Only retained nodes may receive
    /// children, and answer steps must be inserted as leaves.
    pub fn add_child(
        &mut self,
        parent: NodeId,
        step: Step,
        status: NodeStatus,
    ) -> Result<NodeId, ModelError> {
        let parent_node = self
            .tree
            .nodes
            .get(parent.index())
            .ok_or(ModelError::MissingParent(parent))?;
        if parent_node.status != NodeStatus::RetainedInternal {
            return Err(ModelError::ParentNotExpandable(parent));
        }
        if step.action.is_answer() && status != NodeStatus::Leaf {
            return Err(ModelError::AnswerMustBeLeaf);
        }
        let node_id = self.next_id();
        let depth = parent_node.depth + 1;
        self.tree.nodes.push(Node {
            node_id,
            parent_id: Some(parent),
            depth,
            step: Some(step),
            status,
        });
        Ok(node_id)
    }

    /// Records the retained parent set for the depth just expanded.
    pub fn push_layer(&mut self, retained: Vec<NodeId>) {
        self.tree.layers.push(retained);
    }

    pub fn finish(self) -> Tree {
        self.tree
    }
}

/// One root-to-leaf path lifted out of a tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question_id: String,
    pub steps: Vec<Step>,
    pub leaf_node_id: NodeId,
    /// Path node ids from root to leaf; `steps[i]` belongs to `node_ids[i+1]`.
    pub node_ids: Vec<NodeId>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("history already holds {max_depth} steps; the depth limit is reached")]
    DepthLimitExceeded { max_depth: usize },
    #[error("action payload is empty after trimming")]
    EmptyPayload,
    #[error("parent node {0} does not exist")]
    MissingParent(NodeId),
    #[error("parent node {0} is a leaf or pruned and cannot receive children")]
    ParentNotExpandable(NodeId),
    #[error("answer steps must be inserted as leaves")]
    AnswerMustBeLeaf,
    #[error("tag names must be distinct and nonempty")]
    InvalidTagSet,
}

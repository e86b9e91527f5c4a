//! Tree-structured rollout engine for retrieval-augmented question answering.
//!
//! A rollout starts from a question, expands layer by layer into a tree of
//! reasoning/search/answer steps, prunes redundant search branches by the
//! similarity of what they retrieved, and scores every surviving node with a
//! Monte Carlo value estimated from the rewards of its descendant leaves.
//! Per-step advantages derived from those values feed a clipped policy
//! gradient update, so intermediate search behaviour is trained without any
//! human step labels or a learned value model.
//!
//! Module map:
//! - [`model`]: tree, step, and trajectory data types shared by everything else
//! - [`engine`]: layer-wise generate-then-prune tree construction
//! - [`pruner`]: Jaccard distance, agglomerative clustering, representative picks
//! - [`credit`]: exact-match rewards, bottom-up values, process advantages
//! - [`experience`]: root-to-leaf path extraction and token-level batches
//! - [`sim_env`]: synthetic multi-hop corpus plus a deterministic lexical retriever
//! - [`policy`]: action parsing, scripted/tabular samplers, remote HTTP generation
//! - [`trainer`]: clipped surrogate objective with exact KL penalty and ablations

pub mod credit;
pub mod engine;
pub mod experience;
pub mod model;
pub mod policy;
pub mod pruner;
pub mod seeding;
pub mod sim_env;
pub mod trainer;

pub use engine::{build_tree, RolloutConfig};
pub use model::{
    Action, ActionKind, AgentState, Node, NodeId, NodeStatus, Observation, Passage, PassageId,
    PromptContext, PromptTemplate, Question, Step, TagSet, Trajectory, Tree,
};

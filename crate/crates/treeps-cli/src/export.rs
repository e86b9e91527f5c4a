//! Serializable artifact schemas and Graphviz rendering.
//!
//! `TreeDocument` flattens a rollout tree and its credit table into one
//! self-describing JSON file; `render_dot` turns that document into a DOT
//! graph for visual inspection. Policy and training outputs get their own
//! document types so every artifact carries the digest of the configuration
//! that produced it.

use crate::config::RunConfig;
use serde::{Deserialize, Serialize};
use treeps::credit::CreditTable;
use treeps::model::{ActionKind, NodeStatus, Step, Tree};
use treeps::policy::tabular::TabularParams;
use treeps::trainer::IterationMetrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDocument {
    pub id: u32,
    pub parent: Option<u32>,
    pub depth: usize,
    pub status: NodeStatus,
    pub step: Option<Step>,
    pub value: Option<f64>,
    pub leaf_count: Option<u64>,
    pub advantage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub question_id: String,
    pub question_text: String,
    pub config_digest: String,
    pub nodes: Vec<NodeDocument>,
    /// Retained node ids per depth, in creation order.
    pub layers: Vec<Vec<u32>>,
}

impl TreeDocument {
    pub fn from_parts(tree: &Tree, credit: &CreditTable, config_digest: String) -> Self {
        let nodes = tree
            .nodes
            .iter()
            .map(|node| {
                let entry = credit.get(node.node_id.index()).and_then(|c| c.as_ref());
                NodeDocument {
                    id: node.node_id.0,
                    parent: node.parent_id.map(|p| p.0),
                    depth: node.depth,
                    status: node.status,
                    step: node.step.clone(),
                    value: entry.map(|c| c.value),
                    leaf_count: entry.map(|c| c.leaf_count),
                    advantage: entry.and_then(|c| c.advantage),
                }
            })
            .collect();
        TreeDocument {
            question_id: tree.question_id.clone(),
            question_text: tree.context.question.text.clone(),
            config_digest,
            nodes,
            layers: tree
                .layers
                .iter()
                .map(|layer| layer.iter().map(|id| id.0).collect())
                .collect(),
        }
    }
}

fn escape_label(text: &str) -> String {
    text.replace('\\', "\\\\").replace('"', "\\\"")
}

fn node_label(node: &NodeDocument) -> String {
    let mut lines = vec![format!("n{}", node.id)];
    if let Some(step) = &node.step {
        let verb = match step.action.kind {
            ActionKind::Search => "search",
            ActionKind::Answer => "answer",
        };
        let mut payload = step.action.payload.clone();
        if payload.len() > 24 {
            payload.truncate(21);
            payload.push_str("...");
        }
        lines.push(format!("{verb}: {payload}"));
    }
    match (node.value, node.advantage) {
        (Some(v), Some(a)) => lines.push(format!("V={v:.2} A={a:+.2}")),
        (Some(v), None) => lines.push(format!("V={v:.2}")),
        _ => {}
    }
    escape_label(&lines.join("\\n"))
}

/// Graphviz rendering: leaves are double circles, pruned nodes dashed.
pub fn render_dot(doc: &TreeDocument) -> String {
    let mut out = String::from("digraph rollout {\n  rankdir=TB;\n  node [shape=circle fontsize=10];\n");
    for node in &doc.nodes {
        let mut attrs = vec![format!("label=\"{}\"", node_label(node))];
        match node.status {
            NodeStatus::Leaf => attrs.push("shape=doublecircle".into()),
            NodeStatus::Pruned => attrs.push("style=dashed".into()),
            NodeStatus::RetainedInternal => {}
        }
        out.push_str(&format!("  n{} [{}];\n", node.id, attrs.join(" ")));
    }
    for node in &doc.nodes {
        if let Some(parent) = node.parent {
            let style = if node.status == NodeStatus::Pruned {
                " [style=dashed]"
            } else {
                ""
            };
            out.push_str(&format!("  n{parent} -> n{}{};\n", node.id, style));
        }
    }
    out.push_str("}\n");
    out
}

/// A trained tabular policy with enough shape information to rebuild it
/// against a matching corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDocument {
    pub hop_count: usize,
    pub noise_templates: usize,
    pub max_depth: usize,
    pub temperature: f64,
    pub config_digest: String,
    pub params: TabularParams,
}

/// Full training trace: the resolved configuration and per-iteration stats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub config: RunConfig,
    pub iterations: Vec<IterationMetrics>,
    pub final_mean_reward: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use treeps::credit::score_tree;
    use treeps::engine::{build_tree, RolloutConfig};
    use treeps::model::PromptContext;
    use treeps::policy::scripted::ScriptedPolicy;
    use treeps::sim_env::{generate_corpus, EnvConfig, SimRetriever, TaskIndex};

    fn scored_doc() -> TreeDocument {
        let corpus = Arc::new(generate_corpus(&EnvConfig::default()).unwrap());
        let tasks = Arc::new(TaskIndex::from_corpus(&corpus));
        // searches at every depth, so the tree fills the whole budget
        let policy = ScriptedPolicy::never_answer(Arc::clone(&tasks));
        let retriever = SimRetriever::from_corpus(corpus.clone());
        let context = PromptContext::new(corpus.questions[0].clone());
        let cfg = RolloutConfig::default();
        let tree = build_tree(context, &policy, &retriever, &cfg).unwrap();
        let (_, credit) = score_tree(&tree).unwrap();
        TreeDocument::from_parts(&tree, &credit, "deadbeef".into())
    }

    #[test]
    fn document_mirrors_tree_and_credit() {
        let doc = scored_doc();
        assert_eq!(doc.nodes.len(), 33);
        assert_eq!(doc.nodes[0].id, 0);
        assert_eq!(doc.nodes[0].parent, None);
        assert!(doc.nodes[0].value.is_some());
        assert!(doc.nodes[0].advantage.is_none());
        let pruned: Vec<_> = doc
            .nodes
            .iter()
            .filter(|n| n.status == NodeStatus::Pruned)
            .collect();
        assert!(!pruned.is_empty());
        assert!(pruned.iter().all(|n| n.value.is_none()));
        assert_eq!(doc.layers[0], vec![0]);
        let text = serde_json::to_string(&doc).unwrap();
        let back: TreeDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back, doc);
    }

    #[test]
    fn dot_marks_status_and_edges() {
        let doc = scored_doc();
        let dot = render_dot(&doc);
        assert!(dot.starts_with("digraph rollout {"));
        assert!(dot.contains("shape=doublecircle"));
        assert!(dot.contains("style=dashed"));
        assert!(dot.contains("n0 -> n1"));
        let edges = dot.matches(" -> ").count();
        assert_eq!(edges, doc.nodes.len() - 1);
    }

    #[test]
    fn labels_escape_quotes() {
        assert_eq!(escape_label(r#"say "hi""#), r#"say \"hi\""#);
        assert_eq!(escape_label(r"a\b"), r"a\\b");
    }
}

//! Tree arena: nodes live in a `Vec` in creation order, so node ids double
//! as indices and canonical JSON is reproducible byte for byte.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Identifier of a node; equal to its position in creation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// One reasoning step in the tree.
///
/// `value` is the backpropagated mean (the UCT exploitation term), kept
/// consistent with the serde-skipped `value_sum` so replays can reproduce it
/// bit for bit. `prm_value` is the process-reward score assigned once at
/// expansion and never updated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub id: NodeId,
    pub step_content: String,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub visit_count: u64,
    pub value: f64,
    pub prm_value: f64,
    pub depth: u32,
    pub terminal: bool,
    pub fully_expanded: bool,
    /// Extracted final answer, present only on terminal nodes that carry one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    /// Running sum behind `value`; `value = value_sum / visit_count` after
    /// every update. Not serialized: replay recomputes it from outcomes.
    #[serde(skip, default)]
    pub value_sum: f64,
}

/// The search tree for one problem. The root carries empty step content and
/// represents the bare problem statement; path prefixes exclude it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    pub problem_id: String,
    nodes: Vec<SearchNode>,
}

impl SearchTree {
    /// Creates a tree holding only the root (id 0, depth 0).
    pub fn new(problem_id: impl Into<String>) -> Self {
        SearchTree {
            problem_id: problem_id.into(),
            nodes: vec![SearchNode {
                id: NodeId(0),
                step_content: String::new(),
                parent: None,
                children: Vec::new(),
                visit_count: 0,
                value: 0.0,
                prm_value: 0.0,
                depth: 0,
                terminal: false,
                fully_expanded: false,
                answer: None,
                value_sum: 0.0,
            }],
        }
    }

    pub fn root_id(&self) -> NodeId {
        NodeId(0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id.index()]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut SearchNode {
        &mut self.nodes[id.index()]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &SearchNode> {
        self.nodes.iter()
    }

    /// Attaches a fresh child under `parent`. Panics if the parent is
    /// terminal (terminal nodes never grow children).
    pub fn add_child(&mut self, parent: NodeId, step_content: impl Into<String>, prm_value: f64) -> NodeId {
        assert!(
            !self.node(parent).terminal,
            "cannot attach a child to terminal node {parent}"
        );
        let id = NodeId(self.nodes.len() as u64);
        let depth = self.node(parent).depth + 1;
        self.nodes.push(SearchNode {
            id,
            step_content: step_content.into(),
            parent: Some(parent),
            children: Vec::new(),
            visit_count: 0,
            value: 0.0,
            prm_value,
            depth,
            terminal: false,
            fully_expanded: false,
            answer: None,
            value_sum: 0.0,
        });
        self.node_mut(parent).children.push(id);
        id
    }

    /// Marks a node terminal, recording its extracted answer if any.
    /// Panics if the node already has children.
    pub fn mark_terminal(&mut self, id: NodeId, answer: Option<String>) {
        let node = self.node_mut(id);
        assert!(node.children.is_empty(), "terminal node {id} has children");
        node.terminal = true;
        node.answer = answer;
    }

    /// Node ids from root down to `id`, inclusive.
    pub fn path_from_root(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(parent) = self.node(cur).parent {
            path.push(parent);
            cur = parent;
        }
        path.reverse();
        path
    }

    /// Step contents from the first step below root down to `id` (empty for
    /// the root itself). This is the "path prefix" handed to backends.
    pub fn prefix_steps(&self, id: NodeId) -> Vec<String> {
        self.path_from_root(id)
            .into_iter()
            .skip(1)
            .map(|n| self.node(n).step_content.clone())
            .collect()
    }

    /// Ids of all terminal nodes in creation order.
    pub fn terminal_ids(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.terminal)
            .map(|n| n.id)
            .collect()
    }

    /// Ids of all childless nodes in creation order (terminal or not).
    pub fn leaf_ids(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.children.is_empty())
            .map(|n| n.id)
            .collect()
    }

    /// Canonical serialization: compact JSON, struct-declaration key order,
    /// nodes in creation order. Equal trees produce equal bytes.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("tree serialization cannot fail")
    }

    /// Checks every structural invariant; returns the first violation.
    pub fn validate(&self) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no root".into());
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.id.index() != idx {
                return Err(format!("node id {} stored at index {idx}", node.id));
            }
            if !(0.0..=1.0).contains(&node.value) {
                return Err(format!("node {} value {} outside [0,1]", node.id, node.value));
            }
            if !(0.0..=1.0).contains(&node.prm_value) {
                return Err(format!(
                    "node {} prm_value {} outside [0,1]",
                    node.id, node.prm_value
                ));
            }
            match node.parent {
                None => {
                    if idx != 0 {
                        return Err(format!("non-root node {} has no parent", node.id));
                    }
                    if node.depth != 0 {
                        return Err("root depth is not 0".into());
                    }
                }
                Some(parent) => {
                    if parent.index() >= idx {
                        return Err(format!(
                            "node {} has parent {} not created earlier",
                            node.id, parent
                        ));
                    }
                    let p = self.node(parent);
                    if node.depth != p.depth + 1 {
                        return Err(format!(
                            "node {} depth {} != parent depth {} + 1",
                            node.id, node.depth, p.depth
                        ));
                    }
                    if p.children.iter().filter(|c| **c == node.id).count() != 1 {
                        return Err(format!(
                            "node {} not listed exactly once under parent {}",
                            node.id, parent
                        ));
                    }
                }
            }
            if node.terminal && !node.children.is_empty() {
                return Err(format!("terminal node {} has children", node.id));
            }
            let child_visits: u64 = node
                .children
                .iter()
                .map(|c| self.node(*c).visit_count)
                .sum();
            if child_visits > node.visit_count {
                return Err(format!(
                    "node {} children visits {} exceed own visits {}",
                    node.id, child_visits, node.visit_count
                ));
            }
            for child in &node.children {
                if self.node(*child).parent != Some(node.id) {
                    return Err(format!(
                        "child {} of node {} points to a different parent",
                        child, node.id
                    ));
                }
            }
        }
        Ok(())
    }
}

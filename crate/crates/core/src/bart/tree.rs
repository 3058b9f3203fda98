use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Leaf {
        value: f64,
    },
    /// Rows with `x[var] <= cut` go left.
    Split {
        var: usize,
        cut: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub parent: Option<usize>,
    pub kind: NodeKind,
}

/// A binary regression tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![TreeNode {
                parent: None,
                kind: NodeKind::Leaf { value },
            }],
        }
    }

    /// Builds a tree from explicit nodes, checking the parent/child links.
    pub fn from_nodes(nodes: Vec<TreeNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidInput("tree needs at least one node".into()));
        }
        if nodes[0].parent.is_some() {
            return Err(Error::InvalidInput("root must not have a parent".into()));
        }
        let mut seen = vec![false; nodes.len()];
        seen[0] = true;
        for (id, node) in nodes.iter().enumerate() {
            if let NodeKind::Split { left, right, .. } = node.kind {
                for child in [left, right] {
                    if child >= nodes.len() || child == id || seen[child] {
                        return Err(Error::InvalidInput(format!(
                            "bad child link {child} at node {id}"
                        )));
                    }
                    if nodes[child].parent != Some(id) {
                        return Err(Error::InvalidInput(format!(
                            "node {child} does not point back to {id}"
                        )));
                    }
                    seen[child] = true;
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidInput("unreachable nodes in tree".into()));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    /// Index of the leaf that `row` falls into.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match self.nodes[id].kind {
                NodeKind::Leaf { .. } => return id,
                NodeKind::Split {
                    var,
                    cut,
                    left,
                    right,
                } => {
                    id = if row[var] <= cut { left } else { right };
                }
            }
        }
    }

    pub fn evaluate(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(row)].kind {
            NodeKind::Leaf { value } => value,
            NodeKind::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, id: usize) -> usize {
            match t.nodes[id].kind {
                NodeKind::Leaf { .. } => 0,
                NodeKind::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    /// Leaf regions as a predicate list; used by the partition tests.
    pub fn leaf_predicates(&self) -> Vec<(usize, Vec<(usize, f64, bool)>)> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((id, path)) = stack.pop() {
            match self.nodes[id].kind {
                NodeKind::Leaf { .. } => out.push((id, path)),
                NodeKind::Split {
                    var,
                    cut,
                    left,
                    right,
                } => {
                    let mut l = path.clone();
                    l.push((var, cut, true));
                    let mut r = path;
                    r.push((var, cut, false));
                    stack.push((left, l));
                    stack.push((right, r));
                }
            }
        }
        out
    }
}

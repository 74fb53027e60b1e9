//! Binary axis-parallel decision trees.
//!
//! A tree is an arena of [`Node`]s laid out in pre-order (root first, left
//! subtree before right). Every structural edit returns a fresh tree in that
//! layout, so node ids, leaf enumeration order and the text serialization are
//! all stable functions of the tree's shape.
//!
//! A point goes left at a split iff `x[feature] <= threshold`.

use std::fmt::Write as _;

use crate::data::Dataset;
use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: NodeId,
        right: NodeId,
    },
    /// Per-class counts of the training rows reaching the leaf. Empty until
    /// the tree has been fitted.
    Leaf { counts: Vec<usize> },
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }

    /// Rows in a leaf; zero for splits.
    pub fn n(&self) -> usize {
        match self {
            Node::Leaf { counts } => counts.iter().sum(),
            Node::Split { .. } => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    root: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeSummary {
    pub split_count: usize,
    pub leaf_count: usize,
    pub depth: usize,
    /// Split features in pre-order, 0-based.
    pub feature_path: Vec<usize>,
}

impl TreeSummary {
    /// 1-based feature indices, concatenated when every index is a single
    /// digit and dash-separated otherwise.
    pub fn path_string(&self) -> String {
        let single = self.feature_path.iter().all(|&f| f < 9);
        let parts: Vec<String> = self.feature_path.iter().map(|f| (f + 1).to_string()).collect();
        parts.join(if single { "" } else { "-" })
    }
}

/// Dirichlet posterior mean `(m_j + alpha_j) / (n + sum alpha)`.
pub fn leaf_predictive(counts: &[usize], alpha: &[f64]) -> Vec<f64> {
    let n: usize = counts.iter().sum();
    let total = n as f64 + alpha.iter().sum::<f64>();
    counts
        .iter()
        .zip(alpha)
        .map(|(&m, &a)| (m as f64 + a) / total)
        .collect()
}

/// Index of the largest value, ties to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = j;
        }
    }
    best
}

impl DecisionTree {
    /// Root-only tree without counts.
    pub fn leaf() -> Self {
        Self {
            nodes: vec![Node::Leaf { counts: Vec::new() }],
            root: 0,
        }
    }

    /// Builds a tree from an arbitrary arena, checking that every node is
    /// reachable exactly once, and re-lays it out in pre-order.
    pub fn from_nodes(nodes: Vec<Node>, root: NodeId) -> Result<Self> {
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            if id >= nodes.len() || seen[id] {
                return Err(Error::InvalidDataset(format!("node {id} is missing or shared")));
            }
            seen[id] = true;
            if let Node::Split { left, right, .. } = nodes[id] {
                stack.push(right);
                stack.push(left);
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidDataset("arena has unreachable nodes".into()));
        }
        Ok(Self { nodes, root }.relayout())
    }

    fn relayout(&self) -> Self {
        let mut out = Vec::with_capacity(self.nodes.len());
        self.copy_preorder(self.root, &mut out);
        Self { nodes: out, root: 0 }
    }

    fn copy_preorder(&self, id: NodeId, out: &mut Vec<Node>) -> NodeId {
        let me = out.len();
        match &self.nodes[id] {
            Node::Leaf { counts } => out.push(Node::Leaf {
                counts: counts.clone(),
            }),
            &Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                out.push(Node::Leaf { counts: Vec::new() });
                let l = self.copy_preorder(left, out);
                let r = self.copy_preorder(right, out);
                out[me] = Node::Split {
                    feature,
                    threshold,
                    left: l,
                    right: r,
                };
            }
        }
        me
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn leaf_ids(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf()).collect()
    }

    pub fn split_ids(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&i| !self.nodes[i].is_leaf()).collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn split_count(&self) -> usize {
        self.nodes.len() - self.leaf_count()
    }

    /// Number of splits above each node.
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0; self.nodes.len()];
        // Pre-order layout: parents precede children.
        for id in 0..self.nodes.len() {
            if let Node::Split { left, right, .. } = self.nodes[id] {
                depth[left] = depth[id] + 1;
                depth[right] = depth[id] + 1;
            }
        }
        depth
    }

    /// Splits whose two children are both leaves.
    pub fn prunable_ids(&self) -> Vec<NodeId> {
        self.split_ids()
            .into_iter()
            .filter(|&id| match self.nodes[id] {
                Node::Split { left, right, .. } => {
                    self.nodes[left].is_leaf() && self.nodes[right].is_leaf()
                }
                Node::Leaf { .. } => false,
            })
            .collect()
    }

    pub fn prunable_splits(&self) -> usize {
        self.prunable_ids().len()
    }

    pub fn route(&self, point: &[f64]) -> NodeId {
        let mut id = self.root;
        while let Node::Split {
            feature,
            threshold,
            left,
            right,
        } = self.nodes[id]
        {
            id = if point[feature] <= threshold { left } else { right };
        }
        id
    }

    /// Leaf reached by row `i` of `ds`.
    pub fn route_row(&self, ds: &Dataset, i: usize) -> NodeId {
        let mut id = self.root;
        while let Node::Split {
            feature,
            threshold,
            left,
            right,
        } = self.nodes[id]
        {
            id = if ds.value(i, feature) <= threshold { left } else { right };
        }
        id
    }

    /// Recomputes every leaf's class counts from all rows of `ds`.
    pub fn refit_counts(&self, ds: &Dataset) -> Self {
        let mut out = self.clone();
        out.refit_in_place(ds);
        out
    }

    pub fn refit_in_place(&mut self, ds: &Dataset) {
        let c = ds.class_count();
        for node in &mut self.nodes {
            if let Node::Leaf { counts } = node {
                counts.clear();
                counts.resize(c, 0);
            }
        }
        for i in 0..ds.n() {
            let leaf = self.route_row(ds, i);
            if let Node::Leaf { counts } = &mut self.nodes[leaf] {
                counts[ds.label(i)] += 1;
            }
        }
    }

    /// Rows of `ds` reaching each node (splits included), ascending.
    pub fn node_rows(&self, ds: &Dataset) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.nodes.len()];
        rows[self.root] = (0..ds.n()).collect();
        for id in 0..self.nodes.len() {
            if let Node::Split {
                feature,
                threshold,
                left,
                right,
            } = self.nodes[id]
            {
                let here = std::mem::take(&mut rows[id]);
                let (l, r): (Vec<usize>, Vec<usize>) =
                    here.iter().partition(|&&i| ds.value(i, feature) <= threshold);
                rows[left] = l;
                rows[right] = r;
                rows[id] = here;
            }
        }
        rows
    }

    /// Smallest leaf size.
    pub fn min_leaf_n(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.is_leaf())
            .map(Node::n)
            .min()
            .unwrap_or(0)
    }

    pub fn predict_proba(&self, point: &[f64], alpha: &[f64]) -> Vec<f64> {
        match &self.nodes[self.route(point)] {
            Node::Leaf { counts } => leaf_predictive(counts, alpha),
            Node::Split { .. } => unreachable!("route ends at a leaf"),
        }
    }

    /// Class with the largest leaf predictive probability, ties to the lowest index.
    pub fn hard_label(&self, point: &[f64], alpha: &[f64]) -> usize {
        argmax(&self.predict_proba(point, alpha))
    }

    /// Replaces a leaf by a split with two empty leaves. Counts are stale
    /// until the result is refitted.
    pub fn split_leaf(&self, leaf: NodeId, feature: usize, threshold: f64) -> Self {
        assert!(self.nodes[leaf].is_leaf(), "node {leaf} is not a leaf");
        let mut nodes = self.nodes.clone();
        let l = nodes.len();
        nodes.push(Node::Leaf { counts: Vec::new() });
        nodes.push(Node::Leaf { counts: Vec::new() });
        nodes[leaf] = Node::Split {
            feature,
            threshold,
            left: l,
            right: l + 1,
        };
        Self {
            nodes,
            root: self.root,
        }
        .relayout()
    }

    /// Merges the subtree under `split` into one leaf holding the summed counts.
    pub fn collapse(&self, split: NodeId) -> Self {
        let mut counts: Vec<usize> = Vec::new();
        let mut stack = vec![split];
        while let Some(id) = stack.pop() {
            match &self.nodes[id] {
                Node::Leaf { counts: c } => {
                    if counts.len() < c.len() {
                        counts.resize(c.len(), 0);
                    }
                    for (acc, v) in counts.iter_mut().zip(c) {
                        *acc += v;
                    }
                }
                Node::Split { left, right, .. } => {
                    stack.push(*left);
                    stack.push(*right);
                }
            }
        }
        let mut nodes = self.nodes.clone();
        nodes[split] = Node::Leaf { counts };
        let tmp = Self {
            nodes,
            root: self.root,
        };
        tmp.relayout()
    }

    /// Changes the feature and threshold of a split, keeping its subtrees.
    pub fn with_rule(&self, split: NodeId, feature: usize, threshold: f64) -> Self {
        let mut out = self.clone();
        match &mut out.nodes[split] {
            Node::Split {
                feature: f,
                threshold: t,
                ..
            } => {
                *f = feature;
                *t = threshold;
            }
            Node::Leaf { .. } => panic!("node {split} is not a split"),
        }
        out
    }

    pub fn summarize(&self) -> TreeSummary {
        let feature_path = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        let depth = self.depths().into_iter().max().unwrap_or(0);
        TreeSummary {
            split_count: self.split_count(),
            leaf_count: self.leaf_count(),
            depth,
            feature_path,
        }
    }

    /// Pre-order text form, one node per line: `S feature threshold` or
    /// `L count0 count1 ...`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for node in &self.nodes {
            match node {
                Node::Split {
                    feature, threshold, ..
                } => writeln!(out, "S {feature} {threshold:?}").unwrap(),
                Node::Leaf { counts } => {
                    out.push('L');
                    for c in counts {
                        write!(out, " {c}").unwrap();
                    }
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        let mut nodes = Vec::with_capacity(lines.len());
        let mut pos = 0;
        parse_node(&lines, &mut pos, &mut nodes)?;
        if pos != lines.len() {
            return Err(Error::TreeFormat {
                line: lines[pos].0,
                reason: "trailing nodes after a complete tree".into(),
            });
        }
        Ok(Self { nodes, root: 0 })
    }
}

fn parse_node(lines: &[(usize, &str)], pos: &mut usize, out: &mut Vec<Node>) -> Result<NodeId> {
    let &(lineno, line) = lines.get(*pos).ok_or_else(|| Error::TreeFormat {
        line: lines.last().map_or(0, |l| l.0),
        reason: "tree ends before every split has two children".into(),
    })?;
    *pos += 1;
    let bad = |reason: &str| Error::TreeFormat {
        line: lineno,
        reason: reason.into(),
    };
    let mut parts = line.split_whitespace();
    let me = out.len();
    match parts.next() {
        Some("L") => {
            let counts = parts
                .map(|p| p.parse::<usize>().map_err(|_| bad("bad leaf count")))
                .collect::<Result<Vec<_>>>()?;
            out.push(Node::Leaf { counts });
        }
        Some("S") => {
            let feature = parts
                .next()
                .and_then(|p| p.parse::<usize>().ok())
                .ok_or_else(|| bad("bad split feature"))?;
            let threshold = parts
                .next()
                .and_then(|p| p.parse::<f64>().ok())
                .filter(|t| t.is_finite())
                .ok_or_else(|| bad("bad split threshold"))?;
            if parts.next().is_some() {
                return Err(bad("extra fields on split line"));
            }
            out.push(Node::Leaf { counts: Vec::new() });
            let left = parse_node(lines, pos, out)?;
            let right = parse_node(lines, pos, out)?;
            out[me] = Node::Split {
                feature,
                threshold,
                left,
                right,
            };
        }
        _ => return Err(bad("expected S or L")),
    }
    Ok(me)
}

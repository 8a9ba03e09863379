//! CART classification tree used as the surrogate policy.
//!
//! Splits minimise weighted Gini impurity with thresholds at midpoints
//! between adjacent observed values. Growth is best-first: the frontier
//! leaf with the largest impurity decrease is split next, so a leaf budget
//! keeps the most useful splits. Values equal to a threshold go left.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::mdp::{MdpSpec, ReplayDataset, StateVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeVariant {
    /// At most one leaf per action.
    LeafConstrained,
    /// Grown until leaves are pure.
    Unconstrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    Split { id: usize, feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { id: usize, action: usize, counts: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
}

impl Branch {
    pub fn symbol(self) -> &'static str {
        match self {
            Branch::Le => "<=",
            Branch::Gt => ">",
        }
    }

    pub fn taken(value: f64, threshold: f64) -> Branch {
        if value <= threshold {
            Branch::Le
        } else {
            Branch::Gt
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathNode {
    pub node: usize,
    pub feature: usize,
    pub feature_name: String,
    pub threshold: f64,
    pub branch: Branch,
    pub value: f64,
}

/// Root-to-leaf decision nodes for one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPath {
    pub nodes: Vec<PathNode>,
    pub leaf_action: usize,
}

impl DecisionPath {
    /// Distinct features tested on the path, in path order.
    pub fn features(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if !out.contains(&n.feature) {
                out.push(n.feature);
            }
        }
        out
    }

    /// Deepest node testing `feature`.
    pub fn nearest_node_for(&self, feature: usize) -> Option<&PathNode> {
        self.nodes.iter().rev().find(|n| n.feature == feature)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTreePolicy {
    pub variant: TreeVariant,
    pub feature_names: Vec<String>,
    pub actions: Vec<String>,
    /// Unknown for hand-assembled trees.
    pub training_accuracy: Option<f64>,
    pub nodes: Vec<TreeNode>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct Pending {
    id: usize,
    rows: Vec<usize>,
    split: Option<Candidate>,
}

impl DecisionTreePolicy {
    /// Fits on replay states/actions. `max_leaves = None` gives the
    /// unconstrained variant.
    pub fn fit_replay(data: &ReplayDataset, spec: &MdpSpec, max_leaves: Option<usize>) -> Result<Self> {
        let (x, y) = data.features_and_actions();
        Self::fit(&x, &y, spec.variable_names(), spec.actions.clone(), max_leaves)
    }

    pub fn fit(
        x: &[Vec<f64>],
        y: &[usize],
        feature_names: Vec<String>,
        actions: Vec<String>,
        max_leaves: Option<usize>,
    ) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if x.len() != y.len() {
            return Err(Error::InvalidArgument("feature and label counts differ".into()));
        }
        if let Some(m) = max_leaves {
            if m < 2 {
                return Err(Error::InvalidArgument(format!("max_leaves must be at least 2, got {m}")));
            }
        }
        if let Some(row) = x.iter().find(|r| r.len() != feature_names.len()) {
            return Err(Error::DimensionMismatch { expected: feature_names.len(), got: row.len() });
        }
        let n_classes = actions.len();
        if let Some(&bad) = y.iter().find(|&&a| a >= n_classes) {
            return Err(Error::InvalidAction { action: bad, num_actions: n_classes });
        }
        let variant = if max_leaves.is_some() { TreeVariant::LeafConstrained } else { TreeVariant::Unconstrained };
        let budget = max_leaves.unwrap_or(usize::MAX);

        let leaf = |id: usize, rows: &[usize]| {
            let counts = class_counts(rows, y, n_classes);
            TreeNode::Leaf { id, action: argmax_counts(&counts), counts }
        };

        let all: Vec<usize> = (0..x.len()).collect();
        let mut nodes = vec![leaf(0, &all)];
        let mut frontier = vec![Pending { id: 0, split: best_split(x, y, &all, n_classes), rows: all }];
        let mut leaves = 1;

        while leaves < budget {
            let pick = frontier
                .iter()
                .enumerate()
                .filter_map(|(i, p)| p.split.as_ref().map(|s| (i, s.gain, p.id)))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.cmp(&a.2)));
            let Some((i, _, _)) = pick else { break };
            let pending = frontier.swap_remove(i);
            let split = pending.split.expect("picked node has a split");
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                pending.rows.iter().partition(|&&r| x[r][split.feature] <= split.threshold);
            let left = nodes.len();
            let right = left + 1;
            nodes.push(leaf(left, &left_rows));
            nodes.push(leaf(right, &right_rows));
            nodes[pending.id] =
                TreeNode::Split { id: pending.id, feature: split.feature, threshold: split.threshold, left, right };
            leaves += 1;
            frontier.push(Pending { id: left, split: best_split(x, y, &left_rows, n_classes), rows: left_rows });
            frontier.push(Pending { id: right, split: best_split(x, y, &right_rows, n_classes), rows: right_rows });
        }

        let mut tree = Self { variant, feature_names, actions, training_accuracy: None, nodes };
        if leaves == 1 && y.iter().all(|&a| a == y[0]) && x.len() > 1 {
            log::warn!("degenerate data: every row has action {}; tree is a single leaf", y[0]);
        }
        let correct = x.iter().zip(y).filter(|(row, &a)| tree.predict_row(row) == a).count();
        tree.training_accuracy = Some(correct as f64 / x.len() as f64);
        Ok(tree)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict(&self, state: &StateVector) -> usize {
        self.predict_row(state.values())
    }

    pub fn predict_row(&self, row: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                TreeNode::Leaf { action, .. } => return *action,
                TreeNode::Split { feature, threshold, left, right, .. } => {
                    id = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn decision_path(&self, state: &StateVector) -> DecisionPath {
        let mut nodes = Vec::new();
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                TreeNode::Leaf { action, .. } => return DecisionPath { nodes, leaf_action: *action },
                TreeNode::Split { feature, threshold, left, right, .. } => {
                    let value = state.get(*feature);
                    let branch = Branch::taken(value, *threshold);
                    nodes.push(PathNode {
                        node: id,
                        feature: *feature,
                        feature_name: self.feature_names[*feature].clone(),
                        threshold: *threshold,
                        branch,
                        value,
                    });
                    id = if branch == Branch::Le { *left } else { *right };
                }
            }
        }
    }

    /// Assembles a tree from explicit nodes (node 0 is the root).
    pub fn from_nodes(
        nodes: Vec<TreeNode>,
        feature_names: Vec<String>,
        actions: Vec<String>,
        variant: TreeVariant,
    ) -> Result<Self> {
        for (i, n) in nodes.iter().enumerate() {
            match n {
                TreeNode::Split { id, feature, left, right, .. } => {
                    if *id != i || *feature >= feature_names.len() || *left >= nodes.len() || *right >= nodes.len() {
                        return Err(Error::Parse(format!("malformed split node {i}")));
                    }
                }
                TreeNode::Leaf { id, action, .. } => {
                    if *id != i || *action >= actions.len() {
                        return Err(Error::Parse(format!("malformed leaf node {i}")));
                    }
                }
            }
        }
        if nodes.is_empty() {
            return Err(Error::Parse("tree has no nodes".into()));
        }
        Ok(Self { variant, feature_names, actions, training_accuracy: None, nodes })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tree: Self = serde_json::from_str(text)?;
        Self::from_nodes(tree.nodes.clone(), tree.feature_names.clone(), tree.actions.clone(), tree.variant)
            .map(|t| Self { training_accuracy: tree.training_accuracy, ..t })
    }

    /// Indented text rendering.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_node(0, 0, &mut out);
        out
    }

    fn render_node(&self, id: usize, depth: usize, out: &mut String) {
        let pad = "  ".repeat(depth);
        match &self.nodes[id] {
            TreeNode::Leaf { action, counts, .. } => {
                let _ = writeln!(out, "{pad}-> {} {:?}", self.actions[*action], counts);
            }
            TreeNode::Split { feature, threshold, left, right, .. } => {
                let name = &self.feature_names[*feature];
                let _ = writeln!(out, "{pad}{name} <= {threshold}");
                self.render_node(*left, depth + 1, out);
                let _ = writeln!(out, "{pad}{name} > {threshold}");
                self.render_node(*right, depth + 1, out);
            }
        }
    }
}

fn class_counts(rows: &[usize], y: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for &r in rows {
        counts[y[r]] += 1;
    }
    counts
}

fn argmax_counts(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

fn sum_sq_over_n(sum_sq: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum_sq / n as f64
    }
}

/// Best Gini split of `rows`, or `None` when the node is pure or every
/// feature is constant. Ties go to the lowest feature, then the lowest
/// threshold.
fn best_split(x: &[Vec<f64>], y: &[usize], rows: &[usize], n_classes: usize) -> Option<Candidate> {
    let n = rows.len();
    let total = class_counts(rows, y, n_classes);
    if total.iter().filter(|&&c| c > 0).count() <= 1 {
        return None;
    }
    let total_sq: f64 = total.iter().map(|&c| (c * c) as f64).sum();
    let parent = sum_sq_over_n(total_sq, n);

    let mut best: Option<Candidate> = None;
    let mut order = rows.to_vec();
    for feature in 0..x[rows[0]].len() {
        order.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]).then(a.cmp(&b)));
        let mut left = vec![0usize; n_classes];
        let mut left_sq = 0.0;
        let mut right = total.clone();
        let mut right_sq = total_sq;
        for k in 0..n - 1 {
            let class = y[order[k]];
            left_sq += (2 * left[class] + 1) as f64;
            left[class] += 1;
            right_sq -= (2 * right[class] - 1) as f64;
            right[class] -= 1;
            let lo = x[order[k]][feature];
            let hi = x[order[k + 1]][feature];
            if lo == hi {
                continue;
            }
            let gain = sum_sq_over_n(left_sq, k + 1) + sum_sq_over_n(right_sq, n - k - 1) - parent;
            if best.as_ref().is_none_or(|b| gain > b.gain + 1e-12) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(Candidate { feature, threshold, gain });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    fn acts(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("a{i}")).collect()
    }

    #[test]
    fn single_row_is_single_leaf() {
        let t = DecisionTreePolicy::fit(&[vec![1.0, 2.0]], &[2], names(2), acts(3), Some(3)).unwrap();
        assert_eq!(t.leaf_count(), 1);
        assert_eq!(t.predict_row(&[5.0, 5.0]), 2);
        assert!(t.decision_path(&StateVector(vec![0.0, 0.0])).nodes.is_empty());
    }

    #[test]
    fn degenerate_data_gives_single_leaf() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let t = DecisionTreePolicy::fit(&x, &[1; 10], names(1), acts(2), Some(2)).unwrap();
        assert_eq!(t.leaf_count(), 1);
        assert_eq!(t.training_accuracy, Some(1.0));
    }

    #[test]
    fn separable_rule_fits_exactly() {
        // action = 0 if f0 <= 3, else (1 if f1 <= 1 else 2)
        let mut x = Vec::new();
        let mut y = Vec::new();
        for a in 0..8 {
            for b in 0..4 {
                x.push(vec![a as f64, b as f64]);
                y.push(if a <= 3 { 0 } else if b <= 1 { 1 } else { 2 });
            }
        }
        let t = DecisionTreePolicy::fit(&x, &y, names(2), acts(3), Some(3)).unwrap();
        assert_eq!(t.training_accuracy, Some(1.0));
        assert_eq!(t.leaf_count(), 3);
        match &t.nodes[0] {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 3.5);
            }
            _ => panic!("root should split"),
        }
    }

    #[test]
    fn threshold_value_routes_left() {
        let nodes = vec![
            TreeNode::Split { id: 0, feature: 0, threshold: 2.0, left: 1, right: 2 },
            TreeNode::Leaf { id: 1, action: 0, counts: vec![] },
            TreeNode::Leaf { id: 2, action: 1, counts: vec![] },
        ];
        let t = DecisionTreePolicy::from_nodes(nodes, names(1), acts(2), TreeVariant::LeafConstrained).unwrap();
        assert_eq!(t.predict_row(&[2.0]), 0);
        assert_eq!(t.predict_row(&[2.0000001]), 1);
    }

    #[test]
    fn leaf_budget_respected() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, (i * 7 % 11) as f64]).collect();
        let y: Vec<usize> = (0..50).map(|i| (i * 13 % 5) as usize).collect();
        let dp = DecisionTreePolicy::fit(&x, &y, names(2), acts(5), Some(5)).unwrap();
        let dpn = DecisionTreePolicy::fit(&x, &y, names(2), acts(5), None).unwrap();
        assert!(dp.leaf_count() <= 5);
        assert_eq!(dpn.training_accuracy, Some(1.0));
        assert!(dpn.training_accuracy >= dp.training_accuracy);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(DecisionTreePolicy::fit(&[], &[], names(1), acts(2), None), Err(Error::EmptyDataset)));
        assert!(DecisionTreePolicy::fit(&[vec![0.0]], &[0], names(1), acts(2), Some(1)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        let t = DecisionTreePolicy::fit(&x, &y, names(1), acts(2), Some(2)).unwrap();
        let back = DecisionTreePolicy::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
        assert!(t.render().contains("f0 <= 9.5"));
    }
}

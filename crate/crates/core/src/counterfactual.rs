//! Counterfactual decision nodes from decision-boundary moves.
//!
//! Each decision node on the state's path is visited starting from the one
//! closest to the leaf. Its feature is pushed across the node's threshold,
//! one step at a time, until the surrogate tree's prediction changes.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::mdp::{StateVariable, StateVector, VariableKind};
use crate::tree::{Branch, DecisionPath, DecisionTreePolicy, PathNode};
use crate::{Error, Result};

pub const DEFAULT_CONTINUOUS_DELTA: f64 = 0.01;
pub const DEFAULT_DISCRETE_DELTA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovedFeature {
    pub feature: usize,
    pub name: String,
    pub original: f64,
    pub moved: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    /// Tree prediction for the unmodified state.
    pub original_action: usize,
    /// Decision path of the modified state.
    pub counterfactual_nodes: DecisionPath,
    pub counterfactual_action: usize,
    pub modified_state: StateVector,
    pub moved_features: Vec<MovedFeature>,
    /// Set in target-directed mode when the requested action was not reached.
    pub reached_different_action: bool,
}

/// Step size and budget for boundary moves. `delta = None` uses 0.01 for
/// continuous and 1 for discrete features; `max_steps = None` allows
/// 10·range/delta steps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MoveConfig {
    pub delta: Option<f64>,
    pub max_steps: Option<usize>,
}

impl MoveConfig {
    pub fn with_delta(delta: f64) -> Self {
        Self { delta: Some(delta), max_steps: None }
    }
}

struct Mover<'a> {
    variables: &'a [StateVariable],
    config: MoveConfig,
}

impl Mover<'_> {
    /// Feature values past the node's boundary, nearest first, clamped to
    /// the variable's range.
    fn crossings(&self, node: &PathNode) -> Vec<f64> {
        let var = &self.variables[node.feature];
        let t = node.threshold;
        let (delta, first) = match (self.config.delta, var.kind) {
            (Some(d), _) => (d, None),
            (None, VariableKind::Continuous) => (DEFAULT_CONTINUOUS_DELTA, None),
            (None, VariableKind::Discrete) => {
                let first = match node.branch {
                    Branch::Le => t.floor() + 1.0,
                    Branch::Gt => t.floor(),
                };
                (DEFAULT_DISCRETE_DELTA, Some(first))
            }
        };
        let range = var.max - var.min;
        let max_steps = self.config.max_steps.unwrap_or_else(|| ((10.0 * range / delta).ceil() as usize).max(1));
        let mut out = Vec::new();
        for k in 1..=max_steps {
            let kf = k as f64;
            let raw = match (node.branch, first) {
                (Branch::Le, None) => t + kf * delta,
                (Branch::Gt, None) => t - kf * delta,
                (Branch::Le, Some(f)) => f + (kf - 1.0) * delta,
                (Branch::Gt, Some(f)) => f - (kf - 1.0) * delta,
            };
            let value = var.clamp(raw);
            if Branch::taken(value, t) == node.branch {
                break;
            }
            if out.last() != Some(&value) {
                out.push(value);
            }
            if value != raw {
                break;
            }
        }
        out
    }
}

fn build_result(
    tree: &DecisionTreePolicy,
    original: &StateVector,
    original_action: usize,
    modified: StateVector,
    reached_different_action: bool,
) -> CounterfactualResult {
    let moved_features = (0..original.len())
        .filter(|&f| original.get(f) != modified.get(f))
        .map(|f| MovedFeature {
            feature: f,
            name: tree.feature_names[f].clone(),
            original: original.get(f),
            moved: modified.get(f),
        })
        .collect();
    CounterfactualResult {
        original_action,
        counterfactual_nodes: tree.decision_path(&modified),
        counterfactual_action: tree.predict(&modified),
        modified_state: modified,
        moved_features,
        reached_different_action,
    }
}

fn tree_action(tree: &DecisionTreePolicy, state: &StateVector, actual_action: usize) -> usize {
    let predicted = tree.predict(state);
    if predicted != actual_action {
        warn!(
            "PolicyMismatch: tree predicts `{}` but the agent chose `{}`",
            tree.actions[predicted],
            tree.actions.get(actual_action).map_or("?", String::as_str)
        );
    }
    predicted
}

fn check_inputs(tree: &DecisionTreePolicy, variables: &[StateVariable], state: &StateVector, config: MoveConfig) -> Result<()> {
    if state.len() != tree.num_features() || variables.len() != tree.num_features() {
        return Err(Error::DimensionMismatch { expected: tree.num_features(), got: state.len() });
    }
    if let Some(d) = config.delta {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::InvalidArgument(format!("delta must be positive, got {d}")));
        }
    }
    Ok(())
}

/// Moves one decision boundary at a time, leaf-nearest node first, and
/// stops at the first change of the tree's prediction.
pub fn generate_counterfactuals(
    tree: &DecisionTreePolicy,
    variables: &[StateVariable],
    state: &StateVector,
    actual_action: usize,
    config: MoveConfig,
) -> Result<CounterfactualResult> {
    check_inputs(tree, variables, state, config)?;
    let original_action = tree_action(tree, state, actual_action);
    let mover = Mover { variables, config };
    let path = tree.decision_path(state);
    for node in path.nodes.iter().rev() {
        for value in mover.crossings(node) {
            let mut modified = state.clone();
            modified.set(node.feature, value);
            if tree.predict(&modified) != original_action {
                return Ok(build_result(tree, state, original_action, modified, false));
            }
        }
    }
    Err(Error::NoCounterfactualFound)
}

/// Like [`generate_counterfactuals`] but keeps moving until the tree
/// predicts `target`: single-node moves first, then pairs (a first crossing
/// of one node followed by single moves on the resulting path). Falls back
/// to the first prediction change found, flagged with
/// `reached_different_action`.
pub fn generate_towards(
    tree: &DecisionTreePolicy,
    variables: &[StateVariable],
    state: &StateVector,
    actual_action: usize,
    target: usize,
    config: MoveConfig,
) -> Result<CounterfactualResult> {
    check_inputs(tree, variables, state, config)?;
    if target >= tree.actions.len() {
        return Err(Error::InvalidAction { action: target, num_actions: tree.actions.len() });
    }
    let original_action = tree_action(tree, state, actual_action);
    if target == original_action {
        return Err(Error::InvalidArgument(format!("tree already predicts `{}`", tree.actions[target])));
    }
    let mover = Mover { variables, config };
    let mut fallback: Option<StateVector> = None;

    let path = tree.decision_path(state);
    for node in path.nodes.iter().rev() {
        for value in mover.crossings(node) {
            let mut modified = state.clone();
            modified.set(node.feature, value);
            let p = tree.predict(&modified);
            if p == target {
                return Ok(build_result(tree, state, original_action, modified, false));
            }
            if p != original_action && fallback.is_none() {
                fallback = Some(modified);
            }
        }
    }

    for node in path.nodes.iter().rev() {
        let Some(&first) = mover.crossings(node).first() else { continue };
        let mut base = state.clone();
        base.set(node.feature, first);
        let inner = tree.decision_path(&base);
        for second in inner.nodes.iter().rev() {
            for value in mover.crossings(second) {
                let mut modified = base.clone();
                modified.set(second.feature, value);
                if tree.predict(&modified) == target {
                    return Ok(build_result(tree, state, original_action, modified, false));
                }
            }
        }
    }

    match fallback {
        Some(modified) => Ok(build_result(tree, state, original_action, modified, true)),
        None => Err(Error::NoCounterfactualFound),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{TreeNode, TreeVariant};

    fn vars() -> Vec<StateVariable> {
        vec![StateVariable::discrete("A_n", 0.0, 20.0), StateVariable::discrete("B", 0.0, 4.0)]
    }

    /// A_n <= 5 -> (B <= 2 -> b | B > 2 -> s), A_n > 5 -> m.
    fn fixture() -> DecisionTreePolicy {
        let nodes = vec![
            TreeNode::Split { id: 0, feature: 0, threshold: 5.0, left: 1, right: 4 },
            TreeNode::Split { id: 1, feature: 1, threshold: 2.0, left: 2, right: 3 },
            TreeNode::Leaf { id: 2, action: 1, counts: vec![] },
            TreeNode::Leaf { id: 3, action: 0, counts: vec![] },
            TreeNode::Leaf { id: 4, action: 2, counts: vec![] },
        ];
        DecisionTreePolicy::from_nodes(
            nodes,
            vec!["A_n".into(), "B".into()],
            vec!["s".into(), "b".into(), "m".into()],
            TreeVariant::LeafConstrained,
        )
        .unwrap()
    }

    #[test]
    fn leaf_nearest_node_moves_first() {
        let t = fixture();
        let s = StateVector(vec![4.0, 3.0]);
        let r = generate_counterfactuals(&t, &vars(), &s, 0, MoveConfig::with_delta(0.01)).unwrap();
        assert_eq!(r.counterfactual_action, 1);
        assert_eq!(r.modified_state.get(1), 1.99);
        assert_eq!(r.moved_features.len(), 1);
        assert_eq!(r.moved_features[0].name, "B");
    }

    #[test]
    fn default_discrete_delta_jumps_to_nearest_integer() {
        let t = fixture();
        let s = StateVector(vec![10.0, 3.0]);
        let r = generate_counterfactuals(&t, &vars(), &s, 2, MoveConfig::default()).unwrap();
        assert_eq!(r.modified_state.get(0), 5.0);
        assert_eq!(r.counterfactual_action, 0);
    }

    #[test]
    fn target_mode_reaches_requested_action() {
        let t = fixture();
        let s = StateVector(vec![10.0, 3.0]);
        let r = generate_towards(&t, &vars(), &s, 2, 1, MoveConfig::default()).unwrap();
        assert_eq!(r.counterfactual_action, 1);
        assert!(!r.reached_different_action);
        assert_eq!(r.moved_features.len(), 2);
    }

    #[test]
    fn single_leaf_tree_has_no_counterfactual() {
        let t = DecisionTreePolicy::from_nodes(
            vec![TreeNode::Leaf { id: 0, action: 0, counts: vec![] }],
            vec!["A_n".into(), "B".into()],
            vec!["s".into(), "b".into()],
            TreeVariant::LeafConstrained,
        )
        .unwrap();
        let err = generate_counterfactuals(&t, &vars(), &StateVector(vec![1.0, 1.0]), 0, MoveConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NoCounterfactualFound));
    }

    #[test]
    fn saturated_range_falls_back_to_parent() {
        let t = fixture();
        // Path A_n <= 5, B <= 2 -> b. With B capped at 2 the B node cannot
        // be crossed and A_n moves instead.
        let s = StateVector(vec![0.0, 0.0]);
        let r = generate_counterfactuals(&t, &vars(), &s, 1, MoveConfig::default()).unwrap();
        assert_eq!(r.modified_state.get(1), 3.0);
        let narrow = vec![StateVariable::discrete("A_n", 0.0, 20.0), StateVariable::discrete("B", 0.0, 2.0)];
        let r = generate_counterfactuals(&t, &narrow, &s, 1, MoveConfig::default()).unwrap();
        assert_eq!(r.moved_features[0].name, "A_n");
        assert_eq!(r.modified_state.get(0), 6.0);
    }
}

//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use oppchain::envs::{craft, EnvKind};
use oppchain::mdp::record_replay;
use oppchain::graph::{ActionInfluenceGraph, EdgeDoc, GraphDocument, VariableDoc};
use oppchain::tree::{DecisionTreePolicy, TreeNode, TreeVariant};
use oppchain::{MdpSpec, ReplayDataset, StateVariable, StateVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Craft tree shaped like the worked example: A_n <= 5 splits on B
/// (B <= 2 builds barracks, B > 2 builds a depot); A_n > 5 trains marines
/// up to 18 and attacks beyond.
pub fn craft_example_tree() -> DecisionTreePolicy {
    let nodes = vec![
        TreeNode::Split { id: 0, feature: craft::A_N, threshold: 5.0, left: 1, right: 4 },
        TreeNode::Split { id: 1, feature: craft::B, threshold: 2.0, left: 2, right: 3 },
        TreeNode::Leaf { id: 2, action: craft::BUILD_BARRACKS, counts: vec![] },
        TreeNode::Leaf { id: 3, action: craft::BUILD_SUPPLY_DEPOT, counts: vec![] },
        TreeNode::Split { id: 4, feature: craft::A_N, threshold: 18.0, left: 5, right: 6 },
        TreeNode::Leaf { id: 5, action: craft::TRAIN_MARINE, counts: vec![] },
        TreeNode::Leaf { id: 6, action: craft::ATTACK, counts: vec![] },
    ];
    let spec = craft::spec();
    DecisionTreePolicy::from_nodes(nodes, spec.variable_names(), spec.actions, TreeVariant::LeafConstrained).unwrap()
}

/// Explanatory variables of `action`'s chain computed by walking every
/// path of the document: heads, plus chain variables that are neither
/// sinks nor (non-head) direct parents of a sink. `None` when no edge
/// carries the action.
pub fn oracle_explanatory(doc: &GraphDocument, action: &str) -> Option<BTreeSet<String>> {
    let heads: BTreeSet<String> = doc.edges.iter().filter(|e| e.action == action).map(|e| e.to.clone()).collect();
    if heads.is_empty() {
        return None;
    }
    fn walk(doc: &GraphDocument, v: &str, seen: &mut BTreeSet<String>) {
        seen.insert(v.to_string());
        for e in doc.edges.iter().filter(|e| e.from == v) {
            walk(doc, &e.to, seen);
        }
    }
    let mut chain = BTreeSet::new();
    for h in &heads {
        walk(doc, h, &mut chain);
    }
    let sinks: BTreeSet<String> = doc
        .variables
        .iter()
        .filter(|v| !v.exogenous && !doc.edges.iter().any(|e| e.from == v.name))
        .map(|v| v.name.clone())
        .collect();
    let parents_of_sinks: BTreeSet<String> = doc
        .edges
        .iter()
        .filter(|e| chain.contains(&e.from) && sinks.contains(&e.to))
        .map(|e| e.from.clone())
        .collect();
    Some(
        chain
            .into_iter()
            .filter(|v| heads.contains(v) || (!sinks.contains(v) && !parents_of_sinks.contains(v)))
            .collect(),
    )
}

/// Random tree over `n_features` discrete features in [0, 10] with
/// between 1 and `max_leaves` leaves and up to 4 actions.
pub fn random_tree<R: Rng>(rng: &mut R, n_features: usize, max_leaves: usize) -> (DecisionTreePolicy, Vec<StateVariable>) {
    let variables: Vec<StateVariable> =
        (0..n_features).map(|i| StateVariable::discrete(&format!("V{i}"), 0.0, 10.0)).collect();
    let n_actions = rng.gen_range(2..=4);
    random_tree_over(rng, &variables, n_actions, max_leaves)
}

pub fn random_tree_over<R: Rng>(
    rng: &mut R,
    variables: &[StateVariable],
    n_actions: usize,
    max_leaves: usize,
) -> (DecisionTreePolicy, Vec<StateVariable>) {
    let target = rng.gen_range(1..=max_leaves.max(1));
    let mut nodes = vec![TreeNode::Leaf { id: 0, action: rng.gen_range(0..n_actions), counts: vec![] }];
    let mut leaves = vec![0usize];
    while leaves.len() < target {
        let pick = leaves.swap_remove(rng.gen_range(0..leaves.len()));
        let feature = rng.gen_range(0..variables.len());
        let v = &variables[feature];
        let threshold = rng.gen_range(v.min as i64..v.max as i64) as f64 + if rng.gen_bool(0.5) { 0.5 } else { 0.0 };
        let (left, right) = (nodes.len(), nodes.len() + 1);
        nodes.push(TreeNode::Leaf { id: left, action: rng.gen_range(0..n_actions), counts: vec![] });
        nodes.push(TreeNode::Leaf { id: right, action: rng.gen_range(0..n_actions), counts: vec![] });
        nodes[pick] = TreeNode::Split { id: pick, feature, threshold, left, right };
        leaves.push(left);
        leaves.push(right);
    }
    let names = variables.iter().map(|v| v.name.clone()).collect();
    let actions = (0..n_actions).map(|a| format!("a{a}")).collect();
    let tree = DecisionTreePolicy::from_nodes(nodes, names, actions, TreeVariant::LeafConstrained).unwrap();
    (tree, variables.to_vec())
}

pub struct RandomCase {
    pub graph: ActionInfluenceGraph,
    pub spec: MdpSpec,
    pub tree: DecisionTreePolicy,
    pub state: StateVector,
}

/// Random DAG over at most 6 variables (edges only from lower to higher
/// index), a tree with at most 8 leaves over the same variables and a
/// random state.
pub fn random_case<R: Rng>(rng: &mut R) -> RandomCase {
    let n = rng.gen_range(2..=6);
    let n_actions = rng.gen_range(2..=4);
    let names: Vec<String> = (0..n).map(|i| format!("V{i}")).collect();
    let actions: Vec<String> = (0..n_actions).map(|a| format!("a{a}")).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.4) {
                edges.push(EdgeDoc {
                    from: names[i].clone(),
                    to: names[j].clone(),
                    action: actions[rng.gen_range(0..n_actions)].clone(),
                });
            }
        }
    }
    let doc = GraphDocument {
        variables: names.iter().map(|name| VariableDoc { name: name.clone(), exogenous: false }).collect(),
        actions: actions.clone(),
        edges,
        rewards: None,
    };
    let spec = MdpSpec {
        variables: names.iter().map(|name| StateVariable::discrete(name, 0.0, 10.0)).collect(),
        actions,
        gamma: 0.9,
        reward_threshold: 0.0,
    };
    let mut graph = ActionInfluenceGraph::from_document(&doc).unwrap();
    graph.bind(&spec).unwrap();
    let (tree, _) = random_tree_over(rng, &spec.variables, n_actions, 8);
    let state = StateVector((0..n).map(|_| rng.gen_range(0..=10) as f64).collect());
    RandomCase { graph, spec, tree, state }
}

/// Craft replays whose behaviour follows the enabling order strictly:
/// runs of 1 to 3 repetitions of depot, barracks, marine, attack, cycling.
pub fn rule_following_replay(episodes: usize, seed: u64) -> ReplayDataset {
    let order = [craft::BUILD_SUPPLY_DEPOT, craft::BUILD_BARRACKS, craft::TRAIN_MARINE, craft::ATTACK];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = EnvKind::Craft.make();
    let parts = (0..episodes)
        .map(|e| {
            let (mut stage, mut left) = (0usize, rng.gen_range(1..=3));
            let runs: Vec<usize> = (0..64).map(|_| rng.gen_range(1..=3)).collect();
            let mut run = 0;
            record_replay(
                env.as_mut(),
                |_| {
                    if left == 0 {
                        stage = (stage + 1) % order.len();
                        run += 1;
                        left = runs[run % runs.len()];
                    }
                    left -= 1;
                    order[stage]
                },
                1,
                seed.wrapping_add(e as u64),
            )
        })
        .collect();
    ReplayDataset::merge(parts)
}

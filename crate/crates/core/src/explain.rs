//! Explanations of "why" and "why not" questions, built from causal chains,
//! surrogate-tree decision paths, counterfactual boundary moves and distal
//! action predictions, plus template-based text rendering.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::counterfactual::{generate_towards, MoveConfig, MovedFeature};
use crate::distal::{predict_distal, DistalPredictor};
use crate::equations::{counterfactual_instantiation, FittedEquations};
use crate::graph::{ActionInfluenceGraph, CausalChain, EdgeDoc};
use crate::mdp::StateVector;
use crate::tree::{Branch, DecisionPath, DecisionTreePolicy, PathNode};
use crate::{Error, Result};

pub const EXPLANATION_SCHEMA: &str = include_str!("../assets/explanation.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationKind {
    MinimallyCompleteGraph,
    MinimallyCompleteTree,
    Contrastive,
    Distal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    Why,
    WhyNot,
}

impl FromStr for QuestionType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "why" => Ok(QuestionType::Why),
            "why_not" | "whynot" => Ok(QuestionType::WhyNot),
            _ => Err(Error::InvalidArgument(format!("unknown question type `{s}` (expected why or why_not)"))),
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuestionType::Why => "why",
            QuestionType::WhyNot => "why_not",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    #[serde(rename = "type")]
    pub kind: QuestionType,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeValue {
    pub variable: String,
    pub value: f64,
    /// Predicted value under the counterfactual action, when equations
    /// were supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterfactual: Option<f64>,
}

/// A chain variable that is also tested on the decision path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionNodeValue {
    pub variable: String,
    pub value: f64,
    /// Threshold of the deepest decision node testing the variable.
    pub boundary: f64,
    pub branch: Branch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastNode {
    pub variable: String,
    pub actual: f64,
    pub counterfactual: f64,
    pub boundary: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistalAction {
    pub action: String,
    pub expected_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainView {
    pub action: String,
    pub nodes: Vec<String>,
    pub edges: Vec<EdgeDoc>,
    pub reward_nodes: Vec<String>,
}

impl ChainView {
    pub fn new(graph: &ActionInfluenceGraph, chain: &CausalChain) -> Self {
        Self {
            action: graph.actions()[chain.action].clone(),
            nodes: chain.intermediate_nodes.iter().map(|&v| graph.name(v).to_string()).collect(),
            edges: chain
                .edges
                .iter()
                .map(|e| EdgeDoc {
                    from: graph.name(e.from).to_string(),
                    to: graph.name(e.to).to_string(),
                    action: graph.actions()[e.action].clone(),
                })
                .collect(),
            reward_nodes: chain.reward_nodes.iter().map(|&v| graph.name(v).to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualSummary {
    pub action: String,
    pub moved_features: Vec<MovedFeature>,
    pub reached_different_action: bool,
}

/// One answer. Fields outside the declared kind are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Explanation {
    pub kind: ExplanationKind,
    pub question: Question,
    /// The action the explanation is about: the asked action for "why",
    /// the surrogate's prediction for "why not".
    pub actual_action: String,
    pub reward_nodes: Vec<NodeValue>,
    pub head_nodes: Option<Vec<NodeValue>>,
    pub immediate_predecessors: Option<Vec<NodeValue>>,
    pub tree_nodes: Option<Vec<DecisionNodeValue>>,
    pub contrast_nodes: Option<Vec<ContrastNode>>,
    pub distal_action: Option<DistalAction>,
    pub counterfactual: Option<CounterfactualSummary>,
    /// Chain of the asked action (the counterfactual action for "why not").
    pub chain: ChainView,
    /// Chain of the actual action, present for "why not" answers.
    pub actual_chain: Option<ChainView>,
    pub notes: Vec<String>,
    pub rendered_text: String,
}

impl Explanation {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("explanation serializes")
    }
}

fn values(graph: &ActionInfluenceGraph, vars: &[usize], state: &StateVector) -> Result<Vec<NodeValue>> {
    let inst = graph.actual_instantiation(state)?;
    Ok(vars
        .iter()
        .filter_map(|&v| inst.get(v).map(|value| NodeValue { variable: graph.name(v).to_string(), value, counterfactual: None }))
        .collect())
}

fn action_name(graph: &ActionInfluenceGraph, action: usize) -> Result<String> {
    graph
        .actions()
        .get(action)
        .cloned()
        .ok_or(Error::InvalidAction { action, num_actions: graph.actions().len() })
}

/// Chain variables (explanatory nodes of `chain`) tested on `path`, in
/// path order, each with its deepest node on the path.
pub fn chain_path_intersection<'p>(
    graph: &ActionInfluenceGraph,
    chain: &CausalChain,
    path: &'p DecisionPath,
) -> Vec<(usize, &'p PathNode)> {
    let explanatory = chain.explanatory_nodes();
    path.features()
        .into_iter()
        .filter_map(|f| {
            let var = graph.variable_for_feature(f)?;
            explanatory.contains(&var).then(|| (var, path.nearest_node_for(f).expect("feature is on the path")))
        })
        .collect()
}

/// Minimally complete graph explanation: reward, head and
/// immediate-predecessor nodes of the action's causal chain under the
/// actual instantiation.
pub fn why_graph(graph: &ActionInfluenceGraph, state: &StateVector, action: usize, text: &TextRenderer) -> Result<Explanation> {
    let name = action_name(graph, action)?;
    let chain = graph.causal_chain(action)?;
    let mut e = Explanation {
        kind: ExplanationKind::MinimallyCompleteGraph,
        question: Question { kind: QuestionType::Why, action: name.clone() },
        actual_action: name,
        reward_nodes: values(graph, &chain.reward_nodes, state)?,
        head_nodes: Some(values(graph, &chain.head_nodes, state)?),
        immediate_predecessors: Some(values(graph, &chain.immediate_predecessors, state)?),
        tree_nodes: None,
        contrast_nodes: None,
        distal_action: None,
        counterfactual: None,
        chain: ChainView::new(graph, &chain),
        actual_chain: None,
        notes: Vec::new(),
        rendered_text: String::new(),
    };
    e.rendered_text = text.render(&e);
    Ok(e)
}

/// Minimally complete tree explanation: chain variables that also appear
/// as decision nodes on the state's path, plus the chain's reward nodes.
pub fn why_tree(
    graph: &ActionInfluenceGraph,
    tree: &DecisionTreePolicy,
    state: &StateVector,
    action: usize,
    text: &TextRenderer,
) -> Result<Explanation> {
    let name = action_name(graph, action)?;
    let chain = graph.causal_chain(action)?;
    let path = tree.decision_path(state);
    let mut notes = Vec::new();
    if path.leaf_action != action {
        warn!("PolicyMismatch: tree predicts `{}` for a why `{}` question", tree.actions[path.leaf_action], name);
        notes.push(format!("PolicyMismatch: the surrogate tree predicts {}", tree.actions[path.leaf_action]));
    }
    let tree_nodes = chain_path_intersection(graph, &chain, &path)
        .into_iter()
        .map(|(v, node)| DecisionNodeValue {
            variable: graph.name(v).to_string(),
            value: node.value,
            boundary: node.threshold,
            branch: node.branch,
        })
        .collect();
    let mut e = Explanation {
        kind: ExplanationKind::MinimallyCompleteTree,
        question: Question { kind: QuestionType::Why, action: name.clone() },
        actual_action: name,
        reward_nodes: values(graph, &chain.reward_nodes, state)?,
        head_nodes: None,
        immediate_predecessors: None,
        tree_nodes: Some(tree_nodes),
        contrast_nodes: None,
        distal_action: None,
        counterfactual: None,
        chain: ChainView::new(graph, &chain),
        actual_chain: None,
        notes,
        rendered_text: String::new(),
    };
    e.rendered_text = text.render(&e);
    Ok(e)
}

/// Contrastive explanation: moves decision boundaries until the tree
/// predicts `b`, then contrasts the actual and counterfactual values of the
/// variables on b's chain that are decision nodes of the counterfactual
/// path.
pub fn why_not(
    graph: &ActionInfluenceGraph,
    fitted: Option<&FittedEquations>,
    tree: &DecisionTreePolicy,
    state: &StateVector,
    b: usize,
    moves: MoveConfig,
    text: &TextRenderer,
) -> Result<Explanation> {
    let b_name = action_name(graph, b)?;
    let chain = graph.causal_chain(b)?;
    let actual_action = tree.predict(state);
    let actual_path = tree.decision_path(state);
    let cf = generate_towards(tree, graph.state_variables(), state, actual_action, b, moves)?;

    let contrast_nodes = chain_path_intersection(graph, &chain, &cf.counterfactual_nodes)
        .into_iter()
        .map(|(v, cf_node)| {
            let feature = cf_node.feature;
            let boundary = actual_path.nearest_node_for(feature).unwrap_or(cf_node).threshold;
            ContrastNode {
                variable: graph.name(v).to_string(),
                actual: state.get(feature),
                counterfactual: cf.modified_state.get(feature),
                boundary,
            }
        })
        .collect();

    let mut reward_nodes = values(graph, &chain.reward_nodes, state)?;
    let mut notes = Vec::new();
    if let Some(f) = fitted {
        match counterfactual_instantiation(graph, f, state, b) {
            Ok(inst) => {
                for (node, &v) in reward_nodes.iter_mut().zip(&chain.reward_nodes) {
                    node.counterfactual = inst.get(v);
                }
            }
            Err(err) => notes.push(format!("counterfactual rewards unavailable: {err}")),
        }
    }
    if cf.reached_different_action {
        notes.push(format!(
            "ReachedDifferentAction: boundary moves reached {} rather than {}",
            tree.actions[cf.counterfactual_action], b_name
        ));
    }
    let actual_chain = graph.causal_chain(actual_action).ok().map(|c| ChainView::new(graph, &c));
    let mut e = Explanation {
        kind: ExplanationKind::Contrastive,
        question: Question { kind: QuestionType::WhyNot, action: b_name },
        actual_action: tree.actions[actual_action].clone(),
        reward_nodes,
        head_nodes: None,
        immediate_predecessors: None,
        tree_nodes: None,
        contrast_nodes: Some(contrast_nodes),
        distal_action: None,
        counterfactual: Some(CounterfactualSummary {
            action: tree.actions[cf.counterfactual_action].clone(),
            moved_features: cf.moved_features,
            reached_different_action: cf.reached_different_action,
        }),
        chain: ChainView::new(graph, &chain),
        actual_chain,
        notes,
        rendered_text: String::new(),
    };
    e.rendered_text = text.render(&e);
    Ok(e)
}

/// Everything a distal explanation needs besides the state and question.
pub struct DistalInputs<'a> {
    pub graph: &'a ActionInfluenceGraph,
    pub fitted: Option<&'a FittedEquations>,
    pub tree: &'a DecisionTreePolicy,
    pub predictor: &'a DistalPredictor,
    /// Earlier (state, action) steps, oldest first; the current state and
    /// action are appended.
    pub history: &'a [(StateVector, usize)],
}

/// Distal explanation: the tree (why) or contrastive (why not) answer
/// extended with the distal action predicted for the current action, when
/// it lies on that action's causal chain.
pub fn distal(
    inputs: &DistalInputs<'_>,
    state: &StateVector,
    question: QuestionType,
    action: usize,
    moves: MoveConfig,
    text: &TextRenderer,
) -> Result<Explanation> {
    let graph = inputs.graph;
    let (mut base, current) = match question {
        QuestionType::Why => (why_tree(graph, inputs.tree, state, action, text)?, action),
        QuestionType::WhyNot => {
            let e = why_not(graph, inputs.fitted, inputs.tree, state, action, moves, text)?;
            (e, inputs.tree.predict(state))
        }
    };
    let mut trace = inputs.history.to_vec();
    trace.push((state.clone(), current));
    let Some((distal_action, expected_return)) = predict_distal(inputs.predictor, &trace, graph, current) else {
        base.notes.push("DistalUnavailable: no distal action on the current causal chain".into());
        return Ok(base);
    };
    let current_chain = graph.causal_chain(current)?;
    let path = inputs.tree.decision_path(state);
    base.tree_nodes = Some(
        chain_path_intersection(graph, &current_chain, &path)
            .into_iter()
            .map(|(v, node)| DecisionNodeValue {
                variable: graph.name(v).to_string(),
                value: node.value,
                boundary: node.threshold,
                branch: node.branch,
            })
            .collect(),
    );
    base.reward_nodes = values(graph, &current_chain.reward_nodes, state)?;
    if base.actual_chain.is_none() {
        base.actual_chain = Some(ChainView::new(graph, &current_chain));
    }
    base.kind = ExplanationKind::Distal;
    base.distal_action = Some(DistalAction { action: graph.actions()[distal_action].clone(), expected_return });
    base.rendered_text = text.render(&base);
    Ok(base)
}

/// Symbol-to-phrase tables for rendering.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    #[serde(default)]
    pub variables: BTreeMap<String, String>,
    /// action name -> (phrase, symbol)
    #[serde(default)]
    pub actions: BTreeMap<String, (String, String)>,
    /// Plural phrases used for head nodes ("ally units").
    #[serde(default)]
    pub heads: BTreeMap<String, String>,
}

impl Lexicon {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn variable(&self, symbol: &str) -> String {
        match self.variables.get(symbol) {
            Some(phrase) => format!("{phrase} ({symbol})"),
            None => symbol.to_string(),
        }
    }

    pub fn head(&self, symbol: &str) -> String {
        match self.heads.get(symbol) {
            Some(phrase) => format!("{phrase} ({symbol})"),
            None => self.variable(symbol),
        }
    }

    pub fn action(&self, name: &str) -> String {
        match self.actions.get(name) {
            Some((phrase, symbol)) => format!("{phrase} ({symbol})"),
            None => name.replace('_', " "),
        }
    }
}

/// Per-kind sentence templates with `{placeholder}` fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub why_graph: String,
    pub why_tree: String,
    pub why_tree_empty: String,
    pub why_not: String,
    pub why_not_empty: String,
    pub contrast_item: String,
    pub distal: String,
    pub distal_empty: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            why_graph: "Because it is more desirable to do the action {action} to have more {heads} as the goal is to have more {rewards}.".into(),
            why_tree: "Because {nodes} and the goal is to have more {rewards}.".into(),
            why_tree_empty: "Because the goal is to have more {rewards}.".into(),
            why_not: "Because {contrast}, it is more desirable to do the action {action} instead of {counterfactual_action} as the goal is to have more {rewards}.".into(),
            why_not_empty: "Because it is more desirable to do the action {action} instead of {counterfactual_action} as the goal is to have more {rewards}.".into(),
            contrast_item: "{variable} is {relation} the optimal number {boundary} ({actual} rather than {counterfactual})".into(),
            distal: "Because {boundaries}, it is more desirable do the action {action} to enable the action {distal} as the goal is to have more {rewards}.".into(),
            distal_empty: "It is more desirable do the action {action} to enable the action {distal} as the goal is to have more {rewards}.".into(),
        }
    }
}

impl TemplateSet {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextRenderer {
    pub lexicon: Lexicon,
    pub templates: TemplateSet,
}

fn fill(template: &str, fields: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (k, v) in fields {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

/// "a", "a and b", "a, b and c".
pub fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn relation(branch: Branch) -> &'static str {
    match branch {
        Branch::Le => "less than",
        Branch::Gt => "greater than",
    }
}

impl TextRenderer {
    pub fn new(lexicon: Lexicon, templates: TemplateSet) -> Self {
        Self { lexicon, templates }
    }

    pub fn with_lexicon(lexicon: Lexicon) -> Self {
        Self { lexicon, templates: TemplateSet::default() }
    }

    fn rewards(&self, e: &Explanation) -> String {
        join_list(&e.reward_nodes.iter().map(|n| self.lexicon.variable(&n.variable)).collect::<Vec<_>>())
    }

    fn contrast(&self, nodes: &[ContrastNode]) -> String {
        let items: Vec<String> = nodes
            .iter()
            .map(|c| {
                fill(
                    &self.templates.contrast_item,
                    &[
                        ("variable", self.lexicon.variable(&c.variable)),
                        ("relation", relation(Branch::taken(c.actual, c.boundary)).to_string()),
                        ("boundary", c.boundary.to_string()),
                        ("actual", c.actual.to_string()),
                        ("counterfactual", c.counterfactual.to_string()),
                    ],
                )
            })
            .collect();
        join_list(&items)
    }

    /// Deterministic template fill for the explanation's kind.
    pub fn render(&self, e: &Explanation) -> String {
        let t = &self.templates;
        let rewards = self.rewards(e);
        let action = self.lexicon.action(&e.actual_action);
        match e.kind {
            ExplanationKind::MinimallyCompleteGraph => {
                let heads: Vec<String> =
                    e.head_nodes.iter().flatten().map(|n| self.lexicon.head(&n.variable)).collect();
                fill(&t.why_graph, &[("action", action), ("heads", join_list(&heads)), ("rewards", rewards)])
            }
            ExplanationKind::MinimallyCompleteTree => {
                let nodes: Vec<String> = e
                    .tree_nodes
                    .iter()
                    .flatten()
                    .map(|n| format!("{} is {}", self.lexicon.variable(&n.variable), n.value))
                    .collect();
                if nodes.is_empty() {
                    fill(&t.why_tree_empty, &[("rewards", rewards)])
                } else {
                    fill(&t.why_tree, &[("nodes", join_list(&nodes)), ("rewards", rewards)])
                }
            }
            ExplanationKind::Contrastive => self.render_contrastive(e, action, rewards),
            ExplanationKind::Distal => {
                let distal = e.distal_action.as_ref().map(|d| self.lexicon.action(&d.action)).unwrap_or_default();
                let boundaries: Vec<String> = e
                    .tree_nodes
                    .iter()
                    .flatten()
                    .map(|n| {
                        format!(
                            "{} is {} the optimal number {}",
                            self.lexicon.variable(&n.variable),
                            relation(n.branch),
                            n.boundary
                        )
                    })
                    .collect();
                let fields = [("action", action.clone()), ("distal", distal), ("rewards", rewards)];
                let sentence = if boundaries.is_empty() {
                    fill(&t.distal_empty, &fields)
                } else {
                    let mut f = fields.to_vec();
                    f.push(("boundaries", join_list(&boundaries)));
                    fill(&t.distal, &f)
                };
                if e.question.kind == QuestionType::WhyNot {
                    let base_rewards = self.rewards(e);
                    format!("{sentence} {}", self.render_contrastive(e, action, base_rewards))
                } else {
                    sentence
                }
            }
        }
    }

    fn render_contrastive(&self, e: &Explanation, action: String, rewards: String) -> String {
        let t = &self.templates;
        let cf_action = self.lexicon.action(&e.question.action);
        let contrast = e.contrast_nodes.as_deref().unwrap_or(&[]);
        let fields = [("action", action), ("counterfactual_action", cf_action), ("rewards", rewards)];
        if contrast.is_empty() {
            fill(&t.why_not_empty, &fields)
        } else {
            let mut f = fields.to_vec();
            f.push(("contrast", self.contrast(contrast)));
            fill(&t.why_not, &f)
        }
    }
}

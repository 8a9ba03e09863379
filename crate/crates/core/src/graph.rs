//! Action influence graphs: variables joined by action-labelled edges, one
//! structural-equation slot per (target, action) pair, reward variables at
//! the sinks.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::mdp::{MdpSpec, StateVariable, StateVector};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableDoc {
    pub name: String,
    #[serde(default)]
    pub exogenous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub from: String,
    pub to: String,
    pub action: String,
}

/// On-disk graph description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub variables: Vec<VariableDoc>,
    pub actions: Vec<String>,
    pub edges: Vec<EdgeDoc>,
    /// Optional declared reward set, cross-checked against the sinks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewards: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub action: usize,
}

/// F_{X.A}: the structural equation for `target` when `action` is taken.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquationSlot {
    pub target: usize,
    pub action: usize,
    /// Source variables in variable order.
    pub sources: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ActionInfluenceGraph {
    names: Vec<String>,
    exogenous: Vec<bool>,
    actions: Vec<String>,
    edges: Vec<Edge>,
    slots: Vec<EquationSlot>,
    reward_nodes: Vec<usize>,
    topo_order: Vec<usize>,
    /// Graph variable -> index into the bound state vector.
    layout: Option<Vec<Option<usize>>>,
    state_variables: Vec<StateVariable>,
}

impl ActionInfluenceGraph {
    /// Parses and validates a graph document.
    pub fn load(text: &str) -> Result<Self> {
        let doc: GraphDocument = serde_json::from_str(text).map_err(|e| Error::Parse(format!("graph document: {e}")))?;
        Self::from_document(&doc)
    }

    /// Parses a document and binds it to the state layout of `spec`.
    pub fn load_for(text: &str, spec: &MdpSpec) -> Result<Self> {
        let mut graph = Self::load(text)?;
        graph.bind(spec)?;
        Ok(graph)
    }

    pub fn from_document(doc: &GraphDocument) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, v) in doc.variables.iter().enumerate() {
            if index.insert(v.name.clone(), i).is_some() {
                return Err(Error::Parse(format!("duplicate variable `{}`", v.name)));
            }
        }
        let action_index: HashMap<&str, usize> = doc.actions.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
        let mut edges = Vec::with_capacity(doc.edges.len());
        for e in &doc.edges {
            let from = *index.get(&e.from).ok_or_else(|| Error::UnknownVariable(e.from.clone()))?;
            let to = *index.get(&e.to).ok_or_else(|| Error::UnknownVariable(e.to.clone()))?;
            let action = *action_index.get(e.action.as_str()).ok_or_else(|| Error::DanglingAction {
                from: e.from.clone(),
                to: e.to.clone(),
                action: e.action.clone(),
            })?;
            if doc.variables[to].exogenous {
                return Err(Error::Parse(format!("exogenous variable `{}` cannot have incoming edges", e.to)));
            }
            let edge = Edge { from, to, action };
            if !edges.contains(&edge) {
                edges.push(edge);
            }
        }

        let n = doc.variables.len();
        let topo_order = topological_order(n, &edges).map_err(|v| Error::Cycle(doc.variables[v].name.clone()))?;

        let mut slot_sources: Vec<((usize, usize), BTreeSet<usize>)> = Vec::new();
        for e in &edges {
            match slot_sources.iter_mut().find(|(k, _)| *k == (e.to, e.action)) {
                Some((_, s)) => {
                    s.insert(e.from);
                }
                None => slot_sources.push(((e.to, e.action), BTreeSet::from([e.from]))),
            }
        }
        slot_sources.sort_by_key(|((t, a), _)| (*t, *a));
        let slots = slot_sources
            .into_iter()
            .map(|((target, action), s)| EquationSlot { target, action, sources: s.into_iter().collect() })
            .collect();

        let reward_nodes: Vec<usize> =
            (0..n).filter(|&v| !doc.variables[v].exogenous && !edges.iter().any(|e| e.from == v)).collect();

        let graph = Self {
            names: doc.variables.iter().map(|v| v.name.clone()).collect(),
            exogenous: doc.variables.iter().map(|v| v.exogenous).collect(),
            actions: doc.actions.clone(),
            edges,
            slots,
            reward_nodes,
            topo_order,
            layout: None,
            state_variables: Vec::new(),
        };

        if let Some(declared) = &doc.rewards {
            let declared: BTreeSet<&str> = declared.iter().map(String::as_str).collect();
            let computed: BTreeSet<&str> = graph.reward_nodes.iter().map(|&v| graph.names[v].as_str()).collect();
            if declared != computed {
                return Err(Error::Parse(format!(
                    "declared rewards {declared:?} differ from the sink nodes {computed:?}"
                )));
            }
        }
        Ok(graph)
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            variables: self
                .names
                .iter()
                .zip(&self.exogenous)
                .map(|(name, &exogenous)| VariableDoc { name: name.clone(), exogenous })
                .collect(),
            actions: self.actions.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeDoc {
                    from: self.names[e.from].clone(),
                    to: self.names[e.to].clone(),
                    action: self.actions[e.action].clone(),
                })
                .collect(),
            rewards: Some(self.reward_nodes.iter().map(|&v| self.names[v].clone()).collect()),
        }
    }

    /// Aligns graph variables with the state layout of `spec`. Every
    /// endogenous variable must be a state variable and the action lists
    /// must agree.
    pub fn bind(&mut self, spec: &MdpSpec) -> Result<()> {
        if spec.actions != self.actions {
            return Err(Error::InvalidSpec(format!(
                "graph actions {:?} differ from environment actions {:?}",
                self.actions, spec.actions
            )));
        }
        let mut layout = Vec::with_capacity(self.names.len());
        for (name, &exo) in self.names.iter().zip(&self.exogenous) {
            let idx = spec.variable_index(name);
            if idx.is_none() && !exo {
                return Err(Error::UnknownVariable(name.clone()));
            }
            layout.push(idx);
        }
        self.layout = Some(layout);
        self.state_variables = spec.variables.clone();
        Ok(())
    }

    pub fn is_bound(&self) -> bool {
        self.layout.is_some()
    }

    /// State-vector variables (with ranges) the graph is bound to.
    pub fn state_variables(&self) -> &[StateVariable] {
        &self.state_variables
    }

    pub fn state_index(&self, var: usize) -> Option<usize> {
        self.layout.as_ref().and_then(|l| l[var])
    }

    /// Graph variable backing state feature `feature`, if any.
    pub fn variable_for_feature(&self, feature: usize) -> Option<usize> {
        self.layout.as_ref()?.iter().position(|&l| l == Some(feature))
    }

    pub fn num_variables(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, var: usize) -> &str {
        &self.names[var]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn variable(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn is_exogenous(&self, var: usize) -> bool {
        self.exogenous[var]
    }

    pub fn endogenous(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.names.len()).filter(|&v| !self.exogenous[v])
    }

    pub fn exogenous(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.names.len()).filter(|&v| self.exogenous[v])
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn slots(&self) -> &[EquationSlot] {
        &self.slots
    }

    pub fn slot(&self, target: usize, action: usize) -> Option<&EquationSlot> {
        self.slots.iter().find(|s| s.target == target && s.action == action)
    }

    /// Sink (out-degree 0) endogenous variables.
    pub fn reward_nodes(&self) -> &[usize] {
        &self.reward_nodes
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.topo_order
    }

    /// Action-rooted causal chain: the union of every path from the action's
    /// head nodes down to the sinks.
    pub fn causal_chain(&self, action: usize) -> Result<CausalChain> {
        let action_name = || self.actions.get(action).cloned().unwrap_or_else(|| action.to_string());
        let mut head_nodes: Vec<usize> =
            self.edges.iter().filter(|e| e.action == action).map(|e| e.to).collect::<BTreeSet<_>>().into_iter().collect();
        if head_nodes.is_empty() {
            return Err(Error::NoChain(action_name()));
        }
        head_nodes.sort_by_key(|v| self.topo_position(*v));

        let mut on_chain = vec![false; self.names.len()];
        let mut queue: VecDeque<usize> = head_nodes.iter().copied().collect();
        for &h in &head_nodes {
            on_chain[h] = true;
        }
        while let Some(v) = queue.pop_front() {
            for e in self.edges.iter().filter(|e| e.from == v) {
                if !on_chain[e.to] {
                    on_chain[e.to] = true;
                    queue.push_back(e.to);
                }
            }
        }

        let intermediate_nodes: Vec<usize> = self.topo_order.iter().copied().filter(|&v| on_chain[v]).collect();
        let reward_nodes: Vec<usize> = intermediate_nodes.iter().copied().filter(|v| self.reward_nodes.contains(v)).collect();
        let edges: Vec<Edge> = self.edges.iter().copied().filter(|e| on_chain[e.from] && on_chain[e.to]).collect();

        let mut preds = BTreeSet::new();
        for e in &edges {
            if reward_nodes.contains(&e.to) {
                preds.insert(e.from);
            }
        }
        for h in &head_nodes {
            if reward_nodes.contains(h) {
                preds.insert(*h);
            }
        }
        let immediate_predecessors: Vec<usize> = intermediate_nodes.iter().copied().filter(|v| preds.contains(v)).collect();

        let mut actions = BTreeSet::from([action]);
        actions.extend(edges.iter().map(|e| e.action));

        Ok(CausalChain {
            action,
            head_nodes,
            intermediate_nodes,
            reward_nodes,
            immediate_predecessors,
            edges,
            actions: actions.into_iter().collect(),
        })
    }

    /// Actions whose chain contains no other action: the last actions of
    /// the opportunity chains.
    pub fn chain_terminal_actions(&self) -> Vec<usize> {
        (0..self.actions.len())
            .filter(|&a| match self.causal_chain(a) {
                Ok(chain) => chain.actions == [a],
                Err(_) => false,
            })
            .collect()
    }

    fn topo_position(&self, v: usize) -> usize {
        self.topo_order.iter().position(|&t| t == v).unwrap_or(usize::MAX)
    }

    /// M_{V <- S}: every endogenous variable set from the state.
    pub fn actual_instantiation(&self, state: &StateVector) -> Result<Instantiation> {
        let layout = self.layout.as_ref().ok_or_else(|| Error::InvalidSpec("graph is not bound to a state layout".into()))?;
        if state.len() != self.state_variables.len() {
            return Err(Error::DimensionMismatch { expected: self.state_variables.len(), got: state.len() });
        }
        let values = layout.iter().map(|idx| idx.map(|i| state.get(i))).collect();
        Ok(Instantiation { provenance: Provenance::Actual, values })
    }
}

/// Kahn's algorithm; ties broken by variable index. On a cycle, returns a
/// variable on it.
fn topological_order(n: usize, edges: &[Edge]) -> std::result::Result<Vec<usize>, usize> {
    let mut indegree = vec![0usize; n];
    for e in edges {
        indegree[e.to] += 1;
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop_first() {
        order.push(v);
        for e in edges.iter().filter(|e| e.from == v) {
            indegree[e.to] -= 1;
            if indegree[e.to] == 0 {
                ready.insert(e.to);
            }
        }
    }
    if order.len() < n {
        return Err((0..n).find(|&v| indegree[v] > 0).unwrap_or(0));
    }
    Ok(order)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalChain {
    pub action: usize,
    /// Variables the action's edges point into.
    pub head_nodes: Vec<usize>,
    /// Every variable on a head-to-sink path, in topological order.
    pub intermediate_nodes: Vec<usize>,
    pub reward_nodes: Vec<usize>,
    /// Variables directly preceding a reward node on the chain.
    pub immediate_predecessors: Vec<usize>,
    /// Edges between chain variables.
    pub edges: Vec<Edge>,
    /// The action itself plus every action labelling a chain edge.
    pub actions: Vec<usize>,
}

impl CausalChain {
    /// Chain variables matched against decision nodes: the head nodes and
    /// the nodes between them and the reward-triggering predecessors.
    /// Reward nodes and (non-head) immediate predecessors are reported by
    /// the explanation separately.
    pub fn explanatory_nodes(&self) -> Vec<usize> {
        self.intermediate_nodes
            .iter()
            .copied()
            .filter(|v| {
                self.head_nodes.contains(v)
                    || (!self.reward_nodes.contains(v) && !self.immediate_predecessors.contains(v))
            })
            .collect()
    }

    pub fn contains(&self, var: usize) -> bool {
        self.intermediate_nodes.contains(&var)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Actual,
    Counterfactual { action: usize },
}

/// Assignment of values to graph variables (exogenous ones may be absent).
#[derive(Debug, Clone, PartialEq)]
pub struct Instantiation {
    pub provenance: Provenance,
    pub values: Vec<Option<f64>>,
}

impl Instantiation {
    pub fn get(&self, var: usize) -> Option<f64> {
        self.values.get(var).copied().flatten()
    }

    pub fn set(&mut self, var: usize, value: f64) {
        self.values[var] = Some(value);
    }

    pub fn named(&self, graph: &ActionInfluenceGraph) -> Vec<(String, f64)> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|x| (graph.name(i).to_string(), x)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{craft, COFFEE_GRAPH, CRAFT_GRAPH};

    fn craft_graph() -> ActionInfluenceGraph {
        ActionInfluenceGraph::load_for(CRAFT_GRAPH, &craft::spec()).unwrap()
    }

    fn names(g: &ActionInfluenceGraph, vars: &[usize]) -> Vec<String> {
        vars.iter().map(|&v| g.name(v).to_string()).collect()
    }

    #[test]
    fn craft_graph_shape() {
        let g = craft_graph();
        assert_eq!(g.endogenous().count(), 6);
        assert_eq!(names(&g, g.reward_nodes()), ["D_u", "D_b"]);
        let slot = g.slot(g.variable("A_n").unwrap(), g.action_index("train_marine").unwrap()).unwrap();
        assert_eq!(names(&g, &slot.sources), ["S", "B"]);
        assert_eq!(g.slots().len(), 5);
    }

    #[test]
    fn coffee_graph_shape() {
        let g = ActionInfluenceGraph::load(COFFEE_GRAPH).unwrap();
        assert_eq!(names(&g, &g.endogenous().collect::<Vec<_>>()), ["L", "W", "Umb", "C", "Usr"]);
        assert_eq!(names(&g, &g.exogenous().collect::<Vec<_>>()), ["Rn"]);
    }

    #[test]
    fn validation_errors() {
        let dangling = r#"{"variables":[{"name":"a"},{"name":"b"}],"actions":["x"],"edges":[{"from":"a","to":"b","action":"y"}]}"#;
        assert!(matches!(ActionInfluenceGraph::load(dangling), Err(Error::DanglingAction { .. })));
        let cyclic = r#"{"variables":[{"name":"a"},{"name":"b"}],"actions":["x"],
            "edges":[{"from":"a","to":"b","action":"x"},{"from":"b","to":"a","action":"x"}]}"#;
        assert!(matches!(ActionInfluenceGraph::load(cyclic), Err(Error::Cycle(_))));
        assert!(matches!(ActionInfluenceGraph::load("{not json"), Err(Error::Parse(_))));
        let unknown = r#"{"variables":[{"name":"a"}],"actions":["x"],"edges":[{"from":"a","to":"z","action":"x"}]}"#;
        assert!(matches!(ActionInfluenceGraph::load(unknown), Err(Error::UnknownVariable(_))));
        let wrong_rewards = r#"{"variables":[{"name":"a"},{"name":"b"}],"actions":["x"],
            "edges":[{"from":"a","to":"b","action":"x"}],"rewards":["a"]}"#;
        assert!(ActionInfluenceGraph::load(wrong_rewards).is_err());
    }

    #[test]
    fn chain_of_supply_depot() {
        let g = craft_graph();
        let chain = g.causal_chain(craft::BUILD_SUPPLY_DEPOT).unwrap();
        assert_eq!(names(&g, &chain.head_nodes), ["S"]);
        assert_eq!(names(&g, &chain.immediate_predecessors), ["A_n"]);
        assert_eq!(names(&g, &chain.reward_nodes), ["D_u", "D_b"]);
        assert_eq!(names(&g, &chain.explanatory_nodes()), ["S", "B"]);
        assert_eq!(chain.actions, vec![0, 1, 2, 3]);
    }

    #[test]
    fn chain_of_barracks() {
        let g = craft_graph();
        let chain = g.causal_chain(craft::BUILD_BARRACKS).unwrap();
        assert_eq!(names(&g, &chain.intermediate_nodes), ["B", "A_n", "D_u", "D_b"]);
        assert_eq!(names(&g, &chain.explanatory_nodes()), ["B"]);
        assert_eq!(chain.actions, vec![1, 2, 3]);
    }

    #[test]
    fn smallest_chain() {
        let doc = r#"{"variables":[{"name":"Y"},{"name":"X"}],"actions":["a","b"],"edges":[{"from":"Y","to":"X","action":"a"}]}"#;
        let g = ActionInfluenceGraph::load(doc).unwrap();
        let chain = g.causal_chain(0).unwrap();
        let x = vec![1];
        assert_eq!(chain.head_nodes, x);
        assert_eq!(chain.immediate_predecessors, x);
        assert_eq!(chain.reward_nodes, x);
        assert_eq!(chain.intermediate_nodes, x);
        assert!(matches!(g.causal_chain(1), Err(Error::NoChain(_))));
    }

    #[test]
    fn terminal_actions() {
        assert_eq!(craft_graph().chain_terminal_actions(), vec![craft::ATTACK]);
    }

    #[test]
    fn actual_instantiation_copies_state() {
        let g = craft_graph();
        let state = StateVector(vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0]);
        let inst = g.actual_instantiation(&state).unwrap();
        assert_eq!(inst.provenance, Provenance::Actual);
        for v in g.endogenous() {
            assert_eq!(inst.get(v), Some(state.get(g.state_index(v).unwrap())));
        }
        let again = g.actual_instantiation(&state).unwrap();
        assert_eq!(inst, again);
    }

    #[test]
    fn document_round_trip() {
        let g = craft_graph();
        let text = serde_json::to_string(&g.to_document()).unwrap();
        let g2 = ActionInfluenceGraph::load(&text).unwrap();
        assert_eq!(g2.edges(), g.edges());
    }
}

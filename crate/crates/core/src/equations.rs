//! Fitted structural equations F_{X.A}, counterfactual instantiation and
//! the structural-equation task predictor.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::graph::{ActionInfluenceGraph, Instantiation, Provenance};
use crate::mdp::{ReplayDataset, StateVector};
use crate::regress::{Regressor, RegressorKind};
use crate::{Error, Result};

/// Slots with fewer rows than this are left untrained.
pub const MIN_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotFit {
    pub target: String,
    pub action: String,
    /// Regressor inputs: the slot's observed sources, then the target itself.
    pub inputs: Vec<String>,
    pub rows: usize,
    pub rmse: Option<f64>,
    /// `None` when the slot had too little data.
    pub regressor: Option<Regressor>,
}

impl SlotFit {
    pub fn is_trained(&self) -> bool {
        self.regressor.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedEquations {
    pub kind: RegressorKind,
    pub slots: Vec<SlotFit>,
}

/// Graph variables feeding the regressor of slot (target, action): sources
/// present in the state layout, then the target.
pub fn slot_inputs(graph: &ActionInfluenceGraph, target: usize, action: usize) -> Vec<usize> {
    let mut inputs: Vec<usize> = graph
        .slot(target, action)
        .map(|s| s.sources.iter().copied().filter(|&v| graph.state_index(v).is_some()).collect())
        .unwrap_or_default();
    inputs.push(target);
    inputs
}

/// Fits every slot on the rows where its action was taken: inputs at t,
/// target value at t+1.
pub fn fit_equations(graph: &ActionInfluenceGraph, data: &ReplayDataset, kind: RegressorKind, seed: u64) -> Result<FittedEquations> {
    if !graph.is_bound() {
        return Err(Error::InvalidSpec("graph is not bound to a state layout".into()));
    }
    let mut slots = Vec::with_capacity(graph.slots().len());
    for (i, slot) in graph.slots().iter().enumerate() {
        let inputs = slot_inputs(graph, slot.target, slot.action);
        let cols: Vec<usize> = inputs.iter().map(|&v| graph.state_index(v).expect("inputs are observed")).collect();
        let target_col = graph.state_index(slot.target).expect("endogenous variables are observed");
        let mut x = Vec::new();
        let mut y = Vec::new();
        for r in data.records.iter().filter(|r| r.action == slot.action) {
            x.push(cols.iter().map(|&c| r.state.get(c)).collect::<Vec<f64>>());
            y.push(r.next_state.get(target_col));
        }
        let target = graph.name(slot.target).to_string();
        let action = graph.actions()[slot.action].clone();
        let (regressor, rmse) = if x.len() >= MIN_ROWS {
            let reg = Regressor::fit(kind, &x, &y, seed.wrapping_add(i as u64));
            let rmse = reg.rmse(&x, &y);
            (Some(reg), Some(rmse))
        } else {
            warn!("InsufficientData: slot F_{{{target}.{action}}} has {} rows", x.len());
            (None, None)
        };
        slots.push(SlotFit {
            target,
            action,
            inputs: inputs.iter().map(|&v| graph.name(v).to_string()).collect(),
            rows: x.len(),
            rmse,
            regressor,
        });
    }
    Ok(FittedEquations { kind, slots })
}

impl FittedEquations {
    pub fn get(&self, graph: &ActionInfluenceGraph, target: usize, action: usize) -> Option<&SlotFit> {
        let (t, a) = (graph.name(target), graph.actions().get(action)?);
        self.slots.iter().find(|s| s.target == t && &s.action == a)
    }

    /// Evaluates F_{target.action} on the values of `inst`.
    pub fn evaluate(&self, graph: &ActionInfluenceGraph, target: usize, action: usize, inst: &Instantiation) -> Result<f64> {
        let untrained = || Error::UntrainedSlot {
            target: graph.name(target).to_string(),
            action: graph.actions().get(action).cloned().unwrap_or_default(),
        };
        let slot = self.get(graph, target, action).ok_or_else(untrained)?;
        let reg = slot.regressor.as_ref().ok_or_else(untrained)?;
        let row = slot
            .inputs
            .iter()
            .map(|name| {
                let v = graph.variable(name).ok_or_else(|| Error::UnknownVariable(name.clone()))?;
                inst.get(v).ok_or_else(|| Error::InvalidArgument(format!("no value for `{name}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(reg.predict(&row))
    }

    /// Checks that slots line up with the graph's equation slots.
    pub fn check(&self, graph: &ActionInfluenceGraph) -> Result<()> {
        for s in graph.slots() {
            if self.get(graph, s.target, s.action).is_none() {
                return Err(Error::MissingArtifact(format!(
                    "no fitted equation for `{}` under `{}`",
                    graph.name(s.target),
                    graph.actions()[s.action]
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("equations serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// M_{Z <- S_Z} for action `b`: the heads of b's chain are recomputed with
/// F_{X.b}, downstream chain variables with the slot of the lowest-index
/// action labelling their incoming chain edges, in topological order.
/// Off-chain variables keep their actual values.
pub fn counterfactual_instantiation(
    graph: &ActionInfluenceGraph,
    fitted: &FittedEquations,
    state: &StateVector,
    b: usize,
) -> Result<Instantiation> {
    let chain = graph.causal_chain(b)?;
    let actual = graph.actual_instantiation(state)?;
    let mut cf = actual.clone();
    cf.provenance = Provenance::Counterfactual { action: b };
    for &v in &chain.intermediate_nodes {
        let action = if chain.head_nodes.contains(&v) {
            b
        } else {
            chain.edges.iter().filter(|e| e.to == v).map(|e| e.action).min().expect("non-head chain node has a chain edge")
        };
        let mut inputs = cf.clone();
        if let Some(own) = actual.get(v) {
            inputs.set(v, own);
        }
        let value = fitted.evaluate(graph, v, action, &inputs)?;
        cf.set(v, value);
    }
    Ok(cf)
}

/// Predicted change in the summed reward variables for every action.
pub fn reward_deltas(graph: &ActionInfluenceGraph, fitted: &FittedEquations, state: &StateVector) -> Result<Vec<f64>> {
    let actual = graph.actual_instantiation(state)?;
    (0..graph.actions().len())
        .map(|a| {
            if graph.causal_chain(a).is_err() {
                return Ok(0.0);
            }
            let cf = counterfactual_instantiation(graph, fitted, state, a)?;
            Ok(graph
                .reward_nodes()
                .iter()
                .map(|&r| cf.get(r).unwrap_or(0.0) - actual.get(r).unwrap_or(0.0))
                .sum())
        })
        .collect()
}

/// Action whose counterfactual instantiation most increases the reward
/// variables; ties go to the lowest index.
pub fn se_task_prediction(graph: &ActionInfluenceGraph, fitted: &FittedEquations, state: &StateVector) -> Result<usize> {
    let deltas = reward_deltas(graph, fitted, state)?;
    Ok(crate::agent::argmax(&deltas))
}

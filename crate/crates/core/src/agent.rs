//! Tabular Q-learning and SARSA over a uniform-grid discretization of the
//! state space.

use std::collections::BTreeMap;

use log::warn;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{Environment, MdpSpec, StateVariable, StateVector, VariableKind};
use crate::{Error, Result};

pub const ROLLING_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    QLearning,
    Sarsa,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "q_learning" | "qlearning" | "q" => Ok(Algorithm::QLearning),
            "sarsa" => Ok(Algorithm::Sarsa),
            _ => Err(Error::InvalidArgument(format!("unknown algorithm `{s}` (expected q_learning or sarsa)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub alpha: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Episodes over which epsilon decays linearly from start to end.
    pub epsilon_decay_episodes: usize,
    pub gamma: f64,
    pub bins_per_continuous_variable: usize,
    /// Optional per-variable (low, high) discretization bounds overriding
    /// the spec ranges of continuous variables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<(f64, f64)>>,
    /// Optional per-variable bin counts for continuous variables; 1 bin
    /// drops the variable from the table key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<Vec<usize>>,
}

impl AgentConfig {
    /// alpha 0.1, epsilon 1.0 -> 0.05 over 80% of `max_episodes`, 10 bins.
    pub fn new(algorithm: Algorithm, spec: &MdpSpec, max_episodes: usize) -> Self {
        Self {
            algorithm,
            alpha: 0.1,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: (max_episodes * 4 / 5).max(1),
            gamma: spec.gamma,
            bins_per_continuous_variable: 10,
            bounds: None,
            bins: None,
        }
    }

    pub fn validate(&self, spec: &MdpSpec) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.alpha >= 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        for eps in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&eps) {
                return bad(format!("epsilon {eps} outside [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        let continuous = spec.variables.iter().any(|v| v.kind == VariableKind::Continuous);
        if continuous && self.bins_per_continuous_variable < 2 {
            return bad("at least 2 bins are needed for continuous variables".into());
        }
        if let Some(b) = &self.bounds {
            if b.len() != spec.variables.len() || b.iter().any(|(lo, hi)| !(lo < hi)) {
                return bad("discretization bounds must give one increasing (low, high) pair per variable".into());
            }
        }
        if let Some(b) = &self.bins {
            if b.len() != spec.variables.len() || b.contains(&0) {
                return bad("per-variable bins must give one positive count per variable".into());
            }
        }
        Ok(())
    }

    fn bins_for(&self, variable: usize) -> usize {
        self.bins.as_ref().map_or(self.bins_per_continuous_variable, |b| b[variable])
    }

    /// Linear decay, then flat at `epsilon_end`.
    pub fn epsilon(&self, episode: usize) -> f64 {
        if episode >= self.epsilon_decay_episodes {
            return self.epsilon_end;
        }
        let frac = episode as f64 / self.epsilon_decay_episodes as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Maps states to q-table keys. Discrete variables keep their integer
/// value; continuous ones become a bin index.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretizer {
    variables: Vec<StateVariable>,
    bins: Vec<usize>,
    bounds: Option<Vec<(f64, f64)>>,
}

impl Discretizer {
    pub fn new(spec: &MdpSpec, config: &AgentConfig) -> Self {
        let bins = (0..spec.variables.len()).map(|i| config.bins_for(i)).collect();
        Self { variables: spec.variables.clone(), bins, bounds: config.bounds.clone() }
    }

    pub fn cell(&self, state: &StateVector) -> Vec<i64> {
        self.variables
            .iter()
            .enumerate()
            .map(|(i, var)| {
                let v = state.get(i);
                match var.kind {
                    VariableKind::Discrete => v.round() as i64,
                    VariableKind::Continuous => {
                        let (lo, hi) = self.bounds.as_ref().map_or((var.min, var.max), |b| b[i]);
                        let bins = self.bins[i];
                        let bin = ((v - lo) / (hi - lo) * bins as f64).floor();
                        bin.clamp(0.0, (bins - 1) as f64) as i64
                    }
                }
            })
            .collect()
    }

    pub fn key(&self, state: &StateVector) -> String {
        let cell = self.cell(state);
        let parts: Vec<String> = cell.iter().map(i64::to_string).collect();
        parts.join(",")
    }
}

/// Greedy choice plus whether the state's key was never visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GreedyAction {
    pub action: usize,
    pub unseen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub config: AgentConfig,
    pub spec: MdpSpec,
    pub q_table: BTreeMap<String, Vec<f64>>,
}

/// Lowest index among the maximal values.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// One temporal-difference step: Q + alpha (target - Q).
pub fn td_update(q: f64, target: f64, alpha: f64) -> f64 {
    q + alpha * (target - q)
}

impl TabularPolicy {
    pub fn new(spec: &MdpSpec, config: AgentConfig) -> Self {
        Self { config, spec: spec.clone(), q_table: BTreeMap::new() }
    }

    pub fn discretizer(&self) -> Discretizer {
        Discretizer::new(&self.spec, &self.config)
    }

    pub fn q_values(&self, state: &StateVector) -> Option<&[f64]> {
        self.q_table.get(&self.discretizer().key(state)).map(Vec::as_slice)
    }

    /// Argmax of the state's q-values; unseen states fall back to action 0.
    pub fn act_greedy(&self, state: &StateVector) -> GreedyAction {
        match self.q_values(state) {
            Some(q) => GreedyAction { action: argmax(q), unseen: false },
            None => GreedyAction { action: 0, unseen: true },
        }
    }

    pub fn action(&self, state: &StateVector) -> usize {
        self.act_greedy(state).action
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let policy: TabularPolicy = serde_json::from_str(text)?;
        policy.spec.validate()?;
        let n = policy.spec.actions.len();
        if let Some((k, _)) = policy.q_table.iter().find(|(_, v)| v.len() != n) {
            return Err(Error::Parse(format!("q-table entry `{k}` does not have {n} values")));
        }
        Ok(policy)
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub policy: TabularPolicy,
    /// Per-episode undiscounted return.
    pub curve: Vec<f64>,
    pub converged: bool,
}

impl TrainingOutcome {
    pub fn rolling_mean(&self) -> f64 {
        rolling_mean(&self.curve)
    }
}

fn rolling_mean(curve: &[f64]) -> f64 {
    let tail = &curve[curve.len().saturating_sub(ROLLING_WINDOW)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

/// Trains until the rolling mean return over the last 100 episodes reaches
/// the environment's threshold, or `max_episodes` have run.
pub fn train(env: &mut dyn Environment, config: AgentConfig, max_episodes: usize, seed: u64) -> Result<TrainingOutcome> {
    if max_episodes == 0 {
        return Err(Error::InvalidArgument("max_episodes must be at least 1".into()));
    }
    let spec = env.spec().clone();
    config.validate(&spec)?;
    let n_actions = spec.actions.len();
    let discretizer = Discretizer::new(&spec, &config);
    let mut policy = TabularPolicy::new(&spec, config);
    let cfg = policy.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut curve = Vec::with_capacity(max_episodes);
    let mut converged = false;

    let choose = |q: &BTreeMap<String, Vec<f64>>, key: &str, eps: f64, rng: &mut ChaCha8Rng| -> usize {
        if rng.gen::<f64>() < eps {
            rng.gen_range(0..n_actions)
        } else {
            q.get(key).map_or(0, |v| argmax(v))
        }
    };

    for episode in 0..max_episodes {
        let eps = cfg.epsilon(episode);
        let state = env.reset(seed.wrapping_mul(1_000_003).wrapping_add(episode as u64));
        let mut key = discretizer.key(&state);
        let mut action = choose(&policy.q_table, &key, eps, &mut rng);
        let mut total = 0.0;
        loop {
            let t = env.step(action)?;
            total += t.reward;
            let next_key = discretizer.key(&t.next);
            let next_action = choose(&policy.q_table, &next_key, eps, &mut rng);
            let future = if t.done {
                0.0
            } else {
                let next_q = policy.q_table.get(&next_key);
                match cfg.algorithm {
                    Algorithm::QLearning => next_q.map_or(0.0, |v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
                    Algorithm::Sarsa => next_q.map_or(0.0, |v| v[next_action]),
                }
            };
            let entry = policy.q_table.entry(key).or_insert_with(|| vec![0.0; n_actions]);
            entry[action] = td_update(entry[action], t.reward + cfg.gamma * future, cfg.alpha);
            if t.done {
                break;
            }
            key = next_key;
            action = next_action;
        }
        curve.push(total);
        if curve.len() >= ROLLING_WINDOW && rolling_mean(&curve) >= spec.reward_threshold {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!(
            "NotConverged: rolling mean {:.3} below threshold {} after {} episodes",
            rolling_mean(&curve),
            spec.reward_threshold,
            curve.len()
        );
    }
    Ok(TrainingOutcome { policy, curve, converged })
}

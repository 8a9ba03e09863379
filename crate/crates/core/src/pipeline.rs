//! End-to-end build (train, record, fit) and the on-disk artifact layout
//! shared by the CLI and the service.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{self, AgentConfig, Algorithm, TabularPolicy, TrainingOutcome};
use crate::distal::{extract_sequences, DistalConfig, DistalPredictor};
use crate::envs::EnvKind;
use crate::equations::{fit_equations, FittedEquations};
use crate::counterfactual::MoveConfig;
use crate::explain::{distal, why_graph, why_not, why_tree, DistalInputs, Explanation, Lexicon, QuestionType, TextRenderer};
use crate::graph::ActionInfluenceGraph;
use crate::mdp::{record_replay, MdpSpec, ReplayDataset, StateVector};
use crate::regress::RegressorKind;
use crate::tree::DecisionTreePolicy;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPEC_FILE: &str = "spec.json";
pub const POLICY_FILE: &str = "policy.json";
pub const REPLAY_FILE: &str = "replay.jsonl";
pub const GRAPH_FILE: &str = "graph.json";
pub const EQUATIONS_FILE: &str = "equations.json";
pub const TREE_FILE: &str = "tree.json";
pub const TREE_N_FILE: &str = "tree_n.json";
pub const DISTAL_FILE: &str = "distal.json";
pub const LEXICON_FILE: &str = "lexicon.json";

/// Per-environment training defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPlan {
    pub algorithm: Algorithm,
    pub max_episodes: usize,
    pub replay_episodes: usize,
    pub bounds: Option<Vec<(f64, f64)>>,
    pub bins: Option<Vec<usize>>,
}

pub fn training_plan(kind: EnvKind) -> TrainingPlan {
    match kind {
        EnvKind::Craft => TrainingPlan { algorithm: Algorithm::Sarsa, max_episodes: 5000, replay_episodes: 300, bounds: None, bins: None },
        EnvKind::Taxi => TrainingPlan { algorithm: Algorithm::Sarsa, max_episodes: 5000, replay_episodes: 1000, bounds: None, bins: None },
        EnvKind::CartPole => TrainingPlan {
            algorithm: Algorithm::QLearning,
            max_episodes: 3000,
            replay_episodes: 200,
            bounds: Some(vec![(-2.4, 2.4), (-3.0, 3.0), (-0.21, 0.21), (-3.5, 3.5)]),
            bins: Some(vec![1, 1, 6, 6]),
        },
        EnvKind::MountainCar => {
            TrainingPlan { algorithm: Algorithm::QLearning, max_episodes: 5000, replay_episodes: 200, bounds: None, bins: None }
        }
    }
}

/// Replay and evaluation rollouts use seed ranges disjoint from training.
pub fn replay_seed(seed: u64) -> u64 {
    seed.wrapping_add(1 << 32)
}

pub fn evaluation_seed(seed: u64) -> u64 {
    seed.wrapping_add(2 << 32)
}

pub fn agent_config(kind: EnvKind, algorithm: Algorithm, spec: &MdpSpec, max_episodes: usize) -> AgentConfig {
    let mut cfg = AgentConfig::new(algorithm, spec, max_episodes);
    let plan = training_plan(kind);
    cfg.bounds = plan.bounds;
    cfg.bins = plan.bins;
    cfg
}

pub fn train_agent(kind: EnvKind, algorithm: Option<Algorithm>, max_episodes: Option<usize>, seed: u64) -> Result<TrainingOutcome> {
    let plan = training_plan(kind);
    let mut env = kind.make();
    let episodes = max_episodes.unwrap_or(plan.max_episodes);
    let cfg = agent_config(kind, algorithm.unwrap_or(plan.algorithm), env.spec(), episodes);
    agent::train(env.as_mut(), cfg, episodes, seed)
}

/// Greedy rollouts of the trained policy.
pub fn greedy_replay(kind: EnvKind, policy: &TabularPolicy, episodes: usize, seed: u64) -> ReplayDataset {
    let mut env = kind.make();
    record_replay(env.as_mut(), |s| policy.action(s), episodes, replay_seed(seed))
}

pub fn load_graph(kind: EnvKind) -> Result<ActionInfluenceGraph> {
    ActionInfluenceGraph::load_for(kind.graph_document(), &kind.make().spec().clone())
}

pub fn lexicon(kind: EnvKind) -> Result<Lexicon> {
    kind.lexicon_document().map_or(Ok(Lexicon::default()), Lexicon::from_json)
}

/// Extracts opportunity-chain samples and trains the distal predictor.
pub fn fit_distal(replay: &ReplayDataset, graph: &ActionInfluenceGraph, spec: &MdpSpec, config: DistalConfig) -> Result<DistalPredictor> {
    let samples = extract_sequences(replay, graph, spec.gamma, config.n_max)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    DistalPredictor::train(&spec.variables, &spec.actions, &samples, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub env: String,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub episodes: usize,
    pub converged: bool,
    pub rolling_mean: f64,
}

/// Everything the explainer and the service work from. Only the spec and
/// graph are mandatory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub env: EnvKind,
    pub manifest: Option<Manifest>,
    pub spec: MdpSpec,
    pub graph: ActionInfluenceGraph,
    pub lexicon: Lexicon,
    pub policy: Option<TabularPolicy>,
    pub replay: Option<ReplayDataset>,
    pub equations: Option<FittedEquations>,
    pub tree: Option<DecisionTreePolicy>,
    pub tree_n: Option<DecisionTreePolicy>,
    pub distal: Option<DistalPredictor>,
}

impl Artifacts {
    pub fn renderer(&self) -> TextRenderer {
        TextRenderer::with_lexicon(self.lexicon.clone())
    }

    pub fn tree(&self) -> Result<&DecisionTreePolicy> {
        self.tree.as_ref().ok_or_else(|| Error::MissingArtifact(TREE_FILE.into()))
    }

    pub fn policy(&self) -> Result<&TabularPolicy> {
        self.policy.as_ref().ok_or_else(|| Error::MissingArtifact(POLICY_FILE.into()))
    }

    pub fn distal(&self) -> Result<&DistalPredictor> {
        self.distal.as_ref().ok_or_else(|| Error::MissingArtifact(DISTAL_FILE.into()))
    }

    /// Writes every present artifact into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        if let Some(m) = &self.manifest {
            fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(m)?)?;
        }
        fs::write(dir.join(SPEC_FILE), self.spec.to_json())?;
        fs::write(dir.join(GRAPH_FILE), serde_json::to_string_pretty(&self.graph.to_document())?)?;
        if self.lexicon != Lexicon::default() {
            fs::write(dir.join(LEXICON_FILE), serde_json::to_string_pretty(&self.lexicon)?)?;
        }
        if let Some(p) = &self.policy {
            fs::write(dir.join(POLICY_FILE), p.to_json())?;
        }
        if let Some(r) = &self.replay {
            fs::write(dir.join(REPLAY_FILE), r.to_jsonl())?;
        }
        if let Some(e) = &self.equations {
            fs::write(dir.join(EQUATIONS_FILE), e.to_json())?;
        }
        if let Some(t) = &self.tree {
            fs::write(dir.join(TREE_FILE), t.to_json())?;
        }
        if let Some(t) = &self.tree_n {
            fs::write(dir.join(TREE_N_FILE), t.to_json())?;
        }
        if let Some(d) = &self.distal {
            fs::write(dir.join(DISTAL_FILE), d.to_json())?;
        }
        Ok(())
    }

    /// Loads an artifact directory. The environment comes from `env`, or
    /// failing that from the manifest.
    pub fn load(dir: &Path, env: Option<EnvKind>) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::MissingArtifact(format!("artifact directory {}", dir.display())));
        }
        let read = |name: &str| -> Result<Option<String>> {
            let path = dir.join(name);
            if path.exists() {
                Ok(Some(fs::read_to_string(path)?))
            } else {
                Ok(None)
            }
        };
        let manifest: Option<Manifest> = read(MANIFEST_FILE)?.map(|t| serde_json::from_str(&t)).transpose()?;
        let env = match (env, &manifest) {
            (Some(e), _) => e,
            (None, Some(m)) => m.env.parse()?,
            (None, None) => return Err(Error::MissingArtifact(format!("{MANIFEST_FILE} (or pass the environment)"))),
        };
        let spec = match read(SPEC_FILE)? {
            Some(t) => MdpSpec::from_json(&t)?,
            None => env.make().spec().clone(),
        };
        let graph = match read(GRAPH_FILE)? {
            Some(t) => ActionInfluenceGraph::load_for(&t, &spec)?,
            None => ActionInfluenceGraph::load_for(env.graph_document(), &spec)?,
        };
        let lexicon = match read(LEXICON_FILE)? {
            Some(t) => Lexicon::from_json(&t)?,
            None => lexicon(env)?,
        };
        let equations = read(EQUATIONS_FILE)?.map(|t| FittedEquations::from_json(&t)).transpose()?;
        if let Some(e) = &equations {
            e.check(&graph)?;
        }
        Ok(Self {
            env,
            manifest,
            policy: read(POLICY_FILE)?.map(|t| TabularPolicy::from_json(&t)).transpose()?,
            replay: read(REPLAY_FILE)?.map(|t| ReplayDataset::from_jsonl(&t)).transpose()?,
            equations,
            tree: read(TREE_FILE)?.map(|t| DecisionTreePolicy::from_json(&t)).transpose()?,
            tree_n: read(TREE_N_FILE)?.map(|t| DecisionTreePolicy::from_json(&t)).transpose()?,
            distal: read(DISTAL_FILE)?.map(|t| DistalPredictor::from_json(&t)).transpose()?,
            spec,
            graph,
            lexicon,
        })
    }
}

/// Options for [`build`].
#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub seed: u64,
    pub algorithm: Option<Algorithm>,
    pub max_episodes: Option<usize>,
    pub replay_episodes: Option<usize>,
    pub regressor: RegressorKind,
    pub distal: Option<DistalConfig>,
}

impl BuildOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            algorithm: None,
            max_episodes: None,
            replay_episodes: None,
            regressor: RegressorKind::LinearRegression,
            distal: Some(DistalConfig { seed, ..DistalConfig::default() }),
        }
    }
}

/// Trains the agent, records greedy replay and fits every surrogate.
pub fn build(kind: EnvKind, options: &BuildOptions) -> Result<Artifacts> {
    let plan = training_plan(kind);
    let outcome = train_agent(kind, options.algorithm, options.max_episodes, options.seed)?;
    let spec = outcome.policy.spec.clone();
    let replay = greedy_replay(kind, &outcome.policy, options.replay_episodes.unwrap_or(plan.replay_episodes), options.seed);
    let graph = ActionInfluenceGraph::load_for(kind.graph_document(), &spec)?;
    let equations = fit_equations(&graph, &replay, options.regressor, options.seed)?;
    let tree = DecisionTreePolicy::fit_replay(&replay, &spec, Some(spec.actions.len()))?;
    let tree_n = DecisionTreePolicy::fit_replay(&replay, &spec, None)?;
    let distal = match &options.distal {
        Some(cfg) => match fit_distal(&replay, &graph, &spec, cfg.clone()) {
            Ok(p) => Some(p),
            Err(Error::EmptyDataset) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    let manifest = Manifest {
        env: kind.name().into(),
        seed: options.seed,
        algorithm: outcome.policy.config.algorithm,
        episodes: outcome.curve.len(),
        converged: outcome.converged,
        rolling_mean: outcome.rolling_mean(),
    };
    Ok(Artifacts {
        env: kind,
        manifest: Some(manifest),
        lexicon: lexicon(kind)?,
        policy: Some(outcome.policy),
        replay: Some(replay),
        equations: Some(equations),
        tree: Some(tree),
        tree_n: Some(tree_n),
        distal,
        spec,
        graph,
    })
}

/// A question put to [`Artifacts::explain`].
#[derive(Debug, Clone, PartialEq)]
pub struct Ask {
    pub question: QuestionType,
    pub action: usize,
    pub distal: bool,
    pub moves: MoveConfig,
    /// Answer "why" from the graph alone even when a tree is available.
    pub graph_only: bool,
}

impl Ask {
    pub fn new(question: QuestionType, action: usize) -> Self {
        Self { question, action, distal: false, moves: MoveConfig::default(), graph_only: false }
    }
}

impl Artifacts {
    /// Answers `ask` for `state`. "Why" uses the tree-based explanation
    /// when a tree is present, the graph-only one otherwise; "why not"
    /// needs the tree. Distal answers fall back to the base explanation
    /// (with a note) when no predictor is loaded.
    pub fn explain(&self, state: &StateVector, ask: &Ask, history: &[(StateVector, usize)]) -> Result<Explanation> {
        self.spec.check_state(state)?;
        if ask.action >= self.spec.actions.len() {
            return Err(Error::InvalidAction { action: ask.action, num_actions: self.spec.actions.len() });
        }
        let text = self.renderer();
        let tree = match (&self.tree, ask.question, ask.graph_only) {
            (_, QuestionType::Why, true) | (None, QuestionType::Why, _) => {
                return why_graph(&self.graph, state, ask.action, &text);
            }
            (Some(t), _, _) => t,
            (None, QuestionType::WhyNot, _) => return Err(Error::MissingArtifact(TREE_FILE.into())),
        };
        if ask.distal {
            if let Some(predictor) = &self.distal {
                let inputs =
                    DistalInputs { graph: &self.graph, fitted: self.equations.as_ref(), tree, predictor, history };
                return distal(&inputs, state, ask.question, ask.action, ask.moves, &text);
            }
        }
        let mut e = match ask.question {
            QuestionType::Why => why_tree(&self.graph, tree, state, ask.action, &text)?,
            QuestionType::WhyNot => {
                why_not(&self.graph, self.equations.as_ref(), tree, state, ask.action, ask.moves, &text)?
            }
        };
        if ask.distal {
            e.notes.push(format!("DistalUnavailable: no {DISTAL_FILE} loaded"));
        }
        Ok(e)
    }
}

impl Artifacts {
    /// Resolves an action by name, lexicon symbol (`A_b`) or index.
    pub fn resolve_action(&self, name: &str) -> Result<usize> {
        if let Some(i) = self.spec.action_index(name) {
            return Ok(i);
        }
        if let Some((action, _)) = self.lexicon.actions.iter().find(|(_, (_, symbol))| symbol == name) {
            if let Some(i) = self.spec.action_index(action) {
                return Ok(i);
            }
        }
        match name.parse::<usize>() {
            Ok(i) if i < self.spec.actions.len() => Ok(i),
            _ => Err(Error::UnknownAction(name.into())),
        }
    }
}

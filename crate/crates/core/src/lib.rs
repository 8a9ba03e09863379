//! Explanations for model-free reinforcement learning agents.
//!
//! The crate trains tabular agents on small environments, distills their
//! behaviour into a decision-tree surrogate policy, pairs the tree with a
//! hand-authored action influence graph and a learned distal-action
//! predictor, and answers "why" / "why not" questions about the agent's
//! choices.
//!
//! Module map:
//!
//! * [`mdp`] and [`envs`]: environment abstraction, Craft/Taxi/CartPole/MountainCar, replay capture
//! * [`agent`]: tabular Q-learning and SARSA with grid discretization
//! * [`graph`], [`equations`], [`regress`]: action influence models and structural equations
//! * [`tree`]: CART surrogate policy
//! * [`counterfactual`]: decision-boundary counterfactual generation
//! * [`distal`]: opportunity-chain sequence extraction and the recurrent distal predictor
//! * [`explain`]: explanation composition and text rendering
//! * [`fidelity`]: task-prediction evaluation harness
//! * [`pipeline`]: artifact directory helpers shared by the CLI and service

pub mod agent;
pub mod counterfactual;
pub mod distal;
pub mod envs;
pub mod equations;
pub mod explain;
pub mod fidelity;
pub mod graph;
pub mod mdp;
pub mod pipeline;
pub mod regress;
pub mod tree;

pub use mdp::{Environment, MdpSpec, ReplayDataset, ReplayRecord, StateVector, StateVariable, VariableKind};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("state has {got} values, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("value {value} out of range for `{variable}`")]
    OutOfRange { variable: String, value: f64 },
    #[error("step called on a finished episode")]
    StepAfterDone,
    #[error("action index {action} out of range ({num_actions} actions)")]
    InvalidAction { action: usize, num_actions: usize },
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("graph contains a cycle through `{0}`")]
    Cycle(String),
    #[error("edge {from} -> {to} is labelled with unknown action `{action}`")]
    DanglingAction { from: String, to: String, action: String },
    #[error("edge refers to unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("action `{0}` labels no edge of the graph")]
    NoChain(String),
    #[error("structural equation for `{target}` under `{action}` is untrained")]
    UntrainedSlot { target: String, action: String },
    #[error("no decision-boundary move changes the prediction")]
    NoCounterfactualFound,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::OutOfRange { .. } => "OutOfRange",
            Error::StepAfterDone => "StepAfterDone",
            Error::InvalidAction { .. } => "InvalidAction",
            Error::UnknownAction(_) => "UnknownAction",
            Error::UnknownEnvironment(_) => "UnknownEnvironment",
            Error::Parse(_) => "Parse",
            Error::Cycle(_) => "Cycle",
            Error::DanglingAction { .. } => "DanglingAction",
            Error::UnknownVariable(_) => "UnknownVariable",
            Error::NoChain(_) => "NoChain",
            Error::UntrainedSlot { .. } => "UntrainedSlot",
            Error::NoCounterfactualFound => "NoCounterfactualFound",
            Error::EmptyDataset => "EmptyDataset",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::MissingArtifact(_) => "MissingArtifact",
            Error::Json(_) => "Json",
            Error::Io(_) => "Io",
        }
    }
}

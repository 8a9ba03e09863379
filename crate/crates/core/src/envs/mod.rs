//! Built-in environments and their hand-authored causal graphs.

pub mod cartpole;
pub mod craft;
pub mod mountain_car;
pub mod taxi;

use std::fmt;
use std::str::FromStr;

use crate::mdp::Environment;
use crate::Error;

pub use cartpole::CartPoleEnv;
pub use craft::CraftEnv;
pub use mountain_car::MountainCarEnv;
pub use taxi::TaxiEnv;

pub const CRAFT_GRAPH: &str = include_str!("../../assets/craft_graph.json");
pub const TAXI_GRAPH: &str = include_str!("../../assets/taxi_graph.json");
pub const CARTPOLE_GRAPH: &str = include_str!("../../assets/cartpole_graph.json");
pub const MOUNTAIN_CAR_GRAPH: &str = include_str!("../../assets/mountain_car_graph.json");
pub const COFFEE_GRAPH: &str = include_str!("../../assets/coffee_graph.json");
pub const CRAFT_LEXICON: &str = include_str!("../../assets/craft_lexicon.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EnvKind {
    Craft,
    Taxi,
    CartPole,
    MountainCar,
}

impl EnvKind {
    pub const ALL: [EnvKind; 4] = [EnvKind::Craft, EnvKind::Taxi, EnvKind::CartPole, EnvKind::MountainCar];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Craft => "craft",
            EnvKind::Taxi => "taxi",
            EnvKind::CartPole => "cartpole",
            EnvKind::MountainCar => "mountaincar",
        }
    }

    pub fn make(self) -> Box<dyn Environment> {
        match self {
            EnvKind::Craft => Box::new(CraftEnv::new()),
            EnvKind::Taxi => Box::new(TaxiEnv::new()),
            EnvKind::CartPole => Box::new(CartPoleEnv::new()),
            EnvKind::MountainCar => Box::new(MountainCarEnv::new()),
        }
    }

    pub fn graph_document(self) -> &'static str {
        match self {
            EnvKind::Craft => CRAFT_GRAPH,
            EnvKind::Taxi => TAXI_GRAPH,
            EnvKind::CartPole => CARTPOLE_GRAPH,
            EnvKind::MountainCar => MOUNTAIN_CAR_GRAPH,
        }
    }

    pub fn lexicon_document(self) -> Option<&'static str> {
        match self {
            EnvKind::Craft => Some(CRAFT_LEXICON),
            _ => None,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "craft" => Ok(EnvKind::Craft),
            "taxi" => Ok(EnvKind::Taxi),
            "cartpole" => Ok(EnvKind::CartPole),
            "mountaincar" => Ok(EnvKind::MountainCar),
            _ => Err(Error::UnknownEnvironment(s.to_string())),
        }
    }
}

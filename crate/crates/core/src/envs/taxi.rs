//! The 5x5 taxi domain: pick a passenger up at one landmark and drop them
//! at another.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mdp::{Environment, MdpSpec, StateVariable, StateVector, Transition};
use crate::{Error, Result};

const MAP: [&str; 7] = [
    "+---------+",
    "|R: | : :G|",
    "| : | : : |",
    "| : : : : |",
    "| | : | : |",
    "|Y| : |B: |",
    "+---------+",
];

/// R, G, Y, B.
pub const LANDMARKS: [(usize, usize); 4] = [(0, 0), (0, 4), (4, 0), (4, 3)];
pub const IN_TAXI: usize = 4;
const EPISODE_STEPS: usize = 200;

pub const SOUTH: usize = 0;
pub const NORTH: usize = 1;
pub const EAST: usize = 2;
pub const WEST: usize = 3;
pub const PICKUP: usize = 4;
pub const DROPOFF: usize = 5;

pub fn spec() -> MdpSpec {
    MdpSpec {
        variables: vec![
            StateVariable::discrete("taxi_row", 0.0, 4.0),
            StateVariable::discrete("taxi_col", 0.0, 4.0),
            StateVariable::discrete("passenger", 0.0, 4.0),
            StateVariable::discrete("destination", 0.0, 3.0),
        ],
        actions: ["south", "north", "east", "west", "pickup", "dropoff"].iter().map(|s| s.to_string()).collect(),
        gamma: 0.99,
        reward_threshold: 8.0,
    }
}

fn wall_free(row: usize, map_col: usize) -> bool {
    MAP[row + 1].as_bytes()[map_col] == b':'
}

pub struct TaxiEnv {
    spec: MdpSpec,
    row: usize,
    col: usize,
    passenger: usize,
    destination: usize,
    steps: usize,
    done: bool,
}

impl TaxiEnv {
    pub fn new() -> Self {
        Self { spec: spec(), row: 0, col: 0, passenger: 0, destination: 1, steps: 0, done: false }
    }

    fn observe(&self) -> StateVector {
        StateVector(vec![self.row as f64, self.col as f64, self.passenger as f64, self.destination as f64])
    }
}

impl Default for TaxiEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for TaxiEnv {
    fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> StateVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.row = rng.gen_range(0..5);
        self.col = rng.gen_range(0..5);
        self.passenger = rng.gen_range(0..4);
        self.destination = loop {
            let d = rng.gen_range(0..4);
            if d != self.passenger {
                break d;
            }
        };
        self.steps = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        if self.done {
            return Err(Error::StepAfterDone);
        }
        let mut reward = -1.0;
        let mut delivered = false;
        match action {
            SOUTH => self.row = (self.row + 1).min(4),
            NORTH => self.row = self.row.saturating_sub(1),
            EAST if wall_free(self.row, 2 * self.col + 2) => self.col = (self.col + 1).min(4),
            WEST if wall_free(self.row, 2 * self.col) => self.col = self.col.saturating_sub(1),
            EAST | WEST => {}
            PICKUP => {
                if self.passenger < IN_TAXI && LANDMARKS[self.passenger] == (self.row, self.col) {
                    self.passenger = IN_TAXI;
                } else {
                    reward = -10.0;
                }
            }
            DROPOFF => {
                let here = (self.row, self.col);
                if self.passenger == IN_TAXI && LANDMARKS[self.destination] == here {
                    self.passenger = self.destination;
                    delivered = true;
                    reward = 20.0;
                } else if let (IN_TAXI, Some(i)) = (self.passenger, LANDMARKS.iter().position(|&l| l == here)) {
                    self.passenger = i;
                } else {
                    reward = -10.0;
                }
            }
            _ => return Err(Error::InvalidAction { action, num_actions: 6 }),
        }
        self.steps += 1;
        self.done = delivered || self.steps >= EPISODE_STEPS;
        Ok(Transition { next: self.observe(), reward, done: self.done })
    }

    fn state(&self) -> StateVector {
        self.observe()
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn max_steps(&self) -> usize {
        EPISODE_STEPS
    }
}

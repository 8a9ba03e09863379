//! Desk-scale build-and-attack strategy game whose enabling structure is
//! exactly the Craft action influence graph.
//!
//! | action             | precondition | effect                                  |
//! |--------------------|--------------|-----------------------------------------|
//! | build_supply_depot | S < 4        | S += 1, W += 1 (capped)                 |
//! | build_barracks     | S >= 1       | B += 1 (capped)                         |
//! | train_marine       | B >= 1       | A_n += B, capped at min(20, 5 S)        |
//! | attack             | A_n >= 1     | D_u += Binomial(A_n, 1/2); D_b may +1   |
//!
//! The reward is the increase of D_u + D_b. An unmet precondition leaves
//! the state untouched and pays nothing.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mdp::{Environment, MdpSpec, StateVariable, StateVector, Transition};
use crate::{Error, Result};

pub const W: usize = 0;
pub const S: usize = 1;
pub const B: usize = 2;
pub const A_N: usize = 3;
pub const D_U: usize = 4;
pub const D_B: usize = 5;

pub const BUILD_SUPPLY_DEPOT: usize = 0;
pub const BUILD_BARRACKS: usize = 1;
pub const TRAIN_MARINE: usize = 2;
pub const ATTACK: usize = 3;

const MAX_WORKERS: f64 = 5.0;
const MAX_DEPOTS: f64 = 4.0;
const MAX_BARRACKS: f64 = 4.0;
const MAX_ALLIES: f64 = 20.0;
const MAX_DESTROYED_UNITS: f64 = 40.0;
const ENEMY_BUILDINGS: f64 = 5.0;
const SUPPLY_PER_DEPOT: f64 = 5.0;
const EPISODE_STEPS: usize = 20;

pub fn spec() -> MdpSpec {
    MdpSpec {
        variables: vec![
            StateVariable::discrete("W", 0.0, MAX_WORKERS),
            StateVariable::discrete("S", 0.0, MAX_DEPOTS),
            StateVariable::discrete("B", 0.0, MAX_BARRACKS),
            StateVariable::discrete("A_n", 0.0, MAX_ALLIES),
            StateVariable::discrete("D_u", 0.0, MAX_DESTROYED_UNITS),
            StateVariable::discrete("D_b", 0.0, ENEMY_BUILDINGS),
        ],
        actions: vec![
            "build_supply_depot".into(),
            "build_barracks".into(),
            "train_marine".into(),
            "attack".into(),
        ],
        gamma: 0.95,
        reward_threshold: 8.0,
    }
}

/// Whether `action` has its enabling precondition met in `state`.
pub fn precondition_met(state: &StateVector, action: usize) -> bool {
    match action {
        BUILD_SUPPLY_DEPOT => state.get(S) < MAX_DEPOTS,
        BUILD_BARRACKS => state.get(S) >= 1.0,
        TRAIN_MARINE => state.get(B) >= 1.0,
        ATTACK => state.get(A_N) >= 1.0,
        _ => false,
    }
}

/// The action each action enables next.
pub fn enabled_successor(action: usize) -> Option<usize> {
    match action {
        BUILD_SUPPLY_DEPOT => Some(BUILD_BARRACKS),
        BUILD_BARRACKS => Some(TRAIN_MARINE),
        TRAIN_MARINE => Some(ATTACK),
        _ => None,
    }
}

pub struct CraftEnv {
    spec: MdpSpec,
    state: StateVector,
    rng: ChaCha8Rng,
    steps: usize,
    done: bool,
}

impl CraftEnv {
    pub fn new() -> Self {
        Self {
            spec: spec(),
            state: StateVector(vec![0.0; 6]),
            rng: ChaCha8Rng::seed_from_u64(0),
            steps: 0,
            done: false,
        }
    }

    /// Deterministic part of the transition; `attack` outcomes are drawn
    /// by the caller.
    fn apply(&mut self, action: usize) -> f64 {
        let s = &mut self.state;
        if !precondition_met(s, action) {
            return 0.0;
        }
        match action {
            BUILD_SUPPLY_DEPOT => {
                s.set(S, s.get(S) + 1.0);
                s.set(W, (s.get(W) + 1.0).min(MAX_WORKERS));
                0.0
            }
            BUILD_BARRACKS => {
                s.set(B, (s.get(B) + 1.0).min(MAX_BARRACKS));
                0.0
            }
            TRAIN_MARINE => {
                let cap = MAX_ALLIES.min(SUPPLY_PER_DEPOT * s.get(S));
                let trained = (s.get(A_N) + s.get(B)).min(cap);
                s.set(A_N, trained.max(s.get(A_N)));
                0.0
            }
            ATTACK => {
                let allies = s.get(A_N) as u32;
                let kills = (0..allies).filter(|_| self.rng.gen_bool(0.5)).count() as f64;
                let before = s.get(D_U) + s.get(D_B);
                s.set(D_U, (s.get(D_U) + kills).min(MAX_DESTROYED_UNITS));
                let building_odds = (s.get(A_N) / MAX_ALLIES).min(1.0);
                if self.rng.gen_bool(building_odds) {
                    s.set(D_B, (s.get(D_B) + 1.0).min(ENEMY_BUILDINGS));
                }
                s.get(D_U) + s.get(D_B) - before
            }
            _ => unreachable!(),
        }
    }
}

impl Default for CraftEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for CraftEnv {
    fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> StateVector {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = StateVector(vec![0.0; 6]);
        self.steps = 0;
        self.done = false;
        self.state.clone()
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        if self.done {
            return Err(Error::StepAfterDone);
        }
        if action >= self.spec.actions.len() {
            return Err(Error::InvalidAction { action, num_actions: self.spec.actions.len() });
        }
        let reward = self.apply(action);
        self.steps += 1;
        self.done = self.steps >= EPISODE_STEPS || self.state.get(D_B) >= ENEMY_BUILDINGS;
        Ok(Transition { next: self.state.clone(), reward, done: self.done })
    }

    fn state(&self) -> StateVector {
        self.state.clone()
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn max_steps(&self) -> usize {
        EPISODE_STEPS
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(values: [f64; 6]) -> CraftEnv {
        let mut env = CraftEnv::new();
        env.reset(0);
        env.state = StateVector(values.to_vec());
        env
    }

    #[test]
    fn reset_is_all_zero() {
        let mut env = CraftEnv::new();
        assert_eq!(env.reset(0).0, vec![0.0; 6]);
    }

    #[test]
    fn train_marine_without_barracks_is_noop() {
        let mut env = at([1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let t = env.step(TRAIN_MARINE).unwrap();
        assert_eq!(t.next.0, vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(t.reward, 0.0);
    }

    #[test]
    fn build_barracks_needs_depot() {
        let mut env = at([1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(env.step(BUILD_BARRACKS).unwrap().next.get(B), 1.0);
        let mut env = at([0.0; 6]);
        assert_eq!(env.step(BUILD_BARRACKS).unwrap().next.get(B), 0.0);
    }

    #[test]
    fn attack_only_changes_destruction_with_allies() {
        let mut env = at([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let t = env.step(ATTACK).unwrap();
        assert_eq!(t.next.0, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let mut env = at([1.0, 4.0, 4.0, 20.0, 0.0, 0.0]);
        let t = env.step(ATTACK).unwrap();
        assert!(t.reward > 0.0);
        assert_eq!(t.reward, t.next.get(D_U) + t.next.get(D_B));
    }

    #[test]
    fn marines_limited_by_supply() {
        let mut env = at([1.0, 1.0, 4.0, 3.0, 0.0, 0.0]);
        assert_eq!(env.step(TRAIN_MARINE).unwrap().next.get(A_N), 5.0);
    }

    #[test]
    fn errors() {
        let mut env = at([0.0; 6]);
        assert!(matches!(env.step(9), Err(Error::InvalidAction { .. })));
        for _ in 0..EPISODE_STEPS {
            env.step(BUILD_SUPPLY_DEPOT).unwrap();
        }
        assert!(matches!(env.step(0), Err(Error::StepAfterDone)));
    }
}

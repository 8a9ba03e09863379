//! Under-powered car that must rock back and forth to climb a hill.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mdp::{Environment, MdpSpec, StateVariable, StateVector, Transition};
use crate::{Error, Result};

const MIN_POSITION: f64 = -1.2;
const MAX_POSITION: f64 = 0.6;
const MAX_SPEED: f64 = 0.07;
const GOAL: f64 = 0.5;
const FORCE: f64 = 0.001;
const GRAVITY: f64 = 0.0025;
const EPISODE_STEPS: usize = 200;

pub fn spec() -> MdpSpec {
    MdpSpec {
        variables: vec![
            StateVariable::continuous("position", MIN_POSITION, MAX_POSITION),
            StateVariable::continuous("velocity", -MAX_SPEED, MAX_SPEED),
        ],
        actions: vec!["push_left".into(), "no_push".into(), "push_right".into()],
        gamma: 0.99,
        reward_threshold: -110.0,
    }
}

pub struct MountainCarEnv {
    spec: MdpSpec,
    position: f64,
    velocity: f64,
    steps: usize,
    done: bool,
}

impl MountainCarEnv {
    pub fn new() -> Self {
        Self { spec: spec(), position: -0.5, velocity: 0.0, steps: 0, done: false }
    }

    fn observe(&self) -> StateVector {
        StateVector(vec![self.position, self.velocity])
    }
}

impl Default for MountainCarEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for MountainCarEnv {
    fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> StateVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.position = rng.gen_range(-0.6..-0.4);
        self.velocity = 0.0;
        self.steps = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        if self.done {
            return Err(Error::StepAfterDone);
        }
        if action > 2 {
            return Err(Error::InvalidAction { action, num_actions: 3 });
        }
        self.velocity += (action as f64 - 1.0) * FORCE - (3.0 * self.position).cos() * GRAVITY;
        self.velocity = self.velocity.clamp(-MAX_SPEED, MAX_SPEED);
        self.position = (self.position + self.velocity).clamp(MIN_POSITION, MAX_POSITION);
        if self.position == MIN_POSITION && self.velocity < 0.0 {
            self.velocity = 0.0;
        }
        self.steps += 1;
        self.done = self.position >= GOAL || self.steps >= EPISODE_STEPS;
        Ok(Transition { next: self.observe(), reward: -1.0, done: self.done })
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idle_car_never_reaches_goal() {
        let mut env = MountainCarEnv::new();
        env.reset(0);
        let mut steps = 0;
        loop {
            let t = env.step(1).unwrap();
            steps += 1;
            if t.done {
                assert!(t.next.get(0) < GOAL);
                break;
            }
        }
        assert_eq!(steps, EPISODE_STEPS);
    }

    #[test]
    fn energy_pumping_policy_succeeds() {
        let mut env = MountainCarEnv::new();
        env.reset(0);
        let mut state = env.state();
        loop {
            let action = if state.get(1) < 0.0 { 0 } else { 2 };
            let t = env.step(action).unwrap();
            state = t.next;
            if t.done {
                break;
            }
        }
        assert!(state.get(0) >= GOAL);
    }
}

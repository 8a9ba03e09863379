//! Classic cart-pole balancing with Euler integration.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mdp::{Environment, MdpSpec, StateVariable, StateVector, Transition};
use crate::{Error, Result};

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
const FORCE: f64 = 10.0;
const TAU: f64 = 0.02;
const X_LIMIT: f64 = 2.4;
const THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
const EPISODE_STEPS: usize = 200;

pub fn spec() -> MdpSpec {
    MdpSpec {
        variables: vec![
            StateVariable::continuous("cart_position", -2.0 * X_LIMIT, 2.0 * X_LIMIT),
            StateVariable::continuous("cart_velocity", -5.0, 5.0),
            StateVariable::continuous("pole_angle", -2.0 * THETA_LIMIT, 2.0 * THETA_LIMIT),
            StateVariable::continuous("pole_velocity", -5.0, 5.0),
        ],
        actions: vec!["push_left".into(), "push_right".into()],
        gamma: 0.99,
        reward_threshold: 195.0,
    }
}

pub struct CartPoleEnv {
    spec: MdpSpec,
    physics: [f64; 4],
    steps: usize,
    done: bool,
}

impl CartPoleEnv {
    pub fn new() -> Self {
        Self { spec: spec(), physics: [0.0; 4], steps: 0, done: false }
    }

    fn observe(&self) -> StateVector {
        StateVector(self.spec.variables.iter().zip(self.physics).map(|(v, x)| v.clamp(x)).collect())
    }
}

impl Default for CartPoleEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for CartPoleEnv {
    fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> StateVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in self.physics.iter_mut() {
            *x = rng.gen_range(-0.05..0.05);
        }
        self.steps = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        if self.done {
            return Err(Error::StepAfterDone);
        }
        if action > 1 {
            return Err(Error::InvalidAction { action, num_actions: 2 });
        }
        let [x, x_dot, theta, theta_dot] = self.physics;
        let force = if action == 1 { FORCE } else { -FORCE };
        let (sin, cos) = theta.sin_cos();
        let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
        let theta_acc =
            (GRAVITY * sin - cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
        self.physics = [x + TAU * x_dot, x_dot + TAU * x_acc, theta + TAU * theta_dot, theta_dot + TAU * theta_acc];
        self.steps += 1;
        let fallen = self.physics[0].abs() > X_LIMIT || self.physics[2].abs() > THETA_LIMIT;
        self.done = fallen || self.steps >= EPISODE_STEPS;
        Ok(Transition { next: self.observe(), reward: 1.0, done: self.done })
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

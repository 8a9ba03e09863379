
use oppchain::agent::{train, AgentConfig, Algorithm};
use oppchain::envs::{craft, EnvKind};
use oppchain::fidelity;
use oppchain::mdp::record_replay;
use oppchain::{Environment, Error, StateVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rollout(env: &mut dyn Environment, seed: u64) -> Vec<StateVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = env.spec().actions.len();
    let mut states = vec![env.reset(seed)];
    while !env.is_done() {
        states.push(env.step(rng.gen_range(0..n)).unwrap().next);
    }
    states
}

#[test]
fn every_environment_stays_inside_its_declared_ranges() {
    for kind in EnvKind::ALL {
        let mut env = kind.make();
        let spec = env.spec().clone();
        let seeds = if kind == EnvKind::CartPole { 1000 } else { 100 };
        for seed in 0..seeds {
            let states = random_rollout(env.as_mut(), seed);
            assert!(states.len() <= env.max_steps() + 1);
            for s in &states {
                spec.check_state(s).unwrap_or_else(|e| panic!("{kind} seed {seed}: {e}"));
            }
        }
    }
}

#[test]
fn cartpole_resets_near_upright() {
    let mut env = EnvKind::CartPole.make();
    for seed in 0..1000 {
        let s = env.reset(seed);
        assert!(s.values().iter().all(|v| v.abs() < 0.05), "seed {seed}: {s:?}");
    }
}

#[test]
fn identical_seeds_replay_identically() {
    for kind in EnvKind::ALL {
        let (mut a, mut b) = (kind.make(), kind.make());
        for seed in [0, 7, 12345] {
            assert_eq!(random_rollout(a.as_mut(), seed), random_rollout(b.as_mut(), seed), "{kind}");
        }
    }
}

#[test]
fn stepping_a_finished_episode_is_rejected() {
    for kind in EnvKind::ALL {
        let mut env = kind.make();
        random_rollout(env.as_mut(), 1);
        assert!(matches!(env.step(0), Err(Error::StepAfterDone)), "{kind}");
    }
}

#[test]
fn out_of_range_actions_are_rejected() {
    for kind in EnvKind::ALL {
        let mut env = kind.make();
        env.reset(0);
        let n = env.spec().actions.len();
        assert!(matches!(env.step(n), Err(Error::InvalidAction { .. })), "{kind}");
    }
}

#[test]
fn craft_actions_only_change_state_when_enabled() {
    let mut env = EnvKind::Craft.make();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..200 {
        let mut state = env.reset(seed);
        while !env.is_done() {
            let a = rng.gen_range(0..4);
            let enabled = craft::precondition_met(&state, a);
            let next = env.step(a).unwrap().next;
            if !enabled {
                assert_eq!(next, state, "action {a} changed {state:?}");
            }
            assert!(next.get(craft::D_U) >= state.get(craft::D_U));
            assert!(next.get(craft::D_B) >= state.get(craft::D_B));
            state = next;
        }
    }
}

#[test]
fn craft_chain_order() {
    assert_eq!(craft::enabled_successor(craft::BUILD_SUPPLY_DEPOT), Some(craft::BUILD_BARRACKS));
    assert_eq!(craft::enabled_successor(craft::BUILD_BARRACKS), Some(craft::TRAIN_MARINE));
    assert_eq!(craft::enabled_successor(craft::TRAIN_MARINE), Some(craft::ATTACK));
    assert_eq!(craft::enabled_successor(craft::ATTACK), None);
}

#[test]
fn training_is_deterministic_per_seed() {
    for kind in [EnvKind::Craft, EnvKind::Taxi] {
        let mut env = kind.make();
        let cfg = AgentConfig::new(Algorithm::Sarsa, env.spec(), 200);
        let a = train(env.as_mut(), cfg.clone(), 200, 11).unwrap();
        let b = train(env.as_mut(), cfg.clone(), 200, 11).unwrap();
        let c = train(env.as_mut(), cfg, 200, 12).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.policy.to_json(), b.policy.to_json());
        assert_ne!(a.curve, c.curve);
    }
}

#[test]
fn agent_is_its_own_perfect_surrogate() {
    let mut env = EnvKind::Craft.make();
    let cfg = AgentConfig::new(Algorithm::QLearning, env.spec(), 300);
    let policy = train(env.as_mut(), cfg, 300, 0).unwrap().policy;
    let agent = |s: &StateVector| policy.action(s);
    let e = fidelity::evaluate(env.as_mut(), &agent, |s: &StateVector| Some(policy.action(s)), 20, 0);
    assert_eq!(e.accuracy(), 1.0);
    assert_eq!(e.per_episode.len(), 20);
    let never = fidelity::evaluate(env.as_mut(), &agent, |_: &StateVector| None, 5, 0);
    assert_eq!(never.accuracy(), 0.0);
}

#[test]
fn replay_records_one_row_per_step() {
    let mut env = EnvKind::Taxi.make();
    let data = record_replay(env.as_mut(), |_| 0, 3, 40);
    let episodes = data.episodes();
    assert_eq!(episodes.len(), 3);
    for ep in episodes {
        assert!(ep.last().unwrap().done);
        assert!(ep.iter().rev().skip(1).all(|r| !r.done));
        for w in ep.windows(2) {
            assert_eq!(w[0].next_state, w[1].state);
            assert_eq!(w[0].step + 1, w[1].step);
        }
    }
}

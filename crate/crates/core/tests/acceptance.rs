//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use oppchain::counterfactual::{generate_counterfactuals, generate_towards, MoveConfig};
use oppchain::distal::{extract_sequences, DistalConfig, DistalPredictor, SequenceSample};
use oppchain::envs::{craft, EnvKind, CRAFT_GRAPH};
use oppchain::explain::{why_graph, why_not, why_tree, DistalAction, ExplanationKind, QuestionType, TextRenderer};
use oppchain::fidelity::{self, Surrogate};
use oppchain::graph::ActionInfluenceGraph;
use oppchain::pipeline::{self, Artifacts, Ask, BuildOptions};
use oppchain::{Error, MdpSpec, ReplayDataset, StateVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{craft_example_tree, oracle_explanatory, random_case, random_tree, rule_following_replay, RandomCase};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn check(name: &'static str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = f();
    Outcome { name, pass, detail, elapsed: start.elapsed() }
}

fn names<I: IntoIterator<Item = String>>(it: I) -> BTreeSet<String> {
    it.into_iter().collect()
}

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn worked_example() -> (bool, String) {
    let start = Instant::now();
    let graph = ActionInfluenceGraph::load_for(CRAFT_GRAPH, &craft::spec()).unwrap();
    let text = TextRenderer::with_lexicon(pipeline::lexicon(EnvKind::Craft).unwrap());
    let tree = craft_example_tree();
    let state = StateVector(vec![2.0, 2.0, 3.0, 4.0, 0.0, 0.0]);
    let mut failures = Vec::new();

    let a = why_graph(&graph, &state, craft::BUILD_SUPPLY_DEPOT, &text).unwrap();
    let r = names(a.reward_nodes.iter().map(|n| n.variable.clone()));
    let i = names(a.immediate_predecessors.unwrap().into_iter().map(|n| n.variable));
    let h = names(a.head_nodes.unwrap().into_iter().map(|n| n.variable));
    if r != set(&["D_u", "D_b"]) || i != set(&["A_n"]) || h != set(&["S"]) {
        failures.push(format!("(a) R={r:?} I={i:?} H={h:?}"));
    }

    let b = why_tree(&graph, &tree, &state, craft::BUILD_SUPPLY_DEPOT, &text).unwrap();
    let n = names(b.tree_nodes.unwrap().into_iter().map(|n| n.variable));
    if n != set(&["B"]) {
        failures.push(format!("(b) N={n:?}"));
    }

    let c = why_not(&graph, None, &tree, &state, craft::BUILD_BARRACKS, MoveConfig::with_delta(0.01), &text).unwrap();
    let contrast = c.contrast_nodes.unwrap();
    if contrast.len() != 1 || contrast[0].variable != "B" || contrast[0].counterfactual != 1.99 {
        failures.push(format!("(c) contrast={contrast:?}"));
    }

    let mut d = why_tree(&graph, &tree, &StateVector(vec![2.0, 2.0, 1.0, 4.0, 0.0, 0.0]), craft::TRAIN_MARINE, &text).unwrap();
    d.kind = ExplanationKind::Distal;
    d.distal_action = Some(DistalAction { action: "attack".into(), expected_return: 3.0 });
    let rendered = text.render(&d);
    if !rendered.contains("enable the action attack") {
        failures.push(format!("(d) text={rendered:?}"));
    }

    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(1) {
        failures.push(format!("runtime {elapsed:?}"));
    }
    (failures.is_empty(), if failures.is_empty() { "R, I, H, N, contrast and distal text match".into() } else { failures.join("; ") })
}

fn fidelity_check() -> (bool, String) {
    let start = Instant::now();
    let seeds = [0, 1, 2];
    let report = fidelity::report(&[EnvKind::Taxi, EnvKind::CartPole], &seeds, 100, |env, seed| {
        pipeline::build(env, &BuildOptions { distal: None, ..BuildOptions::new(seed) })
    })
    .unwrap();
    let acc = |env: &str, s: Surrogate| report.mean_accuracy(env, s).unwrap_or(f64::NAN);
    let (t_dp, t_lr, t_dt) = (acc("taxi", Surrogate::Dp), acc("taxi", Surrogate::SeLr), acc("taxi", Surrogate::SeDt));
    let (c_dp, c_dpn) = (acc("cartpole", Surrogate::Dp), acc("cartpole", Surrogate::DpN));
    let gap = (c_dp - c_dpn).abs() * 100.0;
    let elapsed = start.elapsed();
    let checks = [
        ("taxi DP >= 0.75", t_dp >= 0.75),
        ("taxi DP >= SE-LR and SE-DT", t_dp >= t_lr && t_dp >= t_dt),
        ("cartpole DP >= 0.85", c_dp >= 0.85),
        ("cartpole |DP - DP_n| <= 6", gap <= 6.0),
        ("runtime < 10 min", elapsed < Duration::from_secs(600)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let detail = format!(
        "taxi DP={t_dp:.4} SE-LR={t_lr:.4} SE-DT={t_dt:.4}; cartpole DP={c_dp:.4} DP_n={c_dpn:.4} gap={gap:.2}pt{}",
        if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
    );
    (failed.is_empty(), detail)
}

/// Held-out accuracy of a predictor trained on `replay` against the
/// precondition-table successor of each sample's last action.
fn oracle_accuracy(replay: &ReplayDataset, spec: &MdpSpec) -> (usize, f64) {
    let graph = ActionInfluenceGraph::load_for(CRAFT_GRAPH, spec).unwrap();
    let samples = extract_sequences(replay, &graph, spec.gamma, DistalConfig::default().n_max).unwrap();
    let (test, train): (Vec<SequenceSample>, Vec<SequenceSample>) = samples.into_iter().partition(|s| s.episode % 5 == 0);
    let predictor =
        DistalPredictor::train(&spec.variables, &spec.actions, &train, DistalConfig { seed: 0, ..DistalConfig::default() })
            .unwrap();
    let correct = test
        .iter()
        .filter(|s| Some(predictor.predict(&s.inputs).0) == craft::enabled_successor(s.last_action()))
        .count();
    (test.len(), correct as f64 / test.len().max(1) as f64)
}

fn distal_learnability() -> (bool, String) {
    let start = Instant::now();
    let spec = craft::spec();
    let replay = rule_following_replay(300, 7);
    let episodes = replay.episodes().len();
    let (held_out, accuracy) = oracle_accuracy(&replay, &spec);
    let elapsed = start.elapsed();

    let outcome = pipeline::train_agent(EnvKind::Craft, None, None, 0).unwrap();
    let agent_replay = pipeline::greedy_replay(EnvKind::Craft, &outcome.policy, 300, 0);
    let (_, agent_accuracy) = oracle_accuracy(&agent_replay, &spec);

    let pass = episodes >= 200 && held_out > 0 && accuracy >= 0.90 && elapsed < Duration::from_secs(120);
    (
        pass,
        format!(
            "{episodes} rule-following episodes, {held_out} held-out samples, accuracy {accuracy:.4}, {elapsed:.1?}; \
             trained-agent replay accuracy {agent_accuracy:.4} (informational)"
        ),
    )
}

fn gradient_check() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = craft::spec();
    let mut worst = 0.0f64;
    for instance in 0..5u64 {
        let config = DistalConfig { hidden: 3 + instance as usize, n_max: 4, seed: instance, ..DistalConfig::default() };
        let mut model = DistalPredictor::new(&spec.variables, &spec.actions, config);
        model.return_mean = rng.gen_range(-1.0..1.0);
        model.return_scale = rng.gen_range(0.5..2.0);
        let samples: Vec<SequenceSample> = (0..3)
            .map(|k| SequenceSample {
                inputs: (0..rng.gen_range(1..=4))
                    .map(|_| {
                        let s = spec.variables.iter().map(|v| rng.gen_range(v.min..=v.max).round()).collect();
                        (StateVector(s), rng.gen_range(0..spec.actions.len()))
                    })
                    .collect(),
                target_action: rng.gen_range(0..spec.actions.len()),
                target_return: rng.gen_range(-3.0..3.0),
                episode: 0,
                step: k,
            })
            .collect();
        let (_, analytic) = model.loss_and_gradient(&samples);
        let base = model.weights.flatten();
        let h = 1e-5;
        let mut numeric = vec![0.0; base.len()];
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] = base[k] + h;
            model.weights.assign(&p);
            let up = model.loss(&samples);
            p[k] = base[k] - h;
            model.weights.assign(&p);
            let down = model.loss(&samples);
            numeric[k] = (up - down) / (2.0 * h);
        }
        model.weights.assign(&base);
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        worst = worst.max(diff / norm.max(1e-12));
    }
    (worst <= 1e-4, format!("worst relative error {worst:.3e} over 5 instances"))
}

fn oracle_equivalence() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = Vec::new();
    let (mut why_checks, mut why_not_checks) = (0, 0);
    for case_id in 0..100 {
        let RandomCase { graph, spec, tree, state } = random_case(&mut rng);
        let text = TextRenderer::default();
        let path = tree.decision_path(&state);
        let path_vars = |p: &oppchain::tree::DecisionPath| -> BTreeSet<String> {
            p.features().into_iter().map(|f| spec.variables[f].name.clone()).collect()
        };
        for action in 0..spec.actions.len() {
            let Some(explanatory) = oracle_explanatory(&graph.to_document(), &spec.actions[action]) else {
                assert!(matches!(graph.causal_chain(action), Err(Error::NoChain(_))));
                continue;
            };
            let expected: BTreeSet<String> = path_vars(&path).intersection(&explanatory).cloned().collect();
            let got = names(why_tree(&graph, &tree, &state, action, &text).unwrap().tree_nodes.unwrap().into_iter().map(|n| n.variable));
            why_checks += 1;
            if got != expected {
                mismatches.push(format!("case {case_id} why {action}: {got:?} != {expected:?}"));
            }
            let actual = tree.predict(&state);
            if action == actual {
                continue;
            }
            let moves = MoveConfig::default();
            let explained = why_not(&graph, None, &tree, &state, action, moves, &text);
            let oracle_cf = generate_towards(&tree, &spec.variables, &state, actual, action, moves);
            match (explained, oracle_cf) {
                (Ok(e), Ok(cf)) => {
                    let cf_path = tree.decision_path(&cf.modified_state);
                    let expected: BTreeSet<String> = path_vars(&cf_path).intersection(&explanatory).cloned().collect();
                    let got = names(e.contrast_nodes.unwrap().into_iter().map(|n| n.variable));
                    why_not_checks += 1;
                    if got != expected {
                        mismatches.push(format!("case {case_id} why-not {action}: {got:?} != {expected:?}"));
                    }
                }
                (Err(Error::NoCounterfactualFound), Err(Error::NoCounterfactualFound)) => {}
                (a, b) => mismatches.push(format!("case {case_id} why-not {action}: {:?} vs {:?}", a.err(), b.err())),
            }
        }
    }
    let detail = format!("{why_checks} why and {why_not_checks} why-not comparisons, {} mismatches", mismatches.len());
    let first = mismatches.first().map(|m| format!("; first: {m}")).unwrap_or_default();
    (mismatches.is_empty() && why_checks > 0 && why_not_checks > 0, detail + &first)
}

fn counterfactual_properties() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut violations = Vec::new();
    let (mut flipped, mut none) = (0, 0);
    let mut cases = 0;
    while cases < 100 {
        let (features, max_leaves) = (rng.gen_range(2..=6), rng.gen_range(2..=8));
        let (tree, variables) = random_tree(&mut rng, features, max_leaves);
        if tree.leaf_count() < 2 {
            continue;
        }
        cases += 1;
        let state = StateVector(variables.iter().map(|v| rng.gen_range(v.min..=v.max).round()).collect());
        let original = tree.predict(&state);
        match generate_counterfactuals(&tree, &variables, &state, original, MoveConfig::default()) {
            Ok(r) => {
                flipped += 1;
                if tree.predict(&r.modified_state) == original {
                    violations.push(format!("case {cases}: prediction did not change"));
                }
                let mut reverted = r.modified_state.clone();
                for m in &r.moved_features {
                    reverted.set(m.feature, m.original);
                }
                if tree.predict(&reverted) != original || reverted != state {
                    violations.push(format!("case {cases}: revert did not restore the prediction"));
                }
            }
            Err(Error::NoCounterfactualFound) => none += 1,
            Err(e) => violations.push(format!("case {cases}: unexpected error {e}")),
        }
    }
    (violations.is_empty(), format!("{flipped} flipped, {none} NoCounterfactualFound, {} violations", violations.len()))
}

fn determinism() -> (bool, String) {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let artifacts = pipeline::build(EnvKind::Craft, &BuildOptions::new(3)).unwrap();
        artifacts.save(d.path()).unwrap();
        let loaded = Artifacts::load(d.path(), None).unwrap();
        let mut ask = Ask::new(QuestionType::WhyNot, craft::BUILD_BARRACKS);
        ask.distal = true;
        let state = StateVector(vec![0.0; 6]);
        let ask = if loaded.tree().unwrap().predict(&state) == craft::BUILD_BARRACKS {
            Ask { question: QuestionType::Why, ..ask }
        } else {
            ask
        };
        let e = loaded.explain(&state, &ask, &[]).unwrap();
        fs::write(d.path().join("explanation.json"), e.to_json()).unwrap();
    }
    let mut files: Vec<String> = fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    let differing: Vec<&String> =
        files.iter().filter(|f| fs::read(dirs[0].path().join(f)).ok() != fs::read(dirs[1].path().join(f)).ok()).collect();
    (differing.is_empty(), format!("{} files compared, differing: {differing:?}", files.len()))
}

fn main() -> ExitCode {
    let outcomes = vec![
        check("worked example reproduction", worked_example),
        check("fidelity ordering", fidelity_check),
        check("distal predictor learnability", distal_learnability),
        check("gradient check", gradient_check),
        check("oracle equivalence", oracle_equivalence),
        check("counterfactual properties", counterfactual_properties),
        check("determinism", determinism),
    ];
    for o in &outcomes {
        println!("{} {} ({:.1?}): {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.elapsed, o.detail);
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

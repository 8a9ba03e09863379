//! Task-prediction fidelity: roll out the greedy agent and score how often
//! each surrogate predicts the action the agent actually takes.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::envs::EnvKind;
use crate::equations::{fit_equations, se_task_prediction, FittedEquations};
use crate::mdp::{Environment, StateVector};
use crate::pipeline::{evaluation_seed, Artifacts};
use crate::regress::RegressorKind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Surrogate {
    #[serde(rename = "SE-LR")]
    SeLr,
    #[serde(rename = "SE-DT")]
    SeDt,
    #[serde(rename = "SE-MLP")]
    SeMlp,
    #[serde(rename = "DP")]
    Dp,
    #[serde(rename = "DP_n")]
    DpN,
}

impl Surrogate {
    pub const ALL: [Surrogate; 5] = [Surrogate::SeLr, Surrogate::SeDt, Surrogate::SeMlp, Surrogate::Dp, Surrogate::DpN];

    pub fn name(self) -> &'static str {
        match self {
            Surrogate::SeLr => "SE-LR",
            Surrogate::SeDt => "SE-DT",
            Surrogate::SeMlp => "SE-MLP",
            Surrogate::Dp => "DP",
            Surrogate::DpN => "DP_n",
        }
    }

    pub fn regressor(self) -> Option<RegressorKind> {
        match self {
            Surrogate::SeLr => Some(RegressorKind::LinearRegression),
            Surrogate::SeDt => Some(RegressorKind::DecisionTreeRegressor),
            Surrogate::SeMlp => Some(RegressorKind::MlpRegressor),
            Surrogate::Dp | Surrogate::DpN => None,
        }
    }
}

impl fmt::Display for Surrogate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Surrogate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Surrogate::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown surrogate `{s}`")))
    }
}

/// Matches and steps, overall and per episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    pub matches: usize,
    pub steps: usize,
    pub per_episode: Vec<(usize, usize)>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.matches as f64 / self.steps as f64
        }
    }
}

pub type SurrogateFn<'a> = Box<dyn FnMut(&StateVector) -> Option<usize> + 'a>;

/// One greedy rollout scored against several surrogates at once. A
/// surrogate answering `None` counts as a miss. Episode `k` is reset with
/// `seed + k`.
pub fn evaluate_many(
    env: &mut dyn Environment,
    agent: &dyn Fn(&StateVector) -> usize,
    surrogates: &mut [SurrogateFn<'_>],
    episodes: usize,
    seed: u64,
) -> Vec<Evaluation> {
    let mut out = vec![Evaluation::default(); surrogates.len()];
    for ep in 0..episodes {
        let mut state = env.reset(seed.wrapping_add(ep as u64));
        let mut counts = vec![(0usize, 0usize); surrogates.len()];
        loop {
            let action = agent(&state);
            for (c, s) in counts.iter_mut().zip(surrogates.iter_mut()) {
                c.1 += 1;
                if s(&state) == Some(action) {
                    c.0 += 1;
                }
            }
            let t = env.step(action).expect("agent produced a valid action");
            if t.done {
                break;
            }
            state = t.next;
        }
        for (e, c) in out.iter_mut().zip(counts) {
            e.matches += c.0;
            e.steps += c.1;
            e.per_episode.push(c);
        }
    }
    out
}

/// Per-step task-prediction accuracy of one surrogate.
pub fn evaluate<S>(env: &mut dyn Environment, agent: &dyn Fn(&StateVector) -> usize, surrogate: S, episodes: usize, seed: u64) -> Evaluation
where
    S: FnMut(&StateVector) -> Option<usize>,
{
    let mut list: Vec<SurrogateFn<'_>> = vec![Box::new(surrogate)];
    evaluate_many(env, agent, &mut list, episodes, seed).remove(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub env: String,
    pub surrogate: Surrogate,
    /// `None` when the surrogate's artifact was missing.
    pub accuracy: Option<f64>,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub rows: Vec<FidelityRow>,
    /// env -> (|variables|, |actions|)
    pub env_sizes: BTreeMap<String, (usize, usize)>,
}

/// Scores every surrogate of one artifact set. SE equations for regressors
/// other than the stored one are fitted from the replay.
pub fn evaluate_artifacts(artifacts: &Artifacts, episodes: usize, seed: u64) -> Result<Vec<FidelityRow>> {
    let policy = artifacts.policy()?;
    let graph = &artifacts.graph;
    let mut equations: BTreeMap<Surrogate, Option<FittedEquations>> = BTreeMap::new();
    for s in Surrogate::ALL {
        let Some(kind) = s.regressor() else { continue };
        let fitted = match (&artifacts.equations, &artifacts.replay) {
            (Some(e), _) if e.kind == kind => Some(e.clone()),
            (_, Some(replay)) => Some(fit_equations(graph, replay, kind, seed)?),
            _ => None,
        };
        equations.insert(s, fitted);
    }

    let mut present = Vec::new();
    let mut surrogates: Vec<SurrogateFn<'_>> = Vec::new();
    for s in Surrogate::ALL {
        let f: Option<SurrogateFn<'_>> = match s {
            Surrogate::Dp => artifacts.tree.as_ref().map(|t| Box::new(move |x: &StateVector| Some(t.predict(x))) as SurrogateFn<'_>),
            Surrogate::DpN => artifacts.tree_n.as_ref().map(|t| Box::new(move |x: &StateVector| Some(t.predict(x))) as SurrogateFn<'_>),
            _ => equations[&s]
                .as_ref()
                .map(|e| Box::new(move |x: &StateVector| se_task_prediction(graph, e, x).ok()) as SurrogateFn<'_>),
        };
        match f {
            Some(f) => {
                present.push(s);
                surrogates.push(f);
            }
            None => warn!("MissingArtifact: no {} surrogate for {}", s, artifacts.env),
        }
    }

    let mut env = artifacts.env.make();
    let agent = |x: &StateVector| policy.action(x);
    let evals = evaluate_many(env.as_mut(), &agent, &mut surrogates, episodes, evaluation_seed(seed));
    Ok(Surrogate::ALL
        .into_iter()
        .map(|s| match present.iter().position(|&p| p == s) {
            Some(i) => FidelityRow {
                env: artifacts.env.name().into(),
                surrogate: s,
                accuracy: Some(evals[i].accuracy()),
                steps: evals[i].steps,
                seed,
            },
            None => FidelityRow { env: artifacts.env.name().into(), surrogate: s, accuracy: None, steps: 0, seed },
        })
        .collect())
}

/// Builds (or otherwise obtains) artifacts per (env, seed) and scores them.
pub fn report<F>(envs: &[EnvKind], seeds: &[u64], episodes: usize, mut artifacts_for: F) -> Result<FidelityReport>
where
    F: FnMut(EnvKind, u64) -> Result<Artifacts>,
{
    if episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be at least 1".into()));
    }
    let mut report = FidelityReport::default();
    for &env in envs {
        let spec = env.make().spec().clone();
        report.env_sizes.insert(env.name().into(), (spec.variables.len(), spec.actions.len()));
        for &seed in seeds {
            match artifacts_for(env, seed) {
                Ok(a) => report.rows.extend(evaluate_artifacts(&a, episodes, seed)?),
                Err(e) => {
                    warn!("MissingArtifact: {env} seed {seed}: {e}");
                    report.rows.extend(Surrogate::ALL.into_iter().map(|s| FidelityRow {
                        env: env.name().into(),
                        surrogate: s,
                        accuracy: None,
                        steps: 0,
                        seed,
                    }));
                }
            }
        }
    }
    Ok(report)
}

impl FidelityReport {
    /// Mean accuracy over seeds (missing cells excluded).
    pub fn mean_accuracy(&self, env: &str, surrogate: Surrogate) -> Option<f64> {
        let vals: Vec<f64> =
            self.rows.iter().filter(|r| r.env == env && r.surrogate == surrogate).filter_map(|r| r.accuracy).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn envs(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.env) {
                out.push(r.env.clone());
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("env,surrogate,accuracy,steps,seed\n");
        for r in &self.rows {
            let acc = r.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", r.env, r.surrogate, acc, r.steps, r.seed);
        }
        out
    }

    /// Summary layout: one row per environment, accuracies in percent,
    /// plus the DP minus DP_n gap in points.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<14}{:>9}", "env", "size");
        for s in Surrogate::ALL {
            let _ = write!(out, "{:>9}", s.name());
        }
        let _ = writeln!(out, "{:>11}", "DP-DP_n");
        for env in self.envs() {
            let size = self.env_sizes.get(&env).map(|(v, a)| format!("{v}/{a}")).unwrap_or_default();
            let _ = write!(out, "{env:<14}{size:>9}");
            for s in Surrogate::ALL {
                let cell = self.mean_accuracy(&env, s).map(|a| format!("{:.2}", 100.0 * a)).unwrap_or_else(|| "n/a".into());
                let _ = write!(out, "{cell:>9}");
            }
            let gap = match (self.mean_accuracy(&env, Surrogate::Dp), self.mean_accuracy(&env, Surrogate::DpN)) {
                (Some(a), Some(b)) => format!("{:+.2}", 100.0 * (a - b)),
                _ => "n/a".into(),
            };
            let _ = writeln!(out, "{gap:>11}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::TaxiEnv;

    #[test]
    fn self_fidelity_is_perfect() {
        let mut env = TaxiEnv::new();
        let agent = |s: &StateVector| (s.get(0) as usize) % 6;
        let e = evaluate(&mut env, &agent, |s: &StateVector| Some((s.get(0) as usize) % 6), 3, 0);
        assert_eq!(e.accuracy(), 1.0);
        assert_eq!(e.per_episode.iter().map(|p| p.1).sum::<usize>(), e.steps);
    }

    #[test]
    fn missing_prediction_is_a_miss() {
        let mut env = TaxiEnv::new();
        let e = evaluate(&mut env, &|_: &StateVector| 0, |_: &StateVector| None, 1, 0);
        assert_eq!(e.matches, 0);
        assert!(e.steps > 0);
    }

    #[test]
    fn csv_has_header_and_one_line_per_row() {
        let report = FidelityReport {
            rows: vec![FidelityRow { env: "taxi".into(), surrogate: Surrogate::Dp, accuracy: Some(0.5), steps: 10, seed: 0 }],
            env_sizes: BTreeMap::from([("taxi".into(), (4, 6))]),
        };
        assert_eq!(report.to_csv(), "env,surrogate,accuracy,steps,seed\ntaxi,DP,0.500000,10,0\n");
        assert!(report.to_table().contains("50.00"));
    }
}

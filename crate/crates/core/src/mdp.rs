//! MDP description, state vectors, the environment trait and replay capture.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Whether a state variable takes integer or real values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVariable {
    pub name: String,
    pub kind: VariableKind,
    pub min: f64,
    pub max: f64,
}

impl StateVariable {
    pub fn discrete(name: &str, min: f64, max: f64) -> Self {
        Self { name: name.to_string(), kind: VariableKind::Discrete, min, max }
    }

    pub fn continuous(name: &str, min: f64, max: f64) -> Self {
        Self { name: name.to_string(), kind: VariableKind::Continuous, min, max }
    }

    pub fn contains(&self, value: f64) -> bool {
        let in_range = value >= self.min && value <= self.max;
        match self.kind {
            VariableKind::Discrete => in_range && value.fract() == 0.0,
            VariableKind::Continuous => in_range,
        }
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.min, self.max)
    }
}

/// Static description of an environment: features, actions, discount and
/// the "solved" reward bar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub variables: Vec<StateVariable>,
    pub actions: Vec<String>,
    pub gamma: f64,
    pub reward_threshold: f64,
}

impl MdpSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for v in &self.variables {
            if !seen.insert(v.name.as_str()) {
                return Err(Error::InvalidSpec(format!("duplicate variable `{}`", v.name)));
            }
            if !(v.min <= v.max) {
                return Err(Error::InvalidSpec(format!("empty range for `{}`", v.name)));
            }
        }
        if self.actions.len() < 2 {
            return Err(Error::InvalidSpec("at least two actions are required".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidSpec(format!("gamma {} outside [0,1)", self.gamma)));
        }
        Ok(())
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }

    /// Checks length and per-variable ranges.
    pub fn check_state(&self, state: &StateVector) -> Result<()> {
        if state.len() != self.variables.len() {
            return Err(Error::DimensionMismatch { expected: self.variables.len(), got: state.len() });
        }
        for (v, &x) in self.variables.iter().zip(state.values()) {
            if !v.contains(x) {
                return Err(Error::OutOfRange { variable: v.name.clone(), value: x });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: MdpSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Feature values aligned with [`MdpSpec::variables`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0[index]
    }

    pub fn set(&mut self, index: usize, value: f64) {
        self.0[index] = value;
    }

    /// Parses "v1,v2,..." as written on the command line.
    pub fn parse_csv(text: &str) -> Result<Self> {
        text.split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("not a number: `{}`", t.trim())))
            })
            .collect::<Result<Vec<_>>>()
            .map(StateVector)
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl fmt::Display for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| format!("{v}")).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next: StateVector,
    pub reward: f64,
    pub done: bool,
}

/// A single-session, seeded simulator.
pub trait Environment: Send {
    fn spec(&self) -> &MdpSpec;

    /// Resets to an initial state; identical seeds give identical states.
    fn reset(&mut self, seed: u64) -> StateVector;

    fn step(&mut self, action: usize) -> Result<Transition>;

    /// The current (last emitted) state.
    fn state(&self) -> StateVector;

    fn is_done(&self) -> bool;

    /// Upper bound on episode length; `step` reports `done` when it is hit.
    fn max_steps(&self) -> usize;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub episode: u64,
    pub step: u64,
    pub state: StateVector,
    pub action: usize,
    pub reward: f64,
    pub next_state: StateVector,
    pub done: bool,
}

/// Time-ordered transitions harvested from rollouts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayDataset {
    pub records: Vec<ReplayRecord>,
}

impl ReplayDataset {
    pub fn new(records: Vec<ReplayRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records grouped by episode, in stored order.
    pub fn episodes(&self) -> Vec<&[ReplayRecord]> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.records.len() {
            if i == self.records.len() || self.records[i].episode != self.records[start].episode {
                if start < i {
                    out.push(&self.records[start..i]);
                }
                start = i;
            }
        }
        out
    }

    /// Feature matrix and action labels for supervised fitting.
    pub fn features_and_actions(&self) -> (Vec<Vec<f64>>, Vec<usize>) {
        self.records.iter().map(|r| (r.state.0.clone(), r.action)).unzip()
    }

    /// Concatenates per-worker datasets ordered by (worker, episode, step);
    /// episode ids are renumbered so they stay unique.
    pub fn merge(parts: Vec<ReplayDataset>) -> ReplayDataset {
        let mut records = Vec::new();
        let mut next_episode = 0u64;
        for part in parts {
            let mut sorted = part.records;
            sorted.sort_by_key(|r| (r.episode, r.step));
            let mut last: Option<u64> = None;
            for mut r in sorted {
                if last != Some(r.episode) {
                    if last.is_some() {
                        next_episode += 1;
                    }
                    last = Some(r.episode);
                }
                r.episode = next_episode;
                records.push(r);
            }
            if last.is_some() {
                next_episode += 1;
            }
        }
        ReplayDataset { records }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ReplayRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("replay line {}: {e}", n + 1)))?;
            records.push(record);
        }
        Ok(Self { records })
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        Self::read_jsonl(text.as_bytes())
    }
}

/// Rolls out `policy` for `episodes` episodes, one record per step.
/// Episode `k` is reset with `seed + k`.
pub fn record_replay<F>(env: &mut dyn Environment, mut policy: F, episodes: usize, seed: u64) -> ReplayDataset
where
    F: FnMut(&StateVector) -> usize,
{
    assert!(episodes >= 1, "record_replay needs at least one episode");
    let mut records = Vec::new();
    for ep in 0..episodes {
        let mut state = env.reset(seed.wrapping_add(ep as u64));
        let mut step = 0u64;
        loop {
            let action = policy(&state);
            let t = env.step(action).expect("policy produced a valid action");
            records.push(ReplayRecord {
                episode: ep as u64,
                step,
                state: state.clone(),
                action,
                reward: t.reward,
                next_state: t.next.clone(),
                done: t.done,
            });
            if t.done {
                break;
            }
            state = t.next;
            step += 1;
        }
    }
    ReplayDataset { records }
}

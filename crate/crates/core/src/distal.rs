//! Opportunity chains: training sequences that end in an action enabling
//! later actions, and a many-to-one recurrent predictor of the distal
//! action and its expected return.

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::argmax;
use crate::graph::ActionInfluenceGraph;
use crate::mdp::{ReplayDataset, StateVariable, StateVector};
use crate::{Error, Result};

pub const DEFAULT_N_MAX: usize = 8;
pub const DEFAULT_HIDDEN: usize = 10;
pub const RETURN_WEIGHT: f64 = 0.1;

pub type Trace = Vec<(StateVector, usize)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    /// Up to `n_max` (state, action) pairs ending at the source step.
    pub inputs: Trace,
    pub target_action: usize,
    /// Discounted return-to-go from the target action's step.
    pub target_return: f64,
    pub episode: u64,
    pub step: u64,
}

impl SequenceSample {
    pub fn last_action(&self) -> usize {
        self.inputs.last().expect("samples are non-empty").1
    }
}

/// Emits one sample per step whose action has other actions on its causal
/// chain and is followed, later in the same episode, by one of them. The
/// first such later action is the target.
pub fn extract_sequences(data: &ReplayDataset, graph: &ActionInfluenceGraph, gamma: f64, n_max: usize) -> Result<Vec<SequenceSample>> {
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    let terminals = graph.chain_terminal_actions();
    if !data.records.iter().any(|r| terminals.contains(&r.action)) {
        warn!("NoTerminalActions: the replay contains no chain-terminal action");
        return Ok(Vec::new());
    }
    let chain_actions: Vec<Option<Vec<usize>>> = (0..graph.actions().len())
        .map(|a| {
            graph.causal_chain(a).ok().map(|c| c.actions.into_iter().filter(|&x| x != a).collect::<Vec<_>>())
        })
        .collect();

    let mut samples = Vec::new();
    for episode in data.episodes() {
        for (t, rec) in episode.iter().enumerate() {
            let Some(Some(enabled)) = chain_actions.get(rec.action) else { continue };
            if enabled.is_empty() {
                continue;
            }
            let Some(u) = (t + 1..episode.len()).find(|&u| enabled.contains(&episode[u].action)) else {
                continue;
            };
            let target_return = episode[u..].iter().rev().fold(0.0, |acc, r| r.reward + gamma * acc);
            let start = (t + 1).saturating_sub(n_max);
            samples.push(SequenceSample {
                inputs: episode[start..=t].iter().map(|r| (r.state.clone(), r.action)).collect(),
                target_action: episode[u].action,
                target_return,
                episode: rec.episode,
                step: rec.step,
            });
        }
    }
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    GradientDescent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistalConfig {
    pub hidden: usize,
    pub n_max: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for DistalConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            n_max: DEFAULT_N_MAX,
            epochs: 60,
            batch_size: 100,
            learning_rate: 0.01,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

/// Elman-cell weights, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    /// hidden x input
    pub wx: Vec<f64>,
    /// hidden x hidden
    pub wh: Vec<f64>,
    pub b: Vec<f64>,
    /// actions x hidden
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: f64,
}

impl Weights {
    fn zeros(hidden: usize, input: usize, actions: usize) -> Self {
        Self {
            wx: vec![0.0; hidden * input],
            wh: vec![0.0; hidden * hidden],
            b: vec![0.0; hidden],
            wo: vec![0.0; actions * hidden],
            bo: vec![0.0; actions],
            wv: vec![0.0; hidden],
            bv: 0.0,
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for part in [&self.wx, &self.wh, &self.b, &self.wo, &self.bo, &self.wv] {
            out.extend_from_slice(part);
        }
        out.push(self.bv);
        out
    }

    pub fn len(&self) -> usize {
        self.wx.len() + self.wh.len() + self.b.len() + self.wo.len() + self.bo.len() + self.wv.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn assign(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len(), "parameter vector length");
        let mut rest = flat;
        for part in [&mut self.wx, &mut self.wh, &mut self.b, &mut self.wo, &mut self.bo, &mut self.wv] {
            let (head, tail) = rest.split_at(part.len());
            part.copy_from_slice(head);
            rest = tail;
        }
        self.bv = rest[0];
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistalPredictor {
    pub config: DistalConfig,
    pub actions: Vec<String>,
    pub feature_min: Vec<f64>,
    pub feature_max: Vec<f64>,
    pub return_mean: f64,
    pub return_scale: f64,
    pub weights: Weights,
    /// Mean training loss after each epoch.
    pub loss_history: Vec<f64>,
}

struct Forward {
    xs: Vec<Vec<f64>>,
    hs: Vec<Vec<f64>>,
    probs: Vec<f64>,
    value: f64,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl DistalPredictor {
    /// Untrained predictor with seeded uniform(±1/sqrt(hidden)) weights.
    pub fn new(variables: &[StateVariable], actions: &[String], config: DistalConfig) -> Self {
        let input = variables.len() + actions.len();
        let h = config.hidden;
        let mut weights = Weights::zeros(h, input, actions.len());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bound = 1.0 / (h as f64).sqrt();
        let mut flat = weights.flatten();
        for w in flat.iter_mut() {
            *w = rng.gen_range(-bound..bound);
        }
        weights.assign(&flat);
        weights.b.iter_mut().for_each(|v| *v = 0.0);
        weights.bo.iter_mut().for_each(|v| *v = 0.0);
        weights.bv = 0.0;
        Self {
            config,
            actions: actions.to_vec(),
            feature_min: variables.iter().map(|v| v.min).collect(),
            feature_max: variables.iter().map(|v| v.max).collect(),
            return_mean: 0.0,
            return_scale: 1.0,
            weights,
            loss_history: Vec::new(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    fn input_size(&self) -> usize {
        self.feature_min.len() + self.actions.len()
    }

    /// Scaled features plus one-hot action for the last `n_max` steps.
    pub fn encode(&self, trace: &[(StateVector, usize)]) -> Vec<Vec<f64>> {
        let start = trace.len().saturating_sub(self.config.n_max);
        trace[start..]
            .iter()
            .map(|(s, a)| {
                let mut x: Vec<f64> = s
                    .values()
                    .iter()
                    .zip(self.feature_min.iter().zip(&self.feature_max))
                    .map(|(v, (lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
                    .collect();
                x.extend((0..self.actions.len()).map(|k| if k == *a { 1.0 } else { 0.0 }));
                x
            })
            .collect()
    }

    fn forward(&self, trace: &[(StateVector, usize)]) -> Forward {
        let h = self.hidden();
        let d = self.input_size();
        let w = &self.weights;
        let xs = self.encode(trace);
        let mut hs = vec![vec![0.0; h]];
        for x in &xs {
            let prev = hs.last().expect("initial state");
            let next: Vec<f64> = (0..h)
                .map(|i| {
                    let a = w.b[i]
                        + (0..d).map(|j| w.wx[i * d + j] * x[j]).sum::<f64>()
                        + (0..h).map(|j| w.wh[i * h + j] * prev[j]).sum::<f64>();
                    a.tanh()
                })
                .collect();
            hs.push(next);
        }
        let last = hs.last().expect("initial state");
        let logits: Vec<f64> =
            (0..self.actions.len()).map(|k| w.bo[k] + (0..h).map(|j| w.wo[k * h + j] * last[j]).sum::<f64>()).collect();
        let value = w.bv + (0..h).map(|j| w.wv[j] * last[j]).sum::<f64>();
        Forward { xs, hs, probs: softmax(&logits), value }
    }

    /// Softmax over the action head.
    pub fn action_probabilities(&self, trace: &[(StateVector, usize)]) -> Vec<f64> {
        self.forward(trace).probs
    }

    /// Most likely next chain action (any action) and its expected return.
    pub fn predict(&self, trace: &[(StateVector, usize)]) -> (usize, f64) {
        let f = self.forward(trace);
        (argmax(&f.probs), f.value * self.return_scale + self.return_mean)
    }

    fn normalized_return(&self, r: f64) -> f64 {
        (r - self.return_mean) / self.return_scale
    }

    /// Mean joint loss: cross-entropy plus 0.1 x squared error on the
    /// normalized return.
    pub fn loss(&self, samples: &[SequenceSample]) -> f64 {
        let total: f64 = samples
            .iter()
            .map(|s| {
                let f = self.forward(&s.inputs);
                -f.probs[s.target_action].max(1e-300).ln()
                    + RETURN_WEIGHT * (f.value - self.normalized_return(s.target_return)).powi(2)
            })
            .sum();
        total / samples.len().max(1) as f64
    }

    /// Loss and its gradient with respect to `weights.flatten()`, by
    /// backpropagation through time.
    pub fn loss_and_gradient(&self, samples: &[SequenceSample]) -> (f64, Vec<f64>) {
        let h = self.hidden();
        let d = self.input_size();
        let n_actions = self.actions.len();
        let w = &self.weights;
        let mut g = Weights::zeros(h, d, n_actions);
        let mut total = 0.0;
        for s in samples {
            let f = self.forward(&s.inputs);
            let target = self.normalized_return(s.target_return);
            total += -f.probs[s.target_action].max(1e-300).ln() + RETURN_WEIGHT * (f.value - target).powi(2);

            let last = f.hs.last().expect("initial state");
            let dz: Vec<f64> = (0..n_actions).map(|k| f.probs[k] - if k == s.target_action { 1.0 } else { 0.0 }).collect();
            let dv = 2.0 * RETURN_WEIGHT * (f.value - target);
            for k in 0..n_actions {
                g.bo[k] += dz[k];
                for j in 0..h {
                    g.wo[k * h + j] += dz[k] * last[j];
                }
            }
            g.bv += dv;
            for j in 0..h {
                g.wv[j] += dv * last[j];
            }
            let mut dh: Vec<f64> =
                (0..h).map(|j| (0..n_actions).map(|k| w.wo[k * h + j] * dz[k]).sum::<f64>() + w.wv[j] * dv).collect();
            for t in (1..f.hs.len()).rev() {
                let ht = &f.hs[t];
                let prev = &f.hs[t - 1];
                let x = &f.xs[t - 1];
                let da: Vec<f64> = (0..h).map(|i| dh[i] * (1.0 - ht[i] * ht[i])).collect();
                for i in 0..h {
                    g.b[i] += da[i];
                    for j in 0..d {
                        g.wx[i * d + j] += da[i] * x[j];
                    }
                    for j in 0..h {
                        g.wh[i * h + j] += da[i] * prev[j];
                    }
                }
                dh = (0..h).map(|j| (0..h).map(|i| w.wh[i * h + j] * da[i]).sum()).collect();
            }
        }
        let n = samples.len().max(1) as f64;
        let grad = g.flatten().into_iter().map(|v| v / n).collect();
        (total / n, grad)
    }

    /// Trains on `samples`; the return head is fitted on returns
    /// standardized with the training set's mean and deviation.
    pub fn train(
        variables: &[StateVariable],
        actions: &[String],
        samples: &[SequenceSample],
        config: DistalConfig,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if config.batch_size == 0 || config.hidden == 0 || config.n_max == 0 {
            return Err(Error::InvalidArgument("batch size, hidden width and n_max must be positive".into()));
        }
        let mut model = Self::new(variables, actions, config.clone());
        let n = samples.len() as f64;
        let mean = samples.iter().map(|s| s.target_return).sum::<f64>() / n;
        let sd = (samples.iter().map(|s| (s.target_return - mean).powi(2)).sum::<f64>() / n).sqrt();
        model.return_mean = mean;
        model.return_scale = if sd > 1e-12 { sd } else { 1.0 };

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut params = model.weights.flatten();
        let mut m = vec![0.0; params.len()];
        let mut v = vec![0.0; params.len()];
        let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
        let mut t = 0i32;
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<SequenceSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
                let (_, grad) = model.loss_and_gradient(&batch);
                t += 1;
                match config.optimizer {
                    Optimizer::GradientDescent => {
                        for (p, g) in params.iter_mut().zip(&grad) {
                            *p -= config.learning_rate * g;
                        }
                    }
                    Optimizer::Adam => {
                        let c1 = 1.0 - beta1.powi(t);
                        let c2 = 1.0 - beta2.powi(t);
                        for k in 0..params.len() {
                            m[k] = beta1 * m[k] + (1.0 - beta1) * grad[k];
                            v[k] = beta2 * v[k] + (1.0 - beta2) * grad[k] * grad[k];
                            params[k] -= config.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                        }
                    }
                }
                model.weights.assign(&params);
            }
            model.loss_history.push(model.loss(samples));
        }
        if model.weights.flatten().iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("training diverged to non-finite weights".into()));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("predictor serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        let (h, d, a) = (p.config.hidden, p.input_size(), p.actions.len());
        let w = &p.weights;
        if w.wx.len() != h * d || w.wh.len() != h * h || w.b.len() != h || w.wo.len() != a * h || w.bo.len() != a || w.wv.len() != h {
            return Err(Error::Parse("predictor weight shapes do not match its configuration".into()));
        }
        Ok(p)
    }
}

/// Distal action for `current_action`: the predictor's argmax, kept only if
/// it lies on the current action's causal chain (and is not the action
/// itself).
pub fn predict_distal(
    predictor: &DistalPredictor,
    trace: &[(StateVector, usize)],
    graph: &ActionInfluenceGraph,
    current_action: usize,
) -> Option<(usize, f64)> {
    if trace.is_empty() {
        return None;
    }
    let chain = graph.causal_chain(current_action).ok()?;
    let (action, ret) = predictor.predict(trace);
    (action != current_action && chain.actions.contains(&action)).then_some((action, ret))
}

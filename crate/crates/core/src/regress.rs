//! Regressors for structural equations: least-squares linear, CART with
//! variance splits, and a one-hidden-layer tanh network.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::Error;

pub const TREE_MAX_DEPTH: usize = 5;
pub const MLP_HIDDEN: usize = 16;
pub const MLP_EPOCHS: usize = 500;
const MLP_LEARNING_RATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorKind {
    LinearRegression,
    DecisionTreeRegressor,
    MlpRegressor,
}

impl RegressorKind {
    pub const ALL: [RegressorKind; 3] =
        [RegressorKind::LinearRegression, RegressorKind::DecisionTreeRegressor, RegressorKind::MlpRegressor];

    pub fn short_name(self) -> &'static str {
        match self {
            RegressorKind::LinearRegression => "lr",
            RegressorKind::DecisionTreeRegressor => "dt",
            RegressorKind::MlpRegressor => "mlp",
        }
    }
}

impl fmt::Display for RegressorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for RegressorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lr" | "linear_regression" => Ok(RegressorKind::LinearRegression),
            "dt" | "decision_tree_regressor" => Ok(RegressorKind::DecisionTreeRegressor),
            "mlp" | "mlp_regressor" => Ok(RegressorKind::MlpRegressor),
            _ => Err(Error::InvalidArgument(format!("unknown regressor `{s}` (expected lr, dt or mlp)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RegressionNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regressor {
    LinearRegression {
        weights: Vec<f64>,
        bias: f64,
    },
    DecisionTreeRegressor {
        nodes: Vec<RegressionNode>,
    },
    MlpRegressor {
        input_mean: Vec<f64>,
        input_scale: Vec<f64>,
        hidden_weights: Vec<Vec<f64>>,
        hidden_bias: Vec<f64>,
        output_weights: Vec<f64>,
        output_bias: f64,
        target_mean: f64,
        target_scale: f64,
    },
}

impl Regressor {
    /// Fits `kind` on rows `x` with targets `y`. `x` must be non-empty.
    pub fn fit(kind: RegressorKind, x: &[Vec<f64>], y: &[f64], seed: u64) -> Self {
        assert!(!x.is_empty() && x.len() == y.len(), "regression needs matching non-empty data");
        match kind {
            RegressorKind::LinearRegression => fit_linear(x, y),
            RegressorKind::DecisionTreeRegressor => {
                let mut nodes = Vec::new();
                let rows: Vec<usize> = (0..x.len()).collect();
                grow_regression_tree(x, y, &rows, 0, &mut nodes);
                Regressor::DecisionTreeRegressor { nodes }
            }
            RegressorKind::MlpRegressor => fit_mlp(x, y, seed),
        }
    }

    pub fn kind(&self) -> RegressorKind {
        match self {
            Regressor::LinearRegression { .. } => RegressorKind::LinearRegression,
            Regressor::DecisionTreeRegressor { .. } => RegressorKind::DecisionTreeRegressor,
            Regressor::MlpRegressor { .. } => RegressorKind::MlpRegressor,
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            Regressor::LinearRegression { weights, bias } => bias + dot(weights, row),
            Regressor::DecisionTreeRegressor { nodes } => {
                let mut id = 0;
                loop {
                    match &nodes[id] {
                        RegressionNode::Leaf { value } => return *value,
                        RegressionNode::Split { feature, threshold, left, right } => {
                            id = if row[*feature] <= *threshold { *left } else { *right };
                        }
                    }
                }
            }
            Regressor::MlpRegressor {
                input_mean,
                input_scale,
                hidden_weights,
                hidden_bias,
                output_weights,
                output_bias,
                target_mean,
                target_scale,
            } => {
                let z: Vec<f64> = row.iter().zip(input_mean).zip(input_scale).map(|((x, m), s)| (x - m) / s).collect();
                let out: f64 = hidden_weights
                    .iter()
                    .zip(hidden_bias)
                    .zip(output_weights)
                    .map(|((w, b), v)| v * (dot(w, &z) + b).tanh())
                    .sum::<f64>()
                    + output_bias;
                out * target_scale + target_mean
            }
        }
    }

    pub fn rmse(&self, x: &[Vec<f64>], y: &[f64]) -> f64 {
        let sse: f64 = x.iter().zip(y).map(|(row, t)| (self.predict(row) - t).powi(2)).sum();
        (sse / x.len().max(1) as f64).sqrt()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn fit_linear(x: &[Vec<f64>], y: &[f64]) -> Regressor {
    let n = x.len();
    let d = x[0].len();
    let design = DMatrix::from_fn(n, d + 1, |i, j| if j == d { 1.0 } else { x[i][j] });
    let target = DVector::from_column_slice(y);
    let svd = design.svd(true, true);
    let coef = svd.solve(&target, 1e-10).expect("svd computed with u and v");
    Regressor::LinearRegression { weights: coef.as_slice()[..d].to_vec(), bias: coef[d] }
}

fn grow_regression_tree(x: &[Vec<f64>], y: &[f64], rows: &[usize], depth: usize, nodes: &mut Vec<RegressionNode>) -> usize {
    let id = nodes.len();
    let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
    nodes.push(RegressionNode::Leaf { value: mean });
    if depth >= TREE_MAX_DEPTH || rows.len() < 2 {
        return id;
    }
    let Some((feature, threshold)) = best_variance_split(x, y, rows) else {
        return id;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][feature] <= threshold);
    let left = grow_regression_tree(x, y, &l, depth + 1, nodes);
    let right = grow_regression_tree(x, y, &r, depth + 1, nodes);
    nodes[id] = RegressionNode::Split { feature, threshold, left, right };
    id
}

fn best_variance_split(x: &[Vec<f64>], y: &[f64], rows: &[usize]) -> Option<(usize, f64)> {
    let n = rows.len();
    let total: f64 = rows.iter().map(|&r| y[r]).sum();
    let parent = total * total / n as f64;
    let mut best: Option<(usize, f64, f64)> = None;
    let mut order = rows.to_vec();
    for feature in 0..x[rows[0]].len() {
        order.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]).then(a.cmp(&b)));
        let mut left_sum = 0.0;
        for k in 0..n - 1 {
            left_sum += y[order[k]];
            let (lo, hi) = (x[order[k]][feature], x[order[k + 1]][feature]);
            if lo == hi {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / (k + 1) as f64 + right_sum * right_sum / (n - k - 1) as f64 - parent;
            if gain > 1e-12 && best.is_none_or(|b| gain > b.2 + 1e-12) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some((feature, threshold, gain));
            }
        }
    }
    best.map(|(f, t, _)| (f, t))
}

fn mean_and_scale(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

fn fit_mlp(x: &[Vec<f64>], y: &[f64], seed: u64) -> Regressor {
    let n = x.len();
    let d = x[0].len();
    let (input_mean, input_scale): (Vec<f64>, Vec<f64>) =
        (0..d).map(|j| mean_and_scale(x.iter().map(move |r| r[j]))).unzip();
    let (target_mean, target_scale) = mean_and_scale(y.iter().copied());
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|r| r.iter().zip(&input_mean).zip(&input_scale).map(|((v, m), s)| (v - m) / s).collect())
        .collect();
    let t: Vec<f64> = y.iter().map(|v| (v - target_mean) / target_scale).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (d as f64).sqrt();
    let mut w1: Vec<Vec<f64>> = (0..MLP_HIDDEN).map(|_| (0..d).map(|_| rng.gen_range(-bound..bound)).collect()).collect();
    let mut b1 = vec![0.0; MLP_HIDDEN];
    let out_bound = 1.0 / (MLP_HIDDEN as f64).sqrt();
    let mut w2: Vec<f64> = (0..MLP_HIDDEN).map(|_| rng.gen_range(-out_bound..out_bound)).collect();
    let mut b2 = 0.0;

    let mut hidden = vec![0.0; MLP_HIDDEN];
    for _ in 0..MLP_EPOCHS {
        let mut gw1 = vec![vec![0.0; d]; MLP_HIDDEN];
        let mut gb1 = [0.0; MLP_HIDDEN];
        let mut gw2 = [0.0; MLP_HIDDEN];
        let mut gb2 = 0.0;
        for (row, target) in z.iter().zip(&t) {
            for k in 0..MLP_HIDDEN {
                hidden[k] = (dot(&w1[k], row) + b1[k]).tanh();
            }
            let err = dot(&w2, &hidden) + b2 - target;
            gb2 += err;
            for k in 0..MLP_HIDDEN {
                gw2[k] += err * hidden[k];
                let back = err * w2[k] * (1.0 - hidden[k] * hidden[k]);
                gb1[k] += back;
                for j in 0..d {
                    gw1[k][j] += back * row[j];
                }
            }
        }
        let step = MLP_LEARNING_RATE * 2.0 / n as f64;
        for k in 0..MLP_HIDDEN {
            w2[k] -= step * gw2[k];
            b1[k] -= step * gb1[k];
            for j in 0..d {
                w1[k][j] -= step * gw1[k][j];
            }
        }
        b2 -= step * gb2;
    }
    Regressor::MlpRegressor {
        input_mean,
        input_scale,
        hidden_weights: w1,
        hidden_bias: b1,
        output_weights: w2,
        output_bias: b2,
        target_mean,
        target_scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for a in 0..6 {
            for b in 0..6 {
                let (a, b) = (a as f64, b as f64);
                x.push(vec![a, b]);
                y.push(2.0 * a - 0.5 * b + 3.0);
            }
        }
        (x, y)
    }

    #[test]
    fn linear_recovers_coefficients() {
        let (x, y) = grid();
        let r = Regressor::fit(RegressorKind::LinearRegression, &x, &y, 0);
        let Regressor::LinearRegression { weights, bias } = &r else { panic!() };
        assert!((weights[0] - 2.0).abs() < 1e-9);
        assert!((weights[1] + 0.5).abs() < 1e-9);
        assert!((bias - 3.0).abs() < 1e-9);
        assert!(r.rmse(&x, &y) < 1e-6);
    }

    #[test]
    fn linear_handles_constant_column() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 1.0]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let r = Regressor::fit(RegressorKind::LinearRegression, &x, &y, 0);
        assert!(r.rmse(&x, &y) < 1e-8);
    }

    #[test]
    fn tree_fits_step_function() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| if i < 7 { 1.0 } else { 5.0 }).collect();
        let r = Regressor::fit(RegressorKind::DecisionTreeRegressor, &x, &y, 0);
        assert_eq!(r.predict(&[3.0]), 1.0);
        assert_eq!(r.predict(&[12.0]), 5.0);
    }

    #[test]
    fn tree_depth_is_bounded() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64).collect();
        let Regressor::DecisionTreeRegressor { nodes } = Regressor::fit(RegressorKind::DecisionTreeRegressor, &x, &y, 0)
        else {
            panic!()
        };
        let leaves = nodes.iter().filter(|n| matches!(n, RegressionNode::Leaf { .. })).count();
        assert!(leaves <= 1 << TREE_MAX_DEPTH);
    }

    #[test]
    fn mlp_learns_smooth_function() {
        let (x, y) = grid();
        let r = Regressor::fit(RegressorKind::MlpRegressor, &x, &y, 1);
        let sd = mean_and_scale(y.iter().copied()).1;
        assert!(r.rmse(&x, &y) < 0.2 * sd, "rmse {}", r.rmse(&x, &y));
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("lr".parse::<RegressorKind>().unwrap(), RegressorKind::LinearRegression);
        assert_eq!("dt".parse::<RegressorKind>().unwrap(), RegressorKind::DecisionTreeRegressor);
        assert_eq!("mlp".parse::<RegressorKind>().unwrap(), RegressorKind::MlpRegressor);
        assert!("svm".parse::<RegressorKind>().is_err());
    }
}

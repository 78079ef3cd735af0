//! Second-order gradient-boosted regression trees with exact greedy splits.
//!
//! Squared error for regression, logistic loss for two classes and softmax
//! (one tree per class per round) beyond that. Growth is level-wise: every
//! level scans each feature once in presorted order, accumulating gradient
//! statistics per open node.

use serde::{Deserialize, Serialize};

use super::preprocess::Matrix;
use crate::dataset::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum loss reduction to make a split.
    pub gamma: f64,
    pub min_child_weight: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self { n_estimators: 100, max_depth: 6, learning_rate: 0.3, lambda: 1.0, gamma: 0.0, min_child_weight: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    idx = if row[feature] < threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

const CLOSED: usize = usize::MAX;

fn leaf_weight(g: f64, h: f64, p: &GbtParams) -> f64 {
    -g / (h + p.lambda) * p.learning_rate
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

fn build_tree(x: &Matrix, order: &[Vec<usize>], grad: &[f64], hess: &[f64], p: &GbtParams) -> Tree {
    let n = x.n_rows;
    let mut nodes = vec![Node::Leaf(0.0)];
    // node currently holding each row, or CLOSED once its node became a leaf
    let mut node_of = vec![0usize; n];
    let mut open = vec![0usize];
    for depth in 0..=p.max_depth {
        if open.is_empty() {
            break;
        }
        let slot: std::collections::HashMap<usize, usize> =
            open.iter().enumerate().map(|(s, &id)| (id, s)).collect();
        let mut g_tot = vec![0.0; open.len()];
        let mut h_tot = vec![0.0; open.len()];
        for i in 0..n {
            if let Some(&s) = slot.get(&node_of[i]) {
                g_tot[s] += grad[i];
                h_tot[s] += hess[i];
            }
        }
        let mut best: Vec<Option<Candidate>> = vec![None; open.len()];
        if depth < p.max_depth {
            for (feature, sorted) in order.iter().enumerate() {
                let mut gl = vec![0.0; open.len()];
                let mut hl = vec![0.0; open.len()];
                let mut last = vec![f64::NAN; open.len()];
                for &i in sorted {
                    let Some(&s) = slot.get(&node_of[i]) else { continue };
                    let v = x.get(i, feature);
                    if !last[s].is_nan() && v > last[s] {
                        let (gr, hr) = (g_tot[s] - gl[s], h_tot[s] - hl[s]);
                        if hl[s] >= p.min_child_weight && hr >= p.min_child_weight {
                            let gain = 0.5
                                * (score(gl[s], hl[s], p.lambda) + score(gr, hr, p.lambda)
                                    - score(g_tot[s], h_tot[s], p.lambda))
                                - p.gamma;
                            if gain > 0.0 && best[s].is_none_or(|b| gain > b.gain) {
                                best[s] = Some(Candidate { gain, feature, threshold: 0.5 * (last[s] + v) });
                            }
                        }
                    }
                    gl[s] += grad[i];
                    hl[s] += hess[i];
                    last[s] = v;
                }
            }
        }
        let mut next_open = Vec::new();
        for (s, &id) in open.iter().enumerate() {
            match best[s] {
                Some(c) => {
                    let left = nodes.len();
                    nodes.push(Node::Leaf(0.0));
                    nodes.push(Node::Leaf(0.0));
                    nodes[id] = Node::Split { feature: c.feature, threshold: c.threshold, left, right: left + 1 };
                    next_open.push(left);
                    next_open.push(left + 1);
                }
                None => nodes[id] = Node::Leaf(leaf_weight(g_tot[s], h_tot[s], p)),
            }
        }
        for i in 0..n {
            let id = node_of[i];
            if id == CLOSED {
                continue;
            }
            node_of[i] = match nodes[id] {
                Node::Split { feature, threshold, left, right } => {
                    if x.get(i, feature) < threshold {
                        left
                    } else {
                        right
                    }
                }
                Node::Leaf(_) => CLOSED,
            };
        }
        open = next_open;
    }
    Tree { nodes }
}

#[derive(Debug, Clone, PartialEq)]
enum Objective {
    Squared,
    Logistic,
    Softmax(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBoostedTrees {
    objective: Objective,
    base: Vec<f64>,
    /// rounds x outputs
    trees: Vec<Vec<Tree>>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl GradientBoostedTrees {
    pub fn fit(x: &Matrix, y: &[f64], task: &TaskKind, p: &GbtParams) -> Self {
        let n = x.n_rows;
        let order: Vec<Vec<usize>> = (0..x.n_cols)
            .map(|j| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| x.get(a, j).total_cmp(&x.get(b, j)));
                idx
            })
            .collect();
        let objective = match task {
            TaskKind::Regression => Objective::Squared,
            TaskKind::Classification { n_classes: 2 } => Objective::Logistic,
            TaskKind::Classification { n_classes } => Objective::Softmax(*n_classes),
        };
        let n_out = match objective {
            Objective::Softmax(k) => k,
            _ => 1,
        };
        let mean = y.iter().sum::<f64>() / n.max(1) as f64;
        let base = match objective {
            Objective::Squared => vec![mean],
            Objective::Logistic => {
                let q = mean.clamp(1e-6, 1.0 - 1e-6);
                vec![(q / (1.0 - q)).ln()]
            }
            Objective::Softmax(k) => vec![0.0; k],
        };
        let mut margin: Vec<f64> = (0..n).flat_map(|_| base.iter().copied()).collect();
        let mut trees = Vec::with_capacity(p.n_estimators);
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        let mut probs = vec![0.0; n * n_out];
        for _ in 0..p.n_estimators {
            if let Objective::Softmax(k) = objective {
                for i in 0..n {
                    let row = &mut probs[i * k..(i + 1) * k];
                    row.copy_from_slice(&margin[i * k..(i + 1) * k]);
                    softmax_in_place(row);
                }
            }
            let mut round = Vec::with_capacity(n_out);
            for out in 0..n_out {
                for i in 0..n {
                    let (g, h) = match objective {
                        Objective::Squared => (margin[i] - y[i], 1.0),
                        Objective::Logistic => {
                            let q = sigmoid(margin[i]);
                            (q - y[i], (q * (1.0 - q)).max(1e-16))
                        }
                        Objective::Softmax(k) => {
                            let q = probs[i * k + out];
                            let target = if y[i] as usize == out { 1.0 } else { 0.0 };
                            (q - target, (2.0 * q * (1.0 - q)).max(1e-16))
                        }
                    };
                    grad[i] = g;
                    hess[i] = h;
                }
                let tree = build_tree(x, &order, &grad, &hess, p);
                for i in 0..n {
                    margin[i * n_out + out] += tree.predict_row(x.row(i));
                }
                round.push(tree);
            }
            trees.push(round);
        }
        Self { objective, base, trees }
    }

    fn margins(&self, row: &[f64]) -> Vec<f64> {
        let mut m = self.base.clone();
        for round in &self.trees {
            for (out, tree) in round.iter().enumerate() {
                m[out] += tree.predict_row(row);
            }
        }
        m
    }

    /// Class codes for classification, values for regression.
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.n_rows)
            .map(|i| {
                let m = self.margins(x.row(i));
                match self.objective {
                    Objective::Squared => m[0],
                    Objective::Logistic => f64::from(u8::from(m[0] > 0.0)),
                    Objective::Softmax(_) => argmax(&m) as f64,
                }
            })
            .collect()
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

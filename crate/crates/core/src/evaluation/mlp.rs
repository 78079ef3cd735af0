//! Fully connected ReLU network trained with Adam and holdout early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::gbt::argmax;
use super::preprocess::Matrix;
use crate::dataset::TaskKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Fraction of the training rows held out for early stopping.
    pub holdout_fraction: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self { hidden: vec![64, 64], learning_rate: 1e-3, batch_size: 32, max_epochs: 200, patience: 10, holdout_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    n_in: usize,
    n_out: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    classes: Option<usize>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

fn column_stats(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.n_rows.max(1) as f64;
    let mut mean = vec![0.0; x.n_cols];
    let mut scale = vec![0.0; x.n_cols];
    for i in 0..x.n_rows {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += x.get(i, j) / n;
        }
    }
    for i in 0..x.n_rows {
        for (j, s) in scale.iter_mut().enumerate() {
            *s += (x.get(i, j) - mean[j]).powi(2) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    (mean, scale)
}

impl Mlp {
    pub fn fit(x: &Matrix, y: &[f64], task: &TaskKind, p: &MlpParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x_mean, x_scale) = column_stats(x);
        let classes = task.n_classes();
        let (y_mean, y_scale) = if classes.is_none() {
            let n = y.len().max(1) as f64;
            let m = y.iter().sum::<f64>() / n;
            let s = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            (m, if s > 0.0 { s } else { 1.0 })
        } else {
            (0.0, 1.0)
        };
        let n_out = classes.unwrap_or(1);
        let mut sizes = vec![x.n_cols];
        sizes.extend(&p.hidden);
        sizes.push(n_out);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / n_in.max(1) as f64).sqrt()).expect("positive std");
                Layer { n_in, n_out, w: (0..n_in * n_out).map(|_| normal.sample(&mut rng)).collect(), b: vec![0.0; n_out] }
            })
            .collect();
        let mut model = Self { layers, x_mean, x_scale, y_mean, y_scale, classes };

        let xs: Vec<Vec<f64>> = (0..x.n_rows).map(|i| model.scale_row(x.row(i))).collect();
        let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();
        let mut idx: Vec<usize> = (0..x.n_rows).collect();
        idx.shuffle(&mut rng);
        let n_hold = if x.n_rows >= 20 { ((x.n_rows as f64) * p.holdout_fraction).round().max(1.0) as usize } else { 0 };
        let (hold, train) = idx.split_at(n_hold);
        let mut train = train.to_vec();

        let mut adam = Adam {
            m: model.layers.iter().flat_map(|l| [vec![0.0; l.w.len()], vec![0.0; l.b.len()]]).collect(),
            v: model.layers.iter().flat_map(|l| [vec![0.0; l.w.len()], vec![0.0; l.b.len()]]).collect(),
            t: 0,
        };
        let mut best = (f64::INFINITY, model.layers.clone());
        let mut stale = 0;
        for _ in 0..p.max_epochs {
            train.shuffle(&mut rng);
            for batch in train.chunks(p.batch_size.max(1)) {
                let grads = model.batch_gradients(batch, &xs, &ys);
                model.adam_step(&mut adam, &grads, p.learning_rate);
            }
            let monitor: &[usize] = if hold.is_empty() { &train } else { hold };
            let loss = monitor.iter().map(|&i| model.loss(&xs[i], ys[i])).sum::<f64>() / monitor.len() as f64;
            if loss < best.0 - 1e-9 {
                best = (loss, model.layers.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= p.patience {
                    break;
                }
            }
        }
        model.layers = best.1;
        model
    }

    fn scale_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.x_mean).zip(&self.x_scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    /// Activations of every layer, input first; the last entry holds raw outputs.
    fn forward(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![input.to_vec()];
        for (li, l) in self.layers.iter().enumerate() {
            let prev = acts.last().expect("input present");
            let mut out = l.b.clone();
            for (o, out_v) in out.iter_mut().enumerate() {
                let w = &l.w[o * l.n_in..(o + 1) * l.n_in];
                *out_v += w.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>();
            }
            if li + 1 < self.layers.len() {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            acts.push(out);
        }
        acts
    }

    fn softmax(z: &[f64]) -> Vec<f64> {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    fn loss(&self, x: &[f64], y: f64) -> f64 {
        let out = self.forward(x).pop().expect("output layer");
        match self.classes {
            Some(_) => -Self::softmax(&out)[y as usize].max(1e-12).ln(),
            None => 0.5 * (out[0] - y).powi(2),
        }
    }

    fn batch_gradients(&self, batch: &[usize], xs: &[Vec<f64>], ys: &[f64]) -> Vec<Vec<f64>> {
        let mut grads: Vec<Vec<f64>> =
            self.layers.iter().flat_map(|l| [vec![0.0; l.w.len()], vec![0.0; l.b.len()]]).collect();
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let acts = self.forward(&xs[i]);
            let out = acts.last().expect("output layer");
            let mut delta: Vec<f64> = match self.classes {
                Some(_) => {
                    let mut p = Self::softmax(out);
                    p[ys[i] as usize] -= 1.0;
                    p
                }
                None => vec![out[0] - ys[i]],
            };
            for li in (0..self.layers.len()).rev() {
                let l = &self.layers[li];
                let input = &acts[li];
                let (gw, rest) = grads[2 * li..].split_at_mut(1);
                let gb = &mut rest[0];
                for o in 0..l.n_out {
                    let d = delta[o] * scale;
                    gb[o] += d;
                    let row = &mut gw[0][o * l.n_in..(o + 1) * l.n_in];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                if li > 0 {
                    let mut prev = vec![0.0; l.n_in];
                    for o in 0..l.n_out {
                        let w = &l.w[o * l.n_in..(o + 1) * l.n_in];
                        for (p, wv) in prev.iter_mut().zip(w) {
                            *p += delta[o] * wv;
                        }
                    }
                    for (p, a) in prev.iter_mut().zip(input) {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        grads
    }

    fn adam_step(&mut self, adam: &mut Adam, grads: &[Vec<f64>], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        adam.t += 1;
        let c1 = 1.0 - B1.powi(adam.t);
        let c2 = 1.0 - B2.powi(adam.t);
        for (k, g) in grads.iter().enumerate() {
            let layer = &mut self.layers[k / 2];
            let params = if k % 2 == 0 { &mut layer.w } else { &mut layer.b };
            let (m, v) = (&mut adam.m[k], &mut adam.v[k]);
            for j in 0..g.len() {
                m[j] = B1 * m[j] + (1.0 - B1) * g[j];
                v[j] = B2 * v[j] + (1.0 - B2) * g[j] * g[j];
                params[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + EPS);
            }
        }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.n_rows)
            .map(|i| {
                let out = self.forward(&self.scale_row(x.row(i))).pop().expect("output layer");
                match self.classes {
                    Some(_) => argmax(&out) as f64,
                    None => out[0] * self.y_scale + self.y_mean,
                }
            })
            .collect()
    }
}

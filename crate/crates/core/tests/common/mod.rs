//! Helpers shared by the integration test targets: finite-difference
//! gradients, brute-force metric and optimizer references, and small
//! synthetic datasets.

#![allow(dead_code)]

use std::path::PathBuf;

use fairstack::autodiff::{Graph, Matrix, Var};
use fairstack::data::{Dataset, DatasetMeta};
use fairstack::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries uniform in `[lo, hi)`.
pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Entries with `|x| in [gap, 2)` and random sign, away from activation kinks.
pub fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize, gap: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.random_range(gap..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn bits(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| f64::from(u8::from(rng.random_bool(0.5))))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)` over a whole tensor; 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` with respect to every entry of `inputs[which]`.
pub fn numeric_gradient(
    inputs: &[Matrix],
    which: usize,
    f: &dyn Fn(&[Matrix]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs[which].len());
    for j in 0..inputs[which].len() {
        let x0 = work[which].data()[j];
        work[which].data_mut()[j] = x0 + FD_STEP;
        let up = f(&work)?;
        work[which].data_mut()[j] = x0 - FD_STEP;
        let down = f(&work)?;
        work[which].data_mut()[j] = x0;
        out.push((up - down) / (2.0 * FD_STEP));
    }
    Ok(out)
}

/// Records `build` on trainable leaves, reduces its output to a scalar with
/// `uᵀ · out · v` for fixed random `u`, `v`, and compares the backward pass to
/// central differences. Returns the worst per-input relative error.
pub fn check_op(
    inputs: &[Matrix],
    seed: u64,
    build: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let (rows, cols) = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|m| g.constant(m.clone())).collect();
        let out = build(&mut g, &vars)?;
        g.value(out).shape()
    };
    let mut r = rng(seed ^ 0x5eed);
    let u = uniform(&mut r, 1, rows, -1.0, 1.0);
    let v = uniform(&mut r, cols, 1, -1.0, 1.0);
    let scalarize = |g: &mut Graph, out: Var| -> Result<Var> {
        let uv = g.constant(u.clone());
        let vv = g.constant(v.clone());
        let left = g.matmul(uv, out)?;
        g.matmul(left, vv)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|m| g.param(m.clone())).collect();
    let out = build(&mut g, &vars)?;
    let loss = scalarize(&mut g, out)?;
    g.backward(loss)?;

    let value = |xs: &[Matrix]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|m| g.constant(m.clone())).collect();
        let out = build(&mut g, &vars)?;
        let loss = scalarize(&mut g, out)?;
        Ok(g.scalar(loss))
    };

    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(inputs[i].rows(), inputs[i].cols()));
        let numeric = numeric_gradient(inputs, i, &value)?;
        worst = worst.max(relative_error(analytic.data(), &numeric));
    }
    Ok(worst)
}

/// Metric values computed by filtering and counting individual samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleMetrics {
    pub accuracy: Option<f64>,
    pub delta_dp: Option<f64>,
    pub delta_eo: Option<f64>,
    pub delta_eopp: Option<f64>,
}

/// `(ŷ, y, s)` triples.
pub fn oracle_metrics(samples: &[(u8, u8, u8)]) -> OracleMetrics {
    let rate = |keep: &dyn Fn(&(u8, u8, u8)) -> bool| -> Option<f64> {
        let selected: Vec<_> = samples.iter().filter(|t| keep(t)).collect();
        if selected.is_empty() {
            return None;
        }
        let positive = selected.iter().filter(|t| t.0 == 1).count();
        Some(positive as f64 / selected.len() as f64)
    };
    let accuracy = if samples.is_empty() {
        None
    } else {
        Some(samples.iter().filter(|t| t.0 == t.1).count() as f64 / samples.len() as f64)
    };
    let gap = |a: Option<f64>, b: Option<f64>| Some((a? - b?).abs());
    let pos = |s| rate(&move |t: &(u8, u8, u8)| t.2 == s);
    let given = |s, y| rate(&move |t: &(u8, u8, u8)| t.2 == s && t.1 == y);
    let tpr_gap = gap(given(0, 1), given(1, 1));
    let fpr_gap = gap(given(0, 0), given(1, 0));
    OracleMetrics {
        accuracy,
        delta_dp: gap(pos(0), pos(1)),
        delta_eo: match (tpr_gap, fpr_gap) {
            (Some(t), Some(f)) => Some(t + f),
            _ => None,
        },
        delta_eopp: tpr_gap,
    }
}

/// Textbook Adam on a flat parameter vector, bias-corrected.
pub struct ReferenceAdam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl ReferenceAdam {
    pub fn new(lr: f64, dim: usize) -> Self {
        ReferenceAdam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    pub fn step(&mut self, w: &mut [f64], g: &[f64]) {
        self.t += 1;
        for i in 0..w.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let m_hat = self.m[i] / (1.0 - self.beta1.powi(self.t));
            let v_hat = self.v[i] / (1.0 - self.beta2.powi(self.t));
            w[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

pub fn meta(name: &str) -> DatasetMeta {
    DatasetMeta {
        name: name.into(),
        raw_rows: 0,
        dropped_rows: 0,
        binary_columns: vec![],
        sensitive_in_features: false,
    }
}

/// All-continuous dataset from row-major features.
pub fn dataset(name: &str, x: Matrix, y: Vec<u8>, s: Vec<u8>) -> Dataset {
    let mut meta = meta(name);
    meta.raw_rows = x.rows();
    let names = (0..x.cols()).map(|c| format!("x{c}")).collect();
    let continuous = (0..x.cols()).collect();
    Dataset::new(x, y, s, names, continuous, meta).unwrap()
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; adequate for test data.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Five Gaussian features. `S = 1[x0 > 0]`; `Y = 1[x1 + 0.5·x2 > 0]`, so `Y`
/// carries no information about `x0` or `S`.
pub fn sensitive_column_toy(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut data = Vec::with_capacity(n * 5);
    let mut y = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..5).map(|_| gaussian(&mut r)).collect();
        s.push(u8::from(row[0] > 0.0));
        y.push(u8::from(row[1] + 0.5 * row[2] > 0.0));
        data.extend(row);
    }
    dataset("toy", Matrix::from_vec(n, 5, data).unwrap(), y, s)
}

pub fn majority_rate(v: &[u8]) -> f64 {
    let ones = v.iter().filter(|&&b| b == 1).count();
    ones.max(v.len() - ones) as f64 / v.len() as f64
}

pub fn accuracy_of(pred: &[u8], truth: &[u8]) -> f64 {
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

//! Linear leakage probes on frozen features.
//!
//! A probe is a softmax regression trained from zero weights with 200
//! full-batch gradient-descent steps at lr 0.01 on an 80/20 split stratified
//! by class. Features are centered and whitened with the training split's
//! covariance first. Whitening makes the fixed budget meaningful regardless
//! of feature scale and conditioning, and together with zero init and plain
//! gradient descent it makes the probe's predictions invariant to any
//! orthonormal rotation of the features.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{MaflError, Result};
use crate::numerics::matrix::softmax_into;
use crate::numerics::rng::{streams, RngStream};
use crate::numerics::{Matrix, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub train_fraction: f64,
    /// Eigenvalues below `floor · max eigenvalue` are raised to it before
    /// whitening.
    pub eigen_floor: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.01,
            train_fraction: 0.8,
            eigen_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub chance: f64,
    pub train_n: usize,
    pub test_n: usize,
}

/// Per-class 80/20 split, shuffled with the probe stream of `seed`.
fn stratified_split(labels: &[usize], k: usize, frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut by_class = vec![Vec::new(); k];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = RngStream::new(seed).derive(streams::PROBE);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, mut rows) in by_class.into_iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.len() < 2 {
            return Err(MaflError::Stratification(format!(
                "probe class {c} has {} sample; at least 2 are needed",
                rows.len()
            )));
        }
        rng.shuffle(&mut rows);
        let n_train = ((rows.len() as f64 * frac).round() as usize).clamp(1, rows.len() - 1);
        train.extend_from_slice(&rows[..n_train]);
        test.extend_from_slice(&rows[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Center-and-whiten map fitted on `rows` of `x`: `z = (x − μ) W`.
struct Whitener {
    mean: Vec<f64>,
    w: DMatrix<f64>,
}

impl Whitener {
    fn fit(x: &Matrix<f64>, rows: &[usize], floor: f64) -> Result<Self> {
        let d = x.cols();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for &r in rows {
            for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for &r in rows {
            let c: Vec<f64> = x.row(r).iter().zip(&mean).map(|(v, m)| v - m).collect();
            for i in 0..d {
                for j in i..d {
                    cov[(i, j)] += c[i] * c[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] /= n;
                cov[(j, i)] = cov[(i, j)];
            }
        }
        let eig = SymmetricEigen::new(cov);
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        if max <= 0.0 {
            return Err(MaflError::Degenerate("probe features have zero variance".into()));
        }
        let scale = eig
            .eigenvalues
            .map(|ev| 1.0 / ev.max(floor * max).sqrt());
        let v = &eig.eigenvectors;
        let w = v * DMatrix::from_diagonal(&scale) * v.transpose();
        Ok(Self { mean, w })
    }

    fn apply(&self, x: &Matrix<f64>, rows: &[usize]) -> DMatrix<f64> {
        let d = x.cols();
        let centered = DMatrix::from_fn(rows.len(), d, |i, j| x.get(rows[i], j) - self.mean[j]);
        centered * &self.w
    }
}

/// Trains a fresh softmax probe to predict `labels` (in `[0, k)`) from
/// `features` and returns held-out accuracy.
pub fn bias_leakage_probe<T: Real>(
    features: &Matrix<T>,
    labels: &[usize],
    k: usize,
    seed: u64,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    if labels.len() != features.rows() {
        return Err(MaflError::dim("probe labels", features.rows(), labels.len()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(MaflError::Label(format!("probe label {y} outside [0, {k})")));
    }
    let present = (0..k).filter(|c| labels.contains(c)).count();
    if present < 2 {
        return Err(MaflError::Degenerate(format!(
            "probe needs at least 2 classes present, found {present}"
        )));
    }
    features.ensure_finite("probe features")?;
    let x: Matrix<f64> = features.cast();
    let (train, test) = stratified_split(labels, k, cfg.train_fraction, seed)?;
    let whitener = Whitener::fit(&x, &train, cfg.eigen_floor)?;
    let xt = whitener.apply(&x, &train);
    let xq = whitener.apply(&x, &test);
    let d = x.cols();
    let n = train.len() as f64;

    let mut w = DMatrix::<f64>::zeros(d, k);
    let mut b = vec![0.0; k];
    let mut probs = vec![0.0; k];
    for _ in 0..cfg.epochs {
        let logits = &xt * &w;
        let mut g = DMatrix::<f64>::zeros(train.len(), k);
        for i in 0..train.len() {
            let row: Vec<f64> = (0..k).map(|c| logits[(i, c)] + b[c]).collect();
            softmax_into(&row, &mut probs);
            for c in 0..k {
                let y = (labels[train[i]] == c) as u8 as f64;
                g[(i, c)] = (probs[c] - y) / n;
            }
        }
        let gw = xt.transpose() * &g;
        w -= gw * cfg.lr;
        for (c, bc) in b.iter_mut().enumerate() {
            *bc -= cfg.lr * g.column(c).sum();
        }
    }

    let logits = &xq * &w;
    let correct = (0..test.len())
        .filter(|&i| {
            let mut best = 0;
            for c in 1..k {
                if logits[(i, c)] + b[c] > logits[(i, best)] + b[best] {
                    best = c;
                }
            }
            best == labels[test[i]]
        })
        .count();
    Ok(ProbeResult {
        accuracy: correct as f64 / test.len() as f64,
        chance: 1.0 / present as f64,
        train_n: train.len(),
        test_n: test.len(),
    })
}

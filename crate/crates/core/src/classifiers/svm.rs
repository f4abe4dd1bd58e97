//! One-vs-rest linear SVM trained with Pegasos-style projected subgradient
//! steps and iterate averaging.
//!
//! Each binary problem minimizes
//! `lambda/2 * ||w||^2 + 1/n * sum_i max(0, 1 - y_i (w . x_i + b))`
//! with `lambda = 1 / c_reg`. The bias is learned as the weight of a constant
//! feature and is regularized with the other weights. The hinge term is a
//! per-point average, so duplicating every training example leaves the
//! objective unchanged.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{Reader, Writer};
use crate::corpus::DialectLabel;
use crate::error::{Error, Result};
use crate::par;

use super::{check_dim, check_finite, check_labels, read_classes, write_classes, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    /// Trade-off between margin and training error; `lambda = 1 / c_reg`.
    pub c_reg: f64,
    pub max_epochs: usize,
    /// Examples per subgradient step. `None` uses the full training set,
    /// which makes training independent of the seed.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c_reg: 100.0,
            max_epochs: 1000,
            batch_size: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmReport {
    /// Summed one-vs-rest objective of the retained averaged iterate after
    /// each epoch. Non-increasing by construction.
    pub objective: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearSvmModel {
    classes: Vec<DialectLabel>,
    dim: usize,
    c_reg: f64,
    /// Rows `[w_1 .. w_k, bias]`.
    weights: Vec<Vec<f64>>,
}

fn affine(w: &[f64], x: &[f64]) -> f64 {
    let dim = x.len();
    w[dim] + w[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
}

fn binary_objective(w: &[f64], x: &[Vec<f64>], y: &[f64], lambda: f64) -> f64 {
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| (1.0 - yi * affine(w, xi)).max(0.0))
        .sum();
    0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>() + hinge / x.len() as f64
}

struct BinaryRun {
    weights: Vec<f64>,
    objective: Vec<f64>,
}

fn train_binary(x: &[Vec<f64>], y: &[f64], lambda: f64, config: &SvmConfig, class: usize) -> BinaryRun {
    let n = x.len();
    let dim = x[0].len();
    let batch = config.batch_size.unwrap_or(n).clamp(1, n);
    let steps_per_epoch = n.div_ceil(batch);
    let radius = 1.0 / lambda.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..n).collect();

    let mut w = vec![0.0; dim + 1];
    let mut avg = vec![0.0; dim + 1];
    let mut best = avg.clone();
    let mut best_obj = binary_objective(&best, x, y, lambda);
    let mut objective = Vec::with_capacity(config.max_epochs);
    let mut t = 0usize;
    for _ in 0..config.max_epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        for step in 0..steps_per_epoch {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let members = &order[step * batch..((step + 1) * batch).min(n)];
            let mut sub = vec![0.0; dim + 1];
            for &i in members {
                if y[i] * affine(&w, &x[i]) < 1.0 {
                    for (s, xv) in sub[..dim].iter_mut().zip(&x[i]) {
                        *s += y[i] * xv;
                    }
                    sub[dim] += y[i];
                }
            }
            let shrink = 1.0 - eta * lambda;
            let scale = eta / members.len() as f64;
            for (wj, sj) in w.iter_mut().zip(&sub) {
                *wj = shrink * *wj + scale * sj;
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                let r = radius / norm;
                w.iter_mut().for_each(|v| *v *= r);
            }
            let inv_t = 1.0 / t as f64;
            for (a, wj) in avg.iter_mut().zip(&w) {
                *a += (wj - *a) * inv_t;
            }
        }
        let obj = binary_objective(&avg, x, y, lambda);
        if obj < best_obj {
            best_obj = obj;
            best.copy_from_slice(&avg);
        }
        objective.push(best_obj);
    }
    BinaryRun {
        weights: best,
        objective,
    }
}

pub fn train_svm(
    features: &[Vec<f64>],
    labels: &[usize],
    classes: Vec<DialectLabel>,
    config: &SvmConfig,
) -> Result<(LinearSvmModel, SvmReport)> {
    if classes.len() < 2 {
        return Err(Error::InvalidArgument("SVM needs at least two classes".into()));
    }
    if !(config.c_reg > 0.0) || !config.c_reg.is_finite() {
        return Err(Error::InvalidArgument("c_reg must be a positive real".into()));
    }
    check_labels(labels, &classes, features.len())?;
    check_finite(features)?;
    let dim = features[0].len();
    for x in features {
        check_dim(dim, x.len())?;
    }
    let lambda = 1.0 / config.c_reg;
    let class_ids: Vec<usize> = (0..classes.len()).collect();
    let runs = par::map(&class_ids, |&c| {
        let y: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
        train_binary(features, &y, lambda, config, c)
    });
    let objective = (0..config.max_epochs)
        .map(|e| runs.iter().map(|r| r.objective[e]).sum())
        .collect();
    let weights = runs.into_iter().map(|r| r.weights).collect();
    Ok((
        LinearSvmModel {
            classes,
            dim,
            c_reg: config.c_reg,
            weights,
        },
        SvmReport { objective },
    ))
}

impl LinearSvmModel {
    pub fn from_weights(classes: Vec<DialectLabel>, weights: Vec<Vec<f64>>, c_reg: f64) -> Result<Self> {
        let dim = weights.first().map_or(0, |r| r.len().saturating_sub(1));
        if weights.len() != classes.len() || weights.iter().any(|r| r.len() != dim + 1) {
            return Err(Error::InvalidArgument("weight matrix must be C x (k+1)".into()));
        }
        Ok(LinearSvmModel {
            classes,
            dim,
            c_reg,
            weights,
        })
    }

    pub fn classes(&self) -> &[DialectLabel] {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// Affine per-class scores `w_c . x + b_c`.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok(self.weights.iter().map(|w| affine(w, x)).collect())
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        write_classes(w, &self.classes);
        w.len(self.dim).f64(self.c_reg);
        for row in &self.weights {
            w.f64s(row);
        }
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        let classes = read_classes(r)?;
        let _dim = r.read_len()?;
        let c_reg = r.f64()?;
        let weights = (0..classes.len()).map(|_| r.f64s()).collect::<Result<_>>()?;
        LinearSvmModel::from_weights(classes, weights, c_reg)
    }
}

pub fn svm_classify(m: &LinearSvmModel, id: &str, x: &[f64]) -> Result<Prediction> {
    Ok(Prediction::from_scores(id, &m.classes, m.scores(x)?))
}

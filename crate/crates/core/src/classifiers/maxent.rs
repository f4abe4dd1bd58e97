//! Maximum-entropy (multinomial logistic regression) classifier trained by
//! full-batch gradient descent with a backtracking line search.

use serde::{Deserialize, Serialize};

use crate::container::{Reader, Writer};
use crate::corpus::DialectLabel;
use crate::error::{Error, Result};
use crate::par;

use super::{check_dim, check_finite, check_labels, read_classes, write_classes, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaxEntConfig {
    /// L2 strength on the non-bias weights.
    pub l2: f64,
    pub max_iters: usize,
    /// Stop once the gradient max-norm falls to this value.
    pub tol: f64,
}

impl Default for MaxEntConfig {
    fn default() -> Self {
        MaxEntConfig {
            l2: 1e-3,
            max_iters: 500,
            tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxEntReport {
    pub iterations: usize,
    pub converged: bool,
    pub grad_max_norm: f64,
    /// Objective before the first step and after every accepted step.
    pub objective: Vec<f64>,
}

/// Weight rows `[w_1 .. w_k, bias]`, one per class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxEntModel {
    classes: Vec<DialectLabel>,
    dim: usize,
    l2: f64,
    weights: Vec<Vec<f64>>,
}

fn log_softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in z {
        *v -= lse;
    }
}

fn logits(weights: &[f64], dim: usize, n_classes: usize, x: &[f64]) -> Vec<f64> {
    (0..n_classes)
        .map(|c| {
            let row = &weights[c * (dim + 1)..(c + 1) * (dim + 1)];
            row[dim] + row[..dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect()
}

/// Mean negative log-likelihood plus `l2/2 * ||W||^2` (bias excluded) and its
/// gradient, for a flat row-major `C x (k+1)` weight vector.
pub fn objective_and_gradient(
    weights: &[f64],
    features: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    l2: f64,
) -> (f64, Vec<f64>) {
    let dim = features.first().map_or(0, Vec::len);
    let stride = dim + 1;
    let idx: Vec<usize> = (0..features.len()).collect();
    let (nll, mut grad) = par::chunked_sum(
        &idx,
        par::REDUCTION_CHUNK,
        (0.0, vec![0.0; weights.len()]),
        |_, chunk| {
            let mut nll = 0.0;
            let mut g = vec![0.0; weights.len()];
            for &i in chunk {
                let x = &features[i];
                let mut z = logits(weights, dim, n_classes, x);
                log_softmax_in_place(&mut z);
                nll -= z[labels[i]];
                for (c, lp) in z.iter().enumerate() {
                    let r = lp.exp() - if c == labels[i] { 1.0 } else { 0.0 };
                    let row = &mut g[c * stride..(c + 1) * stride];
                    for (gj, xj) in row[..dim].iter_mut().zip(x) {
                        *gj += r * xj;
                    }
                    row[dim] += r;
                }
            }
            (nll, g)
        },
        |(a, mut ga), (b, gb)| {
            for (x, y) in ga.iter_mut().zip(&gb) {
                *x += y;
            }
            (a + b, ga)
        },
    );
    let n = features.len().max(1) as f64;
    let mut obj = nll / n;
    for (j, g) in grad.iter_mut().enumerate() {
        *g /= n;
        if j % stride != dim {
            *g += l2 * weights[j];
            obj += 0.5 * l2 * weights[j] * weights[j];
        }
    }
    (obj, grad)
}

pub fn train_maxent(
    features: &[Vec<f64>],
    labels: &[usize],
    classes: Vec<DialectLabel>,
    config: &MaxEntConfig,
) -> Result<(MaxEntModel, MaxEntReport)> {
    check_labels(labels, &classes, features.len())?;
    check_finite(features)?;
    if !(config.l2 >= 0.0) {
        return Err(Error::InvalidArgument("l2 must be >= 0".into()));
    }
    let dim = features[0].len();
    for x in features {
        check_dim(dim, x.len())?;
    }
    let n_classes = classes.len();
    let mut w = vec![0.0; n_classes * (dim + 1)];
    let (mut f, mut g) = objective_and_gradient(&w, features, labels, n_classes, config.l2);
    let mut objective = vec![f];
    let mut step = 1.0;
    let mut iterations = 0;
    let max_norm = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    while iterations < config.max_iters && max_norm(&g) > config.tol {
        let g_sq: f64 = g.iter().map(|v| v * v).sum();
        let mut accepted = None;
        while step > 1e-20 {
            let cand: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - step * gi).collect();
            let (fc, gc) = objective_and_gradient(&cand, features, labels, n_classes, config.l2);
            if fc <= f - 1e-4 * step * g_sq && fc < f {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else { break };
        w = cand;
        f = fc;
        g = gc;
        objective.push(f);
        iterations += 1;
        step *= 2.0;
    }
    let grad_max_norm = max_norm(&g);
    let weights = w.chunks(dim + 1).map(<[f64]>::to_vec).collect();
    Ok((
        MaxEntModel {
            classes,
            dim,
            l2: config.l2,
            weights,
        },
        MaxEntReport {
            iterations,
            converged: grad_max_norm <= config.tol,
            grad_max_norm,
            objective,
        },
    ))
}

impl MaxEntModel {
    pub fn from_weights(classes: Vec<DialectLabel>, weights: Vec<Vec<f64>>, l2: f64) -> Result<Self> {
        let dim = weights.first().map_or(0, |r| r.len().saturating_sub(1));
        if weights.len() != classes.len() || weights.iter().any(|r| r.len() != dim + 1) {
            return Err(Error::InvalidArgument("weight matrix must be C x (k+1)".into()));
        }
        Ok(MaxEntModel {
            classes,
            dim,
            l2,
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

    pub fn log_posteriors(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let flat: Vec<f64> = self.weights.concat();
        let mut z = logits(&flat, self.dim, self.classes.len(), x);
        log_softmax_in_place(&mut z);
        Ok(z)
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        write_classes(w, &self.classes);
        w.len(self.dim).f64(self.l2);
        for row in &self.weights {
            w.f64s(row);
        }
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        let classes = read_classes(r)?;
        let _dim = r.read_len()?;
        let l2 = r.f64()?;
        let weights = (0..classes.len()).map(|_| r.f64s()).collect::<Result<_>>()?;
        MaxEntModel::from_weights(classes, weights, l2)
    }
}

/// Scores are log-posteriors.
pub fn maxent_classify(m: &MaxEntModel, id: &str, x: &[f64]) -> Result<Prediction> {
    Ok(Prediction::from_scores(id, &m.classes, m.log_posteriors(x)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(names: &[&str]) -> Vec<DialectLabel> {
        names.iter().map(|n| DialectLabel::new(n).unwrap()).collect()
    }

    #[test]
    fn zero_iterations_give_uniform_posterior() {
        let x = vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.0, 3.0]];
        let cfg = MaxEntConfig {
            max_iters: 0,
            ..Default::default()
        };
        let (m, report) = train_maxent(&x, &[0, 1, 2], labels(&["A", "B", "C"]), &cfg).unwrap();
        assert_eq!(report.iterations, 0);
        for p in m.log_posteriors(&[5.0, -7.0]).unwrap() {
            assert!((p.exp() - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(maxent_classify(&m, "u", &[1.0, 1.0]).unwrap().index, 0);
    }

    #[test]
    fn separable_data_fits_and_objective_decreases() {
        let x = vec![vec![-2.0, -1.0], vec![-1.5, -2.0], vec![-1.0, -1.2], vec![2.0, 1.0], vec![1.0, 1.5], vec![1.5, 2.5]];
        let y = [0, 0, 0, 1, 1, 1];
        let cfg = MaxEntConfig {
            l2: 1e-3,
            max_iters: 300,
            tol: 1e-6,
        };
        let (m, report) = train_maxent(&x, &y, labels(&["A", "B"]), &cfg).unwrap();
        for w in report.objective.windows(2) {
            assert!(w[1] < w[0]);
        }
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(maxent_classify(&m, "u", xi).unwrap().index, yi);
            let s: f64 = m.log_posteriors(xi).unwrap().iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, k, c) = (12, 4, 3);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<usize> = (0..n).map(|i| i % c).collect();
        let w: Vec<f64> = (0..c * (k + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g) = objective_and_gradient(&w, &x, &y, c, 0.1);
        let h = 1e-5;
        for j in 0..w.len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += h;
            wm[j] -= h;
            let fd = (objective_and_gradient(&wp, &x, &y, c, 0.1).0 - objective_and_gradient(&wm, &x, &y, c, 0.1).0) / (2.0 * h);
            let rel = (fd - g[j]).abs() / g[j].abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "coordinate {j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn rejects_non_finite_features() {
        let x = vec![vec![f64::NAN], vec![1.0]];
        assert!(matches!(
            train_maxent(&x, &[0, 1], labels(&["A", "B"]), &MaxEntConfig::default()),
            Err(Error::NonFinite(_))
        ));
    }
}

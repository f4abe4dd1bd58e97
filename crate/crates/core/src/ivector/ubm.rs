//! Diagonal-covariance GMM universal background model.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{read_matrix, write_matrix, Container, Reader, Writer};
use crate::corpus::Frames;
use crate::error::{Error, Result};
use crate::par;

/// Variance floor relative to the global per-dimension variance.
pub const VARIANCE_FLOOR_RATIO: f64 = 1e-3;

/// Frames per partial accumulator in the EM E-step.
const EM_CHUNK: usize = 1024;

/// Below this occupancy a component keeps its previous mean and variance.
const MIN_OCCUPANCY: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmUbm {
    weights: Vec<f64>,
    means: DMatrix<f64>,
    variances: DMatrix<f64>,
    floor: Vec<f64>,
    /// `ln w_k - 1/2 sum_f ln(2 pi var_kf)`
    log_norm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UbmReport {
    /// Mean per-frame log-likelihood of the initial model and after every
    /// EM iteration.
    pub log_likelihood: Vec<f64>,
}

impl GmmUbm {
    pub fn new(weights: Vec<f64>, means: DMatrix<f64>, variances: DMatrix<f64>, floor: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.nrows() != k || variances.shape() != means.shape() || floor.len() != means.ncols() {
            return Err(Error::InvalidArgument("inconsistent GMM parameter shapes".into()));
        }
        if variances.iter().any(|&v| !(v > 0.0)) || floor.iter().any(|&f| !(f >= 0.0)) {
            return Err(Error::InvalidArgument("GMM variances must be positive".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("GMM weights must form a simplex".into()));
        }
        let mut ubm = GmmUbm {
            weights,
            means,
            variances,
            floor,
            log_norm: Vec::new(),
        };
        ubm.refresh();
        Ok(ubm)
    }

    fn refresh(&mut self) {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        self.log_norm = (0..self.weights.len())
            .map(|k| {
                self.weights[k].ln()
                    - 0.5 * self.variances.row(k).iter().map(|v| ln2pi + v.ln()).sum::<f64>()
            })
            .collect();
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &DMatrix<f64> {
        &self.means
    }

    pub fn variances(&self) -> &DMatrix<f64> {
        &self.variances
    }

    pub fn floor(&self) -> &[f64] {
        &self.floor
    }

    /// Per-component joint log-densities `ln w_k + ln N(x; m_k, diag(v_k))`
    /// written into `out`; returns their log-sum-exp.
    pub(crate) fn log_joint(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for (k, o) in out.iter_mut().enumerate() {
            let mut q = 0.0;
            for (f, &xf) in x.iter().enumerate() {
                let d = xf - self.means[(k, f)];
                q += d * d / self.variances[(k, f)];
            }
            *o = self.log_norm[k] - 0.5 * q;
            max = max.max(*o);
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + out.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
    }

    /// Component posteriors for one frame, returned in `out`; the return
    /// value is the frame log-likelihood.
    pub fn posteriors(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let ll = self.log_joint(x, out);
        for o in out.iter_mut() {
            *o = (*o - ll).exp();
        }
        ll
    }

    /// Mean per-frame log-likelihood.
    pub fn mean_log_likelihood(&self, frames: &[&[f64]]) -> f64 {
        let total = par::chunked_sum(
            frames,
            EM_CHUNK,
            0.0,
            |_, chunk| {
                let mut buf = vec![0.0; self.components()];
                chunk.iter().map(|x| self.log_joint(x, &mut buf)).sum::<f64>()
            },
            |a, b| a + b,
        );
        total / frames.len() as f64
    }
}

struct EmAccumulator {
    log_likelihood: f64,
    occupancy: Vec<f64>,
    first: DMatrix<f64>,
    second: DMatrix<f64>,
}

impl EmAccumulator {
    fn zeros(k: usize, f: usize) -> Self {
        EmAccumulator {
            log_likelihood: 0.0,
            occupancy: vec![0.0; k],
            first: DMatrix::zeros(k, f),
            second: DMatrix::zeros(k, f),
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.log_likelihood += other.log_likelihood;
        for (a, b) in self.occupancy.iter_mut().zip(&other.occupancy) {
            *a += b;
        }
        self.first += other.first;
        self.second += other.second;
        self
    }
}

fn e_step(ubm: &GmmUbm, frames: &[&[f64]]) -> EmAccumulator {
    let (k, f) = (ubm.components(), ubm.dim());
    par::chunked_sum(
        frames,
        EM_CHUNK,
        EmAccumulator::zeros(k, f),
        |_, chunk| {
            let mut acc = EmAccumulator::zeros(k, f);
            let mut post = vec![0.0; k];
            for x in chunk {
                acc.log_likelihood += ubm.posteriors(x, &mut post);
                for (c, &g) in post.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    acc.occupancy[c] += g;
                    for (d, &xd) in x.iter().enumerate() {
                        acc.first[(c, d)] += g * xd;
                        acc.second[(c, d)] += g * xd * xd;
                    }
                }
            }
            acc
        },
        EmAccumulator::merge,
    )
}

fn m_step(ubm: &mut GmmUbm, acc: &EmAccumulator, n_frames: usize) {
    let total = n_frames as f64;
    for c in 0..ubm.components() {
        let n = acc.occupancy[c];
        ubm.weights[c] = n / total;
        if n < MIN_OCCUPANCY {
            continue;
        }
        for d in 0..ubm.dim() {
            let mean = acc.first[(c, d)] / n;
            let var = acc.second[(c, d)] / n - mean * mean;
            ubm.means[(c, d)] = mean;
            ubm.variances[(c, d)] = var.max(ubm.floor[d]);
        }
    }
    let s: f64 = ubm.weights.iter().sum();
    ubm.weights.iter_mut().for_each(|w| *w /= s);
    ubm.refresh();
}

fn global_moments(frames: &[&[f64]], f: usize) -> (Vec<f64>, Vec<f64>) {
    let n = frames.len() as f64;
    let mut mean = vec![0.0; f];
    for x in frames {
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; f];
    for x in frames {
        for d in 0..f {
            let e = x[d] - mean[d];
            var[d] += e * e;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance from the nearest chosen center.
fn kmeans_pp(frames: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers = vec![rng.random_range(0..frames.len())];
    let mut dist: Vec<f64> = par::map(frames, |x| sq(x, frames[centers[0]]));
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = frames.len() - 1;
            for (i, &d) in dist.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..frames.len())
        };
        centers.push(next);
        let c = frames[next];
        let updated = par::map(frames, |x| sq(x, c));
        for (d, u) in dist.iter_mut().zip(updated) {
            *d = d.min(u);
        }
    }
    centers
}

/// Trains a `K`-component diagonal GMM on every frame of `utterances`.
pub fn train_ubm(utterances: &[&Frames], k: usize, iters: usize, seed: u64) -> Result<(GmmUbm, UbmReport)> {
    if k < 1 {
        return Err(Error::InvalidArgument("UBM needs at least one component".into()));
    }
    let f = utterances.first().map_or(0, |u| u.width());
    if let Some(bad) = utterances.iter().find(|u| u.width() != f) {
        return Err(Error::DimensionMismatch {
            expected: f,
            found: bad.width(),
        });
    }
    let frames: Vec<&[f64]> = utterances.iter().flat_map(|u| u.rows()).collect();
    if frames.len() < 10 * k {
        return Err(Error::InvalidArgument(format!(
            "{} frames is too few for {k} components (need {})",
            frames.len(),
            10 * k
        )));
    }
    if frames.iter().flat_map(|x| x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("frames"));
    }
    let (_, global_var) = global_moments(&frames, f);
    let floor: Vec<f64> = global_var
        .iter()
        .map(|v| (VARIANCE_FLOOR_RATIO * v).max(f64::MIN_POSITIVE))
        .collect();
    let init_var: Vec<f64> = global_var.iter().zip(&floor).map(|(v, fl)| v.max(*fl)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = kmeans_pp(&frames, k, &mut rng);
    let means = DMatrix::from_fn(k, f, |c, d| frames[seeds[c]][d]);
    let variances = DMatrix::from_fn(k, f, |_, d| init_var[d]);
    let mut ubm = GmmUbm::new(vec![1.0 / k as f64; k], means, variances, floor)?;

    let n = frames.len() as f64;
    let mut log_likelihood = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        let acc = e_step(&ubm, &frames);
        log_likelihood.push(acc.log_likelihood / n);
        m_step(&mut ubm, &acc, frames.len());
    }
    log_likelihood.push(ubm.mean_log_likelihood(&frames));
    Ok((ubm, UbmReport { log_likelihood }))
}

impl GmmUbm {
    pub(crate) fn write(&self, w: &mut Writer) {
        w.len(self.components()).len(self.dim()).f64s(&self.weights).f64s(&self.floor);
        write_matrix(w, &self.means);
        write_matrix(w, &self.variances);
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        let k = r.read_len()?;
        let f = r.read_len()?;
        let weights = r.f64s()?;
        let floor = r.f64s()?;
        let means = read_matrix(r)?;
        let variances = read_matrix(r)?;
        if weights.len() != k || means.shape() != (k, f) {
            return Err(Error::Container("UBM shape mismatch".into()));
        }
        GmmUbm::new(weights, means, variances, floor).map_err(|e| Error::Container(e.to_string()))
    }
}

impl Container for GmmUbm {
    const MAGIC: &'static [u8; 4] = b"UBM1";

    fn write_payload(&self, w: &mut Writer) {
        self.write(w);
    }

    fn read_payload(r: &mut Reader<'_>) -> Result<Self> {
        GmmUbm::read(r)
    }
}

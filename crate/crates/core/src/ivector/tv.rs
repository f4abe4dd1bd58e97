//! Total-variability subspace training and i-vector extraction.
//!
//! An utterance supervector is modelled as `M = u + T v` with `v ~ N(0, I)`.
//! Given Baum-Welch statistics, the posterior of `v` is Gaussian with
//! precision `L = I + sum_k N_k T_k' S_k^-1 T_k` and mean
//! `L^-1 sum_k T_k' S_k^-1 F_k`; the i-vector is that mean.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::container::{read_matrix, write_matrix, Container, Reader, Writer};
use crate::error::{Error, Result};
use crate::par;

use super::stats::BaumWelchStats;
use super::ubm::GmmUbm;

pub const T_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct TvModel {
    ubm: GmmUbm,
    /// `(K*F) x R`, row `k*F + f`.
    t: DMatrix<f64>,
    /// Per component `T_k' S_k^-1`, `R x F`.
    weighted_t: Vec<DMatrix<f64>>,
    /// Per component `T_k' S_k^-1 T_k`, `R x R`.
    precision_blocks: Vec<DMatrix<f64>>,
}

impl PartialEq for TvModel {
    fn eq(&self, other: &Self) -> bool {
        self.ubm == other.ubm && self.t == other.t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvReport {
    /// EM objective `sum_u (b'L^-1 b - ln|L|) / 2` for the initial matrix
    /// and after every iteration.
    pub objective: Vec<f64>,
}

pub(crate) struct Posterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub objective: f64,
}

impl TvModel {
    pub fn new(ubm: GmmUbm, t: DMatrix<f64>) -> Result<Self> {
        let (k, f) = (ubm.components(), ubm.dim());
        if t.nrows() != k * f || t.ncols() == 0 {
            return Err(Error::DimensionMismatch {
                expected: k * f,
                found: t.nrows(),
            });
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("total variability matrix"));
        }
        let mut model = TvModel {
            ubm,
            t,
            weighted_t: Vec::new(),
            precision_blocks: Vec::new(),
        };
        model.refresh();
        Ok(model)
    }

    fn refresh(&mut self) {
        let (f, r) = (self.ubm.dim(), self.rank());
        let blocks = par::map_range(self.ubm.components(), |k| {
            let tk = self.t.rows(k * f, f);
            let wt = DMatrix::from_fn(r, f, |i, d| tk[(d, i)] / self.ubm.variances()[(k, d)]);
            let p = &wt * tk;
            (wt, p)
        });
        (self.weighted_t, self.precision_blocks) = blocks.into_iter().unzip();
    }

    pub fn rank(&self) -> usize {
        self.t.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn ubm(&self) -> &GmmUbm {
        &self.ubm
    }

    fn check_stats(&self, s: &BaumWelchStats) -> Result<()> {
        if s.components() != self.ubm.components() || s.dim() != self.ubm.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.ubm.components() * self.ubm.dim(),
                found: s.components() * s.dim(),
            });
        }
        s.check_finite()
    }

    pub(crate) fn posterior(&self, s: &BaumWelchStats) -> Result<Posterior> {
        self.check_stats(s)?;
        let r = self.rank();
        let mut precision = DMatrix::identity(r, r);
        let mut b = DVector::zeros(r);
        for k in 0..s.components() {
            let n = s.zeroth[k];
            if n != 0.0 {
                precision += &self.precision_blocks[k] * n;
            }
            b += &self.weighted_t[k] * s.first.row(k).transpose();
        }
        let chol = precision
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("i-vector posterior precision"))?;
        let mean = chol.solve(&b);
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let objective = 0.5 * (b.dot(&mean) - log_det);
        Ok(Posterior {
            mean,
            cov: chol.inverse(),
            objective,
        })
    }
}

/// MAP point estimate `(I + T' S^-1 N T)^-1 T' S^-1 F`.
pub fn extract_ivector(tv: &TvModel, s: &BaumWelchStats) -> Result<DVector<f64>> {
    Ok(tv.posterior(s)?.mean)
}

pub fn extract_all(tv: &TvModel, stats: &[BaumWelchStats]) -> Result<Vec<DVector<f64>>> {
    par::map(stats, |s| extract_ivector(tv, s)).into_iter().collect()
}

/// Seeded `N(0, 1) * 0.1` initialization.
pub fn init_tv_matrix(ubm: &GmmUbm, rank: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = ubm.components() * ubm.dim();
    DMatrix::from_fn(rows, rank, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        T_INIT_SCALE * z
    })
}

/// Maximum-likelihood EM for `T`. Components with zero total occupancy keep
/// their rows of `T`.
pub fn train_tv(
    ubm: &GmmUbm,
    stats: &[BaumWelchStats],
    rank: usize,
    iters: usize,
    seed: u64,
) -> Result<(TvModel, TvReport)> {
    let (k, f) = (ubm.components(), ubm.dim());
    if rank < 1 || rank > k * f {
        return Err(Error::InvalidArgument(format!("i-vector rank {rank} outside 1..={}", k * f)));
    }
    if stats.len() < rank {
        return Err(Error::InvalidArgument(format!(
            "{} utterances is fewer than the i-vector rank {rank}",
            stats.len()
        )));
    }
    let mut tv = TvModel::new(ubm.clone(), init_tv_matrix(ubm, rank, seed))?;
    let mut objective = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        let posts = par::map(stats, |s| tv.posterior(s)).into_iter().collect::<Result<Vec<_>>>()?;
        objective.push(posts.iter().map(|p| p.objective).sum());
        let second: Vec<DMatrix<f64>> = par::map(&posts, |p| &p.cov + &p.mean * p.mean.transpose());
        let blocks = par::map_range(k, |c| -> Result<Option<DMatrix<f64>>> {
            let occupancy: f64 = stats.iter().map(|s| s.zeroth[c]).sum();
            if occupancy == 0.0 {
                return Ok(None);
            }
            let mut a = DMatrix::zeros(rank, rank);
            let mut cross = DMatrix::zeros(f, rank);
            for ((s, p), e2) in stats.iter().zip(&posts).zip(&second) {
                if s.zeroth[c] != 0.0 {
                    a += e2 * s.zeroth[c];
                }
                cross += s.first.row(c).transpose() * p.mean.transpose();
            }
            let chol = a.cholesky().ok_or(Error::SingularBlock { block: c })?;
            // T_c A = C  =>  T_c' = A^-1 C'
            Ok(Some(chol.solve(&cross.transpose()).transpose()))
        });
        let mut t = tv.t.clone();
        for (c, block) in blocks.into_iter().enumerate() {
            if let Some(tc) = block? {
                t.rows_mut(c * f, f).copy_from(&tc);
            }
        }
        tv = TvModel::new(ubm.clone(), t)?;
    }
    let final_obj = par::map(stats, |s| tv.posterior(s).map(|p| p.objective))
        .into_iter()
        .sum::<Result<f64>>()?;
    objective.push(final_obj);
    Ok((tv, TvReport { objective }))
}

impl Container for TvModel {
    const MAGIC: &'static [u8; 4] = b"TVM1";

    fn write_payload(&self, w: &mut Writer) {
        w.len(self.rank());
        write_matrix(w, &self.t);
        self.ubm.write(w);
    }

    fn read_payload(r: &mut Reader<'_>) -> Result<Self> {
        let rank = r.read_len()?;
        let t = read_matrix(r)?;
        let ubm = GmmUbm::read(r)?;
        if t.ncols() != rank {
            return Err(Error::Container("TV rank mismatch".into()));
        }
        TvModel::new(ubm, t).map_err(|e| Error::Container(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::Normal;

    fn unit_ubm(k: usize, f: usize) -> GmmUbm {
        GmmUbm::new(vec![1.0 / k as f64; k], DMatrix::zeros(k, f), DMatrix::from_element(k, f, 1.0), vec![1e-3; f]).unwrap()
    }

    fn random_ubm(rng: &mut ChaCha8Rng, k: usize, f: usize) -> GmmUbm {
        let means = DMatrix::from_fn(k, f, |_, _| rng.random_range(-1.0..1.0));
        let vars = DMatrix::from_fn(k, f, |_, _| rng.random_range(0.3..2.0));
        GmmUbm::new(vec![1.0 / k as f64; k], means, vars, vec![1e-3; f]).unwrap()
    }

    fn random_stats(rng: &mut ChaCha8Rng, k: usize, f: usize) -> BaumWelchStats {
        BaumWelchStats {
            zeroth: (0..k).map(|_| rng.random_range(0.0..20.0)).collect(),
            first: DMatrix::from_fn(k, f, |_, _| rng.random_range(-5.0..5.0)),
        }
    }

    #[test]
    fn zero_stats_give_zero_ivector() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ubm = random_ubm(&mut rng, 3, 2);
        let tv = TvModel::new(ubm.clone(), init_tv_matrix(&ubm, 2, 5)).unwrap();
        let v = extract_ivector(&tv, &BaumWelchStats::zeros(3, 2)).unwrap();
        assert!(v.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn scalar_case_matches_closed_form() {
        let (t, n, sigma2, f) = (0.7, 12.0, 2.5, -3.2);
        let ubm = GmmUbm::new(vec![1.0], DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, sigma2), vec![1e-3]).unwrap();
        let tv = TvModel::new(ubm, DMatrix::from_element(1, 1, t)).unwrap();
        let s = BaumWelchStats {
            zeroth: vec![n],
            first: DMatrix::from_element(1, 1, f),
        };
        let v = extract_ivector(&tv, &s).unwrap()[0];
        let expected = (t * f / sigma2) / (1.0 + n * t * t / sigma2);
        assert!((v - expected).abs() < 1e-12);
    }

    /// Builds the full supervector-sized system and solves it with LU.
    fn dense_oracle(tv: &TvModel, s: &BaumWelchStats) -> DVector<f64> {
        let (k, f) = (s.components(), s.dim());
        let kf = k * f;
        let t = tv.matrix();
        let mut sigma_inv_n = DMatrix::zeros(kf, kf);
        let mut sigma_inv = DMatrix::zeros(kf, kf);
        let mut fvec = DVector::zeros(kf);
        for c in 0..k {
            for d in 0..f {
                let i = c * f + d;
                let var = tv.ubm().variances()[(c, d)];
                sigma_inv[(i, i)] = 1.0 / var;
                sigma_inv_n[(i, i)] = s.zeroth[c] / var;
                fvec[i] = s.first[(c, d)];
            }
        }
        let r = t.ncols();
        let lhs = DMatrix::identity(r, r) + t.transpose() * sigma_inv_n * t;
        let rhs = t.transpose() * sigma_inv * fvec;
        lhs.lu().solve(&rhs).unwrap()
    }

    #[test]
    fn doubled_stats_match_dense_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ubm = random_ubm(&mut rng, 3, 2);
        let tv = TvModel::new(ubm.clone(), DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let s = random_stats(&mut rng, 3, 2);
        let doubled = BaumWelchStats {
            zeroth: s.zeroth.iter().map(|n| 2.0 * n).collect(),
            first: &s.first * 2.0,
        };
        let v1 = extract_ivector(&tv, &s).unwrap();
        let v2 = extract_ivector(&tv, &doubled).unwrap();
        assert!((&v2 - &v1 * 2.0).norm() > 1e-6);
        assert!((&v2 - dense_oracle(&tv, &doubled)).amax() < 1e-8);
    }

    #[test]
    fn random_instances_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (k, f, r) = (rng.random_range(1..=4), rng.random_range(1..=3), rng.random_range(1..=3));
            let ubm = random_ubm(&mut rng, k, f);
            let tv = TvModel::new(ubm, DMatrix::from_fn(k * f, r, |_, _| rng.random_range(-1.0..1.0))).unwrap();
            let s = random_stats(&mut rng, k, f);
            assert!((extract_ivector(&tv, &s).unwrap() - dense_oracle(&tv, &s)).amax() < 1e-8);
        }
    }

    #[test]
    fn zero_stats_leave_matrix_unchanged() {
        let ubm = unit_ubm(2, 2);
        let stats = vec![BaumWelchStats::zeros(2, 2); 3];
        let (tv, report) = train_tv(&ubm, &stats, 2, 3, 9).unwrap();
        assert_eq!(tv.matrix(), &init_tv_matrix(&ubm, 2, 9));
        assert!(report.objective.iter().all(|o| *o == 0.0));
    }

    #[test]
    fn objective_is_monotone_on_random_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ubm = random_ubm(&mut rng, 4, 3);
        let stats: Vec<_> = (0..30).map(|_| random_stats(&mut rng, 4, 3)).collect();
        let (_, report) = train_tv(&ubm, &stats, 3, 10, 0).unwrap();
        for w in report.objective.windows(2) {
            assert!(w[1] >= w[0] - 1e-6 * w[0].abs().max(1.0), "{w:?}");
        }
    }

    #[test]
    fn recovers_rank_one_subspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (k, f) = (4, 3);
        let ubm = unit_ubm(k, f);
        let t0 = DVector::from_fn(k * f, |_, _| rng.random_range(-1.0..1.0));
        let normal = Normal::new(0.0, 1.0).unwrap();
        let occupancy = 400.0;
        let stats: Vec<BaumWelchStats> = (0..200)
            .map(|_| {
                let v: f64 = normal.sample(&mut rng);
                BaumWelchStats {
                    zeroth: vec![occupancy; k],
                    first: DMatrix::from_fn(k, f, |c, d| {
                        occupancy * t0[c * f + d] * v + occupancy.sqrt() * normal.sample(&mut rng)
                    }),
                }
            })
            .collect();
        let (tv, _) = train_tv(&ubm, &stats, 1, 20, 1).unwrap();
        let t = tv.matrix().column(0);
        let cos = t.dot(&t0).abs() / (t.norm() * t0.norm());
        let angle = cos.min(1.0).acos().to_degrees();
        assert!(angle < 5.0, "principal angle {angle}");
    }

    #[test]
    fn rank_preconditions() {
        let ubm = unit_ubm(2, 1);
        let stats = vec![BaumWelchStats::zeros(2, 1); 3];
        assert!(train_tv(&ubm, &stats, 3, 1, 0).is_err());
        assert!(train_tv(&ubm, &stats[..1], 2, 1, 0).is_err());
    }

    #[test]
    fn container_round_trip() {
        let ubm = unit_ubm(2, 2);
        let tv = TvModel::new(ubm.clone(), init_tv_matrix(&ubm, 3, 1)).unwrap();
        assert_eq!(TvModel::from_bytes(&tv.to_bytes()).unwrap(), tv);
    }
}

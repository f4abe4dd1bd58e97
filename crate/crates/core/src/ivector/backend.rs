//! LDA, WCCN, length normalization and cosine scoring for i-vectors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::classifiers::{check_labels, Prediction};
use crate::container::{read_matrix, write_matrix, Container, Reader, Writer};
use crate::corpus::DialectLabel;
use crate::error::{Error, Result};
use crate::vsm::fix_sign;

/// Within-class scatter shrinkage used by LDA.
pub const LDA_SHRINKAGE: f64 = 1e-4;

/// Shrinkage levels WCCN tries, in order, when the averaged within-class
/// covariance is not positive definite.
pub const WCCN_SHRINKAGE_STEPS: [f64; 5] = [0.0, 1e-4, 1e-3, 1e-2, 1e-1];

fn shrink(s: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let r = s.nrows();
    let target = s.trace() / r as f64;
    s * (1.0 - eps) + DMatrix::identity(r, r) * (eps * target)
}

fn class_means(x: &[DVector<f64>], labels: &[usize], n_classes: usize) -> Vec<DVector<f64>> {
    let dim = x[0].len();
    let mut sums = vec![DVector::zeros(dim); n_classes];
    let mut counts = vec![0usize; n_classes];
    for (v, &y) in x.iter().zip(labels) {
        sums[y] += v;
        counts[y] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| s / c.max(1) as f64)
        .collect()
}

fn to_dvectors(x: &[Vec<f64>]) -> Result<Vec<DVector<f64>>> {
    let dim = x.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::InvalidArgument("no vectors to fit".into()));
    }
    x.iter()
        .map(|v| {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|e| !e.is_finite()) {
                return Err(Error::NonFinite("i-vectors"));
            }
            Ok(DVector::from_column_slice(v))
        })
        .collect()
}

/// Projection onto the top generalized eigenvectors of `(S_b, S_w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaTransform {
    /// `R x p`; columns are `S_w`-orthonormal.
    pub projection: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

impl LdaTransform {
    pub fn output_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.projection.tr_mul(x)
    }
}

pub fn fit_lda(x: &[Vec<f64>], labels: &[usize], classes: &[DialectLabel], p: usize) -> Result<LdaTransform> {
    let c = classes.len();
    if p == 0 || p + 1 > c {
        return Err(Error::InvalidArgument(format!(
            "LDA dimension {p} must be in 1..={}",
            c.saturating_sub(1)
        )));
    }
    check_labels(labels, classes, x.len())?;
    let x = to_dvectors(x)?;
    let r = x[0].len();
    if p > r {
        return Err(Error::InvalidArgument(format!("LDA dimension {p} exceeds input dimension {r}")));
    }
    let n = x.len() as f64;
    let means = class_means(&x, labels, c);
    let global: DVector<f64> = x.iter().fold(DVector::zeros(r), |a, v| a + v) / n;
    let mut sw = DMatrix::zeros(r, r);
    for (v, &y) in x.iter().zip(labels) {
        let d = v - &means[y];
        sw += &d * d.transpose();
    }
    sw /= n;
    let mut sb = DMatrix::zeros(r, r);
    for (k, m) in means.iter().enumerate() {
        let nk = labels.iter().filter(|&&y| y == k).count() as f64;
        let d = m - &global;
        sb += (&d * d.transpose()) * (nk / n);
    }
    let chol = shrink(&sw, LDA_SHRINKAGE)
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("LDA within-class scatter"))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite("LDA within-class scatter"))?;
    let whitened = &l_inv * sb * l_inv.transpose();
    let sym = (&whitened + whitened.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let back = l_inv.transpose();
    let mut projection = DMatrix::zeros(r, p);
    let mut eigenvalues = Vec::with_capacity(p);
    for (j, &i) in order.iter().take(p).enumerate() {
        let mut col = &back * eig.eigenvectors.column(i);
        fix_sign(&mut col);
        projection.set_column(j, &col);
        eigenvalues.push(eig.eigenvalues[i]);
    }
    Ok(LdaTransform {
        projection,
        eigenvalues,
    })
}

/// `y = B' x` with `B B' = W^-1`, so transformed within-class covariance is `I`.
#[derive(Debug, Clone, PartialEq)]
pub struct WccnTransform {
    /// Lower-triangular Cholesky factor of the inverse within-class covariance.
    pub factor: DMatrix<f64>,
    /// Shrinkage that had to be applied (0 when none).
    pub shrinkage: f64,
}

impl WccnTransform {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.factor.tr_mul(x)
    }
}

/// `W = 1/C sum_c cov_c` with per-class covariances normalized by class size.
pub fn within_class_covariance(x: &[DVector<f64>], labels: &[usize], n_classes: usize) -> DMatrix<f64> {
    let r = x[0].len();
    let means = class_means(x, labels, n_classes);
    let mut covs = vec![DMatrix::zeros(r, r); n_classes];
    let mut counts = vec![0usize; n_classes];
    for (v, &y) in x.iter().zip(labels) {
        let d = v - &means[y];
        covs[y] += &d * d.transpose();
        counts[y] += 1;
    }
    let mut w = DMatrix::zeros(r, r);
    for (cov, n) in covs.into_iter().zip(counts) {
        w += cov / n.max(1) as f64;
    }
    w / n_classes as f64
}

pub fn fit_wccn(x: &[Vec<f64>], labels: &[usize], classes: &[DialectLabel]) -> Result<WccnTransform> {
    let counts = check_labels(labels, classes, x.len())?;
    if counts.iter().all(|&n| n < 2) {
        return Err(Error::InvalidArgument("WCCN needs a class with at least two examples".into()));
    }
    let x = to_dvectors(x)?;
    let w = within_class_covariance(&x, labels, classes.len());
    for eps in WCCN_SHRINKAGE_STEPS {
        let Some(chol) = shrink(&w, eps).cholesky() else { continue };
        let Some(factor) = chol.inverse().cholesky().map(|c| c.l()) else { continue };
        if factor.iter().all(|v| v.is_finite()) {
            return Ok(WccnTransform { factor, shrinkage: eps });
        }
    }
    Err(Error::NotPositiveDefinite("WCCN within-class covariance"))
}

pub fn length_normalize(v: &DVector<f64>) -> Result<DVector<f64>> {
    let norm = v.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::InvalidArgument("cannot length-normalize a zero vector".into()));
    }
    Ok(v / norm)
}

pub fn cosine_score(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("cosine score of a zero vector".into()));
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    /// LDA output dimension; `None` skips LDA.
    pub lda_dim: Option<usize>,
    pub wccn: bool,
    pub length_norm: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            lda_dim: None,
            wccn: true,
            length_norm: true,
        }
    }
}

/// Fitted i-vector backend: optional LDA, then WCCN, then length
/// normalization, plus length-normalized class-mean models for cosine scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Backend {
    pub classes: Vec<DialectLabel>,
    pub lda: Option<LdaTransform>,
    pub wccn: Option<WccnTransform>,
    pub length_norm: bool,
    pub class_models: Vec<DVector<f64>>,
    input_dim: usize,
}

impl Backend {
    pub fn fit(x: &[Vec<f64>], labels: &[usize], classes: Vec<DialectLabel>, config: &BackendConfig) -> Result<Self> {
        check_labels(labels, &classes, x.len())?;
        let input_dim = x.first().map_or(0, Vec::len);
        let lda = config.lda_dim.map(|p| fit_lda(x, labels, &classes, p)).transpose()?;
        let after_lda: Vec<Vec<f64>> = match &lda {
            Some(l) => to_dvectors(x)?.iter().map(|v| l.apply(v).as_slice().to_vec()).collect(),
            None => x.to_vec(),
        };
        let wccn = config.wccn.then(|| fit_wccn(&after_lda, labels, &classes)).transpose()?;
        let mut backend = Backend {
            classes,
            lda,
            wccn,
            length_norm: config.length_norm,
            class_models: Vec::new(),
            input_dim,
        };
        let transformed = x.iter().map(|v| backend.transform(v)).collect::<Result<Vec<_>>>()?;
        let means = class_means(&transformed, labels, backend.classes.len());
        backend.class_models = means.iter().map(length_normalize).collect::<Result<_>>()?;
        Ok(backend)
    }

    pub fn output_dim(&self) -> usize {
        self.lda.as_ref().map_or(self.input_dim, LdaTransform::output_dim)
    }

    pub fn transform(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        let mut v = DVector::from_column_slice(x);
        if let Some(l) = &self.lda {
            v = l.apply(&v);
        }
        if let Some(w) = &self.wccn {
            v = w.apply(&v);
        }
        if self.length_norm {
            v = length_normalize(&v)?;
        }
        Ok(v)
    }

    /// Cosine similarity of the transformed vector to every class model.
    pub fn cosine_scores(&self, id: &str, x: &[f64]) -> Result<Prediction> {
        let v = self.transform(x)?;
        let scores = self
            .class_models
            .iter()
            .map(|m| cosine_score(&v, m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Prediction::from_scores(id, &self.classes, scores))
    }
}

impl Container for Backend {
    const MAGIC: &'static [u8; 4] = b"BKE1";

    fn write_payload(&self, w: &mut Writer) {
        crate::classifiers::write_classes(w, &self.classes);
        w.len(self.input_dim).u8(self.length_norm as u8);
        match &self.lda {
            None => {
                w.u8(0);
            }
            Some(l) => {
                w.u8(1).f64s(&l.eigenvalues);
                write_matrix(w, &l.projection);
            }
        }
        match &self.wccn {
            None => {
                w.u8(0);
            }
            Some(t) => {
                w.u8(1).f64(t.shrinkage);
                write_matrix(w, &t.factor);
            }
        }
        w.len(self.class_models.len());
        for m in &self.class_models {
            w.f64s(m.as_slice());
        }
    }

    fn read_payload(r: &mut Reader<'_>) -> Result<Self> {
        let classes = crate::classifiers::read_classes(r)?;
        let input_dim = r.read_len()?;
        let length_norm = r.u8()? != 0;
        let lda = match r.u8()? {
            0 => None,
            _ => {
                let eigenvalues = r.f64s()?;
                let projection = read_matrix(r)?;
                Some(LdaTransform {
                    projection,
                    eigenvalues,
                })
            }
        };
        let wccn = match r.u8()? {
            0 => None,
            _ => {
                let shrinkage = r.f64()?;
                let factor = read_matrix(r)?;
                Some(WccnTransform { factor, shrinkage })
            }
        };
        let n = r.read_len()?;
        let class_models = (0..n)
            .map(|_| r.f64s().map(DVector::from_vec))
            .collect::<Result<Vec<_>>>()?;
        if class_models.len() != classes.len() {
            return Err(Error::Container("backend class count mismatch".into()));
        }
        Ok(Backend {
            classes,
            lda,
            wccn,
            length_norm,
            class_models,
            input_dim,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn labels(n: usize) -> Vec<DialectLabel> {
        (0..n).map(|i| DialectLabel::new(&format!("C{i}")).unwrap()).collect()
    }

    fn blobs(seed: u64, centers: &[Vec<f64>], per_class: usize, sd: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sd).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for _ in 0..per_class {
                x.push(ctr.iter().map(|m| m + noise.sample(&mut rng)).collect());
                y.push(c);
            }
        }
        (x, y)
    }

    #[test]
    fn lda_finds_separating_axis() {
        let (x, y) = blobs(1, &[vec![-3.0, 0.0], vec![3.0, 0.0]], 200, 1.0);
        let lda = fit_lda(&x, &y, &labels(2), 1).unwrap();
        let dir = lda.projection.column(0);
        let angle = (dir[0].abs() / dir.norm()).min(1.0).acos().to_degrees();
        assert!(angle < 3.0, "angle {angle}");
    }

    #[test]
    fn lda_rank_bound() {
        let (x, y) = blobs(2, &[vec![0.0; 6], vec![1.0; 6], vec![2.0; 6], vec![3.0; 6], vec![4.0; 6]], 10, 1.0);
        assert_eq!(fit_lda(&x, &y, &labels(5), 4).unwrap().output_dim(), 4);
        assert!(fit_lda(&x, &y, &labels(5), 5).is_err());
        let (x2, y2) = blobs(3, &[vec![0.0; 3], vec![1.0; 3], vec![2.0; 3]], 10, 1.0);
        assert!(fit_lda(&x2, &y2, &labels(3), 2).is_ok());
    }

    #[test]
    fn lda_improves_discrimination_ratio() {
        let (x, y) = blobs(4, &[vec![0.0, 0.0, 0.0], vec![2.0, 1.0, 0.0], vec![0.0, 3.0, 1.0]], 100, 1.0);
        let dv: Vec<DVector<f64>> = x.iter().map(|v| DVector::from_column_slice(v)).collect();
        let ratio = |vs: &[DVector<f64>]| {
            let n = vs.len() as f64;
            let r = vs[0].len();
            let g = vs.iter().fold(DVector::zeros(r), |a, v| a + v) / n;
            let m = class_means(vs, &y, 3);
            let between: f64 = (0..3).map(|c| (&m[c] - &g).norm_squared() * 100.0 / n).sum();
            let within: f64 = vs.iter().zip(&y).map(|(v, &c)| (v - &m[c]).norm_squared()).sum::<f64>() / n;
            between / within
        };
        let lda = fit_lda(&x, &y, &labels(3), 2).unwrap();
        let projected: Vec<DVector<f64>> = dv.iter().map(|v| lda.apply(v)).collect();
        assert!(ratio(&projected) >= ratio(&dv));
    }

    #[test]
    fn wccn_identity_and_diagonal() {
        // two points per class at +-1 along each axis: within-class covariance = I
        let x = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![5.0, 1.0], vec![5.0, -1.0]];
        let y = [0, 0, 1, 1];
        // class 0 var = diag(1, 0), class 1 var = diag(0, 1) -> average diag(0.5, 0.5)
        let w = fit_wccn(&x, &y, &labels(2)).unwrap();
        let expected = 2f64.sqrt();
        assert!((w.factor[(0, 0)] - expected).abs() < 1e-6 && (w.factor[(1, 1)] - expected).abs() < 1e-6);

        let x = [
            vec![2.0, 0.0], vec![-2.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0],
            vec![12.0, 0.0], vec![8.0, 0.0], vec![10.0, 1.0], vec![10.0, -1.0],
        ];
        let y = [0, 0, 0, 0, 1, 1, 1, 1];
        // per-class covariance diag(2, 0.5); scale by 2 to hit diag(4, 1)
        let x: Vec<Vec<f64>> = x.iter().map(|v| vec![v[0] * 2f64.sqrt(), v[1] * 2f64.sqrt()]).collect();
        let w = fit_wccn(&x, &y, &labels(2)).unwrap();
        assert_eq!(w.shrinkage, 0.0);
        assert!((w.factor[(0, 0)] - 0.5).abs() < 1e-6);
        assert!((w.factor[(1, 1)] - 1.0).abs() < 1e-6);
        assert!(w.factor[(1, 0)].abs() < 1e-6);
    }

    #[test]
    fn wccn_whitens_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mix = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let (x, y) = blobs(7, &[vec![0.0; 4], vec![3.0; 4], vec![-2.0, 0.0, 1.0, 5.0]], 50, 1.0);
        let x: Vec<Vec<f64>> = x.iter().map(|v| (&mix * DVector::from_column_slice(v)).as_slice().to_vec()).collect();
        let w = fit_wccn(&x, &y, &labels(3)).unwrap();
        let transformed: Vec<DVector<f64>> = x.iter().map(|v| w.apply(&DVector::from_column_slice(v))).collect();
        let cov = within_class_covariance(&transformed, &y, 3);
        assert!((cov - DMatrix::identity(4, 4)).amax() < 1e-6);
    }

    #[test]
    fn length_norm_and_cosine() {
        let v = length_normalize(&DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        let again = length_normalize(&v).unwrap();
        assert!((&again - &v).amax() < 1e-12);
        let scaled = length_normalize(&(DVector::from_vec(vec![3.0, 4.0]) * 17.5)).unwrap();
        assert!((&scaled - &v).amax() < 1e-12);
        assert!(length_normalize(&DVector::zeros(2)).is_err());

        let a = DVector::from_vec(vec![1.0, 2.0, -0.5]);
        assert!((cosine_score(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_score(&a, &(-&a)).unwrap() + 1.0).abs() < 1e-12);
        let b = DVector::from_vec(vec![2.0, -1.0, 0.0]);
        assert!(cosine_score(&a, &b).unwrap().abs() < 1e-12);
        assert!(cosine_score(&a, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn backend_scores_and_round_trip() {
        let centers: Vec<Vec<f64>> = (0..5).map(|c| (0..8).map(|d| if d == c { 4.0 } else { 0.0 }).collect()).collect();
        let (x, y) = blobs(8, &centers, 40, 0.7);
        let cfg = BackendConfig {
            lda_dim: Some(4),
            wccn: true,
            length_norm: true,
        };
        let b = Backend::fit(&x, &y, labels(5), &cfg).unwrap();
        assert_eq!(b.output_dim(), 4);
        let correct = x.iter().zip(&y).filter(|(v, &c)| b.cosine_scores("u", v).unwrap().index == c).count();
        assert!(correct as f64 / x.len() as f64 > 0.95);
        assert_eq!(Backend::from_bytes(&b.to_bytes()).unwrap(), b);
    }
}

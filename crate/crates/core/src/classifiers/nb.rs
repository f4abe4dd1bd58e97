//! Bernoulli naive Bayes over binary token-presence vectors.

use serde::Serialize;

use crate::container::{Reader, Writer};
use crate::corpus::DialectLabel;
use crate::error::{Error, Result};
use crate::vsm::SparseVector;

use super::{check_dim, check_labels, read_classes, write_classes, Prediction};

/// Class priors and Laplace-smoothed presence probabilities
/// `theta[c][i] = (n_{c,i} + 1) / (N_c + 2)`, all kept in log space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NaiveBayesModel {
    classes: Vec<DialectLabel>,
    dim: usize,
    log_priors: Vec<f64>,
    log_theta: Vec<Vec<f64>>,
    log_one_minus_theta: Vec<Vec<f64>>,
    /// `log prior + sum_i ln(1 - theta_i)`: the score of the all-absent vector.
    #[serde(skip)]
    base: Vec<f64>,
}

/// Any nonzero entry of a training vector counts as presence.
pub fn train_naive_bayes(
    vectors: &[SparseVector],
    labels: &[usize],
    classes: Vec<DialectLabel>,
) -> Result<NaiveBayesModel> {
    if classes.len() < 2 {
        return Err(Error::InvalidArgument("naive Bayes needs at least two classes".into()));
    }
    let counts = check_labels(labels, &classes, vectors.len())?;
    let dim = vectors[0].dim();
    let mut present = vec![vec![0usize; dim]; classes.len()];
    for (v, &y) in vectors.iter().zip(labels) {
        check_dim(dim, v.dim())?;
        for &(i, x) in v.entries() {
            if x != 0.0 {
                present[y][i] += 1;
            }
        }
    }
    let n = vectors.len() as f64;
    let log_priors = counts.iter().map(|&c| (c as f64 / n).ln()).collect();
    let mut log_theta = Vec::with_capacity(classes.len());
    let mut log_one_minus_theta = Vec::with_capacity(classes.len());
    for (c, row) in present.iter().enumerate() {
        let denom = counts[c] as f64 + 2.0;
        log_theta.push(row.iter().map(|&k| ((k as f64 + 1.0) / denom).ln()).collect());
        log_one_minus_theta.push(
            row.iter()
                .map(|&k| ((counts[c] - k) as f64 + 1.0) / denom)
                .map(f64::ln)
                .collect(),
        );
    }
    Ok(NaiveBayesModel::assemble(classes, dim, log_priors, log_theta, log_one_minus_theta))
}

impl NaiveBayesModel {
    fn assemble(
        classes: Vec<DialectLabel>,
        dim: usize,
        log_priors: Vec<f64>,
        log_theta: Vec<Vec<f64>>,
        log_one_minus_theta: Vec<Vec<f64>>,
    ) -> Self {
        let base = log_priors
            .iter()
            .zip(&log_one_minus_theta)
            .map(|(p, row)| p + row.iter().sum::<f64>())
            .collect();
        NaiveBayesModel {
            classes,
            dim,
            log_priors,
            log_theta,
            log_one_minus_theta,
            base,
        }
    }

    pub fn classes(&self) -> &[DialectLabel] {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_priors(&self) -> &[f64] {
        &self.log_priors
    }

    pub fn theta(&self, class: usize, token: usize) -> f64 {
        self.log_theta[class][token].exp()
    }

    /// `log p(y=c) + sum_i [x_i ln theta + (1 - x_i) ln(1 - theta)]` per class.
    pub fn log_joint(&self, vec: &SparseVector) -> Result<Vec<f64>> {
        check_dim(self.dim, vec.dim())?;
        Ok((0..self.classes.len())
            .map(|c| {
                let mut s = self.base[c];
                for &(i, x) in vec.entries() {
                    if x != 0.0 {
                        s += self.log_theta[c][i] - self.log_one_minus_theta[c][i];
                    }
                }
                s
            })
            .collect())
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        write_classes(w, &self.classes);
        w.len(self.dim).f64s(&self.log_priors);
        for row in self.log_theta.iter().chain(&self.log_one_minus_theta) {
            w.f64s(row);
        }
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        let classes = read_classes(r)?;
        let dim = r.read_len()?;
        let log_priors = r.f64s()?;
        let c = classes.len();
        let mut rows = (0..2 * c).map(|_| r.f64s()).collect::<Result<Vec<_>>>()?;
        if log_priors.len() != c || rows.iter().any(|row| row.len() != dim) {
            return Err(Error::Container("naive Bayes table shape mismatch".into()));
        }
        let log_one_minus_theta = rows.split_off(c);
        Ok(NaiveBayesModel::assemble(classes, dim, log_priors, rows, log_one_minus_theta))
    }
}

pub fn nb_classify(m: &NaiveBayesModel, id: &str, vec: &SparseVector) -> Result<Prediction> {
    Ok(Prediction::from_scores(id, &m.classes, m.log_joint(vec)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(names: &[&str]) -> Vec<DialectLabel> {
        names.iter().map(|n| DialectLabel::new(n).unwrap()).collect()
    }

    fn bin(v: &[u8]) -> SparseVector {
        SparseVector::from_dense(&v.iter().map(|&x| x as f64).collect::<Vec<_>>())
    }

    #[test]
    fn laplace_parameters() {
        let m = train_naive_bayes(&[bin(&[1, 0]), bin(&[0, 1])], &[0, 1], labels(&["A", "B"])).unwrap();
        assert!((m.theta(0, 0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.theta(1, 0) - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.log_priors()[0].exp() - 0.5).abs() < 1e-12);
        assert!((m.log_priors()[1].exp() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unequal_priors_decide_identical_likelihoods() {
        // token present in every doc of both classes -> identical theta
        let m = train_naive_bayes(
            &[bin(&[1]), bin(&[1]), bin(&[1])],
            &[0, 1, 1],
            labels(&["A", "B"]),
        )
        .unwrap();
        assert_eq!(nb_classify(&m, "x", &bin(&[1])).unwrap().index, 1);
        assert_eq!(nb_classify(&m, "x", &bin(&[0])).unwrap().index, 1);
    }

    /// Bayes rule with products of probabilities, no logs.
    fn brute_force_joint(docs: &[Vec<u8>], ys: &[usize], c: usize, x: &[u8]) -> Vec<f64> {
        (0..c)
            .map(|k| {
                let members: Vec<&Vec<u8>> = docs.iter().zip(ys).filter(|(_, &y)| y == k).map(|(d, _)| d).collect();
                let nc = members.len() as f64;
                let mut p = nc / docs.len() as f64;
                for i in 0..x.len() {
                    let theta = (members.iter().filter(|d| d[i] == 1).count() as f64 + 1.0) / (nc + 2.0);
                    p *= if x[i] == 1 { theta } else { 1.0 - theta };
                }
                p
            })
            .collect()
    }

    #[test]
    fn four_doc_corpus_matches_brute_force() {
        let docs = vec![vec![1, 1, 0], vec![1, 0, 0], vec![0, 1, 1], vec![0, 0, 1]];
        let ys = [0, 0, 1, 1];
        let vecs: Vec<SparseVector> = docs.iter().map(|d| bin(d)).collect();
        let m = train_naive_bayes(&vecs, &ys, labels(&["A", "B"])).unwrap();
        for x in [vec![0, 0, 0], vec![1, 0, 1], vec![0, 1, 0], vec![1, 1, 1]] {
            let want = brute_force_joint(&docs, &ys, 2, &x);
            let got = m.log_joint(&bin(&x)).unwrap();
            for k in 0..2 {
                assert!((got[k] - want[k].ln()).abs() < 1e-12);
            }
            let best = if want[1] > want[0] { 1 } else { 0 };
            assert_eq!(nb_classify(&m, "x", &bin(&x)).unwrap().index, best);
        }
        assert!(m.log_joint(&bin(&[1, 0])).is_err());
    }

    #[test]
    fn empty_class_rejected() {
        assert!(matches!(
            train_naive_bayes(&[bin(&[1])], &[0], labels(&["A", "B"])),
            Err(Error::EmptyClass(_))
        ));
    }
}

//! The four dialect classifiers and the shared prediction type.
//!
//! Every classifier produces one score per class, with classes ordered by
//! label string. The predicted class is the highest score; exact ties go to
//! the lowest class index.

pub mod lm;
pub mod maxent;
pub mod nb;
pub mod svm;

use serde::{Deserialize, Serialize};

use crate::container::{Container, Reader, Writer};
use crate::corpus::DialectLabel;
use crate::error::{Error, Result};

pub use lm::{classify_by_perplexity, perplexity, train_trigram_lm, LmSet, TrigramLm};
pub use maxent::{maxent_classify, train_maxent, MaxEntConfig, MaxEntModel};
pub use nb::{nb_classify, train_naive_bayes, NaiveBayesModel};
pub use svm::{svm_classify, train_svm, LinearSvmModel, SvmConfig};

/// Index of the maximum score; the first index wins exact ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub scores: Vec<f64>,
    pub index: usize,
    pub label: DialectLabel,
}

impl Prediction {
    pub fn from_scores(id: impl Into<String>, classes: &[DialectLabel], scores: Vec<f64>) -> Self {
        let index = argmax(&scores);
        Prediction {
            id: id.into(),
            label: classes[index].clone(),
            scores,
            index,
        }
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Checks labels against `n_classes` and that every class has an example.
pub fn check_labels(labels: &[usize], classes: &[DialectLabel], n_examples: usize) -> Result<Vec<usize>> {
    check_dim(n_examples, labels.len())?;
    let mut counts = vec![0usize; classes.len()];
    for &y in labels {
        if y >= classes.len() {
            return Err(Error::InvalidArgument(format!("label index {y} out of range")));
        }
        counts[y] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(classes[c].to_string()));
    }
    Ok(counts)
}

pub(crate) fn check_finite(features: &[Vec<f64>]) -> Result<()> {
    if features.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("features"));
    }
    Ok(())
}

pub fn write_classes(w: &mut Writer, classes: &[DialectLabel]) {
    w.strs(&classes.iter().map(DialectLabel::as_str).collect::<Vec<_>>());
}

pub fn read_classes(r: &mut Reader<'_>) -> Result<Vec<DialectLabel>> {
    r.strs()?.iter().map(|s| DialectLabel::new(s)).collect()
}

/// Any trained classifier, as stored in a `CLF1` container.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierModel {
    Lm(LmSet),
    NaiveBayes(NaiveBayesModel),
    MaxEnt(MaxEntModel),
    Svm(LinearSvmModel),
}

impl ClassifierModel {
    pub fn kind(&self) -> &'static str {
        match self {
            ClassifierModel::Lm(_) => "lm",
            ClassifierModel::NaiveBayes(_) => "nb",
            ClassifierModel::MaxEnt(_) => "maxent",
            ClassifierModel::Svm(_) => "svm",
        }
    }

    pub fn classes(&self) -> &[DialectLabel] {
        match self {
            ClassifierModel::Lm(m) => m.classes(),
            ClassifierModel::NaiveBayes(m) => m.classes(),
            ClassifierModel::MaxEnt(m) => m.classes(),
            ClassifierModel::Svm(m) => m.classes(),
        }
    }

    /// Parameters as JSON. Language models export only their summary.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            ClassifierModel::Lm(m) => serde_json::json!({
                "kind": "lm",
                "classes": m.classes(),
                "discount": m.discount(),
                "vocabulary_sizes": m.models().iter().map(TrigramLm::vocab_size).collect::<Vec<_>>(),
            }),
            ClassifierModel::NaiveBayes(m) => serde_json::json!({"kind": "nb", "model": m}),
            ClassifierModel::MaxEnt(m) => serde_json::json!({"kind": "maxent", "model": m}),
            ClassifierModel::Svm(m) => serde_json::json!({"kind": "svm", "model": m}),
        }
    }
}

impl Container for ClassifierModel {
    const MAGIC: &'static [u8; 4] = b"CLF1";

    fn write_payload(&self, w: &mut Writer) {
        match self {
            ClassifierModel::Lm(m) => {
                w.u8(0);
                m.write(w);
            }
            ClassifierModel::NaiveBayes(m) => {
                w.u8(1);
                m.write(w);
            }
            ClassifierModel::MaxEnt(m) => {
                w.u8(2);
                m.write(w);
            }
            ClassifierModel::Svm(m) => {
                w.u8(3);
                m.write(w);
            }
        }
    }

    fn read_payload(r: &mut Reader<'_>) -> Result<Self> {
        Ok(match r.u8()? {
            0 => ClassifierModel::Lm(LmSet::read(r)?),
            1 => ClassifierModel::NaiveBayes(NaiveBayesModel::read(r)?),
            2 => ClassifierModel::MaxEnt(MaxEntModel::read(r)?),
            3 => ClassifierModel::Svm(LinearSvmModel::read(r)?),
            t => return Err(Error::Container(format!("unknown classifier kind tag {t}"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_to_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
        assert_eq!(argmax(&[-1.0, -0.5]), 1);
    }
}

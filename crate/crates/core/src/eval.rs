//! Accuracy, macro precision/recall and confusion matrices.
//!
//! Precision or recall of a class with a zero denominator is reported as 0
//! and flagged in the per-class entry.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::classifiers::Prediction;
use crate::corpus::{Dataset, DialectLabel};
use crate::error::{Error, Result};

/// Rows are gold classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<DialectLabel>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: Vec<DialectLabel>) -> Self {
        let c = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; c]; c],
        }
    }

    pub fn from_counts(classes: Vec<DialectLabel>, counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.len() != classes.len() || counts.iter().any(|r| r.len() != classes.len()) {
            return Err(Error::DimensionMismatch {
                expected: classes.len(),
                found: counts.len(),
            });
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn add(&mut self, gold: usize, predicted: usize) {
        self.counts[gold][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: DialectLabel,
    pub precision: f64,
    pub recall: f64,
    pub support: u64,
    pub predicted: u64,
    /// True when no utterance was predicted as this class.
    pub precision_undefined: bool,
    /// True when no gold utterance has this class.
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub per_class: Vec<ClassMetrics>,
}

impl Metrics {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let c = cm.classes.len();
        let total = cm.total();
        let per_class: Vec<ClassMetrics> = (0..c)
            .map(|k| {
                let tp = cm.counts[k][k];
                let support: u64 = cm.counts[k].iter().sum();
                let predicted: u64 = cm.counts.iter().map(|r| r[k]).sum();
                let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
                ClassMetrics {
                    label: cm.classes[k].clone(),
                    precision: ratio(tp, predicted),
                    recall: ratio(tp, support),
                    support,
                    predicted,
                    precision_undefined: predicted == 0,
                    recall_undefined: support == 0,
                }
            })
            .collect();
        let mean = |f: fn(&ClassMetrics) -> f64| {
            if c == 0 {
                0.0
            } else {
                per_class.iter().map(f).sum::<f64>() / c as f64
            }
        };
        Metrics {
            accuracy: if total == 0 { 0.0 } else { cm.trace() as f64 / total as f64 },
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            per_class,
        }
    }
}

/// JSON report: `{accuracy, macro_precision, macro_recall, per_class, confusion}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub averaging: String,
    pub evaluated: u64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let m = Metrics::from_confusion(&confusion);
        EvalReport {
            accuracy: m.accuracy,
            macro_precision: m.macro_precision,
            macro_recall: m.macro_recall,
            averaging: "macro".into(),
            evaluated: confusion.total(),
            per_class: m.per_class,
            confusion,
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            accuracy: self.accuracy,
            macro_precision: self.macro_precision,
            macro_recall: self.macro_recall,
            per_class: self.per_class.clone(),
        }
    }
}

/// Scores predictions against gold labels. The class list is the sorted
/// union of gold labels in `gold` and predicted labels.
pub fn evaluate(predictions: &[Prediction], gold: &Dataset) -> Result<EvalReport> {
    let mut pairs = Vec::with_capacity(predictions.len());
    for p in predictions {
        let utt = gold.get(&p.id).ok_or_else(|| Error::UnknownId(p.id.clone()))?;
        let label = utt.label.clone().ok_or_else(|| Error::MissingLabel(p.id.clone()))?;
        pairs.push((label, p.label.clone()));
    }
    let mut classes: BTreeSet<DialectLabel> = gold.label_set().clone();
    classes.extend(pairs.iter().map(|(_, p)| p.clone()));
    let classes: Vec<DialectLabel> = classes.into_iter().collect();
    let index = |l: &DialectLabel| classes.binary_search(l).expect("label in class set");
    let mut cm = ConfusionMatrix::zeros(classes.clone());
    for (g, p) in &pairs {
        cm.add(index(g), index(p));
    }
    Ok(EvalReport::from_confusion(cm))
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .per_class
            .iter()
            .map(|c| c.label.as_str().len())
            .max()
            .unwrap_or(0)
            .max(7);
        writeln!(f, "{:<width$}  {:>7}  {:>7}  {:>7}", "class", "PRC", "RCL", "support")?;
        for c in &self.per_class {
            let flag = if c.precision_undefined || c.recall_undefined { " *" } else { "" };
            writeln!(
                f,
                "{:<width$}  {:>6.1}%  {:>6.1}%  {:>7}{flag}",
                c.label.as_str(),
                100.0 * c.precision,
                100.0 * c.recall,
                c.support
            )?;
        }
        writeln!(
            f,
            "{:<width$}  {:>6.1}%  {:>6.1}%  {:>7}",
            "macro",
            100.0 * self.macro_precision,
            100.0 * self.macro_recall,
            self.evaluated
        )?;
        writeln!(f, "ACC {:.1}% ({} utterances)", 100.0 * self.accuracy, self.evaluated)?;
        if self.per_class.iter().any(|c| c.precision_undefined || c.recall_undefined) {
            writeln!(f, "* zero denominator reported as 0")?;
        }
        writeln!(f)?;
        write!(f, "{:<width$}", "gold\\pred")?;
        for c in &self.confusion.classes {
            write!(f, "  {:>6}", c.as_str())?;
        }
        writeln!(f)?;
        for (label, row) in self.confusion.classes.iter().zip(&self.confusion.counts) {
            write!(f, "{:<width$}", label.as_str())?;
            for v in row {
                write!(f, "  {v:>6}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

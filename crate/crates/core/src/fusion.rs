//! Score normalization and weighted combination of several systems' scores.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifiers::Prediction;
use crate::corpus::DialectLabel;
use crate::error::{Error, Result};

/// Tolerance on the sum of fusion weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Per-utterance, per-class scores of one system. `scores` is row-major,
/// one row per id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub system: String,
    pub ids: Vec<String>,
    pub classes: Vec<DialectLabel>,
    pub scores: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new(system: impl Into<String>, ids: Vec<String>, classes: Vec<DialectLabel>, scores: Vec<Vec<f64>>) -> Result<Self> {
        let m = ScoreMatrix {
            system: system.into(),
            ids,
            classes,
            scores,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn from_predictions(system: impl Into<String>, classes: Vec<DialectLabel>, predictions: &[Prediction]) -> Result<Self> {
        ScoreMatrix::new(
            system,
            predictions.iter().map(|p| p.id.clone()).collect(),
            classes,
            predictions.iter().map(|p| p.scores.clone()).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidArgument("score matrix has no classes".into()));
        }
        if self.scores.len() != self.ids.len() {
            return Err(Error::DimensionMismatch {
                expected: self.ids.len(),
                found: self.scores.len(),
            });
        }
        for row in &self.scores {
            if row.len() != self.classes.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.classes.len(),
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("score matrix"));
            }
        }
        Ok(())
    }

    pub fn nrows(&self) -> usize {
        self.ids.len()
    }

    pub fn predictions(&self) -> Vec<Prediction> {
        self.ids
            .iter()
            .zip(&self.scores)
            .map(|(id, row)| Prediction::from_scores(id.clone(), &self.classes, row.clone()))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: ScoreMatrix = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> ScoreMatrix {
        ScoreMatrix {
            system: self.system.clone(),
            ids: self.ids.clone(),
            classes: self.classes.clone(),
            scores: self.scores.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Zscore,
    Minmax,
}

/// Whole-matrix normalization. A constant matrix maps to all zeros.
pub fn normalize_scores(m: &ScoreMatrix, method: Normalization) -> ScoreMatrix {
    let values: Vec<f64> = m.scores.iter().flatten().copied().collect();
    if values.is_empty() {
        return m.clone();
    }
    match method {
        Normalization::Zscore => {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd == 0.0 || !sd.is_finite() {
                m.map(|_| 0.0)
            } else {
                m.map(|v| (v - mean) / sd)
            }
        }
        Normalization::Minmax => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi == lo {
                m.map(|_| 0.0)
            } else {
                m.map(|v| (v - lo) / (hi - lo))
            }
        }
    }
}

pub fn equal_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Normalizes each system, then forms the weighted elementwise sum.
pub fn fuse(systems: &[ScoreMatrix], weights: &[f64], method: Normalization) -> Result<ScoreMatrix> {
    let Some(first) = systems.first() else {
        return Err(Error::InvalidArgument("fusion needs at least one system".into()));
    };
    if weights.len() != systems.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights given for {} systems",
            weights.len(),
            systems.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument("fusion weights must be finite and nonnegative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::InvalidArgument(format!("fusion weights sum to {sum}, not 1")));
    }
    for s in systems {
        s.validate()?;
        if s.classes != first.classes {
            return Err(Error::HeaderMismatch(format!(
                "class headers of '{}' and '{}' differ",
                first.system, s.system
            )));
        }
        if s.ids != first.ids {
            return Err(Error::HeaderMismatch(format!(
                "utterance ids of '{}' and '{}' differ",
                first.system, s.system
            )));
        }
    }
    let mut scores = vec![vec![0.0; first.classes.len()]; first.nrows()];
    for (s, &w) in systems.iter().zip(weights) {
        let norm = normalize_scores(s, method);
        for (out, row) in scores.iter_mut().zip(&norm.scores) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += w * v;
            }
        }
    }
    let system = systems.iter().map(|s| s.system.as_str()).collect::<Vec<_>>().join("+");
    Ok(ScoreMatrix {
        system,
        ids: first.ids.clone(),
        classes: first.classes.clone(),
        scores,
    })
}

/// Fraction of rows whose argmax equals the given gold class index.
pub fn accuracy(m: &ScoreMatrix, gold: &[usize]) -> f64 {
    let correct = m
        .predictions()
        .iter()
        .zip(gold)
        .filter(|(p, &g)| p.index == g)
        .count();
    correct as f64 / gold.len().max(1) as f64
}

/// Two systems over `n` utterances (a multiple of 4) and `c >= 2` classes,
/// each 75% accurate, whose errors fall on disjoint utterances. A system is
/// confidently right on its correct rows and narrowly wrong on its error
/// rows. Returns the two systems and the gold class indices.
pub fn complementary_systems(n: usize, c: usize) -> Result<(ScoreMatrix, ScoreMatrix, Vec<usize>)> {
    if n == 0 || !n.is_multiple_of(4) || c < 2 {
        return Err(Error::InvalidArgument("need n a positive multiple of 4 and at least 2 classes".into()));
    }
    let classes: Vec<DialectLabel> = (0..c).map(|i| DialectLabel::new(&format!("D{i}"))).collect::<Result<_>>()?;
    let ids: Vec<String> = (0..n).map(|i| format!("utt{i:05}")).collect();
    let gold: Vec<usize> = (0..n).map(|i| i % c).collect();
    let row = |g: usize, wrong: bool| -> Vec<f64> {
        let mut r = vec![0.0; c];
        if wrong {
            r[(g + 1) % c] = 1.0;
            r[g] = 0.9;
        } else {
            r[g] = 3.0;
        }
        r
    };
    let quarter = n / 4;
    let a_rows = (0..n).map(|i| row(gold[i], i < quarter)).collect();
    let b_rows = (0..n).map(|i| row(gold[i], (quarter..2 * quarter).contains(&i))).collect();
    let a = ScoreMatrix::new("A", ids.clone(), classes.clone(), a_rows)?;
    let b = ScoreMatrix::new("B", ids, classes, b_rows)?;
    Ok((a, b, gold))
}

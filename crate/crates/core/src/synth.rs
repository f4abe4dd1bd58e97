//! Seeded synthetic dialect corpora for tests, benchmarks and demos.
//!
//! Each class draws its word and phone unigram distributions from a
//! symmetric Dirichlet, mixed with a shared background distribution so that
//! classes overlap. Optional acoustic frames come from a shared set of
//! Gaussian components with class-specific mixture weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, DialectLabel, Frames, Utterance};
use crate::error::{Error, Result};

const DIALECT_CODES: [&str; 5] = ["EGY", "GLF", "LAV", "MSA", "NOR"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub dim: usize,
    pub components: usize,
    pub frames_per_utterance: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub word_vocab: usize,
    pub phone_vocab: usize,
    pub words_per_utterance: (usize, usize),
    pub phones_per_utterance: (usize, usize),
    /// Dirichlet concentration of each class distribution.
    pub concentration: f64,
    /// Weight of the shared background distribution in every class.
    pub background: f64,
    pub frames: Option<FrameSpec>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 5,
            train_per_class: 200,
            test_per_class: 50,
            word_vocab: 400,
            phone_vocab: 36,
            words_per_utterance: (20, 40),
            phones_per_utterance: (40, 80),
            concentration: 0.5,
            background: 0.25,
            frames: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn class_label(i: usize, n: usize) -> DialectLabel {
    let name = if n <= DIALECT_CODES.len() {
        DIALECT_CODES[i].to_string()
    } else {
        format!("D{i:02}")
    };
    DialectLabel::new(&name).expect("non-empty label")
}

struct Categorical {
    cdf: Vec<f64>,
}

impl Categorical {
    fn new(p: &[f64]) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = p
            .iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect();
        let total = acc;
        cdf.iter_mut().for_each(|c| *c /= total);
        Categorical { cdf }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1)
    }
}

fn dirichlet(rng: &mut impl Rng, n: usize, alpha: f64) -> Result<Vec<f64>> {
    // symmetric Dirichlet via normalized Gamma(alpha, 1) draws
    let g = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut v: Vec<f64> = (0..n).map(|_| g.sample(rng).max(f64::MIN_POSITIVE)).collect();
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    Ok(v)
}

fn mixed(rng: &mut impl Rng, background: &[f64], alpha: f64, weight: f64) -> Result<Categorical> {
    let own = dirichlet(rng, background.len(), alpha)?;
    let p: Vec<f64> = own
        .iter()
        .zip(background)
        .map(|(o, b)| (1.0 - weight) * o + weight * b)
        .collect();
    Ok(Categorical::new(&p))
}

fn validate(c: &SynthConfig) -> Result<()> {
    let mut problems = Vec::new();
    if c.classes < 2 {
        problems.push("classes must be at least 2");
    }
    if c.train_per_class == 0 {
        problems.push("train_per_class must be positive");
    }
    if c.word_vocab < 2 || c.phone_vocab < 2 {
        problems.push("vocabularies need at least 2 tokens");
    }
    for (lo, hi) in [c.words_per_utterance, c.phones_per_utterance] {
        if lo == 0 || hi < lo {
            problems.push("utterance lengths must satisfy 1 <= min <= max");
        }
    }
    if !(c.concentration > 0.0 && c.concentration.is_finite()) {
        problems.push("concentration must be positive");
    }
    if !(0.0..1.0).contains(&c.background) {
        problems.push("background must be in [0, 1)");
    }
    if let Some(f) = c.frames {
        if f.dim == 0 || f.components == 0 || f.frames_per_utterance == 0 {
            problems.push("frame spec fields must be positive");
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(problems.join("; ")))
    }
}

struct ClassModel {
    words: Categorical,
    phones: Categorical,
    components: Option<Categorical>,
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    validate(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let word_bg = dirichlet(&mut rng, config.word_vocab, 1.0)?;
    let phone_bg = dirichlet(&mut rng, config.phone_vocab, 1.0)?;
    let means: Vec<Vec<f64>> = match config.frames {
        Some(f) => (0..f.components)
            .map(|_| (0..f.dim).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect(),
        None => Vec::new(),
    };
    let models = (0..config.classes)
        .map(|_| {
            Ok(ClassModel {
                words: mixed(&mut rng, &word_bg, config.concentration, config.background)?,
                phones: mixed(&mut rng, &phone_bg, config.concentration, config.background)?,
                components: match config.frames {
                    Some(f) => Some(Categorical::new(&dirichlet(&mut rng, f.components, 0.5)?)),
                    None => None,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let mut make = |split: &str, per_class: usize| -> Result<Dataset> {
        let mut utts = Vec::with_capacity(per_class * config.classes);
        for i in 0..per_class {
            for (c, m) in models.iter().enumerate() {
                let nw = rng.random_range(config.words_per_utterance.0..=config.words_per_utterance.1);
                let np = rng.random_range(config.phones_per_utterance.0..=config.phones_per_utterance.1);
                let words = (0..nw).map(|_| format!("w{:04}", m.words.sample(&mut rng))).collect();
                let phones = (0..np).map(|_| format!("p{:02}", m.phones.sample(&mut rng))).collect();
                let frames = match (config.frames, &m.components) {
                    (Some(f), Some(comp)) => {
                        let mut data = Vec::with_capacity(f.frames_per_utterance * f.dim);
                        for _ in 0..f.frames_per_utterance {
                            let k = comp.sample(&mut rng);
                            data.extend(means[k].iter().map(|mu| mu + noise.sample(&mut rng)));
                        }
                        Some(Frames::new(f.dim, data)?)
                    }
                    _ => None,
                };
                utts.push(Utterance {
                    id: format!("{split}_{}_{i:04}", class_label(c, config.classes)),
                    label: Some(class_label(c, config.classes)),
                    words,
                    phones,
                    frames,
                });
            }
        }
        Dataset::new(utts)
    };
    let train = make("train", config.train_per_class)?;
    let test = make("test", config.test_per_class)?;
    Ok(SynthCorpus { train, test })
}

/// Two classes whose word and phone inventories do not overlap.
pub fn disjoint_vocabulary(per_class_train: usize, per_class_test: usize, seed: u64) -> Result<SynthCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = [DialectLabel::new("IN")?, DialectLabel::new("OUT")?];
    let mut make = |split: &str, n: usize| -> Result<Dataset> {
        let mut utts = Vec::new();
        for i in 0..n {
            for (c, label) in labels.iter().enumerate() {
                let nw = rng.random_range(5..=15);
                let np = rng.random_range(10..=30);
                let words = (0..nw).map(|_| format!("{}w{}", c, rng.random_range(0..50))).collect();
                let phones = (0..np).map(|_| format!("{}p{}", c, rng.random_range(0..20))).collect();
                utts.push(Utterance {
                    id: format!("{split}_{label}_{i:04}"),
                    label: Some(label.clone()),
                    words,
                    phones,
                    frames: None,
                });
            }
        }
        Dataset::new(utts)
    };
    let train = make("train", per_class_train)?;
    let test = make("test", per_class_test)?;
    Ok(SynthCorpus { train, test })
}

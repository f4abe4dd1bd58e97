//! One function per subcommand. Each writes its artifacts into the output
//! directory and records them in the run manifest.

use std::path::{Path, PathBuf};

use dialect_id::classifiers::{
    classify_by_perplexity, maxent_classify, nb_classify, svm_classify, train_maxent, train_naive_bayes, train_svm,
    ClassifierModel, LmSet, Prediction,
};
use dialect_id::container::Container;
use dialect_id::corpus::{dataset_stats, load_dataset, save_manifest, Dataset, DialectLabel, Frames, Utterance};
use dialect_id::eval::evaluate;
use dialect_id::fusion::{equal_weights, fuse, Normalization, ScoreMatrix};
use dialect_id::ivector::{
    accumulate_all, extract_all, read_ivectors, train_tv, train_ubm, write_ivectors, Backend, GmmUbm, IVector,
    TvModel,
};
use dialect_id::synth::{self, FrameSpec, SynthConfig};
use dialect_id::vsm::{FeatureField, FeaturePipeline};
use serde_json::json;

use crate::config::{ClassifierKind, ExperimentConfig, Scaling};
use crate::error::CliError;
use crate::run::{write_json, Run};

pub const VSM_FILE: &str = "vsm.bin";
pub const MODEL_FILE: &str = "model.clf";
pub const UBM_FILE: &str = "ubm.bin";
pub const TV_FILE: &str = "tv.bin";
pub const BACKEND_FILE: &str = "backend.bin";

type Res<T = ()> = Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn manifest(self, cfg: &ExperimentConfig) -> Res<&Path> {
        let path = match self {
            Split::Train => &cfg.train_manifest,
            Split::Test => &cfg.test_manifest,
        };
        path.as_deref()
            .ok_or_else(|| CliError::config(vec![format!("{}_manifest is required", self.name())]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum System {
    /// The configured text classifier over the VSM features.
    Text,
    /// Cosine scoring of i-vectors through the fitted backend.
    Ivector,
}

fn load_split(cfg: &ExperimentConfig, split: Split) -> Res<Dataset> {
    Ok(load_dataset(split.manifest(cfg)?, cfg.frame_dir.as_deref())?)
}

fn require(path: PathBuf, producer: &str) -> Res<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::missing_artifact(&path, producer))
    }
}

fn frames_of(d: &Dataset) -> Res<Vec<&Frames>> {
    d.utterances()
        .iter()
        .map(|u| {
            u.frames.as_ref().ok_or_else(|| {
                dialect_id::Error::InvalidUtterance {
                    id: u.id.clone(),
                    message: "no acoustic frames".into(),
                }
                .into()
            })
        })
        .collect()
}

/// Token stream the language model reads for the configured field.
fn lm_tokens(u: &Utterance, field: FeatureField) -> Vec<String> {
    match field {
        FeatureField::Words => u.words.clone(),
        FeatureField::Senones => u.phones.clone(),
    }
}

fn field_name(field: FeatureField) -> &'static str {
    match field {
        FeatureField::Words => "words",
        FeatureField::Senones => "senones",
    }
}

pub fn stats(manifests: &[(String, PathBuf)], frame_dir: Option<&Path>, run: &mut Run) -> Res {
    let mut report = serde_json::Map::new();
    for (name, path) in manifests {
        let d = run.time(&format!("load_{name}"), || load_dataset(path, frame_dir))?;
        let s = dataset_stats(&d);
        println!("{name} ({})", path.display());
        println!("{s}");
        report.insert(name.clone(), serde_json::to_value(&s).map_err(CliError::internal)?);
    }
    let out = run.path("stats.json");
    write_json(&out, &report)?;
    run.artifact(&out)
}

pub fn build_vsm(cfg: &ExperimentConfig, run: &mut Run) -> Res {
    let train = run.time("load_train", || load_split(cfg, Split::Train))?;
    let f = &cfg.features;
    let pipeline = run.time("fit", || {
        FeaturePipeline::fit(
            &train,
            f.field,
            f.senone_max_n,
            f.min_count,
            f.scaling == Scaling::Tfidf,
            f.svd_k,
            cfg.seed(),
        )
    })?;
    let out = run.path(VSM_FILE);
    pipeline.save(&out)?;
    run.artifact(&out)?;
    let summary = json!({
        "field": field_name(f.field),
        "vocabulary_size": pipeline.vocabulary.len(),
        "scaling": pipeline.scaling,
        "output_dim": pipeline.output_dim(),
        "singular_values": pipeline.svd.as_ref().map(|p| p.singular_values().to_vec()),
        "tokens": pipeline.vocabulary.tokens(),
    });
    let json_out = run.path("vsm.json");
    write_json(&json_out, &summary)?;
    run.artifact(&json_out)?;
    println!(
        "vocabulary {} tokens, output dimension {}",
        pipeline.vocabulary.len(),
        pipeline.output_dim()
    );
    Ok(())
}

fn load_pipeline(run: &Run) -> Res<FeaturePipeline> {
    Ok(FeaturePipeline::load(&require(run.path(VSM_FILE), "build-vsm")?)?)
}

pub fn train(cfg: &ExperimentConfig, run: &mut Run) -> Res {
    let train = run.time("load_train", || load_split(cfg, Split::Train))?;
    let classes = train.classes();
    let labels = train.label_indices(&classes)?;
    let field = cfg.features.field;
    let (model, report) = match cfg.classifier.kind {
        ClassifierKind::Lm => {
            let seqs: Vec<Vec<String>> = train.utterances().iter().map(|u| lm_tokens(u, field)).collect();
            let lms = run.time("train", || LmSet::train(classes, &seqs, &labels, cfg.classifier.lm.discount))?;
            (ClassifierModel::Lm(lms), json!({ "discount": cfg.classifier.lm.discount }))
        }
        ClassifierKind::Nb => {
            let pipeline = load_pipeline(run)?;
            let x = run.time("features", || pipeline.sparse_all(&train))?;
            let m = run.time("train", || train_naive_bayes(&x, &labels, classes))?;
            (ClassifierModel::NaiveBayes(m), json!({}))
        }
        ClassifierKind::Maxent => {
            let pipeline = load_pipeline(run)?;
            let x = run.time("features", || pipeline.dense_all(&train))?;
            let (m, r) = run.time("train", || train_maxent(&x, &labels, classes, &cfg.classifier.maxent))?;
            (ClassifierModel::MaxEnt(m), serde_json::to_value(r).map_err(CliError::internal)?)
        }
        ClassifierKind::Svm => {
            let pipeline = load_pipeline(run)?;
            let x = run.time("features", || pipeline.dense_all(&train))?;
            let (m, r) = run.time("train", || train_svm(&x, &labels, classes, &cfg.svm_config()))?;
            (ClassifierModel::Svm(m), serde_json::to_value(r).map_err(CliError::internal)?)
        }
    };
    let out = run.path(MODEL_FILE);
    model.save(&out)?;
    run.artifact(&out)?;
    let report_out = run.path("train_report.json");
    write_json(&report_out, &json!({ "kind": model.kind(), "classes": model.classes(), "report": report }))?;
    println!("trained {} on {} utterances, {} classes", model.kind(), train.len(), model.classes().len());
    Ok(())
}

fn text_predictions(cfg: &ExperimentConfig, run: &mut Run, d: &Dataset) -> Res<(String, ScoreMatrix)> {
    let model = ClassifierModel::load(&require(run.path(MODEL_FILE), "train")?)?;
    let field = cfg.features.field;
    let preds: Vec<Prediction> = match &model {
        ClassifierModel::Lm(lms) => run.time("score", || {
            d.utterances()
                .iter()
                .map(|u| classify_by_perplexity(lms, &u.id, &lm_tokens(u, field)))
                .collect::<dialect_id::Result<Vec<_>>>()
        })?,
        ClassifierModel::NaiveBayes(m) => {
            let pipeline = load_pipeline(run)?;
            let x = run.time("features", || pipeline.sparse_all(d))?;
            run.time("score", || {
                d.utterances()
                    .iter()
                    .zip(&x)
                    .map(|(u, v)| nb_classify(m, &u.id, v))
                    .collect::<dialect_id::Result<Vec<_>>>()
            })?
        }
        ClassifierModel::MaxEnt(m) => {
            let pipeline = load_pipeline(run)?;
            let x = run.time("features", || pipeline.dense_all(d))?;
            run.time("score", || {
                d.utterances()
                    .iter()
                    .zip(&x)
                    .map(|(u, v)| maxent_classify(m, &u.id, v))
                    .collect::<dialect_id::Result<Vec<_>>>()
            })?
        }
        ClassifierModel::Svm(m) => {
            let pipeline = load_pipeline(run)?;
            let x = run.time("features", || pipeline.dense_all(d))?;
            run.time("score", || {
                d.utterances()
                    .iter()
                    .zip(&x)
                    .map(|(u, v)| svm_classify(m, &u.id, v))
                    .collect::<dialect_id::Result<Vec<_>>>()
            })?
        }
    };
    let name = format!("{}-{}", model.kind(), field_name(field));
    let m = ScoreMatrix::from_predictions(name.clone(), model.classes().to_vec(), &preds)?;
    Ok((name, m))
}

fn ivector_predictions(run: &mut Run, split: Split) -> Res<(String, ScoreMatrix)> {
    let backend = Backend::load(&require(run.path(BACKEND_FILE), "fit-backend")?)?;
    let path = require(run.path(&format!("ivectors_{}.jsonl", split.name())), "extract-ivectors")?;
    let ivs = read_ivectors(&path)?;
    let preds = run.time("score", || {
        ivs.iter()
            .map(|v| backend.cosine_scores(&v.id, &v.vector))
            .collect::<dialect_id::Result<Vec<_>>>()
    })?;
    let m = ScoreMatrix::from_predictions("ivector", backend.classes.clone(), &preds)?;
    Ok(("ivector".into(), m))
}

pub fn predict(cfg: &ExperimentConfig, run: &mut Run, system: System, split: Split, scores_out: Option<&Path>) -> Res {
    let (name, scores) = match system {
        System::Text => {
            let d = run.time("load", || load_split(cfg, split))?;
            text_predictions(cfg, run, &d)?
        }
        System::Ivector => ivector_predictions(run, split)?,
    };
    let out = match scores_out {
        Some(p) => p.to_path_buf(),
        None => run.path(&format!("scores_{name}_{}.json", split.name())),
    };
    scores.save(&out)?;
    run.artifact(&out)?;
    println!("wrote {} scores for {} utterances to {}", name, scores.nrows(), out.display());
    Ok(())
}

pub fn evaluate_scores(scores: &Path, gold_manifest: &Path, frame_dir: Option<&Path>, run: &mut Run) -> Res {
    let m = ScoreMatrix::load(scores)?;
    let gold = run.time("load_gold", || load_dataset(gold_manifest, frame_dir))?;
    let report = run.time("evaluate", || evaluate(&m.predictions(), &gold))?;
    print!("{report}");
    let out = run.path(&format!("eval_{}.json", m.system));
    write_json(&out, &report)?;
    run.artifact(&out)
}

pub fn fuse_scores(
    inputs: &[PathBuf],
    weights: Option<Vec<f64>>,
    normalization: Normalization,
    scores_out: Option<&Path>,
    run: &mut Run,
) -> Res {
    let systems = inputs
        .iter()
        .map(|p| ScoreMatrix::load(p))
        .collect::<dialect_id::Result<Vec<_>>>()?;
    let weights = weights.unwrap_or_else(|| equal_weights(systems.len()));
    let fused = run.time("fuse", || fuse(&systems, &weights, normalization))?;
    let out = match scores_out {
        Some(p) => p.to_path_buf(),
        None => run.path("scores_fused.json"),
    };
    fused.save(&out)?;
    run.artifact(&out)?;
    println!("fused {} systems with weights {:?} into {}", systems.len(), weights, out.display());
    Ok(())
}

pub fn train_ubm_cmd(cfg: &ExperimentConfig, run: &mut Run) -> Res {
    let train = run.time("load_train", || load_split(cfg, Split::Train))?;
    let frames = frames_of(&train)?;
    let iv = &cfg.ivector;
    let (ubm, report) = run.time("em", || train_ubm(&frames, iv.components, iv.ubm_iters, cfg.seed()))?;
    let out = run.path(UBM_FILE);
    ubm.save(&out)?;
    run.artifact(&out)?;
    write_json(&run.path("ubm_report.json"), &report)?;
    println!(
        "UBM: {} components, dimension {}, final mean log-likelihood {:.4}",
        ubm.components(),
        ubm.dim(),
        report.log_likelihood.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn train_tv_cmd(cfg: &ExperimentConfig, run: &mut Run) -> Res {
    let ubm = GmmUbm::load(&require(run.path(UBM_FILE), "train-ubm")?)?;
    let train = run.time("load_train", || load_split(cfg, Split::Train))?;
    let frames = frames_of(&train)?;
    let stats = run.time("stats", || accumulate_all(&ubm, &frames))?;
    let iv = &cfg.ivector;
    let (tv, report) = run.time("em", || train_tv(&ubm, &stats, iv.rank, iv.tv_iters, cfg.seed()))?;
    let out = run.path(TV_FILE);
    tv.save(&out)?;
    run.artifact(&out)?;
    write_json(&run.path("tv_report.json"), &report)?;
    println!("total variability rank {}", tv.rank());
    Ok(())
}

pub fn extract_ivectors_cmd(cfg: &ExperimentConfig, run: &mut Run, splits: &[Split]) -> Res {
    let tv = TvModel::load(&require(run.path(TV_FILE), "train-tv")?)?;
    for &split in splits {
        let d = run.time(&format!("load_{}", split.name()), || load_split(cfg, split))?;
        let frames = frames_of(&d)?;
        let stats = run.time(&format!("stats_{}", split.name()), || accumulate_all(tv.ubm(), &frames))?;
        let vectors = run.time(&format!("extract_{}", split.name()), || extract_all(&tv, &stats))?;
        let records: Vec<IVector> = d
            .utterances()
            .iter()
            .zip(vectors)
            .map(|(u, v)| IVector {
                id: u.id.clone(),
                label: u.label.as_ref().map(|l| l.as_str().to_string()),
                vector: v.as_slice().to_vec(),
            })
            .collect();
        let out = run.path(&format!("ivectors_{}.jsonl", split.name()));
        write_ivectors(&out, &records)?;
        run.artifact(&out)?;
        println!("{}: {} i-vectors", split.name(), records.len());
    }
    Ok(())
}

pub fn fit_backend_cmd(cfg: &ExperimentConfig, run: &mut Run) -> Res {
    let path = require(run.path("ivectors_train.jsonl"), "extract-ivectors")?;
    let ivs = read_ivectors(&path)?;
    let labels: Vec<DialectLabel> = ivs
        .iter()
        .map(|v| match &v.label {
            Some(l) => Ok(DialectLabel::new(l)?),
            None => Err(dialect_id::Error::MissingLabel(v.id.clone())),
        })
        .collect::<dialect_id::Result<_>>()?;
    let mut classes = labels.clone();
    classes.sort();
    classes.dedup();
    let y: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).unwrap_or(0)).collect();
    let x: Vec<Vec<f64>> = ivs.into_iter().map(|v| v.vector).collect();
    let backend = run.time("fit", || Backend::fit(&x, &y, classes, &cfg.ivector.backend))?;
    let out = run.path(BACKEND_FILE);
    backend.save(&out)?;
    run.artifact(&out)?;
    println!(
        "backend: lda {:?}, wccn {}, length norm {}, output dimension {}",
        cfg.ivector.backend.lda_dim,
        backend.wccn.is_some(),
        backend.length_norm,
        backend.output_dim()
    );
    Ok(())
}

pub struct SynthOptions {
    pub disjoint: bool,
    pub frames: bool,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

/// Writes a seeded synthetic corpus plus a starter config.
pub fn synth_cmd(seed: u64, opts: &SynthOptions, run: &mut Run) -> Res {
    let corpus = run.time("generate", || {
        if opts.disjoint {
            synth::disjoint_vocabulary(opts.train_per_class, opts.test_per_class, seed)
        } else {
            synth::generate(&SynthConfig {
                train_per_class: opts.train_per_class,
                test_per_class: opts.test_per_class,
                frames: opts.frames.then_some(FrameSpec {
                    dim: 8,
                    components: 16,
                    frames_per_utterance: 60,
                }),
                seed,
                ..SynthConfig::default()
            })
        }
    })?;
    for (name, d) in [("train.jsonl", &corpus.train), ("test.jsonl", &corpus.test)] {
        let out = run.path(name);
        save_manifest(&out, d)?;
        run.artifact(&out)?;
    }
    let starter = ExperimentConfig {
        train_manifest: Some("train.jsonl".into()),
        test_manifest: Some("test.jsonl".into()),
        seed: Some(seed),
        ..ExperimentConfig::default()
    };
    write_json(&run.path("config.json"), &starter)?;
    println!(
        "wrote {} train and {} test utterances to {}",
        corpus.train.len(),
        corpus.test.len(),
        run.out_dir().display()
    );
    Ok(())
}

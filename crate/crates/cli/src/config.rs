//! Experiment configuration: a JSON file plus command-line overrides.

use std::path::{Path, PathBuf};

use dialect_id::classifiers::lm::DEFAULT_DISCOUNT;
use dialect_id::classifiers::{MaxEntConfig, SvmConfig};
use dialect_id::fusion::Normalization;
use dialect_id::ivector::BackendConfig;
use dialect_id::vsm::FeatureField;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    Identity,
    #[default]
    Tfidf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSpec {
    pub field: FeatureField,
    pub senone_max_n: usize,
    pub min_count: usize,
    pub scaling: Scaling,
    pub svd_k: Option<usize>,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            field: FeatureField::Words,
            senone_max_n: 3,
            min_count: 1,
            scaling: Scaling::Tfidf,
            svd_k: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Lm,
    Nb,
    Maxent,
    #[default]
    Svm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmSpec {
    pub c_reg: f64,
    pub max_epochs: usize,
    pub batch_size: Option<usize>,
}

impl Default for SvmSpec {
    fn default() -> Self {
        let d = SvmConfig::default();
        SvmSpec {
            c_reg: d.c_reg,
            max_epochs: d.max_epochs,
            batch_size: d.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSpec {
    pub discount: f64,
}

impl Default for LmSpec {
    fn default() -> Self {
        LmSpec {
            discount: DEFAULT_DISCOUNT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    pub svm: SvmSpec,
    pub maxent: MaxEntConfig,
    pub lm: LmSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IvectorSpec {
    pub components: usize,
    pub ubm_iters: usize,
    pub rank: usize,
    pub tv_iters: usize,
    pub backend: BackendConfig,
}

impl Default for IvectorSpec {
    fn default() -> Self {
        IvectorSpec {
            components: dialect_id::ivector::DEFAULT_COMPONENTS,
            ubm_iters: 10,
            rank: dialect_id::ivector::DEFAULT_RANK,
            tv_iters: 5,
            backend: BackendConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSpec {
    pub normalization: Normalization,
    /// `None` splits weight equally between systems.
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    /// Base directory for relative frame-file paths in manifests.
    pub frame_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub features: FeatureSpec,
    pub classifier: ClassifierSpec,
    pub ivector: IvectorSpec,
    pub fusion: FusionSpec,
}

/// What a command needs from the configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct Needs {
    pub train: bool,
    pub test: bool,
    pub seed: bool,
    pub out_dir: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, Vec<String>> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| vec![format!("cannot read config {}: {e}", path.display())])?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| vec![format!("config {}: {e}", path.display())])?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.train_manifest,
            &mut cfg.test_manifest,
            &mut cfg.frame_dir,
            &mut cfg.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Every problem found, not only the first.
    pub fn validate(&self, needs: Needs) -> Vec<String> {
        let mut problems = Vec::new();
        let mut manifest = |name: &str, path: &Option<PathBuf>, required: bool| match path {
            None if required => problems.push(format!("{name} is required")),
            Some(p) if required && !p.is_file() => {
                problems.push(format!("{name} {} does not exist", p.display()))
            }
            _ => {}
        };
        manifest("train_manifest", &self.train_manifest, needs.train);
        manifest("test_manifest", &self.test_manifest, needs.test);
        if let Some(dir) = &self.frame_dir {
            if !dir.is_dir() {
                problems.push(format!("frame_dir {} is not a directory", dir.display()));
            }
        }
        if needs.seed && self.seed.is_none() {
            problems.push("seed is required (set it in the config or pass --seed)".into());
        }
        if needs.out_dir && self.out_dir.is_none() {
            problems.push("out_dir is required (set it in the config or pass --out-dir)".into());
        }
        let f = &self.features;
        if f.field == FeatureField::Senones && f.senone_max_n == 0 {
            problems.push("features.senone_max_n must be at least 1".into());
        }
        if f.min_count == 0 {
            problems.push("features.min_count must be at least 1".into());
        }
        if f.svd_k == Some(0) {
            problems.push("features.svd_k must be positive when set".into());
        }
        let c = &self.classifier;
        if !(c.svm.c_reg > 0.0 && c.svm.c_reg.is_finite()) {
            problems.push("classifier.svm.c_reg must be positive".into());
        }
        if c.svm.max_epochs == 0 {
            problems.push("classifier.svm.max_epochs must be positive".into());
        }
        if c.svm.batch_size == Some(0) {
            problems.push("classifier.svm.batch_size must be positive when set".into());
        }
        if !(c.maxent.l2 >= 0.0 && c.maxent.l2.is_finite()) {
            problems.push("classifier.maxent.l2 must be nonnegative".into());
        }
        if c.maxent.max_iters == 0 {
            problems.push("classifier.maxent.max_iters must be positive".into());
        }
        if c.maxent.tol.is_nan() || c.maxent.tol < 0.0 {
            problems.push("classifier.maxent.tol must be nonnegative".into());
        }
        if !(c.lm.discount > 0.0 && c.lm.discount < 1.0) {
            problems.push("classifier.lm.discount must be in (0, 1)".into());
        }
        let iv = &self.ivector;
        if iv.components == 0 {
            problems.push("ivector.components must be positive".into());
        }
        if iv.rank == 0 {
            problems.push("ivector.rank must be positive".into());
        }
        if iv.backend.lda_dim == Some(0) {
            problems.push("ivector.backend.lda_dim must be positive when set".into());
        }
        if let Some(w) = &self.fusion.weights {
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                problems.push("fusion.weights must be finite and nonnegative".into());
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > dialect_id::fusion::WEIGHT_SUM_TOLERANCE {
                problems.push(format!("fusion.weights sum to {sum}, not 1"));
            }
        }
        problems
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn svm_config(&self) -> SvmConfig {
        SvmConfig {
            c_reg: self.classifier.svm.c_reg,
            max_epochs: self.classifier.svm.max_epochs,
            batch_size: self.classifier.svm.batch_size,
            seed: self.seed(),
        }
    }
}

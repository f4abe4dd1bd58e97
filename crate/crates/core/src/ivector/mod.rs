//! The acoustic chain: GMM-UBM, Baum-Welch statistics, total-variability
//! subspace, i-vector extraction, and the LDA/WCCN/cosine backend.

pub mod backend;
pub mod stats;
pub mod tv;
pub mod ubm;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backend::{cosine_score, fit_lda, fit_wccn, length_normalize, Backend, BackendConfig, LdaTransform, WccnTransform};
pub use stats::{accumulate_all, accumulate_stats, BaumWelchStats};
pub use tv::{extract_all, extract_ivector, train_tv, TvModel, TvReport};
pub use ubm::{train_ubm, GmmUbm, UbmReport};

/// Full-scale defaults.
pub const DEFAULT_COMPONENTS: usize = 2048;
pub const DEFAULT_RANK: usize = 400;

/// One extracted i-vector, as stored in a JSON-Lines archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IVector {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub vector: Vec<f64>,
}

pub fn write_ivectors(path: &Path, ivectors: &[IVector]) -> Result<()> {
    let mut buf = Vec::new();
    for v in ivectors {
        serde_json::to_writer(&mut buf, v)?;
        buf.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_ivectors(path: &Path) -> Result<Vec<IVector>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: IVector = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if v.vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("i-vector archive"));
        }
        out.push(v);
    }
    Ok(out)
}

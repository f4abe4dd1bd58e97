//! Dataset ingestion, validation, senone expansion and corpus statistics.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separator between phones inside a senone token.
pub const SENONE_JOIN: &str = "_";

pub const FRAME_MAGIC: &[u8; 4] = b"FRM1";

/// Dialect code, stored uppercased.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DialectLabel(String);

impl DialectLabel {
    pub fn new(name: &str) -> Result<Self> {
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::InvalidArgument("empty dialect label".into()));
        }
        Ok(DialectLabel(name.to_uppercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DialectLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Row-major `T x F` frame-feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    width: usize,
    data: Vec<f64>,
}

impl Frames {
    pub fn new(width: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || data.is_empty() || !data.len().is_multiple_of(width) {
            return Err(Error::InvalidArgument(format!(
                "frame data of length {} is not a non-empty multiple of width {width}",
                data.len()
            )));
        }
        Ok(Frames { width, data })
    }

    /// Builds from rows, checking that every row has the first row's width.
    pub fn from_rows(id: &str, rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::InvalidUtterance {
                id: id.into(),
                message: "frame matrix has no rows".into(),
            });
        };
        let width = first.len();
        let mut data = Vec::with_capacity(rows.len() * width);
        for row in rows {
            if row.len() != width {
                return Err(Error::FrameWidthMismatch {
                    id: id.into(),
                    expected: width,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        if width == 0 {
            return Err(Error::InvalidUtterance {
                id: id.into(),
                message: "frame rows are empty".into(),
            });
        }
        Ok(Frames { width, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.width..(t + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.width)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}

/// Reads a binary frame file: `FRM1`, `u32` T, `u32` F, then `T*F` little-endian `f32`.
pub fn read_frame_file(path: &Path) -> Result<Frames> {
    let bad = |message: String| Error::BadFrameFile {
        path: path.to_path_buf(),
        message,
    };
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    if buf.len() < 12 || &buf[..4] != FRAME_MAGIC {
        return Err(bad("missing FRM1 header".into()));
    }
    let t = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let f = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    if t == 0 || f == 0 {
        return Err(bad(format!("empty frame matrix ({t} x {f})")));
    }
    let body = &buf[12..];
    if body.len() != t * f * 4 {
        return Err(bad(format!(
            "expected {} payload bytes for {t} x {f}, found {}",
            t * f * 4,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Frames::new(f, data)
}

/// Writes frames in the `FRM1` layout. Values are narrowed to `f32`.
pub fn write_frame_file(path: &Path, frames: &Frames) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + frames.data.len() * 4);
    buf.extend_from_slice(FRAME_MAGIC);
    buf.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(frames.width as u32).to_le_bytes());
    for &x in &frames.data {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub label: Option<DialectLabel>,
    pub words: Vec<String>,
    pub phones: Vec<String>,
    pub frames: Option<Frames>,
}

impl Utterance {
    pub fn validate(&self) -> Result<()> {
        let invalid = |message: &str| Error::InvalidUtterance {
            id: self.id.clone(),
            message: message.into(),
        };
        if self.id.is_empty() {
            return Err(invalid("empty id"));
        }
        if self.phones.iter().any(|p| p.contains(SENONE_JOIN)) {
            return Err(invalid("phone tokens must not contain '_'"));
        }
        if self.phones.iter().chain(&self.words).any(String::is_empty) {
            return Err(invalid("empty token"));
        }
        if self.words.is_empty()
            && self.phones.is_empty()
            && self.frames.as_ref().is_none_or(Frames::is_empty)
        {
            return Err(invalid("words, phones and frames are all empty"));
        }
        Ok(())
    }
}

/// An ordered, validated collection of utterances.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    utterances: Vec<Utterance>,
    label_set: BTreeSet<DialectLabel>,
}

impl Dataset {
    pub fn new(utterances: Vec<Utterance>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut width: Option<usize> = None;
        for u in &utterances {
            u.validate()?;
            if !seen.insert(u.id.as_str()) {
                return Err(Error::DuplicateId(u.id.clone()));
            }
            if let Some(f) = &u.frames {
                match width {
                    None => width = Some(f.width()),
                    Some(w) if w != f.width() => {
                        return Err(Error::FrameWidthMismatch {
                            id: u.id.clone(),
                            expected: w,
                            found: f.width(),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        let label_set = utterances.iter().filter_map(|u| u.label.clone()).collect();
        Ok(Dataset {
            utterances,
            label_set,
        })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn label_set(&self) -> &BTreeSet<DialectLabel> {
        &self.label_set
    }

    /// Labels in class-index order (sorted by label string).
    pub fn classes(&self) -> Vec<DialectLabel> {
        self.label_set.iter().cloned().collect()
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    /// Fails on the first unlabeled utterance. Training paths call this.
    pub fn require_labels(&self) -> Result<()> {
        match self.utterances.iter().find(|u| u.label.is_none()) {
            Some(u) => Err(Error::MissingLabel(u.id.clone())),
            None => Ok(()),
        }
    }

    /// Class index of every utterance, relative to `classes`.
    pub fn label_indices(&self, classes: &[DialectLabel]) -> Result<Vec<usize>> {
        self.utterances
            .iter()
            .map(|u| {
                let label = u.label.as_ref().ok_or_else(|| Error::MissingLabel(u.id.clone()))?;
                classes
                    .binary_search(label)
                    .map_err(|_| Error::InvalidArgument(format!("unknown class {label}")))
            })
            .collect()
    }

    /// Frame width shared by all utterances that carry frames.
    pub fn frame_width(&self) -> Option<usize> {
        self.utterances
            .iter()
            .find_map(|u| u.frames.as_ref().map(Frames::width))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum FrameSource {
    Path(String),
    Inline(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    words: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    phones: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames: Option<FrameSource>,
}

/// Loads a JSON-Lines manifest. Relative frame paths resolve against
/// `frame_dir` when given, otherwise against the manifest's directory.
pub fn load_dataset(path: &Path, frame_dir: Option<&Path>) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base: PathBuf = match frame_dir {
        Some(d) => d.to_path_buf(),
        None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let malformed = |line: usize, message: String| Error::MalformedRecord {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut utterances = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| malformed(line_no, e.to_string()))?;
        let label = rec
            .label
            .as_deref()
            .map(DialectLabel::new)
            .transpose()
            .map_err(|e| malformed(line_no, e.to_string()))?;
        let frames = match rec.frames {
            None => None,
            Some(FrameSource::Inline(rows)) => Some(Frames::from_rows(&rec.id, &rows)?),
            Some(FrameSource::Path(p)) => Some(read_frame_file(&base.join(p))?),
        };
        utterances.push(Utterance {
            id: rec.id,
            label,
            words: rec.words,
            phones: rec.phones,
            frames,
        });
    }
    Dataset::new(utterances)
}

/// Writes a dataset as a manifest with inline frames.
pub fn write_manifest(w: &mut impl Write, d: &Dataset) -> Result<()> {
    for u in &d.utterances {
        let rec = ManifestRecord {
            id: u.id.clone(),
            label: u.label.as_ref().map(|l| l.0.clone()),
            words: u.words.clone(),
            phones: u.phones.clone(),
            frames: u.frames.as_ref().map(|f| FrameSource::Inline(f.to_rows())),
        };
        serde_json::to_writer(&mut *w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io("<manifest>", e))?;
    }
    Ok(())
}

pub fn save_manifest(path: &Path, d: &Dataset) -> Result<()> {
    let mut buf = Vec::new();
    write_manifest(&mut buf, d)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Expands a phone sequence into all contiguous n-grams for `n = 1..=max_n`:
/// all unigrams in position order, then all bigrams, and so on. N-grams are
/// joined with `_`.
pub fn expand_senones(phones: &[String], max_n: usize) -> Result<Vec<String>> {
    if max_n < 1 {
        return Err(Error::InvalidArgument("senone max_n must be >= 1".into()));
    }
    let len = phones.len();
    let mut out = Vec::with_capacity(senone_count(len, max_n));
    for n in 1..=max_n.min(len) {
        out.extend(phones.windows(n).map(|w| w.join(SENONE_JOIN)));
    }
    Ok(out)
}

/// Number of tokens [`expand_senones`] yields for a sequence of length `len`.
pub fn senone_count(len: usize, max_n: usize) -> usize {
    (1..=max_n).map(|n| (len + 1).saturating_sub(n)).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsRow {
    pub label: String,
    pub utterances: usize,
    pub words: usize,
    pub phones: usize,
    pub frames: usize,
}

impl StatsRow {
    fn empty(label: &str) -> Self {
        StatsRow {
            label: label.into(),
            utterances: 0,
            words: 0,
            phones: 0,
            frames: 0,
        }
    }

    fn add(&mut self, u: &Utterance) {
        self.utterances += 1;
        self.words += u.words.len();
        self.phones += u.phones.len();
        self.frames += u.frames.as_ref().map_or(0, Frames::len);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub rows: Vec<StatsRow>,
    pub total: StatsRow,
}

impl DatasetStats {
    pub fn count(&self, label: &str) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.label == label)
            .map(|r| r.utterances)
    }
}

/// Label used for the statistics row of unlabeled utterances.
pub const UNLABELED: &str = "<unlabeled>";

pub fn dataset_stats(d: &Dataset) -> DatasetStats {
    let mut rows: BTreeMap<String, StatsRow> = BTreeMap::new();
    let mut total = StatsRow::empty("TOTAL");
    for u in &d.utterances {
        let key = u.label.as_ref().map_or(UNLABELED, DialectLabel::as_str);
        rows.entry(key.to_string())
            .or_insert_with(|| StatsRow::empty(key))
            .add(u);
        total.add(u);
    }
    DatasetStats {
        rows: rows.into_values().collect(),
        total,
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>10} {:>10} {:>10} {:>10}",
            "label", "utterances", "words", "phones", "frames"
        )?;
        for r in self.rows.iter().chain(std::iter::once(&self.total)) {
            writeln!(
                f,
                "{:<12} {:>10} {:>10} {:>10} {:>10}",
                r.label, r.utterances, r.words, r.phones, r.frames
            )?;
        }
        Ok(())
    }
}

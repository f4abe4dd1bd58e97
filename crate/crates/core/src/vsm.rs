//! Utterance vector-space models: vocabularies, sparse count vectors,
//! identity and tf-idf scaling, the `d x N` corpus matrix and truncated SVD.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::container::{read_matrix, write_matrix, Container, Reader, Writer};
use crate::corpus::{expand_senones, Dataset, Utterance};
use crate::error::{Error, Result};
use crate::par;

/// Which token stream of an utterance a vector space is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureField {
    Words,
    Senones,
}

impl FeatureField {
    fn tag(self) -> u8 {
        match self {
            FeatureField::Words => 0,
            FeatureField::Senones => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(FeatureField::Words),
            1 => Ok(FeatureField::Senones),
            t => Err(Error::Container(format!("unknown feature field tag {t}"))),
        }
    }
}

/// Tokens of `u` for the given field. Senones are phone n-grams up to `senone_max_n`.
pub fn utterance_tokens(u: &Utterance, field: FeatureField, senone_max_n: usize) -> Result<Vec<String>> {
    match field {
        FeatureField::Words => Ok(u.words.clone()),
        FeatureField::Senones => expand_senones(&u.phones, senone_max_n),
    }
}

/// Dense token index. Index order is descending corpus frequency, ties
/// broken lexicographically.
#[derive(Debug, Clone, Serialize)]
pub struct Vocabulary {
    field: FeatureField,
    senone_max_n: usize,
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.field == other.field
            && self.senone_max_n == other.senone_max_n
            && self.tokens == other.tokens
    }
}

impl Vocabulary {
    pub fn from_tokens(field: FeatureField, senone_max_n: usize, tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary {
            field,
            senone_max_n,
            tokens,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn field(&self) -> FeatureField {
        self.field
    }

    pub fn senone_max_n(&self) -> usize {
        self.senone_max_n
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn tokens_for(&self, u: &Utterance) -> Result<Vec<String>> {
        utterance_tokens(u, self.field, self.senone_max_n)
    }
}

pub fn build_vocabulary(
    d: &Dataset,
    field: FeatureField,
    senone_max_n: usize,
    min_count: usize,
) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(Error::InvalidArgument("min_count must be >= 1".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for u in d.utterances() {
        for t in utterance_tokens(u, field, senone_max_n)? {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary(min_count));
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_tokens(field, senone_max_n, kept.into_iter().map(|(t, _)| t).collect())
}

/// Sparse vector with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        SparseVector {
            dim,
            entries: Vec::new(),
        }
    }

    /// Builds from arbitrary `(index, value)` pairs: duplicates are summed,
    /// zeros dropped.
    pub fn from_pairs(dim: usize, mut pairs: Vec<(usize, f64)>) -> Result<Self> {
        if let Some(&(i, _)) = pairs.iter().find(|(i, _)| *i >= dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: i + 1,
            });
        }
        pairs.sort_by_key(|p| p.0);
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            match entries.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => entries.push((i, v)),
            }
        }
        entries.retain(|&(_, v)| v != 0.0);
        Ok(SparseVector { dim, entries })
    }

    pub fn from_dense(v: &[f64]) -> Self {
        SparseVector {
            dim: v.len(),
            entries: v
                .iter()
                .enumerate()
                .filter(|(_, &x)| x != 0.0)
                .map(|(i, &x)| (i, x))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.entries
            .binary_search_by_key(&i, |e| e.0)
            .map_or(0.0, |k| self.entries[k].1)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }

    /// Presence indicator: every stored entry becomes 1.
    pub fn binarized(&self) -> SparseVector {
        SparseVector {
            dim: self.dim,
            entries: self.entries.iter().map(|&(i, _)| (i, 1.0)).collect(),
        }
    }

    pub fn dot_dense(&self, w: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| v * w[i]).sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v * v).sum()
    }
}

/// Raw counts of in-vocabulary tokens. OOV tokens are ignored.
pub fn count_vector(tokens: &[String], v: &Vocabulary) -> SparseVector {
    let pairs = tokens
        .iter()
        .filter_map(|t| v.index_of(t).map(|i| (i, 1.0)))
        .collect();
    SparseVector::from_pairs(v.len(), pairs).expect("vocabulary indices are in range")
}

/// The scaling function applied to raw term counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScalingSpec {
    Identity,
    Tfidf { idf: Vec<f64> },
}

impl ScalingSpec {
    pub fn tfidf(idf: Vec<f64>) -> Result<Self> {
        if idf.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("idf weights must be finite and >= 0".into()));
        }
        Ok(ScalingSpec::Tfidf { idf })
    }
}

/// `idf_i = ln(N / df_i)`; tokens that never occur get 0.
pub fn fit_idf(m: &VsmMatrix) -> ScalingSpec {
    let n = m.columns.len() as f64;
    let mut df = vec![0usize; m.rows];
    for col in &m.columns {
        for &(i, v) in &col.entries {
            if v != 0.0 {
                df[i] += 1;
            }
        }
    }
    let idf = df
        .into_iter()
        .map(|c| if c == 0 { 0.0 } else { (n / c as f64).ln() })
        .collect();
    ScalingSpec::Tfidf { idf }
}

pub fn apply_scaling(vec: &SparseVector, s: &ScalingSpec) -> Result<SparseVector> {
    match s {
        ScalingSpec::Identity => Ok(vec.clone()),
        ScalingSpec::Tfidf { idf } => {
            if idf.len() != vec.dim {
                return Err(Error::DimensionMismatch {
                    expected: idf.len(),
                    found: vec.dim,
                });
            }
            let entries = vec
                .entries
                .iter()
                .map(|&(i, v)| (i, v * idf[i]))
                .filter(|&(_, v)| v != 0.0)
                .collect();
            Ok(SparseVector {
                dim: vec.dim,
                entries,
            })
        }
    }
}

/// Column-sparse `d x N` matrix; column `j` is utterance `ids[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VsmMatrix {
    rows: usize,
    ids: Vec<String>,
    columns: Vec<SparseVector>,
}

impl VsmMatrix {
    pub fn new(rows: usize, ids: Vec<String>, columns: Vec<SparseVector>) -> Result<Self> {
        if ids.len() != columns.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                found: columns.len(),
            });
        }
        if let Some(c) = columns.iter().find(|c| c.dim != rows) {
            return Err(Error::DimensionMismatch {
                expected: rows,
                found: c.dim,
            });
        }
        Ok(VsmMatrix { rows, ids, columns })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let columns = m
            .column_iter()
            .map(|c| SparseVector::from_dense(c.as_slice()))
            .collect::<Vec<_>>();
        VsmMatrix {
            rows: m.nrows(),
            ids: (0..m.ncols()).map(|j| j.to_string()).collect(),
            columns,
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn columns(&self) -> &[SparseVector] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &SparseVector {
        &self.columns[j]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.columns.len());
        for (j, c) in self.columns.iter().enumerate() {
            for &(i, v) in &c.entries {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Row-major view: for each row, its `(column, value)` entries.
    fn row_lists(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows = vec![Vec::new(); self.rows];
        for (j, c) in self.columns.iter().enumerate() {
            for &(i, v) in &c.entries {
                rows[i].push((j, v));
            }
        }
        rows
    }
}

/// Raw-count matrix (no scaling) over the dataset, in dataset order.
pub fn build_count_matrix(d: &Dataset, v: &Vocabulary) -> Result<VsmMatrix> {
    build_matrix(d, v, &ScalingSpec::Identity)
}

/// Column `j` is `apply_scaling(count_vector(tokens_j))`. The token field and
/// senone order come from the vocabulary.
pub fn build_matrix(d: &Dataset, v: &Vocabulary, s: &ScalingSpec) -> Result<VsmMatrix> {
    let columns = par::map(d.utterances(), |u| {
        let tokens = v.tokens_for(u)?;
        apply_scaling(&count_vector(&tokens, v), s)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let ids = d.utterances().iter().map(|u| u.id.clone()).collect();
    VsmMatrix::new(v.len(), ids, columns)
}

/// Up to this `min(d, N)` the SVD is computed exactly.
pub const EXACT_SVD_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvdMethod {
    /// Exact dense SVD when `min(d, N) <= EXACT_SVD_LIMIT`, randomized above.
    Auto { seed: u64 },
    Exact,
    Randomized {
        seed: u64,
        oversample: usize,
        power_iters: usize,
    },
}

/// Top-`k` left singular vectors of a VSM matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SvdProjection {
    #[serde(serialize_with = "serialize_matrix_rows")]
    basis: DMatrix<f64>,
    singular_values: Vec<f64>,
}

fn serialize_matrix_rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in m.row_iter() {
        seq.serialize_element(&r.iter().copied().collect::<Vec<f64>>())?;
    }
    seq.end()
}

impl SvdProjection {
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn k(&self) -> usize {
        self.singular_values.len()
    }

    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }
}

pub fn fit_svd(m: &VsmMatrix, k: usize, seed: u64) -> Result<SvdProjection> {
    fit_svd_with(m, k, SvdMethod::Auto { seed })
}

pub fn fit_svd_with(m: &VsmMatrix, k: usize, method: SvdMethod) -> Result<SvdProjection> {
    let max_k = m.nrows().min(m.ncols());
    if k < 1 || k > max_k {
        return Err(Error::InvalidArgument(format!(
            "svd rank {k} outside 1..={max_k}"
        )));
    }
    let (u, sigma) = match method {
        SvdMethod::Exact => exact_svd(m),
        SvdMethod::Auto { .. } if max_k <= EXACT_SVD_LIMIT => exact_svd(m),
        SvdMethod::Auto { seed } => randomized_svd(m, k, seed, 10, 2),
        SvdMethod::Randomized {
            seed,
            oversample,
            power_iters,
        } => randomized_svd(m, k, seed, oversample, power_iters),
    };
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
    let mut basis = DMatrix::zeros(m.nrows(), k);
    let mut singular_values = Vec::with_capacity(k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        let mut col = u.column(src).clone_owned();
        fix_sign(&mut col);
        basis.set_column(dst, &col);
        singular_values.push(sigma[src].max(0.0));
    }
    Ok(SvdProjection {
        basis,
        singular_values,
    })
}

/// Flips `v` so its largest-magnitude entry (first on ties) is nonnegative.
pub(crate) fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

fn exact_svd(m: &VsmMatrix) -> (DMatrix<f64>, Vec<f64>) {
    left_singular(m.to_dense())
}

/// Left singular vectors and singular values of a dense matrix, via a thin
/// QR reduction to a square factor and one-sided Jacobi on that factor.
/// nalgebra's bidiagonal SVD loses accuracy on rank-deficient inputs, which
/// term-document matrices usually are.
fn left_singular(a: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    if a.nrows() > a.ncols() {
        // A = Q R; left vectors of A are Q times right vectors of R'
        let qr = a.qr();
        let (q, r) = (qr.q(), qr.r());
        let (v, sigma) = jacobi_right_singular(r.transpose());
        (q * v, sigma)
    } else {
        // A' = Q R, so A = R' Q' and left vectors of A are right vectors of R
        let r = a.transpose().qr().r();
        jacobi_right_singular(r)
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// A column of `X V` together with the matching column of `V`.
type ColumnPair = (Vec<f64>, Vec<f64>);

/// One-sided (Hestenes) Jacobi on a square matrix `X`: returns `V` and the
/// column norms of `X V`. Pairs follow a round-robin schedule, so each step
/// rotates disjoint column pairs and can run in parallel deterministically.
fn jacobi_right_singular(x: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = x.ncols();
    let mut cols: Vec<ColumnPair> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            (x.column(j).iter().copied().collect(), e)
        })
        .collect();
    if n > 1 {
        // round-robin over an even number of slots; slot `n` is a dummy
        let slots = n + n % 2;
        for _ in 0..JACOBI_MAX_SWEEPS {
            let mut rotated = false;
            for step in 0..slots - 1 {
                let pairs: Vec<(usize, usize)> = (0..slots / 2)
                    .map(|i| {
                        let a = if i == 0 { 0 } else { 1 + (i - 1 + step) % (slots - 1) };
                        let b = 1 + (slots - 2 - i + step) % (slots - 1);
                        (a.min(b), a.max(b))
                    })
                    .filter(|&(_, b)| b < n)
                    .collect();
                let mut work: Vec<(ColumnPair, ColumnPair)> = pairs
                    .iter()
                    .map(|&(p, q)| (std::mem::take(&mut cols[p]), std::mem::take(&mut cols[q])))
                    .collect();
                let flags = par::map_mut(&mut work, |(cp, cq)| rotate_pair(cp, cq));
                rotated |= flags.into_iter().any(|f| f);
                for (&(p, q), (cp, cq)) in pairs.iter().zip(work) {
                    cols[p] = cp;
                    cols[q] = cq;
                }
            }
            if !rotated {
                break;
            }
        }
    }
    let sigma = cols.iter().map(|(c, _)| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let v = DMatrix::from_fn(n, n, |i, j| cols[j].1[i]);
    (v, sigma)
}

fn rotate_pair(p: &mut (Vec<f64>, Vec<f64>), q: &mut (Vec<f64>, Vec<f64>)) -> bool {
    let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
    for (a, b) in p.0.iter().zip(&q.0) {
        alpha += a * a;
        beta += b * b;
        gamma += a * b;
    }
    if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
        return false;
    }
    let zeta = (beta - alpha) / (2.0 * gamma);
    let t = zeta.signum() / (zeta.abs() + zeta.hypot(1.0));
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = c * t;
    for (a, b) in p.0.iter_mut().zip(q.0.iter_mut()).chain(p.1.iter_mut().zip(q.1.iter_mut())) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
    true
}

/// Halko-Martinsson-Tropp range finder with subspace power iterations.
fn randomized_svd(
    m: &VsmMatrix,
    k: usize,
    seed: u64,
    oversample: usize,
    power_iters: usize,
) -> (DMatrix<f64>, Vec<f64>) {
    let l = (k + oversample).min(m.nrows().min(m.ncols()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(m.ncols(), l, |_, _| StandardNormal.sample(&mut rng));
    let rows = m.row_lists();
    let mut q = orthonormalize(sparse_mul(&rows, &omega));
    for _ in 0..power_iters {
        let z = orthonormalize(sparse_tr_mul(m, &q));
        q = orthonormalize(sparse_mul(&rows, &z));
    }
    // B = Q^T M, l x N
    let bt = sparse_tr_mul(m, &q);
    let (u_small, sigma) = left_singular(bt.transpose());
    (q * u_small, sigma)
}

fn orthonormalize(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

/// `M * X` for `X` dense `N x l`, parallel over rows of `M`.
fn sparse_mul(rows: &[Vec<(usize, f64)>], x: &DMatrix<f64>) -> DMatrix<f64> {
    let l = x.ncols();
    let out_rows = par::map(rows, |row| {
        let mut acc = vec![0.0; l];
        for &(j, v) in row {
            for (c, a) in acc.iter_mut().enumerate() {
                *a += v * x[(j, c)];
            }
        }
        acc
    });
    DMatrix::from_fn(rows.len(), l, |i, c| out_rows[i][c])
}

/// `M^T * Y` for `Y` dense `d x l`, parallel over columns of `M`.
fn sparse_tr_mul(m: &VsmMatrix, y: &DMatrix<f64>) -> DMatrix<f64> {
    let l = y.ncols();
    let out_rows = par::map(&m.columns, |col| {
        let mut acc = vec![0.0; l];
        for &(i, v) in &col.entries {
            for (c, a) in acc.iter_mut().enumerate() {
                *a += v * y[(i, c)];
            }
        }
        acc
    });
    DMatrix::from_fn(m.ncols(), l, |j, c| out_rows[j][c])
}

/// `basis^T * vec` as a dense `k`-vector.
pub fn project(vec: &SparseVector, p: &SvdProjection) -> Result<Vec<f64>> {
    if vec.dim != p.basis.nrows() {
        return Err(Error::DimensionMismatch {
            expected: p.basis.nrows(),
            found: vec.dim,
        });
    }
    Ok((0..p.k())
        .map(|c| vec.entries.iter().map(|&(i, v)| v * p.basis[(i, c)]).sum())
        .collect())
}

/// Squared Frobenius norm of `M - B B^T M`.
pub fn reconstruction_error(m: &VsmMatrix, p: &SvdProjection) -> f64 {
    let parts = par::map(&m.columns, |col| {
        let coeffs = project(col, p).expect("projection built for this matrix");
        let mut residual = DVector::from_vec(col.to_dense());
        residual -= &p.basis * DVector::from_vec(coeffs);
        residual.norm_squared()
    });
    parts.into_iter().sum()
}

pub fn concat_features(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

/// Fitted utterance featurizer: vocabulary, scaling and optional SVD.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeaturePipeline {
    pub vocabulary: Vocabulary,
    pub scaling: ScalingSpec,
    pub svd: Option<SvdProjection>,
}

impl FeaturePipeline {
    /// Builds the vocabulary, fits idf when requested, and fits the SVD on the
    /// scaled training matrix when `svd_k` is given.
    pub fn fit(
        d: &Dataset,
        field: FeatureField,
        senone_max_n: usize,
        min_count: usize,
        tfidf: bool,
        svd_k: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        let vocabulary = build_vocabulary(d, field, senone_max_n, min_count)?;
        let counts = build_count_matrix(d, &vocabulary)?;
        let scaling = if tfidf { fit_idf(&counts) } else { ScalingSpec::Identity };
        let svd = match svd_k {
            None => None,
            Some(k) => {
                let scaled = VsmMatrix::new(
                    counts.rows,
                    counts.ids.clone(),
                    counts
                        .columns
                        .iter()
                        .map(|c| apply_scaling(c, &scaling))
                        .collect::<Result<_>>()?,
                )?;
                Some(fit_svd(&scaled, k, seed)?)
            }
        };
        Ok(FeaturePipeline {
            vocabulary,
            scaling,
            svd,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.svd.as_ref().map_or(self.vocabulary.len(), SvdProjection::k)
    }

    pub fn sparse(&self, u: &Utterance) -> Result<SparseVector> {
        let tokens = self.vocabulary.tokens_for(u)?;
        apply_scaling(&count_vector(&tokens, &self.vocabulary), &self.scaling)
    }

    pub fn dense(&self, u: &Utterance) -> Result<Vec<f64>> {
        let v = self.sparse(u)?;
        match &self.svd {
            Some(p) => project(&v, p),
            None => Ok(v.to_dense()),
        }
    }

    pub fn dense_all(&self, d: &Dataset) -> Result<Vec<Vec<f64>>> {
        par::map(d.utterances(), |u| self.dense(u)).into_iter().collect()
    }

    pub fn sparse_all(&self, d: &Dataset) -> Result<Vec<SparseVector>> {
        par::map(d.utterances(), |u| self.sparse(u)).into_iter().collect()
    }
}

impl Container for FeaturePipeline {
    const MAGIC: &'static [u8; 4] = b"VSM1";

    fn write_payload(&self, w: &mut Writer) {
        let v = &self.vocabulary;
        w.u8(v.field.tag()).len(v.senone_max_n).strs(&v.tokens);
        match &self.scaling {
            ScalingSpec::Identity => {
                w.u8(0);
            }
            ScalingSpec::Tfidf { idf } => {
                w.u8(1).f64s(idf);
            }
        }
        match &self.svd {
            None => {
                w.u8(0);
            }
            Some(p) => {
                w.u8(1).f64s(&p.singular_values);
                write_matrix(w, &p.basis);
            }
        }
    }

    fn read_payload(r: &mut Reader<'_>) -> Result<Self> {
        let field = FeatureField::from_tag(r.u8()?)?;
        let senone_max_n = r.read_len()?;
        let vocabulary = Vocabulary::from_tokens(field, senone_max_n, r.strs()?)?;
        let scaling = match r.u8()? {
            0 => ScalingSpec::Identity,
            1 => ScalingSpec::tfidf(r.f64s()?)?,
            t => return Err(Error::Container(format!("unknown scaling tag {t}"))),
        };
        let svd = match r.u8()? {
            0 => None,
            1 => {
                let singular_values = r.f64s()?;
                let basis = read_matrix(r)?;
                Some(SvdProjection {
                    basis,
                    singular_values,
                })
            }
            t => return Err(Error::Container(format!("unknown svd tag {t}"))),
        };
        Ok(FeaturePipeline {
            vocabulary,
            scaling,
            svd,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Utterance;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn corpus(docs: &[&str]) -> Dataset {
        Dataset::new(
            docs.iter()
                .enumerate()
                .map(|(i, d)| Utterance {
                    id: format!("u{i}"),
                    label: None,
                    words: toks(d),
                    phones: vec![],
                    frames: None,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn vocabulary_order_and_threshold() {
        let d = corpus(&["a a b", "b c"]);
        let v = build_vocabulary(&d, FeatureField::Words, 4, 1).unwrap();
        assert_eq!(v.tokens(), toks("a b c").as_slice());
        let v2 = build_vocabulary(&d, FeatureField::Words, 4, 2).unwrap();
        assert_eq!(v2.tokens(), toks("a b").as_slice());
        assert!(matches!(
            build_vocabulary(&d, FeatureField::Words, 4, 10),
            Err(Error::EmptyVocabulary(10))
        ));
    }

    #[test]
    fn count_vector_examples() {
        let v = Vocabulary::from_tokens(FeatureField::Words, 1, toks("a b")).unwrap();
        let c = count_vector(&toks("a b a"), &v);
        assert_eq!(c.entries(), &[(0, 2.0), (1, 1.0)]);
        let v1 = Vocabulary::from_tokens(FeatureField::Words, 1, toks("a")).unwrap();
        assert_eq!(count_vector(&toks("z"), &v1).nnz(), 0);
        assert_eq!(count_vector(&[], &v1).nnz(), 0);
    }

    #[test]
    fn idf_examples() {
        let m = VsmMatrix::from_dense(&DMatrix::from_row_slice(3, 3, &[
            1.0, 2.0, 1.0, // everywhere
            0.0, 3.0, 0.0, // once
            0.0, 0.0, 0.0, // never
        ]));
        let ScalingSpec::Tfidf { idf } = fit_idf(&m) else { panic!() };
        assert_eq!(idf[0], 0.0);
        assert!((idf[1] - 3f64.ln()).abs() < 1e-12);
        assert!((idf[1] - 1.0986).abs() < 1e-4);
        assert_eq!(idf[2], 0.0);
    }

    #[test]
    fn scaling_examples() {
        let v = SparseVector::from_pairs(1, vec![(0, 2.0)]).unwrap();
        assert_eq!(apply_scaling(&v, &ScalingSpec::Identity).unwrap(), v);
        let s = ScalingSpec::tfidf(vec![0.0, 2.0]).unwrap();
        let v = SparseVector::from_pairs(2, vec![(0, 5.0), (1, 3.0)]).unwrap();
        assert_eq!(apply_scaling(&v, &s).unwrap().entries(), &[(1, 6.0)]);
        assert_eq!(apply_scaling(&SparseVector::zeros(2), &s).unwrap().nnz(), 0);
        assert!(apply_scaling(&SparseVector::zeros(3), &s).is_err());
    }

    #[test]
    fn matrix_columns_follow_dataset() {
        let d = corpus(&["a b"]);
        let v = build_vocabulary(&d, FeatureField::Words, 1, 1).unwrap();
        let m = build_matrix(&d, &v, &ScalingSpec::Identity).unwrap();
        assert_eq!(m.ncols(), 1);
        assert_eq!(m.column(0), &count_vector(&toks("a b"), &v));
        let d = corpus(&["a b c", "a b c"]);
        let v = build_vocabulary(&d, FeatureField::Words, 1, 1).unwrap();
        let m = build_matrix(&d, &v, &ScalingSpec::Identity).unwrap();
        assert_eq!(m.column(0), m.column(1));
    }

    #[test]
    fn senone_field_uses_ngrams() {
        let d = Dataset::new(vec![Utterance {
            id: "x".into(),
            label: None,
            words: vec![],
            phones: toks("b a t"),
            frames: None,
        }])
        .unwrap();
        let v = build_vocabulary(&d, FeatureField::Senones, 2, 1).unwrap();
        assert_eq!(v.len(), 5);
        assert!(v.index_of("b_a").is_some());
        assert!(v.index_of("b_a_t").is_none());
    }

    #[test]
    fn svd_rank_one_exact() {
        let a = DVector::from_vec(vec![1.0, 2.0, 0.0, -1.0]);
        let b = DVector::from_vec(vec![3.0, -1.0, 0.5]);
        let m = VsmMatrix::from_dense(&(&a * b.transpose()));
        let p = fit_svd(&m, 1, 0).unwrap();
        assert!(reconstruction_error(&m, &p).sqrt() < 1e-8);
    }

    #[test]
    fn svd_diagonal() {
        let m = VsmMatrix::from_dense(&DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0])));
        let p = fit_svd(&m, 2, 0).unwrap();
        assert!((p.singular_values()[0] - 3.0).abs() < 1e-12);
        assert!((p.singular_values()[1] - 2.0).abs() < 1e-12);
        assert!((reconstruction_error(&m, &p) - 1.0).abs() < 1e-12);
        // sign convention makes the basis the identity columns
        assert!((p.basis()[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((p.basis()[(1, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svd_rank_bounds() {
        let m = VsmMatrix::from_dense(&DMatrix::from_element(3, 2, 1.0));
        assert!(fit_svd(&m, 0, 0).is_err());
        assert!(fit_svd(&m, 3, 0).is_err());
        assert!(fit_svd(&m, 2, 0).is_ok());
    }

    #[test]
    fn exact_svd_matches_gram_eigendecomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(r, c, rank) in &[(80, 60, 5), (60, 80, 5), (50, 40, 40), (40, 50, 40), (30, 30, 3), (7, 1, 1)] {
            let a = DMatrix::<f64>::from_fn(r, rank, |_, _| StandardNormal.sample(&mut rng));
            let b = DMatrix::<f64>::from_fn(rank, c, |_, _| StandardNormal.sample(&mut rng));
            let dense = a * b;
            let m = VsmMatrix::from_dense(&dense);
            let k = rank.min(10);
            let p = fit_svd_with(&m, k, SvdMethod::Exact).unwrap();
            let mut gram: Vec<f64> = (dense.transpose() * &dense)
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .map(|v| v.max(0.0).sqrt())
                .collect();
            gram.sort_by(|x, y| y.total_cmp(x));
            for (i, s) in p.singular_values().iter().enumerate() {
                assert!((s - gram[i]).abs() < 1e-6 * gram[0], "{r}x{c}: {s} vs {}", gram[i]);
                let u = p.basis().column(i);
                assert!(((dense.transpose() * u).norm() - s).abs() < 1e-9 * gram[0]);
            }
            let gram_err = (p.basis().transpose() * p.basis() - DMatrix::identity(k, k)).amax();
            assert!(gram_err < 1e-8);
        }
    }

    #[test]
    fn randomized_svd_matches_exact_on_low_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::<f64>::from_fn(80, 5, |_, _| StandardNormal.sample(&mut rng));
        let b = DMatrix::<f64>::from_fn(5, 60, |_, _| StandardNormal.sample(&mut rng));
        let m = VsmMatrix::from_dense(&(a * b));
        let exact = fit_svd_with(&m, 5, SvdMethod::Exact).unwrap();
        let rand = fit_svd_with(
            &m,
            5,
            SvdMethod::Randomized {
                seed: 9,
                oversample: 5,
                power_iters: 2,
            },
        )
        .unwrap();
        for (x, y) in exact.singular_values().iter().zip(rand.singular_values()) {
            assert!((x - y).abs() < 1e-8 * x.max(1.0));
        }
        assert!((&exact.basis - &rand.basis).abs().max() < 1e-6);
        let again = fit_svd_with(
            &m,
            5,
            SvdMethod::Randomized {
                seed: 9,
                oversample: 5,
                power_iters: 2,
            },
        )
        .unwrap();
        assert_eq!(rand, again);
    }

    #[test]
    fn project_examples() {
        let m = VsmMatrix::from_dense(&DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0])));
        let p = fit_svd(&m, 2, 0).unwrap();
        assert_eq!(project(&SparseVector::zeros(3), &p).unwrap(), vec![0.0, 0.0]);
        let col0 = SparseVector::from_dense(p.basis().column(0).as_slice());
        let e0 = project(&col0, &p).unwrap();
        assert!((e0[0] - 1.0).abs() < 1e-12 && e0[1].abs() < 1e-12);
        assert!(project(&SparseVector::zeros(4), &p).is_err());
    }

    #[test]
    fn concat_examples() {
        assert_eq!(concat_features(&[1.0], &[2.0, 3.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(concat_features(&[], &[2.0]), vec![2.0]);
        assert_eq!(concat_features(&[0.0; 600], &[0.0; 4]).len(), 604);
    }

    #[test]
    fn pipeline_container_round_trip() {
        let d = corpus(&["a a b", "b c d", "d e a", "c c c"]);
        let p = FeaturePipeline::fit(&d, FeatureField::Words, 1, 1, true, Some(2), 1).unwrap();
        let back = FeaturePipeline::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.dense(&d.utterances()[0]).unwrap(), p.dense(&d.utterances()[0]).unwrap());
        assert!(serde_json::to_string(&p).unwrap().contains("\"tokens\""));
    }

    fn dense_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        (2usize..8, 2usize..8).prop_flat_map(|(r, c)| {
            (Just(r), Just(c), prop::collection::vec(
                prop_oneof![3 => Just(0.0), 2 => 0.0f64..5.0], r * c))
        })
    }

    proptest! {
        #[test]
        fn tfidf_zero_for_ubiquitous_tokens((r, c, mut data) in dense_strategy()) {
            // row 0 present everywhere
            for j in 0..c { data[j * r] = 1.0 + j as f64; }
            let m = VsmMatrix::from_dense(&DMatrix::from_vec(r, c, data));
            let s = fit_idf(&m);
            for col in m.columns() {
                prop_assert_eq!(apply_scaling(col, &s).unwrap().get(0), 0.0);
            }
        }

        #[test]
        fn projection_is_linear(
            (r, c, data) in dense_strategy(),
            x in prop::collection::vec(-3.0f64..3.0, 8),
            y in prop::collection::vec(-3.0f64..3.0, 8),
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
        ) {
            let m = VsmMatrix::from_dense(&DMatrix::from_vec(r, c, data));
            let p = fit_svd(&m, 1, 0).unwrap();
            let xs = SparseVector::from_dense(&x[..r]);
            let ys = SparseVector::from_dense(&y[..r]);
            let combo: Vec<f64> = (0..r).map(|i| alpha * x[i] + beta * y[i]).collect();
            let lhs = project(&SparseVector::from_dense(&combo), &p).unwrap();
            let px = project(&xs, &p).unwrap();
            let py = project(&ys, &p).unwrap();
            for i in 0..lhs.len() {
                prop_assert!((lhs[i] - (alpha * px[i] + beta * py[i])).abs() < 1e-8);
            }
        }
    }
}

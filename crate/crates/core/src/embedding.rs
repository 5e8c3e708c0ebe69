//! Word vectors, SIF-weighted document averaging and removal of the dominant
//! principal direction of the document matrix.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Read};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedDoc;
use crate::error::{Error, Result};

/// Smoothing parameter used by default for SIF weights.
pub const DEFAULT_SIF_A: f64 = 1e-3;

/// Unigram probabilities keyed by token.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WordProbs(HashMap<String, f64>);

impl WordProbs {
    pub fn get(&self, token: &str) -> Option<f64> {
        self.0.get(token).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.values().sum()
    }

    /// Normalizes raw counts to probabilities.
    pub fn from_counts<I, S>(counts: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut map: HashMap<String, f64> = HashMap::new();
        for (tok, c) in counts {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::InvalidInput(format!("invalid word count {c}")));
            }
            *map.entry(tok.into()).or_insert(0.0) += c;
        }
        map.retain(|_, c| *c > 0.0);
        let total: f64 = map.values().sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("word counts sum to zero".into()));
        }
        map.values_mut().for_each(|c| *c /= total);
        Ok(WordProbs(map))
    }

    /// Reads a `token<TAB>count` file.
    pub fn from_counts_reader<R: Read>(reader: R) -> Result<Self> {
        let mut counts = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (tok, count) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::Ingest(format!("frequency file line {}: expected token<TAB>count", i + 1)))?;
            let count: f64 = count
                .trim()
                .parse()
                .map_err(|_| Error::Ingest(format!("frequency file line {}: bad count `{count}`", i + 1)))?;
            counts.push((tok.to_owned(), count));
        }
        Self::from_counts(counts)
    }
}

/// `p(w) = count(w) / total tokens` over the corpus.
pub fn estimate_word_probs(docs: &[TokenizedDoc]) -> Result<WordProbs> {
    let mut counts: HashMap<&str, f64> = HashMap::new();
    for tok in docs.iter().flat_map(|d| d.tokens.iter()) {
        *counts.entry(tok.as_str()).or_insert(0.0) += 1.0;
    }
    if counts.is_empty() {
        return Err(Error::InvalidInput("cannot estimate word probabilities from an empty corpus".into()));
    }
    WordProbs::from_counts(counts)
}

/// SIF weight `a / (a + p)`.
#[inline]
pub fn sif_weight(p: f64, a: f64) -> f64 {
    a / (a + p)
}

#[derive(Debug, Clone)]
pub struct EmbeddingSpace {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    /// Row-major `V x D`.
    vectors: Vec<f64>,
    dim: usize,
    word_probs: WordProbs,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorLoadReport {
    pub lines: usize,
    pub loaded: usize,
    pub malformed: usize,
    pub duplicates: usize,
    pub filtered_out: usize,
    pub header_skipped: bool,
    pub zero_norm_removed: usize,
}

impl EmbeddingSpace {
    /// Builds a space from owned rows. Duplicate tokens keep their first row.
    pub fn from_rows<I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut space = EmbeddingSpace {
            tokens: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
            dim: 0,
            word_probs: WordProbs::default(),
        };
        for (tok, v) in rows {
            if space.tokens.is_empty() {
                space.dim = v.len();
            }
            if v.len() != space.dim || v.is_empty() {
                return Err(Error::Dimension(format!(
                    "vector for `{tok}` has {} components, expected {}",
                    v.len(),
                    space.dim
                )));
            }
            space.push(tok, &v);
        }
        Ok(space)
    }

    fn push(&mut self, token: String, v: &[f64]) -> bool {
        if self.index.contains_key(&token) {
            return false;
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.vectors.extend_from_slice(v);
        true
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.index_of(token).map(|i| self.row(i))
    }

    pub fn word_probs(&self) -> &WordProbs {
        &self.word_probs
    }

    pub fn set_word_probs(&mut self, probs: WordProbs) {
        self.word_probs = probs;
    }

    /// L2-normalizes every row, removing zero-norm rows. Returns how many were removed.
    pub fn normalize(&mut self) -> usize {
        let dim = self.dim;
        let keep: Vec<bool> =
            self.vectors.chunks_exact(dim).map(|r| r.iter().map(|x| x * x).sum::<f64>() > 0.0).collect();
        let removed = keep.iter().filter(|k| !**k).count();
        if removed > 0 {
            let old_tokens = std::mem::take(&mut self.tokens);
            let old_vectors = std::mem::take(&mut self.vectors);
            self.index.clear();
            for ((tok, row), k) in old_tokens.into_iter().zip(old_vectors.chunks_exact(dim)).zip(keep) {
                if k {
                    self.push(tok, row);
                }
            }
        }
        for row in self.vectors.chunks_exact_mut(dim) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.iter_mut().for_each(|x| *x /= norm);
        }
        removed
    }
}

/// Parses the plain-text vector format: `token v1 v2 ... vD` per line.
///
/// A leading `count dim` header line is skipped. When `keep` is given only
/// those tokens are retained. Rows are L2-normalized after loading.
pub fn load_vectors<R: Read>(source: R, keep: Option<&HashSet<String>>) -> Result<(EmbeddingSpace, VectorLoadReport)> {
    let mut space = EmbeddingSpace::from_rows(std::iter::empty())?;
    let mut report = VectorLoadReport::default();
    let mut dim: Option<usize> = None;
    let mut values: Vec<f64> = Vec::new();

    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap_or_default();

        if report.lines == 1 {
            let rest: Vec<&str> = fields.clone().collect();
            if rest.len() == 1 && token.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
                report.header_skipped = true;
                continue;
            }
        }
        if let Some(keep) = keep {
            if !keep.contains(token) {
                report.filtered_out += 1;
                continue;
            }
        }

        values.clear();
        let mut ok = true;
        for f in fields {
            match f.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok || values.is_empty() {
            report.malformed += 1;
            continue;
        }
        match dim {
            None => {
                dim = Some(values.len());
                space.dim = values.len();
            }
            Some(d) if d != values.len() => {
                return Err(Error::Dimension(format!("line {} has {} components, expected {d}", i + 1, values.len())));
            }
            Some(_) => {}
        }
        if space.push(token.to_owned(), &values) {
            report.loaded += 1;
        } else {
            report.duplicates += 1;
        }
    }
    if space.is_empty() {
        return Err(Error::Ingest("vector file contains no usable rows".into()));
    }
    report.zero_norm_removed = space.normalize();
    report.loaded -= report.zero_norm_removed;
    Ok((space, report))
}

/// How the weighted sum of word vectors is normalized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Divide by the number of in-vocabulary tokens.
    #[default]
    TokenCount,
    /// Divide by the sum of SIF weights.
    WeightSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentMatrix {
    pub ids: Vec<String>,
    /// Index of each row in the document list that was embedded.
    pub source_rows: Vec<usize>,
    pub matrix: DMatrix<f64>,
    pub removed_component: Option<Vec<f64>>,
}

impl DocumentMatrix {
    pub fn n_docs(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbedReport {
    pub in_vocab_tokens: usize,
    pub oov_tokens: usize,
    /// Ids of documents with no in-vocabulary token.
    pub excluded_ids: Vec<String>,
    pub excluded_rows: Vec<usize>,
}

/// SIF-weighted average of each document's in-vocabulary word vectors.
///
/// Tokens missing from the probability table get `p = 0`. Repeated tokens
/// contribute once per occurrence.
pub fn embed_documents(
    docs: &[TokenizedDoc],
    space: &EmbeddingSpace,
    a: f64,
    averaging: Averaging,
) -> Result<(DocumentMatrix, EmbedReport)> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::InvalidInput(format!("SIF parameter a must be positive, got {a}")));
    }
    let dim = space.dim();
    let rows: Vec<(Option<Vec<f64>>, usize, usize)> = docs
        .par_iter()
        .map(|doc| {
            let mut acc = vec![0.0; dim];
            let mut in_vocab = 0usize;
            let mut weight_sum = 0.0;
            for tok in &doc.tokens {
                let Some(idx) = space.index_of(tok) else { continue };
                let w = sif_weight(space.word_probs.get(tok).unwrap_or(0.0), a);
                for (s, v) in acc.iter_mut().zip(space.row(idx)) {
                    *s += w * v;
                }
                in_vocab += 1;
                weight_sum += w;
            }
            let oov = doc.tokens.len() - in_vocab;
            if in_vocab == 0 {
                return (None, 0, oov);
            }
            let denom = match averaging {
                Averaging::TokenCount => in_vocab as f64,
                Averaging::WeightSum => weight_sum,
            };
            acc.iter_mut().for_each(|x| *x /= denom);
            (Some(acc), in_vocab, oov)
        })
        .collect();

    let mut report = EmbedReport::default();
    let mut flat = Vec::new();
    let mut ids = Vec::new();
    let mut source_rows = Vec::new();
    for (i, (row, in_vocab, oov)) in rows.into_iter().enumerate() {
        report.in_vocab_tokens += in_vocab;
        report.oov_tokens += oov;
        match row {
            Some(r) => {
                flat.extend(r);
                ids.push(docs[i].id.clone());
                source_rows.push(i);
            }
            None => {
                report.excluded_ids.push(docs[i].id.clone());
                report.excluded_rows.push(i);
            }
        }
    }
    let matrix = DMatrix::from_row_slice(ids.len(), dim, &flat);
    Ok((DocumentMatrix { ids, source_rows, matrix, removed_component: None }, report))
}

/// Orients a direction so that its largest-magnitude entry is positive.
pub(crate) fn orient(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// First principal direction of the mean-centered rows.
pub fn top_principal_direction(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidInput(format!("top component removal needs at least 2 documents, got {n}")));
    }
    let means = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    let gram = centered.tr_mul(&centered);
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let eig = SymmetricEigen::new(gram);
    let (top, &lambda) =
        eig.eigenvalues.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty spectrum");
    if !(lambda > 0.0) || lambda <= energy * 1e-24 {
        return Err(Error::Degenerate("document matrix has rank 0 after centering".into()));
    }
    let mut u: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    u.iter_mut().for_each(|v| *v /= norm);
    orient(&mut u);
    Ok(u)
}

/// Replaces each row `x` by `x - (x . u) u`.
pub fn project_out(x: &mut DMatrix<f64>, u: &[f64]) {
    let u = DVector::from_column_slice(u);
    let coefs = &*x * &u;
    for (mut row, c) in x.row_iter_mut().zip(coefs.iter()) {
        for (r, ui) in row.iter_mut().zip(u.iter()) {
            *r -= c * ui;
        }
    }
}

pub fn remove_top_component(docs: &DocumentMatrix) -> Result<DocumentMatrix> {
    let u = top_principal_direction(&docs.matrix)?;
    let mut matrix = docs.matrix.clone();
    project_out(&mut matrix, &u);
    Ok(DocumentMatrix {
        ids: docs.ids.clone(),
        source_rows: docs.source_rows.clone(),
        matrix,
        removed_component: Some(u),
    })
}

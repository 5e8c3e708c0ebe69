//! Synthetic corpora with planted gradients, plus brute-force oracles.
//!
//! Document vectors follow a factor model `x = B f + e` where `B` is a random
//! orthonormal `D x K_true` basis, `f ~ N(0, factor_sd^2 I)` and
//! `e ~ N(0, isotropic_sd^2 I)`. Outcomes follow
//! `y = alpha + x.beta + gamma m_z + (x.delta) m_z + eps` with `m_z` the
//! sample-standardized moderator. All randomness comes from `ChaCha8Rng`.

use std::collections::HashSet;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{standardize, tokenize_all, CorpusRecord, StandardizedColumn, StopWords};
use crate::embedding::{
    embed_documents, estimate_word_probs, remove_top_component, Averaging, DocumentMatrix, EmbeddingSpace,
    DEFAULT_SIF_A,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModeratorSpec {
    /// Bernoulli(p) coded 0/1.
    Binary { p: f64 },
    /// Standard normal.
    Gaussian,
}

/// Effect sizes, either as raw coefficient norms or as targets that are
/// converted to norms by variance budgeting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EffectSpec {
    Magnitudes {
        beta: f64,
        delta: f64,
    },
    /// Population R² of the full model and partial R² of the interaction block.
    Targets {
        r2: f64,
        partial_r2: f64,
    },
}

/// Token-level corpus options. When present, documents are word sequences
/// whose SIF embedding (after top-component removal) defines `X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenSpec {
    pub vocab_size: usize,
    pub doc_len_min: usize,
    pub doc_len_max: usize,
    /// Planted words per pole and gradient.
    pub pole_words: usize,
    /// Spread of pole words around their direction.
    pub pole_noise: f64,
    /// Spread along a nuisance axis outside the factor subspace.
    pub nuisance_sd: f64,
}

impl Default for TokenSpec {
    fn default() -> Self {
        Self { vocab_size: 2000, doc_len_min: 8, doc_len_max: 30, pole_words: 12, pole_noise: 0.15, nuisance_sd: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n: usize,
    pub dim: usize,
    pub k_true: usize,
    pub factor_sd: f64,
    pub isotropic_sd: f64,
    pub noise_sd: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub effects: EffectSpec,
    /// Unit-norm directions; sampled uniformly within the factor subspace when absent.
    pub beta_direction: Option<Vec<f64>>,
    pub delta_direction: Option<Vec<f64>>,
    pub moderator: ModeratorSpec,
    pub tokens: Option<TokenSpec>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            dim: 50,
            k_true: 5,
            factor_sd: 1.0,
            isotropic_sd: 0.3,
            noise_sd: 1.0,
            alpha: 0.0,
            gamma: 0.3,
            effects: EffectSpec::Targets { r2: 0.6, partial_r2: 0.02 },
            beta_direction: None,
            delta_direction: None,
            moderator: ModeratorSpec::Binary { p: 0.5 },
            tokens: None,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.n < 4 {
            return bad(format!("n must be at least 4, got {}", self.n));
        }
        if self.dim == 0 || self.k_true == 0 || self.k_true > self.dim {
            return bad(format!("need 1 <= k_true <= dim, got k_true = {}, dim = {}", self.k_true, self.dim));
        }
        for (name, v) in
            [("factor_sd", self.factor_sd), ("isotropic_sd", self.isotropic_sd), ("noise_sd", self.noise_sd)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.alpha.is_finite() && self.gamma.is_finite()) {
            return bad("alpha and gamma must be finite".into());
        }
        match self.effects {
            EffectSpec::Magnitudes { beta, delta } => {
                if !(beta >= 0.0 && delta >= 0.0 && beta.is_finite() && delta.is_finite()) {
                    return bad(format!("magnitudes must be finite and non-negative, got {beta}, {delta}"));
                }
            }
            EffectSpec::Targets { r2, partial_r2 } => {
                if !(0.0..1.0).contains(&r2) || !(0.0..1.0).contains(&partial_r2) {
                    return bad(format!("targets must lie in [0, 1), got r2 = {r2}, partial_r2 = {partial_r2}"));
                }
                if !(self.noise_sd > 0.0) {
                    return bad("target effect sizes need noise_sd > 0".into());
                }
            }
        }
        if let ModeratorSpec::Binary { p } = self.moderator {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("binary moderator p must lie in (0, 1), got {p}"));
            }
        }
        for (name, d) in [("beta_direction", &self.beta_direction), ("delta_direction", &self.delta_direction)] {
            if let Some(d) = d {
                if d.len() != self.dim {
                    return Err(Error::Dimension(format!("{name} has {} entries, dim is {}", d.len(), self.dim)));
                }
                let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-9 {
                    return bad(format!("{name} must have unit norm, got {norm}"));
                }
            }
        }
        if let Some(t) = &self.tokens {
            if t.vocab_size < 2 || t.doc_len_min == 0 || t.doc_len_min > t.doc_len_max {
                return bad("token spec needs vocab_size >= 2 and 1 <= doc_len_min <= doc_len_max".into());
            }
            if !(t.pole_noise >= 0.0 && t.nuisance_sd >= 0.0) {
                return bad("pole_noise and nuisance_sd must be non-negative".into());
            }
            if self.k_true >= self.dim {
                return bad("token mode needs k_true < dim for the nuisance axis".into());
            }
        }
        Ok(())
    }

    /// The spec for replicate `index`, seeded with `seed + index`.
    pub fn replicate(&self, index: u64) -> Self {
        Self { seed: self.seed.wrapping_add(index), ..self.clone() }
    }
}

/// Signal variances implied by target R² and partial R²:
/// `(V_main, V_int)` in outcome units, given noise variance and `gamma`.
pub fn budget_variances(r2: f64, partial_r2: f64, noise_var: f64, gamma: f64) -> Result<(f64, f64)> {
    let v_int = partial_r2 * noise_var / (1.0 - partial_r2);
    let v_main = r2 * noise_var / (1.0 - r2) - gamma * gamma - v_int;
    if v_main < 0.0 {
        return Err(Error::InvalidInput(format!(
            "target R² = {r2} is too small to hold gamma² and the interaction variance"
        )));
    }
    Ok((v_main, v_int))
}

/// True coefficients in document-vector space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub alpha: f64,
    pub gamma: f64,
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
    pub beta_magnitude: f64,
    pub delta_magnitude: f64,
    /// Orthonormal factor basis, one column per factor, stored row-major (`dim x k_true`).
    pub basis: Vec<f64>,
    pub moderator_mean: f64,
    pub moderator_sd: f64,
    /// Planted pole words per gradient, token mode only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pole_words: Vec<PlantedPole>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPole {
    pub gradient: String,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

impl SynthTruth {
    /// `beta + m* delta` for a standardized moderator value.
    pub fn conditional(&self, m_star: f64) -> Vec<f64> {
        self.beta.iter().zip(&self.delta).map(|(b, d)| b + m_star * d).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    /// Numeric mode leaves `text` empty.
    pub records: Vec<CorpusRecord>,
    pub x: DMatrix<f64>,
    pub moderator: Vec<f64>,
    pub outcome: Vec<f64>,
    pub truth: SynthTruth,
    /// Word vectors, token mode only.
    pub vectors: Option<EmbeddingSpace>,
    /// Direction removed from the embedded documents, token mode only.
    pub removed_component: Option<Vec<f64>>,
}

impl SynthDataset {
    pub fn document_matrix(&self) -> DocumentMatrix {
        DocumentMatrix {
            ids: self.records.iter().map(|r| r.id.clone()).collect(),
            source_rows: (0..self.records.len()).collect(),
            matrix: self.x.clone(),
            removed_component: self.removed_component.clone(),
        }
    }

    pub fn moderator_z(&self) -> Result<StandardizedColumn> {
        standardize(&self.moderator)
    }

    /// Writes `id,text,outcome,moderator` in the schema the corpus loader reads.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "text", "outcome", "moderator"]).map_err(csv_err)?;
        for r in &self.records {
            w.write_record([r.id.as_str(), r.text.as_str(), &r.outcome.to_string(), &r.moderator.to_string()])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the word vectors as `token v1 ... vD` lines.
    pub fn write_vectors<W: Write>(&self, mut writer: W) -> Result<()> {
        let space = self
            .vectors
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("numeric datasets carry no word vectors".into()))?;
        for (i, tok) in space.tokens().iter().enumerate() {
            write!(writer, "{tok}")?;
            for v in space.row(i) {
                write!(writer, " {v}")?;
            }
            writeln!(writer)?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn normal_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random orthonormal `dim x k` basis via QR of a Gaussian matrix.
fn random_basis(rng: &mut ChaCha8Rng, dim: usize, k: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

/// Uniform direction within the column span of `basis`.
fn direction_in(rng: &mut ChaCha8Rng, basis: &DMatrix<f64>) -> Vec<f64> {
    let c = DVector::from_vec(normal_vec(rng, basis.ncols()));
    unit((basis * c).as_slice().to_vec())
}

fn sample_moderator(rng: &mut ChaCha8Rng, spec: ModeratorSpec, n: usize) -> Vec<f64> {
    let mut m: Vec<f64> = match spec {
        ModeratorSpec::Binary { p } => (0..n).map(|_| if rng.random_bool(p) { 1.0 } else { 0.0 }).collect(),
        ModeratorSpec::Gaussian => normal_vec(rng, n),
    };
    if m.iter().all(|v| *v == m[0]) {
        m[0] = match spec {
            ModeratorSpec::Binary { .. } => 1.0 - m[0],
            ModeratorSpec::Gaussian => m[0] + 1.0,
        };
    }
    m
}

fn sample_var(v: &[f64]) -> f64 {
    crate::corpus::mean_sd(v).1.powi(2)
}

/// Draws a dataset. Numeric mode samples `X` from the factor model; token
/// mode generates documents and embeds them with the library's own pipeline.
pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let basis = random_basis(&mut rng, spec.dim, spec.k_true);
    let mut beta_dir = spec.beta_direction.clone().unwrap_or_else(|| direction_in(&mut rng, &basis));
    let mut delta_dir = spec.delta_direction.clone().unwrap_or_else(|| direction_in(&mut rng, &basis));

    let (x, records_text, vectors, removed, pole_words) = match &spec.tokens {
        None => {
            let x = DMatrix::from_fn(spec.n, spec.dim, |_, _| 0.0);
            let mut x = x;
            for i in 0..spec.n {
                let f = DVector::from_vec(normal_vec(&mut rng, spec.k_true)) * spec.factor_sd;
                let row = &basis * f;
                for j in 0..spec.dim {
                    x[(i, j)] = row[j] + spec.isotropic_sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
            (x, None, None, None, Vec::new())
        }
        Some(t) => {
            let corpus = token_corpus(&mut rng, spec, t, &basis, &beta_dir, &delta_dir)?;
            let u = corpus.removed.clone();
            for dir in [&mut beta_dir, &mut delta_dir] {
                let c = dot(dir, &u);
                dir.iter_mut().zip(&u).for_each(|(d, ui)| *d -= c * ui);
                *dir = unit(std::mem::take(dir));
            }
            (corpus.x, Some(corpus.texts), Some(corpus.space), Some(u), corpus.poles)
        }
    };

    let moderator = sample_moderator(&mut rng, spec.moderator, spec.n);
    let mz = standardize(&moderator)?;

    let xb = &x * DVector::from_column_slice(&beta_dir);
    let xd = &x * DVector::from_column_slice(&delta_dir);
    let (beta_mag, delta_mag) = match spec.effects {
        EffectSpec::Magnitudes { beta, delta } => (beta, delta),
        EffectSpec::Targets { r2, partial_r2 } => {
            let (v_main, v_int) = budget_variances(r2, partial_r2, spec.noise_sd * spec.noise_sd, spec.gamma)?;
            let (var_b, var_d) = if vectors.is_none() {
                let along = |d: &[f64]| {
                    let proj = basis.tr_mul(&DVector::from_column_slice(d)).norm_squared();
                    spec.factor_sd.powi(2) * proj + spec.isotropic_sd.powi(2)
                };
                (along(&beta_dir), along(&delta_dir))
            } else {
                let inter: Vec<f64> = xd.iter().zip(&mz.values).map(|(a, m)| a * m).collect();
                (sample_var(xb.as_slice()), sample_var(&inter))
            };
            if !(var_b > 0.0 && var_d > 0.0) {
                return Err(Error::Degenerate("planted directions carry no variance in X".into()));
            }
            ((v_main / var_b).sqrt(), (v_int / var_d).sqrt())
        }
    };

    let outcome: Vec<f64> = (0..spec.n)
        .map(|i| {
            let m = mz.values[i];
            spec.alpha
                + beta_mag * xb[i]
                + spec.gamma * m
                + delta_mag * xd[i] * m
                + spec.noise_sd * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();

    let texts = records_text.unwrap_or_else(|| vec![String::new(); spec.n]);
    let records = texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| CorpusRecord {
            id: format!("s{:05}", i + 1),
            text,
            outcome: outcome[i],
            moderator: moderator[i],
        })
        .collect();

    let truth = SynthTruth {
        alpha: spec.alpha,
        gamma: spec.gamma,
        beta: beta_dir.iter().map(|v| v * beta_mag).collect(),
        delta: delta_dir.iter().map(|v| v * delta_mag).collect(),
        beta_magnitude: beta_mag,
        delta_magnitude: delta_mag,
        basis: (0..spec.dim).flat_map(|r| (0..spec.k_true).map(move |c| (r, c))).map(|(r, c)| basis[(r, c)]).collect(),
        moderator_mean: mz.mean,
        moderator_sd: mz.sd,
        pole_words,
    };
    Ok(SynthDataset { records, x, moderator, outcome, truth, vectors, removed_component: removed })
}

/// Replicates `0..count` with seeds `seed + index`, generated in parallel.
pub fn generate_replicates(spec: &SynthSpec, count: usize) -> Result<Vec<SynthDataset>> {
    (0..count as u64).into_par_iter().map(|i| generate(&spec.replicate(i))).collect()
}

struct TokenCorpus {
    texts: Vec<String>,
    space: EmbeddingSpace,
    x: DMatrix<f64>,
    removed: Vec<f64>,
    poles: Vec<PlantedPole>,
}

fn token_corpus(
    rng: &mut ChaCha8Rng,
    spec: &SynthSpec,
    t: &TokenSpec,
    basis: &DMatrix<f64>,
    beta_dir: &[f64],
    delta_dir: &[f64],
) -> Result<TokenCorpus> {
    // nuisance axis orthogonal to the factor subspace
    let mut nuisance = normal_vec(rng, spec.dim);
    for c in 0..basis.ncols() {
        let col = basis.column(c);
        let p = dot(&nuisance, col.as_slice());
        nuisance.iter_mut().zip(col.iter()).for_each(|(v, b)| *v -= p * b);
    }
    let nuisance = unit(nuisance);

    let mut rows: Vec<(String, Vec<f64>)> = Vec::with_capacity(t.vocab_size + 4 * t.pole_words);
    for w in 0..t.vocab_size {
        let f = DVector::from_vec(normal_vec(rng, spec.k_true)) * spec.factor_sd;
        let s: f64 = rng.sample::<f64, _>(StandardNormal) * t.nuisance_sd;
        let mut v: Vec<f64> = (basis * f).iter().copied().collect();
        for j in 0..spec.dim {
            v[j] += s * nuisance[j] + spec.isotropic_sd * rng.sample::<f64, _>(StandardNormal);
        }
        rows.push((format!("w{w:05}"), unit(v)));
    }

    let mut poles = Vec::new();
    for (name, dir) in [("main", beta_dir), ("int", delta_dir)] {
        let mut planted = PlantedPole { gradient: name.into(), positive: Vec::new(), negative: Vec::new() };
        for (sign, prefix) in [(1.0, "pos"), (-1.0, "neg")] {
            for i in 0..t.pole_words {
                let noise = normal_vec(rng, spec.dim);
                let v: Vec<f64> = dir
                    .iter()
                    .zip(&noise)
                    .map(|(d, e)| sign * d + t.pole_noise * e / (spec.dim as f64).sqrt())
                    .collect();
                let token = format!("{prefix}{name}{i:02}");
                rows.push((token.clone(), unit(v)));
                if sign > 0.0 {
                    planted.positive.push(token);
                } else {
                    planted.negative.push(token);
                }
            }
        }
        poles.push(planted);
    }

    // Zipf-like frequencies; planted words get mid-range weight
    let mut weights: Vec<f64> = (0..t.vocab_size).map(|r| 1.0 / (r as f64 + 2.0)).collect();
    let mid = 1.0 / (t.vocab_size as f64 / 4.0 + 2.0);
    weights.extend(std::iter::repeat_n(mid, rows.len() - t.vocab_size));
    let sampler = WeightedIndex::new(&weights).map_err(|e| Error::InvalidInput(e.to_string()))?;

    let texts: Vec<String> = (0..spec.n)
        .map(|_| {
            let len = rng.random_range(t.doc_len_min..=t.doc_len_max);
            (0..len).map(|_| rows[sampler.sample(rng)].0.as_str()).collect::<Vec<_>>().join(" ")
        })
        .collect();

    let mut space = EmbeddingSpace::from_rows(rows)?;
    let records: Vec<CorpusRecord> = texts
        .iter()
        .enumerate()
        .map(|(i, text)| CorpusRecord {
            id: format!("s{:05}", i + 1),
            text: text.clone(),
            outcome: 0.0,
            moderator: 0.0,
        })
        .collect();
    let docs = tokenize_all(&records, &StopWords::english());
    space.set_word_probs(estimate_word_probs(&docs)?);
    let (dm, _) = embed_documents(&docs, &space, DEFAULT_SIF_A, Averaging::TokenCount)?;
    if dm.n_docs() != spec.n {
        return Err(Error::Degenerate("generated documents fell out of vocabulary".into()));
    }
    let dm = remove_top_component(&dm)?;
    let removed = dm.removed_component.clone().expect("removal records its direction");
    Ok(TokenCorpus { texts, space, x: dm.matrix, removed, poles })
}

/// Vocabulary used by generated documents.
pub fn corpus_vocabulary(ds: &SynthDataset) -> HashSet<String> {
    ds.records.iter().flat_map(|r| r.text.split_whitespace().map(str::to_owned)).collect()
}

/// Solves `(X'X) b = X'y` by Gaussian elimination with partial pivoting.
pub fn oracle_ols(x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("design has {n} rows, outcome has {}", y.len())));
    }
    // augmented [X'X | X'y], accumulated entry by entry
    let mut a = vec![vec![0.0; p + 1]; p];
    for i in 0..p {
        for j in 0..p {
            a[i][j] = (0..n).map(|r| x[(r, i)] * x[(r, j)]).sum();
        }
        a[i][p] = (0..n).map(|r| x[(r, i)] * y[r]).sum();
    }
    let scale = a.iter().enumerate().map(|(i, row)| row[i].abs()).fold(0.0, f64::max);
    for col in 0..p {
        let pivot = (col..p).max_by(|&r1, &r2| a[r1][col].abs().total_cmp(&a[r2][col].abs())).expect("non-empty");
        if a[pivot][col].abs() <= scale * 1e-14 || a[pivot][col] == 0.0 {
            return Err(Error::Numerical(format!("normal equations are singular at column {col}")));
        }
        a.swap(col, pivot);
        for r in col + 1..p {
            let factor = a[r][col] / a[col][col];
            if factor != 0.0 {
                let (top, bottom) = a.split_at_mut(r);
                for (x, y) in bottom[0][col..].iter_mut().zip(&top[col][col..]) {
                    *x -= factor * y;
                }
            }
        }
    }
    let mut b = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|j| a[i][j] * b[j]).sum();
        b[i] = (a[i][p] - s) / a[i][i];
    }
    Ok(b)
}

/// Residual sum of squares of the oracle fit.
pub fn oracle_sse(x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    let b = oracle_ols(x, y)?;
    Ok((0..x.nrows())
        .map(|r| {
            let fit: f64 = (0..x.ncols()).map(|c| x[(r, c)] * b[c]).sum();
            (y[r] - fit).powi(2)
        })
        .sum())
}

/// `((SSE_r - SSE_f) / q) / (SSE_f / df2)` for nested designs.
pub fn oracle_incremental_f(x_full: &DMatrix<f64>, x_reduced: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    let (n, p_full) = x_full.shape();
    let p_red = x_reduced.ncols();
    if x_reduced.nrows() != n || p_red > p_full {
        return Err(Error::Dimension("reduced design must have the same rows and no more columns".into()));
    }
    if n <= p_full {
        return Err(Error::InvalidInput(format!("df2 = {} is not positive", n as i64 - p_full as i64)));
    }
    let df2 = (n - p_full) as f64;
    let sse_f = oracle_sse(x_full, y)?;
    let sse_r = oracle_sse(x_reduced, y)?;
    let q = p_full - p_red;
    if q == 0 {
        return Ok(0.0);
    }
    Ok(((sse_r - sse_f) / q as f64) / (sse_f / df2))
}

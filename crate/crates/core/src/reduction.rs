//! Feature standardization, PCA and the map from component space back to
//! embedding space.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::StandardizedColumn;
use crate::embedding::{orient, DocumentMatrix};
use crate::error::{Error, Result};
use crate::interpret::{pole_neighbors, NeighborIndex, Pole};
use crate::model::{build_design, fit_interaction, Block};

/// Features whose sample sd falls below this are treated as constant.
const MIN_FEATURE_SD: f64 = 1e-12;

/// Column means and standard deviations from the pre-PCA z-scoring step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Features with no variance; their sd was clamped to 1.
    pub clamped: Vec<usize>,
}

impl Scaler {
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 rows to standardize features, got {n}")));
        }
        let mut means = Vec::with_capacity(x.ncols());
        let mut sds = Vec::with_capacity(x.ncols());
        let mut clamped = Vec::new();
        for (j, col) in x.column_iter().enumerate() {
            let (mean, sd) = crate::corpus::mean_sd(col.as_slice());
            means.push(mean);
            if sd < MIN_FEATURE_SD || !sd.is_finite() {
                clamped.push(j);
                sds.push(1.0);
            } else {
                sds.push(sd);
            }
        }
        if !clamped.is_empty() {
            log::warn!("{} zero-variance feature(s) had their sd clamped to 1", clamped.len());
        }
        Ok(Scaler { means, sds, clamped })
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.means[j], self.sds[j]);
            col.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }
}

/// All principal directions of a standardized document matrix, computed once
/// and truncated per candidate `K`.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    pub scaler: Scaler,
    standardized: DMatrix<f64>,
    /// `D x r` right singular vectors, sorted by decreasing singular value.
    directions: DMatrix<f64>,
    singular_values: Vec<f64>,
    total_ss: f64,
}

impl PcaBasis {
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let scaler = Scaler::fit(x)?;
        let standardized = scaler.transform(x);
        let (n, d) = standardized.shape();

        // Tall matrices: the right singular vectors of S equal those of R in S = QR.
        let small = if n > d { standardized.clone().qr().r() } else { standardized.clone() };
        let svd = small.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD did not return right singular vectors".into()))?;

        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
        let mut directions = DMatrix::zeros(d, order.len());
        let mut singular_values = Vec::with_capacity(order.len());
        for (c, &i) in order.iter().enumerate() {
            let mut v: Vec<f64> = v_t.row(i).iter().copied().collect();
            orient(&mut v);
            directions.set_column(c, &DVector::from_vec(v));
            singular_values.push(svd.singular_values[i]);
        }
        let total_ss = standardized.iter().map(|v| v * v).sum();
        Ok(PcaBasis { scaler, standardized, directions, singular_values, total_ss })
    }

    pub fn n_obs(&self) -> usize {
        self.standardized.nrows()
    }

    pub fn max_k(&self) -> usize {
        (self.n_obs() - 1).min(self.scaler.dim()).min(self.singular_values.len())
    }

    /// Variance of each component, `sigma^2 / (n - 1)`.
    pub fn explained_variance(&self) -> Vec<f64> {
        let denom = (self.n_obs() - 1) as f64;
        self.singular_values.iter().map(|s| s * s / denom).collect()
    }

    pub fn truncate(&self, k: usize) -> Result<ReducedRepresentation> {
        if k == 0 || k > self.max_k() {
            return Err(Error::InvalidInput(format!("K = {k} outside 1..={}", self.max_k())));
        }
        let loadings = self.directions.columns(0, k).into_owned();
        let scores = &self.standardized * &loadings;
        let denom = (self.n_obs() - 1) as f64;
        let explained_variance: Vec<f64> = self.singular_values[..k].iter().map(|s| s * s / denom).collect();
        let explained_variance_ratio = self.singular_values[..k]
            .iter()
            .map(|s| if self.total_ss > 0.0 { s * s / self.total_ss } else { 0.0 })
            .collect();
        Ok(ReducedRepresentation {
            scores,
            loadings,
            scaler: self.scaler.clone(),
            k,
            explained_variance,
            explained_variance_ratio,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedRepresentation {
    /// `n x K` component scores.
    pub scores: DMatrix<f64>,
    /// `D x K` orthonormal loadings.
    pub loadings: DMatrix<f64>,
    pub scaler: Scaler,
    pub k: usize,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl ReducedRepresentation {
    pub fn retained_variance(&self) -> f64 {
        self.explained_variance_ratio.iter().sum()
    }
}

/// Standardizes features and projects onto the top `k` principal directions.
///
/// Each direction is oriented so its largest-magnitude loading is positive.
pub fn fit_pca(x: &DocumentMatrix, k: usize) -> Result<ReducedRepresentation> {
    let max_k = (x.n_docs().saturating_sub(1)).min(x.dim());
    if k == 0 || k > max_k {
        return Err(Error::InvalidInput(format!("K = {k} outside 1..={max_k}")));
    }
    PcaBasis::fit(&x.matrix)?.truncate(k)
}

/// `(P . coefs) / s`, elementwise in the last step.
pub fn backproject(coefs: &[f64], rep: &ReducedRepresentation) -> Result<Vec<f64>> {
    if coefs.len() != rep.k {
        return Err(Error::Dimension(format!("{} coefficients for K = {}", coefs.len(), rep.k)));
    }
    let v = &rep.loadings * DVector::from_column_slice(coefs);
    Ok(v.iter().zip(&rep.scaler.sds).map(|(p, s)| p / s).collect())
}

/// Per-K diagnostics from the dimensionality sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub k: usize,
    pub retained_variance: Option<f64>,
    pub coherence: Option<f64>,
    pub stability: Option<f64>,
    /// Combined score; `None` marks a failed fit, ranked below every other K.
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: Vec<usize>,
    pub entries: Vec<SweepEntry>,
    pub selected_k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Neighbors per pole used for the coherence measure.
    pub coherence_neighbors: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { coherence_neighbors: 10 }
    }
}

/// Inclusive `start..=stop` grid with the given step.
pub fn k_grid(start: usize, stop: usize, step: usize) -> Vec<usize> {
    if step == 0 || start > stop {
        return vec![start];
    }
    (start..=stop).step_by(step).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Mean pairwise cosine among the neighbors of each pole, averaged over poles.
fn pole_coherence(g: &[f64], index: &NeighborIndex<'_>, top_n: usize) -> Result<f64> {
    let mut per_pole = Vec::with_capacity(2);
    for pole in [Pole::Positive, Pole::Negative] {
        let nb = pole_neighbors(g, index, pole, top_n, "sweep")?;
        let vecs: Vec<&[f64]> = nb.neighbors.iter().filter_map(|n| index.space().vector(&n.token)).collect();
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                sum += cosine(vecs[i], vecs[j]);
                pairs += 1;
            }
        }
        if pairs > 0 {
            per_pole.push(sum / pairs as f64);
        }
    }
    if per_pole.is_empty() {
        return Err(Error::InvalidInput("not enough neighbor tokens to score coherence".into()));
    }
    Ok(per_pole.iter().sum::<f64>() / per_pole.len() as f64)
}

fn min_max(values: &[Option<f64>]) -> Vec<Option<f64>> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let (lo, hi) = present.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    values.iter().map(|v| v.map(|v| if hi - lo > 1e-15 { (v - lo) / (hi - lo) } else { 1.0 })).collect()
}

/// Scores each candidate `K` by retained variance, pole-neighborhood coherence
/// of the main gradient and its stability relative to the previous grid point.
///
/// The combined score is the mean of the three min-max-normalized criteria;
/// ties go to the smaller `K`.
pub fn sweep_k(
    x: &DocumentMatrix,
    y: &StandardizedColumn,
    m: &StandardizedColumn,
    grid: &[usize],
    index: &NeighborIndex<'_>,
    options: SweepOptions,
) -> Result<SweepResult> {
    let mut grid: Vec<usize> = grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() {
        return Err(Error::InvalidInput("sweep grid is empty".into()));
    }
    if y.len() != x.n_docs() || m.len() != x.n_docs() {
        return Err(Error::Dimension(format!(
            "{} documents but {} outcomes and {} moderator values",
            x.n_docs(),
            y.len(),
            m.len()
        )));
    }
    let basis = PcaBasis::fit(&x.matrix)?;

    struct Eval {
        retained: f64,
        coherence: f64,
        g_main: Vec<f64>,
    }
    let evals: Vec<Result<Eval>> = grid
        .par_iter()
        .map(|&k| {
            let rep = basis.truncate(k)?;
            let design = build_design(&rep.scores, &m.values)?;
            let fit = fit_interaction(&design, &y.values)?;
            let g_main = backproject(fit.block(Block::Semantic), &rep)?;
            let coherence = pole_coherence(&g_main, index, options.coherence_neighbors)?;
            Ok(Eval { retained: rep.retained_variance(), coherence, g_main })
        })
        .collect();

    let mut retained = Vec::with_capacity(grid.len());
    let mut coherence = Vec::with_capacity(grid.len());
    let mut stability = Vec::with_capacity(grid.len());
    let mut errors = Vec::with_capacity(grid.len());
    let mut previous: Option<&[f64]> = None;
    for (k, eval) in grid.iter().zip(&evals) {
        match eval {
            Ok(e) => {
                retained.push(Some(e.retained));
                coherence.push(Some(e.coherence));
                stability.push(Some(previous.map_or(1.0, |p| cosine(&e.g_main, p))));
                errors.push(None);
                previous = Some(&e.g_main);
            }
            Err(err) => {
                log::warn!("sweep: K = {k} failed: {err}");
                retained.push(None);
                coherence.push(None);
                stability.push(None);
                errors.push(Some(err.to_string()));
            }
        }
    }

    let (nr, nc, ns) = (min_max(&retained), min_max(&coherence), min_max(&stability));
    let mut entries = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, &k) in grid.iter().enumerate() {
        let score = match (nr[i], nc[i], ns[i]) {
            (Some(a), Some(b), Some(c)) => Some((a + b + c) / 3.0),
            _ => None,
        };
        if let Some(s) = score {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((k, s));
            }
        }
        entries.push(SweepEntry {
            k,
            retained_variance: retained[i],
            coherence: coherence[i],
            stability: stability[i],
            score,
            error: errors[i].clone(),
        });
    }
    let selected_k = match best {
        Some((k, _)) => k,
        None if grid.len() == 1 => grid[0],
        None => return Err(Error::Numerical("every K in the sweep grid failed to fit".into())),
    };
    Ok(SweepResult { grid, entries, selected_k })
}

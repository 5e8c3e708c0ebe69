//! Moderated regression of the outcome on component scores.
//!
//! The design is `[1 | Z | m | Z * m]` with coefficients stacked as
//! `(alpha, beta, gamma, delta)`. Fitting goes through a Householder QR of the
//! design; `(X'X)^-1` is only formed from `R^-1` to build the covariance.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::corpus::StandardizedColumn;
use crate::error::{Error, Result};
use crate::reduction::{backproject, ReducedRepresentation};
use crate::stats::{f_sf, t_two_sided};

/// Condition numbers above this are logged.
pub const CONDITION_WARN: f64 = 1e8;
/// Condition numbers above this abort the fit.
pub const CONDITION_FAIL: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Intercept,
    Semantic,
    Moderator,
    Interaction,
}

impl Block {
    pub fn name(self) -> &'static str {
        match self {
            Block::Intercept => "intercept",
            Block::Semantic => "semantic (beta)",
            Block::Moderator => "moderator (gamma)",
            Block::Interaction => "interaction (delta)",
        }
    }

    /// Column range of this block in a design with `k` components.
    pub fn columns(self, k: usize) -> Range<usize> {
        match self {
            Block::Intercept => 0..1,
            Block::Semantic => 1..k + 1,
            Block::Moderator => k + 1..k + 2,
            Block::Interaction => k + 2..2 * k + 2,
        }
    }

    pub fn of_column(col: usize, k: usize) -> Block {
        [Block::Intercept, Block::Semantic, Block::Moderator, Block::Interaction]
            .into_iter()
            .find(|b| b.columns(k).contains(&col))
            .unwrap_or(Block::Interaction)
    }
}

/// Degrees of freedom of every test in the interaction model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionDf {
    pub overall: (usize, usize),
    pub block: (usize, usize),
    pub error: usize,
}

impl InteractionDf {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        let params = 2 * k + 2;
        if n <= params {
            return Err(Error::InvalidInput(format!("n = {n} must exceed 2K + 2 = {params}")));
        }
        let error = n - params;
        Ok(Self { overall: (2 * k + 1, error), block: (k, error), error })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDesign {
    pub matrix: DMatrix<f64>,
    pub k: usize,
}

impl InteractionDesign {
    pub fn n_obs(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.matrix.ncols()
    }

    /// The design without the interaction block.
    pub fn reduced(&self) -> DMatrix<f64> {
        self.matrix.columns(0, self.k + 2).into_owned()
    }
}

pub fn build_design(z: &DMatrix<f64>, m: &[f64]) -> Result<InteractionDesign> {
    let (n, k) = z.shape();
    if m.len() != n {
        return Err(Error::Dimension(format!("{n} score rows but {} moderator values", m.len())));
    }
    let mut x = DMatrix::zeros(n, 2 * k + 2);
    x.column_mut(0).fill(1.0);
    x.columns_mut(1, k).copy_from(z);
    x.column_mut(k + 1).copy_from_slice(m);
    for j in 0..k {
        for i in 0..n {
            x[(i, k + 2 + j)] = z[(i, j)] * m[i];
        }
    }
    Ok(InteractionDesign { matrix: x, k })
}

/// Plain least-squares fit with QR-based covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    /// `(X'X)^-1`.
    pub xtx_inv: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    pub sse: f64,
    pub sigma2: f64,
    pub df_error: usize,
    pub condition_number: f64,
}

impl OlsFit {
    pub fn standard_error(&self, j: usize) -> f64 {
        self.covariance[(j, j)].sqrt()
    }
}

/// Least squares via Householder QR; `label` names the block of a column for
/// rank-deficiency reports.
pub fn ols(x: &DMatrix<f64>, y: &[f64], label: impl Fn(usize) -> String) -> Result<OlsFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} design rows but {} outcomes", y.len())));
    }
    if n <= p {
        return Err(Error::InvalidInput(format!("need more observations ({n}) than parameters ({p})")));
    }
    let qr = x.clone().qr();
    let r = qr.r();

    let sv = r.singular_values();
    let (smax, smin) = sv.iter().fold((0.0_f64, f64::INFINITY), |(hi, lo), s| (hi.max(*s), lo.min(*s)));
    let condition_number = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition_number <= CONDITION_FAIL) {
        let diag_max = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
        let worst = (0..p).min_by(|&a, &b| r[(a, a)].abs().total_cmp(&r[(b, b)].abs())).unwrap_or(0);
        log::debug!("smallest |R_jj| = {:e} of {:e}", r[(worst, worst)].abs(), diag_max);
        return Err(Error::RankDeficient { block: label(worst), condition: condition_number });
    }
    if condition_number > CONDITION_WARN {
        log::warn!("design condition number {condition_number:.3e} exceeds {CONDITION_WARN:e}");
    }

    let mut qty = DVector::from_column_slice(y);
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, p).into_owned();
    let coefficients =
        r.solve_upper_triangular(&rhs).ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Numerical("triangular inverse failed".into()))?;
    let mut xtx_inv = &r_inv * r_inv.transpose();
    xtx_inv = (&xtx_inv + xtx_inv.transpose()) * 0.5;

    let fitted = x * &coefficients;
    let residuals = DVector::from_column_slice(y) - &fitted;
    let sse = residuals.norm_squared();
    let df_error = n - p;
    let sigma2 = sse / df_error as f64;
    let covariance = &xtx_inv * sigma2;
    Ok(OlsFit { coefficients, xtx_inv, covariance, fitted, residuals, sse, sigma2, df_error, condition_number })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FTest {
    pub statistic: f64,
    pub df1: usize,
    pub df2: usize,
    pub p_value: f64,
}

impl FTest {
    pub fn new(statistic: f64, df1: usize, df2: usize) -> Self {
        Self { statistic, df1, df2, p_value: f_sf(statistic, df1 as f64, df2 as f64) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Wald statistic `c' V_cc^-1 c / q` for the coefficients in `cols`.
pub fn wald_f(coefficients: &DVector<f64>, covariance: &DMatrix<f64>, cols: Range<usize>, df2: usize) -> Result<FTest> {
    let q = cols.len();
    if q == 0 {
        return Err(Error::InvalidInput("empty coefficient block".into()));
    }
    let c = coefficients.rows(cols.start, q).into_owned();
    let v = covariance.view((cols.start, cols.start), (q, q)).into_owned();
    let chol = v.cholesky().ok_or_else(|| Error::Numerical("block covariance is singular".into()))?;
    let solved = chol.solve(&c);
    Ok(FTest::new(c.dot(&solved) / q as f64, q, df2))
}

/// Everything reported for one moderated-regression fit.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionFit {
    pub n: usize,
    pub k: usize,
    pub ols: OlsFit,
    pub sst: f64,
    pub r2: f64,
    pub adj_r2: f64,
    pub overall_f: FTest,
    pub beta_f: FTest,
    pub delta_f: FTest,
    pub gamma_t: TTest,
    /// SSE of the model without the interaction block.
    pub sse_reduced: f64,
    /// `None` when the reduced model fits perfectly.
    pub partial_r2_delta: Option<f64>,
}

impl InteractionFit {
    pub fn alpha(&self) -> f64 {
        self.ols.coefficients[0]
    }

    pub fn gamma(&self) -> f64 {
        self.ols.coefficients[self.k + 1]
    }

    pub fn block(&self, block: Block) -> &[f64] {
        &self.ols.coefficients.as_slice()[block.columns(self.k)]
    }

    pub fn df(&self) -> InteractionDf {
        InteractionDf {
            overall: (2 * self.k + 1, self.ols.df_error),
            block: (self.k, self.ols.df_error),
            error: self.ols.df_error,
        }
    }
}

fn block_label(k: usize) -> impl Fn(usize) -> String {
    move |col| Block::of_column(col, k).name().to_owned()
}

/// Fits the full model plus the model without the interaction block and
/// assembles all tests.
pub fn fit_interaction(design: &InteractionDesign, y: &[f64]) -> Result<InteractionFit> {
    let k = design.k;
    let n = design.n_obs();
    InteractionDf::new(n, k)?;
    let full = ols(&design.matrix, y, block_label(k))?;
    let reduced = ols(&design.reduced(), y, block_label(k))?;

    let mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let r2 = if sst > 0.0 { 1.0 - full.sse / sst } else { 0.0 };
    let adj_r2 = 1.0 - (1.0 - r2) * (n - 1) as f64 / full.df_error as f64;
    let df1 = 2 * k + 1;
    let overall_stat = ((sst - full.sse) / df1 as f64) / full.sigma2;
    let overall_f = FTest::new(overall_stat, df1, full.df_error);

    let beta_f = wald_f(&full.coefficients, &full.covariance, Block::Semantic.columns(k), full.df_error)?;
    let delta_f = wald_f(&full.coefficients, &full.covariance, Block::Interaction.columns(k), full.df_error)?;
    let gamma_t = t_test(&full, k + 1);
    let partial = partial_r2(&full, &reduced);

    Ok(InteractionFit {
        n,
        k,
        sst,
        r2,
        adj_r2,
        overall_f,
        beta_f,
        delta_f,
        gamma_t,
        sse_reduced: reduced.sse,
        partial_r2_delta: partial,
        ols: full,
    })
}

fn t_test(fit: &OlsFit, j: usize) -> TTest {
    let estimate = fit.coefficients[j];
    let se = fit.standard_error(j);
    let t = estimate / se;
    TTest { estimate, se, t, df: fit.df_error, p_value: t_two_sided(t, fit.df_error as f64) }
}

/// `None` when the reduced fit is exact up to rounding.
fn partial_r2(full: &OlsFit, reduced: &OlsFit) -> Option<f64> {
    let scale = reduced.fitted.norm_squared() + reduced.sse;
    (reduced.sse > scale * 1e-24).then(|| ((reduced.sse - full.sse) / reduced.sse).clamp(0.0, 1.0))
}

/// Wald F test for the semantic or interaction block.
pub fn wald_block_f(fit: &InteractionFit, block: Block) -> Result<FTest> {
    if !matches!(block, Block::Semantic | Block::Interaction) {
        return Err(Error::InvalidInput(format!("{} is not a K-coefficient block", block.name())));
    }
    wald_f(&fit.ols.coefficients, &fit.ols.covariance, block.columns(fit.k), fit.ols.df_error)
}

pub fn gamma_t_test(fit: &InteractionFit) -> TTest {
    t_test(&fit.ols, fit.k + 1)
}

/// `(SSE_reduced - SSE_full) / SSE_reduced`; `None` if the reduced SSE is zero.
pub fn partial_r2_delta(full: &OlsFit, reduced: &OlsFit) -> Option<f64> {
    partial_r2(full, reduced)
}

/// How to choose moderator values for conditional gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModeratorProbe {
    Rule(ProbeRule),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeRule {
    /// Binary moderators use their group values, anything else `±1 sd`.
    Auto,
    /// Standardized values of the two coded groups.
    AutoBinary,
    /// One standard deviation below and above the mean.
    #[serde(rename = "pm1sd")]
    PlusMinusOneSd,
}

impl Default for ModeratorProbe {
    fn default() -> Self {
        ModeratorProbe::Rule(ProbeRule::Auto)
    }
}

/// A labelled moderator value on the standardized scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeValue {
    pub label: String,
    pub m_star: f64,
}

fn binary_levels(raw: &[f64]) -> Option<(f64, f64)> {
    let first = *raw.first()?;
    let other = raw.iter().copied().find(|v| *v != first)?;
    if raw.iter().all(|v| *v == first || *v == other) {
        Some((first.min(other), first.max(other)))
    } else {
        None
    }
}

/// Resolves a probe specification against the moderator column.
///
/// `raw` holds the moderator in raw units (0/1 for coded groups).
pub fn probe_values(probe: &ModeratorProbe, m: &StandardizedColumn, raw: &[f64]) -> Result<Vec<ProbeValue>> {
    let group = |lo: f64, hi: f64| {
        vec![
            ProbeValue { label: format!("m = {lo}"), m_star: m.to_standard(lo) },
            ProbeValue { label: format!("m = {hi}"), m_star: m.to_standard(hi) },
        ]
    };
    let sd = || {
        vec![
            ProbeValue { label: "m = -1 SD".into(), m_star: -1.0 },
            ProbeValue { label: "m = +1 SD".into(), m_star: 1.0 },
        ]
    };
    Ok(match probe {
        ModeratorProbe::Values(v) => v.iter().map(|&z| ProbeValue { label: format!("m* = {z}"), m_star: z }).collect(),
        ModeratorProbe::Rule(ProbeRule::PlusMinusOneSd) => sd(),
        ModeratorProbe::Rule(ProbeRule::AutoBinary) => {
            let (lo, hi) = binary_levels(raw).ok_or_else(|| {
                Error::InvalidInput("auto-binary probes need a moderator with exactly two values".into())
            })?;
            group(lo, hi)
        }
        ModeratorProbe::Rule(ProbeRule::Auto) => match binary_levels(raw) {
            Some((lo, hi)) => group(lo, hi),
            None => sd(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalGradient {
    pub label: String,
    pub m_star: f64,
    pub gradient: Vec<f64>,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientNorms {
    pub main: f64,
    pub interaction: f64,
    /// Norms of `P beta` and `P delta` before dividing by the feature sds.
    pub main_unscaled: f64,
    pub interaction_unscaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSet {
    pub main: Vec<f64>,
    pub interaction: Vec<f64>,
    pub conditional: Vec<ConditionalGradient>,
    pub norms: GradientNorms,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `g(m*) = g_main + m* g_int`; `m* = 0` returns `g_main` untouched.
pub fn conditional_gradient(main: &[f64], interaction: &[f64], m_star: f64) -> Vec<f64> {
    if m_star == 0.0 {
        return main.to_vec();
    }
    main.iter().zip(interaction).map(|(g, d)| g + m_star * d).collect()
}

/// Back-projects `beta` and `delta` and forms the conditional gradients.
pub fn gradients(fit: &InteractionFit, rep: &ReducedRepresentation, probes: &[ProbeValue]) -> Result<GradientSet> {
    if fit.k != rep.k {
        return Err(Error::Dimension(format!("fit has K = {} but reduction has K = {}", fit.k, rep.k)));
    }
    let beta = fit.block(Block::Semantic);
    let delta = fit.block(Block::Interaction);
    let main = backproject(beta, rep)?;
    let interaction = backproject(delta, rep)?;
    let unscaled = |c: &[f64]| l2((&rep.loadings * DVector::from_column_slice(c)).as_slice());
    let conditional = probes
        .iter()
        .map(|p| {
            let g = conditional_gradient(&main, &interaction, p.m_star);
            ConditionalGradient { label: p.label.clone(), m_star: p.m_star, norm: l2(&g), gradient: g }
        })
        .collect();
    let norms = GradientNorms {
        main: l2(&main),
        interaction: l2(&interaction),
        main_unscaled: unscaled(beta),
        interaction_unscaled: unscaled(delta),
    };
    Ok(GradientSet { main, interaction, conditional, norms })
}

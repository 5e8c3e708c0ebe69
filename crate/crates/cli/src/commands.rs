//! One function per subcommand. Each reads its prerequisites from the run
//! directory, writes its outputs under `<run>/<stage>/` and finishes with a
//! manifest.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use modssd_core::corpus::{load_records_from_path, standardize, tokenize_all, DropReport, StopWords};
use modssd_core::embedding::{
    embed_documents, estimate_word_probs, load_vectors, remove_top_component, DocumentMatrix, EmbedReport,
    EmbeddingSpace, VectorLoadReport, WordProbs,
};
use modssd_core::interpret::{build_report, render_markdown, InterpretationReport, NeighborIndex, Redactor};
use modssd_core::model::{
    build_design, fit_interaction, gradients, probe_values, FTest, GradientSet, InteractionDf, ProbeValue, TTest,
};
use modssd_core::reduction::{sweep_k, PcaBasis, SweepOptions, SweepResult};
use modssd_core::stats::PValue;
use modssd_core::synth::{generate, TokenSpec};
use modssd_core::{CorpusRecord, StandardizedColumn};
use serde::{Deserialize, Serialize};

use crate::artifacts::{decode_matrix, encode_matrix, load_stage, read_json, to_json, StageWriter};
use crate::config::RunConfig;
use crate::error::CliError;

pub const EMBED_VERSION: u32 = 1;
pub const SWEEP_VERSION: u32 = 1;
pub const FIT_VERSION: u32 = 1;
pub const INTERPRET_VERSION: u32 = 1;
pub const REPORT_VERSION: u32 = 1;
pub const SYNTH_VERSION: u32 = 1;

const ALPHA: f64 = 0.05;

/// Metadata stored next to the document matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedMeta {
    pub ids: Vec<String>,
    pub source_rows: Vec<usize>,
    pub outcome: Vec<f64>,
    pub moderator: Vec<f64>,
    pub dim: usize,
    pub removed_component: Option<Vec<f64>>,
    /// Corpus tokens present in the vector file, sorted.
    pub vocabulary: Vec<String>,
    pub drops: DropReport,
    pub embed: EmbedReport,
    pub vectors: VectorLoadReport,
}

struct Embedded {
    meta: EmbedMeta,
    docs: DocumentMatrix,
    data_hash: String,
}

fn stopwords(cfg: &RunConfig) -> Result<StopWords, CliError> {
    match &cfg.paths.stopwords {
        Some(p) => Ok(StopWords::from_reader(File::open(p).map_err(|e| CliError::io(p.display(), e))?)?),
        None => Ok(StopWords::english()),
    }
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::io(path.display(), e))
}

pub fn embed(cfg: &RunConfig, run_dir: &Path) -> Result<String, CliError> {
    let data = cfg.require_data()?;
    let vectors_path = cfg.require_vectors()?;
    let sw = stopwords(cfg)?;
    let loaded = load_records_from_path(data, &cfg.columns)?;
    if loaded.drops.dropped() > 0 {
        log::warn!("{} of {} rows dropped during ingest", loaded.drops.dropped(), loaded.drops.input_rows);
    }
    let docs = tokenize_all(&loaded.records, &sw);
    let corpus_tokens: HashSet<String> = docs.iter().flat_map(|d| d.tokens.iter().cloned()).collect();
    let (mut space, vec_report) = load_vectors(open(vectors_path)?, Some(&corpus_tokens))?;
    let probs = match &cfg.paths.word_counts {
        Some(p) => WordProbs::from_counts_reader(open(p)?)?,
        None => estimate_word_probs(&docs)?,
    };
    space.set_word_probs(probs);

    let (dm, report) = embed_documents(&docs, &space, cfg.embedding.sif_a, cfg.embedding.averaging)?;
    if dm.n_docs() == 0 {
        return Err(CliError::Data("no document contains an in-vocabulary token".into()));
    }
    if !report.excluded_ids.is_empty() {
        log::warn!("{} documents had no in-vocabulary token and were excluded", report.excluded_ids.len());
    }
    let dm = if cfg.embedding.remove_top_component { remove_top_component(&dm)? } else { dm };

    let records = &loaded.records;
    let vocabulary: BTreeSet<String> = space.tokens().iter().cloned().collect();
    let meta = EmbedMeta {
        ids: dm.ids.clone(),
        source_rows: dm.source_rows.clone(),
        outcome: dm.source_rows.iter().map(|&r| records[r].outcome).collect(),
        moderator: dm.source_rows.iter().map(|&r| records[r].moderator).collect(),
        dim: dm.dim(),
        removed_component: dm.removed_component.clone(),
        vocabulary: vocabulary.into_iter().collect(),
        drops: loaded.drops,
        embed: report,
        vectors: vec_report,
    };

    let mut w = StageWriter::new(run_dir, "embed", EMBED_VERSION)?;
    w.input_file("data", data)?;
    w.input_file("vectors", vectors_path)?;
    if let Some(p) = &cfg.paths.stopwords {
        w.input_file("stopwords", p)?;
    }
    if let Some(p) = &cfg.paths.word_counts {
        w.input_file("word_counts", p)?;
    }
    w.write("documents.bin", &encode_matrix(&dm.matrix))?;
    w.write("documents.json", &to_json(&meta))?;
    w.finish(cfg)?;
    Ok(format!(
        "embedded {} documents in {} dimensions ({} rows dropped, {} excluded)",
        dm.n_docs(),
        dm.dim(),
        meta.drops.dropped(),
        meta.embed.excluded_ids.len()
    ))
}

fn load_embedded(run_dir: &Path) -> Result<Embedded, CliError> {
    let manifest = load_stage(run_dir, "embed", "embed")?;
    let dir = run_dir.join("embed");
    let meta: EmbedMeta = read_json(&dir.join("documents.json"))?;
    let bytes = std::fs::read(dir.join("documents.bin")).map_err(|e| CliError::io("documents.bin", e))?;
    let matrix = decode_matrix(&bytes)?;
    if matrix.nrows() != meta.ids.len() {
        return Err(CliError::Data("document matrix and metadata disagree: rerun `modssd embed`".into()));
    }
    let docs = DocumentMatrix {
        ids: meta.ids.clone(),
        source_rows: meta.source_rows.clone(),
        matrix,
        removed_component: meta.removed_component.clone(),
    };
    let data_hash = manifest.inputs.get("data").cloned().unwrap_or_default();
    Ok(Embedded { meta, docs, data_hash })
}

fn standardized(meta: &EmbedMeta) -> Result<(StandardizedColumn, StandardizedColumn), CliError> {
    Ok((standardize(&meta.outcome)?, standardize(&meta.moderator)?))
}

fn neighbor_space(cfg: &RunConfig, meta: &EmbedMeta) -> Result<EmbeddingSpace, CliError> {
    let path = cfg.require_vectors()?;
    let keep: Option<HashSet<String>> =
        (!cfg.interpret.full_vocabulary).then(|| meta.vocabulary.iter().cloned().collect());
    let (space, _) = load_vectors(open(path)?, keep.as_ref())?;
    Ok(space)
}

pub fn sweep(cfg: &RunConfig, run_dir: &Path) -> Result<String, CliError> {
    let e = load_embedded(run_dir)?;
    let (y, m) = standardized(&e.meta)?;
    let space = neighbor_space(cfg, &e.meta)?;
    let sw = stopwords(cfg)?;
    let index = NeighborIndex::new(&space, None, &sw);
    let grid = cfg.sweep.grid();
    let options = SweepOptions { coherence_neighbors: cfg.sweep.coherence_neighbors };
    let result = sweep_k(&e.docs, &y, &m, &grid, &index, options)?;

    let mut w = StageWriter::new(run_dir, "sweep", SWEEP_VERSION)?;
    w.input_hash("embed", crate::artifacts::sha256_file(&run_dir.join("embed/manifest.json"))?);
    w.input_file("vectors", cfg.require_vectors()?)?;
    w.write("sweep.json", &to_json(&result))?;
    w.finish(cfg)?;
    Ok(format!("selected K = {} from grid {:?}", result.selected_k, result.grid))
}

/// Fit statistics in a serializable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n: usize,
    pub k: usize,
    pub k_source: String,
    pub df: InteractionDf,
    pub r2: f64,
    pub adj_r2: f64,
    pub sse: f64,
    pub sse_reduced: f64,
    pub sigma2: f64,
    pub condition_number: f64,
    pub intercept: TTest,
    pub gamma: TTest,
    pub overall_f: FTest,
    pub beta_f: FTest,
    pub delta_f: FTest,
    pub partial_r2_delta: Option<f64>,
    pub retained_variance: f64,
    pub outcome_mean: f64,
    pub outcome_sd: f64,
    pub moderator_mean: f64,
    pub moderator_sd: f64,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub probes: Vec<ProbeValue>,
}

fn selected_k(cfg: &RunConfig, run_dir: &Path) -> Result<(usize, String), CliError> {
    if let Some(k) = cfg.sweep.k {
        return Ok((k, "config".into()));
    }
    if !run_dir.join("sweep/manifest.json").exists() {
        return Err(CliError::Data(format!(
            "no K chosen: run `modssd sweep` first or set sweep.k (missing sweep artifacts in {})",
            run_dir.display()
        )));
    }
    load_stage(run_dir, "sweep", "sweep")?;
    let s: SweepResult = read_json(&run_dir.join("sweep/sweep.json"))?;
    Ok((s.selected_k, "sweep".into()))
}

pub fn fit(cfg: &RunConfig, run_dir: &Path) -> Result<String, CliError> {
    let e = load_embedded(run_dir)?;
    let (k, k_source) = selected_k(cfg, run_dir)?;
    let (y, m) = standardized(&e.meta)?;
    let rep = PcaBasis::fit(&e.docs.matrix)?.truncate(k)?;
    let design = build_design(&rep.scores, &m.values)?;
    let fit = fit_interaction(&design, &y.values)?;
    let probes = probe_values(&cfg.m_star, &m, &e.meta.moderator)?;
    let grads = gradients(&fit, &rep, &probes)?;

    let ols = &fit.ols;
    let summary = FitSummary {
        n: fit.n,
        k,
        k_source,
        df: fit.df(),
        r2: fit.r2,
        adj_r2: fit.adj_r2,
        sse: ols.sse,
        sse_reduced: fit.sse_reduced,
        sigma2: ols.sigma2,
        condition_number: ols.condition_number,
        intercept: {
            let se = ols.standard_error(0);
            let t = fit.alpha() / se;
            TTest {
                estimate: fit.alpha(),
                se,
                t,
                df: ols.df_error,
                p_value: modssd_core::stats::t_two_sided(t, ols.df_error as f64),
            }
        },
        gamma: fit.gamma_t,
        overall_f: fit.overall_f,
        beta_f: fit.beta_f,
        delta_f: fit.delta_f,
        partial_r2_delta: fit.partial_r2_delta,
        retained_variance: rep.retained_variance(),
        outcome_mean: y.mean,
        outcome_sd: y.sd,
        moderator_mean: m.mean,
        moderator_sd: m.sd,
        coefficients: ols.coefficients.iter().copied().collect(),
        standard_errors: (0..ols.coefficients.len()).map(|j| ols.standard_error(j)).collect(),
        probes,
    };

    let mut w = StageWriter::new(run_dir, "fit", FIT_VERSION)?;
    w.input_hash("embed", crate::artifacts::sha256_file(&run_dir.join("embed/manifest.json"))?);
    if summary.k_source == "sweep" {
        w.input_hash("sweep", crate::artifacts::sha256_file(&run_dir.join("sweep/manifest.json"))?);
    }
    w.write("fit.json", &to_json(&summary))?;
    w.write("gradients.json", &to_json(&grads))?;
    w.finish(cfg)?;
    Ok(format!(
        "K = {k}: R² = {:.3}, interaction F({}, {}) = {:.3}, p = {}",
        summary.r2,
        summary.delta_f.df1,
        summary.delta_f.df2,
        summary.delta_f.statistic,
        PValue(summary.delta_f.p_value)
    ))
}

fn load_records_checked(cfg: &RunConfig, e: &Embedded) -> Result<Vec<CorpusRecord>, CliError> {
    let data = cfg.require_data()?;
    if crate::artifacts::sha256_file(data)? != e.data_hash {
        return Err(CliError::Data(format!("{} changed since embedding: rerun `modssd embed`", data.display())));
    }
    Ok(load_records_from_path(data, &cfg.columns)?.records)
}

fn redactor(cfg: &RunConfig) -> Result<Redactor, CliError> {
    match &cfg.paths.lexicon {
        Some(p) => Ok(Redactor::from_reader(open(p)?)?),
        None => Ok(Redactor::default()),
    }
}

pub fn interpret(cfg: &RunConfig, run_dir: &Path) -> Result<String, CliError> {
    let e = load_embedded(run_dir)?;
    load_stage(run_dir, "fit", "fit")?;
    let grads: GradientSet = read_json(&run_dir.join("fit/gradients.json"))?;
    let records = load_records_checked(cfg, &e)?;
    let space = neighbor_space(cfg, &e.meta)?;
    let sw = stopwords(cfg)?;
    let index = NeighborIndex::new(&space, None, &sw);
    let report = build_report(&grads, &index, &e.docs, &records, &cfg.interpret.to_core(cfg.seed))?;
    let md = render_markdown(&report, &redactor(cfg)?);

    let mut w = StageWriter::new(run_dir, "interpret", INTERPRET_VERSION)?;
    w.input_hash("fit", crate::artifacts::sha256_file(&run_dir.join("fit/manifest.json"))?);
    w.input_file("vectors", cfg.require_vectors()?)?;
    if let Some(p) = &cfg.paths.lexicon {
        w.input_file("lexicon", p)?;
    }
    w.write("report.json", &to_json(&report))?;
    w.write("report.md", md.as_bytes())?;
    w.finish(cfg)?;
    let clusters: usize = report.gradients.iter().flat_map(|g| &g.poles).map(|p| p.clusters.len()).sum();
    Ok(format!("interpreted {} gradients, {clusters} clusters", report.gradients.len()))
}

fn f_cell(f: &FTest) -> String {
    let mark = if f.p_value < ALPHA { "" } else { " (n.s.)" };
    format!("F = {:.2}, p = {}{mark}", f.statistic, PValue(f.p_value))
}

fn t_cell(t: &TTest) -> String {
    let mark = if t.p_value < ALPHA { "" } else { " (n.s.)" };
    format!("t = {:.2}, p = {}{mark}", t.t, PValue(t.p_value))
}

/// Fit table with the columns Model term, Estimate, SE, Test, df, Effect size.
pub fn render_fit_table(s: &FitSummary, norms: &modssd_core::model::GradientNorms) -> String {
    let mut out = String::new();
    out.push_str("| Model term | Estimate | SE | Test | df | Effect size |\n");
    out.push_str("|---|---:|---:|---|---|---|\n");
    let _ = writeln!(
        out,
        "| Intercept | {:.4} | {:.4} | {} | {} | |",
        s.intercept.estimate,
        s.intercept.se,
        t_cell(&s.intercept),
        s.intercept.df
    );
    let _ = writeln!(
        out,
        "| Semantic block (β, K = {}) | ‖g‖ = {:.4} | | {} | ({}, {}) | |",
        s.k,
        norms.main,
        f_cell(&s.beta_f),
        s.beta_f.df1,
        s.beta_f.df2
    );
    let _ = writeln!(
        out,
        "| Moderator (γ) | {:.4} | {:.4} | {} | {} | |",
        s.gamma.estimate,
        s.gamma.se,
        t_cell(&s.gamma),
        s.gamma.df
    );
    let pr2 = s.partial_r2_delta.map_or("undefined".to_string(), |v| format!("{v:.3}"));
    let _ = writeln!(
        out,
        "| Interaction block (δ) | ‖g‖ = {:.4} | | {} | ({}, {}) | partial R² = {pr2} |",
        norms.interaction,
        f_cell(&s.delta_f),
        s.delta_f.df1,
        s.delta_f.df2
    );
    let _ = writeln!(
        out,
        "| Full model | | | {} | ({}, {}) | R² = {:.3}, adjusted R² = {:.3} |",
        f_cell(&s.overall_f),
        s.overall_f.df1,
        s.overall_f.df2,
        s.r2,
        s.adj_r2
    );
    out
}

pub fn report(cfg: &RunConfig, run_dir: &Path) -> Result<String, CliError> {
    let embed_manifest = load_stage(run_dir, "embed", "embed")?;
    let fit_manifest = load_stage(run_dir, "fit", "fit")?;
    let interp_manifest = load_stage(run_dir, "interpret", "interpret")?;
    let meta: EmbedMeta = read_json(&run_dir.join("embed/documents.json"))?;
    let summary: FitSummary = read_json(&run_dir.join("fit/fit.json"))?;
    let grads: GradientSet = read_json(&run_dir.join("fit/gradients.json"))?;
    let interp: InterpretationReport = read_json(&run_dir.join("interpret/report.json"))?;
    let sweep: Option<SweepResult> = if summary.k_source == "sweep" {
        load_stage(run_dir, "sweep", "sweep")?;
        Some(read_json(&run_dir.join("sweep/sweep.json"))?)
    } else {
        None
    };

    let mut md = String::from("# Moderated semantic differential report\n\n");
    md.push_str("## Sample\n\n");
    let _ = writeln!(md, "- input rows: {}", meta.drops.input_rows);
    let _ = writeln!(md, "- rows dropped at ingest: {}", meta.drops.dropped());
    let _ = writeln!(md, "- documents without in-vocabulary tokens: {}", meta.embed.excluded_ids.len());
    let _ = writeln!(md, "- analytic sample: {}", summary.n);
    let _ = writeln!(md, "- embedding dimension: {}", meta.dim);
    md.push('\n');

    if let Some(s) = &sweep {
        md.push_str("## Dimensionality sweep\n\n| K | Retained variance | Coherence | Stability | Score |\n|---:|---:|---:|---:|---:|\n");
        let cell = |v: Option<f64>| v.map_or("failed".to_string(), |v| format!("{v:.3}"));
        for e in &s.entries {
            let _ = writeln!(
                md,
                "| {}{} | {} | {} | {} | {} |",
                e.k,
                if e.k == s.selected_k { " (selected)" } else { "" },
                cell(e.retained_variance),
                cell(e.coherence),
                cell(e.stability),
                cell(e.score)
            );
        }
        md.push('\n');
    }

    let _ = writeln!(
        md,
        "## Moderated regression (K = {}, retained variance {:.3})\n",
        summary.k, summary.retained_variance
    );
    md.push_str(&render_fit_table(&summary, &grads.norms));
    md.push('\n');
    let verdict = if summary.delta_f.p_value < ALPHA { "significant" } else { "not significant" };
    let _ = writeln!(md, "Interaction block: {verdict} at α = {ALPHA}.\n");
    if summary.condition_number > modssd_core::model::CONDITION_WARN {
        let _ = writeln!(md, "Warning: design condition number {:.3e}.\n", summary.condition_number);
    }

    md.push_str("## Interpretation\n\n");
    md.push_str(&render_markdown(&interp, &redactor(cfg)?));

    let mut w = StageWriter::new(run_dir, "report", REPORT_VERSION)?;
    for (name, m) in [("embed", &embed_manifest), ("fit", &fit_manifest), ("interpret", &interp_manifest)] {
        w.input_hash(name, crate::artifacts::sha256_bytes(&to_json(m)));
    }
    let path = w.write("report.md", md.as_bytes())?;
    w.finish(cfg)?;
    Ok(format!("wrote {}", path.display()))
}

pub fn synth(cfg: &RunConfig, run_dir: &Path) -> Result<String, CliError> {
    let mut spec = cfg.synth.clone();
    spec.seed = cfg.seed;
    if spec.tokens.is_none() {
        spec.tokens = Some(TokenSpec::default());
    }
    let ds = generate(&spec)?;
    let mut csv = Vec::new();
    ds.write_csv(&mut csv)?;
    let mut vectors = Vec::new();
    ds.write_vectors(&mut vectors)?;

    let mut w = StageWriter::new(run_dir, "synth", SYNTH_VERSION)?;
    w.write("corpus.csv", &csv)?;
    w.write("vectors.txt", &vectors)?;
    w.write("truth.json", &to_json(&ds.truth))?;
    w.finish(cfg)?;
    let words = ds.vectors.as_ref().map_or(0, |v| v.len());
    Ok(format!("generated {} documents over {words} words in {}", spec.n, run_dir.join("synth").display()))
}

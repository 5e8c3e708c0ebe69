//! Reading gradients: nearest vocabulary neighbors of each pole, clusters of
//! those neighbors, and corpus excerpts closest to each cluster centroid.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusRecord, StopWords};
use crate::embedding::{DocumentMatrix, EmbeddingSpace};
use crate::error::{Error, Result};
use crate::model::GradientSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pole {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

impl Pole {
    pub fn symbol(self) -> &'static str {
        match self {
            Pole::Positive => "+",
            Pole::Negative => "-",
        }
    }
}

/// Candidate tokens for neighbor retrieval, with precomputed norms.
#[derive(Debug, Clone)]
pub struct NeighborIndex<'a> {
    space: &'a EmbeddingSpace,
    candidates: Vec<usize>,
    norms: Vec<f64>,
}

impl<'a> NeighborIndex<'a> {
    /// Restricts the search to `vocabulary` (all tokens when `None`), minus stopwords.
    pub fn new(space: &'a EmbeddingSpace, vocabulary: Option<&HashSet<String>>, stopwords: &StopWords) -> Self {
        let candidates: Vec<usize> = (0..space.len())
            .filter(|&i| {
                let tok = &space.tokens()[i];
                !stopwords.contains(tok) && vocabulary.is_none_or(|v| v.contains(tok))
            })
            .collect();
        let norms = candidates.iter().map(|&i| space.row(i).iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        NeighborIndex { space, candidates, norms }
    }

    pub fn space(&self) -> &'a EmbeddingSpace {
        self.space
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub token: String,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoleNeighbors {
    pub label: String,
    pub pole: Pole,
    pub neighbors: Vec<Neighbor>,
}

/// Top-`top_n` tokens by cosine to `g` (positive pole) or `-g` (negative pole).
///
/// Ties are broken by token string.
pub fn pole_neighbors(
    g: &[f64],
    index: &NeighborIndex<'_>,
    pole: Pole,
    top_n: usize,
    label: &str,
) -> Result<PoleNeighbors> {
    let space = index.space;
    if g.len() != space.dim() {
        return Err(Error::Dimension(format!("gradient has {} entries, space has {}", g.len(), space.dim())));
    }
    let direction: Vec<f64> = match pole {
        Pole::Positive => g.to_vec(),
        Pole::Negative => g.iter().map(|v| -v).collect(),
    };
    let gnorm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(gnorm > 0.0) || !gnorm.is_finite() {
        return Err(Error::Degenerate("zero gradient: the fit carries no semantic direction".into()));
    }

    let mut scored: Vec<(f64, usize)> = index
        .candidates
        .par_iter()
        .zip(index.norms.par_iter())
        .filter(|(_, n)| **n > 0.0)
        .map(|(&i, &norm)| {
            let dot: f64 = space.row(i).iter().zip(&direction).map(|(a, b)| a * b).sum();
            (dot / (norm * gnorm), i)
        })
        .collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| {
        b.0.total_cmp(&a.0).then_with(|| space.tokens()[a.1].cmp(&space.tokens()[b.1]))
    };
    let take = top_n.min(scored.len());
    if take > 0 && take < scored.len() {
        scored.select_nth_unstable_by(take - 1, order);
        scored.truncate(take);
    }
    scored.sort_by(order);
    scored.truncate(take);

    Ok(PoleNeighbors {
        label: label.to_owned(),
        pole,
        neighbors: scored
            .into_iter()
            .map(|(cosine, i)| Neighbor { token: space.tokens()[i].clone(), cosine })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snippet {
    pub doc_id: String,
    pub excerpt: String,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoleCluster {
    /// Members ranked by cosine to the centroid.
    pub members: Vec<String>,
    pub centroid: Vec<f64>,
    pub size: usize,
    pub top_words: Vec<String>,
    pub snippets: Vec<Snippet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub min_cluster_size: usize,
    pub top_words: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { k_min: 2, k_max: 8, min_cluster_size: 5, top_words: 10, restarts: 10, max_iter: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub silhouette: Option<f64>,
    /// Clusters at or above the minimum size, largest first.
    pub clusters: Vec<PoleCluster>,
    /// Members of clusters dropped for being too small.
    pub dropped_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

/// Nearest centroid by cosine; ties go to the lower index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let s = dot(point, centroid);
        if s > best.1 {
            best = (c, s);
        }
    }
    best
}

/// Spherical k-means on unit vectors with k-means++ seeding.
/// Returns labels and the summed cosine to assigned centroids.
fn spherical_kmeans(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng, max_iter: usize) -> (Vec<usize>, f64) {
    let n = points.len();
    let dim = points[0].len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)].clone());
    while centroids.len() < k {
        let dists: Vec<f64> = points.iter().map(|p| (1.0 - nearest(p, &centroids).1).max(0.0)).collect();
        let total: f64 = dists.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, d) in dists.iter().enumerate() {
                if r < *d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[pick].clone());
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest(p, &centroids);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed an empty cluster at the worst-fitting point
                let worst = (0..n)
                    .min_by(|&a, &b| {
                        dot(&points[a], &centroids[labels[a]]).total_cmp(&dot(&points[b], &centroids[labels[b]]))
                    })
                    .unwrap_or(0);
                centroids[c] = points[worst].clone();
                labels[worst] = c;
                changed = true;
            } else {
                centroids[c] = normalized(&sums[c]);
            }
        }
        if !changed {
            break;
        }
    }
    let objective = points.iter().zip(&labels).map(|(p, &l)| dot(p, &centroids[l])).sum();
    (labels, objective)
}

/// Mean silhouette with cosine distance `1 - cos`.
pub fn mean_silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += 1.0 - dot(&points[i], &points[j]);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if !b.is_finite() {
            continue;
        }
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

fn build_cluster(tokens: &[&str], points: &[Vec<f64>], members: &[usize], top_words: usize) -> PoleCluster {
    let mut sum = vec![0.0; points[0].len()];
    for &i in members {
        sum.iter_mut().zip(&points[i]).for_each(|(s, x)| *s += x);
    }
    let centroid = normalized(&sum);
    let mut ranked: Vec<(f64, &str)> = members.iter().map(|&i| (dot(&points[i], &centroid), tokens[i])).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let members: Vec<String> = ranked.iter().map(|(_, t)| t.to_string()).collect();
    PoleCluster {
        size: members.len(),
        top_words: members.iter().take(top_words).cloned().collect(),
        members,
        centroid,
        snippets: Vec::new(),
    }
}

/// Clusters a pole's neighbors with spherical k-means, choosing `k` by the
/// best mean silhouette over `k_min..=k_max` (ties to the smaller `k`).
pub fn cluster_pole(neighbors: &PoleNeighbors, space: &EmbeddingSpace, config: &ClusterConfig) -> Result<Clustering> {
    let mut tokens: Vec<&str> = Vec::new();
    let mut points: Vec<Vec<f64>> = Vec::new();
    for nb in &neighbors.neighbors {
        let v = space
            .vector(&nb.token)
            .ok_or_else(|| Error::InvalidInput(format!("neighbor `{}` not in the embedding space", nb.token)))?;
        let v = normalized(v);
        if dot(&v, &v) > 0.0 {
            tokens.push(&nb.token);
            points.push(v);
        }
    }
    let n = points.len();
    if n == 0 {
        return Ok(Clustering {
            k: 0,
            silhouette: None,
            clusters: Vec::new(),
            dropped_tokens: 0,
            warning: Some("no neighbors to cluster".into()),
        });
    }

    let single = |warning: Option<String>| {
        let all: Vec<usize> = (0..n).collect();
        let cluster = build_cluster(&tokens, &points, &all, config.top_words);
        let (clusters, dropped) =
            if cluster.size >= config.min_cluster_size { (vec![cluster], 0) } else { (vec![], n) };
        Clustering { k: 1, silhouette: None, clusters, dropped_tokens: dropped, warning }
    };

    let k_min = config.k_min.max(2);
    let k_max = config.k_max.min(n - 1);
    if n < 2 || k_min > k_max {
        let msg = format!("{n} neighbors cannot support k >= {k_min}; returning a single cluster");
        log::warn!("{msg}");
        return Ok(single(Some(msg)));
    }
    let spread = points.iter().skip(1).map(|p| 1.0 - dot(p, &points[0])).fold(0.0_f64, f64::max);
    if spread < 1e-12 {
        return Ok(single(Some("all neighbor vectors coincide; k forced to 1".into())));
    }

    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for k in k_min..=k_max {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(k as u64));
        let mut run_best: Option<(Vec<usize>, f64)> = None;
        for _ in 0..config.restarts.max(1) {
            let (labels, obj) = spherical_kmeans(&points, k, &mut rng, config.max_iter);
            if run_best.as_ref().is_none_or(|(_, o)| obj > *o) {
                run_best = Some((labels, obj));
            }
        }
        let (labels, _) = run_best.expect("at least one restart");
        let s = mean_silhouette(&points, &labels);
        if best.as_ref().is_none_or(|(_, b, _)| s > *b) {
            best = Some((k, s, labels));
        }
    }
    let (k, silhouette, labels) = best.expect("non-empty k range");

    let mut clusters = Vec::new();
    let mut dropped = 0;
    for c in 0..k {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < config.min_cluster_size {
            dropped += members.len();
            continue;
        }
        clusters.push(build_cluster(&tokens, &points, &members, config.top_words));
    }
    clusters.sort_by(|a, b| b.size.cmp(&a.size).then_with(|| a.members[0].cmp(&b.members[0])));
    Ok(Clustering { k, silhouette: Some(silhouette), clusters, dropped_tokens: dropped, warning: None })
}

/// Cuts `text` to at most `max_chars` characters at a word boundary.
pub fn excerpt(text: &str, max_chars: usize) -> String {
    let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if text.chars().count() <= max_chars {
        return text;
    }
    let mut out = String::new();
    for word in text.split(' ') {
        let extra = if out.is_empty() { 0 } else { 1 } + word.chars().count();
        if out.chars().count() + extra > max_chars {
            break;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    if out.is_empty() {
        out = text.chars().take(max_chars).collect();
    }
    out.push('…');
    out
}

/// Attaches the `top_m` documents closest to the cluster centroid.
///
/// `records` must be the record list the document matrix was built from;
/// identical texts are attached once.
pub fn align_snippets(
    cluster: &PoleCluster,
    docs: &DocumentMatrix,
    records: &[CorpusRecord],
    top_m: usize,
    excerpt_chars: usize,
) -> Result<PoleCluster> {
    if cluster.centroid.len() != docs.dim() {
        return Err(Error::Dimension(format!(
            "centroid has {} entries, documents have {}",
            cluster.centroid.len(),
            docs.dim()
        )));
    }
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(docs.n_docs());
    for (r, row) in docs.matrix.row_iter().enumerate() {
        let src = docs.source_rows[r];
        let record =
            records.get(src).ok_or_else(|| Error::InvalidInput(format!("document row {r} points past the corpus")))?;
        if record.id != docs.ids[r] {
            return Err(Error::InvalidInput(format!(
                "document `{}` does not match corpus record `{}`",
                docs.ids[r], record.id
            )));
        }
        let norm = row.norm();
        let cos =
            if norm > 0.0 { row.iter().zip(&cluster.centroid).map(|(a, b)| a * b).sum::<f64>() / norm } else { 0.0 };
        scored.push((cos, r));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut seen = HashSet::new();
    let mut snippets = Vec::new();
    for (cos, r) in scored {
        if snippets.len() >= top_m {
            break;
        }
        let record = &records[docs.source_rows[r]];
        if !seen.insert(record.text.trim()) {
            continue;
        }
        snippets.push(Snippet {
            doc_id: record.id.clone(),
            excerpt: excerpt(&record.text, excerpt_chars),
            cosine: cos,
        });
    }
    Ok(PoleCluster { snippets, ..cluster.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientKind {
    Main,
    Interaction,
    Conditional,
}

pub const DIVERGENCE_NOTE: &str = "The interaction gradient is a divergence axis. Its poles show where the \
outcome-associated direction differs between moderator levels, relative to the shared main gradient; \
they do not mark content that is high or low on the outcome in absolute terms.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    /// Left blank for the analyst.
    pub theme: String,
    pub size: usize,
    pub top_words: Vec<String>,
    pub members: Vec<String>,
    pub snippets: Vec<Snippet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoleSection {
    pub pole: Pole,
    pub neighbors: Vec<Neighbor>,
    pub k: usize,
    pub silhouette: Option<f64>,
    pub clusters: Vec<ClusterSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSection {
    pub label: String,
    pub kind: GradientKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_star: Option<f64>,
    pub norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_unscaled: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub poles: Vec<PoleSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretationReport {
    pub gradients: Vec<GradientSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterpretConfig {
    pub top_n: usize,
    pub top_m: usize,
    pub excerpt_chars: usize,
    pub cluster: ClusterConfig,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        Self { top_n: 150, top_m: 3, excerpt_chars: 240, cluster: ClusterConfig::default() }
    }
}

/// Neighbors, clusters and snippets for both poles of one gradient.
pub fn interpret_gradient(
    g: &[f64],
    label: &str,
    index: &NeighborIndex<'_>,
    docs: &DocumentMatrix,
    records: &[CorpusRecord],
    config: &InterpretConfig,
) -> Result<Vec<PoleSection>> {
    let mut poles = Vec::with_capacity(2);
    for pole in [Pole::Positive, Pole::Negative] {
        let nb = pole_neighbors(g, index, pole, config.top_n, label)?;
        let clustering = cluster_pole(&nb, index.space(), &config.cluster)?;
        let mut clusters = Vec::with_capacity(clustering.clusters.len());
        for c in &clustering.clusters {
            let c = align_snippets(c, docs, records, config.top_m, config.excerpt_chars)?;
            clusters.push(ClusterSummary {
                theme: String::new(),
                size: c.size,
                top_words: c.top_words,
                members: c.members,
                snippets: c.snippets,
            });
        }
        poles.push(PoleSection {
            pole,
            neighbors: nb.neighbors,
            k: clustering.k,
            silhouette: clustering.silhouette,
            clusters,
            warning: clustering.warning,
        });
    }
    Ok(poles)
}

/// Interprets the main, interaction and every conditional gradient.
pub fn build_report(
    gradients: &GradientSet,
    index: &NeighborIndex<'_>,
    docs: &DocumentMatrix,
    records: &[CorpusRecord],
    config: &InterpretConfig,
) -> Result<InterpretationReport> {
    let mut sections = vec![
        GradientSection {
            label: "main".into(),
            kind: GradientKind::Main,
            m_star: None,
            norm: gradients.norms.main,
            norm_unscaled: Some(gradients.norms.main_unscaled),
            note: None,
            poles: interpret_gradient(&gradients.main, "main", index, docs, records, config)?,
        },
        GradientSection {
            label: "interaction".into(),
            kind: GradientKind::Interaction,
            m_star: None,
            norm: gradients.norms.interaction,
            norm_unscaled: Some(gradients.norms.interaction_unscaled),
            note: Some(DIVERGENCE_NOTE.into()),
            poles: interpret_gradient(&gradients.interaction, "interaction", index, docs, records, config)?,
        },
    ];
    for c in &gradients.conditional {
        sections.push(GradientSection {
            label: c.label.clone(),
            kind: GradientKind::Conditional,
            m_star: Some(c.m_star),
            norm: c.norm,
            norm_unscaled: None,
            note: None,
            poles: interpret_gradient(&c.gradient, &c.label, index, docs, records, config)?,
        });
    }
    Ok(InterpretationReport { gradients: sections })
}

/// Masks lexicon terms at render time, keeping first and last letters.
#[derive(Debug, Clone, Default)]
pub struct Redactor {
    terms: HashSet<String>,
}

impl Redactor {
    pub fn new<'a>(terms: impl IntoIterator<Item = &'a str>) -> Self {
        Redactor { terms: terms.into_iter().map(|t| t.trim().to_lowercase()).filter(|t| !t.is_empty()).collect() }
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        use std::io::BufRead;
        let lines: Vec<String> = std::io::BufReader::new(reader).lines().collect::<std::io::Result<_>>()?;
        Ok(Self::new(lines.iter().map(String::as_str)))
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    fn mask(word: &str) -> String {
        let chars: Vec<char> = word.chars().collect();
        match chars.len() {
            0 => String::new(),
            1 | 2 => "*".repeat(chars.len()),
            n => {
                let mut s = String::new();
                s.push(chars[0]);
                s.push_str(&"*".repeat(n - 2));
                s.push(chars[n - 1]);
                s
            }
        }
    }

    pub fn redact(&self, text: &str) -> String {
        if self.terms.is_empty() {
            return text.to_owned();
        }
        let mut out = String::with_capacity(text.len());
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut String| {
            if !word.is_empty() {
                if self.terms.contains(&word.to_lowercase()) {
                    out.push_str(&Self::mask(word));
                } else {
                    out.push_str(word);
                }
                word.clear();
            }
        };
        for c in text.chars() {
            if c.is_alphanumeric() || c == '\'' {
                word.push(c);
            } else {
                flush(&mut word, &mut out);
                out.push(c);
            }
        }
        flush(&mut word, &mut out);
        out
    }
}

fn escape_cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

/// Markdown rendering: one table per gradient with Pole, Size, Theme and a
/// summary of top words plus the best-aligned excerpt.
pub fn render_markdown(report: &InterpretationReport, redactor: &Redactor) -> String {
    let mut out = String::new();
    for section in &report.gradients {
        let _ = writeln!(out, "## Gradient: {}\n", section.label);
        let _ = write!(out, "- norm: {:.4}", section.norm);
        if let Some(u) = section.norm_unscaled {
            let _ = write!(out, " (before feature rescaling: {u:.4})");
        }
        out.push('\n');
        if let Some(m) = section.m_star {
            let _ = writeln!(out, "- m*: {m:.4}");
        }
        if let Some(note) = &section.note {
            let _ = writeln!(out, "\n> {note}");
        }
        out.push('\n');
        let total: usize = section.poles.iter().map(|p| p.clusters.len()).sum();
        if total == 0 {
            let _ = writeln!(out, "_No clusters met the minimum size._\n");
        } else {
            out.push_str("| Pole | Size | Theme | Summary |\n|:---:|---:|---|---|\n");
            for pole in &section.poles {
                for c in &pole.clusters {
                    let words = c.top_words.iter().map(|w| redactor.redact(w)).collect::<Vec<_>>().join(", ");
                    let mut summary = format!("*{}*", escape_cell(&words));
                    if let Some(s) = c.snippets.first() {
                        let _ = write!(summary, "; \"{}\"", escape_cell(&redactor.redact(&s.excerpt)));
                    }
                    let _ = writeln!(
                        out,
                        "| {} | {} | {} | {} |",
                        pole.pole.symbol(),
                        c.size,
                        escape_cell(&c.theme),
                        summary
                    );
                }
            }
            out.push('\n');
        }
        for pole in &section.poles {
            if let Some(w) = &pole.warning {
                let _ = writeln!(out, "- pole {}: {w}", pole.pole.symbol());
            }
        }
        out.push('\n');
    }
    out
}

/// Token-level membership summary used to check reports for consistency.
pub fn cluster_membership(section: &PoleSection) -> HashMap<&str, usize> {
    let mut map = HashMap::new();
    for (c, cluster) in section.clusters.iter().enumerate() {
        for m in &cluster.members {
            map.insert(m.as_str(), c);
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn space(rows: Vec<(&str, Vec<f64>)>) -> EmbeddingSpace {
        EmbeddingSpace::from_rows(rows.into_iter().map(|(t, v)| (t.to_string(), v))).unwrap()
    }

    #[test]
    fn self_neighbor_ranks_first() {
        let s = space(vec![("a", vec![1.0, 0.0]), ("b", vec![0.6, 0.8]), ("c", vec![0.0, 1.0])]);
        let idx = NeighborIndex::new(&s, None, &StopWords::empty());
        let nb = pole_neighbors(&[0.6, 0.8], &idx, Pole::Positive, 2, "g").unwrap();
        assert_eq!(nb.neighbors[0].token, "b");
        assert!((nb.neighbors[0].cosine - 1.0).abs() < 1e-15);
        assert_eq!(nb.neighbors.len(), 2);
    }

    #[test]
    fn negative_pole_is_positive_pole_of_negated_gradient() {
        let s = space(vec![
            ("a", vec![1.0, 0.2, 0.0]),
            ("b", vec![-0.3, 0.8, 0.1]),
            ("c", vec![0.0, -1.0, 0.4]),
            ("d", vec![-0.9, -0.1, -0.2]),
        ]);
        let idx = NeighborIndex::new(&s, None, &StopWords::empty());
        let g = [0.4, -0.7, 0.2];
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let a = pole_neighbors(&g, &idx, Pole::Negative, 4, "g").unwrap();
        let b = pole_neighbors(&neg, &idx, Pole::Positive, 4, "g").unwrap();
        assert_eq!(a.neighbors, b.neighbors);
    }

    #[test]
    fn stopwords_and_vocabulary_filter() {
        let s = space(vec![("the", vec![1.0, 0.0]), ("cat", vec![0.9, 0.1]), ("dog", vec![0.8, 0.2])]);
        let vocab: HashSet<String> = ["the", "cat"].iter().map(|s| s.to_string()).collect();
        let idx = NeighborIndex::new(&s, Some(&vocab), &StopWords::from_lines(["the"]));
        assert_eq!(idx.len(), 1);
        let nb = pole_neighbors(&[1.0, 0.0], &idx, Pole::Positive, 5, "g").unwrap();
        assert_eq!(nb.neighbors.iter().map(|n| n.token.as_str()).collect::<Vec<_>>(), vec!["cat"]);
    }

    #[test]
    fn ties_break_by_token() {
        let s = space(vec![("zeta", vec![1.0, 0.0]), ("alpha", vec![1.0, 0.0]), ("mid", vec![0.5, 0.5])]);
        let idx = NeighborIndex::new(&s, None, &StopWords::empty());
        let nb = pole_neighbors(&[1.0, 0.0], &idx, Pole::Positive, 2, "g").unwrap();
        assert_eq!(nb.neighbors[0].token, "alpha");
        assert_eq!(nb.neighbors[1].token, "zeta");
    }

    #[test]
    fn zero_gradient_is_an_error() {
        let s = space(vec![("a", vec![1.0, 0.0])]);
        let idx = NeighborIndex::new(&s, None, &StopWords::empty());
        assert!(matches!(pole_neighbors(&[0.0, 0.0], &idx, Pole::Positive, 1, "g"), Err(Error::Degenerate(_))));
    }

    #[test]
    fn planted_tokens_take_top_ranks() {
        let mut rows = Vec::new();
        let g = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        for i in 0..5 {
            let mut v = g.to_vec();
            v[2 + (i % 4)] = 0.05 * (i as f64 + 1.0);
            rows.push((format!("t{i}"), v));
        }
        for i in 0..40 {
            let v: Vec<f64> = (0..6).map(|j| (((i * 7 + j * 13) % 11) as f64 - 5.0) / 5.0).collect();
            rows.push((format!("noise{i}"), v));
        }
        let s = EmbeddingSpace::from_rows(rows).unwrap();
        let idx = NeighborIndex::new(&s, None, &StopWords::empty());
        let nb = pole_neighbors(&g, &idx, Pole::Positive, 5, "g").unwrap();
        let mut got: Vec<&str> = nb.neighbors.iter().map(|n| n.token.as_str()).collect();
        got.sort();
        assert_eq!(got, vec!["t0", "t1", "t2", "t3", "t4"]);
        assert!(nb.neighbors.windows(2).all(|w| w[0].cosine >= w[1].cosine));
    }

    fn neighbors_of(tokens: &[&str]) -> PoleNeighbors {
        PoleNeighbors {
            label: "g".into(),
            pole: Pole::Positive,
            neighbors: tokens.iter().map(|t| Neighbor { token: t.to_string(), cosine: 0.5 }).collect(),
        }
    }

    #[test]
    fn antipodal_groups_split_exactly() {
        let s = space(vec![
            ("a1", vec![1.0, 0.05, 0.0]),
            ("a2", vec![1.0, -0.05, 0.0]),
            ("a3", vec![1.0, 0.0, 0.05]),
            ("b1", vec![-1.0, 0.05, 0.0]),
            ("b2", vec![-1.0, -0.05, 0.0]),
            ("b3", vec![-1.0, 0.0, -0.05]),
        ]);
        let cfg = ClusterConfig { k_min: 2, k_max: 2, min_cluster_size: 1, ..Default::default() };
        let c = cluster_pole(&neighbors_of(&["a1", "a2", "a3", "b1", "b2", "b3"]), &s, &cfg).unwrap();
        assert_eq!(c.k, 2);
        let mut groups: Vec<Vec<String>> = c
            .clusters
            .iter()
            .map(|c| {
                let mut m = c.members.clone();
                m.sort();
                m
            })
            .collect();
        groups.sort();
        assert_eq!(groups, vec![vec!["a1", "a2", "a3"], vec!["b1", "b2", "b3"]]);
        for cl in &c.clusters {
            let n: f64 = cl.centroid.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn identical_vectors_force_single_cluster() {
        let s = space(vec![("a", vec![0.6, 0.8]), ("b", vec![0.6, 0.8]), ("c", vec![0.6, 0.8]), ("d", vec![1.2, 1.6])]);
        let cfg = ClusterConfig { min_cluster_size: 1, ..Default::default() };
        let c = cluster_pole(&neighbors_of(&["a", "b", "c", "d"]), &s, &cfg).unwrap();
        assert_eq!(c.k, 1);
        assert_eq!(c.clusters.len(), 1);
        assert_eq!(c.clusters[0].size, 4);
    }

    #[test]
    fn too_few_neighbors_gives_single_cluster_with_warning() {
        let s = space(vec![("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]);
        let cfg = ClusterConfig { k_min: 2, min_cluster_size: 1, ..Default::default() };
        let c = cluster_pole(&neighbors_of(&["a", "b"]), &s, &cfg).unwrap();
        assert_eq!(c.k, 1);
        assert!(c.warning.is_some());
    }

    #[test]
    fn small_clusters_are_dropped() {
        let s = space(vec![
            ("a1", vec![1.0, 0.01]),
            ("a2", vec![1.0, -0.01]),
            ("a3", vec![1.0, 0.02]),
            ("b1", vec![-0.01, 1.0]),
        ]);
        let cfg = ClusterConfig { k_min: 2, k_max: 2, min_cluster_size: 2, ..Default::default() };
        let c = cluster_pole(&neighbors_of(&["a1", "a2", "a3", "b1"]), &s, &cfg).unwrap();
        assert_eq!(c.clusters.len(), 1);
        assert_eq!(c.dropped_tokens, 1);
        let total: usize = c.clusters.iter().map(|c| c.size).sum();
        assert!(total <= 4);
    }

    #[test]
    fn silhouette_of_perfect_split_is_high() {
        let pts = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        assert!((mean_silhouette(&pts, &[0, 0, 1, 1]) - 1.0).abs() < 1e-12);
        assert!(mean_silhouette(&pts, &[0, 1, 0, 1]) < 0.0);
    }

    fn record(id: &str, text: &str) -> CorpusRecord {
        CorpusRecord { id: id.into(), text: text.into(), outcome: 0.0, moderator: 0.0 }
    }

    fn cluster_at(centroid: Vec<f64>) -> PoleCluster {
        PoleCluster { members: vec!["x".into()], centroid, size: 1, top_words: vec!["x".into()], snippets: vec![] }
    }

    #[test]
    fn single_document_is_attached() {
        let docs = DocumentMatrix {
            ids: vec!["d1".into()],
            source_rows: vec![0],
            matrix: DMatrix::from_row_slice(1, 2, &[0.2, 0.1]),
            removed_component: None,
        };
        let c = align_snippets(&cluster_at(vec![1.0, 0.0]), &docs, &[record("d1", "only one")], 3, 100).unwrap();
        assert_eq!(c.snippets.len(), 1);
        assert_eq!(c.snippets[0].excerpt, "only one");
    }

    #[test]
    fn document_equal_to_centroid_ranks_first() {
        let centroid = vec![0.6, 0.8, 0.0];
        let matrix = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 0.0, 0.6, 0.8, 0.0, 0.59, 0.8, 0.05, 0.0, 0.0, 1.0]);
        let records: Vec<_> = ["a", "b", "c", "d"].iter().map(|i| record(i, &format!("text {i}"))).collect();
        let docs = DocumentMatrix {
            ids: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            source_rows: vec![0, 1, 2, 3],
            matrix,
            removed_component: None,
        };
        let c = align_snippets(&cluster_at(centroid), &docs, &records, 3, 100).unwrap();
        assert_eq!(c.snippets[0].doc_id, "b");
        assert!((c.snippets[0].cosine - 1.0).abs() < 1e-12);
        assert_eq!(c.snippets[1].doc_id, "c");
        assert!(c.snippets.windows(2).all(|w| w[0].cosine >= w[1].cosine));
    }

    #[test]
    fn duplicate_texts_attached_once_and_mismatch_detected() {
        let matrix = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 0.5, 0.5]);
        let records = vec![record("a", "same"), record("b", "same"), record("c", "other")];
        let docs = DocumentMatrix {
            ids: vec!["a".into(), "b".into(), "c".into()],
            source_rows: vec![0, 1, 2],
            matrix,
            removed_component: None,
        };
        let c = align_snippets(&cluster_at(vec![1.0, 0.0]), &docs, &records, 2, 50).unwrap();
        assert_eq!(c.snippets.iter().map(|s| s.doc_id.as_str()).collect::<Vec<_>>(), vec!["a", "c"]);

        let bad = DocumentMatrix { ids: vec!["x".into(), "b".into(), "c".into()], ..docs };
        assert!(align_snippets(&cluster_at(vec![1.0, 0.0]), &bad, &records, 2, 50).is_err());
    }

    #[test]
    fn excerpt_cuts_at_word_boundary() {
        assert_eq!(excerpt("one two three four", 9), "one two…");
        assert_eq!(excerpt("short", 10), "short");
        assert_eq!(excerpt("  spaced\n out  ", 20), "spaced out");
        assert_eq!(excerpt("supercalifragilistic", 5), "super…");
    }

    #[test]
    fn redaction_keeps_first_and_last_letters() {
        let r = Redactor::new(["badword"]);
        assert_eq!(r.redact("a BADWORD here, badword."), "a B*****D here, b*****d.");
        let six = Redactor::new(["abcdef"]);
        assert_eq!(six.redact("abcdef"), "a****f");
        assert_eq!(Redactor::default().redact("abcdef"), "abcdef");
    }

    #[test]
    fn empty_report_renders_no_cluster_section() {
        let report = InterpretationReport {
            gradients: vec![GradientSection {
                label: "interaction".into(),
                kind: GradientKind::Interaction,
                m_star: None,
                norm: 1.0,
                norm_unscaled: Some(0.5),
                note: Some(DIVERGENCE_NOTE.into()),
                poles: vec![],
            }],
        };
        let md = render_markdown(&report, &Redactor::default());
        assert!(md.contains("No clusters"));
        assert!(md.contains("divergence axis"));
    }
}

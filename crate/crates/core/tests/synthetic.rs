use std::collections::HashSet;

use modssd_core::corpus::{standardize, StopWords};
use modssd_core::interpret::{
    align_snippets, build_report, cluster_pole, pole_neighbors, render_markdown, ClusterConfig, InterpretConfig,
    Neighbor, NeighborIndex, Pole, PoleCluster, PoleNeighbors, Redactor,
};
use modssd_core::model::{build_design, fit_interaction, gradients, Block};
use modssd_core::reduction::{backproject, sweep_k, PcaBasis, SweepOptions};
use modssd_core::synth::{corpus_vocabulary, generate, SynthSpec, TokenSpec};
use modssd_core::{CorpusRecord, DocumentMatrix, EmbeddingSpace};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

fn token_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        n: 1500,
        dim: 30,
        k_true: 5,
        tokens: Some(TokenSpec { vocab_size: 800, ..Default::default() }),
        seed,
        ..Default::default()
    }
}

#[test]
fn sweep_selects_k_that_recovers_main_gradient() {
    let ds = generate(&token_spec(21)).unwrap();
    let x = ds.document_matrix();
    let y = standardize(&ds.outcome).unwrap();
    let m = ds.moderator_z().unwrap();
    let space = ds.vectors.as_ref().unwrap();
    let vocab = corpus_vocabulary(&ds);
    let index = NeighborIndex::new(space, Some(&vocab), &StopWords::english());
    let sweep = sweep_k(&x, &y, &m, &[2, 5, 10, 20], &index, SweepOptions::default()).unwrap();
    assert_eq!(sweep.entries.len(), 4);

    let rep = PcaBasis::fit(&x.matrix).unwrap().truncate(sweep.selected_k).unwrap();
    let fit = fit_interaction(&build_design(&rep.scores, &m.values).unwrap(), &y.values).unwrap();
    let g = backproject(fit.block(Block::Semantic), &rep).unwrap();
    let cos = cosine(&g, &ds.truth.beta);
    assert!(cos >= 0.9, "selected K = {}, cosine {cos}", sweep.selected_k);
}

#[test]
fn singleton_grid_is_forced() {
    let ds = generate(&SynthSpec { n: 300, ..token_spec(3) }).unwrap();
    let space = ds.vectors.as_ref().unwrap();
    let index = NeighborIndex::new(space, None, &StopWords::english());
    let sweep = sweep_k(
        &ds.document_matrix(),
        &standardize(&ds.outcome).unwrap(),
        &ds.moderator_z().unwrap(),
        &[7],
        &index,
        SweepOptions::default(),
    )
    .unwrap();
    assert_eq!(sweep.selected_k, 7);
}

#[test]
fn planted_pole_words_surface_in_neighbors() {
    let ds = generate(&token_spec(5)).unwrap();
    let space = ds.vectors.as_ref().unwrap();
    let index = NeighborIndex::new(space, None, &StopWords::english());
    let main = &ds.truth.pole_words[0];
    let nb = pole_neighbors(&ds.truth.beta, &index, Pole::Positive, main.positive.len(), "main").unwrap();
    let got: HashSet<&str> = nb.neighbors.iter().map(|n| n.token.as_str()).collect();
    let want: HashSet<&str> = main.positive.iter().map(String::as_str).collect();
    assert_eq!(got, want);
    let nb = pole_neighbors(&ds.truth.beta, &index, Pole::Negative, main.negative.len(), "main").unwrap();
    assert!(nb.neighbors.iter().all(|n| n.token.starts_with("negmain")));
}

fn rand_index(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let mut agree = 0usize;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            pairs += 1;
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agree += 1;
            }
        }
    }
    agree as f64 / pairs as f64
}

/// Three von Mises-like blobs on the unit sphere.
fn planted_clusters(seed: u64, per: usize, dim: usize, spread: f64) -> (EmbeddingSpace, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..3).map(|c| (0..dim).map(|j| if j == c { 1.0 } else { 0.0 }).collect()).collect();
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for i in 0..per {
            let v: Vec<f64> = center.iter().map(|x| x + spread * rng.sample::<f64, _>(StandardNormal)).collect();
            rows.push((format!("c{c}t{i:02}"), v));
            truth.push(c);
        }
    }
    (EmbeddingSpace::from_rows(rows).unwrap(), truth)
}

#[test]
fn three_planted_clusters_are_recovered() {
    let (space, truth) = planted_clusters(8, 17, 10, 0.15);
    let nb = PoleNeighbors {
        label: "g".into(),
        pole: Pole::Positive,
        neighbors: space.tokens().iter().map(|t| Neighbor { token: t.clone(), cosine: 0.0 }).collect(),
    };
    let c = cluster_pole(&nb, &space, &ClusterConfig { min_cluster_size: 1, ..Default::default() }).unwrap();
    let mut labels = vec![usize::MAX; truth.len()];
    for (ci, cl) in c.clusters.iter().enumerate() {
        for m in &cl.members {
            labels[space.index_of(m).unwrap()] = ci;
        }
    }
    assert!(rand_index(&labels, &truth) >= 0.9, "k = {}", c.k);
    assert_eq!(c.k, 3);
}

#[test]
fn planted_document_near_centroid_ranks_first() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let dim = 8;
    let centroid: Vec<f64> = {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    };
    let n = 50;
    let mut flat = Vec::new();
    for i in 0..n {
        if i == 23 {
            flat.extend(centroid.iter().map(|c| c + 0.01 * rng.sample::<f64, _>(StandardNormal)));
        } else {
            flat.extend((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        }
    }
    let docs = DocumentMatrix {
        ids: (0..n).map(|i| format!("d{i}")).collect(),
        source_rows: (0..n).collect(),
        matrix: DMatrix::from_row_slice(n, dim, &flat),
        removed_component: None,
    };
    let records: Vec<CorpusRecord> = (0..n)
        .map(|i| CorpusRecord {
            id: format!("d{i}"),
            text: format!("document number {i}"),
            outcome: 0.0,
            moderator: 0.0,
        })
        .collect();
    let cluster = PoleCluster { members: vec![], centroid, size: 0, top_words: vec![], snippets: vec![] };
    let out = align_snippets(&cluster, &docs, &records, 3, 200).unwrap();
    assert_eq!(out.snippets[0].doc_id, "d23");
}

#[test]
fn report_is_deterministic_and_renders() {
    let ds = generate(&SynthSpec { n: 600, ..token_spec(9) }).unwrap();
    let x = ds.document_matrix();
    let m = ds.moderator_z().unwrap();
    let rep = PcaBasis::fit(&x.matrix).unwrap().truncate(5).unwrap();
    let fit = fit_interaction(&build_design(&rep.scores, &m.values).unwrap(), &ds.outcome).unwrap();
    let probes = modssd_core::probe_values(&Default::default(), &m, &ds.moderator).unwrap();
    let g = gradients(&fit, &rep, &probes).unwrap();
    let space = ds.vectors.as_ref().unwrap();
    let vocab = corpus_vocabulary(&ds);
    let index = NeighborIndex::new(space, Some(&vocab), &StopWords::english());
    let cfg = InterpretConfig { top_n: 40, ..Default::default() };
    let a = build_report(&g, &index, &x, &ds.records, &cfg).unwrap();
    let b = build_report(&g, &index, &x, &ds.records, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.gradients.len(), 2 + probes.len());
    for section in &a.gradients {
        for pole in &section.poles {
            for c in &pole.clusters {
                assert!(c.snippets.windows(2).all(|w| w[0].cosine >= w[1].cosine));
            }
        }
    }
    let md = render_markdown(&a, &Redactor::default());
    assert!(md.contains("| Pole | Size | Theme | Summary |"));
}

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any required criterion fails.
//!
//! Criterion 12 needs a user-supplied corpus and pretrained vectors; set
//! `MODSSD_INTEGRATION_CONFIG` to a run config to enable it.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use modssd_core::corpus::StopWords;
use modssd_core::embedding::{embed_documents, remove_top_component, sif_weight, Averaging, EmbeddingSpace};
use modssd_core::interpret::{cluster_pole, pole_neighbors, ClusterConfig, NeighborIndex, Pole};
use modssd_core::model::{
    build_design, fit_interaction, gradients, ols, wald_f, Block, InteractionDf, InteractionFit, ProbeValue,
};
use modssd_core::reduction::{PcaBasis, ReducedRepresentation};
use modssd_core::synth::{
    generate, oracle_incremental_f, oracle_ols, EffectSpec, ModeratorSpec, SynthDataset, SynthSpec,
};
use modssd_core::TokenizedDoc;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (u32, &'static str, Option<Duration>, fn() -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(f64::MIN_POSITIVE)
}

fn scalar_rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

/// Random moderated-regression problem with `n` rows and `k` semantic columns.
fn random_problem(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let z = DMatrix::from_fn(n, k, |_, _| normal(rng));
    let m: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let coefs: Vec<f64> = (0..2 * k + 2).map(|_| normal(rng)).collect();
    let design = build_design(&z, &m).unwrap();
    let y: Vec<f64> =
        (0..n).map(|i| (0..2 * k + 2).map(|j| design.matrix[(i, j)] * coefs[j]).sum::<f64>() + normal(rng)).collect();
    (z, m, y)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(20..=200);
        let k = rng.random_range(1..=10usize).min((n - 3) / 2);
        let (z, m, y) = random_problem(&mut rng, n, k);
        let design = build_design(&z, &m).unwrap();
        let fit = ols(&design.matrix, &y, |c| c.to_string()).unwrap();
        let oracle = oracle_ols(&design.matrix, &y).unwrap();
        worst = worst.max(rel_err(fit.coefficients.as_slice(), &oracle));
    }
    outcome(worst <= 1e-8, format!("max relative error {worst:.2e} over 100 instances (tolerance 1e-8)"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let n = rng.random_range(30..=200);
        let k = rng.random_range(1..=8usize);
        let (z, m, y) = random_problem(&mut rng, n, k);
        let design = build_design(&z, &m).unwrap();
        let fit = fit_interaction(&design, &y).unwrap();
        // alternate between the interaction and the semantic block
        let block = if i % 2 == 0 { Block::Interaction } else { Block::Semantic };
        let keep: Vec<usize> = (0..design.n_params()).filter(|c| !block.columns(k).contains(c)).collect();
        let reduced = design.matrix.select_columns(&keep);
        let oracle = oracle_incremental_f(&design.matrix, &reduced, &y).unwrap();
        let wald = modssd_core::model::wald_block_f(&fit, block).unwrap().statistic;
        worst = worst.max(scalar_rel(wald, oracle));
    }
    outcome(worst <= 1e-8, format!("max relative difference {worst:.2e} over 100 nested pairs (tolerance 1e-8)"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(20..=150);
        let k = rng.random_range(1..=6usize);
        let (z, m, y) = random_problem(&mut rng, n, k);
        let design = build_design(&z, &m).unwrap();
        let fit = ols(&design.matrix, &y, |c| c.to_string()).unwrap();
        let j = rng.random_range(0..design.n_params());
        let w = wald_f(&fit.coefficients, &fit.covariance, j..j + 1, fit.df_error).unwrap().statistic;
        let t = fit.coefficients[j] / fit.standard_error(j);
        worst = worst.max(scalar_rel(w, t * t));
    }
    outcome(worst <= 1e-10, format!("max relative difference {worst:.2e} over 50 blocks (tolerance 1e-10)"))
}

fn fit_at(ds: &SynthDataset, k: usize) -> (InteractionFit, ReducedRepresentation) {
    let m = ds.moderator_z().unwrap();
    let rep = PcaBasis::fit(&ds.x).unwrap().truncate(k).unwrap();
    let fit = fit_interaction(&build_design(&rep.scores, &m.values).unwrap(), &ds.outcome).unwrap();
    (fit, rep)
}

fn criterion_4() -> Outcome {
    let spec = SynthSpec {
        n: 1000,
        dim: 20,
        k_true: 10,
        effects: EffectSpec::Magnitudes { beta: 0.5, delta: 0.0 },
        seed: 4_000,
        ..SynthSpec::default()
    };
    let rejections: usize = (0..1000u64)
        .into_par_iter()
        .map(|i| {
            let ds = generate(&spec.replicate(i)).unwrap();
            let (fit, _) = fit_at(&ds, 10);
            usize::from(fit.delta_f.p_value < 0.05)
        })
        .sum();
    let rate = rejections as f64 / 1000.0;
    outcome(
        (0.03..=0.07).contains(&rate),
        format!("rejection rate {rate:.3} at alpha .05 over 1000 replicates (band [.03, .07])"),
    )
}

fn recovery_spec(seed: u64, n: usize) -> SynthSpec {
    SynthSpec {
        n,
        dim: 50,
        k_true: 5,
        effects: EffectSpec::Targets { r2: 0.6, partial_r2: 0.02 },
        moderator: ModeratorSpec::Binary { p: 0.5 },
        seed,
        ..SynthSpec::default()
    }
}

fn criterion_5() -> Outcome {
    let spec = recovery_spec(5_000, 2000);
    let cosines: Vec<(f64, f64)> = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let ds = generate(&spec.replicate(i)).unwrap();
            let (fit, rep) = fit_at(&ds, 5);
            let g = gradients(&fit, &rep, &[]).unwrap();
            (cosine(&g.main, &ds.truth.beta), cosine(&g.interaction, &ds.truth.delta))
        })
        .collect();
    let main_ok = cosines.iter().filter(|c| c.0 >= 0.9).count();
    let int_ok = cosines.iter().filter(|c| c.1 >= 0.7).count();
    let min_main = cosines.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let min_int = cosines.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    outcome(
        main_ok >= 90 && int_ok >= 90,
        format!(
            "cos(g_main) >= .9 in {main_ok}/100 (min {min_main:.3}); cos(g_int) >= .7 in {int_ok}/100 (min {min_int:.3})"
        ),
    )
}

fn criterion_6() -> Outcome {
    let spec = recovery_spec(6_000, 5000);
    let values: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|i| {
            let ds = generate(&spec.replicate(i)).unwrap();
            fit_at(&ds, 5).0.partial_r2_delta.unwrap()
        })
        .collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    outcome((mean - 0.02).abs() <= 0.01, format!("mean partial R² {mean:.4} over 200 replicates (target .02 ± .01)"))
}

fn criterion_7() -> Outcome {
    let df = InteractionDf::new(44_813, 62).unwrap();
    // a real fit at the same shape must report the same degrees of freedom
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let (z, m, y) = random_problem(&mut rng, 44_813, 62);
    let fit = fit_interaction(&build_design(&z, &m).unwrap(), &y).unwrap();
    let pass = df.overall == (125, 44_687)
        && df.block == (62, 44_687)
        && (fit.overall_f.df1, fit.overall_f.df2) == (125, 44_687)
        && (fit.delta_f.df1, fit.delta_f.df2) == (62, 44_687)
        && (fit.beta_f.df1, fit.beta_f.df2) == (62, 44_687);
    outcome(
        pass,
        format!(
            "overall ({}, {}), interaction block ({}, {}), semantic block ({}, {})",
            fit.overall_f.df1, fit.overall_f.df2, fit.delta_f.df1, fit.delta_f.df2, fit.beta_f.df1, fit.beta_f.df2
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut bitwise = true;
    for i in 0..20u64 {
        let ds = generate(&SynthSpec { n: 300, dim: 15, k_true: 4, seed: 8_000 + i, ..SynthSpec::default() }).unwrap();
        let (fit, rep) = fit_at(&ds, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let mut probes: Vec<ProbeValue> =
            (0..5).map(|j| ProbeValue { label: format!("p{j}"), m_star: 3.0 * normal(&mut rng) }).collect();
        probes.push(ProbeValue { label: "zero".into(), m_star: 0.0 });
        let g = gradients(&fit, &rep, &probes).unwrap();
        for c in &g.conditional {
            for j in 0..g.main.len() {
                let want = g.main[j] + c.m_star * g.interaction[j];
                worst = worst.max((c.gradient[j] - want).abs());
            }
            if c.m_star == 0.0 {
                bitwise &= c.gradient.iter().zip(&g.main).all(|(a, b)| a.to_bits() == b.to_bits());
            }
        }
    }
    outcome(
        worst <= 1e-12 && bitwise,
        format!("max deviation {worst:.2e} (tolerance 1e-12); m* = 0 bitwise equal: {bitwise}"),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let rows: Vec<(String, Vec<f64>)> =
        (0..40).map(|i| (format!("w{i}"), (0..12).map(|_| normal(&mut rng)).collect())).collect();
    let mut space = EmbeddingSpace::from_rows(rows).unwrap();
    space.normalize();
    let docs: Vec<TokenizedDoc> = (0..60)
        .map(|d| TokenizedDoc {
            id: format!("d{d}"),
            tokens: (0..rng.random_range(3..15)).map(|_| format!("w{}", rng.random_range(0..40))).collect(),
        })
        .collect();
    space.set_word_probs(modssd_core::embedding::estimate_word_probs(&docs).unwrap());

    // token order
    let reversed: Vec<TokenizedDoc> = docs
        .iter()
        .map(|d| TokenizedDoc { id: d.id.clone(), tokens: d.tokens.iter().rev().cloned().collect() })
        .collect();
    let (a, _) = embed_documents(&docs, &space, 1e-3, Averaging::TokenCount).unwrap();
    let (b, _) = embed_documents(&reversed, &space, 1e-3, Averaging::TokenCount).unwrap();
    let perm_dev = (&a.matrix - &b.matrix).amax();

    // orthogonality after removal
    let removed = remove_top_component(&a).unwrap();
    let u = removed.removed_component.clone().unwrap();
    let ortho =
        removed.matrix.row_iter().map(|r| r.iter().zip(&u).map(|(x, y)| x * y).sum::<f64>().abs()).fold(0.0, f64::max);

    let spots = sif_weight(0.0, 1e-3) == 1.0 && sif_weight(1e-3, 1e-3) == 0.5 && sif_weight(0.25, 0.25) == 0.5;
    outcome(
        perm_dev <= 1e-12 && ortho <= 1e-8 && spots,
        format!("permutation deviation {perm_dev:.1e}; max |X_i·u| {ortho:.1e}; SIF spot values exact: {spots}"),
    )
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let cfg = r#"
seed = 11

[paths]
data = "out/synth/corpus.csv"
vectors = "out/synth/vectors.txt"
output = "out"

[columns]
id = "id"

[sweep]
start = 2
stop = 12
step = 5

[interpret]
top_n = 40

[synth]
n = 400
dim = 20
k_true = 4

[synth.tokens]
vocab_size = 300
"#;
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

fn run_pipeline(config: &Path) -> Result<(), String> {
    for stage in ["synth", "embed", "sweep", "fit", "interpret", "report"] {
        let out = Command::new(env!("CARGO_BIN_EXE_modssd"))
            .args(["--config", config.to_str().unwrap(), stage])
            .env_remove("SSD_OUTPUT_DIR")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{stage} failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn criterion_10() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let cfg = write_config(dir.path());
        if let Err(e) = run_pipeline(&cfg) {
            return outcome(false, e);
        }
    }
    let (sa, sb) = (snapshot(&a.path().join("out")), snapshot(&b.path().join("out")));
    let differing: Vec<&String> = sa.keys().filter(|k| sa.get(*k) != sb.get(*k)).collect();
    let same_set = sa.keys().eq(sb.keys());
    outcome(
        same_set && differing.is_empty() && sa.contains_key("report/report.md"),
        format!("{} artifacts compared; differing: {differing:?}", sa.len()),
    )
}

fn criterion_11() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let dim = 48;
    let unit = |v: Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let g = unit((0..dim).map(|_| normal(&mut rng)).collect());
    // three cluster centres leaning towards +g in different directions
    let centres: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            let offset: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
            let offset = unit(offset);
            unit(g.iter().zip(&offset).map(|(a, b)| a + 0.7 * b).collect())
        })
        .collect();
    let mut rows = Vec::new();
    let mut planted = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        for i in 0..20 {
            let v: Vec<f64> = centre.iter().map(|x| x + 0.04 * normal(&mut rng)).collect();
            let token = format!("topic{c}word{i:02}");
            planted.push((token.clone(), c));
            rows.push((token, v));
        }
    }
    for i in 0..400 {
        rows.push((format!("filler{i:03}"), (0..dim).map(|_| normal(&mut rng)).collect()));
    }
    let mut space = EmbeddingSpace::from_rows(rows).unwrap();
    space.normalize();
    let index = NeighborIndex::new(&space, None, &StopWords::empty());

    let nb = pole_neighbors(&g, &index, Pole::Positive, planted.len(), "g").unwrap();
    let retrieved: HashSet<&str> = nb.neighbors.iter().map(|n| n.token.as_str()).collect();
    let all_planted = planted.iter().all(|(t, _)| retrieved.contains(t.as_str()));

    let clustering =
        cluster_pole(&nb, &space, &ClusterConfig { min_cluster_size: 1, seed: 5, ..Default::default() }).unwrap();
    let mut label = std::collections::HashMap::new();
    for (ci, c) in clustering.clusters.iter().enumerate() {
        for m in &c.members {
            label.insert(m.clone(), ci);
        }
    }
    let (mut agree, mut pairs) = (0usize, 0usize);
    for i in 0..planted.len() {
        for j in i + 1..planted.len() {
            let same_truth = planted[i].1 == planted[j].1;
            let same_found = label.get(&planted[i].0) == label.get(&planted[j].0);
            agree += usize::from(same_truth == same_found);
            pairs += 1;
        }
    }
    let rand_index = agree as f64 / pairs as f64;

    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
    let antisym = [10, 60, 150].iter().all(|&n| {
        pole_neighbors(&g, &index, Pole::Negative, n, "g").unwrap().neighbors
            == pole_neighbors(&neg, &index, Pole::Positive, n, "g").unwrap().neighbors
    });
    outcome(
        rand_index >= 0.9 && antisym && all_planted,
        format!(
            "Rand index {rand_index:.3} (k = {}); planted tokens retrieved: {all_planted}; antisymmetry: {antisym}",
            clustering.k
        ),
    )
}

fn criterion_12() -> Option<Outcome> {
    let config = std::env::var_os("MODSSD_INTEGRATION_CONFIG")?;
    let config = Path::new(&config);
    for stage in ["embed", "sweep", "fit"] {
        let st =
            Command::new(env!("CARGO_BIN_EXE_modssd")).args(["--config", config.to_str()?, stage]).status().ok()?;
        if !st.success() {
            return Some(outcome(false, format!("{stage} failed")));
        }
    }
    let cfg = modssd_cli::config::RunConfig::load(config).ok()?;
    let summary: modssd_cli::commands::FitSummary =
        modssd_cli::artifacts::read_json(&cfg.output_dir().join("fit/fit.json")).ok()?;
    Some(outcome(
        (summary.r2 - 0.663).abs() <= 0.05 && summary.delta_f.p_value < 1e-10,
        format!("R² {:.3} (target .663 ± .05), interaction p {:e}", summary.r2, summary.delta_f.p_value),
    ))
}

fn main() {
    // `cargo test` passes harness flags such as `--list`; nothing to list here
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: Vec<Criterion> = vec![
        (1, "OLS oracle equivalence", Some(Duration::from_secs(10)), criterion_1),
        (2, "Wald/incremental equivalence", Some(Duration::from_secs(30)), criterion_2),
        (3, "q = 1 reduction", None, criterion_3),
        (4, "null calibration", Some(Duration::from_secs(300)), criterion_4),
        (5, "gradient recovery", Some(Duration::from_secs(300)), criterion_5),
        (6, "effect-size recovery", None, criterion_6),
        (7, "df bookkeeping", None, criterion_7),
        (8, "conditional-gradient identity", None, criterion_8),
        (9, "embedding invariants", None, criterion_9),
        (10, "pipeline determinism", None, criterion_10),
        (11, "interpretation sanity", None, criterion_11),
    ];
    let mut failed = 0;
    for (id, name, limit, f) in criteria {
        let start = Instant::now();
        let mut o = f();
        let elapsed = start.elapsed();
        if let Some(limit) = limit {
            if elapsed > limit {
                o.pass = false;
                o.detail.push_str(&format!("; runtime limit {limit:?} exceeded"));
            }
        }
        failed += usize::from(!o.pass);
        println!(
            "criterion {id:>2} {:<31} {}  {} [{:.2}s]",
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
    }
    let start = Instant::now();
    match criterion_12() {
        Some(o) => println!(
            "criterion 12 {:<31} {}  {} [{:.2}s]",
            "integration run (optional)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        ),
        None => {
            println!("criterion 12 {:<31} SKIP  set MODSSD_INTEGRATION_CONFIG to enable", "integration run (optional)")
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

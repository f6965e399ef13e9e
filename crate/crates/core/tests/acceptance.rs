//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line to the
//! real stdout (bypassing the test harness capture) before asserting.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use vulngraph::corpus::{self, CorpusFormat, CorpusSplit, RawSample};
use vulngraph::graphs::{self, apply_metapath, CodeGraph, GraphKind, TokenRange};
use vulngraph::grsa::scaled_dot_attention_weights;
use vulngraph::model::{self, batch_loss, gradcheck, loss_and_grads, Metrics, ModelParams, SampleInput, TrainConfig};
use vulngraph::numerics::Matrix;
use vulngraph::pipeline::{self, Embeddings, RunOptions};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Writes the verdict line outside the harness capture so it shows in plain
/// `cargo test` output.
fn report(n: u32, pass: bool, elapsed: Duration, budget: Duration, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {n}: {verdict} ({:.2}s, budget {}s) {detail}\n", elapsed.as_secs_f64(), budget.as_secs());
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn finish(n: u32, start: Instant, budget_secs: u64, failures: &[String], detail: &str) {
    let elapsed = start.elapsed();
    let budget = Duration::from_secs(budget_secs);
    let pass = failures.is_empty() && elapsed <= budget;
    report(n, pass, elapsed, budget, detail);
    assert!(failures.is_empty(), "criterion {n}: {failures:?}");
    assert!(elapsed <= budget, "criterion {n}: took {elapsed:?}, budget {budget:?}");
}

/// Training settings for the 20-sample corpus: the default lr and batch are
/// sized for thousands of samples and 10 epochs.
fn overfit_config(seed: u64) -> TrainConfig {
    TrainConfig { learning_rate: 1e-3, batch_size: 4, epochs: 200, l_max: 64, seed, ..TrainConfig::default() }
}

fn guard_corpus() -> Vec<RawSample> {
    corpus::load_corpus(&fixture("null_guard.jsonl"), CorpusFormat::Jsonl).unwrap()
}

fn train_only(raws: &[RawSample]) -> CorpusSplit {
    corpus::split_corpus(raws, [1.0, 0.0, 0.0], 0, false).unwrap()
}

#[test]
fn criterion_1_graph_oracle() {
    let start = Instant::now();
    let source = std::fs::read_to_string(fixture("count.c")).unwrap();
    let expected: Value = serde_json::from_str(&std::fs::read_to_string(fixture("count_graphs.json")).unwrap()).unwrap();
    let b = graphs::extract(&source).unwrap();
    let set = |v: &Value| -> BTreeSet<(usize, usize)> {
        v.as_array().unwrap().iter().map(|e| (e[0].as_u64().unwrap() as usize, e[1].as_u64().unwrap() as usize)).collect()
    };
    let named = |k: &str| expected["named_nodes"][k].as_u64().unwrap() as usize;
    let mut failures = Vec::new();
    for (name, g) in [("AST", &b.ast), ("CFG", &b.cfg), ("DFG", &b.dfg)] {
        let got: BTreeSet<_> = g.edges().collect();
        let want = set(&expected[name.to_lowercase().as_str()]);
        if got != want {
            failures.push(format!("{name}: missing {:?}, extra {:?}", &want - &got, &got - &want));
        }
    }
    let decl = named("decl_count");
    let leaves: Vec<usize> = b.ast.edges().filter(|&(a, _)| a == decl).map(|(_, c)| c).collect();
    if leaves.is_empty() || leaves.iter().any(|&c| !b.nodes[c].children.is_empty()) {
        failures.push(format!("declaration children {leaves:?} are not all leaves"));
    }
    if !b.cfg.has_edge(named("if_condition"), named("for_init")) {
        failures.push("no CFG edge from the branch into the loop".into());
    }
    if !b.cfg.has_edge(named("if_condition"), named("return")) {
        failures.push("no CFG edge from the branch to the return".into());
    }
    if !b.dfg.has_edge(decl, named("count_update")) {
        failures.push("no DFG edge from `int count = 1` to `count *= 2`".into());
    }
    finish(1, start, 1, &failures, &format!("{} AST, {} CFG, {} DFG edges", b.ast.edge_count(), b.cfg.edge_count(), b.dfg.edge_count()));
}

#[test]
fn criterion_2_metapath_properties() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = Vec::new();
    for case in 0..1000 {
        let n = rng.gen_range(1..=32);
        let density: f64 = rng.gen_range(0.0..0.4);
        let mut dense = vec![vec![false; n]; n];
        let mut edges = Vec::new();
        for (a, row) in dense.iter_mut().enumerate() {
            for (b, cell) in row.iter_mut().enumerate() {
                if rng.gen_bool(density) {
                    *cell = true;
                    edges.push((a, b));
                }
            }
        }
        let ranges = (0..n).map(|i| TokenRange { lo: i, hi: i + 1 }).collect();
        let g = CodeGraph::from_edges(GraphKind::Ast, ranges, edges).unwrap();
        let m = apply_metapath(&g);
        let oracle: BTreeSet<(usize, usize)> =
            (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).filter(|&(a, b)| dense[a][b] || dense[b][a]).collect();
        let got: BTreeSet<(usize, usize)> = m.edges().collect();
        if got != oracle {
            failures.push(format!("case {case}: differs from M OR Mᵀ"));
        }
        if got.iter().any(|&(a, b)| !got.contains(&(b, a))) {
            failures.push(format!("case {case}: not symmetric"));
        }
        if apply_metapath(&m) != m {
            failures.push(format!("case {case}: not idempotent"));
        }
        if failures.len() > 5 {
            break;
        }
    }
    finish(2, start, 5, &failures, "1000 random digraphs, n ≤ 32");
}

/// Softmax-weighted sum written out directly, without the library kernels.
fn attention_oracle(q: &Matrix, k: &Matrix, v: &Matrix, mask: &[bool]) -> Vec<Vec<f64>> {
    let (l, dk) = q.shape();
    let mut out = vec![vec![0.0; v.cols()]; l];
    for i in 0..l {
        if !mask[i] {
            continue;
        }
        let scores: Vec<Option<f64>> = (0..l)
            .map(|j| mask[j].then(|| (0..dk).map(|t| q.get(i, t) * k.get(j, t)).sum::<f64>() / (dk as f64).sqrt()))
            .collect();
        let top = scores.iter().flatten().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exp: Vec<f64> = scores.iter().map(|s| s.map_or(0.0, |s| (s - top).exp())).collect();
        let z: f64 = exp.iter().sum();
        for (j, e) in exp.iter().enumerate() {
            for c in 0..v.cols() {
                out[i][c] += e / z * v.get(j, c);
            }
        }
    }
    out
}

#[test]
fn criterion_3_attention_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    let mut worst_row = 0.0f64;
    for case in 0..500 {
        let l = rng.gen_range(1..=8);
        let dk = rng.gen_range(1..=8);
        let dv = rng.gen_range(1..=8);
        let mut random = |r: usize, c: usize| {
            Matrix::new(r, c, (0..r * c).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
        };
        let (q, k, v) = (random(l, dk), random(l, dk), random(l, dv));
        let real = rng.gen_range(1..=l);
        let mask: Vec<bool> = (0..l).map(|i| i < real).collect();
        let (out, weights) = scaled_dot_attention_weights(&q, &k, &v, &mask).unwrap();
        let oracle = attention_oracle(&q, &k, &v, &mask);
        for (i, row) in oracle.iter().enumerate() {
            for (c, want) in row.iter().enumerate() {
                worst = worst.max((out.get(i, c) - want).abs());
            }
            if mask[i] {
                worst_row = worst_row.max((weights.row(i).iter().sum::<f64>() - 1.0).abs());
            }
        }
        if worst > 1e-12 || worst_row > 1e-12 {
            failures.push(format!("case {case}: output error {worst:e}, row-sum error {worst_row:e}"));
            break;
        }
    }
    finish(3, start, 5, &failures, &format!("500 instances, max |Δ| {worst:.1e}, max row-sum error {worst_row:.1e}"));
}

/// Central differences over every parameter, written here rather than taken
/// from the library.
fn finite_difference_error(batch: &[&SampleInput], params: &ModelParams, config: &TrainConfig) -> f64 {
    let eps = 1e-5;
    let (_, grads) = loss_and_grads(batch, params, config).unwrap();
    let analytic: Vec<f64> = grads.named_tensors().iter().flat_map(|(_, m)| m.data().to_vec()).collect();
    let mut worst = 0.0f64;
    let mut q = params.clone();
    let mut flat_index = 0;
    let count = q.tensors_mut().len();
    for t in 0..count {
        let len = q.tensors_mut()[t].len();
        for i in 0..len {
            let orig = q.tensors_mut()[t].data()[i];
            q.tensors_mut()[t].data_mut()[i] = orig + eps;
            let plus = batch_loss(batch, &q, config).unwrap();
            q.tensors_mut()[t].data_mut()[i] = orig - eps;
            let minus = batch_loss(batch, &q, config).unwrap();
            q.tensors_mut()[t].data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let an = analytic[flat_index];
            let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-12);
            worst = worst.max(rel);
            flat_index += 1;
        }
    }
    worst
}

#[test]
fn criterion_4_gradient_suite() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for instance in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + instance);
        let l = rng.gen_range(3..=8);
        let config = gradcheck::tiny_config(l);
        let vocab = rng.gen_range(2..=6);
        let params = ModelParams::init(&config, Some(vocab), &mut rng);
        let size = rng.gen_range(1..=3);
        let batch: Vec<SampleInput> = (0..size)
            .map(|_| {
                let n = rng.gen_range(1..=l);
                let label = rng.gen_range(0..=1);
                gradcheck::random_sample(n, vocab, label, &mut rng)
            })
            .collect();
        let refs: Vec<&SampleInput> = batch.iter().collect();
        let err = finite_difference_error(&refs, &params, &config);
        worst = worst.max(err);
        if err >= 1e-4 {
            failures.push(format!("instance {instance}: relative error {err:e}"));
        }
    }
    finish(4, start, 60, &failures, &format!("20 instances, max relative error {worst:.1e}"));
}

#[test]
fn criterion_5_overfit() {
    let start = Instant::now();
    let raws = guard_corpus();
    let split = train_only(&raws);
    let ck = pipeline::fit(&raws, &split, &overfit_config(0), Embeddings::Trainable, &RunOptions::default()).unwrap();
    let prepared = pipeline::prepare(&raws, &ck.config, &RunOptions::default()).unwrap();
    let report = pipeline::evaluate_ids(&ck, &prepared, &split.train, None, 1).unwrap();
    let prob = |id: &str| report.predictions.iter().find(|p| p.id == id).unwrap().probability;
    let vulnerable: Vec<&str> = raws.iter().filter(|r| r.label == 1).map(|r| r.id.as_str()).collect();
    let ordered = vulnerable
        .iter()
        .filter(|id| prob(&id.replace("_vulnerable", "_patched")) < prob(id))
        .count();
    let pair_fraction = ordered as f64 / vulnerable.len() as f64;
    let mut failures = Vec::new();
    if report.metrics.accuracy < 0.95 {
        failures.push(format!("training accuracy {}", report.metrics.accuracy));
    }
    if pair_fraction < 0.8 {
        failures.push(format!("patched below vulnerable for {ordered}/{} pairs", vulnerable.len()));
    }
    finish(
        5,
        start,
        300,
        &failures,
        &format!("train accuracy {:.3} after 200 epochs, {ordered}/{} pairs ordered", report.metrics.accuracy, vulnerable.len()),
    );
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

#[test]
fn criterion_6_ablation_direction() {
    let start = Instant::now();
    let raws = guard_corpus();
    let split = train_only(&raws);
    let (mut full, mut no_pls) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let config = overfit_config(seed);
        let prepared = pipeline::prepare(&raws, &config, &RunOptions::default()).unwrap();
        for (cfg, out) in [(config.clone(), &mut full), (model::ablate(&config, vulngraph::grsa::Representation::Pls).unwrap(), &mut no_pls)] {
            let ck = pipeline::fit_prepared(&prepared, &split, &cfg, Embeddings::Trainable).unwrap();
            out.push(ck.metrics_history.last().unwrap().train_loss);
        }
    }
    let (f, p) = (median(full.clone()), median(no_pls.clone()));
    let failures = if p >= f { Vec::new() } else { vec![format!("median w/o PLS loss {p:e} < full {f:e}")] };
    finish(6, start, 900, &failures, &format!("median final train loss: full {f:.3e}, w/o PLS {p:.3e} (seeds 0-2)"));
}

#[test]
fn criterion_7_metrics_algebra() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = Vec::new();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    for case in 0..10_000 {
        let scale = [3u64, 20, 1000][case % 3];
        let c: [u64; 4] = std::array::from_fn(|_| if rng.gen_bool(0.1) { 0 } else { rng.gen_range(0..=scale) });
        let [tp, fp, tn, fn_] = c;
        let m = Metrics::from_counts(tp, fp, tn, fn_);
        let total = (tp + fp + tn + fn_) as f64;
        let accuracy = if total == 0.0 { 0.0 } else { (tp + tn) as f64 / total };
        let precision = if tp + fp == 0 { None } else { Some(tp as f64 / (tp + fp) as f64) };
        let recall = if tp + fn_ == 0 { None } else { Some(tp as f64 / (tp + fn_) as f64) };
        let f1 = if 2 * tp + fp + fn_ == 0 || tp == 0 { None } else { Some(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64) };
        let ok = close(m.accuracy, accuracy)
            && close(m.precision, precision.unwrap_or(0.0))
            && m.precision_undefined == precision.is_none()
            && close(m.recall, recall.unwrap_or(0.0))
            && m.recall_undefined == recall.is_none()
            && close(m.f1, f1.unwrap_or(0.0))
            && m.f1_undefined == f1.is_none()
            && (total == 0.0 || close(m.accuracy + (fp + fn_) as f64 / total, 1.0));
        if !ok {
            failures.push(format!("counts {c:?} gave {m:?}"));
            if failures.len() > 5 {
                break;
            }
        }
    }
    finish(7, start, 5, &failures, "10000 confusion matrices");
}

#[test]
fn criterion_8_determinism() {
    let start = Instant::now();
    let raws = guard_corpus();
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig { epochs: 60, seed: 11, ..overfit_config(11) };
    let run = |name: &str| {
        let split = corpus::split_corpus(&raws, [0.8, 0.1, 0.1], 9, true).unwrap();
        let opts = RunOptions { cache_dir: Some(dir.path().join(format!("{name}.cache"))), jobs: 1 };
        let ck = pipeline::fit(&raws, &split, &config, Embeddings::Trainable, &opts).unwrap();
        let model = dir.path().join(format!("{name}.dvs"));
        corpus::save_checkpoint(&ck, &model).unwrap();
        let csv = dir.path().join(format!("{name}.loss.csv"));
        std::fs::write(&csv, pipeline::loss_csv(&ck.metrics_history)).unwrap();
        (std::fs::read(model).unwrap(), std::fs::read(csv).unwrap())
    };
    let (a_model, a_csv) = run("a");
    let (b_model, b_csv) = run("b");
    let mut failures = Vec::new();
    if a_model != b_model {
        failures.push("checkpoints differ".to_string());
    }
    if a_csv != b_csv {
        failures.push("loss CSVs differ".to_string());
    }
    finish(8, start, 600, &failures, &format!("checkpoint {} bytes, loss CSV {} bytes", a_model.len(), a_csv.len()));
}

#[test]
fn criterion_9_round_trips() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();

    let raws = guard_corpus();
    let corpus_path = dir.path().join("c.jsonl");
    corpus::write_jsonl(&corpus_path, &raws).unwrap();
    let reread = corpus::load_corpus(&corpus_path, CorpusFormat::Jsonl).unwrap();
    if reread != raws {
        failures.push("corpus changed through JSONL".to_string());
    }

    let split = corpus::split_corpus(&reread, [0.6, 0.2, 0.2], 13, true).unwrap();
    let split_path = dir.path().join("c.split.json");
    split.save(&split_path).unwrap();
    if CorpusSplit::load(&split_path).unwrap() != split {
        failures.push("split manifest changed on reload".to_string());
    }

    let config = TrainConfig { epochs: 2, ..gradcheck::tiny_config(64) };
    let ck = pipeline::fit(&reread, &split, &config, Embeddings::Trainable, &RunOptions::default()).unwrap();
    let model_path = dir.path().join("m.dvs");
    corpus::save_checkpoint(&ck, &model_path).unwrap();
    let back = corpus::load_checkpoint(&model_path).unwrap();
    if back != ck || back.to_bytes() != std::fs::read(&model_path).unwrap() {
        failures.push("checkpoint changed on reload".to_string());
    }

    for r in &raws {
        let bundle = graphs::extract(&r.source).unwrap();
        let json = graphs::bundle_to_json(&bundle);
        let imported = graphs::bundle_from_json(&json).unwrap();
        let rebuilt = graphs::build_bundle(
            bundle.tokens.clone(),
            graphs::parse_tree_from_json(&graphs::parse_tree_to_json(&bundle.nodes)).unwrap(),
        )
        .unwrap();
        if imported != bundle || rebuilt != bundle || graphs::bundle_to_json(&imported) != json {
            failures.push(format!("graphs of `{}` changed through JSON", r.id));
        }
    }
    finish(9, start, 10, &failures, "corpus, split, checkpoint and graph bundles");
}

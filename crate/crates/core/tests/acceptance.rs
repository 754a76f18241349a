//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::Instant;

use lifecycle_rca::eval::{evaluate, hr_at_k, ndcg_at_k, ALL_TYPES};
use lifecycle_rca::faultgen::{generate_dataset, generate_normal, FaultCategory, WorkloadSpec};
use lifecycle_rca::features::{zero_metric_segments, FeatureConfig};
use lifecycle_rca::gat::{train, reconstruction_loss, row_distances, Activation, GatAutoEncoder, GatLayer, Neighborhoods, TrainConfig};
use lifecycle_rca::graph::GlobalCallGraph;
use lifecycle_rca::linalg::Matrix;
use lifecycle_rca::obs::dataset::Dataset;
use lifecycle_rca::obs::{NodeKey, NodeKind};
use lifecycle_rca::pipeline::{fit_store, train_model, training_samples};
use lifecycle_rca::rca::{fit_normal_patterns, localize, Method};
use lifecycle_rca::rng::keyed_rng;
use lifecycle_rca::scalar::ScalarProjector;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Connected random graph: a random spanning tree plus extra edges.
fn random_edges(n: usize, rng: &mut ChaCha20Rng) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
    for _ in 0..rng.random_range(0..=n) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b && !edges.contains(&(a, b)) {
            edges.push((a, b));
        }
    }
    edges
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = keyed_rng(1, "acceptance/gradients");
    let mut worst: f64 = 0.0;
    for g in 0..20 {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(2..=16);
        let edges = random_edges(n, &mut rng);
        let nb = Neighborhoods::from_edges(n, &edges);
        let x = random_matrix(n, d, &mut rng);
        let mut model = GatAutoEncoder::new(d, 4, 100 + g);
        let (loss, grads) = model.loss_and_gradients(&x, &nb).unwrap();
        let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
        let step = 1e-5;
        for (k, grad) in analytic.iter().enumerate() {
            for (i, &a) in grad.iter().enumerate() {
                let orig = model.parameters_mut()[k][i];
                model.parameters_mut()[k][i] = orig + step;
                let plus = model.loss_and_gradients(&x, &nb).unwrap().0;
                model.parameters_mut()[k][i] = orig - step;
                let minus = model.loss_and_gradients(&x, &nb).unwrap().0;
                model.parameters_mut()[k][i] = orig;
                let numeric = (plus - minus) / (2.0 * step);
                let denom = a.abs().max(numeric.abs()).max(1e-5 * loss.max(1.0));
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-4 && secs < 10.0,
        format!("max relative error {worst:.2e} (limit 1e-4), {secs:.2} s (limit 10 s)"),
    )
}

fn attention_normalization() -> Outcome {
    let mut rng = keyed_rng(2, "acceptance/attention");
    let (mut nodes, mut worst, mut negative) = (0, 0.0f64, 0usize);
    let mut g = 0;
    while nodes < 1000 {
        let n = rng.random_range(1..=20);
        let d = rng.random_range(2..=12);
        let nb = Neighborhoods::from_edges(n, &random_edges(n, &mut rng));
        let model = GatAutoEncoder::new(d, rng.random_range(2..=8), g);
        let pass = model.forward(&random_matrix(n, d, &mut rng), &nb).unwrap();
        for cache in &pass.caches {
            for i in 0..n {
                let row = &cache.alpha[nb.range(i)];
                negative += row.iter().filter(|a| **a < 0.0).count();
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
        nodes += n;
        g += 1;
    }
    outcome(
        worst <= 1e-6 && negative == 0,
        format!("{nodes} nodes in {g} graphs, max |row sum - 1| {worst:.1e}, {negative} negative entries"),
    )
}

fn scalar_normalization() -> Outcome {
    let mut rng = keyed_rng(3, "acceptance/scalar");
    let proj = ScalarProjector::init("cpu", 16, 32, 3);
    let mut worst: f64 = 0.0;
    let mut outside = 0;
    for _ in 0..10_000 {
        let x: f64 = rng.random_range(-50.0..50.0);
        let s = proj.weights_for(x);
        worst = worst.max((s.iter().sum::<f64>() - 1.0).abs());
        outside += s.iter().filter(|v| !(**v > 0.0 && **v < 1.0)).count();
    }
    let mut flat = proj.clone();
    flat.weights = vec![0.0; 16];
    flat.bias = vec![0.0; 16];
    let uniform = [-3.0, 0.0, 7.5].iter().all(|&x| flat.weights_for(x).iter().all(|v| *v == 1.0 / 16.0));
    outcome(
        worst <= 1e-9 && outside == 0 && uniform,
        format!("max |sum - 1| {worst:.1e} over 10^4 inputs, {outside} components outside (0,1), uniform case exact: {uniform}"),
    )
}

/// One GAT layer with an adjacency matrix and scalar loops.
fn dense_layer(h: &Matrix, edges: &[(usize, usize)], layer: &GatLayer) -> Matrix {
    let n = h.rows();
    let (din, dout) = (layer.weight.rows(), layer.weight.cols());
    let mut adj = vec![vec![false; n]; n];
    for (i, row) in adj.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(s, d) in edges {
        adj[d][s] = true;
    }
    let mut wx = vec![vec![0.0; dout]; n];
    for i in 0..n {
        for c in 0..dout {
            for k in 0..din {
                wx[i][c] += h[(i, k)] * layer.weight[(k, c)];
            }
        }
    }
    let mut out = Matrix::zeros(n, dout);
    for i in 0..n {
        let mut e = vec![f64::NEG_INFINITY; n];
        for j in 0..n {
            if adj[i][j] {
                let mut s = 0.0;
                for c in 0..dout {
                    s += layer.attention[c] * wx[i][c] + layer.attention[dout + c] * wx[j][c];
                }
                e[j] = if s > 0.0 { s } else { layer.leaky_slope * s };
            }
        }
        let max = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = e.iter().map(|v| (v - max).exp()).sum();
        for j in 0..n {
            let alpha = (e[j] - max).exp() / z;
            for c in 0..dout {
                out[(i, c)] += alpha * wx[j][c];
            }
        }
        if layer.activation == Activation::Relu {
            for c in 0..dout {
                out[(i, c)] = out[(i, c)].max(0.0);
            }
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn oracle_equivalence() -> Outcome {
    let mut rng = keyed_rng(4, "acceptance/oracle");
    let (mut fwd, mut loss_err, mut score_err) = (0.0f64, 0.0f64, 0.0f64);
    for g in 0..50 {
        let n = rng.random_range(1..=10);
        let d = rng.random_range(2..=12);
        let edges = random_edges(n, &mut rng);
        let nb = Neighborhoods::from_edges(n, &edges);
        let x = random_matrix(n, d, &mut rng);
        let model = GatAutoEncoder::new(d, rng.random_range(2..=8), 200 + g);
        let pass = model.forward(&x, &nb).unwrap();
        let mut h = x.clone();
        for (layer, sparse) in model.layers.iter().zip(&pass.hidden) {
            h = dense_layer(&h, &edges, layer);
            fwd = fwd.max(max_abs_diff(h.as_slice(), sparse.as_slice()));
        }
        let mut loss = 0.0;
        let mut rows = vec![0.0; n];
        for i in 0..n {
            for j in 0..d {
                let e = x[(i, j)] - h[(i, j)];
                loss += e * e;
                rows[i] += e * e;
            }
        }
        let rows: Vec<f64> = rows.into_iter().map(f64::sqrt).collect();
        loss_err = loss_err.max((reconstruction_loss(&x, pass.reconstruction()).unwrap() - loss).abs());
        score_err = score_err.max(max_abs_diff(&row_distances(&x, pass.reconstruction()).unwrap(), &rows));
    }
    outcome(
        fwd <= 1e-10 && loss_err <= 1e-12 && score_err <= 1e-12,
        format!("forward {fwd:.1e} (limit 1e-10), loss {loss_err:.1e}, scores {score_err:.1e} (limit 1e-12)"),
    )
}

fn brute_hr(ranking: &[NodeKey], truth: &BTreeSet<NodeKey>, k: usize) -> f64 {
    let mut hit = 0.0;
    for (pos, node) in ranking.iter().enumerate() {
        if pos < k && truth.contains(node) {
            hit = 1.0;
        }
    }
    hit
}

fn brute_ndcg(ranking: &[NodeKey], truth: &BTreeSet<NodeKey>, k: usize) -> f64 {
    let mut dcg = 0.0;
    for (pos, node) in ranking.iter().enumerate() {
        if pos < k && truth.contains(node) {
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let mut idcg = 0.0;
    let mut placed = 0;
    for pos in 0..k.min(ranking.len()) {
        if placed < truth.len() {
            idcg += 1.0 / ((pos + 2) as f64).log2();
            placed += 1;
        }
    }
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

fn metric_oracles() -> Outcome {
    let mut rng = keyed_rng(5, "acceptance/metrics");
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=12);
        let mut ranking: Vec<NodeKey> = (0..n)
            .map(|i| NodeKey::new(NodeKind::ALL[i % 4], format!("f{}", i / 4)))
            .collect();
        ranking.shuffle(&mut rng);
        let t = rng.random_range(1..=n.min(3));
        let truth: BTreeSet<NodeKey> = ranking.choose_multiple(&mut rng, t).cloned().collect();
        for k in [t, t + 2, rng.random_range(1..=n + 2)] {
            if hr_at_k(&ranking, &truth, k) != brute_hr(&ranking, &truth, k)
                || ndcg_at_k(&ranking, &truth, k) != brute_ndcg(&ranking, &truth, k)
            {
                mismatches += 1;
            }
        }
    }
    let a = NodeKey::new(NodeKind::Function, "a");
    let b = NodeKey::new(NodeKind::Function, "b");
    let worked = ndcg_at_k(&[a, b.clone()], &BTreeSet::from([b]), 2);
    let worked_err = (worked - 1.0 / 3f64.log2()).abs();
    outcome(
        mismatches == 0 && worked_err <= 1e-12,
        format!("{mismatches} mismatches over 1000 instances, worked example error {worked_err:.1e}"),
    )
}

fn training_sanity() -> Outcome {
    let spec = WorkloadSpec::default();
    let bundles = generate_normal(&spec, "train", 200);
    let start = Instant::now();
    let a = train_model(&bundles, FeatureConfig::default(), TrainConfig::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let b = train_model(&bundles, FeatureConfig::default(), TrainConfig::default()).unwrap();
    let identical = a.to_bytes().unwrap() == b.to_bytes().unwrap();
    let (first, last) = (a.epoch_losses[0], *a.epoch_losses.last().unwrap());
    outcome(
        last <= 0.5 * first && secs < 120.0 && identical,
        format!(
            "loss {first:.3} -> {last:.3} (ratio {:.3}, limit 0.5), {secs:.1} s (limit 120 s), rerun bitwise identical: {identical}",
            last / first
        ),
    )
}

/// Everything later criteria need from one end-to-end run on the default
/// synthetic dataset.
struct EndToEnd {
    categories: Vec<FaultCategory>,
    faasrca_top: Vec<NodeKey>,
    truths: Vec<BTreeSet<NodeKey>>,
    hr1: f64,
    ndcg1: f64,
    faasrca_hr_k: f64,
    direct_hr_k: f64,
    ms_per_graph: f64,
    ablated_hits: Vec<bool>,
}

fn run_end_to_end() -> EndToEnd {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&WorkloadSpec::default(), dir.path()).unwrap();
    let data = Dataset::read(dir.path()).unwrap();
    let model = train_model(&data.train, FeatureConfig::default(), TrainConfig::default()).unwrap();
    let store = fit_store(&model, &data.fit).unwrap();

    let categories: BTreeMap<&str, FaultCategory> = data
        .labels
        .iter()
        .map(|l| (l.trace_id.as_str(), l.category.as_deref().unwrap().parse().unwrap()))
        .collect();

    let start = Instant::now();
    let mut graphs = Vec::with_capacity(data.faulty.len());
    let mut rankings = Vec::with_capacity(data.faulty.len());
    for bundle in &data.faulty {
        let g = model.features.assemble(bundle).unwrap();
        rankings.push(localize(&model.network, &store, &g).unwrap().nodes());
        graphs.push(g);
    }
    let ms_per_graph = start.elapsed().as_secs_f64() * 1000.0 / graphs.len() as f64;

    let truths: Vec<BTreeSet<NodeKey>> = graphs.iter().map(|g| g.truth_keys().unwrap()).collect();
    let n = graphs.len() as f64;
    let hr1 = rankings.iter().zip(&truths).map(|(r, t)| hr_at_k(r, t, 1)).sum::<f64>() / n;
    let ndcg1 = rankings.iter().zip(&truths).map(|(r, t)| ndcg_at_k(r, t, 1)).sum::<f64>() / n;
    let report = evaluate(&model.network, &store, &graphs, &Method::ALL).unwrap();
    let hr_k = |m| report.row(m, ALL_TYPES).unwrap().hr_k;

    // Model variant without the metric modality: metric segments are zeroed
    // in every graph it sees (training, normal patterns and faulty traces),
    // with the same layout, features and seed as the full model.
    let layout = &model.features.layout;
    let strip = |mut g: GlobalCallGraph| {
        zero_metric_segments(&mut g, layout);
        g
    };
    let ablated_train: Vec<GlobalCallGraph> =
        model.features.assemble_all(&data.train).unwrap().into_iter().map(strip).collect();
    let (ablated_net, _) = train(&training_samples(&ablated_train), &TrainConfig::default()).unwrap();
    let fit_graphs: Vec<GlobalCallGraph> =
        model.features.assemble_all(&data.fit).unwrap().into_iter().map(strip).collect();
    let ablated_store = fit_normal_patterns(&ablated_net, &fit_graphs, "ablation").unwrap();
    let ablated_hits = graphs
        .iter()
        .zip(&truths)
        .map(|(g, t)| {
            let r = localize(&ablated_net, &ablated_store, &strip(g.clone())).unwrap();
            hr_at_k(&r.nodes(), t, 1) == 1.0
        })
        .collect();

    EndToEnd {
        categories: graphs.iter().map(|g| categories[g.trace_id.as_str()]).collect(),
        faasrca_top: rankings.iter().map(|r| r[0].clone()).collect(),
        truths,
        hr1,
        ndcg1,
        faasrca_hr_k: hr_k(Method::Faasrca),
        direct_hr_k: hr_k(Method::Direct),
        ms_per_graph,
        ablated_hits,
    }
}

fn localization_regression(e: &EndToEnd) -> Outcome {
    let gap = e.faasrca_hr_k - e.direct_hr_k;
    outcome(
        e.hr1 >= 0.80 && e.ndcg1 >= 0.80 && gap >= 5.0 && e.ms_per_graph <= 10.0,
        format!(
            "faasrca HR@1 {:.4} NDCG@1 {:.4} (limit 0.80), HR@k faasrca {:.2} vs direct {:.2} (gap {gap:.2}, limit 5), {:.3} ms/graph (limit 10)",
            e.hr1, e.ndcg1, e.faasrca_hr_k, e.direct_hr_k, e.ms_per_graph
        ),
    )
}

/// HR@1 in percent over graphs whose category satisfies `pick`.
fn group_hr1(e: &EndToEnd, pick: impl Fn(FaultCategory) -> bool, ablated: bool) -> f64 {
    let mut hits = 0;
    let mut n = 0;
    for (i, &c) in e.categories.iter().enumerate() {
        if pick(c) {
            n += 1;
            let hit = if ablated {
                e.ablated_hits[i]
            } else {
                e.truths[i].contains(&e.faasrca_top[i])
            };
            hits += usize::from(hit);
        }
    }
    100.0 * hits as f64 / n as f64
}

fn ablation_structure(e: &EndToEnd) -> Outcome {
    let metric = |c: FaultCategory| c.is_metric();
    let platform = |c: FaultCategory| c.is_platform();
    let (m_full, m_abl) = (group_hr1(e, metric, false), group_hr1(e, metric, true));
    let (p_full, p_abl) = (group_hr1(e, platform, false), group_hr1(e, platform, true));
    let drop = m_full - m_abl;
    let change = (p_full - p_abl).abs();
    outcome(
        drop >= 20.0 && change < 10.0,
        format!(
            "metric faults HR@1 {m_full:.1} -> {m_abl:.1} (drop {drop:.1}, limit >= 20), platform faults {p_full:.1} -> {p_abl:.1} (change {change:.1}, limit < 10)"
        ),
    )
}

fn permutation_equivariance() -> Outcome {
    let mut rng = keyed_rng(9, "acceptance/permutation");
    let mut worst: f64 = 0.0;
    for g in 0..50 {
        let n = rng.random_range(2..=12);
        let d = rng.random_range(2..=12);
        let edges = random_edges(n, &mut rng);
        let x = random_matrix(n, d, &mut rng);
        let model = GatAutoEncoder::new(d, rng.random_range(2..=8), 300 + g);
        let scores = model.node_scores(&x, &Neighborhoods::from_edges(n, &edges)).unwrap().0;
        // perm[new] = old
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut px = Matrix::zeros(n, d);
        for (new, &old) in perm.iter().enumerate() {
            px.row_mut(new).copy_from_slice(x.row(old));
        }
        let pe: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (inv[a], inv[b])).collect();
        let permuted = model.node_scores(&px, &Neighborhoods::from_edges(n, &pe)).unwrap().0;
        for old in 0..n {
            worst = worst.max((scores[old] - permuted[inv[old]]).abs());
        }
    }
    outcome(worst <= 1e-9, format!("max per-identity score difference {worst:.1e} over 50 graphs (limit 1e-9)"))
}

fn lifecycle_coverage(e: &EndToEnd) -> Outcome {
    let share = |platform: bool| {
        let mut right = 0;
        let mut n = 0;
        for (c, top) in e.categories.iter().zip(&e.faasrca_top) {
            if c.is_platform() == platform {
                n += 1;
                right += usize::from((top.node_kind != NodeKind::Function) == platform);
            }
        }
        right as f64 / n as f64
    };
    let (p, a) = (share(true), share(false));
    outcome(
        p >= 0.80 && a >= 0.80,
        format!("platform faults ranked on a platform node {:.1}%, application faults on a function node {:.1}% (limit 80%)", 100.0 * p, 100.0 * a),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("{tag} {id:>2} {name}: {}", o.detail);
    };
    report(1, "gradient correctness", gradient_correctness());
    report(2, "attention normalization", attention_normalization());
    report(3, "scalar embedding normalization", scalar_normalization());
    report(4, "oracle equivalence", oracle_equivalence());
    report(5, "metric oracles", metric_oracles());
    report(6, "training sanity", training_sanity());
    let e2e = run_end_to_end();
    report(7, "end-to-end localization", localization_regression(&e2e));
    report(8, "ablation structure", ablation_structure(&e2e));
    report(9, "permutation equivariance", permutation_equivariance());
    report(10, "full-lifecycle coverage", lifecycle_coverage(&e2e));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

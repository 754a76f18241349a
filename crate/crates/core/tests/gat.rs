use lifecycle_rca::gat::{
    reconstruction_loss, row_distances, Activation, GatAutoEncoder, GatLayer, Neighborhoods,
};
use lifecycle_rca::linalg::Matrix;
use lifecycle_rca::rng::keyed_rng;
use proptest::prelude::*;
use rand::Rng;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = keyed_rng(seed, "test/matrix");
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data)
}

fn random_edges(n: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = keyed_rng(seed, "test/edges");
    // A spanning chain plus a few random extra edges.
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
    for _ in 0..n {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            edges.push((a, b));
        }
    }
    edges
}

/// Straightforward dense evaluation of one layer using an adjacency matrix
/// and scalar loops only.
fn dense_layer(h: &Matrix, edges: &[(usize, usize)], layer: &GatLayer) -> Matrix {
    let n = h.rows();
    let (din, dout) = (layer.weight.rows(), layer.weight.cols());
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        adj[i][i] = true;
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
                e[j] = if s > 0.0 { s } else { 0.2 * s };
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

fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn forward_matches_dense_oracle() {
    let n = 6;
    let edges = random_edges(n, 1);
    let nb = Neighborhoods::from_edges(n, &edges);
    let model = GatAutoEncoder::new(10, 5, 7);
    let x = random_matrix(n, 10, 2);
    let pass = model.forward(&x, &nb).unwrap();
    let mut h = x.clone();
    for layer in &model.layers {
        h = dense_layer(&h, &edges, layer);
    }
    assert!(max_abs_diff(&h, pass.reconstruction()) < 1e-10);
    let mut z = x;
    for layer in &model.layers[..2] {
        z = dense_layer(&z, &edges, layer);
    }
    assert!(max_abs_diff(&z, pass.latent()) < 1e-10);
}

#[test]
fn three_node_path_with_identity_weights_matches_dense_oracle() {
    let layer = GatLayer {
        weight: Matrix::identity(3),
        attention: vec![0.0; 6],
        leaky_slope: 0.2,
        activation: Activation::Relu,
    };
    let edges = [(0, 1), (1, 2)];
    let h = random_matrix(3, 3, 5);
    let (out, _) = layer.forward(&h, &Neighborhoods::from_edges(3, &edges), 0).unwrap();
    assert!(max_abs_diff(&out, &dense_layer(&h, &edges, &layer)) < 1e-12);
}

#[test]
fn loss_and_scores_match_scalar_loops() {
    let a = random_matrix(4, 7, 10);
    let b = random_matrix(4, 7, 11);
    let mut naive = 0.0;
    let mut rows = vec![0.0; 4];
    for i in 0..4 {
        for j in 0..7 {
            let d = a[(i, j)] - b[(i, j)];
            naive += d * d;
            rows[i] += d * d;
        }
    }
    assert!((reconstruction_loss(&a, &b).unwrap() - naive).abs() < 1e-12);
    for (got, want) in row_distances(&a, &b).unwrap().iter().zip(&rows) {
        assert!((got - want.sqrt()).abs() < 1e-12);
    }
}

fn gradient_check(n: usize, d: usize, h: usize, seed: u64) -> f64 {
    let edges = random_edges(n, seed);
    let nb = Neighborhoods::from_edges(n, &edges);
    let mut model = GatAutoEncoder::new(d, h, seed);
    let x = random_matrix(n, d, seed + 100);
    let (loss, grads) = model.loss_and_gradients(&x, &nb).unwrap();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, g) in analytic.iter().enumerate() {
        for i in 0..g.len() {
            let orig = model.parameters_mut()[k][i];
            model.parameters_mut()[k][i] = orig + step;
            let plus = model.loss_and_gradients(&x, &nb).unwrap().0;
            model.parameters_mut()[k][i] = orig - step;
            let minus = model.loss_and_gradients(&x, &nb).unwrap().0;
            model.parameters_mut()[k][i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            // Central-difference roundoff grows with |loss|; the floor keeps
            // gradients below that noise level from dominating the ratio.
            let denom = g[i].abs().max(numeric.abs()).max(1e-5 * loss.max(1.0));
            worst = worst.max((g[i] - numeric).abs() / denom);
        }
    }
    worst
}

#[test]
fn gradients_match_central_differences() {
    for seed in 0..4 {
        let err = gradient_check(6, 8, 4, seed);
        assert!(err <= 1e-4, "seed {seed}: max relative error {err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_check_on_random_small_graphs(n in 2usize..=8, d in 2usize..=16, seed in 0u64..1000) {
        let err = gradient_check(n, d, 3, seed);
        prop_assert!(err <= 1e-4, "max relative error {}", err);
    }

    #[test]
    fn attention_rows_are_distributions(n in 1usize..10, seed in 0u64..1000) {
        let edges = random_edges(n, seed);
        let nb = Neighborhoods::from_edges(n, &edges);
        let model = GatAutoEncoder::new(5, 4, seed);
        let pass = model.forward(&random_matrix(n, 5, seed), &nb).unwrap();
        for cache in &pass.caches {
            for i in 0..n {
                let row = &cache.alpha[nb.range(i)];
                prop_assert!(row.iter().all(|a| *a >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn scores_are_permutation_equivariant(n in 2usize..9, seed in 0u64..1000) {
        let edges = random_edges(n, seed);
        let x = random_matrix(n, 6, seed);
        let model = GatAutoEncoder::new(6, 4, seed);
        let scores = model.node_scores(&x, &Neighborhoods::from_edges(n, &edges)).unwrap().0;

        // Reverse the node order: new index of old node i is n - 1 - i.
        let perm = |i: usize| n - 1 - i;
        let pedges: Vec<_> = edges.iter().map(|&(a, b)| (perm(a), perm(b))).collect();
        let mut px = Matrix::zeros(n, 6);
        for i in 0..n {
            px.row_mut(perm(i)).copy_from_slice(x.row(i));
        }
        let pscores = model.node_scores(&px, &Neighborhoods::from_edges(n, &pedges)).unwrap().0;
        for i in 0..n {
            prop_assert!((scores[i] - pscores[perm(i)]).abs() < 1e-9);
            prop_assert!(scores[i] >= 0.0);
        }
    }

    #[test]
    fn loss_is_nonnegative(seed in 0u64..1000) {
        let a = random_matrix(3, 4, seed);
        let b = random_matrix(3, 4, seed + 1);
        prop_assert!(reconstruction_loss(&a, &b).unwrap() >= 0.0);
    }
}

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ecomann::ecomann::{loss_fraction, loss_reflection, MlpModel};
use ecomann::lin_geom::{estimate_codim, expm_skew, knn_search, skew_from_params};
use ecomann::osa::{minimum_spanning_tree, projector_losses, WeightedGraph};
use ecomann::Configuration;

/// Dense Prim on the same edge set; `None` if disconnected.
fn prim_weight(n: usize, edges: &[(usize, usize, f64)]) -> Option<f64> {
    let mut w = vec![vec![f64::INFINITY; n]; n];
    for &(a, b, x) in edges {
        w[a][b] = w[a][b].min(x);
        w[b][a] = w[b][a].min(x);
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    best[0] = 0.0;
    let mut total = 0.0;
    for _ in 0..n {
        let u = (0..n)
            .filter(|&i| !in_tree[i])
            .min_by(|&a, &b| best[a].total_cmp(&best[b]))?;
        if best[u].is_infinite() {
            return None;
        }
        in_tree[u] = true;
        total += best[u];
        for v in 0..n {
            if !in_tree[v] && w[u][v] < best[v] {
                best[v] = w[u][v];
            }
        }
    }
    Some(total)
}

fn random_orthonormal(rng: &mut ChaCha8Rng, d: usize, k: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, k, |_, _| rng.random_range(-1.0..1.0));
    a.qr().q().columns(0, k).into_owned()
}

#[test]
fn mst_matches_prim_on_complete_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let n = 50;
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let d: f64 = (0..3).map(|c| (pts[i][c] - pts[j][c]).powi(2)).sum::<f64>().sqrt();
                edges.push((i, j, d));
            }
        }
        let g = WeightedGraph::new(n, edges.clone());
        let tree = minimum_spanning_tree(&g).unwrap();
        assert_eq!(tree.len(), n - 1);
        let w = WeightedGraph::total_weight(&tree);
        assert!((w - prim_weight(n, &edges).unwrap()).abs() < 1e-9);
    }
}

#[test]
fn projector_identity_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let d = rng.random_range(2..7);
        let l = rng.random_range(1..d);
        let v = random_orthonormal(&mut rng, d, l);
        let e = random_orthonormal(&mut rng, d, d - l);
        let (a, b) = projector_losses(&v, &e);
        assert!((a - b).abs() <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn codim_in_range(mut vals in prop::collection::vec(0.0f64..10.0, 2..8)) {
        vals.sort_by(|a, b| b.total_cmp(a));
        let l = estimate_codim(&vals);
        prop_assert!(l >= 1 && l < vals.len());
    }

    #[test]
    fn expm_skew_is_a_rotation(l in 1usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<f64> = (0..l * (l - 1) / 2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let r = expm_skew(&skew_from_params(l, &params)).unwrap();
        let err = (r.transpose() * &r - DMatrix::identity(l, l)).abs().max();
        prop_assert!(err <= 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn knn_matches_sorted_distances(seed in 0u64..1000, k in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Configuration> = (0..30)
            .map(|_| DVector::from_fn(2, |_, _| rng.random_range(0..4) as f64))
            .collect();
        let q = (seed % 30) as usize;
        let got = knn_search(&pts, q, k).unwrap();
        let mut order: Vec<usize> = (0..30).filter(|&i| i != q).collect();
        order.sort_by(|&a, &b| {
            let da = (&pts[a] - &pts[q]).norm_squared();
            let db = (&pts[b] - &pts[q]).norm_squared();
            da.total_cmp(&db).then(a.cmp(&b))
        });
        prop_assert_eq!(got, order[..k].to_vec());
    }

    #[test]
    fn mst_is_minimal_on_sparse_graphs(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 20;
        let mut edges: Vec<(usize, usize, f64)> = (1..n).map(|i| (i - 1, i, rng.random::<f64>())).collect();
        for _ in 0..40 {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a != b {
                edges.push((a.min(b), a.max(b), rng.random::<f64>()));
            }
        }
        let g = WeightedGraph::new(n, edges.clone());
        let tree = minimum_spanning_tree(&g).unwrap();
        let w = WeightedGraph::total_weight(&tree);
        prop_assert!((w - prim_weight(n, &g.edges).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn siamese_losses_are_scale_invariant(
        h in prop::collection::vec(0.1f64..2.0, 1..4),
        s in 0.1f64..10.0,
    ) {
        let neg: Vec<f64> = h.iter().map(|v| -v).collect();
        let hs: Vec<f64> = h.iter().map(|v| v * s).collect();
        let negs: Vec<f64> = neg.iter().map(|v| v * s).collect();
        prop_assert!((loss_reflection(&h, &neg) - loss_reflection(&hs, &negs)).abs() < 1e-12);
        let half: Vec<f64> = h.iter().map(|v| 0.5 * v).collect();
        let halfs: Vec<f64> = hs.iter().map(|v| 0.5 * v).collect();
        prop_assert!(loss_fraction(&h, &half).unwrap() < 1e-20);
        prop_assert!(loss_fraction(&hs, &halfs).unwrap() < 1e-20);
    }

    #[test]
    fn model_text_round_trip(seed in 0u64..200) {
        let m = MlpModel::new(&[3, 5, 4, 2], seed).unwrap();
        let back = MlpModel::from_text(&m.to_text(), "mem").unwrap();
        prop_assert_eq!(back, m);
    }
}

use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hier::autodiff::Tensor;
use hier::config::TrainConfig;
use hier::data::{decode_features, encode_features, Dataset};
use hier::eval::{affinity_matrix, dasgupta_cost, extract_tree, random_binary_tree, recall_at_k};
use hier::geometry::{self, clip_slice, distance, exp_map_0_slice, mobius_add_slice, norm_sq};
use hier::hierloss::{sample_lca, HierGeometry, LcaNoise, NoiseDomain};
use hier::mining::{
    build_triplets, is_feasible, knn_from_distances, reciprocal_knn, DistanceMatrix, TripletKind,
};
use hier::train::{Checkpoint, RngState};

const C: f64 = 0.1;

/// Tangent vectors of a fixed dimension.
fn tangent(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(-3.0f64..3.0, dim)
}

fn ball_point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    tangent(dim).prop_map(|v| exp_map_0_slice(&v, C))
}

/// `n` ball points of dimension `dim`, flat.
fn ball_cloud(n: std::ops::Range<usize>, dim: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(ball_point(dim), n).prop_map(|rows| rows.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn exp_map_lands_in_ball_at_twice_the_tangent_norm(v in tangent(4)) {
        let x = exp_map_0_slice(&v, C);
        prop_assert!(C * norm_sq(&x) < 1.0);
        let d = distance(&[0.0; 4], &x, C);
        let want = 2.0 * norm_sq(&v).sqrt();
        prop_assert!((d - want).abs() <= 1e-9 * want.max(1.0));
    }

    #[test]
    fn mobius_identity_and_inverse(u in ball_point(3)) {
        let o = vec![0.0; 3];
        for (a, b) in mobius_add_slice(&o, &u, C).iter().zip(&u) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in mobius_add_slice(&u, &o, C).iter().zip(&u) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        prop_assert!(norm_sq(&mobius_add_slice(&neg, &u, C)).sqrt() <= 1e-12);
    }

    #[test]
    fn distance_is_a_metric(u in ball_point(3), v in ball_point(3), w in ball_point(3)) {
        let (uv, vu) = (distance(&u, &v, C), distance(&v, &u, C));
        prop_assert!((uv - vu).abs() <= 1e-12 * uv.max(1.0));
        prop_assert!(uv >= 0.0);
        prop_assert_eq!(distance(&u, &u, C), 0.0);
        prop_assert!(distance(&u, &w, C) <= uv + distance(&v, &w, C) + 1e-9);
    }

    #[test]
    fn small_curvature_limit(u in vec(-0.57f64..0.57, 3), v in vec(-0.57f64..0.57, 3)) {
        let c = 1e-9;
        let e: f64 = u.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assume!(e > 1e-6);
        let d = distance(&u, &v, c);
        prop_assert!((d - 2.0 * e).abs() / (2.0 * e) < 1e-3);
    }

    #[test]
    fn clipping_caps_the_norm(v in tangent(5), r in 0.1f64..4.0) {
        let clipped = clip_slice(&v, r);
        prop_assert!(norm_sq(&clipped).sqrt() <= r * (1.0 + 1e-12));
        if norm_sq(&v).sqrt() <= r {
            prop_assert_eq!(clipped, v);
        }
    }

    #[test]
    fn lca_sampling_never_returns_the_excluded_proxy(
        pi in vec(0.0f64..1.0, 2..12),
        seed in any::<u64>(),
        log in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ex = (seed as usize) % pi.len();
        let domain = if log { NoiseDomain::Log } else { NoiseDomain::Value };
        for noise in [LcaNoise::Off, LcaNoise::Gumbel(domain)] {
            let got = sample_lca(&pi, Some(ex), noise, &mut rng).unwrap();
            prop_assert!(got != ex && got < pi.len());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn triplets_are_feasible(pts in ball_cloud(3..30, 3), k in 1usize..8, seed in any::<u64>()) {
        let n = pts.len() / 3;
        prop_assume!(k < n);
        let recip = reciprocal_knn(&knn_from_distances(&DistanceMatrix::hyperbolic(&pts, 3, C), k).unwrap());
        for i in 0..n {
            for &j in recip.get(i) {
                prop_assert!(recip.contains(j, i));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = build_triplets(&recip, n, TripletKind::Samples, &mut rng);
        for t in batch.triplets {
            prop_assert!(is_feasible(&recip, t));
        }
    }

    #[test]
    fn recall_is_monotone_in_k(pts in ball_cloud(3..40, 2), seed in any::<u64>()) {
        let n = pts.len() / 2;
        let labels: Vec<usize> = (0..n).map(|i| (i as u64 ^ seed) as usize % 3).collect();
        let ks: Vec<usize> = (1..n).collect();
        let r = recall_at_k(&DistanceMatrix::hyperbolic(&pts, 2, C), &labels, &ks).unwrap();
        prop_assert!(r.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(r.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn affinity_is_symmetric(pts in ball_cloud(4..40, 2)) {
        let n = pts.len() / 2;
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let a = affinity_matrix(&DistanceMatrix::hyperbolic(&pts, 2, C), &labels).unwrap();
        for x in 0..a.classes {
            for y in 0..a.classes {
                prop_assert_eq!(a.get(x, y), a.get(y, x));
                if let Some(v) = a.get(x, y) {
                    prop_assert!(v <= 0.0);
                }
            }
        }
    }

    #[test]
    fn extracted_tree_spans_every_sample(samples in ball_cloud(1..40, 3), proxies in ball_cloud(1..12, 3)) {
        let geom = HierGeometry::hyperbolic(C, 2.3);
        let t = extract_tree(&samples, &proxies, 3, &geom).unwrap();
        let (n, p) = (samples.len() / 3, proxies.len() / 3);
        prop_assert_eq!(t.node_count(), n + p + 1);
        prop_assert_eq!(t.root(), n + p);
        prop_assert_eq!(t.leaves_under(t.root()), n);
        for s in 0..n {
            prop_assert!(t.parent(s).unwrap() >= n);
        }
    }

    #[test]
    fn random_trees_are_binary_with_nonnegative_cost(leaves in 1usize..40, seed in any::<u64>()) {
        let t = random_binary_tree(leaves, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(t.node_count(), 2 * leaves - 1);
        let mut children = vec![0; t.node_count()];
        for (_, p) in t.edges() {
            children[p] += 1;
        }
        prop_assert!(children[leaves..].iter().all(|&c| c == 2));
        let cost = dasgupta_cost(&t, |i, j| ((i * 7 + j) % 5) as f64).unwrap();
        prop_assert!(cost >= 0.0);
    }

    #[test]
    fn feature_file_round_trip(
        rows in vec(vec(any::<f32>().prop_filter("finite", |x| x.is_finite()), 3), 1..20),
        seed in any::<u64>(),
    ) {
        let n = rows.len();
        let ids: Vec<u64> = (0..n as u64).map(|i| i.wrapping_mul(seed | 1)).collect();
        let labels: Vec<u32> = (0..n as u32).map(|i| i % 2).collect();
        let ds = Dataset::new(ids, labels, 3, rows.concat());
        prop_assume!(ds.is_ok());
        let ds = ds.unwrap();
        let bytes = encode_features(&ds).unwrap();
        let back = decode_features(&bytes).unwrap();
        prop_assert_eq!(encode_features(&back).unwrap(), bytes);
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn checkpoint_round_trip(
        data in vec(any::<f64>(), 1..30),
        seed in any::<[u8; 8]>(),
        steps in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(seed));
        for _ in 0..steps {
            rand::RngCore::next_u32(&mut rng);
        }
        let ck = Checkpoint {
            config_json: TrainConfig::default().to_json(),
            tensors: vec![("w".into(), Tensor::row_vector(data))],
            rngs: vec![("r".into(), RngState::capture(&rng))],
        };
        let bytes = ck.encode().unwrap();
        let back = Checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(back.encode().unwrap(), bytes);
        let mut restored = back.rng("r").unwrap().restore();
        prop_assert_eq!(rand::RngCore::next_u64(&mut restored), rand::RngCore::next_u64(&mut rng));
    }

    #[test]
    fn config_json_round_trip(k in 1usize..64, lambda in 0.0f64..4.0, delta in 0.0f64..1.0, seed in any::<u64>()) {
        let cfg = TrainConfig { neighbors: k, lambda, delta, seed, ..TrainConfig::default() };
        prop_assert_eq!(TrainConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}

#[test]
fn point_constructor_rejects_outside_ball() {
    let c = geometry::Curvature::new(C).unwrap();
    assert!(geometry::HyperbolicPoint::new(vec![4.0, 0.0], c).is_err());
    assert!(geometry::HyperbolicPoint::new(vec![3.0, 0.0], c).is_ok());
}

use causal_icl::graph::{CausalGraph, Distance};
use causal_icl::linalg::{l1_norm, softmax, softmax_jacobian_apply, softmax_jacobian_derivative, Matrix};
use causal_icl::markov::{
    sample_kernel, stationary_by_power_iteration, DirichletPrior, TransitionKernel,
};
use causal_icl::oracle::joint_distribution;
use causal_icl::reduced::{evaluate, Grads, ReducedParams, WeightedSet};
use causal_icl::rng::seeded;
use causal_icl::transformer::{causal_attention, load, save, DisentangledParams};
use proptest::prelude::*;
use std::sync::Arc;

fn parent_vec(max_t: usize) -> impl Strategy<Value = Vec<Option<usize>>> {
    (3..=max_t).prop_flat_map(|t| {
        (0..t)
            .map(|i| {
                if i == 0 || i + 1 == t {
                    Just(None).boxed()
                } else {
                    prop_oneof![Just(None), (0..i).prop_map(Some)].boxed()
                }
            })
            .collect::<Vec<_>>()
    })
}

fn kernel(size: usize) -> impl Strategy<Value = TransitionKernel> {
    proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, size), size).prop_map(|rows| {
        let rows = rows
            .into_iter()
            .map(|r| {
                let z: f64 = r.iter().sum();
                r.into_iter().map(|x| x / z).collect()
            })
            .collect();
        TransitionKernel::new(rows).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_jacobian_l1_bounds(
        v in proptest::collection::vec(-5.0f64..5.0, 2..12),
        seed in any::<u64>(),
    ) {
        let n = v.len();
        let mut rng = seeded(seed);
        let u: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        let p = softmax(&v);
        let pu: f64 = p.iter().zip(&u).map(|(a, b)| a * b.abs()).sum();
        let pw: f64 = p.iter().zip(&w).map(|(a, b)| a * b.abs()).sum();
        let puw: f64 = (0..n).map(|k| p[k] * (u[k] * w[k]).abs()).sum();
        prop_assert!(l1_norm(&softmax_jacobian_apply(&p, &u)) <= 2.0 * pu + 1e-12);
        prop_assert!(l1_norm(&softmax_jacobian_derivative(&p, &u, &w)) <= 2.0 * puw + 4.0 * pu * pw + 1e-12);
    }

    #[test]
    fn attention_rows_are_causal_distributions(seed in any::<u64>(), t in 1usize..10, d in 1usize..6) {
        let mut rng = seeded(seed);
        let h = Matrix::from_fn(t, d, |_, _| rand::Rng::random_range(&mut rng, -2.0..2.0));
        let a = Matrix::from_fn(d, d, |_, _| rand::Rng::random_range(&mut rng, -4.0..4.0));
        let (_, pat) = causal_attention(&h, &a);
        for i in 0..t {
            prop_assert!((pat.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(pat.row(i)[i + 1..].iter().all(|&x| x == 0.0));
            prop_assert!(pat.row(i).iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn effective_length_lambda_lower_bound(parents in parent_vec(16), lambda in 0.01f64..0.99) {
        let g = CausalGraph::new(parents).unwrap();
        let t_eff = g.t_eff_undirected();
        prop_assert!(g.effective_length_lambda(lambda).unwrap() >= (1.0 - lambda) * t_eff - 1e-12);
    }

    #[test]
    fn lca_distance_matches_bfs(parents in parent_vec(14)) {
        let g = CausalGraph::new(parents).unwrap();
        for i in 0..g.len() {
            let bfs = g.bfs_distances(i);
            for (j, d) in bfs.iter().enumerate() {
                prop_assert_eq!(g.distance(i, j).unwrap(), *d);
            }
            prop_assert_eq!(bfs[i], Distance::Finite(0));
        }
    }

    #[test]
    fn graph_json_round_trip(parents in parent_vec(20)) {
        let g = CausalGraph::new(parents).unwrap();
        prop_assert_eq!(CausalGraph::from_json(&g.to_json()).unwrap(), g);
    }

    #[test]
    fn kernel_json_round_trip_is_exact(k in kernel(4)) {
        let back = TransitionKernel::from_json(&k.to_json()).unwrap();
        prop_assert_eq!(back.matrix().as_slice(), k.matrix().as_slice());
    }

    #[test]
    fn stationary_solvers_agree(k in kernel(5)) {
        let direct = k.stationary().to_vec();
        let iter = stationary_by_power_iteration(&k).unwrap();
        for (a, b) in direct.iter().zip(&iter) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let pushed = k.push_forward(&direct);
        for (a, b) in pushed.iter().zip(&direct) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pairwise_joint_is_a_distribution_with_correct_marginals(parents in parent_vec(9), k in kernel(3)) {
        let g = CausalGraph::new(parents).unwrap();
        let t = g.len();
        for i in 0..t {
            for j in 0..t {
                let tab = joint_distribution(&g, &k, i, j).unwrap().table;
                prop_assert!((tab.sum() - 1.0).abs() < 1e-12);
                prop_assert!(tab.as_slice().iter().all(|&x| x >= -1e-15));
                if i == j {
                    let off: f64 = (0..3).flat_map(|a| (0..3).map(move |b| (a, b))).filter(|(a, b)| a != b).map(|(a, b)| tab[(a, b)].abs()).sum();
                    prop_assert!(off < 1e-15);
                }
            }
        }
    }

    #[test]
    fn g2_columns_sum_to_zero(seed in any::<u64>(), t in 3usize..7) {
        let mut rng = seeded(seed);
        let g = CausalGraph::random(t, 0.4, &mut rng).unwrap();
        let k = Arc::new(sample_kernel(&DirichletPrior::new(3, 1.0).unwrap(), &mut rng).unwrap());
        let set = WeightedSet::monte_carlo_fixed(&g, &[k], 32, &mut rng).unwrap();
        let mut theta = ReducedParams::zeros(3, t);
        theta.a1 = Matrix::from_fn(t, t, |i, j| if j <= i { rand::Rng::random_range(&mut rng, -1.0..1.0) } else { 0.0 });
        theta.a2 = Matrix::from_fn(3, 3, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let g2 = evaluate(&theta, &set, 0.3, Grads::A2).unwrap().grad_a2.unwrap();
        for c in 0..3 {
            prop_assert!(g2.column(c).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), h1 in 1usize..3) {
        let mut rng = seeded(seed);
        let p = DisentangledParams::random(3, 5, &[h1, 1], 3, 1.0, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        save(&p, &path).unwrap();
        let q: DisentangledParams = load(&path).unwrap();
        prop_assert_eq!(q, p);
    }
}

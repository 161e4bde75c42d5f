//! Quantities computed two independent ways.

use causal_icl::construct::{
    build_multi_parent, build_single_parent, from_reduced, sequence_fidelity, ConstructionGraph, ConstructionSpec,
};
use causal_icl::graph::{CausalGraph, MultiParentGraph};
use causal_icl::linalg::Matrix;
use causal_icl::markov::{chi2_mutual_info, sample_kernel, DirichletPrior, TransitionKernel};
use causal_icl::oracle::{chi2_mi_matrix, joint_distribution};
use causal_icl::reduced::{evaluate, finite_sample_grads, finite_sample_loss, Grads, ReducedParams, WeightedSet};
use causal_icl::rng::{seeded, Rng};
use causal_icl::sequence::{generate, SequenceBatch};
use causal_icl::markov::KernelPrior;
use causal_icl::transformer::{last_token_ce, DisentangledParams, OutputMode};
use rand::Rng as _;
use std::sync::Arc;

fn random_theta(s: usize, t: usize, rng: &mut Rng) -> ReducedParams {
    let mut th = ReducedParams::zeros(s, t);
    th.a1 = Matrix::from_fn(t, t, |i, j| if j <= i { rng.random_range(-1.5..1.5) } else { 0.0 });
    th.a2 = Matrix::from_fn(s, s, |_, _| rng.random_range(-1.5..1.5));
    th
}

/// Every sequence with its probability: roots other than the last draw from
/// the stationary law, the last position is uniform.
fn enumerate(g: &CausalGraph, k: &TransitionKernel) -> Vec<(Vec<usize>, f64)> {
    let (s, t) = (k.size(), g.len());
    let mu = k.stationary();
    (0..s.pow(t as u32))
        .map(|code| {
            let x: Vec<usize> = (0..t).map(|n| code / s.pow(n as u32) % s).collect();
            let p = (0..t)
                .map(|n| match g.parent(n) {
                    Some(q) => k.prob(x[q], x[n]),
                    None if n + 1 == t => 1.0 / s as f64,
                    None => mu[x[n]],
                })
                .product();
            (x, p)
        })
        .collect()
}

#[test]
fn exact_population_loss_matches_brute_force() {
    let mut rng = seeded(1);
    for (g, s) in [(CausalGraph::chain(4).unwrap(), 2), (CausalGraph::figure_one(), 2), (CausalGraph::icl(5).unwrap(), 3)] {
        let k = sample_kernel(&DirichletPrior::new(s, 1.0).unwrap(), &mut rng).unwrap();
        let th = random_theta(s, g.len(), &mut rng);
        let eps = 0.25;
        let expect: f64 = enumerate(&g, &k)
            .iter()
            .map(|(x, p)| {
                let f = th.forward(x).unwrap();
                let row = k.row(*x.last().unwrap());
                -p * row.iter().zip(&f).map(|(q, fi)| q * (fi + eps).ln()).sum::<f64>()
            })
            .sum();
        let set = WeightedSet::exact(&g, &[Arc::new(k)]).unwrap();
        let got = evaluate(&th, &set, eps, Grads::None).unwrap().loss;
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }
}

#[test]
fn pairwise_joint_matches_enumeration() {
    let mut rng = seeded(2);
    for t in 3..=5 {
        let g = CausalGraph::random(t, 0.3, &mut rng).unwrap();
        let k = sample_kernel(&DirichletPrior::new(2, 1.0).unwrap(), &mut rng).unwrap();
        let seqs = enumerate(&g, &k);
        for i in 0..t {
            for j in 0..t {
                let mut brute = Matrix::zeros(2, 2);
                for (x, p) in &seqs {
                    brute[(x[j], x[i])] += p;
                }
                let lca = joint_distribution(&g, &k, i, j).unwrap().table;
                assert!(lca.max_abs_diff(&brute) < 1e-12, "t={t} i={i} j={j}");
            }
        }
    }
}

#[test]
fn chi2_matrix_matches_enumerated_joints() {
    let mut rng = seeded(3);
    let g = CausalGraph::figure_one();
    let k = sample_kernel(&DirichletPrior::new(2, 1.0).unwrap(), &mut rng).unwrap();
    let seqs = enumerate(&g, &k);
    let m = chi2_mi_matrix(&g, &k).unwrap();
    for i in 0..g.len() {
        for j in 0..i {
            let mut brute = Matrix::zeros(2, 2);
            for (x, p) in &seqs {
                brute[(x[j], x[i])] += p;
            }
            let direct = chi2_mutual_info(&brute).unwrap();
            assert!((m[(i, j)] - direct).abs() < 1e-12, "({i},{j}) {} vs {direct}", m[(i, j)]);
        }
    }
}

#[test]
fn finite_sample_gradients_match_finite_differences() {
    let mut rng = seeded(4);
    let g = CausalGraph::chain(6).unwrap();
    let prior = KernelPrior::Dirichlet(DirichletPrior::new(3, 1.0).unwrap());
    let data = SequenceBatch::generate(&g, &prior, None, 40, &mut rng).unwrap();
    let th = random_theta(3, 6, &mut rng);
    let eps = 0.4;
    let (g1, g2) = finite_sample_grads(&th, &data, eps).unwrap();
    let h = 1e-6;
    for i in 0..6 {
        for j in 0..=i {
            let (mut p, mut m) = (th.clone(), th.clone());
            p.a1[(i, j)] += h;
            m.a1[(i, j)] -= h;
            let fd = (finite_sample_loss(&p, &data, eps).unwrap() - finite_sample_loss(&m, &data, eps).unwrap()) / (2.0 * h);
            assert!((fd - g1[(i, j)]).abs() < 1e-7, "a1 ({i},{j}) fd {fd} vs {}", g1[(i, j)]);
        }
    }
    for a in 0..3 {
        for b in 0..3 {
            let (mut p, mut m) = (th.clone(), th.clone());
            p.a2[(a, b)] += h;
            m.a2[(a, b)] -= h;
            let fd = (finite_sample_loss(&p, &data, eps).unwrap() - finite_sample_loss(&m, &data, eps).unwrap()) / (2.0 * h);
            assert!((fd - g2[(a, b)]).abs() < 1e-7, "a2 ({a},{b})");
        }
    }
}

#[test]
fn disentangled_backward_matches_finite_differences() {
    let mut rng = seeded(5);
    let p = DisentangledParams::random(3, 5, &[2, 1], 3, 0.3, &mut rng);
    let tokens = [0, 2, 1, 1, 2];
    let (_, grads) = last_token_ce(&p, &tokens, 1).unwrap();
    let loss = |q: &DisentangledParams| last_token_ce(q, &tokens, 1).unwrap().0;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for l in 0..p.layers.len() {
        for hd in 0..p.layers[l].len() {
            let (r, c) = p.layers[l][hd].shape();
            for (a, b) in [(0, 0), (r - 1, c - 1), (r / 2, c / 3), (1, c - 2)] {
                let (mut up, mut dn) = (p.clone(), p.clone());
                up.layers[l][hd][(a, b)] += h;
                dn.layers[l][hd][(a, b)] -= h;
                let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
                worst = worst.max((fd - grads.layers[l][hd][(a, b)]).abs());
            }
        }
    }
    let (r, c) = p.w_o.shape();
    for a in 0..r {
        for b in (0..c).step_by(7) {
            let (mut up, mut dn) = (p.clone(), p.clone());
            up.w_o[(a, b)] += h;
            dn.w_o[(a, b)] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            worst = worst.max((fd - grads.w_o[(a, b)]).abs());
        }
    }
    assert!(worst < 1e-7, "worst {worst}");
}

#[test]
fn lifted_reduced_model_matches_reduced_forward() {
    let mut rng = seeded(6);
    for _ in 0..20 {
        let t = rng.random_range(3..12);
        let th = random_theta(3, t, &mut rng);
        let lifted = from_reduced(&th);
        let x: Vec<usize> = (0..t).map(|_| rng.random_range(0..3)).collect();
        let (out, _) = lifted.forward(&x, OutputMode::LastToken).unwrap();
        let f = th.forward(&x).unwrap();
        for (a, b) in out.row(0).iter().zip(&f) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn one_head_multi_parent_construction_matches_single_parent() {
    let mut rng = seeded(7);
    let g = CausalGraph::chain(12).unwrap();
    let k = Arc::new(sample_kernel(&DirichletPrior::new(3, 1.0).unwrap(), &mut rng).unwrap());
    let single_graph = ConstructionGraph::Single(g.clone());
    let multi_graph = ConstructionGraph::Multi(MultiParentGraph::from_single(&g));
    // the multi-parent query reads a first-layer copy of x_T, so layer 1 is kept sharp
    for beta in [0.5, 2.0, 10.0] {
        let single = build_single_parent(&ConstructionSpec::new(single_graph.clone(), 3, 50.0, beta).unwrap()).unwrap();
        let multi = build_multi_parent(&ConstructionSpec::new(multi_graph.clone(), 3, 50.0, beta).unwrap()).unwrap();
        for _ in 0..50 {
            let x = generate(&g, &k, &mut rng).tokens;
            let a = sequence_fidelity(&single, &single_graph, &x).unwrap();
            let b = sequence_fidelity(&multi, &multi_graph, &x).unwrap();
            match (a, b) {
                (Some(a), Some(b)) => {
                    assert_eq!(a.matches, b.matches);
                    assert!((a.error - b.error).abs() < 1e-9, "β={beta}: {} vs {}", a.error, b.error);
                }
                (None, None) => {}
                other => panic!("definedness differs: {other:?}"),
            }
        }
    }
}

//! Named verification suites: quick versions of the property checks, runnable
//! from the command line.

use crate::construct::{fidelity_report, from_reduced, ConstructionGraph, FidelityKernel};
use crate::error::{Error, Result};
use crate::graph::{CausalGraph, MultiParentGraph};
use crate::linalg::{l1_norm, softmax, softmax_jacobian_apply, softmax_jacobian_derivative, Matrix};
use crate::markov::{check_assumptions, kernel_gamma, measured_gamma, sample_kernel, DirichletPrior, KernelPrior, MultiKernel};
use crate::oracle::{assumption_prior, g_hat_from, g_hat_lower_bound, joint_distribution, oracle_from_prior, verify_dpi};
use crate::reduced::{evaluate, Grads, ReducedParams, WeightedSet};
use crate::rng::{seeded, Rng};
use crate::transformer::{causal_attention, disentangle, entangle, DisentangledParams, OutputMode, StandardParams};
use rand::Rng as _;
use serde::Serialize;
use std::sync::Arc;

pub const SUITES: [&str; 8] = ["equivalence", "gradients", "dpi", "oracle", "construction", "g-hat", "invariants", "all"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suite: String,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn run_verify(suite: &str, seed: u64) -> Result<VerifyReport> {
    let mut rng = seeded(seed);
    let checks = match suite {
        "equivalence" => equivalence(&mut rng)?,
        "gradients" => gradients(&mut rng)?,
        "dpi" => dpi(&mut rng)?,
        "oracle" => oracle(&mut rng)?,
        "construction" => construction(&mut rng)?,
        "g-hat" => g_hat(&mut rng)?,
        "invariants" => invariants(&mut rng)?,
        "all" => {
            let mut all = Vec::new();
            for s in &SUITES[..SUITES.len() - 1] {
                all.extend(run_verify(s, seed)?.checks);
            }
            all
        }
        other => return Err(Error::UnknownSuite(other.to_string())),
    };
    Ok(VerifyReport {
        suite: suite.to_string(),
        checks,
    })
}

fn equivalence(rng: &mut Rng) -> Result<Vec<Check>> {
    let (s, t) = (5, 8);
    let mut worst_d = 0.0f64;
    let mut worst_e = 0.0f64;
    for _ in 0..10 {
        let depth = rng.random_range(1..=2);
        let heads: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=3)).collect();
        let hidden = rng.random_range(2..=16);
        let std = StandardParams::random(s, t, hidden, &heads, 4, 0.5, rng);
        let dis = disentangle(&std)?;
        let tokens: Vec<usize> = (0..t).map(|_| rng.random_range(0..s)).collect();
        let (out, _) = dis.forward(&tokens, OutputMode::AllPositions)?;
        worst_d = worst_d.max(out.max_abs_diff(&std.forward(&tokens)?));

        let dis = DisentangledParams::random(s, t, &heads, 4, 0.5, rng);
        let back = entangle(&dis)?;
        let (out, _) = dis.forward(&tokens, OutputMode::AllPositions)?;
        worst_e = worst_e.max(out.max_abs_diff(&back.forward(&tokens)?));
    }
    Ok(vec![
        check("disentangle", worst_d <= 1e-9, format!("max diff {worst_d:.3e}")),
        check("entangle", worst_e <= 1e-9, format!("max diff {worst_e:.3e}")),
    ])
}

fn random_theta(s: usize, t: usize, rng: &mut Rng) -> ReducedParams {
    let mut theta = ReducedParams::zeros(s, t);
    theta.a1 = Matrix::from_fn(t, t, |i, j| if j <= i { rng.random_range(-1.0..1.0) } else { 0.0 });
    theta.a2 = Matrix::from_fn(s, s, |_, _| rng.random_range(-1.0..1.0));
    theta
}

/// Norm-wise relative error of the closed-form gradients against central differences.
pub fn gradient_fd_error(theta: &ReducedParams, set: &WeightedSet, eps: f64, h: f64) -> Result<f64> {
    let e = evaluate(theta, set, eps, Grads::Both)?;
    let (g1, g2) = (e.grad_a1.unwrap(), e.grad_a2.unwrap());
    let loss = |th: &ReducedParams| evaluate(th, set, eps, Grads::None).map(|e| e.loss);
    let (mut num, mut den) = (0.0, 0.0);
    let t = theta.length();
    for i in 0..t {
        for j in 0..=i {
            let (mut p, mut m) = (theta.clone(), theta.clone());
            p.a1[(i, j)] += h;
            m.a1[(i, j)] -= h;
            let fd = (loss(&p)? - loss(&m)?) / (2.0 * h);
            num += (fd - g1[(i, j)]).powi(2);
            den += fd * fd;
        }
    }
    let s = theta.alphabet();
    for a in 0..s {
        for b in 0..s {
            let (mut p, mut m) = (theta.clone(), theta.clone());
            p.a2[(a, b)] += h;
            m.a2[(a, b)] -= h;
            let fd = (loss(&p)? - loss(&m)?) / (2.0 * h);
            num += (fd - g2[(a, b)]).powi(2);
            den += fd * fd;
        }
    }
    Ok((num / den).sqrt())
}

fn gradients(rng: &mut Rng) -> Result<Vec<Check>> {
    let g = CausalGraph::chain(4)?;
    let prior = DirichletPrior::new(2, 1.0)?;
    let kernels: Vec<_> = (0..3).map(|_| sample_kernel(&prior, rng).map(Arc::new)).collect::<Result<_>>()?;
    let set = WeightedSet::exact(&g, &kernels)?;
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let theta = random_theta(2, 4, rng);
        worst = worst.max(gradient_fd_error(&theta, &set, 0.5, 1e-5)?);
    }
    Ok(vec![check("closed-form-vs-fd", worst <= 1e-6, format!("max rel err {worst:.3e}"))])
}

fn gamma_filtered(n: usize, size: usize, min_gamma: f64, rng: &mut Rng) -> Result<Vec<crate::markov::TransitionKernel>> {
    let prior = DirichletPrior::new(size, 1.0)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..1_000_000 {
        if out.len() == n {
            break;
        }
        let k = sample_kernel(&prior, rng)?;
        if kernel_gamma(&k) >= min_gamma {
            out.push(k);
        }
    }
    if out.len() < n {
        return Err(Error::Generation("could not draw enough kernels above the γ floor".into()));
    }
    Ok(out)
}

fn dpi(rng: &mut Rng) -> Result<Vec<Check>> {
    let kernels = gamma_filtered(20, 3, 0.1, rng)?;
    let graphs = [("chain(8)", CausalGraph::chain(8)?), ("icl(8)", CausalGraph::icl(8)?), ("figure-one", CausalGraph::figure_one())];
    let mut out = Vec::new();
    for (name, g) in &graphs {
        let mut slack = f64::INFINITY;
        let mut ok = true;
        for k in &kernels {
            let r = verify_dpi(g, k, 1e-9)?;
            ok &= r.all_pass();
            slack = slack.min(r.min_slack());
        }
        out.push(check(&format!("dpi-{name}"), ok, format!("min slack {slack:.3e}")));
    }
    Ok(out)
}

fn oracle(rng: &mut Rng) -> Result<Vec<Check>> {
    let prior = KernelPrior::Dirichlet(DirichletPrior::new(3, 1.0)?);
    let graphs = [CausalGraph::chain(10)?, CausalGraph::icl(10)?, CausalGraph::random(10, 0.5, rng)?];
    let mut out = Vec::new();
    for g in &graphs {
        let (kernels, exact) = prior.expectation_sample(300, rng)?;
        let (rec, _, thr) = oracle_from_prior(g, &kernels, exact, 1e-9)?;
        out.push(check(&format!("recover {}", g.to_json()), rec == *g, format!("threshold {thr:.3e}")));
    }
    Ok(out)
}

fn construction(rng: &mut Rng) -> Result<Vec<Check>> {
    let chain = CausalGraph::chain(20)?;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let theta = random_theta(3, 20, rng);
        let dis = from_reduced(&theta);
        let tokens: Vec<usize> = (0..20).map(|_| rng.random_range(0..3)).collect();
        let (out, _) = dis.forward(&tokens, OutputMode::LastToken)?;
        let f = theta.forward(&tokens)?;
        worst = worst.max(out.row(0).iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let k = Arc::new(sample_kernel(&DirichletPrior::new(3, 1.0)?, rng)?);
    let single = fidelity_report(&ConstructionGraph::Single(chain), &FidelityKernel::Single(k), 200, &[50.0], 1, rng)?;
    let mk = Arc::new(MultiKernel::sample_dirichlet(3, 2, 1.0, rng)?);
    let multi = fidelity_report(
        &ConstructionGraph::Multi(MultiParentGraph::ngram(20, 3)?),
        &FidelityKernel::Multi(mk),
        200,
        &[50.0],
        3,
        rng,
    )?;
    Ok(vec![
        check("reduced-route", worst <= 1e-12, format!("max diff {worst:.3e}")),
        check("single-parent", single[0].max_err <= 0.01, format!("max err {:.3e} over {}", single[0].max_err, single[0].n_defined)),
        check("3-gram", multi[0].max_err <= 0.02, format!("max err {:.3e} over {}", multi[0].max_err, multi[0].n_defined)),
    ])
}

fn g_hat(rng: &mut Rng) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for size in [2, 3, 5] {
        let prior = assumption_prior(size, rng)?;
        let support = prior.support().expect("finite prior");
        // conditions 1 and 2 are strict, so certify just below the measured value
        let gamma = measured_gamma(&support) * (1.0 - 1e-9);
        let cert = check_assumptions(&support, gamma)?;
        let mut ok = cert.all_pass();
        let mut worst = f64::INFINITY;
        for beta in [0.0, 0.5, 1.0, 2.0, 5.0] {
            for r in [0.1, 0.5] {
                let g = g_hat_from(&support, beta, r, true);
                let bound = g_hat_lower_bound(gamma, size, beta);
                ok &= g.value >= bound && g.std_error < 0.1 * bound;
                worst = worst.min(g.value / bound);
            }
        }
        out.push(check(&format!("g-hat S={size}"), ok, format!("γ={gamma:.3}, min ĝ/bound {worst:.3e}")));
    }
    Ok(out)
}

/// Brute-force pairwise joint by enumerating every sequence.
pub fn brute_force_joint(g: &CausalGraph, k: &crate::markov::TransitionKernel, i: usize, j: usize) -> Matrix {
    let s = k.size();
    let t = g.len();
    let mu = k.stationary();
    let mut table = Matrix::zeros(s, s);
    let mut x = vec![0usize; t];
    for code in 0..s.pow(t as u32) {
        let mut c = code;
        for slot in x.iter_mut() {
            *slot = c % s;
            c /= s;
        }
        let mut p = 1.0;
        for n in 0..t {
            p *= match g.parent(n) {
                Some(q) => k.prob(x[q], x[n]),
                None if n + 1 == t => 1.0 / s as f64,
                None => mu[x[n]],
            };
        }
        table[(x[j], x[i])] += p;
    }
    table
}

fn invariants(rng: &mut Rng) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut ok1 = true;
    let mut ok2 = true;
    for _ in 0..200 {
        let n = rng.random_range(2..10);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = softmax(&v);
        let abs = |x: &[f64]| x.iter().map(|a| a.abs()).collect::<Vec<_>>();
        let (au, aw) = (abs(&u), abs(&w));
        let pu: f64 = p.iter().zip(&au).map(|(a, b)| a * b).sum();
        let pw: f64 = p.iter().zip(&aw).map(|(a, b)| a * b).sum();
        let puw: f64 = p.iter().zip(au.iter().zip(&aw)).map(|(a, (b, c))| a * b * c).sum();
        ok1 &= l1_norm(&softmax_jacobian_apply(&p, &u)) <= 2.0 * pu + 1e-12;
        ok2 &= l1_norm(&softmax_jacobian_derivative(&p, &u, &w)) <= 2.0 * puw + 4.0 * pu * pw + 1e-12;
    }
    out.push(check("jacobian-l1", ok1, String::new()));
    out.push(check("jacobian-derivative-l1", ok2, String::new()));

    let g = CausalGraph::chain(5)?;
    let k = Arc::new(sample_kernel(&DirichletPrior::new(3, 1.0)?, rng)?);
    let set = WeightedSet::monte_carlo_fixed(&g, &[k], 64, rng)?;
    let e = evaluate(&random_theta(3, 5, rng), &set, 0.3, Grads::A2)?;
    let g2 = e.grad_a2.unwrap();
    let col = (0..3).map(|c| g2.column(c).iter().sum::<f64>().abs()).fold(0.0, f64::max);
    out.push(check("g2-column-sums", col <= 1e-12, format!("max |1ᵀG2| {col:.3e}")));

    let h = Matrix::from_fn(7, 4, |_, _| rng.random_range(-1.0..1.0));
    let a = Matrix::from_fn(4, 4, |_, _| rng.random_range(-2.0..2.0));
    let (_, pat) = causal_attention(&h, &a);
    let rows_ok = (0..7).all(|i| (pat.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12 && pat.row(i)[i + 1..].iter().all(|&x| x == 0.0));
    out.push(check("attention-rows", rows_ok, String::new()));

    let mut teff_ok = true;
    for _ in 0..50 {
        let g = CausalGraph::random(rng.random_range(3..16), 0.5, rng)?;
        // undirected leaf counts: the childless count fails on paths
        let te = g.t_eff_undirected();
        for lambda in [0.1, 0.5, 0.9] {
            teff_ok &= g.effective_length_lambda(lambda)? >= (1.0 - lambda) * te - 1e-12;
        }
    }
    out.push(check("t-eff-lambda-undirected-leaves", teff_ok, String::new()));

    let mut worst = 0.0f64;
    for t in 3..=5 {
        let g = CausalGraph::random(t, 0.3, rng)?;
        let k = sample_kernel(&DirichletPrior::new(2, 1.0)?, rng)?;
        for i in 0..t {
            for j in 0..t {
                let a = joint_distribution(&g, &k, i, j)?.table;
                worst = worst.max(a.max_abs_diff(&brute_force_joint(&g, &k, i, j)));
            }
        }
    }
    out.push(check("joint-brute-force", worst <= 1e-12, format!("max diff {worst:.3e}")));
    Ok(out)
}

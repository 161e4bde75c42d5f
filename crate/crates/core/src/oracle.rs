//! Exact pairwise joints on a causal graph, the idealised stage-1 and stage-2
//! gradients, the mutual-information oracle for graph recovery, and the
//! empirical transition estimator.

use crate::error::{Error, Result};
use crate::graph::{CausalGraph, MultiParentGraph};
use crate::linalg::Matrix;
use crate::markov::{b_frobenius_sq, chi2_mutual_info, contraction_coefficient, kernel_gamma, KernelPrior, TransitionKernel};
use crate::rng::Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

/// `P[s_j = s, s_i = s']` under a fixed kernel: rows indexed by `s_j`, columns by `s_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTable {
    pub i: usize,
    pub j: usize,
    pub table: Matrix,
}

/// Marginal of position `i`: `μ_π`, or uniform at the last position.
pub fn node_marginal(graph: &CausalGraph, kernel: &TransitionKernel, i: usize) -> Vec<f64> {
    let s = kernel.size();
    if i + 1 == graph.len() {
        vec![1.0 / s as f64; s]
    } else {
        kernel.stationary().to_vec()
    }
}

fn outer(a: &[f64], b: &[f64]) -> Matrix {
    Matrix::from_fn(a.len(), b.len(), |x, y| a[x] * b[y])
}

/// Exact pairwise joint via the least common ancestor `k`:
/// `P[s_j = s, s_i = s'] = Σ_a μ(a) π^{d(k,j)}(s|a) π^{d(k,i)}(s'|a)`.
///
/// The last position is uniform and independent of everything else.
pub fn joint_distribution(graph: &CausalGraph, kernel: &TransitionKernel, i: usize, j: usize) -> Result<JointTable> {
    let t = graph.len();
    for idx in [i, j] {
        if idx >= t {
            return Err(Error::IndexOutOfRange { index: idx, len: t });
        }
    }
    let s = kernel.size();
    let table = if i == j {
        let m = node_marginal(graph, kernel, i);
        Matrix::from_fn(s, s, |a, b| if a == b { m[a] } else { 0.0 })
    } else if i + 1 == t || j + 1 == t {
        outer(&node_marginal(graph, kernel, j), &node_marginal(graph, kernel, i))
    } else {
        match graph.least_common_ancestor(i, j)? {
            None => outer(kernel.stationary(), kernel.stationary()),
            Some(k) => {
                let pj = kernel.matrix_power(graph.depth(j) - graph.depth(k));
                let pi = kernel.matrix_power(graph.depth(i) - graph.depth(k));
                let mu = kernel.stationary();
                let mut m = Matrix::zeros(s, s);
                for a in 0..s {
                    for x in 0..s {
                        let w = mu[a] * pj[(a, x)];
                        if w == 0.0 {
                            continue;
                        }
                        for y in 0..s {
                            m[(x, y)] += w * pi[(a, y)];
                        }
                    }
                }
                m
            }
        }
    };
    Ok(JointTable { i, j, table })
}

/// `g_{i,j}(π) = Σ_{s,s'} π(s'|s)/μ(s') P[s_j=s, s_i=s'] − 1` for every `j ≤ i`
/// (entries above the diagonal are zero).
pub fn g_matrix(graph: &CausalGraph, kernel: &TransitionKernel) -> Result<Matrix> {
    let t = graph.len();
    let s = kernel.size();
    let mu = kernel.stationary();
    if mu.iter().any(|&m| m <= 0.0) {
        return Err(Error::Domain("stationary measure has a zero entry".into()));
    }
    let mut g = Matrix::zeros(t, t);
    for i in 0..t {
        for j in 0..=i {
            let p = joint_distribution(graph, kernel, i, j)?.table;
            let mut acc = 0.0;
            for a in 0..s {
                for b in 0..s {
                    acc += kernel.prob(a, b) / mu[b] * p[(a, b)];
                }
            }
            g[(i, j)] = acc - 1.0;
        }
    }
    Ok(g)
}

/// `I_{χ²}(s_i; s_j | π)` for every `j < i`.
pub fn chi2_mi_matrix(graph: &CausalGraph, kernel: &TransitionKernel) -> Result<Matrix> {
    let t = graph.len();
    let mut m = Matrix::zeros(t, t);
    for i in 0..t {
        for j in 0..i {
            m[(i, j)] = chi2_mutual_info(&joint_distribution(graph, kernel, i, j)?.table)?;
        }
    }
    Ok(m)
}

/// Prior average of a per-kernel matrix with standard errors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PriorAverage {
    pub mean: Matrix,
    pub std_error: Matrix,
    pub n_kernels: usize,
    /// Whether the average is exact (finite prior support).
    pub exact: bool,
}

impl PriorAverage {
    pub fn max_std_error(&self) -> f64 {
        self.std_error.max_abs()
    }

    /// Rows `i, j, value, stderr` for entries `j < i`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let fmt = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["i", "j", "value", "stderr"]).map_err(fmt)?;
        for i in 0..self.mean.rows() {
            for j in 0..i {
                w.write_record([
                    (i + 1).to_string(),
                    (j + 1).to_string(),
                    format!("{:e}", self.mean[(i, j)]),
                    format!("{:e}", self.std_error[(i, j)]),
                ])
                .map_err(fmt)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// The idealised stage-1 gradient `g_{i,j} = E_π[g_{i,j}(π)]`.
pub type IdealizedGradient = PriorAverage;

fn average<F>(kernels: &[TransitionKernel], exact: bool, f: F) -> Result<PriorAverage>
where
    F: Fn(&TransitionKernel) -> Result<Matrix> + Sync,
{
    if kernels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mats = kernels.par_iter().map(&f).collect::<Result<Vec<_>>>()?;
    let (r, c) = mats[0].shape();
    let n = mats.len() as f64;
    let mut mean = Matrix::zeros(r, c);
    for m in &mats {
        mean.axpy(1.0 / n, m);
    }
    let mut var = Matrix::zeros(r, c);
    for m in &mats {
        let d = m.sub(&mean);
        for (v, x) in var.as_mut_slice().iter_mut().zip(d.as_slice()) {
            *v += x * x;
        }
    }
    let std_error = if exact || mats.len() < 2 {
        Matrix::zeros(r, c)
    } else {
        Matrix::from_fn(r, c, |a, b| (var[(a, b)] / (n - 1.0) / n).sqrt())
    };
    Ok(PriorAverage {
        mean,
        std_error,
        n_kernels: mats.len(),
        exact,
    })
}

/// `g_{i,j}` over the prior: exact in `X`, averaged over `n_prior_samples`
/// kernels (or the whole support of a finite prior).
pub fn idealized_g(graph: &CausalGraph, prior: &KernelPrior, n_prior_samples: usize, rng: &mut Rng) -> Result<IdealizedGradient> {
    let (kernels, exact) = prior.expectation_sample(n_prior_samples, rng)?;
    idealized_g_from(graph, &kernels, exact)
}

pub fn idealized_g_from(graph: &CausalGraph, kernels: &[TransitionKernel], exact: bool) -> Result<IdealizedGradient> {
    average(kernels, exact, |k| g_matrix(graph, k))
}

/// `E_π[I_{χ²}(s_i; s_j | π)]` over the prior.
pub fn prior_chi2_mi(graph: &CausalGraph, kernels: &[TransitionKernel], exact: bool) -> Result<PriorAverage> {
    average(kernels, exact, |k| chi2_mi_matrix(graph, k))
}

/// One `(i, j)` comparison against the true parent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DpiPair {
    pub i: usize,
    pub j: usize,
    pub parent: usize,
    pub g_parent: f64,
    pub g_other: f64,
    pub required_gap: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DpiReport {
    pub gamma: f64,
    pub alpha: f64,
    pub b_frobenius_sq: f64,
    /// False when the kernel does not satisfy the lower-bound and
    /// non-degeneracy conditions for any `γ > 0`.
    pub conclusive: bool,
    pub pairs: Vec<DpiPair>,
}

impl DpiReport {
    pub fn all_pass(&self) -> bool {
        self.conclusive && self.pairs.iter().all(|p| p.passed)
    }

    pub fn min_slack(&self) -> f64 {
        self.pairs
            .iter()
            .map(|p| p.g_parent - p.g_other - p.required_gap)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Checks `g_{i,p(i)}(π) − g_{i,j}(π) ≥ (1−α(π))/2 · ‖B_π‖_F² − tol` for every
/// non-root `i` and `j < i`, `j ≠ p(i)`.
pub fn verify_dpi(graph: &CausalGraph, kernel: &TransitionKernel, tol: f64) -> Result<DpiReport> {
    let gamma = kernel_gamma(kernel);
    let alpha = contraction_coefficient(kernel);
    let b2 = b_frobenius_sq(kernel)?;
    let g = g_matrix(graph, kernel)?;
    let required = 0.5 * (1.0 - alpha) * b2;
    let conclusive = gamma > 0.0;
    let pairs = dpi_pairs(graph, &g, required, tol, conclusive);
    Ok(DpiReport {
        gamma,
        alpha,
        b_frobenius_sq: b2,
        conclusive,
        pairs,
    })
}

fn dpi_pairs(graph: &CausalGraph, g: &Matrix, required: f64, tol: f64, conclusive: bool) -> Vec<DpiPair> {
    let mut pairs = Vec::new();
    for (p, i) in graph.edges() {
        for j in 0..i {
            if j == p {
                continue;
            }
            let (gp, gj) = (g[(i, p)], g[(i, j)]);
            pairs.push(DpiPair {
                i,
                j,
                parent: p,
                g_parent: gp,
                g_other: gj,
                required_gap: required,
                passed: conclusive && gp - gj >= required - tol,
            });
        }
    }
    pairs
}

/// Prior-level form: `g_{i,p(i)} ≥ g_{i,j} + γ³/(2S)` with `γ` measured on the kernel sample.
pub fn verify_dpi_prior(graph: &CausalGraph, kernels: &[TransitionKernel], exact: bool, tol: f64) -> Result<DpiReport> {
    let s = kernels.first().ok_or(Error::EmptyDataset)?.size() as f64;
    let gamma = crate::markov::measured_gamma(kernels);
    let avg = idealized_g_from(graph, kernels, exact)?;
    let required = gamma.powi(3) / (2.0 * s);
    let conclusive = gamma > 0.0;
    let alpha = kernels.iter().map(contraction_coefficient).fold(0.0, f64::max);
    let b2 = kernels.iter().map(|k| b_frobenius_sq(k)).collect::<Result<Vec<_>>>()?;
    Ok(DpiReport {
        gamma,
        alpha,
        b_frobenius_sq: b2.iter().sum::<f64>() / b2.len() as f64,
        conclusive,
        pairs: dpi_pairs(graph, &avg.mean, required, tol, conclusive),
    })
}

/// Outcome of the oracle for one position.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleDecision {
    pub i: usize,
    pub best: Option<usize>,
    pub best_value: f64,
    pub parent: Option<usize>,
    /// Other indices whose value tied the maximum (broken toward the larger index).
    pub ties: Vec<usize>,
}

/// `p(i) = argmax_{j<i} I(i, j)` when the maximum reaches `threshold`, otherwise a root.
///
/// `scores[(i, j)]` for `j < i` is any pairwise dependence score.
pub fn oracle_recover(scores: &Matrix, threshold: f64) -> Result<(CausalGraph, Vec<OracleDecision>)> {
    let t = scores.rows();
    let mut parents = vec![None; t];
    let mut decisions = Vec::with_capacity(t);
    for i in 0..t {
        let mut best: Option<usize> = None;
        let mut best_value = f64::NEG_INFINITY;
        for j in 0..i {
            if scores[(i, j)] >= best_value {
                best_value = scores[(i, j)];
                best = Some(j);
            }
        }
        let ties: Vec<usize> = match best {
            Some(b) => (0..i).filter(|&j| j != b && scores[(i, j)] == best_value).collect(),
            None => Vec::new(),
        };
        if best.is_some() && best_value >= threshold && i + 1 < t {
            parents[i] = best;
        }
        decisions.push(OracleDecision {
            i,
            best,
            best_value,
            parent: parents[i],
            ties,
        });
    }
    Ok((CausalGraph::new(parents)?, decisions))
}

/// Runs the oracle on prior-averaged χ² mutual informations with threshold
/// `3 ×` the largest standard error (or `tol` when the average is exact).
pub fn oracle_from_prior(graph: &CausalGraph, kernels: &[TransitionKernel], exact: bool, tol: f64) -> Result<(CausalGraph, Vec<OracleDecision>, f64)> {
    let mi = prior_chi2_mi(graph, kernels, exact)?;
    let threshold = (3.0 * mi.max_std_error()).max(tol);
    let (g, d) = oracle_recover(&mi.mean, threshold)?;
    Ok((g, d, threshold))
}

fn h_s(z: f64, beta: f64, r: f64, mu_s: f64) -> f64 {
    let eb = beta.exp();
    let ebm = (beta * mu_s).exp();
    let num = (1.0 - r) * eb * z * z + r * ebm * z;
    let den = (1.0 - r) * (eb - 1.0) * mu_s * z + (1.0 - r) + r * ebm;
    let num1 = (1.0 - r) * eb + r * ebm;
    let den1 = (1.0 - r) * (eb - 1.0) * mu_s + (1.0 - r) + r * ebm;
    num / den - num1 / den1
}

/// The per-kernel term of `ĝ(β)`: `(1/(S(S−1))) Σ_s μ(s) Σ_{s'} μ(s') h_s(π(s'|s)/μ(s'))`.
pub fn g_hat_kernel(kernel: &TransitionKernel, beta: f64, r: f64) -> f64 {
    let s = kernel.size();
    let mu = kernel.stationary();
    let mut total = 0.0;
    for a in 0..s {
        let inner: f64 = (0..s).map(|b| mu[b] * h_s(kernel.prob(a, b) / mu[b], beta, r, mu[a])).sum();
        total += mu[a] * inner;
    }
    total / (s * (s - 1)) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GHat {
    pub value: f64,
    pub std_error: f64,
    pub n_kernels: usize,
    pub exact: bool,
}

/// `ĝ(β)` averaged over the prior (exactly for finite priors).
pub fn g_hat_beta(beta: f64, r: f64, prior: &KernelPrior, n_samples: usize, rng: &mut Rng) -> Result<GHat> {
    if !(beta >= 0.0) || !(0.0..1.0).contains(&r) {
        return Err(Error::Domain(format!("need β ≥ 0 and r ∈ [0,1), got β={beta}, r={r}")));
    }
    let (kernels, exact) = prior.expectation_sample(n_samples, rng)?;
    Ok(g_hat_from(&kernels, beta, r, exact))
}

pub fn g_hat_from(kernels: &[TransitionKernel], beta: f64, r: f64, exact: bool) -> GHat {
    let vals: Vec<f64> = kernels.iter().map(|k| g_hat_kernel(k, beta, r)).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    GHat {
        value: mean,
        std_error: if exact { 0.0 } else { (var / n).sqrt() },
        n_kernels: vals.len(),
        exact,
    }
}

/// A finite prior that meets the symmetry and mean conditions exactly.
///
/// For `S = 2` it is the pair `{[[1−δ, δ], [δ, 1−δ]], [[δ, 1−δ], [1−δ, δ]]}`.
/// For `S ≥ 3` it is the relabeling orbit of a Dirichlet(1) kernel mixed with
/// `I` or a cyclic shift until its trace is 1, which makes the orbit mean
/// `(1/S) 1 1ᵀ`.
pub fn assumption_prior(size: usize, rng: &mut Rng) -> Result<KernelPrior> {
    if size < 2 {
        return Err(Error::Domain("alphabet must have at least two symbols".into()));
    }
    if size == 2 {
        let delta = rand::Rng::random_range(rng, 0.15..0.35);
        let a = crate::markov::two_state_symmetric(delta);
        let b = crate::markov::two_state_symmetric(1.0 - delta);
        return Ok(KernelPrior::Finite(vec![a, b]));
    }
    let s = size as f64;
    let r = crate::markov::sample_kernel(&crate::markov::DirichletPrior::new(size, 1.0)?, rng)?;
    let tr = r.matrix().trace();
    let (lambda, other) = if tr > 1.0 {
        (1.0 / tr, Matrix::from_fn(size, size, |i, j| if j == (i + 1) % size { 1.0 } else { 0.0 }))
    } else {
        ((s - 1.0) / (s - tr), Matrix::identity(size))
    };
    let mut m = r.matrix().scaled(lambda);
    m.axpy(1.0 - lambda, &other);
    Ok(KernelPrior::PermutationOrbit(TransitionKernel::from_matrix(m)?))
}

/// `½ γ⁸ S⁻⁶ e^{−2β}`.
pub fn g_hat_lower_bound(gamma: f64, alphabet: usize, beta: f64) -> f64 {
    0.5 * gamma.powi(8) * (alphabet as f64).powi(-6) * (-2.0 * beta).exp()
}

/// Edge-count estimate `π̂(s'|s)`; rows whose token never appears as a parent are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalTransition {
    pub counts: Matrix,
    pub rows: Vec<Option<Vec<f64>>>,
}

impl EmpiricalTransition {
    pub fn row(&self, s: usize) -> Option<&[f64]> {
        self.rows[s].as_deref()
    }

    pub fn fully_defined(&self) -> bool {
        self.rows.iter().all(Option::is_some)
    }
}

fn normalise_rows(counts: Matrix) -> EmpiricalTransition {
    let rows = (0..counts.rows())
        .map(|a| {
            let total: f64 = counts.row(a).iter().sum();
            (total > 0.0).then(|| counts.row(a).iter().map(|c| c / total).collect())
        })
        .collect();
    EmpiricalTransition { counts, rows }
}

pub fn empirical_transition(tokens: &[usize], graph: &CausalGraph, alphabet: usize) -> EmpiricalTransition {
    let mut counts = Matrix::zeros(alphabet, alphabet);
    for (p, i) in graph.edges() {
        counts[(tokens[p], tokens[i])] += 1.0;
    }
    normalise_rows(counts)
}

/// k-parent analogue over the edges inside the sequence; rows are indexed by
/// the mixed-radix parent context.
pub fn empirical_transition_multi(tokens: &[usize], graph: &MultiParentGraph, alphabet: usize) -> EmpiricalTransition {
    let contexts = alphabet.pow(graph.arity() as u32);
    let mut counts = Matrix::zeros(contexts, alphabet);
    for i in graph.non_roots() {
        let c = graph.parents(i).iter().fold(0, |acc, &p| acc * alphabet + tokens[p]);
        counts[(c, tokens[i])] += 1.0;
    }
    normalise_rows(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::two_state_symmetric;

    #[test]
    fn parent_joint_and_g() {
        let k = two_state_symmetric(0.2);
        let g = CausalGraph::chain(5).unwrap();
        let p = joint_distribution(&g, &k, 2, 1).unwrap().table;
        for a in 0..2 {
            for b in 0..2 {
                assert!((p[(a, b)] - 0.5 * k.prob(a, b)).abs() < 1e-15);
            }
        }
        let gm = g_matrix(&g, &k).unwrap();
        assert!((gm[(2, 1)] - 0.36).abs() < 1e-12);
        // g_{i,i}(π) = Σ π(s|s) − 1
        assert!((gm[(2, 2)] - 0.6).abs() < 1e-12);
        assert!(gm[(4, 1)].abs() < 1e-15);
    }

    #[test]
    fn g_hat_at_zero_reduces_to_chi2() {
        let k = two_state_symmetric(0.3);
        let r = 0.25;
        let want = (1.0 - r) * b_frobenius_sq(&k).unwrap() / 2.0;
        assert!((g_hat_kernel(&k, 0.0, r) - want).abs() < 1e-14);
        let u = TransitionKernel::uniform(3).unwrap();
        for beta in [0.0, 1.0, 5.0] {
            assert!(g_hat_kernel(&u, beta, 0.3).abs() < 1e-14);
        }
    }

    #[test]
    fn assumption_prior_has_uniform_mean() {
        let mut rng = crate::rng::seeded(5);
        for size in [2, 3, 4] {
            let prior = assumption_prior(size, &mut rng).unwrap();
            let support = prior.support().unwrap();
            let mut mean = Matrix::zeros(size, size);
            for k in &support {
                mean.axpy(1.0 / support.len() as f64, k.matrix());
            }
            assert!(mean.max_abs_diff(&Matrix::from_fn(size, size, |_, _| 1.0 / size as f64)) < 1e-12);
            assert!(crate::markov::measured_gamma(&support) > 0.0);
        }
    }

    #[test]
    fn empirical_transition_hand_count() {
        let g = CausalGraph::chain(5).unwrap();
        // last position is a root, so the edges are 1→2, 2→3, 3→4
        let e = empirical_transition(&[0, 1, 0, 1, 0], &g, 3);
        assert_eq!(e.row(0).unwrap(), &[0.0, 1.0, 0.0]);
        assert_eq!(e.row(1).unwrap(), &[1.0, 0.0, 0.0]);
        assert!(e.row(2).is_none());
    }

    #[test]
    fn oracle_ties_go_to_larger_index() {
        let mut m = Matrix::zeros(4, 4);
        m[(2, 0)] = 1.0;
        m[(2, 1)] = 1.0;
        let (g, d) = oracle_recover(&m, 0.5).unwrap();
        assert_eq!(g.parent(2), Some(1));
        assert_eq!(d[2].ties, vec![0]);
        assert_eq!(g.parent(1), None);
    }
}

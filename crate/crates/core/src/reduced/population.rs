//! Loss and closed-form gradients of the reduced model over weighted sets of
//! sequences.
//!
//! A [`WeightedSet`] holds prefixes `s_{1:T−1}` with the kernel that produced
//! them and a weight. Population estimates condition on every value of `s_T`
//! and average over it; finite-sample sets fix `s_T` to the observed token.
//! Loss and gradients are always computed from the same set, so finite
//! differences of a Monte-Carlo loss agree with its gradient.

use super::model::ReducedParams;
use crate::error::{Error, Result};
use crate::graph::CausalGraph;
use crate::linalg::{softmax_in_place, softmax_jacobian_apply, Matrix};
use crate::markov::{KernelPrior, TransitionKernel};
use crate::rng::Rng;
use crate::sequence::{generate_into, SequenceBatch};
use rayon::prelude::*;
use std::sync::Arc;

/// Largest `S^T` for which the population loss is enumerated exactly by default.
pub const EXACT_ENUMERATION_LIMIT: usize = 4096;

const CHUNK: usize = 256;

#[derive(Clone, Debug)]
pub struct WeightedSet {
    pub length: usize,
    pub alphabet: usize,
    /// Flat `n × (T−1)` prefixes.
    pub prefixes: Vec<usize>,
    pub kernel_ids: Vec<usize>,
    /// `None` averages over `s_T ∈ [S]` (population form); `Some(s)` fixes it.
    pub last: Vec<Option<usize>>,
    pub weights: Vec<f64>,
    pub kernels: Vec<Arc<TransitionKernel>>,
}

impl WeightedSet {
    fn new(length: usize, alphabet: usize) -> Self {
        Self {
            length,
            alphabet,
            prefixes: Vec::new(),
            kernel_ids: Vec::new(),
            last: Vec::new(),
            weights: Vec::new(),
            kernels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn prefix(&self, n: usize) -> &[usize] {
        let m = self.length - 1;
        &self.prefixes[n * m..(n + 1) * m]
    }

    /// Exact enumeration of every prefix under each kernel, kernels weighted equally.
    pub fn exact(graph: &CausalGraph, kernels: &[Arc<TransitionKernel>]) -> Result<Self> {
        let t = graph.len();
        let s = kernels.first().ok_or(Error::EmptyDataset)?.size();
        let m = t - 1;
        let count = s.checked_pow(m as u32).filter(|&c| c <= 1 << 24).ok_or_else(|| {
            Error::Domain(format!("S^(T-1) = {s}^{m} is too large to enumerate"))
        })?;
        let mut set = Self::new(t, s);
        set.kernels = kernels.to_vec();
        let kw = 1.0 / kernels.len() as f64;
        let mut x = vec![0usize; m];
        for (kid, k) in kernels.iter().enumerate() {
            for code in 0..count {
                let mut c = code;
                for slot in x.iter_mut().rev() {
                    *slot = c % s;
                    c /= s;
                }
                let prob = prefix_probability(graph, k, &x);
                if prob > 0.0 {
                    set.prefixes.extend_from_slice(&x);
                    set.kernel_ids.push(kid);
                    set.last.push(None);
                    set.weights.push(kw * prob);
                }
            }
        }
        Ok(set)
    }

    /// `n` prefixes, each from a fresh kernel drawn from the prior.
    pub fn monte_carlo(graph: &CausalGraph, prior: &KernelPrior, n: usize, rng: &mut Rng) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let t = graph.len();
        let mut set = Self::new(t, prior.size());
        let mut tokens = vec![0usize; t];
        for _ in 0..n {
            let k = Arc::new(prior.sample(rng)?);
            generate_into(graph, &k, rng, &mut tokens);
            set.prefixes.extend_from_slice(&tokens[..t - 1]);
            set.kernel_ids.push(set.kernels.len());
            set.kernels.push(k);
            set.last.push(None);
            set.weights.push(1.0 / n as f64);
        }
        Ok(set)
    }

    /// `n` prefixes under fixed kernels (cycled), for estimator cross-checks.
    pub fn monte_carlo_fixed(graph: &CausalGraph, kernels: &[Arc<TransitionKernel>], n: usize, rng: &mut Rng) -> Result<Self> {
        if n == 0 || kernels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let t = graph.len();
        let mut set = Self::new(t, kernels[0].size());
        set.kernels = kernels.to_vec();
        let mut tokens = vec![0usize; t];
        for i in 0..n {
            let kid = i % kernels.len();
            generate_into(graph, &kernels[kid], rng, &mut tokens);
            set.prefixes.extend_from_slice(&tokens[..t - 1]);
            set.kernel_ids.push(kid);
            set.last.push(None);
            set.weights.push(1.0 / n as f64);
        }
        Ok(set)
    }

    /// Observed sequences with `s_T` fixed to the observed token, weight `1/N` each.
    pub fn finite_sample(batch: &SequenceBatch) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let t = batch.tokens[0].len();
        let mut set = Self::new(t, batch.kernels[0].size());
        set.kernels = batch.kernels.clone();
        let n = batch.len() as f64;
        for i in 0..batch.len() {
            set.prefixes.extend_from_slice(&batch.tokens[i][..t - 1]);
            set.kernel_ids.push(batch.kernel_ids[i]);
            set.last.push(Some(batch.tokens[i][t - 1]));
            set.weights.push(1.0 / n);
        }
        Ok(set)
    }

    /// `−Σ w (1/S) Σ_s Σ_{s'} π log(π + ε)` (or with `s` fixed), and the same with `ε = 0`.
    pub fn optimal_losses(&self, epsilon: f64) -> (f64, f64) {
        let mut plain = 0.0;
        let mut perturbed = 0.0;
        for n in 0..self.len() {
            let k = &self.kernels[self.kernel_ids[n]];
            let states: Vec<usize> = match self.last[n] {
                Some(s) => vec![s],
                None => (0..self.alphabet).collect(),
            };
            let w = self.weights[n] / states.len() as f64;
            for s in states {
                for &p in k.row(s) {
                    if p > 0.0 {
                        plain -= w * p * p.ln();
                    }
                    perturbed -= w * p * (p + epsilon).ln();
                }
            }
        }
        (plain, perturbed)
    }
}

/// Probability of a prefix `s_{1:T−1}` under the graph and kernel.
pub fn prefix_probability(graph: &CausalGraph, kernel: &TransitionKernel, prefix: &[usize]) -> f64 {
    let mut prob = 1.0;
    for (i, &x) in prefix.iter().enumerate() {
        prob *= match graph.parent(i) {
            Some(p) => kernel.prob(prefix[p], x),
            None => kernel.stationary()[x],
        };
        if prob == 0.0 {
            break;
        }
    }
    prob
}

/// Loss with optional gradients.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub grad_a1: Option<Matrix>,
    pub grad_a2: Option<Matrix>,
}

struct Partial {
    loss: f64,
    /// `∂L/∂S(A^(1))`, lower-triangular.
    d_pattern: Matrix,
    d_a2: Matrix,
    min_f: (f64, usize, usize),
}

/// Which gradients to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grads {
    None,
    A1,
    A2,
    Both,
}

impl Grads {
    fn a1(self) -> bool {
        matches!(self, Grads::A1 | Grads::Both)
    }
    fn a2(self) -> bool {
        matches!(self, Grads::A2 | Grads::Both)
    }
}

/// `L(θ) = −Σ_n w_n (1/|S_n|) Σ_{s∈S_n} Σ_{s'} π_n(s'|s) log(f_θ(X_n; s)_{s'} + ε)`.
///
/// Gradients follow the closed forms
/// `G^(1)_i = J(S(A^(1)_i)) Σ E[c · (J(v) δ)_i · X_{≤i} A^(2) e_s]` and
/// `G^(2) = Σ E[c · Xᵀ S(A^(1))ᵀ J(v) δ e_sᵀ]` with `c δ = −Σ_{s'} π(s'|s)/(f_{s'}+ε) δ_{s'}(X)`.
pub fn evaluate(theta: &ReducedParams, set: &WeightedSet, epsilon: f64, grads: Grads) -> Result<Evaluation> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("ε must be positive, got {epsilon}")));
    }
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if theta.length() != set.length || theta.alphabet() != set.alphabet {
        return Err(Error::DimensionMismatch("parameters do not match the sequence set".into()));
    }
    let p = theta.first_layer();
    let partials: Vec<Partial> = (0..set.len().div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(set.len());
            evaluate_range(theta, &p, set, epsilon, grads, lo..hi)
        })
        .collect();
    let t = set.length;
    let mut loss = 0.0;
    let mut d_pattern = Matrix::zeros(t, t);
    let mut d_a2 = Matrix::zeros(set.alphabet, set.alphabet);
    let mut min_f = (f64::INFINITY, 0, 0);
    for part in &partials {
        loss += part.loss;
        if grads.a1() {
            d_pattern.add_mut(&part.d_pattern);
        }
        if grads.a2() {
            d_a2.add_mut(&part.d_a2);
        }
        if part.min_f.0 < min_f.0 {
            min_f = part.min_f;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss is {loss}; smallest output entry f={:e} at sequence {} token {} (ε={epsilon:e})",
            min_f.0, min_f.1, min_f.2
        )));
    }
    let grad_a1 = grads.a1().then(|| {
        let mut g = Matrix::zeros(t, t);
        for i in 0..t {
            let row = softmax_jacobian_apply(&p.row(i)[..=i], &d_pattern.row(i)[..=i]);
            g.row_mut(i)[..=i].copy_from_slice(&row);
        }
        g
    });
    Ok(Evaluation {
        loss,
        grad_a1,
        grad_a2: grads.a2().then_some(d_a2),
    })
}

fn evaluate_range(
    theta: &ReducedParams,
    p: &Matrix,
    set: &WeightedSet,
    epsilon: f64,
    grads: Grads,
    range: std::ops::Range<usize>,
) -> Partial {
    let t = set.length;
    let sd = set.alphabet;
    let a2 = &theta.a2;
    let mut out = Partial {
        loss: 0.0,
        d_pattern: Matrix::zeros(if grads.a1() { t } else { 0 }, if grads.a1() { t } else { 0 }),
        d_a2: Matrix::zeros(sd, sd),
        min_f: (f64::INFINITY, 0, 0),
    };
    let mut x = vec![0usize; t];
    // rows j < T−1 of H = S(A^(1)) X do not depend on s_T
    let mut h = Matrix::zeros(t, sd);
    let mut z = vec![0.0; t];
    let mut f = vec![0.0; sd];
    let mut dv = vec![0.0; t];
    let mut w = vec![0.0; sd];
    for n in range {
        x[..t - 1].copy_from_slice(set.prefix(n));
        let kernel = &set.kernels[set.kernel_ids[n]];
        for j in 0..t - 1 {
            let pj = p.row(j);
            let hj = h.row_mut(j);
            hj.iter_mut().for_each(|e| *e = 0.0);
            for k in 0..=j {
                hj[x[k]] += pj[k];
            }
        }
        let (states, per_state): (Vec<usize>, f64) = match set.last[n] {
            Some(s) => (vec![s], set.weights[n]),
            None => ((0..sd).collect(), set.weights[n] / sd as f64),
        };
        for s in states {
            x[t - 1] = s;
            let plast = p.row(t - 1);
            {
                let hl = h.row_mut(t - 1);
                hl.iter_mut().for_each(|e| *e = 0.0);
                for k in 0..t {
                    hl[x[k]] += plast[k];
                }
            }
            for j in 0..t {
                let hj = h.row(j);
                z[j] = (0..sd).map(|a| hj[a] * a2[(a, s)]).sum();
            }
            softmax_in_place(&mut z);
            let v = &z;
            f.iter_mut().for_each(|e| *e = 0.0);
            for j in 0..t {
                f[x[j]] += v[j];
            }
            let row = kernel.row(s);
            for sp in 0..sd {
                if row[sp] > 0.0 {
                    out.loss -= per_state * row[sp] * (f[sp] + epsilon).ln();
                    if f[sp] < out.min_f.0 {
                        out.min_f = (f[sp], n, sp);
                    }
                }
                w[sp] = -per_state * row[sp] / (f[sp] + epsilon);
            }
            if grads == Grads::None {
                continue;
            }
            // dz = J(v) dv with dv_j = w_{x_j}
            let mut vdv = 0.0;
            for j in 0..t {
                dv[j] = w[x[j]];
                vdv += v[j] * dv[j];
            }
            for j in 0..t {
                dv[j] = v[j] * (dv[j] - vdv);
            }
            let dz = &dv;
            if grads.a2() {
                for j in 0..t {
                    let hj = h.row(j);
                    for a in 0..sd {
                        out.d_a2[(a, s)] += dz[j] * hj[a];
                    }
                }
            }
            if grads.a1() {
                for j in 0..t {
                    let dzj = dz[j];
                    if dzj == 0.0 {
                        continue;
                    }
                    let row = out.d_pattern.row_mut(j);
                    for k in 0..=j {
                        row[k] += dzj * a2[(x[k], s)];
                    }
                }
            }
        }
    }
    out
}

/// How the population expectation over `X` is formed.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Estimator {
    /// Enumerate all prefixes for each of `prior_samples` kernels.
    ExactEnumeration { prior_samples: usize },
    /// `n_sequences` fresh (kernel, prefix) draws.
    MonteCarlo { n_sequences: usize },
}

impl Estimator {
    /// Exact when `S^T ≤ 4096`, Monte Carlo otherwise.
    pub fn auto(alphabet: usize, length: usize, prior_samples: usize, n_sequences: usize) -> Self {
        match alphabet.checked_pow(length as u32) {
            Some(c) if c <= EXACT_ENUMERATION_LIMIT => Estimator::ExactEnumeration { prior_samples },
            _ => Estimator::MonteCarlo { n_sequences },
        }
    }

    /// Draws the set this estimator averages over.
    pub fn draw(&self, graph: &CausalGraph, prior: &KernelPrior, rng: &mut Rng) -> Result<WeightedSet> {
        match *self {
            Estimator::ExactEnumeration { prior_samples } => {
                let (kernels, _) = prior.expectation_sample(prior_samples, rng)?;
                let kernels: Vec<_> = kernels.into_iter().map(Arc::new).collect();
                WeightedSet::exact(graph, &kernels)
            }
            Estimator::MonteCarlo { n_sequences } => WeightedSet::monte_carlo(graph, prior, n_sequences, rng),
        }
    }
}

/// Population loss at `θ` with its optimal references `(L*, L*_ε)` on the same kernels.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct LossReport {
    pub loss: f64,
    pub optimal: f64,
    pub optimal_perturbed: f64,
    /// Per-sequence standard error of the loss, when the set is Monte Carlo.
    pub std_error: Option<f64>,
}

pub fn population_loss(theta: &ReducedParams, set: &WeightedSet, epsilon: f64) -> Result<LossReport> {
    let loss = evaluate(theta, set, epsilon, Grads::None)?.loss;
    let (optimal, optimal_perturbed) = set.optimal_losses(epsilon);
    Ok(LossReport {
        loss,
        optimal,
        optimal_perturbed,
        std_error: None,
    })
}

/// Monte-Carlo population loss with a standard error from per-sequence terms.
pub fn population_loss_mc(theta: &ReducedParams, set: &WeightedSet, epsilon: f64) -> Result<LossReport> {
    let n = set.len();
    let mut terms = Vec::with_capacity(n);
    let p = theta.first_layer();
    for i in 0..n {
        let part = evaluate_range(theta, &p, set, epsilon, Grads::None, i..i + 1);
        terms.push(part.loss / set.weights[i]);
    }
    let mean = terms.iter().sum::<f64>() / n as f64;
    let var = terms.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
    let (optimal, optimal_perturbed) = set.optimal_losses(epsilon);
    Ok(LossReport {
        loss: mean,
        optimal,
        optimal_perturbed,
        std_error: Some((var / n as f64).sqrt()),
    })
}

/// `L̂(θ) = −(1/N) Σ_n Σ_{s'} π^(n)(s'|s_T^(n)) log(f_θ(s^(n))_{s'} + ε)`.
pub fn finite_sample_loss(theta: &ReducedParams, dataset: &SequenceBatch, epsilon: f64) -> Result<f64> {
    Ok(evaluate(theta, &WeightedSet::finite_sample(dataset)?, epsilon, Grads::None)?.loss)
}

pub fn finite_sample_grads(theta: &ReducedParams, dataset: &SequenceBatch, epsilon: f64) -> Result<(Matrix, Matrix)> {
    let e = evaluate(theta, &WeightedSet::finite_sample(dataset)?, epsilon, Grads::Both)?;
    Ok((e.grad_a1.unwrap(), e.grad_a2.unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::DirichletPrior;
    use crate::rng::seeded;

    #[test]
    fn exact_weights_sum_to_one() {
        let g = CausalGraph::chain(5).unwrap();
        let prior = KernelPrior::Dirichlet(DirichletPrior::new(2, 1.0).unwrap());
        let set = Estimator::ExactEnumeration { prior_samples: 3 }
            .draw(&g, &prior, &mut seeded(0))
            .unwrap();
        assert!((set.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_prior_optimal_loss_is_log_s() {
        let g = CausalGraph::chain(4).unwrap();
        let k = Arc::new(TransitionKernel::uniform(3).unwrap());
        let set = WeightedSet::exact(&g, &[k]).unwrap();
        let (plain, _) = set.optimal_losses(0.1);
        assert!((plain - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn epsilon_must_be_positive() {
        let g = CausalGraph::chain(4).unwrap();
        let k = Arc::new(TransitionKernel::uniform(2).unwrap());
        let set = WeightedSet::exact(&g, &[k]).unwrap();
        let th = ReducedParams::zeros(2, 4);
        assert!(evaluate(&th, &set, 0.0, Grads::None).is_err());
    }

    #[test]
    fn grad_a2_columns_sum_to_zero() {
        let g = CausalGraph::chain(6).unwrap();
        let prior = KernelPrior::Dirichlet(DirichletPrior::new(3, 1.0).unwrap());
        let mut rng = seeded(8);
        let set = WeightedSet::monte_carlo(&g, &prior, 50, &mut rng).unwrap();
        let mut th = ReducedParams::init(3, 6, 0.4);
        th.a1[(3, 1)] = 1.3;
        let e = evaluate(&th, &set, 0.2, Grads::Both).unwrap();
        let g2 = e.grad_a2.unwrap();
        for s in 0..3 {
            assert!(g2.column(s).iter().sum::<f64>().abs() < 1e-14);
        }
        let g1 = e.grad_a1.unwrap();
        for i in 0..6 {
            assert!(g1.row(i)[..=i].iter().sum::<f64>().abs() < 1e-14);
        }
    }
}

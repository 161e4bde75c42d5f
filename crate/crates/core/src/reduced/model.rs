use crate::error::{Error, Result};
use crate::graph::CausalGraph;
use crate::linalg::{softmax_in_place, Matrix};
use crate::transformer::causal_softmax;
use serde::{Deserialize, Serialize};

/// `θ = (A^(1), A^(2))`.
///
/// `A^(2)` is stored so that the second-layer logits are `S(A^(1)) X A^(2) e_s`,
/// i.e. the transpose of the matrix that appears next to `x̄_T` when the model
/// is written with `A^(2)ᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedParams {
    /// `T×T`; only entries on and below the diagonal are read.
    pub a1: Matrix,
    /// `S×S`
    pub a2: Matrix,
}

impl ReducedParams {
    pub fn zeros(alphabet: usize, length: usize) -> Self {
        Self {
            a1: Matrix::zeros(length, length),
            a2: Matrix::zeros(alphabet, alphabet),
        }
    }

    /// Initialisation `A^(1) = 0`, `A^(2) = β₀ I`.
    pub fn init(alphabet: usize, length: usize, beta0: f64) -> Self {
        Self {
            a1: Matrix::zeros(length, length),
            a2: Matrix::scaled_identity(alphabet, beta0),
        }
    }

    /// `A^(1) = β₁ · adjacency`, `A^(2) = β₂ I`.
    pub fn construction(graph: &CausalGraph, alphabet: usize, beta1: f64, beta2: f64) -> Self {
        let t = graph.len();
        let mut a1 = Matrix::zeros(t, t);
        for (p, i) in graph.edges() {
            a1[(i, p)] = beta1;
        }
        Self {
            a1,
            a2: Matrix::scaled_identity(alphabet, beta2),
        }
    }

    pub fn alphabet(&self) -> usize {
        self.a2.rows()
    }

    pub fn length(&self) -> usize {
        self.a1.rows()
    }

    /// Row-wise causal softmax `S(A^(1))`.
    pub fn first_layer(&self) -> Matrix {
        causal_softmax(&self.a1)
    }

    /// `β = (tr A^(2) − 1ᵀA^(2)1 / S) / (S−1)`: the coordinate along `I − 11ᵀ/S`.
    pub fn beta(&self) -> f64 {
        let s = self.alphabet() as f64;
        (self.a2.trace() - self.a2.sum() / s) / (s - 1.0)
    }

    /// Zeroes every entry above the diagonal of `A^(1)`.
    pub fn clear_upper(&mut self) {
        let t = self.length();
        for i in 0..t {
            for j in (i + 1)..t {
                self.a1[(i, j)] = 0.0;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.a1.is_finite() && self.a2.is_finite()
    }

    fn check(&self, tokens: &[usize]) -> Result<()> {
        if tokens.len() != self.length() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} tokens, got {}",
                self.length(),
                tokens.len()
            )));
        }
        if tokens.iter().any(|&s| s >= self.alphabet()) {
            return Err(Error::Domain("token outside the alphabet".into()));
        }
        Ok(())
    }

    /// `f_θ(s_{1:T}) = Xᵀ S(S(A^(1)) X A^(2) e_{s_T})`.
    pub fn forward(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        self.check(tokens)?;
        let p = self.first_layer();
        Ok(forward_with_pattern(&p, &self.a2, tokens))
    }

    /// `f_θ(X; s)`: the last row of `X` replaced by `e_s`.
    pub fn forward_conditioned(&self, prefix: &[usize], s: usize) -> Result<Vec<f64>> {
        let mut tokens = prefix.to_vec();
        tokens.push(s);
        self.forward(&tokens)
    }
}

/// Model output given a precomputed first-layer pattern.
pub fn forward_with_pattern(p: &Matrix, a2: &Matrix, tokens: &[usize]) -> Vec<f64> {
    let (v, _) = second_layer(p, a2, tokens);
    let mut f = vec![0.0; a2.rows()];
    for (j, &x) in tokens.iter().enumerate() {
        f[x] += v[j];
    }
    f
}

/// Second-layer attention `v = S(H A^(2) e_s)` with `H = S(A^(1)) X`; returns `(v, H)`.
pub fn second_layer(p: &Matrix, a2: &Matrix, tokens: &[usize]) -> (Vec<f64>, Matrix) {
    let t = tokens.len();
    let s_dim = a2.rows();
    let s = tokens[t - 1];
    let mut h = Matrix::zeros(t, s_dim);
    for j in 0..t {
        let pj = p.row(j);
        let hj = h.row_mut(j);
        for k in 0..=j {
            hj[tokens[k]] += pj[k];
        }
    }
    let mut v: Vec<f64> = (0..t)
        .map(|j| (0..s_dim).map(|a| h[(j, a)] * a2[(a, s)]).sum())
        .collect();
    softmax_in_place(&mut v);
    (v, h)
}

/// Fraction of first-layer attention placed on the true parent, averaged over non-roots.
pub fn avg_attn(pattern: &Matrix, graph: &CausalGraph) -> f64 {
    let edges = graph.edges();
    if edges.is_empty() {
        return f64::NAN;
    }
    edges.iter().map(|&(p, i)| pattern[(i, p)]).sum::<f64>() / edges.len() as f64
}

/// `S(A^(1))_{i,p(i)}` for each non-root `i`, in position order.
pub fn edge_weights(pattern: &Matrix, graph: &CausalGraph) -> Vec<f64> {
    graph.edges().iter().map(|&(p, i)| pattern[(i, p)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::empirical_freq;

    #[test]
    fn zero_parameters_give_empirical_frequencies() {
        let th = ReducedParams::zeros(3, 6);
        let tokens = [0, 2, 2, 1, 0, 2];
        let f = th.forward(&tokens).unwrap();
        let mu = empirical_freq(&tokens, 3);
        for (a, b) in f.iter().zip(&mu) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn beta_projection() {
        let mut th = ReducedParams::init(4, 5, 0.3);
        assert!((th.beta() - 0.3).abs() < 1e-15);
        for a in 0..4 {
            for b in 0..4 {
                th.a2[(a, b)] += 0.7;
            }
        }
        assert!((th.beta() - 0.3).abs() < 1e-15);
    }
}

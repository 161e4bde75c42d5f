//! Sampling token sequences with latent causal structure, and their embeddings.

use crate::error::{Error, Result};
use crate::graph::{CausalGraph, MultiParentGraph};
use crate::linalg::Matrix;
use crate::markov::{KernelPrior, MultiKernel, TransitionKernel};
use crate::rng::Rng;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::sync::Arc;

/// Kernel that generated a sample.
#[derive(Clone, Debug)]
pub enum KernelRef {
    Single(Arc<TransitionKernel>),
    Multi(Arc<MultiKernel>),
}

/// Tokens `s_{1:T}` and target `s_{T+1}`.
#[derive(Clone, Debug)]
pub struct SequenceSample {
    pub tokens: Vec<usize>,
    pub target: usize,
    pub kernel: KernelRef,
}

impl SequenceSample {
    pub fn single_kernel(&self) -> Option<&TransitionKernel> {
        match &self.kernel {
            KernelRef::Single(k) => Some(k),
            KernelRef::Multi(_) => None,
        }
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical(p: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // u fell in the rounding slack above the last cumulative sum
    p.iter().rposition(|&w| w > 0.0).unwrap_or(p.len() - 1)
}

/// Fills `tokens` (length `T`) and returns the target.
///
/// Roots before `T−1` follow `μ_π`, position `T−1` is uniform, every other
/// position follows `π(·|s_{p(i)})`, and the target follows `π(·|s_{T−1})`.
pub fn generate_into(graph: &CausalGraph, kernel: &TransitionKernel, rng: &mut Rng, tokens: &mut [usize]) -> usize {
    let t = graph.len();
    debug_assert_eq!(tokens.len(), t);
    let s = kernel.size();
    for i in 0..t - 1 {
        tokens[i] = match graph.parent(i) {
            Some(p) => sample_categorical(kernel.row(tokens[p]), rng),
            None => sample_categorical(kernel.stationary(), rng),
        };
    }
    tokens[t - 1] = rng.random_range(0..s);
    sample_categorical(kernel.row(tokens[t - 1]), rng)
}

pub fn generate(graph: &CausalGraph, kernel: &Arc<TransitionKernel>, rng: &mut Rng) -> SequenceSample {
    let mut tokens = vec![0; graph.len()];
    let target = generate_into(graph, kernel, rng, &mut tokens);
    SequenceSample {
        tokens,
        target,
        kernel: KernelRef::Single(kernel.clone()),
    }
}

/// Multi-parent generation: roots uniform, others conditioned on their parent
/// tuple, the target conditioned on the target's parents.
pub fn generate_multi(graph: &MultiParentGraph, kernel: &Arc<MultiKernel>, rng: &mut Rng) -> Result<SequenceSample> {
    if graph.arity() != kernel.arity() {
        return Err(Error::DimensionMismatch(format!(
            "graph arity {} differs from kernel arity {}",
            graph.arity(),
            kernel.arity()
        )));
    }
    let t = graph.seq_len();
    let s = kernel.size();
    let mut all = vec![0usize; t + 1];
    let mut ctx = vec![0usize; graph.arity()];
    for i in 0..=t {
        let ps = graph.parents(i);
        all[i] = if ps.is_empty() {
            rng.random_range(0..s)
        } else {
            for (c, &p) in ctx.iter_mut().zip(ps) {
                *c = all[p];
            }
            sample_categorical(kernel.conditional(&ctx), rng)
        };
    }
    let target = all.pop().unwrap();
    Ok(SequenceSample {
        tokens: all,
        target,
        kernel: KernelRef::Multi(kernel.clone()),
    })
}

/// Sequences together with the kernels that produced them.
#[derive(Clone, Debug, Default)]
pub struct SequenceBatch {
    pub tokens: Vec<Vec<usize>>,
    pub targets: Vec<usize>,
    pub kernel_ids: Vec<usize>,
    pub kernels: Vec<Arc<TransitionKernel>>,
}

#[derive(Serialize, Deserialize)]
struct BatchLine {
    tokens: Vec<usize>,
    target: usize,
    kernel_id: usize,
}

impl SequenceBatch {
    /// `n` sequences with a fresh `π ~ prior` each, or a single pinned kernel.
    pub fn generate(
        graph: &CausalGraph,
        prior: &KernelPrior,
        pinned: Option<&Arc<TransitionKernel>>,
        n: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut batch = SequenceBatch::default();
        if let Some(k) = pinned {
            batch.kernels.push(k.clone());
        }
        for _ in 0..n {
            let id = match pinned {
                Some(_) => 0,
                None => {
                    batch.kernels.push(Arc::new(prior.sample(rng)?));
                    batch.kernels.len() - 1
                }
            };
            let mut tokens = vec![0; graph.len()];
            let target = generate_into(graph, &batch.kernels[id], rng, &mut tokens);
            batch.tokens.push(tokens);
            batch.targets.push(target);
            batch.kernel_ids.push(id);
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn kernel(&self, n: usize) -> &TransitionKernel {
        &self.kernels[self.kernel_ids[n]]
    }

    /// JSON lines, one sequence per line.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for n in 0..self.len() {
            let line = BatchLine {
                tokens: self.tokens[n].clone(),
                target: self.targets[n],
                kernel_id: self.kernel_ids[n],
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Kernels sidecar: a JSON array of kernels indexed by `kernel_id`.
    pub fn write_kernels(&self, out: impl Write) -> Result<()> {
        let ks: Vec<&TransitionKernel> = self.kernels.iter().map(|k| k.as_ref()).collect();
        serde_json::to_writer(out, &ks)?;
        Ok(())
    }

    pub fn read(lines: impl BufRead, kernels: impl std::io::Read) -> Result<Self> {
        let kernels: Vec<TransitionKernel> = serde_json::from_reader(kernels)?;
        let mut batch = SequenceBatch {
            kernels: kernels.into_iter().map(Arc::new).collect(),
            ..Default::default()
        };
        for line in lines.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: BatchLine = serde_json::from_str(&line)?;
            if parsed.kernel_id >= batch.kernels.len() {
                return Err(Error::Format(format!("kernel_id {} has no sidecar entry", parsed.kernel_id)));
            }
            batch.tokens.push(parsed.tokens);
            batch.targets.push(parsed.target);
            batch.kernel_ids.push(parsed.kernel_id);
        }
        Ok(batch)
    }
}

/// One-hot token matrix `X̄` (T×S) and disentangled input `X̃ = [X̄, I_T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedSequence {
    pub x_bar: Matrix,
    pub x_tilde: Matrix,
}

pub fn one_hot_tokens(tokens: &[usize], alphabet: usize) -> Matrix {
    let mut m = Matrix::zeros(tokens.len(), alphabet);
    for (i, &s) in tokens.iter().enumerate() {
        m[(i, s)] = 1.0;
    }
    m
}

/// Rows `x̃_t = [e_{s_t}, e_t]`.
pub fn disentangled_input(tokens: &[usize], alphabet: usize) -> Matrix {
    let t = tokens.len();
    let mut m = Matrix::zeros(t, alphabet + t);
    for (i, &s) in tokens.iter().enumerate() {
        m[(i, s)] = 1.0;
        m[(i, alphabet + i)] = 1.0;
    }
    m
}

pub fn embed(tokens: &[usize], alphabet: usize) -> EmbeddedSequence {
    EmbeddedSequence {
        x_bar: one_hot_tokens(tokens, alphabet),
        x_tilde: disentangled_input(tokens, alphabet),
    }
}

/// `δ_s(X)_i = 1(s_i = s)`.
pub fn token_indicator(tokens: &[usize], s: usize) -> Vec<f64> {
    tokens.iter().map(|&t| if t == s { 1.0 } else { 0.0 }).collect()
}

/// `μ̂_X(s) = (1/T) Σ_i 1(s_i = s)`.
pub fn empirical_freq(tokens: &[usize], alphabet: usize) -> Vec<f64> {
    let mut counts = vec![0usize; alphabet];
    for &t in tokens {
        counts[t] += 1;
    }
    let n = tokens.len() as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

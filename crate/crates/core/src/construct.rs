//! Hand-built disentangled weights that compute the empirical transition of
//! the input sequence, and fidelity measurements against the counting estimator.

use crate::error::{Error, Result};
use crate::graph::{CausalGraph, MultiParentGraph};
use crate::linalg::Matrix;
use crate::markov::{MultiKernel, TransitionKernel};
use crate::reduced::ReducedParams;
use crate::rng::Rng;
use crate::sequence::{generate, generate_multi};
use crate::transformer::{DisentangledParams, OutputMode};
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq)]
pub enum ConstructionGraph {
    Single(CausalGraph),
    Multi(MultiParentGraph),
}

impl ConstructionGraph {
    pub fn arity(&self) -> usize {
        match self {
            ConstructionGraph::Single(_) => 1,
            ConstructionGraph::Multi(g) => g.arity(),
        }
    }

    pub fn seq_len(&self) -> usize {
        match self {
            ConstructionGraph::Single(g) => g.len(),
            ConstructionGraph::Multi(g) => g.seq_len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstructionSpec {
    pub graph: ConstructionGraph,
    pub alphabet: usize,
    pub beta1: f64,
    pub beta2: f64,
}

impl ConstructionSpec {
    pub fn new(graph: ConstructionGraph, alphabet: usize, beta1: f64, beta2: f64) -> Result<Self> {
        if !(beta1 > 0.0 && beta2 > 0.0) || !beta1.is_finite() || !beta2.is_finite() {
            return Err(Error::Construction(format!("β₁, β₂ must be positive and finite, got {beta1}, {beta2}")));
        }
        if alphabet < 2 {
            return Err(Error::Construction("alphabet must have at least two symbols".into()));
        }
        Ok(Self {
            graph,
            alphabet,
            beta1,
            beta2,
        })
    }

    pub fn single(graph: CausalGraph, alphabet: usize, beta: f64) -> Result<Self> {
        Self::new(ConstructionGraph::Single(graph), alphabet, beta, beta)
    }

    pub fn multi(graph: MultiParentGraph, alphabet: usize, beta: f64) -> Result<Self> {
        Self::new(ConstructionGraph::Multi(graph), alphabet, beta, beta)
    }

    pub fn arity(&self) -> usize {
        self.graph.arity()
    }
}

/// Lifts reduced parameters into a one-head, two-layer disentangled model.
///
/// Layer 1 uses the position-position block of `Ã^(1)`; layer 2 compares the
/// token part of `x̃_T` with the token part of the first attention output
/// through `A^(2)ᵀ`; `W̃_O` reads the token part of `x̃` inside the second
/// attention output.
pub fn from_reduced(theta: &ReducedParams) -> DisentangledParams {
    let s = theta.alphabet();
    let t = theta.length();
    let d0 = s + t;
    let mut p = DisentangledParams::zeros(s, t, &[1, 1], s);
    p.layers[0][0].set_block(s, s, &theta.a1);
    p.layers[1][0].set_block(0, d0, &theta.a2.transpose());
    p.w_o.set_block(0, 2 * d0, &Matrix::identity(s));
    p
}

/// `A^(1) = β₁ · adjacency`, `A^(2) = β₂ I` in the disentangled layout.
pub fn build_single_parent(spec: &ConstructionSpec) -> Result<DisentangledParams> {
    let ConstructionGraph::Single(graph) = &spec.graph else {
        return Err(Error::Construction("single-parent construction needs a single-parent graph".into()));
    };
    Ok(from_reduced(&ReducedParams::construction(graph, spec.alphabet, spec.beta1, spec.beta2)))
}

/// `k` first-layer heads: head `ℓ` copies the `ℓ`-th parent into row `i`,
/// and the `ℓ`-th target parent into the last row. Layer 2 puts `β₂ I` on each
/// head's token-token block, and `−(k+1)β₂` on the last row's own position so
/// the query row (whose head outputs were repurposed) does not attend to itself.
pub fn build_multi_parent(spec: &ConstructionSpec) -> Result<DisentangledParams> {
    let graph = match &spec.graph {
        ConstructionGraph::Multi(g) => g.clone(),
        ConstructionGraph::Single(g) => MultiParentGraph::from_single(g),
    };
    let s = spec.alphabet;
    let t = graph.seq_len();
    let k = graph.arity();
    let d0 = s + t;
    let mut p = DisentangledParams::zeros(s, t, &[k, 1], s);
    for l in 0..k {
        let a = &mut p.layers[0][l];
        for i in 0..t {
            let source = if i + 1 == t {
                Some(graph.target_parents()[l])
            } else {
                graph.parents(i).get(l).copied()
            };
            if let Some(j) = source {
                a[(s + i, s + j)] = spec.beta1;
            }
        }
    }
    let a2 = &mut p.layers[1][0];
    for l in 1..=k {
        for x in 0..s {
            a2[(l * d0 + x, l * d0 + x)] = spec.beta2;
        }
    }
    a2[(s + t - 1, s + t - 1)] = -((k + 1) as f64) * spec.beta2;
    p.w_o.set_block(0, (1 + k) * d0, &Matrix::identity(s));
    Ok(p)
}

/// One sequence compared against its counting estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceFidelity {
    /// Number of eligible positions whose parent values match the query context.
    pub matches: usize,
    /// `sup_{s'} |f − π̂|` with the second attention restricted to eligible positions.
    pub error: f64,
    /// `sup_{s'} |f − π̂|` for the raw model output.
    pub error_full: f64,
}

/// Eligible positions: non-roots whose own parents sit in their first-layer row.
fn eligible(graph: &ConstructionGraph) -> Vec<usize> {
    match graph {
        ConstructionGraph::Single(g) => g.non_roots(),
        ConstructionGraph::Multi(g) => g.non_roots().into_iter().filter(|&i| i + 1 < g.seq_len()).collect(),
    }
}

fn parent_tuple<'a>(graph: &'a ConstructionGraph, i: usize, single: &'a mut [usize; 1]) -> &'a [usize] {
    match graph {
        ConstructionGraph::Single(g) => {
            single[0] = g.parent(i).expect("eligible positions have parents");
            &single[..]
        }
        ConstructionGraph::Multi(g) => g.parents(i),
    }
}

/// Query context: the last token (single parent) or the target's parent values.
fn query_context(graph: &ConstructionGraph, tokens: &[usize]) -> Vec<usize> {
    match graph {
        ConstructionGraph::Single(_) => vec![*tokens.last().unwrap()],
        ConstructionGraph::Multi(g) => g.target_parents().iter().map(|&p| tokens[p]).collect(),
    }
}

/// `π̂(·|context)` over eligible positions, with the number of matches.
pub fn counting_estimate(graph: &ConstructionGraph, tokens: &[usize], alphabet: usize) -> (Option<Vec<f64>>, usize) {
    let ctx = query_context(graph, tokens);
    let mut counts = vec![0.0; alphabet];
    let mut matches = 0;
    let mut buf = [0usize; 1];
    for i in eligible(graph) {
        let ps = parent_tuple(graph, i, &mut buf);
        if ps.iter().zip(&ctx).all(|(&p, &c)| tokens[p] == c) {
            counts[tokens[i]] += 1.0;
            matches += 1;
        }
    }
    if matches == 0 {
        return (None, 0);
    }
    let n = matches as f64;
    (Some(counts.into_iter().map(|c| c / n).collect()), matches)
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Compares the model on one sequence; `None` when `π̂` is undefined.
pub fn sequence_fidelity(
    params: &DisentangledParams,
    graph: &ConstructionGraph,
    tokens: &[usize],
) -> Result<Option<SequenceFidelity>> {
    let s = params.alphabet;
    let (pi_hat, matches) = counting_estimate(graph, tokens, s);
    let Some(pi_hat) = pi_hat else {
        return Ok(None);
    };
    let (out, trace) = params.forward(tokens, OutputMode::LastToken)?;
    let t = tokens.len();
    let v = trace.patterns[1][0].row(t - 1);
    let keep = eligible(graph);
    let mass: f64 = keep.iter().map(|&i| v[i]).sum();
    let mut restricted = vec![0.0; s];
    for &i in &keep {
        restricted[tokens[i]] += v[i] / mass;
    }
    Ok(Some(SequenceFidelity {
        matches,
        error: sup_diff(&restricted, &pi_hat),
        error_full: sup_diff(out.row(0), &pi_hat),
    }))
}

/// Kernel driving the fidelity sequences.
#[derive(Clone, Debug)]
pub enum FidelityKernel {
    Single(Arc<TransitionKernel>),
    Multi(Arc<MultiKernel>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FidelityRow {
    pub beta: f64,
    pub mean_err: f64,
    pub max_err: f64,
    pub n_defined: usize,
    pub mean_err_full: f64,
    pub max_err_full: f64,
}

/// Draws `n_sequences` once and evaluates the construction at every `β₁ = β₂ = β`
/// in `betas`, over sequences with at least `min_matches` matching positions.
pub fn fidelity_report(
    graph: &ConstructionGraph,
    kernel: &FidelityKernel,
    n_sequences: usize,
    betas: &[f64],
    min_matches: usize,
    rng: &mut Rng,
) -> Result<Vec<FidelityRow>> {
    let (alphabet, sequences) = match (graph, kernel) {
        (ConstructionGraph::Single(g), FidelityKernel::Single(k)) => {
            (k.size(), (0..n_sequences).map(|_| generate(g, k, rng).tokens).collect::<Vec<_>>())
        }
        (ConstructionGraph::Multi(g), FidelityKernel::Multi(k)) => (
            k.size(),
            (0..n_sequences)
                .map(|_| generate_multi(g, k, rng).map(|x| x.tokens))
                .collect::<Result<Vec<_>>>()?,
        ),
        _ => return Err(Error::Construction("graph and kernel arities differ".into())),
    };
    betas
        .iter()
        .map(|&beta| {
            let spec = ConstructionSpec::new(graph.clone(), alphabet, beta, beta)?;
            let params = match graph {
                ConstructionGraph::Single(_) => build_single_parent(&spec)?,
                ConstructionGraph::Multi(_) => build_multi_parent(&spec)?,
            };
            let results = sequences
                .par_iter()
                .map(|x| sequence_fidelity(&params, graph, x))
                .collect::<Result<Vec<_>>>()?;
            let kept: Vec<SequenceFidelity> = results.into_iter().flatten().filter(|r| r.matches >= min_matches).collect();
            let n = kept.len();
            let mean = |f: fn(&SequenceFidelity) -> f64| {
                if n == 0 {
                    f64::NAN
                } else {
                    kept.iter().map(f).sum::<f64>() / n as f64
                }
            };
            let max = |f: fn(&SequenceFidelity) -> f64| kept.iter().map(f).fold(0.0, f64::max);
            Ok(FidelityRow {
                beta,
                mean_err: mean(|r| r.error),
                max_err: max(|r| r.error),
                n_defined: n,
                mean_err_full: mean(|r| r.error_full),
                max_err_full: max(|r| r.error_full),
            })
        })
        .collect()
}

pub fn write_fidelity_csv(rows: &[FidelityRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["beta", "mean_err", "max_err", "n_defined", "mean_err_full", "max_err_full"])
        .map_err(fmt)?;
    for r in rows {
        w.write_record([
            r.beta.to_string(),
            format!("{:e}", r.mean_err),
            format!("{:e}", r.max_err),
            r.n_defined.to_string(),
            format!("{:e}", r.mean_err_full),
            format!("{:e}", r.max_err_full),
        ])
        .map_err(fmt)?;
    }
    w.flush()?;
    Ok(())
}

/// Default `β` schedule for fidelity tables.
pub const DEFAULT_BETAS: [f64; 4] = [1.0, 5.0, 20.0, 50.0];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::empirical_freq;

    #[test]
    fn single_parent_blocks() {
        let g = CausalGraph::figure_one();
        let spec = ConstructionSpec::single(g.clone(), 3, 7.0).unwrap();
        let p = build_single_parent(&spec).unwrap();
        let (s, t) = (3, 6);
        let d0 = s + t;
        let mut nonzero = 0;
        for (pp, i) in g.edges() {
            assert_eq!(p.layers[0][0][(s + i, s + pp)], 7.0);
            nonzero += 1;
        }
        assert_eq!(p.layers[0][0].as_slice().iter().filter(|&&x| x != 0.0).count(), nonzero);
        for x in 0..s {
            assert_eq!(p.layers[1][0][(x, d0 + x)], 7.0);
            assert_eq!(p.w_o[(x, 2 * d0 + x)], 1.0);
        }
        assert_eq!(p.layers[1][0].as_slice().iter().filter(|&&x| x != 0.0).count(), s);
        assert_eq!(p.w_o.as_slice().iter().filter(|&&x| x != 0.0).count(), s);
    }

    #[test]
    fn zero_second_layer_averages_tokens() {
        let g = CausalGraph::chain(6).unwrap();
        let p = from_reduced(&ReducedParams::construction(&g, 3, 5.0, 0.0));
        let tokens = [0, 2, 2, 1, 0, 2];
        let (out, _) = p.forward(&tokens, OutputMode::LastToken).unwrap();
        let freq = empirical_freq(&tokens, 3);
        assert!(sup_diff(out.row(0), &freq) < 1e-15);
    }

    #[test]
    fn counting_estimate_on_chain() {
        let g = ConstructionGraph::Single(CausalGraph::chain(6).unwrap());
        // edges 0→1 … 3→4; query token is the last one (1)
        let (p, m) = counting_estimate(&g, &[1, 0, 1, 1, 0, 1], 2);
        assert_eq!(m, 3);
        let p = p.unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
    }
}

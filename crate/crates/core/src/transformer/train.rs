//! Cross-entropy training of the full two-layer, one-head-per-layer
//! disentangled transformer on next-token prediction at the last position.

use super::disentangled::{DisentangledGrads, DisentangledParams, OutputMode};
use crate::error::{Error, Result};
use crate::graph::CausalGraph;
use crate::linalg::{softmax, softmax_in_place, Matrix};
use crate::markov::KernelPrior;
use crate::reduced::{avg_attn, edge_weights, Stage, StepRecord, TrainTrajectory};
use crate::rng::Rng;
use crate::sequence::generate_into;
use crate::transformer::causal_softmax;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const CHUNK: usize = 128;

/// `−log softmax(f)_{target}` and its reverse-mode gradients through the
/// generic forward/backward.
pub fn last_token_ce(params: &DisentangledParams, tokens: &[usize], target: usize) -> Result<(f64, DisentangledGrads)> {
    let (out, trace) = params.forward(tokens, OutputMode::LastToken)?;
    let p = softmax(out.row(0));
    let mut g = Matrix::from_vec(1, p.len(), p.clone());
    g[(0, target)] -= 1.0;
    let grads = params.backward(&trace, &g)?;
    Ok((-p[target].ln(), grads))
}

fn check_shape(params: &DisentangledParams) -> Result<()> {
    params.validate()?;
    if params.heads() != [1, 1] || params.output_dim() != params.alphabet {
        return Err(Error::DimensionMismatch(
            "the specialised trainer needs one head in each of two layers and an S-dimensional output".into(),
        ));
    }
    Ok(())
}

/// Gradient buffers laid out like [`DisentangledParams`] for the `[1, 1]` case.
#[derive(Clone, Debug)]
struct Accum {
    loss: f64,
    a1: Matrix,
    a2: Matrix,
    w_o: Matrix,
}

impl Accum {
    fn zeros(p: &DisentangledParams) -> Self {
        Self {
            loss: 0.0,
            a1: Matrix::zeros(p.layers[0][0].rows(), p.layers[0][0].cols()),
            a2: Matrix::zeros(p.layers[1][0].rows(), p.layers[1][0].cols()),
            w_o: Matrix::zeros(p.w_o.rows(), p.w_o.cols()),
        }
    }

    fn add(&mut self, other: &Accum) {
        self.loss += other.loss;
        self.a1.add_mut(&other.a1);
        self.a2.add_mut(&other.a2);
        self.w_o.add_mut(&other.w_o);
    }
}

/// One sequence, accumulated with `weight` into `acc`. Exploits the one-hot
/// input and the fact that only the last row of layer 2 reaches the loss.
fn accumulate(p: &DisentangledParams, tokens: &[usize], target: usize, weight: f64, acc: &mut Accum) {
    let s = p.alphabet;
    let t = tokens.len();
    let d0 = s + t;
    let d1 = 2 * d0;
    let a1 = &p.layers[0][0];
    let a2 = &p.layers[1][0];
    let q = t - 1;

    // layer 1
    let mut pat = Matrix::zeros(t, t);
    for i in 0..t {
        let (si, pi) = (tokens[i], s + i);
        let row = pat.row_mut(i);
        for j in 0..=i {
            let (sj, pj) = (tokens[j], s + j);
            row[j] = a1[(si, sj)] + a1[(si, pj)] + a1[(pi, sj)] + a1[(pi, pj)];
        }
        softmax_in_place(&mut row[..=i]);
    }
    // h1 rows: [e_{s_i}, e_i, H_i, P_i]
    let mut h1 = Matrix::zeros(t, d1);
    for i in 0..t {
        let row = h1.row_mut(i);
        row[tokens[i]] = 1.0;
        row[s + i] = 1.0;
        for j in 0..=i {
            let w = pat[(i, j)];
            row[d0 + tokens[j]] += w;
            row[d0 + s + j] = w;
        }
    }

    // layer 2, last row only
    let r = a2.vec_mat(h1.row(q));
    let mut v: Vec<f64> = (0..t).map(|j| crate::linalg::dot(&r, h1.row(j))).collect();
    softmax_in_place(&mut v);
    let mut h2 = h1.row(q).to_vec();
    h2.resize(2 * d1, 0.0);
    for j in 0..t {
        let hj = h1.row(j);
        for (x, y) in h2[d1..].iter_mut().zip(hj) {
            *x += v[j] * y;
        }
    }
    let mut logits = p.w_o.mat_vec(&h2);
    softmax_in_place(&mut logits);
    acc.loss += -weight * logits[target].max(f64::MIN_POSITIVE).ln();
    let mut g = logits;
    g[target] -= 1.0;
    g.iter_mut().for_each(|x| *x *= weight);

    for (c, &gc) in g.iter().enumerate() {
        let row = acc.w_o.row_mut(c);
        for (x, y) in row.iter_mut().zip(&h2) {
            *x += gc * y;
        }
    }
    let dh2 = p.w_o.vec_mat(&g);
    let du = &dh2[d1..];
    let mut dh1 = Matrix::zeros(t, d1);
    dh1.row_mut(q).copy_from_slice(&dh2[..d1]);
    let dv: Vec<f64> = (0..t).map(|j| crate::linalg::dot(du, h1.row(j))).collect();
    let vdv: f64 = v.iter().zip(&dv).map(|(a, b)| a * b).sum();
    let dz: Vec<f64> = v.iter().zip(&dv).map(|(a, b)| a * (b - vdv)).collect();
    let mut c = vec![0.0; d1];
    for j in 0..t {
        let hj = h1.row(j);
        let row = dh1.row_mut(j);
        for k in 0..d1 {
            c[k] += dz[j] * hj[k];
            row[k] += v[j] * du[k] + dz[j] * r[k];
        }
    }
    let hq = h1.row(q);
    for (a, &ha) in hq.iter().enumerate() {
        if ha == 0.0 {
            continue;
        }
        let row = acc.a2.row_mut(a);
        for (x, y) in row.iter_mut().zip(&c) {
            *x += ha * y;
        }
    }
    let a2c = a2.mat_vec(&c);
    for (x, y) in dh1.row_mut(q).iter_mut().zip(&a2c) {
        *x += y;
    }

    // back through layer 1: only the attention outputs depend on A1
    for i in 0..t {
        let d_o = &dh1.row(i)[d0..];
        let prow = &pat.row(i)[..=i];
        let dp: Vec<f64> = (0..=i).map(|j| d_o[tokens[j]] + d_o[s + j]).collect();
        let pdp: f64 = prow.iter().zip(&dp).map(|(a, b)| a * b).sum();
        let (si, pi) = (tokens[i], s + i);
        for j in 0..=i {
            let dzij = prow[j] * (dp[j] - pdp);
            let (sj, pj) = (tokens[j], s + j);
            acc.a1[(si, sj)] += dzij;
            acc.a1[(si, pj)] += dzij;
            acc.a1[(pi, sj)] += dzij;
            acc.a1[(pi, pj)] += dzij;
        }
    }
}

/// Mean cross-entropy over a batch and its gradients for a `[1, 1]` model.
///
/// Agrees with averaging [`last_token_ce`] over the batch; chunks are reduced
/// in a fixed order so the result does not depend on the thread count.
pub fn batch_ce_grads(params: &DisentangledParams, tokens: &[usize], targets: &[usize]) -> Result<(f64, DisentangledGrads)> {
    check_shape(params)?;
    let t = params.length;
    let n = targets.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if tokens.len() != n * t {
        return Err(Error::DimensionMismatch("token buffer is not n × T".into()));
    }
    let w = 1.0 / n as f64;
    let parts: Vec<Accum> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Accum::zeros(params);
            for b in c * CHUNK..((c + 1) * CHUNK).min(n) {
                accumulate(params, &tokens[b * t..(b + 1) * t], targets[b], w, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = Accum::zeros(params);
    for p in &parts {
        total.add(p);
    }
    if !total.loss.is_finite() {
        return Err(Error::NonFinite(format!("batch loss is {}", total.loss)));
    }
    Ok((
        total.loss,
        DisentangledGrads {
            layers: vec![vec![total.a1], vec![total.a2]],
            w_o: total.w_o,
        },
    ))
}

/// The position-position block of `Ã^(1)`.
pub fn position_block(params: &DisentangledParams) -> Matrix {
    let (s, t) = (params.alphabet, params.length);
    params.layers[0][0].block(s, s, t, t)
}

/// `S(MASK(A^(1)))` read from the position-position block.
pub fn position_pattern(params: &DisentangledParams) -> Matrix {
    causal_softmax(&position_block(params))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    /// Record a trajectory row every `log_every` steps (and at the end).
    pub log_every: usize,
}

/// Defaults: batch 1024 with a truncated cosine schedule; the rate is raised
/// from 0.3 to 3 to compensate for running 8192 steps instead of `2^17`.
impl Default for JointConfig {
    fn default() -> Self {
        Self {
            lr: 3.0,
            steps: 8192,
            batch: 1024,
            log_every: 64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct JointRun {
    pub params: DisentangledParams,
    pub trajectory: TrainTrajectory,
    pub failure: Option<String>,
}

fn joint_record(step: usize, stage: Stage, params: &DisentangledParams, graph: &CausalGraph, loss: f64) -> StepRecord {
    let pat = position_pattern(params);
    let edges = edge_weights(&pat, graph);
    let s = params.alphabet;
    let d0 = s + params.length;
    let comparator = params.layers[1][0].block(0, d0, s, s);
    let sf = s as f64;
    StepRecord {
        step,
        stage,
        loss,
        loss_gap: f64::NAN,
        loss_gap_plain: f64::NAN,
        beta: (comparator.trace() - comparator.sum() / sf) / (sf - 1.0),
        avg_attn: avg_attn(&pat, graph),
        min_edge_softmax: edges.iter().copied().fold(f64::INFINITY, f64::min),
        edge_softmax: edges,
    }
}

/// Plain gradient descent with cosine decay from all-zero weights, fresh
/// sequences (and kernels) every step.
pub fn train_disentangled_joint(
    graph: &CausalGraph,
    prior: &KernelPrior,
    cfg: &JointConfig,
    rng: &mut Rng,
) -> Result<JointRun> {
    if !(cfg.lr > 0.0) || cfg.batch == 0 || cfg.log_every == 0 {
        return Err(Error::Config("joint training needs lr > 0, batch > 0, log_every > 0".into()));
    }
    let s = prior.size();
    let t = graph.len();
    let mut params = DisentangledParams::zeros(s, t, &[1, 1], s);
    let mut traj = TrainTrajectory::default();
    let mut tokens = vec![0usize; cfg.batch * t];
    let mut targets = vec![0usize; cfg.batch];
    let mut failure = None;
    let mut last_loss = f64::NAN;
    for step in 0..cfg.steps {
        for b in 0..cfg.batch {
            let kernel = prior.sample(rng)?;
            targets[b] = generate_into(graph, &kernel, rng, &mut tokens[b * t..(b + 1) * t]);
        }
        let (loss, grads) = match batch_ce_grads(&params, &tokens, &targets) {
            Ok(x) => x,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        last_loss = loss;
        if step % cfg.log_every == 0 {
            traj.records.push(joint_record(step, Stage::Joint, &params, graph, loss));
        }
        let rate = crate::reduced::cosine_rate(cfg.lr, step, cfg.steps);
        params.layers[0][0].axpy(-rate, &grads.layers[0][0]);
        params.layers[1][0].axpy(-rate, &grads.layers[1][0]);
        params.w_o.axpy(-rate, &grads.w_o);
    }
    traj.records.push(joint_record(cfg.steps, Stage::Final, &params, graph, last_loss));
    Ok(JointRun {
        params,
        trajectory: traj,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng as _;

    #[test]
    fn fast_path_matches_generic_backward() {
        let mut rng = seeded(3);
        let (s, t) = (3, 6);
        let p = DisentangledParams::random(s, t, &[1, 1], s, 0.5, &mut rng);
        let n = 5;
        let tokens: Vec<usize> = (0..n * t).map(|_| rng.random_range(0..s)).collect();
        let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..s)).collect();
        let (loss, fast) = batch_ce_grads(&p, &tokens, &targets).unwrap();
        let mut want_loss = 0.0;
        let mut want = DisentangledParams::zeros(s, t, &[1, 1], s);
        for b in 0..n {
            let (l, g) = last_token_ce(&p, &tokens[b * t..(b + 1) * t], targets[b]).unwrap();
            want_loss += l / n as f64;
            want.layers[0][0].axpy(1.0 / n as f64, &g.layers[0][0]);
            want.layers[1][0].axpy(1.0 / n as f64, &g.layers[1][0]);
            want.w_o.axpy(1.0 / n as f64, &g.w_o);
        }
        assert!((loss - want_loss).abs() < 1e-12);
        assert!(fast.layers[0][0].max_abs_diff(&want.layers[0][0]) < 1e-12);
        assert!(fast.layers[1][0].max_abs_diff(&want.layers[1][0]) < 1e-12);
        assert!(fast.w_o.max_abs_diff(&want.w_o) < 1e-12);
    }
}

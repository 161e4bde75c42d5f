//! Stage-wise gradient descent (stage 1 trains `A^(1)`, stage 2 trains `A^(2)`)
//! and a joint variant that trains both at once.

use super::model::{avg_attn, edge_weights, ReducedParams};
use super::population::{evaluate, Estimator, Grads, WeightedSet};
use crate::error::{Error, Result};
use crate::graph::CausalGraph;
use crate::markov::KernelPrior;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub beta0: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub tau1: usize,
    pub tau2: usize,
    pub epsilon: f64,
    pub estimator: Estimator,
    /// Stop stage 1 once every edge softmax reaches `1 − 1/T`.
    pub early_stop: bool,
    /// Draw a fresh Monte-Carlo set every step (otherwise one set for the whole run).
    pub resample_each_step: bool,
}

impl TrainConfig {
    /// Defaults scaled to the graph: `β₀ = 0.01 T_eff^{−3/2}`, `ε = T_eff^{−1/2}`,
    /// `η₁ = c S T² / β₀` with `c` chosen for a few hundred stage-1 steps,
    /// and `τ₂` long enough for `β` to reach about `log(T_eff)/4` at `η₂ = 1`.
    pub fn defaults(graph: &CausalGraph, alphabet: usize) -> Self {
        let t = graph.len() as f64;
        let t_eff = graph.stats().t_eff;
        let beta0 = 0.01 * t_eff.powf(-1.5);
        Self {
            beta0,
            eta1: 0.08 * alphabet as f64 * t * t / beta0,
            eta2: 1.0,
            tau1: 500,
            tau2: 200,
            epsilon: 1.0 / t_eff.sqrt(),
            estimator: Estimator::auto(alphabet, graph.len(), 200, 4096),
            early_stop: true,
            resample_each_step: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.eta1, self.eta2, self.epsilon];
        if positive.iter().any(|&x| !(x > 0.0) || !x.is_finite()) || !(self.beta0 >= 0.0) {
            return Err(Error::Config("learning rates and ε must be positive, β₀ nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "joint")]
    Joint,
    #[serde(rename = "final")]
    Final,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::One => "1",
            Stage::Two => "2",
            Stage::Joint => "joint",
            Stage::Final => "final",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub stage: Stage,
    pub loss: f64,
    /// `L(θ) − L*_ε` on the same sequences.
    pub loss_gap: f64,
    /// `L(θ) − L*` on the same sequences.
    pub loss_gap_plain: f64,
    pub beta: f64,
    pub avg_attn: f64,
    pub min_edge_softmax: f64,
    pub edge_softmax: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainTrajectory {
    pub records: Vec<StepRecord>,
    pub stage1_steps: usize,
}

impl TrainTrajectory {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "stage", "loss", "loss_gap", "beta", "avg_attn", "min_edge_softmax"])
            .map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.stage.to_string(),
                format!("{:e}", r.loss),
                format!("{:e}", r.loss_gap),
                format!("{:e}", r.beta),
                format!("{:e}", r.avg_attn),
                format!("{:e}", r.min_edge_softmax),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn stage(&self, stage: Stage) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Outcome of a run; `failure` is set when training stopped on a non-finite loss.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub params: ReducedParams,
    pub trajectory: TrainTrajectory,
    pub failure: Option<String>,
}

fn record(
    step: usize,
    stage: Stage,
    theta: &ReducedParams,
    graph: &CausalGraph,
    loss: f64,
    set: &WeightedSet,
    epsilon: f64,
) -> StepRecord {
    let (plain, perturbed) = set.optimal_losses(epsilon);
    let p = theta.first_layer();
    let edges = edge_weights(&p, graph);
    StepRecord {
        step,
        stage,
        loss,
        loss_gap: loss - perturbed,
        loss_gap_plain: loss - plain,
        beta: theta.beta(),
        avg_attn: avg_attn(&p, graph),
        min_edge_softmax: edges.iter().copied().fold(f64::INFINITY, f64::min),
        edge_softmax: edges,
    }
}

struct Sampler<'a> {
    graph: &'a CausalGraph,
    prior: &'a KernelPrior,
    estimator: Estimator,
    fixed: Option<WeightedSet>,
    resample: bool,
}

impl Sampler<'_> {
    fn next(&mut self, rng: &mut Rng) -> Result<WeightedSet> {
        let exact = matches!(self.estimator, Estimator::ExactEnumeration { .. });
        if exact || !self.resample {
            if self.fixed.is_none() {
                self.fixed = Some(self.estimator.draw(self.graph, self.prior, rng)?);
            }
            return Ok(self.fixed.clone().unwrap());
        }
        self.estimator.draw(self.graph, self.prior, rng)
    }
}

/// Stage-wise training from `A^(1) = 0`, `A^(2) = β₀ I`.
pub fn run_algorithm1(graph: &CausalGraph, prior: &KernelPrior, cfg: &TrainConfig, rng: &mut Rng) -> Result<TrainRun> {
    cfg.validate()?;
    let s = prior.size();
    let t = graph.len();
    let mut theta = ReducedParams::init(s, t, cfg.beta0);
    let mut traj = TrainTrajectory::default();
    let mut sampler = Sampler {
        graph,
        prior,
        estimator: cfg.estimator,
        fixed: None,
        resample: cfg.resample_each_step,
    };
    let threshold = 1.0 - 1.0 / t as f64;
    let mut step = 0;
    let mut failure = None;

    for _ in 0..cfg.tau1 {
        let set = sampler.next(rng)?;
        let eval = match evaluate(&theta, &set, cfg.epsilon, Grads::A1) {
            Ok(e) => e,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let rec = record(step, Stage::One, &theta, graph, eval.loss, &set, cfg.epsilon);
        let done = cfg.early_stop && rec.min_edge_softmax >= threshold;
        traj.records.push(rec);
        if done {
            break;
        }
        theta.a1.axpy(-cfg.eta1, eval.grad_a1.as_ref().unwrap());
        step += 1;
    }
    traj.stage1_steps = step;

    if failure.is_none() {
        for _ in 0..cfg.tau2 {
            let set = sampler.next(rng)?;
            let eval = match evaluate(&theta, &set, cfg.epsilon, Grads::A2) {
                Ok(e) => e,
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            };
            traj.records.push(record(step, Stage::Two, &theta, graph, eval.loss, &set, cfg.epsilon));
            theta.a2.axpy(-cfg.eta2, eval.grad_a2.as_ref().unwrap());
            step += 1;
        }
    }
    if failure.is_none() {
        let set = sampler.next(rng)?;
        match evaluate(&theta, &set, cfg.epsilon, Grads::None) {
            Ok(e) => traj.records.push(record(step, Stage::Final, &theta, graph, e.loss, &set, cfg.epsilon)),
            Err(e) => failure = Some(e.to_string()),
        }
    }
    Ok(TrainRun {
        params: theta,
        trajectory: traj,
        failure,
    })
}

/// [`run_algorithm1`], turning a non-finite loss into an error.
pub fn train_algorithm1(
    graph: &CausalGraph,
    prior: &KernelPrior,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(ReducedParams, TrainTrajectory)> {
    let run = run_algorithm1(graph, prior, cfg, rng)?;
    match run.failure {
        Some(msg) => Err(Error::NonFinite(msg)),
        None => Ok((run.params, run.trajectory)),
    }
}

/// Plain gradient descent on both matrices at once with a cosine-decayed rate.
pub fn run_joint(
    graph: &CausalGraph,
    prior: &KernelPrior,
    init: ReducedParams,
    lr: f64,
    steps: usize,
    epsilon: f64,
    estimator: Estimator,
    rng: &mut Rng,
) -> Result<TrainRun> {
    let mut theta = init;
    let mut traj = TrainTrajectory::default();
    let mut sampler = Sampler {
        graph,
        prior,
        estimator,
        fixed: None,
        resample: true,
    };
    let mut failure = None;
    for step in 0..steps {
        let set = sampler.next(rng)?;
        let eval = match evaluate(&theta, &set, epsilon, Grads::Both) {
            Ok(e) => e,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        traj.records.push(record(step, Stage::Joint, &theta, graph, eval.loss, &set, epsilon));
        let rate = cosine_rate(lr, step, steps);
        theta.a1.axpy(-rate, eval.grad_a1.as_ref().unwrap());
        theta.a2.axpy(-rate, eval.grad_a2.as_ref().unwrap());
    }
    Ok(TrainRun {
        params: theta,
        trajectory: traj,
        failure,
    })
}

/// `lr · ½(1 + cos(π t / n))`.
pub fn cosine_rate(lr: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr;
    }
    0.5 * lr * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_rate(0.3, 0, 10), 0.3);
        assert!(cosine_rate(0.3, 10, 10).abs() < 1e-15);
        assert!((cosine_rate(0.3, 5, 10) - 0.15).abs() < 1e-15);
    }

    #[test]
    fn csv_header() {
        let mut buf = Vec::new();
        TrainTrajectory::default().write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,stage,loss,loss_gap,beta,avg_attn,min_edge_softmax\n");
    }
}

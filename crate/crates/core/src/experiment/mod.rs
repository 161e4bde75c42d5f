//! End-to-end runs behind the command-line tool: training, out-of-distribution
//! evaluation, graph recovery, constructions, the random-graph sweep, and the
//! named verification suites.

pub mod config;
pub mod heatmap;
pub mod verify;

use crate::construct::{
    build_multi_parent, build_single_parent, fidelity_report, write_fidelity_csv, ConstructionGraph, ConstructionSpec,
    FidelityKernel, FidelityRow,
};
use crate::error::{Error, Result};
use crate::graph::CausalGraph;
use crate::linalg::{softmax, Matrix};
use crate::markov::MultiKernel;
use crate::oracle::{idealized_g_from, oracle_from_prior, prior_chi2_mi, OracleDecision};
use crate::reduced::{avg_attn, edge_weights, run_algorithm1, run_joint, ReducedParams, TrainTrajectory};
use crate::rng::stream;
use crate::sequence::{empirical_freq, generate};
use crate::transformer::{
    load, position_block, position_pattern, save, train_disentangled_joint, DisentangledParams, OutputMode,
};
use config::{streams, ExperimentConfig, Mode};
use heatmap::save_pgm;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

/// How a checkpoint's output row becomes a distribution over tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputHead {
    /// The output already is a convex combination of one-hots.
    Identity,
    /// Softmax of the linear read-out (trained disentangled models).
    Softmax,
}

impl OutputHead {
    pub fn apply(self, row: &[f64]) -> Vec<f64> {
        match self {
            OutputHead::Identity => row.to_vec(),
            OutputHead::Softmax => softmax(row),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: Mode,
    pub graph: String,
    pub alphabet: usize,
    pub avg_attn: f64,
    /// Standard deviation of the per-edge weights.
    pub avg_attn_std: f64,
    pub edge_weights: Vec<f64>,
    pub min_edge_softmax: f64,
    pub final_loss: f64,
    /// Against `L*_ε` (reduced modes only).
    pub loss_gap: Option<f64>,
    pub beta: f64,
    pub stage1_steps: Option<usize>,
    pub output_head: OutputHead,
    pub ood: Option<OodReport>,
    pub runtime_secs: f64,
    pub failure: Option<String>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn prepare(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentConfig> {
    std::fs::create_dir_all(out)?;
    let resolved = cfg.resolved()?;
    std::fs::write(out.join("config.toml"), resolved.to_toml()?)?;
    Ok(resolved)
}

fn write_trajectory(traj: &TrainTrajectory, out: &Path) -> Result<()> {
    let f = std::fs::File::create(out.join("trajectory.csv"))?;
    traj.write_csv(std::io::BufWriter::new(f))
}

/// Trained parameters in one of the supported families.
pub enum TrainedModel {
    Reduced(ReducedParams),
    Disentangled(DisentangledParams),
}

impl TrainedModel {
    pub fn checkpoint(&self) -> DisentangledParams {
        match self {
            TrainedModel::Reduced(p) => crate::construct::from_reduced(p),
            TrainedModel::Disentangled(p) => p.clone(),
        }
    }

    pub fn head(&self) -> OutputHead {
        match self {
            TrainedModel::Reduced(_) => OutputHead::Identity,
            TrainedModel::Disentangled(_) => OutputHead::Softmax,
        }
    }

    /// `(S(MASK(A^(1))), raw A^(1))` over positions.
    pub fn first_layer(&self) -> (Matrix, Matrix) {
        match self {
            TrainedModel::Reduced(p) => (p.first_layer(), p.a1.clone()),
            TrainedModel::Disentangled(p) => (position_pattern(p), position_block(p)),
        }
    }
}

/// Trains according to `cfg.mode` and writes `config.toml`, `trajectory.csv`,
/// `metrics.json`, `checkpoint.bin` and the `attn_softmax.pgm` / `attn_raw.pgm`
/// heatmaps into `out`. A non-finite loss still writes everything and sets `failure`.
pub fn run_train(cfg: &ExperimentConfig, out: &Path) -> Result<(MetricsReport, TrainedModel)> {
    let cfg = prepare(cfg, out)?;
    let start = Instant::now();
    let graph = cfg.graph.build(cfg.seed)?;
    let prior = cfg.prior.build()?;
    let s = prior.size();
    let mut rng = stream(cfg.seed, streams::TRAIN);
    let staged = cfg.train.staged(&graph, s);
    let (model, traj, failure, stage1) = match cfg.mode {
        Mode::ReducedStaged => {
            let run = run_algorithm1(&graph, &prior, &staged, &mut rng)?;
            let stage1 = run.trajectory.stage1_steps;
            (TrainedModel::Reduced(run.params), run.trajectory, run.failure, Some(stage1))
        }
        Mode::ReducedJoint => {
            let joint = cfg.train.joint();
            let init = ReducedParams::init(s, graph.len(), cfg.train.beta0.unwrap_or(0.0));
            let run = run_joint(&graph, &prior, init, joint.lr, joint.steps, staged.epsilon, staged.estimator, &mut rng)?;
            (TrainedModel::Reduced(run.params), run.trajectory, run.failure, None)
        }
        Mode::DisentangledJoint => {
            let run = train_disentangled_joint(&graph, &prior, &cfg.train.joint(), &mut rng)?;
            (TrainedModel::Disentangled(run.params), run.trajectory, run.failure, None)
        }
    };
    write_trajectory(&traj, out)?;
    save(&model.checkpoint(), &out.join("checkpoint.bin"))?;
    if let TrainedModel::Reduced(p) = &model {
        write_json(p, &out.join("reduced.json"))?;
    }
    let (pattern, raw) = model.first_layer();
    save_pgm(&pattern, &out.join("attn_softmax.pgm"))?;
    save_pgm(&raw, &out.join("attn_raw.pgm"))?;

    let edges = edge_weights(&pattern, &graph);
    let (_, std) = mean_std(&edges);
    let last = traj.last();
    let report = MetricsReport {
        mode: cfg.mode,
        graph: graph.to_json(),
        alphabet: s,
        avg_attn: avg_attn(&pattern, &graph),
        avg_attn_std: std,
        min_edge_softmax: edges.iter().copied().fold(f64::INFINITY, f64::min),
        edge_weights: edges,
        final_loss: last.map_or(f64::NAN, |r| r.loss),
        loss_gap: last.map(|r| r.loss_gap).filter(|g| g.is_finite()),
        beta: last.map_or(f64::NAN, |r| r.beta),
        stage1_steps: stage1,
        output_head: model.head(),
        ood: None,
        runtime_secs: start.elapsed().as_secs_f64(),
        failure,
    };
    write_json(&report, &out.join("metrics.json"))?;
    Ok((report, model))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorQuantiles {
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl ErrorQuantiles {
    pub fn from_samples(mut xs: Vec<f64>) -> Self {
        xs.sort_by(|a, b| a.total_cmp(b));
        let q = |p: f64| {
            if xs.is_empty() {
                return f64::NAN;
            }
            let idx = ((xs.len() as f64 - 1.0) * p).round() as usize;
            xs[idx]
        };
        Self {
            mean: xs.iter().sum::<f64>() / xs.len().max(1) as f64,
            p50: q(0.5),
            p90: q(0.9),
            p99: q(0.99),
            max: xs.last().copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub n_sequences: usize,
    /// `sup_{s'} |f(s_{1:T})_{s'} − π̃(s'|s_T)|`.
    pub model: ErrorQuantiles,
    /// Same statistic for the token-frequency predictor `μ̂_X` (the θ = 0 output).
    pub baseline: ErrorQuantiles,
    pub kernel_rows: Vec<Vec<f64>>,
}

/// Draws sequences under a fixed kernel and scores the checkpoint against `π̃(·|s_T)`.
pub fn evaluate_ood(
    params: &DisentangledParams,
    head: OutputHead,
    graph: &CausalGraph,
    kernel: &Arc<crate::markov::TransitionKernel>,
    n_sequences: usize,
    rng: &mut crate::rng::Rng,
) -> Result<OodReport> {
    if graph.len() != params.length || kernel.size() != params.alphabet {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint is S={}, T={}; OOD setup is S={}, T={}",
            params.alphabet,
            params.length,
            kernel.size(),
            graph.len()
        )));
    }
    let mut model = Vec::with_capacity(n_sequences);
    let mut base = Vec::with_capacity(n_sequences);
    for _ in 0..n_sequences {
        let x = generate(graph, kernel, rng);
        let s_t = *x.tokens.last().unwrap();
        let (out, _) = params.forward(&x.tokens, OutputMode::LastToken)?;
        let f = head.apply(out.row(0));
        let target = kernel.row(s_t);
        let sup = |p: &[f64]| p.iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        model.push(sup(&f));
        base.push(sup(&empirical_freq(&x.tokens, kernel.size())));
    }
    Ok(OodReport {
        n_sequences,
        model: ErrorQuantiles::from_samples(model),
        baseline: ErrorQuantiles::from_samples(base),
        kernel_rows: kernel.matrix().to_rows(),
    })
}

fn read_head(checkpoint: &Path) -> OutputHead {
    let metrics = checkpoint.with_file_name("metrics.json");
    std::fs::read_to_string(metrics)
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|v| serde_json::from_value(v["output_head"].clone()).ok())
        .unwrap_or(OutputHead::Identity)
}

/// Loads a checkpoint (default `<out>/checkpoint.bin`) and writes `ood.json`.
pub fn run_ood(cfg: &ExperimentConfig, out: &Path) -> Result<OodReport> {
    let cfg = prepare(cfg, out)?;
    let path = cfg
        .ood
        .checkpoint
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| out.join("checkpoint.bin"));
    let params: DisentangledParams = load(&path)?;
    let head = read_head(&path);
    let graph = cfg.ood.graph.as_ref().unwrap_or(&cfg.graph).build(cfg.seed)?;
    let prior = cfg.prior.build()?;
    let mut rng = stream(cfg.seed, streams::OOD);
    let kernel = cfg.ood.kernel.build(params.alphabet, &prior, &mut rng)?;
    if let Some(gamma) = cfg.ood.gamma {
        let floor = gamma / kernel.size() as f64;
        if kernel.min_entry() < floor {
            return Err(Error::Domain(format!(
                "OOD kernel has min entry {} below γ/S = {floor}",
                kernel.min_entry()
            )));
        }
    }
    let report = evaluate_ood(&params, head, &graph, &Arc::new(kernel), cfg.ood.n_sequences, &mut rng)?;
    write_json(&report, &out.join("ood.json"))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub input: String,
    pub recovered: String,
    pub exact_match: bool,
    pub threshold: f64,
    pub n_kernels: usize,
    pub decisions: Vec<OracleDecision>,
}

/// Recovers the graph from prior-averaged χ² mutual informations; writes
/// `recovered_graph.json`, `mi.csv`, `g.csv` and `oracle.json`.
pub fn run_oracle(cfg: &ExperimentConfig, out: &Path) -> Result<OracleReport> {
    let cfg = prepare(cfg, out)?;
    let graph = cfg.graph.build(cfg.seed)?;
    let prior = cfg.prior.build()?;
    let mut rng = stream(cfg.seed, streams::ORACLE);
    let (kernels, exact) = prior.expectation_sample(cfg.oracle.n_prior_samples, &mut rng)?;
    let (recovered, decisions, threshold) = oracle_from_prior(&graph, &kernels, exact, cfg.oracle.tol)?;
    let mi = prior_chi2_mi(&graph, &kernels, exact)?;
    mi.write_csv(std::fs::File::create(out.join("mi.csv"))?)?;
    idealized_g_from(&graph, &kernels, exact)?.write_csv(std::fs::File::create(out.join("g.csv"))?)?;
    std::fs::write(out.join("recovered_graph.json"), recovered.to_json())?;
    let report = OracleReport {
        input: graph.to_json(),
        recovered: recovered.to_json(),
        exact_match: recovered == graph,
        threshold,
        n_kernels: kernels.len(),
        decisions,
    };
    write_json(&report, &out.join("oracle.json"))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstructReport {
    pub arity: usize,
    pub beta: f64,
    pub rows: Vec<FidelityRow>,
}

/// Builds the construction, writes `checkpoint.bin` at `construct.beta` and
/// the fidelity table `fidelity.csv` over `construct.betas`.
pub fn run_construct(cfg: &ExperimentConfig, out: &Path) -> Result<ConstructReport> {
    let cfg = prepare(cfg, out)?;
    let c = &cfg.construct;
    let s = cfg.prior.alphabet();
    let mut rng = stream(cfg.seed, streams::CONSTRUCT);
    let (graph, kernel) = match c.graph.build_multi()? {
        None => {
            let g = cfg.graph.build(cfg.seed)?;
            let k = cfg.prior.build()?.sample(&mut rng)?;
            (ConstructionGraph::Single(g), FidelityKernel::Single(Arc::new(k)))
        }
        Some(g) => {
            let k = MultiKernel::sample_dirichlet(s, g.arity(), c.alpha, &mut rng)?;
            (ConstructionGraph::Multi(g), FidelityKernel::Multi(Arc::new(k)))
        }
    };
    let spec = ConstructionSpec::new(graph.clone(), s, c.beta, c.beta)?;
    let params = match graph {
        ConstructionGraph::Single(_) => build_single_parent(&spec)?,
        ConstructionGraph::Multi(_) => build_multi_parent(&spec)?,
    };
    save(&params, &out.join("checkpoint.bin"))?;
    let rows = fidelity_report(&graph, &kernel, c.n_sequences, &c.betas, c.min_matches, &mut rng)?;
    write_fidelity_csv(&rows, std::fs::File::create(out.join("fidelity.csv"))?)?;
    let report = ConstructReport {
        arity: graph.arity(),
        beta: c.beta,
        rows,
    };
    write_json(&report, &out.join("construct.json"))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub avg_attn: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Mean and standard deviation of `S(A^(1))_{i,p(i)}` per position over the
    /// graphs where `i` has a parent (`NaN` when none does).
    pub position_mean: Vec<f64>,
    pub position_std: Vec<f64>,
    pub graphs: Vec<String>,
}

/// Trains on `sweep.n_graphs` random graphs and writes `sweep.csv`,
/// `positions.csv` and `sweep.json`, training every graph in `sweep.mode`.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<SweepReport> {
    let cfg = prepare(cfg, out)?;
    let sw = &cfg.sweep;
    let mut graph_rng = stream(cfg.seed, streams::SWEEP);
    let mut avg = Vec::new();
    let mut graphs = Vec::new();
    let mut per_pos: Vec<Vec<f64>> = vec![Vec::new(); sw.t];
    let mut w = csv::Writer::from_path(out.join("sweep.csv")).map_err(|e| Error::Format(e.to_string()))?;
    w.write_record(["graph", "avg_attn", "min_edge_softmax", "parents"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for n in 0..sw.n_graphs {
        let g = CausalGraph::random(sw.t, sw.root_prob, &mut graph_rng)?;
        let parents: Vec<usize> = g.parents().iter().map(|p| p.map_or(0, |x| x + 1)).collect();
        let mut sub = cfg.clone();
        sub.graph = config::GraphSpec::Parents { parents: parents.clone() };
        sub.mode = sw.mode;
        sub.seed = cfg.seed.wrapping_add(1 + n as u64);
        let dir = out.join(format!("graph_{n:02}"));
        let (report, model) = run_train(&sub, &dir)?;
        if let Some(f) = &report.failure {
            return Err(Error::NonFinite(format!("graph {n}: {f}")));
        }
        let (pattern, _) = model.first_layer();
        for (p, i) in g.edges() {
            per_pos[i].push(pattern[(i, p)]);
        }
        w.write_record([
            n.to_string(),
            format!("{:e}", report.avg_attn),
            format!("{:e}", report.min_edge_softmax),
            format!("{parents:?}"),
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
        w.flush()?;
        avg.push(report.avg_attn);
        graphs.push(g.to_json());
    }
    let mut pw = csv::Writer::from_path(out.join("positions.csv")).map_err(|e| Error::Format(e.to_string()))?;
    pw.write_record(["position", "mean", "std", "n_graphs"])
        .map_err(|e| Error::Format(e.to_string()))?;
    let mut position_mean = Vec::new();
    let mut position_std = Vec::new();
    for (i, xs) in per_pos.iter().enumerate() {
        let (m, s) = mean_std(xs);
        position_mean.push(m);
        position_std.push(s);
        pw.write_record([(i + 1).to_string(), format!("{m:e}"), format!("{s:e}"), xs.len().to_string()])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    pw.flush()?;
    let (mean, std) = mean_std(&avg);
    let report = SweepReport {
        avg_attn: avg,
        mean,
        std,
        position_mean,
        position_std,
        graphs,
    };
    write_json(&report, &out.join("sweep.json"))?;
    Ok(report)
}

/// Runs a named suite with the config seed and writes `verify.json`.
pub fn run_verify_to(cfg: &ExperimentConfig, suite: &str, out: &Path) -> Result<verify::VerifyReport> {
    let cfg = prepare(cfg, out)?;
    let report = verify::run_verify(suite, cfg.seed)?;
    write_json(&report, &out.join("verify.json"))?;
    Ok(report)
}

//! TOML experiment configuration. Every field has a default; the resolved
//! configuration (defaults filled in) is written next to the outputs.

use crate::error::{Error, Result};
use crate::graph::{CausalGraph, MultiParentGraph};
use crate::markov::{DirichletPrior, KernelPrior, TransitionKernel};
use crate::reduced::{Estimator, TrainConfig};
use crate::rng::{stream, Rng};
use crate::transformer::JointConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Independent RNG streams derived from the run seed.
pub mod streams {
    pub const GRAPH: u64 = 0x1;
    pub const TRAIN: u64 = 0x2;
    pub const OOD: u64 = 0x3;
    pub const ORACLE: u64 = 0x4;
    pub const CONSTRUCT: u64 = 0x5;
    pub const SWEEP: u64 = 0x6;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphSpec {
    Chain { t: usize },
    Icl { t: usize },
    Star { t: usize },
    AllRoots { t: usize },
    FigureOne,
    /// Drawn from the run seed unless `seed` is given.
    Random {
        t: usize,
        #[serde(default = "half")]
        root_prob: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// 1-indexed parent list; `0` marks a root.
    Parents { parents: Vec<usize> },
    File { path: String },
}

fn half() -> f64 {
    0.5
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec::Chain { t: 20 }
    }
}

impl GraphSpec {
    pub fn build(&self, run_seed: u64) -> Result<CausalGraph> {
        match self {
            GraphSpec::Chain { t } => CausalGraph::chain(*t),
            GraphSpec::Icl { t } => CausalGraph::icl(*t),
            GraphSpec::Star { t } => CausalGraph::star(*t),
            GraphSpec::AllRoots { t } => CausalGraph::all_roots(*t),
            GraphSpec::FigureOne => Ok(CausalGraph::figure_one()),
            GraphSpec::Random { t, root_prob, seed } => {
                let mut rng = match seed {
                    Some(s) => crate::rng::seeded(*s),
                    None => stream(run_seed, streams::GRAPH),
                };
                CausalGraph::random(*t, *root_prob, &mut rng)
            }
            GraphSpec::Parents { parents } => {
                CausalGraph::new(parents.iter().map(|&p| p.checked_sub(1)).collect())
            }
            GraphSpec::File { path } => CausalGraph::from_json(&std::fs::read_to_string(path)?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorSpec {
    Dirichlet { alphabet: usize, alpha: f64 },
    PointMass { rows: Vec<Vec<f64>> },
    /// Uniform over all relabelings of `rows`.
    Orbit { rows: Vec<Vec<f64>> },
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::Dirichlet { alphabet: 3, alpha: 1.0 }
    }
}

impl PriorSpec {
    pub fn build(&self) -> Result<KernelPrior> {
        Ok(match self {
            PriorSpec::Dirichlet { alphabet, alpha } => KernelPrior::Dirichlet(DirichletPrior::new(*alphabet, *alpha)?),
            PriorSpec::PointMass { rows } => KernelPrior::PointMass(TransitionKernel::new(rows.clone())?),
            PriorSpec::Orbit { rows } => KernelPrior::PermutationOrbit(TransitionKernel::new(rows.clone())?),
        })
    }

    pub fn alphabet(&self) -> usize {
        match self {
            PriorSpec::Dirichlet { alphabet, .. } => *alphabet,
            PriorSpec::PointMass { rows } | PriorSpec::Orbit { rows } => rows.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    ReducedStaged,
    ReducedJoint,
    DisentangledJoint,
}

/// Optional overrides; unset fields take graph-dependent defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub beta0: Option<f64>,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    pub tau1: Option<usize>,
    pub tau2: Option<usize>,
    pub epsilon: Option<f64>,
    pub estimator: Option<Estimator>,
    pub early_stop: Option<bool>,
    pub resample_each_step: Option<bool>,
    /// Joint modes.
    pub lr: Option<f64>,
    pub steps: Option<usize>,
    pub batch: Option<usize>,
    pub log_every: Option<usize>,
}

impl TrainSection {
    pub fn staged(&self, graph: &CausalGraph, alphabet: usize) -> TrainConfig {
        let mut c = TrainConfig::defaults(graph, alphabet);
        if let Some(b) = self.beta0 {
            c.beta0 = b;
            if self.eta1.is_none() && b > 0.0 {
                c.eta1 = TrainConfig::defaults(graph, alphabet).eta1 * TrainConfig::defaults(graph, alphabet).beta0 / b;
            }
        }
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(eta1, eta2, tau1, tau2, epsilon, estimator, early_stop, resample_each_step);
        c
    }

    pub fn joint(&self) -> JointConfig {
        let d = JointConfig::default();
        JointConfig {
            lr: self.lr.unwrap_or(d.lr),
            steps: self.steps.unwrap_or(d.steps),
            batch: self.batch.unwrap_or(d.batch),
            log_every: self.log_every.unwrap_or(d.log_every),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OodKernel {
    /// Cyclic shift with probability `1 − delta`, the rest spread evenly.
    NearDeterministic { delta: f64 },
    Rows { rows: Vec<Vec<f64>> },
    /// A fresh draw from the training prior.
    Prior,
}

impl Default for OodKernel {
    fn default() -> Self {
        OodKernel::NearDeterministic { delta: 0.1 }
    }
}

impl OodKernel {
    pub fn build(&self, alphabet: usize, prior: &KernelPrior, rng: &mut Rng) -> Result<TransitionKernel> {
        match self {
            OodKernel::NearDeterministic { delta } => {
                if !(0.0..=1.0).contains(delta) {
                    return Err(Error::Config(format!("delta {delta} outside [0,1]")));
                }
                let s = alphabet;
                let rows = (0..s)
                    .map(|a| {
                        (0..s)
                            .map(|b| if b == (a + 1) % s { 1.0 - delta } else { delta / (s - 1) as f64 })
                            .collect()
                    })
                    .collect();
                TransitionKernel::new(rows)
            }
            OodKernel::Rows { rows } => TransitionKernel::new(rows.clone()),
            OodKernel::Prior => prior.sample(rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodSection {
    /// Model checkpoint; defaults to `<out>/checkpoint.bin`.
    pub checkpoint: Option<String>,
    pub kernel: OodKernel,
    pub n_sequences: usize,
    /// Sequence graph for the OOD draws; defaults to the training graph.
    pub graph: Option<GraphSpec>,
    /// Reject kernels whose smallest entry is below `gamma / S`.
    pub gamma: Option<f64>,
}

impl Default for OodSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            kernel: OodKernel::default(),
            n_sequences: 1000,
            graph: None,
            gamma: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub n_prior_samples: usize,
    /// Floor for the recovery threshold when the prior average is exact.
    pub tol: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            n_prior_samples: 2000,
            tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConstructGraph {
    /// Single-parent construction on the top-level graph.
    Single,
    /// `n`-gram multi-parent construction.
    Ngram { t: usize, n: usize },
    /// Explicit multi-parent JSON file.
    File { path: String },
}

impl Default for ConstructGraph {
    fn default() -> Self {
        ConstructGraph::Single
    }
}

impl ConstructGraph {
    pub fn build_multi(&self) -> Result<Option<MultiParentGraph>> {
        match self {
            ConstructGraph::Single => Ok(None),
            ConstructGraph::Ngram { t, n } => MultiParentGraph::ngram(*t, *n).map(Some),
            ConstructGraph::File { path } => MultiParentGraph::from_json(&std::fs::read_to_string(path)?).map(Some),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstructSection {
    pub graph: ConstructGraph,
    /// Inverse temperature of the emitted checkpoint.
    pub beta: f64,
    pub betas: Vec<f64>,
    pub n_sequences: usize,
    pub min_matches: usize,
    /// Dirichlet concentration of the multi-parent kernel.
    pub alpha: f64,
}

impl Default for ConstructSection {
    fn default() -> Self {
        Self {
            graph: ConstructGraph::Single,
            beta: 50.0,
            betas: crate::construct::DEFAULT_BETAS.to_vec(),
            n_sequences: 1000,
            min_matches: 1,
            alpha: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub n_graphs: usize,
    pub t: usize,
    pub root_prob: f64,
    /// Training mode for each graph; overrides the top-level `mode`.
    pub mode: Mode,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            n_graphs: 20,
            t: 20,
            root_prob: 0.5,
            mode: Mode::DisentangledJoint,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: Mode,
    pub graph: GraphSpec,
    pub prior: PriorSpec,
    pub train: TrainSection,
    pub ood: OodSection,
    pub oracle: OracleSection,
    pub construct: ConstructSection,
    pub sweep: SweepSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::default(),
            graph: GraphSpec::default(),
            prior: PriorSpec::default(),
            train: TrainSection::default(),
            ood: OodSection::default(),
            oracle: OracleSection::default(),
            construct: ConstructSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Fills graph-dependent training defaults so the echo is complete.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        let graph = c.graph.build(c.seed)?;
        let s = c.prior.alphabet();
        let staged = c.train.staged(&graph, s);
        let joint = c.train.joint();
        c.train = TrainSection {
            beta0: Some(staged.beta0),
            eta1: Some(staged.eta1),
            eta2: Some(staged.eta2),
            tau1: Some(staged.tau1),
            tau2: Some(staged.tau2),
            epsilon: Some(staged.epsilon),
            estimator: Some(staged.estimator),
            early_stop: Some(staged.early_stop),
            resample_each_step: Some(staged.resample_each_step),
            lr: Some(joint.lr),
            steps: Some(joint.steps),
            batch: Some(joint.batch),
            log_every: Some(joint.log_every),
        };
        Ok(c)
    }
}

//! Transition kernels, priors over kernels, and the spectral and χ² quantities
//! used throughout the analysis.
//!
//! A [`TransitionKernel`] is a row-stochastic `S x S` matrix together with its
//! cached stationary measure. The centred and normalised matrix
//!
//! ```text
//! (B_π)_{s,s'} = sqrt(μ(s)/μ(s')) · (π(s'|s) − μ(s'))
//! ```
//!
//! drives everything else: `‖B_π‖_F²` is the χ² mutual information between a
//! node and its parent, and `1 − ‖B_π‖₂` is the spectral gap.

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, Matrix};
use crate::rng::Rng;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

const ROW_SUM_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-12;
const STATIONARY_MAX_ITER: usize = 100_000;
const SPECTRAL_TOL: f64 = 1e-10;

/// Row-stochastic transition matrix `π(s'|s)` over the alphabet `[S]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionKernel {
    rows: Matrix,
    stationary: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct KernelJson {
    #[serde(rename = "S")]
    size: usize,
    rows: Vec<Vec<f64>>,
}

impl TransitionKernel {
    /// Validates the rows and computes the stationary measure.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let s = rows.len();
        if s < 2 {
            return Err(Error::Domain(format!("alphabet size must be at least 2, got {s}")));
        }
        if rows.iter().any(|r| r.len() != s) {
            return Err(Error::DimensionMismatch("transition rows must have length S".into()));
        }
        Self::from_matrix(Matrix::from_rows(&rows))
    }

    pub fn from_matrix(rows: Matrix) -> Result<Self> {
        let s = rows.rows();
        if rows.cols() != s || s < 2 {
            return Err(Error::DimensionMismatch(format!(
                "transition matrix must be square with S >= 2, got {:?}",
                rows.shape()
            )));
        }
        for i in 0..s {
            let row = rows.row(i);
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::Domain(format!("row {i} has a negative or non-finite entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Domain(format!("row {i} sums to {total}")));
            }
        }
        let stationary = match gth_stationary(&rows) {
            Some(mu) => mu,
            None => power_iteration(&rows)?,
        };
        Ok(Self { rows, stationary })
    }

    /// Uniform kernel `(1/S) 1 1^T`.
    pub fn uniform(size: usize) -> Result<Self> {
        Self::from_matrix(Matrix::from_fn(size, size, |_, _| 1.0 / size as f64))
    }

    /// Kernel with `1 − δ` on the diagonal and `δ/(S−1)` elsewhere.
    pub fn lazy_symmetric(size: usize, delta: f64) -> Result<Self> {
        let off = delta / (size as f64 - 1.0);
        Self::from_matrix(Matrix::from_fn(size, size, |i, j| if i == j { 1.0 - delta } else { off }))
    }

    /// Deterministic kernel `π(s'|s) = 1(s' = map[s])` (0-indexed).
    pub fn deterministic(map: &[usize]) -> Result<Self> {
        let s = map.len();
        if map.iter().any(|&t| t >= s) {
            return Err(Error::Domain("deterministic map leaves the alphabet".into()));
        }
        Self::from_matrix(Matrix::from_fn(s, s, |i, j| if map[i] == j { 1.0 } else { 0.0 }))
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.rows.rows()
    }

    /// `π(to | from)`, 0-indexed.
    #[inline]
    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.rows[(from, to)]
    }

    #[inline]
    pub fn row(&self, from: usize) -> &[f64] {
        self.rows.row(from)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.rows
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn min_entry(&self) -> f64 {
        self.rows.as_slice().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `p^T π`: the law of the next state when the current one has law `p`.
    pub fn push_forward(&self, p: &[f64]) -> Vec<f64> {
        self.rows.vec_mat(p)
    }

    /// `π^k` as a plain matrix.
    pub fn matrix_power(&self, k: usize) -> Matrix {
        let mut out = Matrix::identity(self.size());
        for _ in 0..k {
            out = out.matmul(&self.rows);
        }
        out
    }

    /// The relabelled kernel `π'(σ(b)|σ(a)) = π(b|a)`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        let s = self.size();
        let mut m = Matrix::zeros(s, s);
        for a in 0..s {
            for b in 0..s {
                m[(perm[a], perm[b])] = self.rows[(a, b)];
            }
        }
        Self::from_matrix(m)
    }

    /// Mean sampling variance style statistic `Σ_s ‖π(·|s) − μ‖₂²`.
    pub fn nondegeneracy(&self) -> f64 {
        let mu = &self.stationary;
        (0..self.size())
            .map(|s| self.row(s).iter().zip(mu).map(|(p, m)| (p - m) * (p - m)).sum::<f64>())
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&KernelJson {
            size: self.size(),
            rows: self.rows.to_rows(),
        })
        .expect("kernel serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parsed: KernelJson = serde_json::from_str(text)?;
        if parsed.rows.len() != parsed.size {
            return Err(Error::Format(format!(
                "kernel declares S={} but has {} rows",
                parsed.size,
                parsed.rows.len()
            )));
        }
        Self::new(parsed.rows)
    }
}

impl Serialize for TransitionKernel {
    fn serialize<Ser: serde::Serializer>(&self, serializer: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        KernelJson {
            size: self.size(),
            rows: self.rows.to_rows(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TransitionKernel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let parsed = KernelJson::deserialize(deserializer)?;
        TransitionKernel::new(parsed.rows).map_err(serde::de::Error::custom)
    }
}

/// Grassmann–Taksar–Heyman elimination. Subtraction-free, so it stays accurate
/// for nearly reducible kernels where power iteration crawls. Returns `None`
/// on a zero pivot (reducible chain) or when the fixed-point residual exceeds
/// the tolerance.
fn gth_stationary(rows: &Matrix) -> Option<Vec<f64>> {
    let s = rows.rows();
    let mut p = rows.clone();
    for n in (1..s).rev() {
        let total: f64 = (0..n).map(|j| p[(n, j)]).sum();
        if !(total > 0.0) {
            return None;
        }
        for i in 0..n {
            p[(i, n)] /= total;
        }
        for i in 0..n {
            let a = p[(i, n)];
            if a == 0.0 {
                continue;
            }
            for j in 0..n {
                p[(i, j)] += a * p[(n, j)];
            }
        }
    }
    let mut mu = vec![0.0; s];
    mu[0] = 1.0;
    for n in 1..s {
        mu[n] = (0..n).map(|i| mu[i] * p[(i, n)]).sum();
    }
    let total: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|x| *x /= total);
    let next = rows.vec_mat(&mu);
    let residual: f64 = next.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
    (residual <= STATIONARY_TOL && mu.iter().all(|x| x.is_finite())).then_some(mu)
}

/// Stationary measure by lazy power iteration alone, without the direct solve.
pub fn stationary_by_power_iteration(kernel: &TransitionKernel) -> Result<Vec<f64>> {
    power_iteration(&kernel.rows)
}

// Lazy chain ½(I + π) has the same stationary measures and is aperiodic, so the
// iteration also settles for periodic kernels such as permutations.
fn power_iteration(rows: &Matrix) -> Result<Vec<f64>> {
    let s = rows.rows();
    let mut mu = vec![1.0 / s as f64; s];
    let mut residual = f64::INFINITY;
    for _ in 0..STATIONARY_MAX_ITER {
        let next_raw = rows.vec_mat(&mu);
        let mut next: Vec<f64> = mu.iter().zip(&next_raw).map(|(a, b)| 0.5 * (a + b)).collect();
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        residual = next.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
        mu = next;
        if residual <= STATIONARY_TOL {
            return Ok(mu);
        }
    }
    Err(Error::NoConvergence {
        iterations: STATIONARY_MAX_ITER,
        residual,
    })
}

/// Stationary measure `μ_π` (cached on the kernel).
pub fn stationary_measure(kernel: &TransitionKernel) -> Vec<f64> {
    kernel.stationary.clone()
}

/// `(B_π)_{s,s'} = sqrt(μ(s)/μ(s')) [π(s'|s) − μ(s')]`.
pub fn b_matrix(kernel: &TransitionKernel) -> Result<Matrix> {
    let mu = kernel.stationary();
    if let Some(s) = mu.iter().position(|&m| m <= 0.0) {
        return Err(Error::Domain(format!("stationary measure vanishes at state {s}")));
    }
    let s = kernel.size();
    Ok(Matrix::from_fn(s, s, |a, b| {
        (mu[a] / mu[b]).sqrt() * (kernel.prob(a, b) - mu[b])
    }))
}

/// `‖B_π‖_F²` evaluated as `Σ μ(s) π(s'|s)² / μ(s') − 1`.
pub fn b_frobenius_sq(kernel: &TransitionKernel) -> Result<f64> {
    let mu = kernel.stationary();
    if mu.iter().any(|&m| m <= 0.0) {
        return Err(Error::Domain("stationary measure has a zero entry".into()));
    }
    let s = kernel.size();
    let mut total = 0.0;
    for a in 0..s {
        for b in 0..s {
            let p = kernel.prob(a, b);
            total += mu[a] * p * p / mu[b];
        }
    }
    Ok(total - 1.0)
}

/// `λ(π) = ‖B_π‖₂`.
pub fn second_singular_value(kernel: &TransitionKernel) -> Result<f64> {
    Ok(spectral_norm(&b_matrix(kernel)?, SPECTRAL_TOL * 1e-2, 1_000_000))
}

/// Spectral gap `1 − ‖B_π‖₂`.
pub fn spectral_gap(kernel: &TransitionKernel) -> Result<f64> {
    Ok(1.0 - second_singular_value(kernel)?)
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Dobrushin coefficient `α(π) = max_{j≠k} TV(π(·|j), π(·|k))`.
pub fn contraction_coefficient(kernel: &TransitionKernel) -> f64 {
    let s = kernel.size();
    let mut best = 0.0f64;
    for j in 0..s {
        for k in (j + 1)..s {
            best = best.max(total_variation(kernel.row(j), kernel.row(k)));
        }
    }
    best
}

/// A divergence value that may be `+∞`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Divergence {
    Finite(f64),
    Infinite,
}

impl Divergence {
    pub fn value(self) -> f64 {
        match self {
            Divergence::Finite(v) => v,
            Divergence::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Divergence::Finite(_))
    }
}

/// `χ²(p‖q) = Σ p²/q − 1`.
pub fn chi2_divergence(p: &[f64], q: &[f64]) -> Result<Divergence> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch("chi2 arguments differ in length".into()));
    }
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if b <= 0.0 {
            if a > 0.0 {
                return Ok(Divergence::Infinite);
            }
            continue;
        }
        total += a * a / b;
    }
    Ok(Divergence::Finite((total - 1.0).max(0.0)))
}

/// χ² mutual information of a joint table `P[y, z]`.
pub fn chi2_mutual_info(joint: &Matrix) -> Result<f64> {
    let total = joint.sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("joint table sums to {total}")));
    }
    let row_m: Vec<f64> = (0..joint.rows()).map(|i| joint.row(i).iter().sum()).collect();
    let col_m: Vec<f64> = (0..joint.cols()).map(|j| joint.column(j).iter().sum()).collect();
    let mut acc = 0.0;
    for i in 0..joint.rows() {
        for j in 0..joint.cols() {
            let p = joint[(i, j)];
            if p > 0.0 {
                acc += p * p / (row_m[i] * col_m[j]);
            }
        }
    }
    Ok((acc - 1.0).max(0.0))
}

/// Joint `μ(s) π(s'|s)` of a stationary state and its successor.
pub fn one_step_joint(kernel: &TransitionKernel) -> Matrix {
    let mu = kernel.stationary();
    let s = kernel.size();
    Matrix::from_fn(s, s, |a, b| mu[a] * kernel.prob(a, b))
}

/// Symmetric Dirichlet prior: each row of `π` is drawn i.i.d. from `Dir(α 1_S)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletPrior {
    pub size: usize,
    pub alpha: f64,
}

impl DirichletPrior {
    pub fn new(size: usize, alpha: f64) -> Result<Self> {
        if size < 2 {
            return Err(Error::Domain(format!("alphabet size must be at least 2, got {size}")));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Domain(format!("Dirichlet concentration must be positive, got {alpha}")));
        }
        Ok(Self { size, alpha })
    }
}

fn dirichlet_row(size: usize, alpha: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Generation(e.to_string()))?;
    let draws: Vec<f64> = (0..size).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Generation(format!(
            "Dirichlet draw degenerated (sum {total}) at alpha={alpha}"
        )));
    }
    let mut row: Vec<f64> = draws.iter().map(|g| g / total).collect();
    // renormalise so the row sums to one to the last ulp
    let fix: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= fix);
    Ok(row)
}

/// Draws a kernel whose rows are i.i.d. `Dir(α 1_S)`.
pub fn sample_kernel(prior: &DirichletPrior, rng: &mut Rng) -> Result<TransitionKernel> {
    DirichletPrior::new(prior.size, prior.alpha)?;
    let rows = (0..prior.size)
        .map(|_| dirichlet_row(prior.size, prior.alpha, rng))
        .collect::<Result<Vec<_>>>()?;
    TransitionKernel::new(rows).map_err(|e| match e {
        Error::NoConvergence { .. } => e,
        other => Error::Generation(other.to_string()),
    })
}

/// A prior `P_π` over single-parent kernels.
///
/// Finite priors expose their support so expectations over `π` can be taken
/// exactly; the Dirichlet prior is only ever sampled.
#[derive(Clone, Debug)]
pub enum KernelPrior {
    Dirichlet(DirichletPrior),
    PointMass(TransitionKernel),
    /// Uniform over the listed kernels.
    Finite(Vec<TransitionKernel>),
    /// Uniform over all relabelings `σ π σ^{-1}` of a base kernel.
    PermutationOrbit(TransitionKernel),
}

impl KernelPrior {
    pub fn size(&self) -> usize {
        match self {
            KernelPrior::Dirichlet(d) => d.size,
            KernelPrior::PointMass(k) | KernelPrior::PermutationOrbit(k) => k.size(),
            KernelPrior::Finite(ks) => ks[0].size(),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Result<TransitionKernel> {
        match self {
            KernelPrior::Dirichlet(d) => sample_kernel(d, rng),
            KernelPrior::PointMass(k) => Ok(k.clone()),
            KernelPrior::Finite(ks) => Ok(ks[rng.random_range(0..ks.len())].clone()),
            KernelPrior::PermutationOrbit(k) => {
                let mut perm: Vec<usize> = (0..k.size()).collect();
                perm.shuffle(rng);
                k.relabeled(&perm)
            }
        }
    }

    /// Exact support (uniform weights) for finite priors.
    pub fn support(&self) -> Option<Vec<TransitionKernel>> {
        match self {
            KernelPrior::Dirichlet(_) => None,
            KernelPrior::PointMass(k) => Some(vec![k.clone()]),
            KernelPrior::Finite(ks) => Some(ks.clone()),
            KernelPrior::PermutationOrbit(k) => Some(
                permutations(k.size())
                    .iter()
                    .map(|p| k.relabeled(p).expect("relabeling preserves validity"))
                    .collect(),
            ),
        }
    }

    /// Kernels to average over: the exact support when finite, otherwise `n` draws.
    pub fn expectation_sample(&self, n: usize, rng: &mut Rng) -> Result<(Vec<TransitionKernel>, bool)> {
        match self.support() {
            Some(s) => Ok((s, true)),
            None => Ok(((0..n).map(|_| self.sample(rng)).collect::<Result<Vec<_>>>()?, false)),
        }
    }
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..n).collect();
    loop {
        out.push(current.clone());
        // next lexicographic permutation
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| current[i] < current[i + 1]) else {
            break;
        };
        let j = (i + 1..n).rev().find(|&j| current[j] > current[i]).unwrap();
        current.swap(i, j);
        current[i + 1..].reverse();
    }
    out
}

/// Largest `γ` for which a kernel satisfies the lower-bound and
/// non-degeneracy conditions: `min(S·min π, sqrt(S · Σ_s ‖π(·|s) − μ‖²))`.
pub fn kernel_gamma(kernel: &TransitionKernel) -> f64 {
    let s = kernel.size() as f64;
    (s * kernel.min_entry()).min((s * kernel.nondegeneracy()).sqrt())
}

/// Largest `γ` certified by every kernel of a sample.
pub fn measured_gamma(samples: &[TransitionKernel]) -> f64 {
    samples.iter().map(kernel_gamma).fold(f64::INFINITY, f64::min).min(1.0)
}

/// Outcome of checking the prior conditions on a kernel sample.
#[derive(Clone, Debug, Serialize)]
pub struct PriorCertificate {
    /// `γ`, present only when conditions 1 and 2 hold for every sample.
    pub gamma: Option<f64>,
    pub lower_bounded: bool,
    pub non_degenerate: bool,
    /// Sample-mean symmetry: diagonal entries share a mean, off-diagonal entries share a mean.
    pub symmetric: bool,
    /// Sample-mean `E[π] = (1/S) 1 1^T`.
    pub constant_mean: bool,
    pub symmetry_deviation: f64,
    pub symmetry_z: f64,
    pub mean_deviation: f64,
    pub mean_z: f64,
    pub n_samples: usize,
}

impl PriorCertificate {
    pub fn all_pass(&self) -> bool {
        self.lower_bounded && self.non_degenerate && self.symmetric && self.constant_mean
    }
}

/// The z-score above which a sample-mean deviation counts as a failure.
pub const PRIOR_Z_THRESHOLD: f64 = 4.0;

/// Checks the four prior conditions for a given `γ` on a list of kernels.
///
/// Conditions 1–2 are checked per kernel. Conditions 3–4 are distributional
/// and are only tested on sample means, with deviations and z-scores reported.
pub fn check_assumptions(samples: &[TransitionKernel], gamma: f64) -> Result<PriorCertificate> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let s = samples[0].size();
    let sf = s as f64;
    let lower_bounded = samples.iter().all(|k| k.min_entry() > gamma / sf);
    let non_degenerate = samples.iter().all(|k| k.nondegeneracy() >= gamma * gamma / sf);

    let n = samples.len() as f64;
    let mut mean = Matrix::zeros(s, s);
    let mut sq = Matrix::zeros(s, s);
    for k in samples {
        for a in 0..s {
            for b in 0..s {
                let p = k.prob(a, b);
                mean[(a, b)] += p / n;
                sq[(a, b)] += p * p / n;
            }
        }
    }
    let se = |a: usize, b: usize| {
        let var = (sq[(a, b)] - mean[(a, b)] * mean[(a, b)]).max(0.0);
        (var / n.max(2.0 - 1.0)).sqrt().max(1e-300)
    };

    let mut mean_dev = 0.0f64;
    let mut mean_z = 0.0f64;
    for a in 0..s {
        for b in 0..s {
            let d = (mean[(a, b)] - 1.0 / sf).abs();
            mean_dev = mean_dev.max(d);
            mean_z = mean_z.max(if d == 0.0 { 0.0 } else { d / se(a, b) });
        }
    }

    let diag_pool = (0..s).map(|a| mean[(a, a)]).sum::<f64>() / sf;
    let off_pool = (mean.sum() - mean.trace()) / (sf * (sf - 1.0));
    let mut sym_dev = 0.0f64;
    let mut sym_z = 0.0f64;
    for a in 0..s {
        for b in 0..s {
            let pool = if a == b { diag_pool } else { off_pool };
            let d = (mean[(a, b)] - pool).abs();
            sym_dev = sym_dev.max(d);
            sym_z = sym_z.max(if d == 0.0 { 0.0 } else { d / se(a, b) });
        }
    }

    Ok(PriorCertificate {
        gamma: (lower_bounded && non_degenerate).then_some(gamma),
        lower_bounded,
        non_degenerate,
        symmetric: sym_z <= PRIOR_Z_THRESHOLD,
        constant_mean: mean_z <= PRIOR_Z_THRESHOLD,
        symmetry_deviation: sym_dev,
        symmetry_z: sym_z,
        mean_deviation: mean_dev,
        mean_z,
        n_samples: samples.len(),
    })
}

/// Conditional table for `k` parents: a distribution over `[S]` for every
/// ordered tuple `(a_1, …, a_k)` (mixed radix, `a_1` most significant).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiKernel {
    size: usize,
    arity: usize,
    table: Vec<f64>,
}

impl MultiKernel {
    pub fn new(size: usize, arity: usize, table: Vec<f64>) -> Result<Self> {
        if size < 2 || arity == 0 {
            return Err(Error::Domain("multi-kernel needs S >= 2 and k >= 1".into()));
        }
        let contexts = size.pow(arity as u32);
        if table.len() != contexts * size {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries, got {}",
                contexts * size,
                table.len()
            )));
        }
        for c in 0..contexts {
            let row = &table[c * size..(c + 1) * size];
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Domain(format!("context {c} has a negative entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Domain(format!("context {c} sums to {total}")));
            }
        }
        Ok(Self { size, arity, table })
    }

    /// Every conditional drawn i.i.d. from `Dir(α 1_S)`.
    pub fn sample_dirichlet(size: usize, arity: usize, alpha: f64, rng: &mut Rng) -> Result<Self> {
        DirichletPrior::new(size, alpha)?;
        let contexts = size.pow(arity as u32);
        let mut table = Vec::with_capacity(contexts * size);
        for _ in 0..contexts {
            table.extend(dirichlet_row(size, alpha, rng)?);
        }
        Self::new(size, arity, table)
    }

    /// Deterministic `π(·|a) = e_{f(a)}` for a context map given by index.
    pub fn deterministic(size: usize, arity: usize, f: impl Fn(&[usize]) -> usize) -> Result<Self> {
        let contexts = size.pow(arity as u32);
        let mut table = vec![0.0; contexts * size];
        let mut ctx = vec![0; arity];
        for c in 0..contexts {
            decode_context(c, size, &mut ctx);
            let next = f(&ctx);
            if next >= size {
                return Err(Error::Domain("deterministic map leaves the alphabet".into()));
            }
            table[c * size + next] = 1.0;
        }
        Self::new(size, arity, table)
    }

    /// Arity-1 view of a single-parent kernel.
    pub fn from_kernel(kernel: &TransitionKernel) -> Self {
        Self {
            size: kernel.size(),
            arity: 1,
            table: kernel.matrix().as_slice().to_vec(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn context_index(&self, parents: &[usize]) -> usize {
        debug_assert_eq!(parents.len(), self.arity);
        parents.iter().fold(0, |acc, &a| acc * self.size + a)
    }

    pub fn conditional(&self, parents: &[usize]) -> &[f64] {
        let c = self.context_index(parents);
        &self.table[c * self.size..(c + 1) * self.size]
    }
}

pub(crate) fn decode_context(mut c: usize, size: usize, out: &mut [usize]) {
    for slot in out.iter_mut().rev() {
        *slot = c % size;
        c /= size;
    }
}

/// The 2x2 kernel `[[1−δ, δ], [δ, 1−δ]]` used in several worked examples.
pub fn two_state_symmetric(delta: f64) -> TransitionKernel {
    TransitionKernel::new(vec![vec![1.0 - delta, delta], vec![delta, 1.0 - delta]])
        .expect("valid two-state kernel")
}

/// Draws a uniformly random probability vector of length `n`.
pub fn random_distribution(n: usize, rng: &mut Rng) -> Vec<f64> {
    dirichlet_row(n, 1.0, rng).expect("Dir(1) never degenerates")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn example() -> TransitionKernel {
        two_state_symmetric(0.2)
    }

    #[test]
    fn uniform_kernel_has_uniform_stationary_measure_and_no_signal() {
        let k = TransitionKernel::uniform(4).unwrap();
        assert!(k.stationary().iter().all(|m| (m - 0.25).abs() < 1e-15));
        assert!(b_matrix(&k).unwrap().max_abs() < 1e-15);
        assert!((spectral_gap(&k).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn doubly_stochastic_kernel_has_uniform_measure() {
        let k = TransitionKernel::new(vec![
            vec![0.5, 0.3, 0.2],
            vec![0.2, 0.5, 0.3],
            vec![0.3, 0.2, 0.5],
        ])
        .unwrap();
        assert!(k.stationary().iter().all(|m| (m - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn two_state_worked_example() {
        let k = example();
        assert!((k.stationary()[0] - 0.5).abs() < 1e-12);
        // Σ μ π² / μ − 1 = 2 * (0.64 + 0.04) − 1
        assert!((b_frobenius_sq(&k).unwrap() - 0.36).abs() < 1e-12);
        assert!((b_matrix(&k).unwrap().frobenius_sq() - 0.36).abs() < 1e-12);
        assert!((second_singular_value(&k).unwrap() - 0.6).abs() < 1e-9);
        assert!((spectral_gap(&k).unwrap() - 0.4).abs() < 1e-9);
        assert!((contraction_coefficient(&k) - 0.6).abs() < 1e-15);
        assert!((chi2_mutual_info(&one_step_joint(&k)).unwrap() - 0.36).abs() < 1e-12);
    }

    #[test]
    fn contraction_of_near_permutation_rows() {
        let delta = 0.07;
        let k = TransitionKernel::new(vec![
            vec![delta, 1.0 - delta, 0.0],
            vec![0.0, delta, 1.0 - delta],
            vec![1.0 - delta, 0.0, delta],
        ])
        .unwrap();
        assert!((contraction_coefficient(&k) - (1.0 - delta)).abs() < 1e-15);
        let k2 = two_state_symmetric(delta);
        assert!((contraction_coefficient(&k2) - (1.0 - 2.0 * delta)).abs() < 1e-15);
        let same = TransitionKernel::new(vec![vec![0.3, 0.7], vec![0.3, 0.7]]).unwrap();
        assert_eq!(contraction_coefficient(&same), 0.0);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(TransitionKernel::new(vec![vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
        assert!(TransitionKernel::new(vec![vec![1.5, -0.5], vec![0.5, 0.5]]).is_err());
        assert!(DirichletPrior::new(3, 0.0).is_err());
        assert!(DirichletPrior::new(1, 1.0).is_err());
    }

    #[test]
    fn chi2_edge_cases() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(chi2_divergence(&p, &p).unwrap(), Divergence::Finite(0.0));
        assert_eq!(chi2_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), Divergence::Infinite);
        assert_eq!(chi2_divergence(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), Divergence::Finite(0.0));
        let outer = Matrix::from_fn(3, 3, |i, j| p[i] * p[j]);
        assert!(chi2_mutual_info(&outer).unwrap().abs() < 1e-15);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let prior = DirichletPrior::new(5, 0.7).unwrap();
        let a = sample_kernel(&prior, &mut seeded(9)).unwrap();
        let b = sample_kernel(&prior, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn experiment_prior_rows_are_valid() {
        let prior = DirichletPrior::new(10, 0.1).unwrap();
        let mut rng = seeded(1);
        for _ in 0..50 {
            let k = sample_kernel(&prior, &mut rng).unwrap();
            for s in 0..10 {
                assert!((k.row(s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn large_alpha_concentrates_rows() {
        // Dir(α1) on 2 states has per-entry variance 1/(4(2α+1)) ≈ 1.25e-5 at α=1e4,
        // so a 0.2 deviation is ~57 standard deviations away.
        let prior = DirichletPrior::new(2, 1e4).unwrap();
        let mut rng = seeded(3);
        for _ in 0..100 {
            let k = sample_kernel(&prior, &mut rng).unwrap();
            assert!(k.matrix().as_slice().iter().all(|p| (p - 0.5).abs() <= 0.2));
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let prior = DirichletPrior::new(4, 0.3).unwrap();
        let k = sample_kernel(&prior, &mut seeded(5)).unwrap();
        let text = k.to_json();
        assert!(text.starts_with("{\"S\":4,\"rows\":"));
        let back = TransitionKernel::from_json(&text).unwrap();
        assert_eq!(back.matrix(), k.matrix());
    }

    #[test]
    fn certificate_conditions() {
        let mut zero = TransitionKernel::new(vec![vec![1.0, 0.0], vec![0.3, 0.7]]).unwrap();
        let cert = check_assumptions(&[zero.clone()], 1e-9).unwrap();
        assert!(!cert.lower_bounded);
        assert!(cert.gamma.is_none());
        zero = TransitionKernel::uniform(3).unwrap();
        let cert = check_assumptions(&[zero], 0.1).unwrap();
        assert!(cert.lower_bounded && !cert.non_degenerate);
    }

    #[test]
    fn permutations_enumerate_factorial() {
        assert_eq!(permutations(1).len(), 1);
        assert_eq!(permutations(4).len(), 24);
        let p = permutations(3);
        assert_eq!(p[0], vec![0, 1, 2]);
        assert_eq!(p[5], vec![2, 1, 0]);
    }

    #[test]
    fn multi_kernel_indexing() {
        let mk = MultiKernel::deterministic(3, 2, |c| (c[0] + c[1]) % 3).unwrap();
        assert_eq!(mk.conditional(&[2, 2]), &[0.0, 1.0, 0.0]);
        assert_eq!(mk.context_index(&[1, 2]), 5);
    }
}

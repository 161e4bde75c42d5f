use super::attention::causal_pattern;
use crate::error::{Error, Result};
use crate::linalg::{dot, softmax_jacobian_apply, Matrix};
use crate::rng::Rng;
use crate::sequence::disentangled_input;
use rand::Rng as _;
use std::hash::{Hash, Hasher};

/// Which rows of `h^(L) W̃_O^T` a forward pass returns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OutputMode {
    #[default]
    AllPositions,
    /// Only the embedding of the last token (`1×d_out`).
    LastToken,
}

/// Attention-only transformer whose layers concatenate head outputs onto the
/// residual stream instead of adding them.
#[derive(Clone, Debug, PartialEq)]
pub struct DisentangledParams {
    pub alphabet: usize,
    pub length: usize,
    /// `layers[ℓ][i]` is `Ã_i^(ℓ+1)`, of size `d_ℓ × d_ℓ`.
    pub layers: Vec<Vec<Matrix>>,
    /// `d_out × d_L`
    pub w_o: Matrix,
}

/// `d_0 = S+T`, `d_ℓ = (1+m_ℓ) d_{ℓ−1}`.
pub fn dimension_ladder(alphabet: usize, length: usize, heads: &[usize]) -> Vec<usize> {
    let mut dims = vec![alphabet + length];
    for &m in heads {
        let last = *dims.last().unwrap();
        dims.push((1 + m) * last);
    }
    dims
}

impl DisentangledParams {
    pub fn zeros(alphabet: usize, length: usize, heads: &[usize], output_dim: usize) -> Self {
        let dims = dimension_ladder(alphabet, length, heads);
        Self {
            alphabet,
            length,
            layers: heads
                .iter()
                .enumerate()
                .map(|(l, &m)| vec![Matrix::zeros(dims[l], dims[l]); m])
                .collect(),
            w_o: Matrix::zeros(output_dim, *dims.last().unwrap()),
        }
    }

    pub fn random(
        alphabet: usize,
        length: usize,
        heads: &[usize],
        output_dim: usize,
        scale: f64,
        rng: &mut Rng,
    ) -> Self {
        let mut p = Self::zeros(alphabet, length, heads, output_dim);
        for m in p.layers.iter_mut().flatten().chain(std::iter::once(&mut p.w_o)) {
            m.as_mut_slice().iter_mut().for_each(|x| *x = rng.random_range(-scale..scale));
        }
        p
    }

    pub fn heads(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        dimension_ladder(self.alphabet, self.length, &self.heads())
    }

    pub fn output_dim(&self) -> usize {
        self.w_o.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.iter().any(|a| a.shape() != (dims[l], dims[l])) {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} attention must be {}x{}",
                    l + 1,
                    dims[l],
                    dims[l]
                )));
            }
        }
        if self.w_o.cols() != *dims.last().unwrap() {
            return Err(Error::DimensionMismatch(format!(
                "output matrix has {} columns, ladder ends at {}",
                self.w_o.cols(),
                dims.last().unwrap()
            )));
        }
        Ok(())
    }

    /// Cheap content hash used to detect traces from other parameters.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for m in self.layers.iter().flatten().chain(std::iter::once(&self.w_o)) {
            m.shape().hash(&mut h);
            for x in m.as_slice() {
                x.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.len() != self.length {
            return Err(Error::DimensionMismatch(format!(
                "expected {} tokens, got {}",
                self.length,
                tokens.len()
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&s| s >= self.alphabet) {
            return Err(Error::Domain(format!("token {bad} outside alphabet of size {}", self.alphabet)));
        }
        Ok(())
    }

    pub fn forward(&self, tokens: &[usize], mode: OutputMode) -> Result<(Matrix, ForwardTrace)> {
        self.validate()?;
        self.check_tokens(tokens)?;
        let mut streams = vec![disentangled_input(tokens, self.alphabet)];
        let mut patterns = Vec::with_capacity(self.depth());
        for layer in &self.layers {
            let h = streams.last().unwrap();
            let mut next = h.clone();
            let mut layer_patterns = Vec::with_capacity(layer.len());
            for a in layer {
                let p = causal_pattern(h, a);
                next = next.hcat(&p.matmul(h));
                layer_patterns.push(p);
            }
            patterns.push(layer_patterns);
            streams.push(next);
        }
        let last = streams.last().unwrap();
        let output = match mode {
            OutputMode::AllPositions => last.matmul_t(&self.w_o),
            OutputMode::LastToken => {
                let row = Matrix::from_vec(1, last.cols(), last.row(last.rows() - 1).to_vec());
                row.matmul_t(&self.w_o)
            }
        };
        Ok((
            output,
            ForwardTrace {
                streams,
                patterns,
                mode,
                fingerprint: self.fingerprint(),
            },
        ))
    }

    /// Reverse-mode gradients of a scalar loss given `∂loss/∂output`.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &Matrix) -> Result<DisentangledGrads> {
        if trace.fingerprint != self.fingerprint() {
            return Err(Error::StaleTrace("trace was produced by different parameters".into()));
        }
        let last = trace.streams.last().unwrap();
        let t = last.rows();
        let d_out = self.output_dim();
        // expand last-token upstream to all rows
        let dy = match trace.mode {
            OutputMode::AllPositions => {
                if upstream.shape() != (t, d_out) {
                    return Err(Error::DimensionMismatch("upstream gradient shape".into()));
                }
                upstream.clone()
            }
            OutputMode::LastToken => {
                if upstream.shape() != (1, d_out) {
                    return Err(Error::DimensionMismatch("upstream gradient shape".into()));
                }
                let mut full = Matrix::zeros(t, d_out);
                full.row_mut(t - 1).copy_from_slice(upstream.row(0));
                full
            }
        };
        let w_o = dy.t_matmul(last);
        let mut dh = dy.matmul(&self.w_o);
        let mut layers: Vec<Vec<Matrix>> = vec![Vec::new(); self.depth()];
        for l in (0..self.depth()).rev() {
            let h = &trace.streams[l];
            let d = h.cols();
            let mut dh_prev = dh.block(0, 0, t, d);
            for (i, a) in self.layers[l].iter().enumerate() {
                let p = &trace.patterns[l][i];
                let d_out_head = dh.block(0, (i + 1) * d, t, d);
                // o = P h
                dh_prev.add_mut(&p.t_matmul(&d_out_head));
                let mut dz = Matrix::zeros(t, t);
                for r in 0..t {
                    let dp: Vec<f64> = (0..=r).map(|c| dot(d_out_head.row(r), h.row(c))).collect();
                    let g = softmax_jacobian_apply(&p.row(r)[..=r], &dp);
                    dz.row_mut(r)[..=r].copy_from_slice(&g);
                }
                // z = h A h^T
                let dz_h = dz.matmul(h);
                layers[l].push(h.t_matmul(&dz_h));
                dh_prev.add_mut(&dz_h.matmul_t(a));
                dh_prev.add_mut(&dz.t_matmul(h).matmul(a));
            }
            dh = dh_prev;
        }
        Ok(DisentangledGrads { layers, w_o })
    }
}

/// Residual streams `h^(0..L)` and softmax patterns of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub streams: Vec<Matrix>,
    pub patterns: Vec<Vec<Matrix>>,
    pub mode: OutputMode,
    fingerprint: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisentangledGrads {
    pub layers: Vec<Vec<Matrix>>,
    pub w_o: Matrix,
}

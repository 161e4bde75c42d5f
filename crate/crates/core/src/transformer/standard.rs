use super::attention::causal_attention;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;
use rand::Rng as _;

/// Query, key and value maps of one head, each `d×d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

/// Attention-only decoder with additive residual stream.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardParams {
    pub alphabet: usize,
    pub length: usize,
    /// `d×S`
    pub embed: Matrix,
    /// `d×T`
    pub position: Matrix,
    pub layers: Vec<Vec<Head>>,
    /// `d_out×d`
    pub w_o: Matrix,
}

impl StandardParams {
    pub fn hidden(&self) -> usize {
        self.embed.rows()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn heads(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    pub fn output_dim(&self) -> usize {
        self.w_o.rows()
    }

    /// Entries i.i.d. uniform in `[-scale, scale]`.
    pub fn random(
        alphabet: usize,
        length: usize,
        hidden: usize,
        heads: &[usize],
        output_dim: usize,
        scale: f64,
        rng: &mut Rng,
    ) -> Self {
        let mut draw = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale));
        let embed = draw(hidden, alphabet);
        let position = draw(hidden, length);
        let layers = heads
            .iter()
            .map(|&m| {
                (0..m)
                    .map(|_| Head {
                        q: draw(hidden, hidden),
                        k: draw(hidden, hidden),
                        v: draw(hidden, hidden),
                    })
                    .collect()
            })
            .collect();
        let w_o = draw(output_dim, hidden);
        Self {
            alphabet,
            length,
            embed,
            position,
            layers,
            w_o,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.hidden();
        let ok = self.embed.cols() == self.alphabet
            && self.position.shape() == (d, self.length)
            && self.w_o.cols() == d
            && self
                .layers
                .iter()
                .flatten()
                .all(|h| h.q.shape() == (d, d) && h.k.shape() == (d, d) && h.v.shape() == (d, d));
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch("standard transformer parameter shapes disagree".into()))
        }
    }

    /// Residual stream `h^(0)` with rows `E e_{s_i} + P e_i`.
    pub fn embed_tokens(&self, tokens: &[usize]) -> Result<Matrix> {
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
        let d = self.hidden();
        Ok(Matrix::from_fn(self.length, d, |i, a| {
            self.embed[(a, tokens[i])] + self.position[(a, i)]
        }))
    }

    /// All-position outputs `h^(L) W_O^T`.
    pub fn forward(&self, tokens: &[usize]) -> Result<Matrix> {
        self.validate()?;
        let mut h = self.embed_tokens(tokens)?;
        for layer in &self.layers {
            let mut next = h.clone();
            for head in layer {
                let a = head.q.matmul_t(&head.k);
                let (o, _) = causal_attention(&h, &a);
                next.add_mut(&o.matmul_t(&head.v));
            }
            h = next;
        }
        Ok(h.matmul_t(&self.w_o))
    }
}

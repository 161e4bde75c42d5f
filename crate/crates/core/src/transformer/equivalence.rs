//! Exact maps between the standard and disentangled parameterisations.

use super::disentangled::{dimension_ladder, DisentangledParams};
use super::standard::{Head, StandardParams};
use crate::error::Result;
use crate::linalg::Matrix;

/// Disentangled parameters computing the same function as `std`.
///
/// With `Z^(0) = [E, P]` and `Z^(ℓ) = [Z^(ℓ−1), V_1 Z^(ℓ−1), …, V_m Z^(ℓ−1)]`,
/// the standard stream satisfies `h^(ℓ) = h̃^(ℓ) Z^(ℓ)ᵀ`, so
/// `Ã_i^(ℓ) = Z^(ℓ−1)ᵀ Q_i K_iᵀ Z^(ℓ−1)` and `W̃_O = W_O Z^(L)`.
pub fn disentangle(std: &StandardParams) -> Result<DisentangledParams> {
    std.validate()?;
    let mut z = std.embed.hcat(&std.position);
    let mut layers = Vec::with_capacity(std.depth());
    for layer in &std.layers {
        let mut mats = Vec::with_capacity(layer.len());
        let mut next = z.clone();
        for head in layer {
            let qk = head.q.matmul_t(&head.k);
            mats.push(z.t_matmul(&qk.matmul(&z)));
            next = next.hcat(&head.v.matmul(&z));
        }
        layers.push(mats);
        z = next;
    }
    Ok(DisentangledParams {
        alphabet: std.alphabet,
        length: std.length,
        layers,
        w_o: std.w_o.matmul(&z),
    })
}

/// Standard parameters of hidden dimension `d_L` computing the same function.
///
/// The standard stream carries `[h̃^(ℓ), 0]`: `Q_i = diag(Ã_i, 0)`,
/// `K_i = diag(I, 0)`, and `V_i` copies the first `d_{ℓ−1}` coordinates into
/// block `i` (offset `i·d_{ℓ−1}`).
pub fn entangle(dis: &DisentangledParams) -> Result<StandardParams> {
    dis.validate()?;
    let dims = dimension_ladder(dis.alphabet, dis.length, &dis.heads());
    let hidden = *dims.last().unwrap();
    let (s, t) = (dis.alphabet, dis.length);
    let embed = Matrix::from_fn(hidden, s, |a, b| if a == b { 1.0 } else { 0.0 });
    let position = Matrix::from_fn(hidden, t, |a, b| if a == s + b { 1.0 } else { 0.0 });
    let mut layers = Vec::with_capacity(dis.depth());
    for (l, mats) in dis.layers.iter().enumerate() {
        let d = dims[l];
        let heads = mats
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let mut q = Matrix::zeros(hidden, hidden);
                q.set_block(0, 0, a);
                let mut k = Matrix::zeros(hidden, hidden);
                k.set_block(0, 0, &Matrix::identity(d));
                let mut v = Matrix::zeros(hidden, hidden);
                v.set_block((i + 1) * d, 0, &Matrix::identity(d));
                Head { q, k, v }
            })
            .collect();
        layers.push(heads);
    }
    Ok(StandardParams {
        alphabet: s,
        length: t,
        embed,
        position,
        layers,
        w_o: dis.w_o.clone(),
    })
}

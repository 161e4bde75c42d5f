use crate::linalg::{dot, softmax_in_place, Matrix};

/// `attn(h; A) = S(MASK(h A h^T)) h`.
///
/// Returns the output and the lower-triangular attention pattern. The mask is
/// applied by restricting each row's softmax to `j ≤ i`.
pub fn causal_attention(h: &Matrix, a: &Matrix) -> (Matrix, Matrix) {
    let pattern = causal_pattern(h, a);
    (pattern.matmul(h), pattern)
}

/// `S(MASK(h A h^T))` alone.
pub fn causal_pattern(h: &Matrix, a: &Matrix) -> Matrix {
    let t = h.rows();
    let ha = h.matmul(a);
    let mut pattern = Matrix::zeros(t, t);
    for i in 0..t {
        let row = pattern.row_mut(i);
        for j in 0..=i {
            row[j] = dot(ha.row(i), h.row(j));
        }
        softmax_in_place(&mut row[..=i]);
    }
    pattern
}

/// Row-wise causal softmax of an arbitrary square score matrix.
pub fn causal_softmax(scores: &Matrix) -> Matrix {
    let t = scores.rows();
    let mut pattern = Matrix::zeros(t, t);
    for i in 0..t {
        let row = pattern.row_mut(i);
        row[..=i].copy_from_slice(&scores.row(i)[..=i]);
        softmax_in_place(&mut row[..=i]);
    }
    pattern
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_scores_give_uniform_prefix_rows() {
        let h = Matrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64 * 0.1);
        let (_, p) = causal_attention(&h, &Matrix::zeros(3, 3));
        for i in 0..5 {
            for j in 0..5 {
                let want = if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 };
                assert!((p[(i, j)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn huge_scores_do_not_overflow() {
        let h = Matrix::identity(4);
        let (out, p) = causal_attention(&h, &Matrix::scaled_identity(4, 1e300));
        assert!(out.is_finite() && p.is_finite());
        for i in 0..4 {
            assert!((p[(i, i)] - 1.0).abs() < 1e-15);
        }
    }
}

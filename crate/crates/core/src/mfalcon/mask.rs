use crate::numeric::Mask;

/// Causal mask over `n + bm` tokens where the last `bm` (candidate) tokens
/// cannot see each other.
pub fn build_mfalcon_mask(n: usize, bm: usize) -> Mask {
    Mask::from_fn(n + bm, n + bm, |i, j| j <= i && (i < n || j < n || i == j))
}

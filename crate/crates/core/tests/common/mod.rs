#![allow(dead_code)]

use attnonly::sampling::{gaussian_matrix, seeded_rng, weight_matrix, Rng};
use attnonly::{AttentionHead, GeneralizedSilu, LayerNormConfig, MaskMatrix, Matrix, Mlp, Sublayer, TransformerSpec};
use rand::Rng as _;

pub fn random_mlp(rng: &mut Rng, d: usize, l: usize, a1: f64, a2: f64) -> Mlp<f64> {
    let v1 = weight_matrix(rng, d, l, d);
    let v2 = weight_matrix(rng, l, d, l);
    Mlp::new(v1, v2, GeneralizedSilu::new(a1, a2).unwrap()).unwrap()
}

pub fn random_head(rng: &mut Rng, d: usize, mask: MaskMatrix) -> AttentionHead<f64> {
    let w_qk = weight_matrix(rng, d, d, d);
    let w_ov = weight_matrix(rng, d, d, d);
    AttentionHead::new(w_qk, w_ov, mask).unwrap()
}

/// Random mask with every diagonal entry set.
pub fn random_mask(rng: &mut Rng, n: usize, density: f64) -> MaskMatrix {
    MaskMatrix::from_fn(n, n, |i, j| i == j || rng.random_bool(density)).unwrap()
}

/// Random superset of `inner`.
pub fn random_superset(rng: &mut Rng, inner: &MaskMatrix, density: f64) -> MaskMatrix {
    let (r, c) = inner.shape();
    MaskMatrix::from_fn(r, c, |i, j| inner.get(i, j) || rng.random_bool(density)).unwrap()
}

/// Random superset of `inner` with at least one extra entry; `inner` must not
/// be all ones.
pub fn strict_superset(rng: &mut Rng, inner: &MaskMatrix, density: f64) -> MaskMatrix {
    loop {
        let m = random_superset(rng, inner, density);
        if &m != inner {
            return m;
        }
    }
}

/// attn / MLP / attn / MLP with two causal heads per attention sublayer.
pub fn toy_transformer(seed: u64, n: usize, d: usize, l: usize, layernorm: bool) -> TransformerSpec<f64> {
    let mut rng = seeded_rng(seed);
    let mut sublayers = Vec::new();
    for _ in 0..2 {
        let heads = (0..2)
            .map(|_| random_head(&mut rng, d, MaskMatrix::upper_triangular(n)))
            .collect();
        sublayers.push(Sublayer::Attention(heads));
        sublayers.push(Sublayer::Mlp(random_mlp(&mut rng, d, l, 1.0 / 1.702, 1.702)));
    }
    let ln = if layernorm {
        LayerNormConfig::enabled(d)
    } else {
        LayerNormConfig::disabled(d)
    };
    TransformerSpec::new(n, d, sublayers, ln).unwrap()
}

pub fn gaussian(rng: &mut Rng, r: usize, c: usize) -> Matrix<f64> {
    gaussian_matrix(rng, r, c, 1.0)
}

pub fn bits_equal(a: &Matrix<f64>, b: &Matrix<f64>) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

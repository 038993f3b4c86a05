//! Explicit head constructions: MLP neurons as attention heads, head lifting
//! onto a bias-augmented stream, whole-model transpilation, linear and
//! activation heads, and masks encoded into `W_QK` ("pseudo-masking").
//!
//! Bias augmentation appends one row and one column to the stream,
//! `X ↦ X ⊕ [1]`, so every position can attend to a static bias token.

use crate::activations::GeneralizedSilu;
use crate::error::{dim_err, Error, Result};
use crate::matrix::{MaskMatrix, Matrix};
use crate::nn::{AttentionHead, FactoredHead, LayerNormConfig, Mlp, MlpActivation, Sublayer, TransformerSpec};
use crate::scalar::Scalar;

/// `X ⊕ [1]`.
pub fn bias_augment<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    x.direct_sum(&Matrix::scalar(T::one()))
}

/// Leading `(N-1) x (D-1)` block of a bias-augmented stream.
pub fn strip_bias<T: Scalar>(x: &Matrix<T>) -> Result<Matrix<T>> {
    if x.rows() < 2 || x.cols() < 2 {
        return Err(dim_err(
            "strip_bias",
            format!("{:?} has no bias row and column", x.shape()),
        ));
    }
    x.block(0, 0, x.rows() - 1, x.cols() - 1)
}

/// `[[I_N, 1], [0, 1]]`: each token sees itself and the trailing bias token,
/// which sees only itself.
pub fn neuron_mask(n: usize) -> MaskMatrix {
    MaskMatrix::from_fn(n + 1, n + 1, |i, j| i == j || j == n).expect("neuron mask is valid")
}

fn check_neuron(v1: &Matrix<impl Scalar>, v2: &Matrix<impl Scalar>) -> Result<usize> {
    let d = v1.rows();
    if v1.cols() != 1 || v2.shape() != (1, d) {
        return Err(dim_err(
            "neuron",
            format!(
                "expected a D x 1 column and a 1 x D row, got {:?} and {:?}",
                v1.shape(),
                v2.shape()
            ),
        ));
    }
    Ok(d)
}

/// The dimension-1 head computing one hidden unit `a1 SiLU(a2 X v1) v2` on a
/// bias-augmented stream of `n + 1` rows.
///
/// `W_QK` holds `-a2 v1` in its last column, so each token scores 0 against
/// itself and `-a2 (X v1)_j` against the bias token; the two-way softmax then
/// puts `σ(a2 (X v1)_j)` on the diagonal. `W_OV = a1 a2 v1 v2 ⊕ [0]`.
pub fn neuron_to_head<T: Scalar>(
    v1: &Matrix<T>,
    v2: &Matrix<T>,
    a1: T,
    a2: T,
    n: usize,
) -> Result<AttentionHead<T>> {
    let d = check_neuron(v1, v2)?;
    if n == 0 {
        return Err(dim_err("neuron_to_head", "context length must be positive"));
    }
    let w_qk = Matrix::from_fn(d + 1, d + 1, |i, j| {
        if i < d && j == d {
            -(a2 * v1.get(i, 0))
        } else {
            T::zero()
        }
    });
    let w_ov = v1.matmul(v2)?.scale(a1 * a2).direct_sum(&Matrix::scalar(T::zero()));
    AttentionHead::new(w_qk, w_ov, neuron_mask(n))
}

/// One head per hidden unit; the heads sum to `f(X) ⊕ [0]` on `X ⊕ [1]`.
pub fn mlp_to_heads<T: Scalar>(f: &Mlp<T>, n: usize) -> Result<Vec<AttentionHead<T>>> {
    let act = silu_family(f)?;
    (0..f.hidden_size())
        .map(|i| neuron_to_head(&f.v1().column(i), &f.v2().row_matrix(i), act.a1, act.a2, n))
        .collect()
}

fn silu_family<T: Scalar>(f: &Mlp<T>) -> Result<GeneralizedSilu<T>> {
    f.activation().as_generalized_silu().ok_or_else(|| {
        let name = match f.activation() {
            MlpActivation::Reference(r) => r.name().to_string(),
            other => format!("{other:?}"),
        };
        Error::UnsupportedActivation(format!("{name} is not of the form a1*SiLU(a2*x)"))
    })
}

/// Rank-1 factors of [`neuron_to_head`]'s weights:
/// `W_Q = W_V = a2 [v1 | 0]ᵀ`, `W_K = √(D+1) [0 | -1]ᵀ`, `W_O = a1 [v2 | 0]ᵀ`.
pub fn factor_neuron_head<T: Scalar>(
    v1: &Matrix<T>,
    v2: &Matrix<T>,
    a1: T,
    a2: T,
    d: usize,
) -> Result<FactoredHead<T>> {
    let width = check_neuron(v1, v2)?;
    if width != d {
        return Err(dim_err(
            "factor_neuron_head",
            format!("neuron has width {width}, expected {d}"),
        ));
    }
    let root = T::lit((d + 1) as f64).sqrt();
    let w_q = Matrix::from_fn(d + 1, 1, |i, _| if i < d { a2 * v1.get(i, 0) } else { T::zero() });
    let w_k = Matrix::from_fn(d + 1, 1, |i, _| if i == d { -root } else { T::zero() });
    let w_o = Matrix::from_fn(d + 1, 1, |i, _| if i < d { a1 * v2.get(0, i) } else { T::zero() });
    Ok(FactoredHead {
        w_v: w_q.clone(),
        w_q,
        w_k,
        w_o,
    })
}

/// Rewrites a head on `N x D` streams into one on `(N+1) x (D+1)` streams with
/// `h'(X ⊕ [1]) = h(X) ⊕ [0]`: `W_QK ⊕ [1]`, `W_OV ⊕ [0]`, `Λ ⊕ [1]`.
pub fn lift_head<T: Scalar>(h: &AttentionHead<T>) -> AttentionHead<T> {
    AttentionHead::new(
        h.w_qk().direct_sum(&Matrix::scalar(T::one())),
        h.w_ov().direct_sum(&Matrix::scalar(T::zero())),
        h.mask().direct_sum_one(),
    )
    .expect("lifting preserves head shape invariants")
}

/// Converts a transformer on `N x D` into an attention-only transformer on
/// `(N+1) x (D+1)` whose streams are the originals with a bias row and column
/// appended. Callers feed it `bias_augment(X0)`.
///
/// LayerNorm in the result covers the same leading columns as the original,
/// so the bias column is never normalized.
pub fn transpile<T: Scalar>(t: &TransformerSpec<T>) -> Result<TransformerSpec<T>> {
    let n = t.n();
    let sublayers = t
        .sublayers()
        .iter()
        .map(|sub| match sub {
            Sublayer::Attention(heads) => Ok(Sublayer::Attention(heads.iter().map(lift_head).collect())),
            Sublayer::Mlp(f) => mlp_to_heads(f, n).map(Sublayer::Attention),
        })
        .collect::<Result<Vec<_>>>()?;
    let ln = t.layernorm();
    TransformerSpec::new(
        n + 1,
        t.d() + 1,
        sublayers,
        LayerNormConfig {
            enabled: ln.enabled,
            epsilon: ln.epsilon,
            normalized_width: ln.normalized_width,
        },
    )
}

/// Head with `Λ = I_N`, so its pattern is the identity and `h(X) = X W`.
pub fn identity_mask_linear_head<T: Scalar>(w: &Matrix<T>, n: usize) -> Result<AttentionHead<T>> {
    if w.rows() != w.cols() {
        return Err(dim_err(
            "identity_mask_linear_head",
            format!("W is {:?}, expected square", w.shape()),
        ));
    }
    if n == 0 {
        return Err(dim_err("identity_mask_linear_head", "context length must be positive"));
    }
    AttentionHead::new(Matrix::zeros(w.rows(), w.cols()), w.clone(), MaskMatrix::identity(n))
}

/// `D` heads on `(N+1) x (D+1)` streams summing to `α(X) ⊕ [0]`: the neuron
/// heads of the MLP `X ↦ α(X I_D) I_D`.
pub fn activation_heads<T: Scalar>(alpha: GeneralizedSilu<T>, d: usize, n: usize) -> Result<Vec<AttentionHead<T>>> {
    if d == 0 {
        return Err(dim_err("activation_heads", "width must be positive"));
    }
    let f = Mlp::new(Matrix::identity(d), Matrix::identity(d), alpha)?;
    mlp_to_heads(&f, n)
}

/// The `D` activation heads plus a linear head with `W = (-I_D) ⊕ [0]`, so a
/// skip connection maps `X ⊕ [1]` to `α(X) ⊕ [1]`.
pub fn activation_with_skip_heads<T: Scalar>(
    alpha: GeneralizedSilu<T>,
    d: usize,
    n: usize,
) -> Result<Vec<AttentionHead<T>>> {
    let mut heads = activation_heads(alpha, d, n)?;
    let minus_identity = Matrix::identity(d)
        .scale(-T::one())
        .direct_sum(&Matrix::scalar(T::zero()));
    heads.push(identity_mask_linear_head(&minus_identity, n + 1)?);
    Ok(heads)
}

/// `[X | I_N]`.
pub fn identity_augment<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    x.hconcat(&Matrix::identity(x.rows()))
        .expect("identity has matching row count")
}

/// Norm bound `B = sup ‖X‖` over the inputs under consideration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompactSetBound<T: Scalar = f64>(T);

impl<T: Scalar> CompactSetBound<T> {
    pub fn new(b: T) -> Result<Self> {
        if !(b >= T::zero()) || !b.is_finite() {
            return Err(Error::Domain(format!("norm bound must be finite and >= 0, got {b}")));
        }
        Ok(Self(b))
    }

    pub fn value(self) -> T {
        self.0
    }
}

/// Offset `Ω`, the mask `lambda1` to encode, and the mask `lambda2` the new
/// head runs under (`lambda1 <= lambda2` entrywise).
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoMaskParams<T: Scalar = f64> {
    omega: T,
    lambda1: MaskMatrix,
    lambda2: MaskMatrix,
}

impl<T: Scalar> PseudoMaskParams<T> {
    pub fn new(omega: T, lambda1: MaskMatrix, lambda2: MaskMatrix) -> Result<Self> {
        if !(omega > T::zero()) || !omega.is_finite() {
            return Err(Error::Domain(format!("omega must be finite and > 0, got {omega}")));
        }
        check_dominance(&lambda1, &lambda2)?;
        Ok(Self {
            omega,
            lambda1,
            lambda2,
        })
    }

    pub fn omega(&self) -> T {
        self.omega
    }

    pub fn lambda1(&self) -> &MaskMatrix {
        &self.lambda1
    }

    pub fn lambda2(&self) -> &MaskMatrix {
        &self.lambda2
    }
}

pub(crate) fn check_dominance(lambda1: &MaskMatrix, lambda2: &MaskMatrix) -> Result<()> {
    match lambda1.first_excess_over(lambda2)? {
        None => Ok(()),
        Some((row, col)) => Err(Error::MaskDominance {
            target: "lambda1",
            available: "lambda2",
            row,
            col,
        }),
    }
}

/// Encodes the head's own mask into its weights so it can run under the
/// looser mask `lambda2` on `[X | I_N]`:
/// `W_QK ⊕ Ω Λ1`, `W_OV ⊕ 0`. The output approaches `[h(X) | 0]` as `Ω`
/// grows.
pub fn pseudo_mask_head<T: Scalar>(h: &AttentionHead<T>, params: &PseudoMaskParams<T>) -> Result<AttentionHead<T>> {
    if params.lambda1() != h.mask() {
        return Err(Error::Domain(
            "pseudo-mask target pattern must equal the head's own mask".to_string(),
        ));
    }
    check_dominance(params.lambda1(), params.lambda2())?;
    let n = h.context();
    let omega = params.omega();
    let w_qk = h
        .w_qk()
        .direct_sum(&params.lambda1().to_matrix::<T>().scale(omega));
    let w_ov = h.w_ov().direct_sum(&Matrix::zeros(n, n));
    AttentionHead::new(w_qk, w_ov, params.lambda2().clone())
}

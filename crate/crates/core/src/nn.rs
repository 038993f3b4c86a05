//! Forward passes for one-hidden-layer MLPs, masked attention heads,
//! LayerNorm and whole residual-stream transformers.

use crate::activations::{Activation, GeneralizedSilu, ReferenceActivation};
use crate::error::{dim_err, Error, Result};
use crate::matrix::{masked_softmax, MaskMatrix, Matrix};
use crate::scalar::Scalar;

/// Activation of an MLP sublayer. Only the generalized SiLU family (which
/// includes plain SiLU) can be rewritten into attention heads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MlpActivation<T: Scalar = f64> {
    Silu(GeneralizedSilu<T>),
    Reference(ReferenceActivation),
}

impl<T: Scalar> MlpActivation<T> {
    /// The `(a1, a2)` form, if this activation is in the SiLU family.
    pub fn as_generalized_silu(&self) -> Option<GeneralizedSilu<T>> {
        match *self {
            Self::Silu(g) => Some(g),
            Self::Reference(ReferenceActivation::Silu) => Some(GeneralizedSilu::silu()),
            Self::Reference(_) => None,
        }
    }
}

impl<T: Scalar> Activation<T> for MlpActivation<T> {
    fn eval(&self, x: T) -> T {
        match self {
            Self::Silu(g) => g.eval(x),
            Self::Reference(r) => r.eval(x),
        }
    }
}

impl<T: Scalar> From<GeneralizedSilu<T>> for MlpActivation<T> {
    fn from(g: GeneralizedSilu<T>) -> Self {
        Self::Silu(g)
    }
}

impl<T: Scalar> From<ReferenceActivation> for MlpActivation<T> {
    fn from(r: ReferenceActivation) -> Self {
        Self::Reference(r)
    }
}

/// Bias-free MLP with one hidden layer: `X ↦ α(X V1) V2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Scalar = f64> {
    v1: Matrix<T>,
    v2: Matrix<T>,
    activation: MlpActivation<T>,
}

impl<T: Scalar> Mlp<T> {
    /// `v1` is `k x ℓ`, `v2` is `ℓ x k`.
    pub fn new(v1: Matrix<T>, v2: Matrix<T>, activation: impl Into<MlpActivation<T>>) -> Result<Self> {
        if v1.cols() != v2.rows() || v1.rows() != v2.cols() {
            return Err(dim_err(
                "mlp",
                format!(
                    "v1 is {}x{} but v2 is {}x{}; expected k x l and l x k",
                    v1.rows(),
                    v1.cols(),
                    v2.rows(),
                    v2.cols()
                ),
            ));
        }
        Ok(Self {
            v1,
            v2,
            activation: activation.into(),
        })
    }

    pub fn v1(&self) -> &Matrix<T> {
        &self.v1
    }

    pub fn v2(&self) -> &Matrix<T> {
        &self.v2
    }

    pub fn activation(&self) -> &MlpActivation<T> {
        &self.activation
    }

    pub fn width(&self) -> usize {
        self.v1.rows()
    }

    pub fn hidden_size(&self) -> usize {
        self.v1.cols()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        mlp_forward(self, x)
    }
}

pub fn mlp_forward<T: Scalar>(f: &Mlp<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    let pre = x.matmul(&f.v1)?;
    f.activation.apply(&pre).matmul(&f.v2)
}

/// Masked attention head `X ↦ msoftmax(X W_QK Xᵀ, Λ) X W_OV`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead<T: Scalar = f64> {
    w_qk: Matrix<T>,
    w_ov: Matrix<T>,
    mask: MaskMatrix,
}

impl<T: Scalar> AttentionHead<T> {
    pub fn new(w_qk: Matrix<T>, w_ov: Matrix<T>, mask: MaskMatrix) -> Result<Self> {
        let k = w_qk.rows();
        if w_qk.cols() != k || w_ov.shape() != (k, k) {
            return Err(dim_err(
                "attention head",
                format!(
                    "w_qk is {:?} and w_ov is {:?}; both must be the same square size",
                    w_qk.shape(),
                    w_ov.shape()
                ),
            ));
        }
        if !mask.is_square() {
            return Err(dim_err(
                "attention head",
                format!("mask is {:?}, expected square", mask.shape()),
            ));
        }
        Ok(Self { w_qk, w_ov, mask })
    }

    pub fn w_qk(&self) -> &Matrix<T> {
        &self.w_qk
    }

    pub fn w_ov(&self) -> &Matrix<T> {
        &self.w_ov
    }

    pub fn mask(&self) -> &MaskMatrix {
        &self.mask
    }

    /// Residual width `k` the head acts on.
    pub fn width(&self) -> usize {
        self.w_qk.rows()
    }

    /// Number of stream rows (context length) the mask covers.
    pub fn context(&self) -> usize {
        self.mask.rows()
    }

    /// The attention pattern `msoftmax(X W_QK Xᵀ, Λ)`.
    pub fn pattern(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(x)?;
        let scores = x.matmul(&self.w_qk)?.matmul(&x.transpose())?;
        masked_softmax(&scores, &self.mask)
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        head_forward(self, x)
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.rows() != self.context() || x.cols() != self.width() {
            return Err(dim_err(
                "head_forward",
                format!(
                    "input is {:?}, head expects {}x{}",
                    x.shape(),
                    self.context(),
                    self.width()
                ),
            ));
        }
        Ok(())
    }
}

pub fn head_forward<T: Scalar>(h: &AttentionHead<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    let pattern = h.pattern(x)?;
    pattern.matmul(x)?.matmul(&h.w_ov)
}

/// Sum of head outputs, accumulated in list order.
pub fn heads_forward<T: Scalar>(heads: &[AttentionHead<T>], x: &Matrix<T>) -> Result<Matrix<T>> {
    let mut acc = Matrix::zeros(x.rows(), x.cols());
    for h in heads {
        acc = acc.add(&head_forward(h, x)?)?;
    }
    Ok(acc)
}

/// Query/key/value/output factors of a head. All four are `k x r`;
/// recomposition gives `W_QK = W_Q W_Kᵀ / √k` and `W_OV = W_V W_Oᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredHead<T: Scalar = f64> {
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
    pub w_o: Matrix<T>,
}

pub fn factored_to_head<T: Scalar>(fh: &FactoredHead<T>, mask: MaskMatrix) -> Result<AttentionHead<T>> {
    let shape = fh.w_q.shape();
    if [&fh.w_k, &fh.w_v, &fh.w_o].iter().any(|m| m.shape() != shape) {
        return Err(dim_err(
            "factored head",
            format!(
                "factor shapes differ: q {:?}, k {:?}, v {:?}, o {:?}",
                fh.w_q.shape(),
                fh.w_k.shape(),
                fh.w_v.shape(),
                fh.w_o.shape()
            ),
        ));
    }
    let scale = T::lit(shape.0 as f64).sqrt();
    let w_qk = fh.w_q.matmul(&fh.w_k.transpose())?.map(|x| x / scale);
    let w_ov = fh.w_v.matmul(&fh.w_o.transpose())?;
    AttentionHead::new(w_qk, w_ov, mask)
}

/// LayerNorm without gain or bias, applied per row over the leading
/// `normalized_width` columns; later columns pass through unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNormConfig<T: Scalar = f64> {
    pub enabled: bool,
    pub epsilon: T,
    pub normalized_width: usize,
}

impl<T: Scalar> LayerNormConfig<T> {
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn enabled(normalized_width: usize) -> Self {
        Self {
            enabled: true,
            epsilon: T::lit(Self::DEFAULT_EPSILON),
            normalized_width,
        }
    }

    pub fn disabled(normalized_width: usize) -> Self {
        Self {
            enabled: false,
            ..Self::enabled(normalized_width)
        }
    }
}

pub fn layer_norm<T: Scalar>(x: &Matrix<T>, cfg: &LayerNormConfig<T>) -> Result<Matrix<T>> {
    let w = cfg.normalized_width;
    if w == 0 || w > x.cols() {
        return Err(dim_err(
            "layer_norm",
            format!("normalized width {w} with {} columns", x.cols()),
        ));
    }
    let width = T::lit(w as f64);
    let mut out = x.clone();
    for i in 0..x.rows() {
        let seg = &x.row(i)[..w];
        let mean = seg.iter().fold(T::zero(), |a, &v| a + v) / width;
        let var = seg
            .iter()
            .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
            / width;
        let denom = (var + cfg.epsilon).sqrt();
        for (j, &v) in seg.iter().enumerate() {
            out.set(i, j, (v - mean) / denom);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sublayer<T: Scalar = f64> {
    Attention(Vec<AttentionHead<T>>),
    Mlp(Mlp<T>),
}

impl<T: Scalar> Sublayer<T> {
    /// Output added to the residual stream (before the skip connection).
    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        match self {
            Self::Attention(heads) => heads_forward(heads, x),
            Self::Mlp(f) => mlp_forward(f, x),
        }
    }
}

/// A residual-stream transformer on `N x D` matrices:
/// `X_{j+1} = LayerNorm(X_j + sublayer_j(X_j))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerSpec<T: Scalar = f64> {
    n: usize,
    d: usize,
    sublayers: Vec<Sublayer<T>>,
    layernorm: LayerNormConfig<T>,
}

impl<T: Scalar> TransformerSpec<T> {
    pub fn new(
        n: usize,
        d: usize,
        sublayers: Vec<Sublayer<T>>,
        layernorm: LayerNormConfig<T>,
    ) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidModel(format!("stream shape {n}x{d} must be positive")));
        }
        if layernorm.normalized_width == 0 || layernorm.normalized_width > d {
            return Err(Error::InvalidModel(format!(
                "layernorm.normalized_width {} must lie in 1..={d}",
                layernorm.normalized_width
            )));
        }
        if !(layernorm.epsilon >= T::zero()) || !layernorm.epsilon.is_finite() {
            return Err(Error::InvalidModel("layernorm.epsilon must be finite and >= 0".into()));
        }
        for (s, sub) in sublayers.iter().enumerate() {
            match sub {
                Sublayer::Attention(heads) => {
                    if heads.is_empty() {
                        return Err(Error::InvalidModel(format!(
                            "sublayers[{s}]: attention sublayer has no heads"
                        )));
                    }
                    for (h, head) in heads.iter().enumerate() {
                        if head.width() != d || head.context() != n {
                            return Err(Error::InvalidModel(format!(
                                "sublayers[{s}].heads[{h}]: head acts on {}x{}, stream is {n}x{d}",
                                head.context(),
                                head.width()
                            )));
                        }
                    }
                }
                Sublayer::Mlp(f) => {
                    if f.width() != d {
                        return Err(Error::InvalidModel(format!(
                            "sublayers[{s}]: mlp width {} but stream width {d}",
                            f.width()
                        )));
                    }
                }
            }
        }
        Ok(Self {
            n,
            d,
            sublayers,
            layernorm,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn sublayers(&self) -> &[Sublayer<T>] {
        &self.sublayers
    }

    pub fn layernorm(&self) -> &LayerNormConfig<T> {
        &self.layernorm
    }

    pub fn forward(&self, x0: &Matrix<T>) -> Result<Matrix<T>> {
        transformer_forward(self, x0)
    }
}

fn step<T: Scalar>(t: &TransformerSpec<T>, sub: &Sublayer<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    let next = x.add(&sub.forward(x)?)?;
    if t.layernorm.enabled {
        layer_norm(&next, &t.layernorm)
    } else {
        Ok(next)
    }
}

fn check_stream<T: Scalar>(t: &TransformerSpec<T>, x0: &Matrix<T>) -> Result<()> {
    if x0.shape() != (t.n, t.d) {
        return Err(dim_err(
            "transformer_forward",
            format!("input is {:?}, model expects {}x{}", x0.shape(), t.n, t.d),
        ));
    }
    Ok(())
}

pub fn transformer_forward<T: Scalar>(t: &TransformerSpec<T>, x0: &Matrix<T>) -> Result<Matrix<T>> {
    check_stream(t, x0)?;
    t.sublayers
        .iter()
        .try_fold(x0.clone(), |x, sub| step(t, sub, &x))
}

/// Every residual stream `X_0, ..., X_m` of a forward pass.
pub fn transformer_trace<T: Scalar>(t: &TransformerSpec<T>, x0: &Matrix<T>) -> Result<Vec<Matrix<T>>> {
    check_stream(t, x0)?;
    let mut streams = Vec::with_capacity(t.sublayers.len() + 1);
    streams.push(x0.clone());
    for sub in &t.sublayers {
        let next = step(t, sub, streams.last().expect("non-empty"))?;
        streams.push(next);
    }
    Ok(streams)
}

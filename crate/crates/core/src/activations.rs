//! Generalized SiLU activations, the reference activations they approximate,
//! and a max-error scanner for comparing the two.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// A scalar function applied entrywise.
pub trait Activation<T: Scalar> {
    fn eval(&self, x: T) -> T;

    fn apply(&self, m: &Matrix<T>) -> Matrix<T> {
        m.map(|x| self.eval(x))
    }
}

/// Logistic sigmoid, evaluated without overflow for large `|x|`.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

/// Standard normal CDF via `erf`.
pub fn std_normal_cdf<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    half * (T::one() + (x / T::lit(std::f64::consts::SQRT_2)).erf())
}

/// Exact GeLU, `x Φ(x)`.
pub fn gelu<T: Scalar>(x: T) -> T {
    x * std_normal_cdf(x)
}

pub fn relu<T: Scalar>(x: T) -> T {
    x.max(T::zero())
}

/// `x ↦ a1 · SiLU(a2 · x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizedSilu<T: Scalar = f64> {
    pub a1: T,
    pub a2: T,
}

impl<T: Scalar> GeneralizedSilu<T> {
    pub fn new(a1: T, a2: T) -> Result<Self> {
        if !a1.is_finite() || !a2.is_finite() {
            return Err(Error::Domain(format!(
                "generalized SiLU scales must be finite (a1={a1}, a2={a2})"
            )));
        }
        Ok(Self { a1, a2 })
    }

    /// Plain SiLU.
    pub fn silu() -> Self {
        Self {
            a1: T::one(),
            a2: T::one(),
        }
    }

    /// `SiLU(1.702 x) / 1.702`, the usual sigmoid approximation of GeLU.
    pub fn gelu_approx() -> Self {
        let k = T::lit(1.702);
        Self {
            a1: T::one() / k,
            a2: k,
        }
    }

    /// `SiLU(k x) / k`, which tends to ReLU as `k` grows.
    pub fn relu_approx(k: T) -> Self {
        Self {
            a1: T::one() / k,
            a2: k,
        }
    }
}

impl<T: Scalar> Activation<T> for GeneralizedSilu<T> {
    fn eval(&self, x: T) -> T {
        self.a1 * silu(self.a2 * x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReferenceActivation {
    Silu,
    Gelu,
    Relu,
    Sigmoid,
}

impl ReferenceActivation {
    pub fn name(self) -> &'static str {
        match self {
            Self::Silu => "silu",
            Self::Gelu => "gelu",
            Self::Relu => "relu",
            Self::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for ReferenceActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReferenceActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "silu" => Ok(Self::Silu),
            "gelu" => Ok(Self::Gelu),
            "relu" => Ok(Self::Relu),
            "sigmoid" => Ok(Self::Sigmoid),
            other => Err(Error::UnsupportedActivation(other.to_string())),
        }
    }
}

impl<T: Scalar> Activation<T> for ReferenceActivation {
    fn eval(&self, x: T) -> T {
        match self {
            Self::Silu => silu(x),
            Self::Gelu => gelu(x),
            Self::Relu => relu(x),
            Self::Sigmoid => sigmoid(x),
        }
    }
}

/// Largest absolute deviation found by [`approx_error_scan`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorScan<T: Scalar = f64> {
    pub max_err: T,
    pub argmax: T,
}

const REFINE_RESOLUTION: f64 = 1e-6;

/// Scans `|target(x) - approx(x)|` on the grid `lo, lo + step, ..., hi`, then
/// refines the grid maximum by ternary search over the neighbouring cells.
///
/// When the error is symmetric about zero, the positive location is reported.
pub fn approx_error_scan<T: Scalar>(
    target: ReferenceActivation,
    approx: &GeneralizedSilu<T>,
    lo: T,
    hi: T,
    step: T,
) -> Result<ErrorScan<T>> {
    if !(lo < hi) || !(step > T::zero()) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Domain(format!(
            "scan needs lo < hi and step > 0 (lo={lo}, hi={hi}, step={step})"
        )));
    }
    let err = |x: T| (target.eval(x) - approx.eval(x)).abs();

    let cells = ((hi - lo) / step).floor().to_usize().ok_or_else(|| {
        Error::Domain("scan grid is too large".to_string())
    })?;
    let mut best = ErrorScan {
        max_err: T::neg_infinity(),
        argmax: lo,
    };
    for i in 0..=cells + 1 {
        let x = (lo + T::lit(i as f64) * step).min(hi);
        let e = err(x);
        if e > best.max_err {
            best = ErrorScan { max_err: e, argmax: x };
        }
    }

    let refine = |center: T| -> ErrorScan<T> {
        let mut a = (center - step).max(lo);
        let mut b = (center + step).min(hi);
        let third = T::lit(1.0 / 3.0);
        let res = T::lit(REFINE_RESOLUTION);
        while b - a > res {
            let m1 = a + (b - a) * third;
            let m2 = b - (b - a) * third;
            if err(m1) < err(m2) {
                a = m1;
            } else {
                b = m2;
            }
        }
        let x = (a + b) * T::lit(0.5);
        let candidate = ErrorScan { max_err: err(x), argmax: x };
        let at_center = ErrorScan {
            max_err: err(center),
            argmax: center,
        };
        if candidate.max_err >= at_center.max_err {
            candidate
        } else {
            at_center
        }
    };

    let mut out = refine(best.argmax);
    if out.argmax < T::zero() && -out.argmax <= hi {
        let mirrored = refine(-out.argmax);
        if mirrored.max_err >= out.max_err * (T::one() - T::lit(1e-9)) {
            out = mirrored;
        }
    }
    Ok(out)
}

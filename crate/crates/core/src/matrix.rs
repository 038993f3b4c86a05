//! Dense row-major matrices, 0/1 masks, and the block and softmax operations
//! the constructions are written in.

use std::fmt;
use std::ops::Index;

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

/// Dense real matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct Matrix<T: Scalar = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl<T: Scalar> Matrix<T> {
    /// Builds a matrix from row-major data, rejecting empty shapes,
    /// length mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::DataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(idx) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                row: idx / cols,
                col: idx % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n * k);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != k {
                return Err(dim_err(
                    "from_rows",
                    format!("row {i} has {} entries, expected {k}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Self::new(n, k, data)
    }

    /// Builds a matrix entry by entry. Finiteness is not checked; this is the
    /// constructor used for intermediate results.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(rows > 0 && cols > 0, "matrix shape must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| T::zero())
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| T::one())
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn scalar(x: T) -> Self {
        Self::from_fn(1, 1, |_, _| x)
    }

    pub fn column_vector(values: &[T]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn row_vector(values: &[T]) -> Result<Self> {
        Self::new(1, values.len(), values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Column `j` as a `rows x 1` matrix.
    pub fn column(&self, j: usize) -> Self {
        Self::from_fn(self.rows, 1, |i, _| self.get(i, j))
    }

    /// Row `i` as a `1 x cols` matrix.
    pub fn row_matrix(&self, i: usize) -> Self {
        Self::from_fn(1, self.cols, |_, j| self.get(i, j))
    }

    /// Sub-block starting at `(r0, c0)` of the given shape.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || r0 + rows > self.rows || c0 + cols > self.cols {
            return Err(dim_err(
                "block",
                format!(
                    "{rows}x{cols} block at ({r0}, {c0}) does not fit in {}x{}",
                    self.rows, self.cols
                ),
            ));
        }
        Ok(Self::from_fn(rows, cols, |i, j| self.get(r0 + i, c0 + j)))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(dim_err(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(dim_err(
                "matmul",
                format!(
                    "{}x{} times {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Self {
            rows: n,
            cols: m,
            data: out,
        })
    }

    /// Block-diagonal `X ⊕ Y`.
    pub fn direct_sum(&self, other: &Self) -> Self {
        let (n1, k1) = self.shape();
        let (n2, k2) = other.shape();
        Self::from_fn(n1 + n2, k1 + k2, |i, j| match (i < n1, j < k1) {
            (true, true) => self.get(i, j),
            (false, false) => other.get(i - n1, j - k1),
            _ => T::zero(),
        })
    }

    /// Horizontal concatenation `[X | Y]`.
    pub fn hconcat(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(dim_err(
                "hconcat",
                format!("{} rows vs {} rows", self.rows, other.rows),
            ));
        }
        let k1 = self.cols;
        Ok(Self::from_fn(self.rows, k1 + other.cols, |i, j| {
            if j < k1 {
                self.get(i, j)
            } else {
                other.get(i, j - k1)
            }
        }))
    }

    /// Vertical concatenation.
    pub fn vconcat(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(dim_err(
                "vconcat",
                format!("{} cols vs {} cols", self.cols, other.cols),
            ));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// Row-wise l1 normalization.
    pub fn rownorm(&self) -> Result<Self> {
        let mut out = self.clone();
        for r in 0..self.rows {
            let row = &mut out.data[r * self.cols..(r + 1) * self.cols];
            let norm = row.iter().fold(T::zero(), |acc, &x| acc + x.abs());
            if !(norm > T::zero()) {
                return Err(Error::DegenerateRow { row: r });
            }
            for x in row.iter_mut() {
                *x = *x / norm;
            }
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn frobenius_norm(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &x| acc + x * x)
            .sqrt()
    }

    /// Largest-singular-value estimate; see [`spectral_norm_with`].
    pub fn spectral_norm(&self) -> T {
        spectral_norm_with(self, NormEstimate::PowerIteration)
    }
}

impl<T: Scalar> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

/// `X ⊕ Y`.
pub fn direct_sum<T: Scalar>(x: &Matrix<T>, y: &Matrix<T>) -> Matrix<T> {
    x.direct_sum(y)
}

/// `[X | Y]`.
pub fn hconcat<T: Scalar>(x: &Matrix<T>, y: &Matrix<T>) -> Result<Matrix<T>> {
    x.hconcat(y)
}

pub fn rownorm<T: Scalar>(x: &Matrix<T>) -> Result<Matrix<T>> {
    x.rownorm()
}

pub fn max_abs_diff<T: Scalar>(x: &Matrix<T>, y: &Matrix<T>) -> Result<T> {
    if x.shape() != y.shape() {
        return Err(dim_err(
            "max_abs_diff",
            format!("{:?} vs {:?}", x.shape(), y.shape()),
        ));
    }
    Ok(x
        .data
        .iter()
        .zip(&y.data)
        .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
}

/// Row-wise softmax restricted to the entries where `mask` is set; masked
/// entries come out as exactly zero.
///
/// Each row is shifted by its maximum over unmasked entries before
/// exponentiating, and masked entries are never exponentiated, so very large
/// uniform offsets (and garbage in masked slots) leave the result intact.
pub fn masked_softmax<T: Scalar>(x: &Matrix<T>, mask: &MaskMatrix) -> Result<Matrix<T>> {
    if x.shape() != mask.shape() {
        return Err(dim_err(
            "masked_softmax",
            format!("scores {:?} vs mask {:?}", x.shape(), mask.shape()),
        ));
    }
    let (n, k) = x.shape();
    let mut out = Matrix::zeros(n, k);
    for i in 0..n {
        let row = x.row(i);
        let max = (0..k)
            .filter(|&j| mask.get(i, j))
            .map(|j| row[j])
            .fold(T::neg_infinity(), T::max);
        for (j, &v) in row.iter().enumerate() {
            if mask.get(i, j) {
                out.set(i, j, (v - max).exp());
            }
        }
    }
    out.rownorm()
}

/// Which quantity [`spectral_norm_with`] returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormEstimate {
    /// Power iteration on `XᵀX`, padded by a relative safety factor of 1e-6.
    #[default]
    PowerIteration,
    /// Frobenius norm; always an upper bound on the operator norm.
    Frobenius,
}

const POWER_MAX_ITERS: usize = 10_000;
const POWER_REL_TOL: f64 = 1e-9;
const POWER_SAFETY: f64 = 1e-6;

/// Upper estimate of the operator (largest singular value) norm.
pub fn spectral_norm_with<T: Scalar>(x: &Matrix<T>, method: NormEstimate) -> T {
    match method {
        NormEstimate::Frobenius => x.frobenius_norm(),
        NormEstimate::PowerIteration => {
            let sigma = power_iteration(x);
            sigma * (T::one() + T::lit(POWER_SAFETY))
        }
    }
}

fn power_iteration<T: Scalar>(x: &Matrix<T>) -> T {
    let (n, k) = x.shape();
    if x.max_abs() == T::zero() {
        return T::zero();
    }
    // Fixed start vector with irrational-ratio components, so it is not
    // orthogonal to the dominant right singular vector of structured inputs.
    let mut v: Vec<T> = (0..k)
        .map(|i| T::lit(1.0 + ((i as f64 + 1.0) * 0.618_033_988_749_894_9).fract()))
        .collect();
    normalize(&mut v);

    let tol = T::lit(POWER_REL_TOL).max(T::epsilon() * T::lit(8.0));
    let mut prev = T::zero();
    let mut w = vec![T::zero(); n];
    for _ in 0..POWER_MAX_ITERS {
        // w = X v, sigma = |X v| for unit v
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = x
                .row(i)
                .iter()
                .zip(&v)
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        }
        let sigma = norm2(&w);
        // v <- Xᵀ w / |Xᵀ w|
        let mut u = vec![T::zero(); k];
        for (i, &wi) in w.iter().enumerate() {
            for (uj, &a) in u.iter_mut().zip(x.row(i)) {
                *uj = *uj + a * wi;
            }
        }
        if norm2(&u) == T::zero() {
            // start vector landed in the null space
            return x.frobenius_norm();
        }
        normalize(&mut u);
        v = u;
        if prev > T::zero() && ((sigma - prev).abs() / sigma) < tol {
            prev = sigma;
            break;
        }
        prev = sigma;
    }
    // One last Rayleigh step with the updated vector; the estimate only grows.
    let last = norm2(
        &(0..n)
            .map(|i| {
                x.row(i)
                    .iter()
                    .zip(&v)
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect::<Vec<_>>(),
    );
    prev.max(last)
}

fn norm2<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

fn normalize<T: Scalar>(v: &mut [T]) {
    let n = norm2(v);
    for x in v.iter_mut() {
        *x = *x / n;
    }
}

/// 0/1 mask in which every row has at least one set entry.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MaskMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl fmt::Debug for MaskMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "MaskMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            let line: String = (0..self.cols)
                .map(|c| if self.get(r, c) { '1' } else { '0' })
                .collect();
            writeln!(f, "  {line}")?;
        }
        write!(f, "]")
    }
}

impl MaskMatrix {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        if rows.checked_mul(cols) != Some(bits.len()) {
            return Err(Error::DataLength {
                rows,
                cols,
                len: bits.len(),
            });
        }
        for r in 0..rows {
            if !bits[r * cols..(r + 1) * cols].iter().any(|&b| b) {
                return Err(Error::InvalidMask(format!("row {r} has no unmasked entry")));
            }
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut bits = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                bits.push(f(i, j));
            }
        }
        Self::new(rows, cols, bits)
    }

    /// Interprets a real matrix whose entries are exactly 0 or 1.
    pub fn from_matrix<T: Scalar>(m: &Matrix<T>) -> Result<Self> {
        let mut bits = Vec::with_capacity(m.data().len());
        for (idx, &x) in m.data().iter().enumerate() {
            if x == T::one() {
                bits.push(true);
            } else if x == T::zero() {
                bits.push(false);
            } else {
                return Err(Error::InvalidMask(format!(
                    "entry ({}, {}) is {x}, expected 0 or 1",
                    idx / m.cols(),
                    idx % m.cols()
                )));
            }
        }
        Self::new(m.rows(), m.cols(), bits)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| i == j).expect("identity mask is valid")
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| true).expect("all-ones mask is valid")
    }

    /// `Λ[i][j] = 1` iff `i <= j`: each position sees itself and every later
    /// one, including a trailing bias token.
    pub fn upper_triangular(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| i <= j).expect("triangular mask is valid")
    }

    /// `Λ[i][j] = 1` iff `j <= i`: the usual autoregressive pattern.
    pub fn lower_triangular(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| j <= i).expect("triangular mask is valid")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// `Λ ⊕ [1]`.
    pub fn direct_sum_one(&self) -> Self {
        let (n, k) = self.shape();
        Self::from_fn(n + 1, k + 1, |i, j| match (i < n, j < k) {
            (true, true) => self.get(i, j),
            (false, false) => true,
            _ => false,
        })
        .expect("direct sum of masks is a mask")
    }

    /// First position where `self` is set but `other` is not.
    pub fn first_excess_over(&self, other: &MaskMatrix) -> Result<Option<(usize, usize)>> {
        if self.shape() != other.shape() {
            return Err(dim_err(
                "mask comparison",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .position(|(&a, &b)| a && !b)
            .map(|idx| (idx / self.cols, idx % self.cols)))
    }

    /// Entrywise `self <= other`.
    pub fn is_dominated_by(&self, other: &MaskMatrix) -> bool {
        matches!(self.first_excess_over(other), Ok(None))
    }

    pub fn to_matrix<T: Scalar>(&self) -> Matrix<T> {
        Matrix::from_fn(self.rows, self.cols, |i, j| {
            if self.get(i, j) {
                T::one()
            } else {
                T::zero()
            }
        })
    }
}

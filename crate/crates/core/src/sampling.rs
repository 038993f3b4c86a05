//! Seeded random matrices for verification runs and tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Matrix with i.i.d. `N(0, std²)` entries.
pub fn gaussian_matrix<T: Scalar>(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        T::lit(z * std)
    })
}

/// Weight matrix for a layer of input width `fan_in`: `N(0, 1/√fan_in)`.
pub fn weight_matrix<T: Scalar>(rng: &mut Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix<T> {
    gaussian_matrix(rng, rows, cols, 1.0 / (fan_in.max(1) as f64).sqrt())
}

/// Gaussian matrix rescaled so that its operator-norm estimate equals `bound`.
pub fn bounded_matrix<T: Scalar>(rng: &mut Rng, rows: usize, cols: usize, bound: T) -> Matrix<T> {
    let x: Matrix<T> = gaussian_matrix(rng, rows, cols, 1.0);
    let norm = x.spectral_norm();
    if norm == T::zero() {
        return x;
    }
    x.scale(bound / norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_draws_are_reproducible() {
        let a: Matrix<f64> = gaussian_matrix(&mut seeded_rng(3), 4, 5, 1.0);
        let b: Matrix<f64> = gaussian_matrix(&mut seeded_rng(3), 4, 5, 1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn bounded_matrix_respects_bound() {
        let mut rng = seeded_rng(11);
        for _ in 0..10 {
            let x: Matrix<f64> = bounded_matrix(&mut rng, 6, 3, 2.5);
            let s = x.spectral_norm();
            assert!((s / 2.5 - 1.0).abs() <= 1e-5, "{s}");
        }
    }
}

use attnonly::matrix::{masked_softmax, max_abs_diff, spectral_norm_with, NormEstimate};
use attnonly::{MaskMatrix, Matrix};
use proptest::prelude::*;

fn matrix(rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>, scale: f64) -> impl Strategy<Value = Matrix<f64>> {
    (rows, cols).prop_flat_map(move |(r, c)| {
        prop::collection::vec(-scale..scale, r * c).prop_map(move |data| Matrix::new(r, c, data).unwrap())
    })
}

fn matrix_with_mask(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = (Matrix<f64>, MaskMatrix)> {
    n.prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0..50.0f64, n * n),
            prop::collection::vec(any::<bool>(), n * n),
            prop::collection::vec(0..n, n),
        )
            .prop_map(move |(data, mut bits, keep)| {
                for (i, &k) in keep.iter().enumerate() {
                    bits[i * n + k] = true;
                }
                (Matrix::new(n, n, data).unwrap(), MaskMatrix::new(n, n, bits).unwrap())
            })
    })
}

/// Largest singular value by one-sided Jacobi on the columns.
fn jacobi_sigma_max(x: &Matrix<f64>) -> f64 {
    let (m, n) = x.shape();
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| x.get(i, j)).collect()).collect();
    for _ in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = a[p].iter().map(|v| v * v).sum();
                let beta: f64 = a[q].iter().map(|v| v * v).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(u, v)| u * v).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = a.split_at_mut(q);
                for (u, v) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (x, y) = (*u, *v);
                    *u = c * x - s * y;
                    *v = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    a.iter().map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn direct_sum_is_associative(a in matrix(1..=3, 1..=3, 5.0), b in matrix(1..=3, 1..=3, 5.0), c in matrix(1..=3, 1..=3, 5.0)) {
        let left = a.direct_sum(&b).direct_sum(&c);
        let right = a.direct_sum(&b.direct_sum(&c));
        prop_assert_eq!(left, right);
    }

    #[test]
    fn softmax_rows_are_distributions((x, mask) in matrix_with_mask(1..=8)) {
        let p = masked_softmax(&x, &mask).unwrap();
        for i in 0..p.rows() {
            let sum: f64 = p.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            for j in 0..p.cols() {
                if !mask.get(i, j) {
                    prop_assert_eq!(p.get(i, j), 0.0);
                }
                prop_assert!(p.get(i, j) >= 0.0);
            }
        }
    }

    #[test]
    fn softmax_ignores_row_shifts(
        (x, mask) in matrix_with_mask(1..=8),
        shifts in prop::collection::vec(-1_000_000_000i64..=1_000_000_000, 8),
    ) {
        // Snap to a 1/64 grid so x + c is exact for integer |c| <= 1e9.
        let x = x.map(|v| (v * 64.0).round() / 64.0);
        let mut shifted = x.clone();
        for (i, &c) in shifts.iter().enumerate().take(x.rows()) {
            for j in 0..x.cols() {
                shifted.set(i, j, x.get(i, j) + c as f64);
            }
        }
        let a = masked_softmax(&x, &mask).unwrap();
        let b = masked_softmax(&shifted, &mask).unwrap();
        prop_assert!(max_abs_diff(&a, &b).unwrap() <= 1e-12);
    }

    #[test]
    fn softmax_shift_error_is_rounding_only((x, mask) in matrix_with_mask(1..=8), c in -1e9..1e9f64) {
        let shifted = x.map(|v| v + c);
        let a = masked_softmax(&x, &mask).unwrap();
        let b = masked_softmax(&shifted, &mask).unwrap();
        // Off-grid inputs lose up to ulp(c) each when shifted.
        let tol = 1e-12 + 4.0 * f64::EPSILON * c.abs();
        prop_assert!(max_abs_diff(&a, &b).unwrap() <= tol);
    }

    #[test]
    fn softmax_ignores_masked_values((x, mask) in matrix_with_mask(1..=6), junk in -1e6..1e6f64) {
        let mut y = x.clone();
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                if !mask.get(i, j) {
                    y.set(i, j, junk);
                }
            }
        }
        prop_assert_eq!(masked_softmax(&x, &mask).unwrap(), masked_softmax(&y, &mask).unwrap());
    }

    #[test]
    fn rownorm_is_idempotent(x in matrix(1..=6, 1..=6, 10.0)) {
        let x = x.map(f64::abs);
        prop_assume!((0..x.rows()).all(|i| x.row(i).iter().any(|&v| v > 1e-3)));
        let once = x.rownorm().unwrap();
        let twice = once.rownorm().unwrap();
        prop_assert!(max_abs_diff(&once, &twice).unwrap() <= 1e-12);
        for i in 0..once.rows() {
            prop_assert!((once.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn spectral_norm_bounds_every_unit_vector(x in matrix(1..=6, 1..=6, 10.0), dirs in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 6), 100)) {
        let sigma = x.spectral_norm();
        for v in dirs {
            let v = &v[..x.cols()];
            let len: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if len < 1e-9 {
                continue;
            }
            let u = Matrix::column_vector(&v.iter().map(|a| a / len).collect::<Vec<_>>()).unwrap();
            prop_assert!(x.matmul(&u).unwrap().frobenius_norm() <= sigma * (1.0 + 1e-12));
        }
    }

    #[test]
    fn spectral_norm_matches_jacobi_svd(x in matrix(4..=4, 4..=4, 3.0)) {
        let sigma = jacobi_sigma_max(&x);
        let estimate = spectral_norm_with(&x, NormEstimate::PowerIteration);
        prop_assert!(estimate >= sigma * (1.0 - 1e-12));
        prop_assert!((estimate - sigma).abs() <= 1e-6 * sigma.max(1.0), "estimate {} vs {}", estimate, sigma);
    }

    #[test]
    fn frobenius_dominates_spectral(x in matrix(1..=5, 1..=5, 10.0)) {
        prop_assert!(spectral_norm_with(&x, NormEstimate::Frobenius) >= jacobi_sigma_max(&x) * (1.0 - 1e-12));
    }

    #[test]
    fn transpose_distributes_over_matmul(a in matrix(3..=3, 2..=2, 4.0), b in matrix(2..=2, 4..=4, 4.0)) {
        let left = a.matmul(&b).unwrap().transpose();
        let right = b.transpose().matmul(&a.transpose()).unwrap();
        prop_assert!(max_abs_diff(&left, &right).unwrap() <= 1e-12);
    }
}

#[test]
fn jacobi_oracle_on_known_matrix() {
    let x = Matrix::from_rows(&[[3.0, 0.0], [4.0, 5.0]]).unwrap();
    // Singular values of [[3,0],[4,5]] are sqrt(45) and sqrt(5).
    assert!((jacobi_sigma_max(&x) - 45f64.sqrt()).abs() < 1e-12);
}

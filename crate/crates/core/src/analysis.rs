//! Numerical checks of the constructions: the closed-form pseudo-masking
//! offset, randomized equivalence reports, error-vs-Ω sweeps and head-count
//! statistics.

use std::fmt::Write as _;

use serde::Serialize;

use crate::constructions::{
    bias_augment, identity_augment, mlp_to_heads, pseudo_mask_head, transpile, CompactSetBound,
    PseudoMaskParams,
};
use crate::error::{dim_err, Error, Result};
use crate::matrix::{max_abs_diff, MaskMatrix, Matrix};
use crate::nn::{head_forward, heads_forward, mlp_forward, transformer_trace, AttentionHead, Mlp, Sublayer, TransformerSpec};
use crate::sampling::{bounded_matrix, gaussian_matrix, seeded_rng};
use crate::scalar::Scalar;

/// Inputs to [`omega_bound`]: context length, target error, input norm bound
/// and operator-norm bounds on the head's weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaInputs<T: Scalar = f64> {
    pub n: usize,
    pub epsilon: T,
    pub bound: CompactSetBound<T>,
    pub qk_norm: T,
    pub ov_norm: T,
}

impl<T: Scalar> OmegaInputs<T> {
    pub fn new(n: usize, epsilon: T, bound: T, qk_norm: T, ov_norm: T) -> Result<Self> {
        let inputs = Self {
            n,
            epsilon,
            bound: CompactSetBound::new(bound)?,
            qk_norm,
            ov_norm,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    /// Norm bounds taken from the head's own weights.
    pub fn for_head(h: &AttentionHead<T>, epsilon: T, bound: T) -> Result<Self> {
        Self::new(
            h.context(),
            epsilon,
            bound,
            h.w_qk().spectral_norm(),
            h.w_ov().spectral_norm(),
        )
    }

    /// Bound on every attention score: `B² ‖W_QK‖`.
    pub fn score_bound(&self) -> T {
        let b = self.bound.value();
        b * b * self.qk_norm
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > T::zero()) || !self.epsilon.is_finite() {
            return Err(Error::Domain(format!(
                "epsilon must be finite and > 0, got {}",
                self.epsilon
            )));
        }
        if self.n == 0 {
            return Err(Error::Domain("context length must be >= 1".to_string()));
        }
        for (name, v) in [("qk_norm", self.qk_norm), ("ov_norm", self.ov_norm)] {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `ln(N/ε) + 2 B² ‖W_QK‖ + max(ln(√N B ‖W_OV‖), 0)`.
///
/// With this offset every pseudo-masked output entry is within `ε` of the
/// truly masked head for all inputs with `‖X‖ <= B`.
pub fn omega_bound<T: Scalar>(inputs: &OmegaInputs<T>) -> Result<T> {
    inputs.validate()?;
    let n = T::lit(inputs.n as f64);
    let two = T::lit(2.0);
    let leak = (n / inputs.epsilon).ln();
    let scores = two * inputs.score_bound();
    let value_scale = n.sqrt() * inputs.bound.value() * inputs.ov_norm;
    let values = if value_scale > T::zero() {
        value_scale.ln().max(T::zero())
    } else {
        T::zero()
    };
    Ok(leak + scores + values)
}

/// Outcome of a randomized equivalence check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub trials: usize,
    pub max_error: f64,
    pub mean_error: f64,
    pub per_trial_errors: Vec<f64>,
    pub tolerance: f64,
    pub passed: bool,
    /// For transpiled models: whether the appended bias row and column kept
    /// the values of `X ⊕ [1]` (zero except a one in the corner) after every
    /// sublayer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias_column_intact: Option<bool>,
}

impl EquivalenceReport {
    fn from_errors(per_trial_errors: Vec<f64>, tolerance: f64) -> Self {
        let trials = per_trial_errors.len();
        let max_error = per_trial_errors.iter().copied().fold(0.0, f64::max);
        let mean_error = per_trial_errors.iter().sum::<f64>() / trials.max(1) as f64;
        Self {
            trials,
            max_error,
            mean_error,
            per_trial_errors,
            tolerance,
            passed: max_error <= tolerance,
            bias_column_intact: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::Domain("trials must be >= 1".to_string()));
    }
    Ok(())
}

/// Compares the heads built from `f` against `f` itself on `trials` seeded
/// Gaussian inputs of shape `n x D`.
pub fn verify_mlp_conversion<T: Scalar>(
    f: &Mlp<T>,
    n: usize,
    trials: usize,
    seed: u64,
    tolerance: f64,
) -> Result<EquivalenceReport> {
    check_trials(trials)?;
    let heads = mlp_to_heads(f, n)?;
    let mut rng = seeded_rng(seed);
    let mut errors = Vec::with_capacity(trials);
    for _ in 0..trials {
        let x: Matrix<T> = gaussian_matrix(&mut rng, n, f.width(), 1.0);
        let got = heads_forward(&heads, &bias_augment(&x))?;
        let want = mlp_forward(f, &x)?.direct_sum(&Matrix::scalar(T::zero()));
        errors.push(max_abs_diff(&got, &want)?.to_f64_lossy());
    }
    Ok(EquivalenceReport::from_errors(errors, tolerance))
}

/// Transpiles `t` and compares the result against it; see
/// [`verify_equivalence`].
pub fn verify_transpile<T: Scalar>(
    t: &TransformerSpec<T>,
    trials: usize,
    seed: u64,
    tolerance: f64,
) -> Result<EquivalenceReport> {
    let converted = transpile(t)?;
    verify_equivalence(t, &converted, trials, seed, tolerance)
}

const BIAS_TOLERANCE: f64 = 1e-12;

fn bias_intact<T: Scalar>(stream: &Matrix<T>, n: usize, d: usize, one: T, tol: T) -> bool {
    let expect = |i: usize, j: usize| if i == n && j == d { one } else { T::zero() };
    (0..=n).all(|i| (stream.get(i, d) - expect(i, d)).abs() <= tol)
        && (0..d).all(|j| (stream.get(n, j) - expect(n, j)).abs() <= tol)
}

/// Runs `original` on seeded inputs `X` and `converted` on `X ⊕ [1]`; the
/// error of a trial is the largest deviation over the leading `N x D` block of
/// the final stream. Also records whether the converted run kept its bias row
/// and column intact after every sublayer.
pub fn verify_equivalence<T: Scalar>(
    original: &TransformerSpec<T>,
    converted: &TransformerSpec<T>,
    trials: usize,
    seed: u64,
    tolerance: f64,
) -> Result<EquivalenceReport> {
    check_trials(trials)?;
    let (n, d) = (original.n(), original.d());
    if (converted.n(), converted.d()) != (n + 1, d + 1) {
        return Err(dim_err(
            "verify_equivalence",
            format!(
                "converted model is {}x{}, expected {}x{}",
                converted.n(),
                converted.d(),
                n + 1,
                d + 1
            ),
        ));
    }
    let mut rng = seeded_rng(seed);
    let mut errors = Vec::with_capacity(trials);
    let mut bias_ok = true;
    let one = T::one();
    let tol = T::lit(BIAS_TOLERANCE);
    for _ in 0..trials {
        let x: Matrix<T> = gaussian_matrix(&mut rng, n, d, 1.0);
        let want = transformer_trace(original, &x)?;
        let got = transformer_trace(converted, &bias_augment(&x))?;
        for stream in &got {
            bias_ok &= bias_intact(stream, n, d, one, tol);
        }
        let last = got.last().expect("trace is non-empty").block(0, 0, n, d)?;
        errors.push(max_abs_diff(&last, want.last().expect("trace is non-empty"))?.to_f64_lossy());
    }
    let mut report = EquivalenceReport::from_errors(errors, tolerance);
    report.bias_column_intact = Some(bias_ok);
    Ok(report)
}

/// Measured pseudo-masking error against increasing offsets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCurve {
    omegas: Vec<f64>,
    errors: Vec<f64>,
}

impl SweepCurve {
    pub fn new(omegas: Vec<f64>, errors: Vec<f64>) -> Result<Self> {
        if omegas.len() != errors.len() {
            return Err(Error::Domain(format!(
                "sweep has {} omegas but {} errors",
                omegas.len(),
                errors.len()
            )));
        }
        check_increasing(&omegas)?;
        Ok(Self { omegas, errors })
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    /// `omega,max_error` rows with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("omega,max_error\n");
        for (o, e) in self.omegas.iter().zip(&self.errors) {
            let _ = writeln!(out, "{},{}", format_sig17(*o), format_sig17(*e));
        }
        out
    }
}

/// Decimal with 17 significant digits, e.g. `1.6000000000000000e9`.
pub fn format_sig17(x: f64) -> String {
    format!("{x:.16e}")
}

fn check_increasing(omegas: &[f64]) -> Result<()> {
    if omegas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Domain("omegas must be strictly increasing".to_string()));
    }
    Ok(())
}

/// `steps` log-spaced values from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, steps: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0) || !(hi > lo) || !hi.is_finite() || steps < 2 {
        return Err(Error::Domain(format!(
            "log spacing needs 0 < lo < hi and at least 2 steps (lo={lo}, hi={hi}, steps={steps})"
        )));
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut out: Vec<f64> = (0..steps)
        .map(|i| (a + (b - a) * i as f64 / (steps - 1) as f64).exp())
        .collect();
    out[0] = lo;
    out[steps - 1] = hi;
    Ok(out)
}

/// Largest entrywise deviation of the pseudo-masked head on `[X | I_N]` from
/// `[h(X) | 0]`, over `inputs`.
pub fn pseudo_mask_error<T: Scalar>(
    h: &AttentionHead<T>,
    lambda2: &MaskMatrix,
    omega: T,
    inputs: &[Matrix<T>],
) -> Result<T> {
    let params = PseudoMaskParams::new(omega, h.mask().clone(), lambda2.clone())?;
    let hp = pseudo_mask_head(h, &params)?;
    let n = h.context();
    let mut worst = T::zero();
    for x in inputs {
        let want = head_forward(h, x)?.hconcat(&Matrix::zeros(n, n))?;
        let got = head_forward(&hp, &identity_augment(x))?;
        worst = worst.max(max_abs_diff(&got, &want)?);
    }
    Ok(worst)
}

/// Seeded inputs `N x D` with operator norm at most `bound`.
pub fn bounded_inputs<T: Scalar>(h: &AttentionHead<T>, bound: T, samples: usize, seed: u64) -> Vec<Matrix<T>> {
    let mut rng = seeded_rng(seed);
    (0..samples)
        .map(|_| bounded_matrix(&mut rng, h.context(), h.width(), bound))
        .collect()
}

pub fn pseudo_mask_sweep<T: Scalar>(
    h: &AttentionHead<T>,
    lambda2: &MaskMatrix,
    omegas: &[T],
    bound: T,
    samples: usize,
    seed: u64,
) -> Result<SweepCurve> {
    CompactSetBound::new(bound)?;
    if samples == 0 {
        return Err(Error::Domain("samples must be >= 1".to_string()));
    }
    let omegas_f64: Vec<f64> = omegas.iter().map(|o| o.to_f64_lossy()).collect();
    check_increasing(&omegas_f64)?;
    crate::constructions::check_dominance(h.mask(), lambda2)?;
    let inputs = bounded_inputs(h, bound, samples, seed);
    let errors = omegas
        .iter()
        .map(|&o| pseudo_mask_error(h, lambda2, o, &inputs).map(|e| e.to_f64_lossy()))
        .collect::<Result<Vec<_>>>()?;
    SweepCurve::new(omegas_f64, errors)
}

/// Head and parameter counts for converting a model, computed without
/// building the heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConversionStats {
    pub original_heads: usize,
    pub original_mlp_params: usize,
    pub new_heads_added: usize,
    pub heads_per_mlp_sublayer: Vec<usize>,
}

pub fn conversion_stats<T: Scalar>(t: &TransformerSpec<T>) -> ConversionStats {
    let mut stats = ConversionStats {
        original_heads: 0,
        original_mlp_params: 0,
        new_heads_added: 0,
        heads_per_mlp_sublayer: Vec::new(),
    };
    for sub in t.sublayers() {
        match sub {
            Sublayer::Attention(heads) => stats.original_heads += heads.len(),
            Sublayer::Mlp(f) => {
                let l = f.hidden_size();
                stats.original_mlp_params += f.v1().data().len() + f.v2().data().len();
                stats.new_heads_added += l;
                stats.heads_per_mlp_sublayer.push(l);
            }
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::GeneralizedSilu;
    use crate::nn::LayerNormConfig;
    use crate::sampling::weight_matrix;

    #[test]
    fn omega_closed_form_examples() {
        let zero = OmegaInputs::new(1, 1.0, 0.0, 3.0, 5.0).unwrap();
        assert_eq!(omega_bound(&zero).unwrap(), 0.0);

        let small = OmegaInputs::new(8, 1e-3, 1.0, 1.0, 1.0).unwrap();
        let want = 8000f64.ln() + 2.0 + 8f64.sqrt().ln();
        assert!((omega_bound(&small).unwrap() - want).abs() < 1e-12);
        assert!((omega_bound(&small).unwrap() - 12.03).abs() < 5e-3);

        assert!(OmegaInputs::new(8, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(OmegaInputs::new(8, -1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn omega_example_magnitude() {
        let eps = 2f64.powi(-146);
        let inputs = OmegaInputs::new(1024, eps, 1e4, 8.0, 8.0).unwrap();
        let omega = omega_bound(&inputs).unwrap();
        assert!((omega / 1.6e9 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn mlp_report_examples() {
        let f = Mlp::new(Matrix::from_rows(&[[1.3]]).unwrap(), Matrix::from_rows(&[[0.7]]).unwrap(), GeneralizedSilu::silu()).unwrap();
        let r = verify_mlp_conversion(&f, 1, 10, 0, 1e-12).unwrap();
        assert!(r.passed && r.max_error <= 1e-12);
        assert_eq!(r.per_trial_errors.len(), 10);

        let z = Mlp::<f64>::new(Matrix::zeros(3, 2), Matrix::zeros(2, 3), GeneralizedSilu::silu()).unwrap();
        assert_eq!(verify_mlp_conversion(&z, 4, 3, 0, 0.0).unwrap().max_error, 0.0);
        assert!(verify_mlp_conversion(&z, 4, 0, 0, 0.0).is_err());
    }

    #[test]
    fn report_is_deterministic() {
        let mut rng = seeded_rng(9);
        let f = Mlp::<f64>::new(weight_matrix(&mut rng, 3, 5, 3), weight_matrix(&mut rng, 5, 3, 5), GeneralizedSilu::gelu_approx()).unwrap();
        let a = verify_mlp_conversion(&f, 4, 5, 77, 1e-9).unwrap();
        let b = verify_mlp_conversion(&f, 4, 5, 77, 1e-9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn sweep_and_csv() {
        let h = AttentionHead::new(Matrix::<f64>::zeros(1, 1), Matrix::identity(1), MaskMatrix::identity(2)).unwrap();
        let curve = pseudo_mask_sweep(&h, &MaskMatrix::ones(2, 2), &[1.0, 10.0, 40.0], 1.0, 4, 1).unwrap();
        assert_eq!(curve.errors().len(), 3);
        assert!(curve.errors()[2] < curve.errors()[0]);
        let csv = curve.to_csv();
        assert!(csv.starts_with("omega,max_error\n1.0000000000000000e0,"));
        assert_eq!(csv.lines().count(), 4);
        assert!(pseudo_mask_sweep(&h, &MaskMatrix::ones(2, 2), &[2.0, 1.0], 1.0, 4, 1).is_err());
        assert!(pseudo_mask_sweep(&h, &MaskMatrix::identity(2), &[1.0], 1.0, 4, 1).is_ok());
    }

    #[test]
    fn log_spacing() {
        let v = log_spaced(4.0, 1024.0, 5).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v[0], 4.0);
        assert_eq!(v[4], 1024.0);
        assert!((v[1] - 16.0).abs() < 1e-9);
        assert!(log_spaced(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn stats_counts() {
        let mlp = |l: usize| Sublayer::Mlp(Mlp::<f64>::new(Matrix::zeros(2, l), Matrix::zeros(l, 2), GeneralizedSilu::silu()).unwrap());
        let t = TransformerSpec::new(3, 2, vec![mlp(3), mlp(3)], LayerNormConfig::enabled(2)).unwrap();
        let s = conversion_stats(&t);
        assert_eq!(s.new_heads_added, 6);
        assert_eq!(s.heads_per_mlp_sublayer, vec![3, 3]);
        assert_eq!(s.original_mlp_params, 24);

        let h = AttentionHead::<f64>::new(Matrix::zeros(2, 2), Matrix::zeros(2, 2), MaskMatrix::identity(3)).unwrap();
        let t = TransformerSpec::new(3, 2, vec![Sublayer::Attention(vec![h.clone(), h])], LayerNormConfig::enabled(2)).unwrap();
        let s = conversion_stats(&t);
        assert_eq!((s.original_heads, s.new_heads_added), (2, 0));
    }
}

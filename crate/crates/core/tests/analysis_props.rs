mod common;

use attnonly::analysis::{
    conversion_stats, log_spaced, omega_bound, pseudo_mask_sweep, verify_equivalence, verify_mlp_conversion,
    verify_transpile, OmegaInputs,
};
use attnonly::constructions::transpile;
use attnonly::sampling::seeded_rng;
use attnonly::{LayerNormConfig, MaskMatrix, Sublayer, TransformerSpec};
use common::*;

#[test]
fn omega_bound_is_monotone() {
    let ns = [1usize, 4, 64, 1024];
    let eps = [1e-1, 1e-3, 1e-6];
    let bs = [0.5, 1.0, 10.0];
    let qs = [0.0, 1.0, 8.0];
    let os = [0.0, 0.1, 1.0, 8.0];
    let omega = |n, e, b, q, o| omega_bound(&OmegaInputs::new(n, e, b, q, o).unwrap()).unwrap();
    for &n in &ns {
        for &e in &eps {
            for &b in &bs {
                for &q in &qs {
                    for &o in &os {
                        let base = omega(n, e, b, q, o);
                        assert!(base > 0.0);
                        assert!(omega(n * 2, e, b, q, o) >= base);
                        assert!(omega(n, e * 0.5, b, q, o) >= base);
                        assert!(omega(n, e, b * 2.0, q, o) >= base);
                        assert!(omega(n, e, b, q + 1.0, o) >= base);
                        assert!(omega(n, e, b, q, o + 1.0) >= base);
                    }
                }
            }
        }
    }
}

#[test]
fn omega_rejects_bad_inputs() {
    assert!(OmegaInputs::new(0, 1e-3, 1.0, 1.0, 1.0).is_err());
    assert!(OmegaInputs::new(4, 0.0, 1.0, 1.0, 1.0).is_err());
    assert!(OmegaInputs::new(4, 1e-3, -1.0, 1.0, 1.0).is_err());
    assert!(OmegaInputs::new(4, 1e-3, 1.0, -1.0, 1.0).is_err());
}

#[test]
fn reports_are_bitwise_deterministic() {
    let t = toy_transformer(3, 6, 4, 8, true);
    let a = verify_transpile(&t, 5, 99, 1e-8).unwrap();
    let b = verify_transpile(&t, 5, 99, 1e-8).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert!(a.per_trial_errors.iter().zip(&b.per_trial_errors).all(|(x, y)| x.to_bits() == y.to_bits()));

    let f = random_mlp(&mut seeded_rng(4), 3, 7, 1.0, 1.0);
    let a = verify_mlp_conversion(&f, 5, 4, 1, 1e-9).unwrap();
    let b = verify_mlp_conversion(&f, 5, 4, 1, 1e-9).unwrap();
    assert_eq!(a, b);
    assert!(a.passed);
}

#[test]
fn transpile_without_layernorm() {
    let t = toy_transformer(8, 10, 5, 12, false);
    let report = verify_transpile(&t, 10, 8, 1e-9).unwrap();
    assert!(report.passed, "max error {}", report.max_error);
    assert_eq!(report.bias_column_intact, Some(true));
}

#[test]
fn attention_only_transpile_is_exact_up_to_rounding() {
    let mut rng = seeded_rng(41);
    let n = 7;
    let d = 4;
    let sublayers = (0..3)
        .map(|_| Sublayer::Attention((0..3).map(|_| random_head(&mut rng, d, MaskMatrix::upper_triangular(n))).collect()))
        .collect();
    let t = TransformerSpec::new(n, d, sublayers, LayerNormConfig::enabled(d)).unwrap();
    let report = verify_transpile(&t, 10, 41, 1e-12).unwrap();
    assert!(report.passed, "max error {}", report.max_error);
}

#[test]
fn mismatched_models_fail_verification() {
    let a = toy_transformer(1, 4, 3, 5, true);
    let b = transpile(&toy_transformer(2, 4, 3, 5, true)).unwrap();
    let report = verify_equivalence(&a, &b, 3, 0, 1e-8).unwrap();
    assert!(!report.passed);
    assert!(verify_equivalence(&a, &a, 3, 0, 1e-8).is_err());
}

#[test]
fn sweep_ends_no_worse_than_it_starts() {
    let mut rng = seeded_rng(42);
    for _ in 0..5 {
        let l1 = random_mask(&mut rng, 6, 0.3);
        let l2 = random_superset(&mut rng, &l1, 0.4);
        let h = random_head(&mut rng, 3, l1);
        let grid = log_spaced(1.0, 1e6, 12).unwrap();
        let curve = pseudo_mask_sweep(&h, &l2, &grid, 2.0, 6, 3).unwrap();
        let e = curve.errors();
        assert!(e[e.len() - 1] <= e[0].max(1e-12));
        assert_eq!(curve.to_csv().lines().count(), 13);
    }
}

#[test]
fn stats_add_one_head_per_neuron() {
    let t = toy_transformer(5, 4, 3, 9, true);
    let s = conversion_stats(&t);
    assert_eq!(s.original_heads, 4);
    assert_eq!(s.heads_per_mlp_sublayer, vec![9, 9]);
    assert_eq!(s.new_heads_added, 18);
    assert_eq!(s.original_mlp_params, 2 * (3 * 9 + 9 * 3));
}

//! Shared helpers for the numeric test suites: a central finite-difference
//! oracle and gradient comparison. The oracle only ever calls forward passes,
//! so it stays independent of the analytic backward path it checks.

#![allow(dead_code)]

use softmoe_core::tensor::Matrix;

pub const FD_STEP: f64 = 1e-6;

/// Central difference `(f(x+h) - f(x-h)) / 2h`.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x0: f64, step: f64) -> f64 {
    (f(x0 + step) - f(x0 - step)) / (2.0 * step)
}

/// Relative error with a unit floor, so near-zero gradients compare by
/// absolute difference: `|a - n| / max(|a|, |n|, 1)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Assert every coordinate pair agrees within `rtol` relative error.
pub fn assert_grads_close(analytic: &[f64], numeric: &[f64], rtol: f64, context: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{context}: gradient lengths");
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let err = rel_err(a, n);
        assert!(
            err <= rtol,
            "{context}: coordinate {i}: analytic {a}, numeric {n}, rel err {err:.3e} > {rtol:.0e}"
        );
    }
}

/// Finite-difference gradient of `loss` with respect to every entry of a
/// matrix, perturbing entries in place.
pub fn fd_grad_matrix(m: &Matrix, mut loss: impl FnMut(&Matrix) -> f64) -> Vec<f64> {
    let mut work = m.clone();
    let mut grad = Vec::with_capacity(m.data().len());
    for i in 0..m.data().len() {
        let x0 = m.data()[i];
        let g = central_diff(
            |x| {
                work.data_mut()[i] = x;
                let v = loss(&work);
                work.data_mut()[i] = x0;
                v
            },
            x0,
            FD_STEP,
        );
        grad.push(g);
    }
    grad
}

/// Finite-difference gradient with respect to a flat parameter vector.
pub fn fd_grad_flat(params: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut work = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let x0 = params[i];
        let g = central_diff(
            |x| {
                work[i] = x;
                let v = loss(&work);
                work[i] = x0;
                v
            },
            x0,
            FD_STEP,
        );
        grad.push(g);
    }
    grad
}

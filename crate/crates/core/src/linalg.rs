//! Small dense linear-algebra helpers.

use ndarray::{Array1, Array2, ArrayView2};

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration, to the requested relative tolerance.
///
/// Returns 0 for the zero matrix. The iterate starts from the all-ones
/// direction with a deterministic perturbation so the method cannot start
/// orthogonal to the leading eigenvector by symmetry.
pub fn max_eigenvalue_sym(a: ArrayView2<f64>, rel_tol: f64) -> f64 {
    let d = a.nrows();
    assert_eq!(d, a.ncols(), "matrix must be square");
    if d == 0 {
        return 0.0;
    }
    let frob = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if frob == 0.0 {
        return 0.0;
    }
    let mut v: Array1<f64> = Array1::from_shape_fn(d, |i| 1.0 + 1e-3 * (i as f64 + 1.0).sin());
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut lambda = 0.0_f64;
    // PSD spectrum: plain power iteration converges to mu_max.
    for _ in 0..100_000 {
        let mut w = a.dot(&v);
        let wn = w.dot(&w).sqrt();
        if wn == 0.0 {
            // v in the null space; restart off the null direction.
            v = Array1::from_shape_fn(d, |i| ((i * 2 + 1) as f64).cos());
            let n = v.dot(&v).sqrt();
            v /= n;
            continue;
        }
        w /= wn;
        let next = w.dot(&a.dot(&w));
        let done = (next - lambda).abs() <= rel_tol * next.abs().max(frob * 1e-300);
        lambda = next;
        v = w;
        if done {
            break;
        }
    }
    lambda
}

/// Largest eigenvalue of a symmetric PSD operator given only matrix-vector
/// products. Used for `X^T X` without forming the Gram matrix.
pub fn max_eigenvalue_op<F>(dim: usize, apply: F, rel_tol: f64) -> f64
where
    F: Fn(&Array1<f64>) -> Array1<f64>,
{
    if dim == 0 {
        return 0.0;
    }
    let mut v: Array1<f64> = Array1::from_shape_fn(dim, |i| 1.0 + 1e-3 * (i as f64 + 1.0).sin());
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut lambda = 0.0_f64;
    for _ in 0..100_000 {
        let mut w = apply(&v);
        let wn = w.dot(&w).sqrt();
        if wn == 0.0 {
            return 0.0;
        }
        w /= wn;
        let next = w.dot(&apply(&w));
        let done = (next - lambda).abs() <= rel_tol * next.abs();
        lambda = next;
        v = w;
        if done {
            break;
        }
    }
    lambda
}

/// Gram matrix of a set of columns: `cols^T cols`.
pub fn gram(cols: ArrayView2<f64>) -> Array2<f64> {
    cols.t().dot(&cols)
}

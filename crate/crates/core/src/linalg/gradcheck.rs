//! Central finite differences, the independent oracle for every backward rule.

use crate::linalg::Matrix;

/// Default perturbation used by gradient audits.
pub const FD_STEP: f64 = 1e-5;

/// Gradient magnitudes below this are compared absolutely rather than
/// relatively; central differences at `h = 1e-5` carry ~1e-11 absolute
/// rounding noise on O(1) losses.
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// Central-difference estimate `(f(x + h·e) − f(x − h·e)) / 2h` for every entry.
pub fn finite_diff_grad(mut f: impl FnMut(&Matrix) -> f64, at: &Matrix, step: f64) -> Matrix {
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = at.clone();
    let mut out = Matrix::zeros(at.rows(), at.cols());
    for k in 0..at.len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + step;
        let up = f(&probe);
        probe.as_mut_slice()[k] = orig - step;
        let down = f(&probe);
        probe.as_mut_slice()[k] = orig;
        out.as_mut_slice()[k] = (up - down) / (2.0 * step);
    }
    out
}

/// `|a − b| / max(|a|, |b|, REL_ERR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Largest [`relative_error`] over corresponding entries.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(&a, &b)| relative_error(a, b))
        .fold(0.0, f64::max)
}

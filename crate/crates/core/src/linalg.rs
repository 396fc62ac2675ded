//! Small dense matrix helpers: exponentials and operator norms.
//!
//! Dimensions here are desk scale (n + m up to ~20), so the
//! scaling-and-squaring Pade exponential and full SVD are the right tools.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Matrix exponential e^A (scaling-and-squaring with Pade kernel).
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite matrix entries".into()));
    }
    Ok(a.exp())
}

/// Operator 2-norm (largest singular value).
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// Table of kernel powers `e^{A h k}` for `k = 0..=n`, built by repeated
/// multiplication with the one-step exponential.
pub fn exp_power_table(a: &DMatrix<f64>, h: f64, n: usize) -> Result<Vec<DMatrix<f64>>> {
    let dim = a.nrows();
    let step = expm(&(a * h))?;
    let mut table = Vec::with_capacity(n + 1);
    table.push(DMatrix::identity(dim, dim));
    for k in 0..n {
        let next = &step * &table[k];
        table.push(next);
    }
    Ok(table)
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Config(
            "log-log fit needs at least two matching samples".into(),
        ));
    }
    if x.iter().chain(y.iter()).any(|v| *v <= 0.0 || !v.is_finite()) {
        return Err(Error::Numerical(
            "log-log fit requires positive finite samples".into(),
        ));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Numerical("degenerate abscissae in log-log fit".into()));
    }
    Ok(sxy / sxx)
}

/// Euclidean norm of the concatenation of two vectors.
pub fn joint_norm(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (x.norm_squared() + y.norm_squared()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn expm_of_zero_is_identity() {
        let a = DMatrix::<f64>::zeros(3, 3);
        let e = expm(&a).unwrap();
        assert_eq!(e, DMatrix::identity(3, 3));
    }

    #[test]
    fn expm_matches_scalar_exp() {
        let a = DMatrix::from_row_slice(1, 1, &[-0.7]);
        let e = expm(&a).unwrap();
        assert_abs_diff_eq!(e[(0, 0)], (-0.7f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn expm_rotation_block() {
        // exp([[0, t], [-t, 0]]) = rotation by t
        let t = 0.9;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, t, -t, 0.0]);
        let e = expm(&a).unwrap();
        assert_abs_diff_eq!(e[(0, 0)], t.cos(), epsilon = 1e-12);
        assert_abs_diff_eq!(e[(0, 1)], t.sin(), epsilon = 1e-12);
        assert_abs_diff_eq!(operator_norm(&e), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn expm_rejects_non_finite() {
        let a = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(expm(&a).is_err());
    }

    #[test]
    fn power_table_is_consistent() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -2.0]);
        let table = exp_power_table(&a, 0.1, 50).unwrap();
        let direct = expm(&(&a * 3.7)).unwrap();
        let diff = (&table[37] - &direct).norm();
        assert!(diff < 1e-12, "diff = {diff}");
    }

    #[test]
    fn slope_recovers_power_law() {
        let x = [0.2f64, 0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v * v * v).collect();
        let s = log_log_slope(&x, &y).unwrap();
        assert_abs_diff_eq!(s, 3.0, epsilon = 1e-12);
    }
}

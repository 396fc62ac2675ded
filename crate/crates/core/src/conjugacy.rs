//! Random coordinate transform linking the Stratonovich SDE to the
//! pathwise random ODE: `(X, Y) = (e^{-eps z1(omega)} x, e^{-eps z2(omega)} y)`.
//!
//! The noise matrices are scalar-diagonal, so the exponential factors are
//! scalars on each block; no matrix exponentials appear here.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::noise::OUPath;
use crate::system::CenterStableSpec;

#[derive(Debug, Clone, Copy)]
pub struct ConjugacyContext {
    pub eps: f64,
    pub z1_at_0: f64,
    pub z2_at_0: f64,
    pub shared_driver: bool,
}

impl ConjugacyContext {
    pub fn new(eps: f64, z1_at_0: f64, z2_at_0: f64, shared_driver: bool) -> Result<Self> {
        if !(eps >= 0.0) || !z1_at_0.is_finite() || !z2_at_0.is_finite() {
            return Err(Error::Config(
                "conjugacy context needs eps >= 0 and finite z values".into(),
            ));
        }
        Ok(Self {
            eps,
            z1_at_0,
            z2_at_0,
            shared_driver,
        })
    }

    pub fn from_paths(eps: f64, ou1: &OUPath, ou2: &OUPath, shared_driver: bool) -> Result<Self> {
        Self::new(eps, ou1.z_at_zero(), ou2.z_at_zero(), shared_driver)
    }

    /// `(x, y) -> (X, Y)` with the time-zero noise realization.
    pub fn forward(&self, x: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            x * (-self.eps * self.z1_at_0).exp(),
            y * (-self.eps * self.z2_at_0).exp(),
        )
    }

    /// Exact inverse of [`forward`](Self::forward).
    pub fn inverse(&self, x_t: &DVector<f64>, y_t: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            x_t * (self.eps * self.z1_at_0).exp(),
            y_t * (self.eps * self.z2_at_0).exp(),
        )
    }
}

/// Transformed nonlinearities at time `t`:
/// `F^c = e^{-eps z1(theta_t)} f_c(e^{eps z1(theta_t)} X, e^{eps z2(theta_t)} Y)`
/// and the analogous `F^s` with the z2 prefactor.
pub fn transformed_nonlinearity(
    spec: &CenterStableSpec,
    ou1: &OUPath,
    ou2: &OUPath,
    eps: f64,
    t: f64,
    x_t: &DVector<f64>,
    y_t: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let z1 = ou1.z_at(t)?;
    let z2 = ou2.z_at(t)?;
    Ok(transformed_at_z(spec, eps, z1, z2, x_t, y_t))
}

/// Same as [`transformed_nonlinearity`] but with the z values supplied
/// directly (solvers index the paths by node).
pub fn transformed_at_z(
    spec: &CenterStableSpec,
    eps: f64,
    z1: f64,
    z2: f64,
    x_t: &DVector<f64>,
    y_t: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let e1 = (eps * z1).exp();
    let e2 = (eps * z2).exp();
    let x = x_t * e1;
    let y = y_t * e2;
    let f_c = spec.f_c(&x, &y) / e1;
    let f_s = spec.f_s(&x, &y) / e2;
    (f_c, f_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example::example_spec;
    use crate::grid::TimeGrid;
    use crate::noise::{OuInitMode, WienerPath};
    use approx::assert_abs_diff_eq;

    fn vec1(v: f64) -> DVector<f64> {
        DVector::from_row_slice(&[v])
    }

    #[test]
    fn eps_zero_is_identity() {
        let ctx = ConjugacyContext::new(0.0, 0.7, -0.3, false).unwrap();
        let (x, y) = (vec1(1.3), vec1(-2.0));
        let (xt, yt) = ctx.forward(&x, &y);
        assert_eq!(xt, x);
        assert_eq!(yt, y);
    }

    #[test]
    fn forward_scales_by_exponential() {
        let ctx = ConjugacyContext::new(1.0, 0.3, 0.0, false).unwrap();
        let (xt, _) = ctx.forward(&vec1(1.0), &vec1(0.0));
        assert_abs_diff_eq!(xt[0], (-0.3f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn round_trip_is_identity() {
        let ctx = ConjugacyContext::new(0.2, 0.9, -1.4, true).unwrap();
        let (x, y) = (vec1(0.8), vec1(-0.6));
        let (xt, yt) = ctx.forward(&x, &y);
        let (xb, yb) = ctx.inverse(&xt, &yt);
        assert_abs_diff_eq!(xb[0], x[0], epsilon = 1e-15);
        assert_abs_diff_eq!(yb[0], y[0], epsilon = 1e-15);
    }

    #[test]
    fn transformed_lipschitz_bound_on_ball() {
        // sampled difference quotients of F_s stay below L_f e^{2 eps max|z|}
        // on a ball where the uncut quadratic respects its Lipschitz budget
        let spec = example_spec();
        let grid = TimeGrid::new(4.0, 0.0, 0.01).unwrap();
        let w = WienerPath::generate(21, &grid).unwrap();
        let ou = crate::noise::OUPath::from_wiener(&w, OuInitMode::StationarySample);
        let eps = 0.1;
        let z_max = ou
            .values()
            .iter()
            .fold(0.0f64, |acc, z| acc.max(z.abs()));
        let bound = spec.lipschitz * (2.0 * eps * z_max).exp() * 1.1;
        // x = e^{eps z} X must stay inside |x| <= L_f / 2 for f_s = -x^2
        let ball = 0.5 * spec.lipschitz / (eps * z_max).exp();
        let mut worst: f64 = 0.0;
        for k in 0..40 {
            let t = grid.t_start() + k as f64 * 0.1;
            let xa = vec1(ball * (k as f64 / 40.0));
            let xb = vec1(-ball * (1.0 - k as f64 / 40.0));
            let y = vec1(0.0);
            let (_, fa) = transformed_nonlinearity(&spec, &ou, &ou, eps, t, &xa, &y).unwrap();
            let (_, fb) = transformed_nonlinearity(&spec, &ou, &ou, eps, t, &xb, &y).unwrap();
            let quotient = (fa[0] - fb[0]).abs() / (xa[0] - xb[0]).abs();
            worst = worst.max(quotient);
        }
        assert!(worst <= bound, "quotient {worst} > bound {bound}");
    }

    #[test]
    fn example_transformed_stable_nonlinearity() {
        // F_s(X, Y) = -e^{eps z} X^2 for f_s = -x^2 with the shared driver
        let spec = example_spec();
        let grid = TimeGrid::new(2.0, 1.0, 0.01).unwrap();
        let w = WienerPath::generate(5, &grid).unwrap();
        let ou = crate::noise::OUPath::from_wiener(&w, OuInitMode::StationarySample);
        let eps = 0.4;
        let t = 0.25;
        let x = vec1(0.9);
        let y = vec1(0.1);
        let (f_c, f_s) = transformed_nonlinearity(&spec, &ou, &ou, eps, t, &x, &y).unwrap();
        assert_eq!(f_c, DVector::zeros(1));
        let z = ou.z_at(t).unwrap();
        assert_abs_diff_eq!(f_s[0], -(eps * z).exp() * x[0] * x[0], epsilon = 1e-14);
        // eps = 0 leaves the nonlinearity unchanged
        let (_, f_s0) = transformed_nonlinearity(&spec, &ou, &ou, 0.0, t, &x, &y).unwrap();
        assert_abs_diff_eq!(f_s0[0], -x[0] * x[0], epsilon = 1e-15);
        // outside the path range
        assert!(transformed_nonlinearity(&spec, &ou, &ou, eps, 5.0, &x, &y).is_err());
    }
}

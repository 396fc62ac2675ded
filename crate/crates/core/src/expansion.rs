//! Expansion coefficients of the random center manifold: the history
//! integrals for the first and second order corrections in the transformed
//! coordinates, their conversion back to the original coordinates, and the
//! tabulated evaluable expansion.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hierarchy::{solve_hierarchy, HdTable, HierarchySolution, OrderFields, Window};
use crate::linalg::exp_power_table;
use crate::noise::OUPath;
use crate::system::{CenterStableSpec, ExpansionConfig};
use crate::table::XiGrid;

/// Trapezoid with endpoint halving over window node values.
fn trapezoid_sum(terms: Vec<DVector<f64>>, h: f64) -> DVector<f64> {
    let n = terms.len() - 1;
    let mut acc = DVector::zeros(terms[0].len());
    for (k, t) in terms.iter().enumerate() {
        let w = if k == 0 || k == n { 0.5 * h } else { h };
        acc += t * w;
    }
    acc
}

/// First-order manifold coefficient in transformed coordinates:
/// the history integral of the first-order stable forcing weighted by
/// `e^{-A_s tau}` over [-T, 0].
pub fn tilde_h1(
    spec: &CenterStableSpec,
    order0: &OrderFields,
    order1: &OrderFields,
    ou1: &OUPath,
    ou2: &OUPath,
    config: &ExpansionConfig,
) -> Result<DVector<f64>> {
    let win = Window::build(ou1, ou2, config)?;
    let n = win.n;
    if order0.x.len() != n + 1 || order1.x.len() != n + 1 {
        return Err(Error::Dimension(
            "hierarchy fields do not match the truncation window".into(),
        ));
    }
    // e^{-A_s tau_k} = e^{A_s (n-k) h}
    let kernels = exp_power_table(&spec.a_s, win.h, n)?;
    let mut integrand = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let (x0, y0) = (&order0.x[k], &order0.y[k]);
        let (x1, y1) = (&order1.x[k], &order1.y[k]);
        let (z1, z2) = (win.z1[k], win.z2[k]);
        let int_tau_to_zero = win.cum2[n] - win.cum2[k];
        let fs = spec.f_s(x0, y0);
        let a = x1 + x0 * z1;
        let b = y1 + y0 * z2;
        let body = &fs * int_tau_to_zero + spec.jac_s_x(x0, y0) * a + spec.jac_s_y(x0, y0) * b
            - &fs * z2;
        integrand.push(&kernels[n - k] * body);
    }
    Ok(trapezoid_sum(integrand, win.h))
}

/// Second-order manifold coefficient in transformed coordinates: the full
/// second-order forcing (including the Hessian terms and the accumulated
/// noise-weight terms) integrated against `e^{-A_s tau}`.
pub fn tilde_h2(
    spec: &CenterStableSpec,
    order0: &OrderFields,
    order1: &OrderFields,
    order2: &OrderFields,
    ou1: &OUPath,
    ou2: &OUPath,
    config: &ExpansionConfig,
) -> Result<DVector<f64>> {
    let win = Window::build(ou1, ou2, config)?;
    let n = win.n;
    if order0.x.len() != n + 1 || order1.x.len() != n + 1 || order2.x.len() != n + 1 {
        return Err(Error::Dimension(
            "hierarchy fields do not match the truncation window".into(),
        ));
    }
    let kernels = exp_power_table(&spec.a_s, win.h, n)?;
    let mut integrand = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let (x0, y0) = (&order0.x[k], &order0.y[k]);
        let (x1, y1) = (&order1.x[k], &order1.y[k]);
        let (x2, y2) = (&order2.x[k], &order2.y[k]);
        let (z1, z2) = (win.z1[k], win.z2[k]);
        let izr = win.cum2[n] - win.cum2[k]; // int_tau^0 z2
        let fs = spec.f_s(x0, y0);
        let fsx = spec.jac_s_x(x0, y0);
        let fsy = spec.jac_s_y(x0, y0);
        let a = x1 + x0 * z1;
        let b = y1 + y0 * z2;
        let hess = spec.bil_s_xx(x0, y0, &a, &a) * 0.5
            + spec.bil_s_xy(x0, y0, &a, &b)
            + spec.bil_s_yy(x0, y0, &b, &b) * 0.5;
        let first_order_bracket = &fsx * &a + &fsy * &b - &fs * z2;
        let body = &fs * (0.5 * z2 * z2)
            + &fsx * &(x2 + x1 * z1 + x0 * (0.5 * z1 * z1) - &a * z2)
            + &fsy * &(y2 - y0 * (0.5 * z2 * z2))
            + hess
            + &fs * (0.5 * izr * izr)
            + first_order_bracket * izr;
        integrand.push(&kernels[n - k] * body);
    }
    Ok(trapezoid_sum(integrand, win.h))
}

/// Tabulated expansion of the manifold over a xi grid for one noise
/// realization: coefficients in both coordinate systems plus the
/// finite-difference derivative tables entering the inversion.
#[derive(Debug, Clone)]
pub struct ManifoldExpansion {
    pub xi_grid: XiGrid,
    /// Deterministic coefficient (identical in both coordinate systems).
    pub hd: Vec<DVector<f64>>,
    pub tilde_h1: Vec<DVector<f64>>,
    pub tilde_h2: Vec<DVector<f64>>,
    pub h1: Vec<DVector<f64>>,
    pub h2: Vec<DVector<f64>>,
    /// d Hd / d xi per grid point (m x n).
    pub d_hd: Vec<DMatrix<f64>>,
    /// Second xi-derivatives of Hd per grid point and output component.
    pub d2_hd: Vec<Vec<DMatrix<f64>>>,
    /// d tilde_H1 / d xi per grid point (m x n).
    pub d_h1: Vec<DMatrix<f64>>,
    pub z1_at_0: f64,
    pub z2_at_0: f64,
    pub eps_validity_note: String,
}

/// Original-coordinate coefficients from the transformed tables:
/// the Taylor expansion of `e^{eps z2} tilde_H(e^{-eps z1} xi)` in eps,
/// which at second order carries both the gradient and the Hessian of the
/// deterministic coefficient.
#[allow(clippy::too_many_arguments)]
pub fn to_original_coordinates(
    xi_grid: &XiGrid,
    tilde_hd: &[DVector<f64>],
    tilde_h1_tab: &[DVector<f64>],
    tilde_h2_tab: &[DVector<f64>],
    d_hd: &[DMatrix<f64>],
    d2_hd: &[Vec<DMatrix<f64>>],
    d_h1: &[DMatrix<f64>],
    z1: f64,
    z2: f64,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let p = xi_grid.len();
    if [
        tilde_hd.len(),
        tilde_h1_tab.len(),
        tilde_h2_tab.len(),
        d_hd.len(),
        d2_hd.len(),
        d_h1.len(),
    ]
    .iter()
    .any(|l| *l != p)
    {
        return Err(Error::Dimension("table sizes do not match the grid".into()));
    }
    if p < 3 {
        return Err(Error::Config(
            "need at least 3 grid points for derivative tables".into(),
        ));
    }
    let mut hd = Vec::with_capacity(p);
    let mut h1 = Vec::with_capacity(p);
    let mut h2 = Vec::with_capacity(p);
    for q in 0..p {
        let xi = xi_grid.point(q);
        let grad_term = &d_hd[q] * &xi; // (dHd/dxi) xi
        let grad1_term = &d_h1[q] * &xi;
        let m = tilde_hd[q].len();
        let mut hess_term = DVector::zeros(m);
        for c in 0..m {
            hess_term[c] = (xi.transpose() * &d2_hd[q][c] * &xi)[(0, 0)];
        }
        hd.push(tilde_hd[q].clone());
        h1.push(&tilde_h1_tab[q] + &tilde_hd[q] * z2 - &grad_term * z1);
        h2.push(
            &tilde_h2_tab[q]
                + &grad_term * (0.5 * z1 * z1)
                + &hess_term * (0.5 * z1 * z1)
                - &grad_term * (z1 * z2)
                + &tilde_hd[q] * (0.5 * z2 * z2)
                - &grad1_term * z1
                + &tilde_h1_tab[q] * z2,
        );
    }
    Ok((hd, h1, h2))
}

/// Full per-realization pipeline: deterministic table, hierarchy solves per
/// grid point, history integrals, derivative tables, and the
/// original-coordinate assembly.
pub fn build_expansion(
    spec: &CenterStableSpec,
    hd: &HdTable,
    ou1: &OUPath,
    ou2: &OUPath,
    config: &ExpansionConfig,
) -> Result<ManifoldExpansion> {
    let grid = &hd.xi_grid;
    let mut t1 = Vec::with_capacity(grid.len());
    let mut t2 = Vec::with_capacity(grid.len());
    for q in 0..grid.len() {
        let xi = grid.point(q);
        let sol = solve_hierarchy(spec, &xi, hd, ou1, ou2, config)?;
        t1.push(tilde_h1(spec, &sol.order0, &sol.order1, ou1, ou2, config)?);
        t2.push(tilde_h2(
            spec,
            &sol.order0,
            &sol.order1,
            &sol.order2,
            ou1,
            ou2,
            config,
        )?);
    }
    let d_h1 = grid.jacobian_table(&t1)?;
    let z1 = ou1.z_at_zero();
    let z2 = ou2.z_at_zero();
    let (hd_tab, h1, h2) = to_original_coordinates(
        grid,
        &hd.values,
        &t1,
        &t2,
        &hd.jacobians,
        &hd.hessians,
        &d_h1,
        z1,
        z2,
    )?;
    let note = format!(
        "second-order truncation, remainder O(eps^3); conjugation factors use \
         z(0) = ({z1:.4}, {z2:.4}), so keep |eps| well below 1/max(|z|, 1)"
    );
    Ok(ManifoldExpansion {
        xi_grid: grid.clone(),
        hd: hd_tab,
        tilde_h1: t1,
        tilde_h2: t2,
        h1,
        h2,
        d_hd: hd.jacobians.clone(),
        d2_hd: hd.hessians.clone(),
        d_h1,
        z1_at_0: z1,
        z2_at_0: z2,
        eps_validity_note: note,
    })
}

impl ManifoldExpansion {
    /// `Hd(xi) + eps H1(xi) + eps^2 H2(xi)` by table interpolation.
    pub fn evaluate(&self, eps: f64, xi: &DVector<f64>) -> Result<DVector<f64>> {
        self.evaluate_truncated(eps, xi, 2)
    }

    /// Truncation at a chosen order (0, 1, or 2).
    pub fn evaluate_truncated(&self, eps: f64, xi: &DVector<f64>, order: usize) -> Result<DVector<f64>> {
        let mut v = self.xi_grid.interpolate(&self.hd, xi)?;
        if order >= 1 {
            v += self.xi_grid.interpolate(&self.h1, xi)? * eps;
        }
        if order >= 2 {
            v += self.xi_grid.interpolate(&self.h2, xi)? * (eps * eps);
        }
        Ok(v)
    }
}

/// Tilde-coordinate expansion value at a single anchor point (used by the
/// invariance diagnostics, where the path is re-anchored per sample time).
pub fn tilde_expansion_at(
    spec: &CenterStableSpec,
    hd: &HdTable,
    ou1: &OUPath,
    ou2: &OUPath,
    eps: f64,
    xi_tilde: &DVector<f64>,
    config: &ExpansionConfig,
) -> Result<(DVector<f64>, HierarchySolution)> {
    let sol = solve_hierarchy(spec, xi_tilde, hd, ou1, ou2, config)?;
    let t1 = tilde_h1(spec, &sol.order0, &sol.order1, ou1, ou2, config)?;
    let t2 = tilde_h2(
        spec,
        &sol.order0,
        &sol.order1,
        &sol.order2,
        ou1,
        ou2,
        config,
    )?;
    let base = hd.value_at(xi_tilde)?;
    Ok((base + t1 * eps + t2 * (eps * eps), sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example::{example_config, example_spec, ExampleClosedForms};
    use crate::grid::TimeGrid;
    use crate::hierarchy::deterministic_center_manifold;
    use crate::noise::{OuInitMode, WienerPath};
    use approx::assert_abs_diff_eq;

    fn paths(seed: u64, h: f64, t_back: f64) -> (WienerPath, OUPath) {
        let grid = TimeGrid::new(t_back, 0.0, h).unwrap();
        let w = WienerPath::generate(seed, &grid).unwrap();
        let ou = OUPath::from_wiener(&w, OuInitMode::StationarySample);
        (w, ou)
    }

    fn build(seed: u64, h: f64, t_back: f64) -> (ManifoldExpansion, WienerPath, OUPath) {
        let (w, ou) = paths(seed, h, t_back);
        let spec = example_spec();
        let mut config = example_config();
        config.h = h;
        config.t_trunc = t_back;
        let grid = XiGrid::uniform_1d(-1.0, 1.0, 41).unwrap();
        let hd = deterministic_center_manifold(&spec, &grid, &config).unwrap();
        let exp = build_expansion(&spec, &hd, &ou, &ou, &config).unwrap();
        (exp, w, ou)
    }

    #[test]
    fn tilde_h1_is_small_for_example() {
        let (exp, _, _) = build(1, 0.01, 15.0);
        for (q, v) in exp.tilde_h1.iter().enumerate() {
            let xi = exp.xi_grid.point(q)[0];
            assert!(
                v[0].abs() <= 1e-2 * xi * xi + 1e-6,
                "tilde_h1({xi}) = {}",
                v[0]
            );
        }
    }

    #[test]
    fn zero_path_and_origin_zero_out_tilde_terms() {
        let h = 0.02;
        let grid = TimeGrid::new(8.0, 0.0, h).unwrap();
        let w = WienerPath::from_increments(&grid, vec![0.0; grid.n_steps()], 0).unwrap();
        let ou = OUPath::from_wiener(&w, crate::noise::OuInitMode::Zero);
        let spec = example_spec();
        let mut config = example_config();
        config.h = h;
        config.t_trunc = 8.0;
        let gridx = XiGrid::uniform_1d(-1.0, 1.0, 5).unwrap();
        let hd = deterministic_center_manifold(&spec, &gridx, &config).unwrap();
        let exp = build_expansion(&spec, &hd, &ou, &ou, &config).unwrap();
        // z == 0: every tilde correction vanishes identically
        for p in 0..gridx.len() {
            assert_eq!(exp.tilde_h1[p][0], 0.0);
            assert_eq!(exp.tilde_h2[p][0], 0.0);
            assert_eq!(exp.h1[p][0], 0.0);
            assert_eq!(exp.h2[p][0], 0.0);
        }
        // at the origin everything is zero for any path
        let (_, ou_rand) = {
            let w = WienerPath::generate(3, &grid).unwrap();
            let ou = OUPath::from_wiener(&w, crate::noise::OuInitMode::StationarySample);
            (w, ou)
        };
        let exp2 = build_expansion(&spec, &hd, &ou_rand, &ou_rand, &config).unwrap();
        let origin = DVector::zeros(1);
        let v = exp2.evaluate(0.05, &origin).unwrap();
        assert!(v[0].abs() < 1e-12, "expansion at origin: {}", v[0]);
    }

    #[test]
    fn zero_stable_nonlinearity_zeroes_tilde_h1() {
        // f_s == 0 with a nontrivial center nonlinearity: every term of the
        // correction integrals carries f_s or its derivatives
        let h = 0.02;
        let grid = TimeGrid::new(6.0, 0.0, h).unwrap();
        let w = WienerPath::generate(5, &grid).unwrap();
        let ou = OUPath::from_wiener(&w, crate::noise::OuInitMode::StationarySample);
        let f_c = crate::poly::PolynomialMap::new(
            1,
            1,
            1,
            vec![crate::poly::PolyTerm {
                component: 0,
                coeff: 0.1,
                x_exp: vec![1],
                y_exp: vec![0],
            }],
        )
        .unwrap();
        let spec = crate::system::CenterStableSpec::from_polynomials(
            nalgebra::DMatrix::from_row_slice(1, 1, &[0.0]),
            nalgebra::DMatrix::from_row_slice(1, 1, &[-1.0]),
            f_c,
            crate::poly::PolynomialMap::zero(1, 1, 1),
            0.1,
        )
        .unwrap();
        let mut config = example_config();
        config.h = h;
        config.t_trunc = 6.0;
        let gridx = XiGrid::uniform_1d(-1.0, 1.0, 5).unwrap();
        let hd = deterministic_center_manifold(&spec, &gridx, &config).unwrap();
        let exp = build_expansion(&spec, &hd, &ou, &ou, &config).unwrap();
        for p in 0..gridx.len() {
            assert_eq!(exp.tilde_h1[p][0], 0.0);
            assert_eq!(exp.tilde_h2[p][0], 0.0);
        }
    }

    #[test]
    fn h1_matches_closed_form() {
        let (exp, w, ou) = build(2, 0.005, 20.0);
        let forms = ExampleClosedForms::compute(&w, &ou, 20.0).unwrap();
        // xi = 1 is the last grid point
        let q = exp.xi_grid.len() - 1;
        let closed = forms.closed_h1(1.0);
        let rel = (exp.h1[q][0] - closed).abs() / closed.abs();
        assert!(rel < 1e-2, "rel = {rel}");
    }

    #[test]
    fn zero_noise_collapses_to_tilde_tables() {
        // z1 = z2 = 0 -> H1 = tilde_H1, H2 = tilde_H2
        let grid = XiGrid::uniform_1d(-1.0, 1.0, 5).unwrap();
        let n = grid.len();
        let mk = |c: f64| -> Vec<DVector<f64>> {
            (0..n)
                .map(|q| DVector::from_row_slice(&[c * grid.point(q)[0]]))
                .collect()
        };
        let tilde_hd = mk(1.0);
        let t1 = mk(2.0);
        let t2 = mk(3.0);
        let d_hd = grid.jacobian_table(&tilde_hd).unwrap();
        let d2_hd = grid.hessian_table(&tilde_hd).unwrap();
        let d_h1 = grid.jacobian_table(&t1).unwrap();
        let (hd, h1, h2) =
            to_original_coordinates(&grid, &tilde_hd, &t1, &t2, &d_hd, &d2_hd, &d_h1, 0.0, 0.0)
                .unwrap();
        for q in 0..n {
            assert_eq!(hd[q], tilde_hd[q]);
            assert_eq!(h1[q], t1[q]);
            assert_eq!(h2[q], t2[q]);
        }
    }

    #[test]
    fn example_h1_assembly_identity() {
        // with tilde_H1 ~ 0: H1 = z2 Hd - dHd z1 xi = -z xi^2 + 2 z xi^2 = z xi^2
        let (exp, _, ou) = build(3, 0.01, 15.0);
        let z = ou.z_at_zero();
        for q in 0..exp.xi_grid.len() {
            let xi = exp.xi_grid.point(q)[0];
            assert!(
                (exp.h1[q][0] - z * xi * xi).abs() < 5e-3 * (1.0 + xi * xi),
                "xi = {xi}"
            );
        }
    }

    #[test]
    fn evaluate_matches_polynomial_form() {
        let (exp, _, _) = build(4, 0.01, 15.0);
        let xi = DVector::from_row_slice(&[0.5]);
        let eps = 0.07;
        let v0 = exp.evaluate_truncated(eps, &xi, 0).unwrap();
        let v1 = exp.evaluate_truncated(eps, &xi, 1).unwrap();
        let v2 = exp.evaluate(eps, &xi).unwrap();
        let h1 = exp.xi_grid.interpolate(&exp.h1, &xi).unwrap();
        let h2 = exp.xi_grid.interpolate(&exp.h2, &xi).unwrap();
        assert_abs_diff_eq!(v1[0], v0[0] + eps * h1[0], epsilon = 1e-14);
        assert_abs_diff_eq!(v2[0], v1[0] + eps * eps * h2[0], epsilon = 1e-14);
        // eps-consistency: E(eps) - E(-eps) = 2 eps H1 exactly
        let plus = exp.evaluate(eps, &xi).unwrap();
        let minus = exp.evaluate(-eps, &xi).unwrap();
        assert_abs_diff_eq!(plus[0] - minus[0], 2.0 * eps * h1[0], epsilon = 1e-14);
    }

    #[test]
    fn derivative_tables_are_central_differences_of_values() {
        // regression guard: the stored derivative tables must stay the
        // finite-difference images of the value tables
        let (exp, _, _) = build(7, 0.02, 8.0);
        let d_h1 = exp.xi_grid.jacobian_table(&exp.tilde_h1).unwrap();
        for (a, b) in exp.d_h1.iter().zip(&d_h1) {
            assert_eq!(a, b);
        }
        let d_hd = exp.xi_grid.jacobian_table(&exp.hd).unwrap();
        for (a, b) in exp.d_hd.iter().zip(&d_hd) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn quadratic_homogeneity_of_example_tables() {
        let (exp, _, _) = build(5, 0.01, 15.0);
        // ratio H(0.5)/H(1.0) = 1/4 for all five quadratic-homogeneous tables
        let q_half = exp
            .xi_grid
            .interpolate(&exp.h2, &DVector::from_row_slice(&[0.5]))
            .unwrap();
        let q_one = exp
            .xi_grid
            .interpolate(&exp.h2, &DVector::from_row_slice(&[1.0]))
            .unwrap();
        assert!(
            (q_half[0] / q_one[0] - 0.25).abs() < 2e-2,
            "H2 ratio = {}",
            q_half[0] / q_one[0]
        );
        for table in [&exp.hd, &exp.tilde_h2, &exp.h1] {
            let a = exp
                .xi_grid
                .interpolate(table, &DVector::from_row_slice(&[0.5]))
                .unwrap();
            let b = exp
                .xi_grid
                .interpolate(table, &DVector::from_row_slice(&[1.0]))
                .unwrap();
            if b[0].abs() > 1e-6 {
                assert!((a[0] / b[0] - 0.25).abs() < 2e-2, "ratio = {}", a[0] / b[0]);
            }
        }
    }

    #[test]
    fn consistency_y1_boundary_equals_tilde_h1() {
        // the fixed point's boundary value is the integral; both routes agree
        // once fp_tol sits at the quadrature scale of the discretization
        let h = 0.002;
        let (w, ou) = paths(6, h, 20.0);
        let _ = w;
        let spec = example_spec();
        let mut config = example_config();
        config.h = h;
        config.t_trunc = 20.0;
        config.fp_tol = 1e-6;
        let grid = XiGrid::uniform_1d(-1.5, 1.5, 11).unwrap();
        let hd = deterministic_center_manifold(&spec, &grid, &config).unwrap();
        let xi = DVector::from_row_slice(&[1.0]);
        let (_, sol) = tilde_expansion_at(&spec, &hd, &ou, &ou, 0.05, &xi, &config).unwrap();
        let t1 = tilde_h1(&spec, &sol.order0, &sol.order1, &ou, &ou, &config).unwrap();
        let y1_zero = sol.order1.y.last().unwrap();
        assert!(
            (y1_zero[0] - t1[0]).abs() <= 5.0 * config.fp_tol,
            "|Y1(0) - tilde_H1| = {}",
            (y1_zero[0] - t1[0]).abs()
        );
    }
}

//! Problem specification for center-stable systems: linear blocks,
//! nonlinearities with derivative providers, trichotomy data, cutoffs, and
//! the Lyapunov/gap diagnostics.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{expm, joint_norm, operator_norm};
use crate::noise::OUPath;
use crate::poly::PolynomialMap;

pub type VectorFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// Second-derivative bilinear form: `(x, y, u, v) -> f_ab(x, y)[u, v]`.
pub type BilinearFn =
    Arc<dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Which slot a derivative acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    X,
    Y,
}

/// Exponential trichotomy constants of assumption-style estimates
/// `|e^{A_c t}| <= K e^{gamma |t|}` and `|e^{A_s t}| <= K e^{-beta t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrichotomyParams {
    pub k: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl TrichotomyParams {
    pub fn new(k: f64, beta: f64, gamma: f64) -> Result<Self> {
        if !(k >= 1.0) {
            return Err(Error::Config(format!("K = {k} must be >= 1")));
        }
        if !(beta > gamma && gamma >= 0.0) {
            return Err(Error::Config(format!(
                "need beta > gamma >= 0, got beta = {beta}, gamma = {gamma}"
            )));
        }
        Ok(Self { k, beta, gamma })
    }
}

/// Numerical knobs shared by the hierarchy, expansion, and oracle solvers.
#[derive(Debug, Clone)]
pub struct ExpansionConfig {
    /// History truncation horizon T (the solvers work on [-T, 0]).
    pub t_trunc: f64,
    /// Grid step; must match the noise paths.
    pub h: f64,
    /// Fixed-point stopping tolerance in the eta-weighted sup norm.
    pub fp_tol: f64,
    pub fp_max_iters: usize,
    /// Damping factor in (0, 1]; 1 is plain Picard.
    pub fp_damping: f64,
    /// Step for xi-direction finite differences (table derivatives).
    pub fd_step: f64,
    /// Weight exponent of the history norm; needs gamma < eta < beta when
    /// trichotomy constants are attached.
    pub eta: f64,
    pub trichotomy: Option<TrichotomyParams>,
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_trunc > 0.0) || !(self.h > 0.0) || !(self.fp_tol > 0.0) {
            return Err(Error::Config(
                "t_trunc, h, and fp_tol must all be positive".into(),
            ));
        }
        if self.fp_max_iters == 0 {
            return Err(Error::Config("fp_max_iters must be positive".into()));
        }
        if !(self.fp_damping > 0.0 && self.fp_damping <= 1.0) {
            return Err(Error::Config(format!(
                "fp_damping = {} must lie in (0, 1]",
                self.fp_damping
            )));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::Config("fd_step must be positive".into()));
        }
        if let Some(p) = &self.trichotomy {
            if !(self.eta > p.gamma && self.eta < p.beta) {
                return Err(Error::Config(format!(
                    "eta = {} must lie in ({}, {})",
                    self.eta, p.gamma, p.beta
                )));
            }
        } else if !(self.eta > 0.0) {
            return Err(Error::Config("eta must be positive".into()));
        }
        Ok(())
    }

    /// Default truncation for a tolerance and weight geometry:
    /// the history integrand decays like e^{-(beta - eta)|tau|}.
    pub fn default_t_trunc(fp_tol: f64, params: &TrichotomyParams, eta: f64) -> f64 {
        (1.0 / fp_tol).ln() / (params.beta - eta)
    }

    /// Hint used in divergence errors.
    pub(crate) fn margin_hint(&self, lipschitz: f64) -> String {
        match &self.trichotomy {
            Some(p) => {
                let g = gap_condition(p, lipschitz);
                format!(
                    "gap margin 4*K*L_f/(beta-gamma) = {:.3} ({})",
                    g.margin,
                    if g.holds { "contractive" } else { "NOT contractive" }
                )
            }
            None => "no trichotomy constants attached".into(),
        }
    }
}

/// Center-stable problem: linear blocks, nonlinearities, derivative
/// providers, Lipschitz data, optional cutoff radius.
#[derive(Clone)]
pub struct CenterStableSpec {
    dim_c: usize,
    dim_s: usize,
    pub a_c: DMatrix<f64>,
    pub a_s: DMatrix<f64>,
    f_c: VectorFn,
    f_s: VectorFn,
    f_c_x: Option<JacobianFn>,
    f_c_y: Option<JacobianFn>,
    f_s_x: Option<JacobianFn>,
    f_s_y: Option<JacobianFn>,
    f_c_xx: Option<BilinearFn>,
    f_c_xy: Option<BilinearFn>,
    f_c_yy: Option<BilinearFn>,
    f_s_xx: Option<BilinearFn>,
    f_s_xy: Option<BilinearFn>,
    f_s_yy: Option<BilinearFn>,
    pub lipschitz: f64,
    pub cutoff_radius: Option<f64>,
}

impl std::fmt::Debug for CenterStableSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CenterStableSpec")
            .field("dim_c", &self.dim_c)
            .field("dim_s", &self.dim_s)
            .field("a_c", &self.a_c)
            .field("a_s", &self.a_s)
            .field("lipschitz", &self.lipschitz)
            .field("cutoff_radius", &self.cutoff_radius)
            .finish_non_exhaustive()
    }
}

/// Builder so call sites only name the evaluators they actually have.
pub struct SpecBuilder {
    spec: CenterStableSpec,
}

impl SpecBuilder {
    pub fn new(
        a_c: DMatrix<f64>,
        a_s: DMatrix<f64>,
        f_c: VectorFn,
        f_s: VectorFn,
        lipschitz: f64,
    ) -> Result<Self> {
        if a_c.nrows() != a_c.ncols() || a_s.nrows() != a_s.ncols() {
            return Err(Error::Dimension("A_c and A_s must be square".into()));
        }
        if a_c.iter().chain(a_s.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite matrix entries".into()));
        }
        if !(lipschitz >= 0.0) {
            return Err(Error::Config("Lipschitz constant must be >= 0".into()));
        }
        let dim_c = a_c.nrows();
        let dim_s = a_s.nrows();
        Ok(Self {
            spec: CenterStableSpec {
                dim_c,
                dim_s,
                a_c,
                a_s,
                f_c,
                f_s,
                f_c_x: None,
                f_c_y: None,
                f_s_x: None,
                f_s_y: None,
                f_c_xx: None,
                f_c_xy: None,
                f_c_yy: None,
                f_s_xx: None,
                f_s_xy: None,
                f_s_yy: None,
                lipschitz,
                cutoff_radius: None,
            },
        })
    }

    pub fn jacobians_c(mut self, fx: JacobianFn, fy: JacobianFn) -> Self {
        self.spec.f_c_x = Some(fx);
        self.spec.f_c_y = Some(fy);
        self
    }

    pub fn jacobians_s(mut self, fx: JacobianFn, fy: JacobianFn) -> Self {
        self.spec.f_s_x = Some(fx);
        self.spec.f_s_y = Some(fy);
        self
    }

    pub fn hessians_c(mut self, fxx: BilinearFn, fxy: BilinearFn, fyy: BilinearFn) -> Self {
        self.spec.f_c_xx = Some(fxx);
        self.spec.f_c_xy = Some(fxy);
        self.spec.f_c_yy = Some(fyy);
        self
    }

    pub fn hessians_s(mut self, fxx: BilinearFn, fxy: BilinearFn, fyy: BilinearFn) -> Self {
        self.spec.f_s_xx = Some(fxx);
        self.spec.f_s_xy = Some(fxy);
        self.spec.f_s_yy = Some(fyy);
        self
    }

    pub fn cutoff_radius(mut self, r: f64) -> Self {
        self.spec.cutoff_radius = Some(r);
        self
    }

    pub fn build(self) -> CenterStableSpec {
        self.spec
    }
}

fn poly_vector_fn(p: PolynomialMap) -> VectorFn {
    Arc::new(move |x, y| p.eval(x, y))
}

impl CenterStableSpec {
    /// Spec from polynomial nonlinearities; all derivatives analytic.
    pub fn from_polynomials(
        a_c: DMatrix<f64>,
        a_s: DMatrix<f64>,
        f_c: PolynomialMap,
        f_s: PolynomialMap,
        lipschitz: f64,
    ) -> Result<Self> {
        let dim_c = a_c.nrows();
        let dim_s = a_s.nrows();
        if f_c.dim_out() != dim_c || f_s.dim_out() != dim_s {
            return Err(Error::Dimension(
                "polynomial output dimensions must match the blocks".into(),
            ));
        }
        let (c0, c1, c2, c3, c4) = (
            f_c.clone(),
            f_c.clone(),
            f_c.clone(),
            f_c.clone(),
            f_c.clone(),
        );
        let (s0, s1, s2, s3, s4) = (
            f_s.clone(),
            f_s.clone(),
            f_s.clone(),
            f_s.clone(),
            f_s.clone(),
        );
        let builder = SpecBuilder::new(
            a_c,
            a_s,
            poly_vector_fn(f_c),
            poly_vector_fn(f_s),
            lipschitz,
        )?;
        Ok(builder
            .jacobians_c(
                Arc::new(move |x, y| c0.jac_x(x, y)),
                Arc::new(move |x, y| c1.jac_y(x, y)),
            )
            .jacobians_s(
                Arc::new(move |x, y| s0.jac_x(x, y)),
                Arc::new(move |x, y| s1.jac_y(x, y)),
            )
            .hessians_c(
                Arc::new(move |x, y, u, v| c2.bilinear(x, y, false, false, u, v)),
                Arc::new(move |x, y, u, v| c3.bilinear(x, y, false, true, u, v)),
                Arc::new(move |x, y, u, v| c4.bilinear(x, y, true, true, u, v)),
            )
            .hessians_s(
                Arc::new(move |x, y, u, v| s2.bilinear(x, y, false, false, u, v)),
                Arc::new(move |x, y, u, v| s3.bilinear(x, y, false, true, u, v)),
                Arc::new(move |x, y, u, v| s4.bilinear(x, y, true, true, u, v)),
            )
            .build())
    }

    pub fn dim_c(&self) -> usize {
        self.dim_c
    }

    pub fn dim_s(&self) -> usize {
        self.dim_s
    }

    pub fn f_c(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        (self.f_c)(x, y)
    }

    pub fn f_s(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        (self.f_s)(x, y)
    }

    fn fd_first_step(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        f64::EPSILON.cbrt() * (1.0 + joint_norm(x, y))
    }

    fn fd_second_step(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        f64::EPSILON.powf(0.25) * (1.0 + joint_norm(x, y))
    }

    fn fd_jacobian(
        f: &VectorFn,
        x: &DVector<f64>,
        y: &DVector<f64>,
        slot: Slot,
        rows: usize,
    ) -> DMatrix<f64> {
        let s = Self::fd_first_step(x, y);
        let cols = match slot {
            Slot::X => x.len(),
            Slot::Y => y.len(),
        };
        let mut out = DMatrix::zeros(rows, cols);
        for j in 0..cols {
            let (mut xp, mut yp) = (x.clone(), y.clone());
            let (mut xm, mut ym) = (x.clone(), y.clone());
            match slot {
                Slot::X => {
                    xp[j] += s;
                    xm[j] -= s;
                }
                Slot::Y => {
                    yp[j] += s;
                    ym[j] -= s;
                }
            }
            let col = (f(&xp, &yp) - f(&xm, &ym)) / (2.0 * s);
            out.set_column(j, &col);
        }
        out
    }

    /// Directional second difference of `f` along `(u, v)` placed in the
    /// chosen slots: the four-point stencil for mixed directions, the
    /// three-point stencil when both slots coincide.
    fn fd_bilinear(
        f: &VectorFn,
        x: &DVector<f64>,
        y: &DVector<f64>,
        a: Slot,
        b: Slot,
        u: &DVector<f64>,
        v: &DVector<f64>,
    ) -> DVector<f64> {
        let s = Self::fd_second_step(x, y);
        let place = |slot: Slot, dir: &DVector<f64>, sign: f64, x0: &mut DVector<f64>, y0: &mut DVector<f64>| {
            match slot {
                Slot::X => *x0 += dir * (sign * s),
                Slot::Y => *y0 += dir * (sign * s),
            }
        };
        if a == b && std::ptr::eq(u, v) {
            // f''[u, u] ~ (f(+su) - 2 f + f(-su)) / s^2
            let (mut xp, mut yp) = (x.clone(), y.clone());
            let (mut xm, mut ym) = (x.clone(), y.clone());
            place(a, u, 1.0, &mut xp, &mut yp);
            place(a, u, -1.0, &mut xm, &mut ym);
            return (f(&xp, &yp) - f(x, y) * 2.0 + f(&xm, &ym)) / (s * s);
        }
        // mixed: (f(+u+v) - f(+u-v) - f(-u+v) + f(-u-v)) / (4 s^2)
        let eval = |su: f64, sv: f64| {
            let (mut x0, mut y0) = (x.clone(), y.clone());
            place(a, u, su, &mut x0, &mut y0);
            place(b, v, sv, &mut x0, &mut y0);
            f(&x0, &y0)
        };
        (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * s * s)
    }

    pub fn jac_c_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        match &self.f_c_x {
            Some(j) => j(x, y),
            None => Self::fd_jacobian(&self.f_c, x, y, Slot::X, self.dim_c),
        }
    }

    pub fn jac_c_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        match &self.f_c_y {
            Some(j) => j(x, y),
            None => Self::fd_jacobian(&self.f_c, x, y, Slot::Y, self.dim_c),
        }
    }

    pub fn jac_s_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        match &self.f_s_x {
            Some(j) => j(x, y),
            None => Self::fd_jacobian(&self.f_s, x, y, Slot::X, self.dim_s),
        }
    }

    pub fn jac_s_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        match &self.f_s_y {
            Some(j) => j(x, y),
            None => Self::fd_jacobian(&self.f_s, x, y, Slot::Y, self.dim_s),
        }
    }

    /// Whether any second derivative falls back to finite differences.
    pub fn hessians_auto_filled(&self) -> bool {
        self.f_c_xx.is_none()
            || self.f_c_xy.is_none()
            || self.f_c_yy.is_none()
            || self.f_s_xx.is_none()
            || self.f_s_xy.is_none()
            || self.f_s_yy.is_none()
    }

    pub fn bil_c_xx(&self, x: &DVector<f64>, y: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        match &self.f_c_xx {
            Some(b) => b(x, y, u, v),
            None => Self::fd_bilinear(&self.f_c, x, y, Slot::X, Slot::X, u, v),
        }
    }

    pub fn bil_c_xy(&self, x: &DVector<f64>, y: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        match &self.f_c_xy {
            Some(b) => b(x, y, u, v),
            None => Self::fd_bilinear(&self.f_c, x, y, Slot::X, Slot::Y, u, v),
        }
    }

    pub fn bil_c_yy(&self, x: &DVector<f64>, y: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        match &self.f_c_yy {
            Some(b) => b(x, y, u, v),
            None => Self::fd_bilinear(&self.f_c, x, y, Slot::Y, Slot::Y, u, v),
        }
    }

    pub fn bil_s_xx(&self, x: &DVector<f64>, y: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        match &self.f_s_xx {
            Some(b) => b(x, y, u, v),
            None => Self::fd_bilinear(&self.f_s, x, y, Slot::X, Slot::X, u, v),
        }
    }

    pub fn bil_s_xy(&self, x: &DVector<f64>, y: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        match &self.f_s_xy {
            Some(b) => b(x, y, u, v),
            None => Self::fd_bilinear(&self.f_s, x, y, Slot::X, Slot::Y, u, v),
        }
    }

    pub fn bil_s_yy(&self, x: &DVector<f64>, y: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        match &self.f_s_yy {
            Some(b) => b(x, y, u, v),
            None => Self::fd_bilinear(&self.f_s, x, y, Slot::Y, Slot::Y, u, v),
        }
    }

    /// Spec with nonlinearities multiplied by the C^1 cutoff
    /// `chi_R(|(x, y)|)`: identity on the closed ball of radius R, zero
    /// outside 2R, cubic Hermite ramp between. First derivatives are
    /// composed by the product rule; second derivatives fall back to the
    /// finite-difference default of the composed values.
    pub fn apply_cutoff(&self, r: f64) -> Result<CenterStableSpec> {
        if !(r > 0.0) {
            return Err(Error::Config(format!("cutoff radius {r} must be positive")));
        }
        let chi = move |rho: f64| -> (f64, f64) {
            // returns (chi, d chi / d rho)
            if rho <= r {
                (1.0, 0.0)
            } else if rho >= 2.0 * r {
                (0.0, 0.0)
            } else {
                let s = (rho - r) / r;
                (1.0 - s * s * (3.0 - 2.0 * s), -6.0 * s * (1.0 - s) / r)
            }
        };
        let wrap_value = |f: VectorFn| -> VectorFn {
            Arc::new(move |x: &DVector<f64>, y: &DVector<f64>| {
                let (c, _) = chi(joint_norm(x, y));
                f(x, y) * c
            })
        };
        let wrap_jac = |f: VectorFn, jac: JacobianFn, slot: Slot| -> JacobianFn {
            Arc::new(move |x: &DVector<f64>, y: &DVector<f64>| {
                let rho = joint_norm(x, y);
                let (c, dc) = chi(rho);
                let mut out = jac(x, y) * c;
                if dc != 0.0 && rho > 0.0 {
                    // grad_chi w.r.t. the slot coordinates: dc * u_slot / rho
                    let g = match slot {
                        Slot::X => x * (dc / rho),
                        Slot::Y => y * (dc / rho),
                    };
                    out += f(x, y) * g.transpose();
                }
                out
            })
        };
        let f_c_val = wrap_value(self.f_c.clone());
        let f_s_val = wrap_value(self.f_s.clone());
        // jacobians of the uncut map (supplied or FD) captured as closures
        let base = self.clone();
        let jc_x: JacobianFn = Arc::new(move |x, y| base.jac_c_x(x, y));
        let base = self.clone();
        let jc_y: JacobianFn = Arc::new(move |x, y| base.jac_c_y(x, y));
        let base = self.clone();
        let js_x: JacobianFn = Arc::new(move |x, y| base.jac_s_x(x, y));
        let base = self.clone();
        let js_y: JacobianFn = Arc::new(move |x, y| base.jac_s_y(x, y));
        let builder = SpecBuilder::new(
            self.a_c.clone(),
            self.a_s.clone(),
            f_c_val,
            f_s_val,
            self.lipschitz,
        )?;
        Ok(builder
            .jacobians_c(
                wrap_jac(self.f_c.clone(), jc_x, Slot::X),
                wrap_jac(self.f_c.clone(), jc_y, Slot::Y),
            )
            .jacobians_s(
                wrap_jac(self.f_s.clone(), js_x, Slot::X),
                wrap_jac(self.f_s.clone(), js_y, Slot::Y),
            )
            .cutoff_radius(r)
            .build())
    }
}

/// Outcome of checking the exponential estimates on sampled times.
#[derive(Debug, Clone)]
pub struct HypothesisReport {
    pub pass: bool,
    /// Largest value of |e^{A_c t}| - K e^{gamma |t|} over the samples.
    pub max_center_violation: f64,
    pub worst_center_t: f64,
    /// Largest value of |e^{A_s t}| - K e^{-beta t} over t >= 0 samples.
    pub max_stable_violation: f64,
    pub worst_stable_t: f64,
}

/// Check `|e^{A_c t}| <= K e^{gamma |t|}` (both signs of t) and
/// `|e^{A_s t}| <= K e^{-beta t}` (t >= 0) on the sampled times.
pub fn verify_hypothesis_h(
    spec: &CenterStableSpec,
    params: &TrichotomyParams,
    t_samples: &[f64],
) -> Result<HypothesisReport> {
    if t_samples.iter().any(|t| !t.is_finite()) {
        return Err(Error::Numerical("non-finite sample times".into()));
    }
    // small relative slack so exact-equality cases are not lost to rounding
    let slack = 1e-9;
    let mut report = HypothesisReport {
        pass: true,
        max_center_violation: f64::NEG_INFINITY,
        worst_center_t: f64::NAN,
        max_stable_violation: f64::NEG_INFINITY,
        worst_stable_t: f64::NAN,
    };
    for &t in t_samples {
        let norm_c = operator_norm(&expm(&(&spec.a_c * t))?);
        let bound_c = params.k * (params.gamma * t.abs()).exp();
        let viol_c = norm_c - bound_c;
        if viol_c > report.max_center_violation {
            report.max_center_violation = viol_c;
            report.worst_center_t = t;
        }
        if viol_c > slack * bound_c {
            report.pass = false;
        }
        if t >= 0.0 {
            let norm_s = operator_norm(&expm(&(&spec.a_s * t))?);
            let bound_s = params.k * (-params.beta * t).exp();
            let viol_s = norm_s - bound_s;
            if viol_s > report.max_stable_violation {
                report.max_stable_violation = viol_s;
                report.worst_stable_t = t;
            }
            if viol_s > slack * bound_s {
                report.pass = false;
            }
        }
    }
    Ok(report)
}

/// Result of the gap condition `K L_f / (eta - gamma) + K L_f / (beta - eta) < 1`.
#[derive(Debug, Clone, Copy)]
pub struct GapReport {
    pub holds: bool,
    /// Minimizing weight exponent (beta + gamma) / 2.
    pub eta_star: f64,
    /// Minimized left-hand side 4 K L_f / (beta - gamma).
    pub margin: f64,
}

pub fn gap_condition(params: &TrichotomyParams, lipschitz: f64) -> GapReport {
    let eta_star = 0.5 * (params.beta + params.gamma);
    let margin = 4.0 * params.k * lipschitz / (params.beta - params.gamma);
    GapReport {
        holds: margin < 1.0,
        eta_star,
        margin,
    }
}

/// Supplied-derivative audit against central differences.
#[derive(Debug, Clone)]
pub struct DerivativeReport {
    pub pass: bool,
    /// Worst |supplied - fd| / scale over all checked first derivatives.
    pub max_first_error: f64,
    /// Worst scaled error over all checked second-derivative forms.
    pub max_second_error: f64,
    /// How many evaluator slots were actually checked.
    pub checked: usize,
}

/// Compare supplied first/second derivatives against central differences at
/// the sample points. Slots without supplied evaluators are skipped (they
/// already ARE finite differences). Pass thresholds scale with the stencil
/// truncation error of the respective step.
pub fn check_derivatives(
    spec: &CenterStableSpec,
    sample_points: &[(DVector<f64>, DVector<f64>)],
    fd_step: f64,
) -> Result<DerivativeReport> {
    if !(fd_step > 0.0) {
        return Err(Error::Config("fd_step must be positive".into()));
    }
    let mut report = DerivativeReport {
        pass: true,
        max_first_error: 0.0,
        max_second_error: 0.0,
        checked: 0,
    };
    let first_tol = 10.0 * fd_step * fd_step;
    // second-derivative stencils balance truncation s^2 against rounding
    // eps/s^2; both are ~sqrt(eps) at the fourth-root step
    let second_step = f64::EPSILON.powf(0.25);
    let second_tol = 20.0 * second_step * second_step;
    for (x, y) in sample_points {
        let scale = 1.0 + joint_norm(x, y);
        let mut first = |supplied: &Option<JacobianFn>, f: &VectorFn, slot: Slot, rows: usize| {
            if let Some(j) = supplied {
                let a = j(x, y);
                let b = CenterStableSpec::fd_jacobian(f, x, y, slot, rows);
                let err = (a - b).abs().max() / scale;
                report.max_first_error = report.max_first_error.max(err);
                report.checked += 1;
                if err > first_tol {
                    report.pass = false;
                }
            }
        };
        first(&spec.f_c_x, &spec.f_c, Slot::X, spec.dim_c);
        first(&spec.f_c_y, &spec.f_c, Slot::Y, spec.dim_c);
        first(&spec.f_s_x, &spec.f_s, Slot::X, spec.dim_s);
        first(&spec.f_s_y, &spec.f_s, Slot::Y, spec.dim_s);
        // probe second derivatives along coordinate directions
        let ex: Vec<DVector<f64>> = (0..spec.dim_c)
            .map(|i| {
                let mut e = DVector::zeros(spec.dim_c);
                e[i] = 1.0;
                e
            })
            .collect();
        let ey: Vec<DVector<f64>> = (0..spec.dim_s)
            .map(|j| {
                let mut e = DVector::zeros(spec.dim_s);
                e[j] = 1.0;
                e
            })
            .collect();
        let mut second =
            |supplied: &Option<BilinearFn>, f: &VectorFn, a: Slot, b: Slot, us: &[DVector<f64>], vs: &[DVector<f64>]| {
                if let Some(bf) = supplied {
                    for u in us {
                        for v in vs {
                            let exact = bf(x, y, u, v);
                            let fd = CenterStableSpec::fd_bilinear(f, x, y, a, b, u, v);
                            let err = (exact - fd).abs().max() / scale;
                            report.max_second_error = report.max_second_error.max(err);
                            if err > second_tol {
                                report.pass = false;
                            }
                        }
                    }
                    report.checked += 1;
                }
            };
        second(&spec.f_c_xx, &spec.f_c, Slot::X, Slot::X, &ex, &ex);
        second(&spec.f_c_xy, &spec.f_c, Slot::X, Slot::Y, &ex, &ey);
        second(&spec.f_c_yy, &spec.f_c, Slot::Y, Slot::Y, &ey, &ey);
        second(&spec.f_s_xx, &spec.f_s, Slot::X, Slot::X, &ex, &ex);
        second(&spec.f_s_xy, &spec.f_s, Slot::X, Slot::Y, &ex, &ey);
        second(&spec.f_s_yy, &spec.f_s, Slot::Y, Slot::Y, &ey, &ey);
    }
    Ok(report)
}

/// Finite-horizon Lyapunov exponent of the linearization at the origin of
/// the transformed system: the fundamental matrix is block diagonal,
/// `e^{A_c T + eps int_0^T z_1} (+) e^{A_s T + eps int_0^T z_2}`.
///
/// `v` must live in one coordinate block of R^{n+m}. Log-norm accumulation
/// keeps long horizons away from overflow/underflow.
pub fn estimate_lyapunov(
    spec: &CenterStableSpec,
    ou_c: &OUPath,
    ou_s: &OUPath,
    eps: f64,
    v: &DVector<f64>,
    t_horizon: f64,
) -> Result<f64> {
    let n = spec.dim_c;
    let m = spec.dim_s;
    if v.len() != n + m {
        return Err(Error::Dimension(format!(
            "direction must have length {} (center + stable)",
            n + m
        )));
    }
    let vc = v.rows(0, n).into_owned();
    let vs = v.rows(n, m).into_owned();
    let (block_a, block_v, ou) = match (vc.norm() > 0.0, vs.norm() > 0.0) {
        (true, false) => (&spec.a_c, vc, ou_c),
        (false, true) => (&spec.a_s, vs, ou_s),
        (false, false) => return Err(Error::Config("zero direction vector".into())),
        (true, true) => {
            return Err(Error::Config(
                "direction must lie in a single coordinate block".into(),
            ))
        }
    };
    if !(t_horizon > 0.0) || t_horizon > ou.grid().t_end() + 1e-9 {
        return Err(Error::OutOfRange {
            t: t_horizon,
            lo: 0.0,
            hi: ou.grid().t_end(),
        });
    }
    let h = ou.grid().h();
    let steps = (t_horizon / h).round() as usize;
    let step_mat = expm(&(block_a * h))?;
    let mut w = block_v.normalize();
    let mut log_norm = block_v.norm().ln();
    for _ in 0..steps {
        w = &step_mat * w;
        let nw = w.norm();
        log_norm += nw.ln();
        w /= nw;
    }
    // the scalar noise factor commutes with the block
    let z0 = ou.grid().zero_node();
    let zint = {
        let zs = ou.values();
        let mut acc = 0.0;
        for k in z0..z0 + steps {
            acc += 0.5 * h * (zs[k] + zs[k + 1]);
        }
        acc
    };
    let t_actual = steps as f64 * h;
    Ok((log_norm + eps * zint) / t_actual)
}

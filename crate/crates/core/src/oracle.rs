//! Independent ground truth for the expansion: the full history fixed point
//! of the transformed system at finite noise, pathwise simulation of both
//! the random ODE and the original Stratonovich SDE, and the invariance and
//! convergence-order studies built on them.

use nalgebra::DVector;

use crate::conjugacy::{transformed_at_z, ConjugacyContext};
use crate::error::{Error, Result};
use crate::expansion::{tilde_expansion_at, ManifoldExpansion};
use crate::hierarchy::{history_trapezoid, HdTable, Stage, Window};
use crate::linalg::{expm, joint_norm, log_log_slope};
use crate::noise::{OUPath, WienerPath};
use crate::system::{CenterStableSpec, ExpansionConfig};

const BLOWUP_NORM: f64 = 1e6;

/// Converged history fixed point at one anchor realization.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub xi_tilde: DVector<f64>,
    pub eps: f64,
    /// Manifold value in the transformed coordinates, Y(0).
    pub tilde_h_eps: DVector<f64>,
    /// The same value carried back to the original coordinates with the
    /// anchor realization: `e^{eps z2(omega)} Y(0)`.
    pub h_eps: DVector<f64>,
    pub iterations: usize,
    /// Weighted sup-norm change of one extra sweep after convergence.
    pub residual: f64,
    /// Converged fields on the window nodes.
    pub trajectory: (Vec<DVector<f64>>, Vec<DVector<f64>>),
}

/// Picard iteration on the pair of history integrals of the transformed
/// system; the converged Y(0) is the manifold value at `xi_tilde`.
pub fn solve_rde_manifold(
    spec: &CenterStableSpec,
    ou1: &OUPath,
    ou2: &OUPath,
    eps: f64,
    xi_tilde: &DVector<f64>,
    config: &ExpansionConfig,
) -> Result<OracleResult> {
    if xi_tilde.len() != spec.dim_c() {
        return Err(Error::Dimension("xi_tilde has the wrong dimension".into()));
    }
    let win = Window::build(ou1, ou2, config)?;
    let n = win.n;
    let h = win.h;
    let e_c_back = expm(&(&spec.a_c * (-h)))?;
    let e_s = expm(&(&spec.a_s * h))?;
    // per-cell scalar kernel weights from the accumulated noise integrals
    let cell1: Vec<f64> = (0..n)
        .map(|k| (-eps * (win.cum1[k + 1] - win.cum1[k])).exp())
        .collect();
    let cell2: Vec<f64> = (0..n)
        .map(|k| (eps * (win.cum2[k + 1] - win.cum2[k])).exp())
        .collect();
    // C_eta weights including the eps-dependent factor e^{-eps int_0^t z}
    let wx: Vec<f64> = (0..=n)
        .map(|k| (config.eta * win.tau(k) - eps * (win.cum1[k] - win.cum1[n])).exp())
        .collect();
    let wy: Vec<f64> = (0..=n)
        .map(|k| (config.eta * win.tau(k) - eps * (win.cum2[k] - win.cum2[n])).exp())
        .collect();
    let weighted = |a: &[DVector<f64>], b: &[DVector<f64>], w: &[f64]| -> f64 {
        let mut worst = 0.0f64;
        for k in 0..a.len() {
            worst = worst.max((&a[k] - &b[k]).norm() * w[k]);
        }
        worst
    };
    // initial iterate: homogeneous center flow, zero stable component
    let mut x: Vec<DVector<f64>> = vec![DVector::zeros(spec.dim_c()); n + 1];
    x[n] = xi_tilde.clone();
    for k in (0..n).rev() {
        x[k] = &e_c_back * &x[k + 1] * cell1[k];
    }
    let mut y: Vec<DVector<f64>> = vec![DVector::zeros(spec.dim_s()); n + 1];
    let hint = config.margin_hint(spec.lipschitz);
    let sweep = |x: &[DVector<f64>], y: &[DVector<f64>]| -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let mut fc = Vec::with_capacity(n + 1);
        let mut fs = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let (c, s) = transformed_at_z(spec, eps, win.z1[k], win.z2[k], &x[k], &y[k]);
            fc.push(c);
            fs.push(s);
        }
        let mut x_new = vec![DVector::zeros(spec.dim_c()); n + 1];
        x_new[n] = x[n].clone();
        for k in (0..n).rev() {
            x_new[k] =
                &e_c_back * (&x_new[k + 1] - &fc[k + 1] * (0.5 * h)) * cell1[k] - &fc[k] * (0.5 * h);
        }
        let y_new = history_trapezoid(&e_s, h, &fs, Some(&cell2), None);
        (x_new, y_new)
    };
    let mut iterations = 0;
    let mut delta = f64::INFINITY;
    let mut last = f64::INFINITY;
    let mut growth = 0;
    for it in 0..config.fp_max_iters {
        let (x_new, y_raw) = sweep(&x, &y);
        let y_new: Vec<DVector<f64>> = if config.fp_damping < 1.0 {
            y_raw
                .iter()
                .zip(&y)
                .map(|(nv, ov)| nv * config.fp_damping + ov * (1.0 - config.fp_damping))
                .collect()
        } else {
            y_raw
        };
        delta = weighted(&x_new, &x, &wx).max(weighted(&y_new, &y, &wy));
        x = x_new;
        y = y_new;
        iterations = it + 1;
        if delta > last {
            growth += 1;
        } else {
            growth = 0;
        }
        last = delta;
        if growth >= 3 || !delta.is_finite() {
            return Err(Error::Divergence {
                iterations,
                delta,
                margin_hint: format!("{hint}; eps = {eps} may exceed the contraction range"),
            });
        }
        if delta <= config.fp_tol {
            break;
        }
    }
    if delta > config.fp_tol {
        return Err(Error::Divergence {
            iterations,
            delta,
            margin_hint: format!("fp_max_iters reached; {hint}"),
        });
    }
    let (x_chk, y_chk) = sweep(&x, &y);
    let residual = weighted(&x_chk, &x, &wx).max(weighted(&y_chk, &y, &wy));
    let tilde_h_eps = y[n].clone();
    let h_eps = &tilde_h_eps * (eps * ou2.z_at_zero()).exp();
    Ok(OracleResult {
        xi_tilde: xi_tilde.clone(),
        eps,
        tilde_h_eps,
        h_eps,
        iterations,
        residual,
        trajectory: (x, y),
    })
}

/// Manifold value for the original system:
/// `H(omega, xi) = e^{eps z2(omega)} tilde_H(omega, e^{-eps z1(omega)} xi)`.
pub fn manifold_original(result: &OracleResult, ctx: &ConjugacyContext) -> DVector<f64> {
    &result.tilde_h_eps * (ctx.eps * ctx.z2_at_0).exp()
}

/// Forward trajectory on the uniform grid starting at the zero node.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub h: f64,
    pub x: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.h
    }
}

/// Forward integration of the transformed system
/// `X' = A_c X + eps z1 X + F^c`, `Y' = A_s Y + eps z2 Y + F^s`
/// by the classical 4-stage scheme with z interpolated at stage midpoints.
pub fn simulate_rde(
    spec: &CenterStableSpec,
    ou1: &OUPath,
    ou2: &OUPath,
    eps: f64,
    initial: (DVector<f64>, DVector<f64>),
    t_end: f64,
) -> Result<Trajectory> {
    let grid = ou1.grid();
    if ou2.grid() != grid {
        return Err(Error::Config("paths must share one grid".into()));
    }
    let h = grid.h();
    let steps = (t_end / h).round() as usize;
    if steps > grid.n_fwd() {
        return Err(Error::OutOfRange {
            t: t_end,
            lo: 0.0,
            hi: grid.t_end(),
        });
    }
    let z0 = grid.zero_node();
    let z1 = &ou1.values()[z0..=z0 + steps];
    let z2 = &ou2.values()[z0..=z0 + steps];
    let stage_z = |z: &[f64], st: Stage| match st {
        Stage::Node(k) => z[k],
        Stage::Mid(k) => 0.5 * (z[k] + z[k + 1]),
    };
    let (mut xv, mut yv) = initial;
    if xv.len() != spec.dim_c() || yv.len() != spec.dim_s() {
        return Err(Error::Dimension("initial state has wrong dimensions".into()));
    }
    let mut xs = Vec::with_capacity(steps + 1);
    let mut ys = Vec::with_capacity(steps + 1);
    xs.push(xv.clone());
    ys.push(yv.clone());
    let rhs = |st: Stage, x: &DVector<f64>, y: &DVector<f64>| {
        let za = stage_z(z1, st);
        let zb = stage_z(z2, st);
        let (fc, fs) = transformed_at_z(spec, eps, za, zb, x, y);
        (
            &spec.a_c * x + x * (eps * za) + fc,
            &spec.a_s * y + y * (eps * zb) + fs,
        )
    };
    for k in 0..steps {
        let (k1x, k1y) = rhs(Stage::Node(k), &xv, &yv);
        let (k2x, k2y) = rhs(
            Stage::Mid(k),
            &(&xv + &k1x * (0.5 * h)),
            &(&yv + &k1y * (0.5 * h)),
        );
        let (k3x, k3y) = rhs(
            Stage::Mid(k),
            &(&xv + &k2x * (0.5 * h)),
            &(&yv + &k2y * (0.5 * h)),
        );
        let (k4x, k4y) = rhs(
            Stage::Node(k + 1),
            &(&xv + &k3x * h),
            &(&yv + &k3y * h),
        );
        xv += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
        yv += (k1y + k2y * 2.0 + k3y * 2.0 + k4y) * (h / 6.0);
        if joint_norm(&xv, &yv) > BLOWUP_NORM {
            return Err(Error::Instability {
                norm: joint_norm(&xv, &yv),
                t: (k + 1) as f64 * h,
            });
        }
        xs.push(xv.clone());
        ys.push(yv.clone());
    }
    Ok(Trajectory { h, x: xs, y: ys })
}

/// Heun (predictor-corrector) scheme for the Stratonovich system
/// `x' = A_c x + f_c + eps x o W1'`, `y' = A_s y + f_s + eps y o W2'`,
/// sharing the increments of the given Wiener paths.
pub fn simulate_sde_stratonovich(
    spec: &CenterStableSpec,
    w1: &WienerPath,
    w2: &WienerPath,
    eps: f64,
    initial: (DVector<f64>, DVector<f64>),
    t_end: f64,
) -> Result<Trajectory> {
    let grid = w1.grid();
    if w2.grid() != grid {
        return Err(Error::Config("paths must share one grid".into()));
    }
    let h = grid.h();
    let steps = (t_end / h).round() as usize;
    if steps > grid.n_fwd() {
        return Err(Error::OutOfRange {
            t: t_end,
            lo: 0.0,
            hi: grid.t_end(),
        });
    }
    let z0 = grid.zero_node();
    let (mut xv, mut yv) = initial;
    if xv.len() != spec.dim_c() || yv.len() != spec.dim_s() {
        return Err(Error::Dimension("initial state has wrong dimensions".into()));
    }
    let mut xs = Vec::with_capacity(steps + 1);
    let mut ys = Vec::with_capacity(steps + 1);
    xs.push(xv.clone());
    ys.push(yv.clone());
    let drift = |x: &DVector<f64>, y: &DVector<f64>| {
        (&spec.a_c * x + spec.f_c(x, y), &spec.a_s * y + spec.f_s(x, y))
    };
    for k in 0..steps {
        let dw1 = w1.increments()[z0 + k];
        let dw2 = w2.increments()[z0 + k];
        let (ax, ay) = drift(&xv, &yv);
        let (bx, by) = (&xv * eps, &yv * eps);
        let xp = &xv + &ax * h + &bx * dw1;
        let yp = &yv + &ay * h + &by * dw2;
        let (axp, ayp) = drift(&xp, &yp);
        let (bxp, byp) = (&xp * eps, &yp * eps);
        xv += (ax + axp) * (0.5 * h) + (bx + bxp) * (0.5 * dw1);
        yv += (ay + ayp) * (0.5 * h) + (by + byp) * (0.5 * dw2);
        if joint_norm(&xv, &yv) > BLOWUP_NORM {
            return Err(Error::Instability {
                norm: joint_norm(&xv, &yv),
                t: (k + 1) as f64 * h,
            });
        }
        xs.push(xv.clone());
        ys.push(yv.clone());
    }
    Ok(Trajectory { h, x: xs, y: ys })
}

/// Evaluators of the transformed-coordinate manifold at a (possibly
/// re-anchored) realization.
pub trait TildeManifold {
    fn tilde_value(
        &self,
        ou1: &OUPath,
        ou2: &OUPath,
        eps: f64,
        xi_tilde: &DVector<f64>,
    ) -> Result<DVector<f64>>;
}

/// The history fixed point itself (re-solved per anchor).
pub struct OracleManifold<'a> {
    pub spec: &'a CenterStableSpec,
    pub config: &'a ExpansionConfig,
}

impl TildeManifold for OracleManifold<'_> {
    fn tilde_value(
        &self,
        ou1: &OUPath,
        ou2: &OUPath,
        eps: f64,
        xi_tilde: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        solve_rde_manifold(self.spec, ou1, ou2, eps, xi_tilde, self.config)
            .map(|r| r.tilde_h_eps)
    }
}

/// The second-order expansion, re-assembled per anchor from the hierarchy.
pub struct ExpansionManifold<'a> {
    pub spec: &'a CenterStableSpec,
    pub config: &'a ExpansionConfig,
    pub hd: &'a HdTable,
}

impl TildeManifold for ExpansionManifold<'_> {
    fn tilde_value(
        &self,
        ou1: &OUPath,
        ou2: &OUPath,
        eps: f64,
        xi_tilde: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        tilde_expansion_at(self.spec, self.hd, ou1, ou2, eps, xi_tilde, self.config)
            .map(|(v, _)| v)
    }
}

/// Supremum over sample times of `|Y(t) - tilde_H(theta_t omega, X(t))|`
/// along the forward trajectory started on the evaluated manifold. The
/// shift is realized by re-anchoring the master paths at each sample node.
#[allow(clippy::too_many_arguments)]
pub fn invariance_defect(
    spec: &CenterStableSpec,
    ou1: &OUPath,
    ou2: &OUPath,
    eps: f64,
    xi_tilde: &DVector<f64>,
    horizon: f64,
    samples: usize,
    evaluator: &dyn TildeManifold,
) -> Result<f64> {
    let grid = ou1.grid();
    let h = grid.h();
    let steps = (horizon / h).round() as usize;
    if steps > grid.n_fwd() {
        return Err(Error::OutOfRange {
            t: horizon,
            lo: 0.0,
            hi: grid.t_end(),
        });
    }
    let y0 = evaluator.tilde_value(ou1, ou2, eps, xi_tilde)?;
    let traj = simulate_rde(spec, ou1, ou2, eps, (xi_tilde.clone(), y0), horizon)?;
    let stride = (steps / samples.max(1)).max(1);
    let mut sup = 0.0f64;
    let mut k = stride;
    while k <= steps {
        let s1 = ou1.shift_forward(k)?;
        let s2 = ou2.shift_forward(k)?;
        let manifold = evaluator.tilde_value(&s1, &s2, eps, &traj.x[k])?;
        sup = sup.max((&traj.y[k] - manifold).norm());
        k += stride;
    }
    Ok(sup)
}

/// Oracle-vs-expansion error sweep over a list of noise intensities.
#[derive(Debug, Clone)]
pub struct OrderStudy {
    pub eps: Vec<f64>,
    pub err_full: Vec<f64>,
    pub err_order1: Vec<f64>,
    /// Fitted log-log slope of the full (second-order) truncation error.
    pub slope_full: Option<f64>,
    /// Fitted slope of the first-order truncation error.
    pub slope_order1: Option<f64>,
    /// Intensities dropped because the oracle diverged.
    pub dropped: Vec<f64>,
}

/// Errors `|H_oracle - (Hd + eps H1 [+ eps^2 H2])|` at a fixed original-
/// coordinate anchor `xi` across `eps_list`, with fitted slopes.
pub fn convergence_order(
    spec: &CenterStableSpec,
    ou1: &OUPath,
    ou2: &OUPath,
    expansion: &ManifoldExpansion,
    xi: &DVector<f64>,
    eps_list: &[f64],
    config: &ExpansionConfig,
) -> Result<OrderStudy> {
    if eps_list.len() < 3 {
        return Err(Error::Config("need at least 3 eps values".into()));
    }
    let z1 = ou1.z_at_zero();
    let z2 = ou2.z_at_zero();
    let mut study = OrderStudy {
        eps: Vec::new(),
        err_full: Vec::new(),
        err_order1: Vec::new(),
        slope_full: None,
        slope_order1: None,
        dropped: Vec::new(),
    };
    for &eps in eps_list {
        let xi_tilde = xi * (-eps * z1).exp();
        match solve_rde_manifold(spec, ou1, ou2, eps, &xi_tilde, config) {
            Ok(result) => {
                let oracle = &result.tilde_h_eps * (eps * z2).exp();
                let full = expansion.evaluate(eps, xi)?;
                let order1 = expansion.evaluate_truncated(eps, xi, 1)?;
                study.eps.push(eps);
                study.err_full.push((&oracle - full).norm());
                study.err_order1.push((oracle - order1).norm());
            }
            Err(Error::Divergence { .. }) => study.dropped.push(eps),
            Err(other) => return Err(other),
        }
    }
    if study.eps.len() < 3 {
        return Err(Error::Divergence {
            iterations: 0,
            delta: f64::NAN,
            margin_hint: format!(
                "oracle diverged at {} of {} eps values; fewer than 3 survivors",
                study.dropped.len(),
                eps_list.len()
            ),
        });
    }
    // fit over the strictly positive intensities with nonzero errors (an
    // eps = 0 row documents zero-noise agreement but carries no slope data)
    let fit = |errs: &[f64]| -> Option<f64> {
        let pairs: Vec<(f64, f64)> = study
            .eps
            .iter()
            .zip(errs)
            .filter(|(e, r)| **e > 0.0 && **r > 0.0)
            .map(|(e, r)| (*e, *r))
            .collect();
        if pairs.len() < 3 {
            return None;
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        log_log_slope(&xs, &ys).ok()
    };
    study.slope_full = fit(&study.err_full);
    study.slope_order1 = fit(&study.err_order1);
    Ok(study)
}

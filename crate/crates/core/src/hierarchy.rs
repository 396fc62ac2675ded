//! Order-by-order solver for the noise expansion of the transformed system
//! on the truncated history window [-T, 0].
//!
//! Order 0 is the deterministic manifold pair; orders 1 and 2 are linear
//! systems driven by the noise path, solved by backward one-step integration
//! for the center component plus Picard sweeps on the stable history
//! integral. The converged boundary values Y1(0), Y2(0) are the expansion
//! coefficients of the manifold at the anchor point.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::expm;
use crate::noise::OUPath;
use crate::system::{gap_condition, CenterStableSpec, ExpansionConfig};
use crate::table::XiGrid;

/// Grid position handed to right-hand-side evaluations: a node or the
/// midpoint of cell `k` (between nodes `k` and `k+1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Node(usize),
    Mid(usize),
}

/// Shared per-window path data for the solvers: z samples and their
/// cumulative integrals on the nodes of [-T, 0], plus the weight profile of
/// the eta-weighted sup norm.
pub(crate) struct Window {
    pub n: usize,
    pub h: f64,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    /// cum[k] = int_{-T}^{tau_k} z dr (trapezoid)
    pub cum1: Vec<f64>,
    pub cum2: Vec<f64>,
    /// e^{eta * tau_k}
    pub weight: Vec<f64>,
}

impl Window {
    pub fn build(ou1: &OUPath, ou2: &OUPath, config: &ExpansionConfig) -> Result<Self> {
        config.validate()?;
        if ou1.grid() != ou2.grid() {
            return Err(Error::Config(
                "the two noise paths must share one grid".into(),
            ));
        }
        let grid = ou1.grid();
        if (grid.h() - config.h).abs() > 1e-12 * config.h {
            return Err(Error::Config(format!(
                "config step h = {} does not match the path grid h = {}",
                config.h,
                grid.h()
            )));
        }
        let n = (config.t_trunc / config.h).round() as usize;
        if n < 2 {
            return Err(Error::Config("truncation window shorter than two steps".into()));
        }
        if n > grid.zero_node() {
            return Err(Error::Config(format!(
                "truncation window of {n} steps exceeds the path history of {} steps",
                grid.zero_node()
            )));
        }
        let start = grid.zero_node() - n;
        let slice = |ou: &OUPath| ou.values()[start..=grid.zero_node()].to_vec();
        let z1 = slice(ou1);
        let z2 = slice(ou2);
        let h = config.h;
        let cum = |z: &[f64]| {
            let mut c = Vec::with_capacity(z.len());
            let mut acc = 0.0;
            c.push(0.0);
            for k in 0..z.len() - 1 {
                acc += 0.5 * h * (z[k] + z[k + 1]);
                c.push(acc);
            }
            c
        };
        let cum1 = cum(&z1);
        let cum2 = cum(&z2);
        let weight = (0..=n)
            .map(|k| (config.eta * (k as f64 - n as f64) * h).exp())
            .collect();
        Ok(Self {
            n,
            h,
            z1,
            z2,
            cum1,
            cum2,
            weight,
        })
    }

    pub fn tau(&self, k: usize) -> f64 {
        (k as f64 - self.n as f64) * self.h
    }
}

/// Backward classical 4-stage step from node `n` (terminal value) down to
/// node 0, with the right-hand side sampled at nodes and cell midpoints.
pub(crate) fn rk4_backward<F>(n: usize, h: f64, terminal: DVector<f64>, mut rhs: F) -> Result<Vec<DVector<f64>>>
where
    F: FnMut(Stage, &DVector<f64>) -> Result<DVector<f64>>,
{
    let mut xs = vec![DVector::zeros(terminal.len()); n + 1];
    xs[n] = terminal;
    for k in (0..n).rev() {
        let x1 = &xs[k + 1];
        let k1 = rhs(Stage::Node(k + 1), x1)?;
        let k2 = rhs(Stage::Mid(k), &(x1 - &k1 * (0.5 * h)))?;
        let k3 = rhs(Stage::Mid(k), &(x1 - &k2 * (0.5 * h)))?;
        let k4 = rhs(Stage::Node(k), &(x1 - &k3 * h))?;
        xs[k] = x1 - (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(xs)
}

/// Truncated history integral `Y(t_k) = int_{-T}^{t_k} e^{A (t_k - s)} g(s) ds`
/// as the composite trapezoid propagated one cell at a time, optionally with
/// per-cell scalar kernel factors (the `e^{eps int z}` weights).
pub(crate) fn history_trapezoid(
    e_step: &DMatrix<f64>,
    h: f64,
    g: &[DVector<f64>],
    cell_scalars: Option<&[f64]>,
    initial: Option<&DVector<f64>>,
) -> Vec<DVector<f64>> {
    let dim = g[0].len();
    let mut out = Vec::with_capacity(g.len());
    out.push(match initial {
        Some(v) => v.clone(),
        None => DVector::zeros(dim),
    });
    for k in 0..g.len() - 1 {
        let s = cell_scalars.map_or(1.0, |c| c[k]);
        let prev = &out[k];
        let step = e_step * (prev + &g[k] * (0.5 * h)) * s + &g[k + 1] * (0.5 * h);
        out.push(step);
    }
    out
}

fn weighted_delta(weight: &[f64], a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..a.len() {
        let d = (&a[k] - &b[k]).norm() * weight[k];
        worst = worst.max(d);
    }
    worst
}

fn sup_delta(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..a.len() {
        worst = worst.max((&a[k] - &b[k]).norm());
    }
    worst
}

/// Flags three consecutive growing sweeps as divergence.
struct SweepMonitor {
    last: f64,
    growth: usize,
}

impl SweepMonitor {
    fn new() -> Self {
        Self {
            last: f64::INFINITY,
            growth: 0,
        }
    }

    fn observe(&mut self, delta: f64, iterations: usize, hint: String) -> Result<()> {
        if delta > self.last {
            self.growth += 1;
        } else {
            self.growth = 0;
        }
        self.last = delta;
        if self.growth >= 3 || !delta.is_finite() {
            return Err(Error::Divergence {
                iterations,
                delta,
                margin_hint: hint,
            });
        }
        Ok(())
    }
}

/// Grid functions of one expansion order over the window nodes.
#[derive(Debug, Clone)]
pub struct OrderFields {
    pub x: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
}

impl OrderFields {
    pub fn at_zero(&self) -> (&DVector<f64>, &DVector<f64>) {
        (self.x.last().unwrap(), self.y.last().unwrap())
    }
}

/// Solutions of the order-0/1/2 systems with iteration diagnostics.
#[derive(Debug, Clone)]
pub struct HierarchySolution {
    pub t_trunc: f64,
    pub h: f64,
    pub order0: OrderFields,
    pub order1: OrderFields,
    pub order2: OrderFields,
    pub iterations: [usize; 3],
    pub residuals: [f64; 3],
}

impl HierarchySolution {
    pub fn n_nodes(&self) -> usize {
        self.order0.x.len()
    }

    pub fn tau(&self, k: usize) -> f64 {
        (k as f64 - (self.n_nodes() - 1) as f64) * self.h
    }
}

/// Table of the deterministic manifold over a xi grid, with
/// finite-difference derivative tables.
#[derive(Debug, Clone)]
pub struct HdTable {
    pub xi_grid: XiGrid,
    pub values: Vec<DVector<f64>>,
    /// d Hd / d xi, one m x n matrix per grid point.
    pub jacobians: Vec<DMatrix<f64>>,
    /// Second-derivative tables, one n x n matrix per output component per
    /// grid point (consumed by the second-order coordinate inversion).
    pub hessians: Vec<Vec<DMatrix<f64>>>,
    pub iterations: Vec<usize>,
    pub residuals: Vec<f64>,
}

impl HdTable {
    pub fn value_at(&self, xi: &DVector<f64>) -> Result<DVector<f64>> {
        self.xi_grid.interpolate(&self.values, xi).map_err(|e| match e {
            Error::OutOfRange { t, lo, hi } => Error::TableRange(format!(
                "xi component {t} outside table range [{lo}, {hi}]; enlarge the xi grid or cut off the nonlinearity"
            )),
            other => other,
        })
    }
}

/// Deterministic center manifold by the truncated history fixed point,
/// tabulated over `xi_grid` with central-difference derivative tables.
pub fn deterministic_center_manifold(
    spec: &CenterStableSpec,
    xi_grid: &XiGrid,
    config: &ExpansionConfig,
) -> Result<HdTable> {
    config.validate()?;
    if xi_grid.dim() != spec.dim_c() {
        return Err(Error::Dimension(format!(
            "xi grid dimension {} != center dimension {}",
            xi_grid.dim(),
            spec.dim_c()
        )));
    }
    if let Some(p) = &config.trichotomy {
        let gap = gap_condition(p, spec.lipschitz);
        if !gap.holds {
            return Err(Error::Config(format!(
                "gap condition fails: margin {:.3} >= 1; the history fixed point is not certified",
                gap.margin
            )));
        }
    }
    let n = (config.t_trunc / config.h).round() as usize;
    if n < 2 {
        return Err(Error::Config("truncation window shorter than two steps".into()));
    }
    let h = config.h;
    let e_s = expm(&(&spec.a_s * h))?;
    let hint = config.margin_hint(spec.lipschitz);
    let mut values = Vec::with_capacity(xi_grid.len());
    let mut iterations = Vec::with_capacity(xi_grid.len());
    let mut residuals = Vec::with_capacity(xi_grid.len());
    for p in 0..xi_grid.len() {
        let xi = xi_grid.point(p);
        let mut x0: Vec<DVector<f64>> = vec![xi.clone(); n + 1];
        let mut y0: Vec<DVector<f64>> = vec![DVector::zeros(spec.dim_s()); n + 1];
        let mut monitor = SweepMonitor::new();
        let mut iters = 0;
        let mut residual = f64::INFINITY;
        for sweep in 0..config.fp_max_iters {
            // center component backward under x' = A_c x + f_c(x, Y0(t))
            let x_new = rk4_backward(n, h, xi.clone(), |stage, x| {
                let y = stage_value(&y0, stage);
                Ok(&spec.a_c * x + spec.f_c(x, &y))
            })?;
            // stable component as the truncated history integral
            let g: Vec<DVector<f64>> = (0..=n).map(|k| spec.f_s(&x_new[k], &y0[k])).collect();
            let y_raw = history_trapezoid(&e_s, h, &g, None, None);
            let y_new: Vec<DVector<f64>> = if config.fp_damping < 1.0 {
                y_raw
                    .iter()
                    .zip(&y0)
                    .map(|(new, old)| new * config.fp_damping + old * (1.0 - config.fp_damping))
                    .collect()
            } else {
                y_raw
            };
            let delta = sup_delta(&x_new, &x0).max(sup_delta(&y_new, &y0));
            x0 = x_new;
            y0 = y_new;
            iters = sweep + 1;
            monitor.observe(delta, iters, hint.clone())?;
            if delta <= config.fp_tol {
                residual = delta;
                break;
            }
            residual = delta;
        }
        if residual > config.fp_tol {
            return Err(Error::Divergence {
                iterations: iters,
                delta: residual,
                margin_hint: format!("fp_max_iters reached; {hint}"),
            });
        }
        values.push(y0[n].clone());
        iterations.push(iters);
        residuals.push(residual);
    }
    let jacobians = xi_grid.jacobian_table(&values)?;
    let hessians = xi_grid.hessian_table(&values)?;
    Ok(HdTable {
        xi_grid: xi_grid.clone(),
        values,
        jacobians,
        hessians,
        iterations,
        residuals,
    })
}

fn stage_value(field: &[DVector<f64>], stage: Stage) -> DVector<f64> {
    match stage {
        Stage::Node(k) => field[k].clone(),
        Stage::Mid(k) => (&field[k] + &field[k + 1]) * 0.5,
    }
}

fn stage_matrix(ms: &[DMatrix<f64>], stage: Stage) -> DMatrix<f64> {
    match stage {
        Stage::Node(k) => ms[k].clone(),
        Stage::Mid(k) => (&ms[k] + &ms[k + 1]) * 0.5,
    }
}

/// Order-0 fields along the backward trajectory through the tabulated
/// manifold: `x' = A_c x + f_c(x, Hd(x))`, `Y0 = Hd(X0)`.
pub fn solve_order0(
    spec: &CenterStableSpec,
    xi: &DVector<f64>,
    hd: &HdTable,
    config: &ExpansionConfig,
) -> Result<OrderFields> {
    config.validate()?;
    if xi.len() != spec.dim_c() {
        return Err(Error::Dimension("xi has the wrong dimension".into()));
    }
    let n = (config.t_trunc / config.h).round() as usize;
    let h = config.h;
    let x = rk4_backward(n, h, xi.clone(), |_, x| {
        let y = hd.value_at(x)?;
        Ok(&spec.a_c * x + spec.f_c(x, &y))
    })?;
    let mut y = Vec::with_capacity(n + 1);
    for xk in &x {
        y.push(hd.value_at(xk)?);
    }
    // residual of the truncated history identity, seeded with the table
    // value at -T so the finite left end carries no boundary layer
    let e_s = expm(&(&spec.a_s * h))?;
    let g: Vec<DVector<f64>> = (0..=n).map(|k| spec.f_s(&x[k], &y[k])).collect();
    let reint = history_trapezoid(&e_s, h, &g, None, Some(&y[0]));
    let residual = sup_delta(&reint, &y);
    let fs_scale = g.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    let tol = (5.0 * config.fp_tol).max(100.0 * h * h * (1.0 + fs_scale));
    if residual > tol {
        return Err(Error::Numerical(format!(
            "order-0 integral identity residual {residual:.3e} exceeds {tol:.3e}; \
             the Hd table is inconsistent with the trajectory (grid too coarse or table too narrow)"
        )));
    }
    Ok(OrderFields { x, y })
}

struct LinearOrderData {
    fcx: Vec<DMatrix<f64>>,
    fcy: Vec<DMatrix<f64>>,
    fsx: Vec<DMatrix<f64>>,
    fsy: Vec<DMatrix<f64>>,
    fc: Vec<DVector<f64>>,
    fs: Vec<DVector<f64>>,
}

impl LinearOrderData {
    fn build(spec: &CenterStableSpec, order0: &OrderFields) -> Self {
        let n = order0.x.len();
        let mut data = Self {
            fcx: Vec::with_capacity(n),
            fcy: Vec::with_capacity(n),
            fsx: Vec::with_capacity(n),
            fsy: Vec::with_capacity(n),
            fc: Vec::with_capacity(n),
            fs: Vec::with_capacity(n),
        };
        for (x, y) in order0.x.iter().zip(&order0.y) {
            data.fcx.push(spec.jac_c_x(x, y));
            data.fcy.push(spec.jac_c_y(x, y));
            data.fsx.push(spec.jac_s_x(x, y));
            data.fsy.push(spec.jac_s_y(x, y));
            data.fc.push(spec.f_c(x, y));
            data.fs.push(spec.f_s(x, y));
        }
        data
    }
}

/// Shared Picard loop for the linear orders: backward center solve given the
/// current stable iterate, then one history sweep for the stable component.
#[allow(clippy::too_many_arguments)]
fn linear_order_fixed_point(
    spec: &CenterStableSpec,
    win: &Window,
    config: &ExpansionConfig,
    data: &LinearOrderData,
    qc: &[DVector<f64>],
    qs: &[DVector<f64>],
    fcy_scale: f64,
    hint: &str,
) -> Result<(OrderFields, usize, f64)> {
    let n = win.n;
    let h = win.h;
    let e_s = expm(&(&spec.a_s * h))?;
    let mut x: Vec<DVector<f64>> = vec![DVector::zeros(spec.dim_c()); n + 1];
    let mut y: Vec<DVector<f64>> = vec![DVector::zeros(spec.dim_s()); n + 1];
    let mut monitor = SweepMonitor::new();
    let mut iters = 0;
    let mut delta = f64::INFINITY;
    for sweep in 0..config.fp_max_iters {
        let x_new = rk4_backward(n, h, DVector::zeros(spec.dim_c()), |stage, xv| {
            let m = stage_matrix(&data.fcx, stage);
            let coupling = if fcy_scale != 0.0 {
                stage_matrix(&data.fcy, stage) * stage_value(&y, stage)
            } else {
                DVector::zeros(spec.dim_c())
            };
            Ok(&spec.a_c * xv + m * xv + coupling + stage_value(qc, stage))
        })?;
        let g: Vec<DVector<f64>> = (0..=n)
            .map(|k| &data.fsx[k] * &x_new[k] + &data.fsy[k] * &y[k] + &qs[k])
            .collect();
        let y_raw = history_trapezoid(&e_s, h, &g, None, None);
        let y_new: Vec<DVector<f64>> = if config.fp_damping < 1.0 {
            y_raw
                .iter()
                .zip(&y)
                .map(|(new, old)| new * config.fp_damping + old * (1.0 - config.fp_damping))
                .collect()
        } else {
            y_raw
        };
        delta = weighted_delta(&win.weight, &x_new, &x).max(weighted_delta(&win.weight, &y_new, &y));
        x = x_new;
        y = y_new;
        iters = sweep + 1;
        monitor.observe(delta, iters, hint.to_string())?;
        if delta <= config.fp_tol {
            break;
        }
    }
    if delta > config.fp_tol {
        return Err(Error::Divergence {
            iterations: iters,
            delta,
            margin_hint: format!("fp_max_iters reached; {hint}"),
        });
    }
    // residual certificate: one more application of the map
    let x_chk = rk4_backward(n, h, DVector::zeros(spec.dim_c()), |stage, xv| {
        let m = stage_matrix(&data.fcx, stage);
        let coupling = if fcy_scale != 0.0 {
            stage_matrix(&data.fcy, stage) * stage_value(&y, stage)
        } else {
            DVector::zeros(spec.dim_c())
        };
        Ok(&spec.a_c * xv + m * xv + coupling + stage_value(qc, stage))
    })?;
    let g: Vec<DVector<f64>> = (0..=n)
        .map(|k| &data.fsx[k] * &x_chk[k] + &data.fsy[k] * &y[k] + &qs[k])
        .collect();
    let y_chk = history_trapezoid(&e_s, h, &g, None, None);
    let residual =
        weighted_delta(&win.weight, &x_chk, &x).max(weighted_delta(&win.weight, &y_chk, &y));
    Ok((OrderFields { x, y }, iters, residual))
}

/// First-order fields: the linearized center flow forced by the noise path,
/// paired with the first-order stable history integral.
pub fn solve_order1(
    spec: &CenterStableSpec,
    order0: &OrderFields,
    ou1: &OUPath,
    ou2: &OUPath,
    config: &ExpansionConfig,
) -> Result<(OrderFields, usize, f64)> {
    let win = Window::build(ou1, ou2, config)?;
    if order0.x.len() != win.n + 1 {
        return Err(Error::Dimension(
            "order-0 fields do not match the truncation window".into(),
        ));
    }
    let data = LinearOrderData::build(spec, order0);
    let n = win.n;
    let mut qc = Vec::with_capacity(n + 1);
    let mut qs = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let (z1, z2) = (win.z1[k], win.z2[k]);
        let zx = &order0.x[k] * z1;
        let zy = &order0.y[k] * z2;
        qc.push(&data.fcx[k] * &zx + &zx + &data.fcy[k] * &zy - &data.fc[k] * z1);
        qs.push(&data.fsx[k] * &zx + &zy + &data.fsy[k] * &zy - &data.fs[k] * z2);
    }
    let hint = config.margin_hint(spec.lipschitz);
    let fcy_scale = data.fcy.iter().map(|m| m.norm()).fold(0.0f64, f64::max);
    linear_order_fixed_point(spec, &win, config, &data, &qc, &qs, fcy_scale, &hint)
}

/// Second-order fields with the quadratic (Hessian) forcing terms.
pub fn solve_order2(
    spec: &CenterStableSpec,
    order0: &OrderFields,
    order1: &OrderFields,
    ou1: &OUPath,
    ou2: &OUPath,
    config: &ExpansionConfig,
) -> Result<(OrderFields, usize, f64)> {
    let win = Window::build(ou1, ou2, config)?;
    let n = win.n;
    if order0.x.len() != n + 1 || order1.x.len() != n + 1 {
        return Err(Error::Dimension(
            "lower-order fields do not match the truncation window".into(),
        ));
    }
    let data = LinearOrderData::build(spec, order0);
    let mut qc = Vec::with_capacity(n + 1);
    let mut qs = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let (z1, z2) = (win.z1[k], win.z2[k]);
        let (x0, y0) = (&order0.x[k], &order0.y[k]);
        let (x1, y1) = (&order1.x[k], &order1.y[k]);
        let a = x1 + x0 * z1;
        let b = y1 + y0 * z2;
        let hess_c = spec.bil_c_xx(x0, y0, &a, &a) * 0.5
            + spec.bil_c_xy(x0, y0, &a, &b)
            + spec.bil_c_yy(x0, y0, &b, &b) * 0.5;
        let hess_s = spec.bil_s_xx(x0, y0, &a, &a) * 0.5
            + spec.bil_s_xy(x0, y0, &a, &b)
            + spec.bil_s_yy(x0, y0, &b, &b) * 0.5;
        // center forcing of the second-order system (the Y2 coupling is
        // applied through fcy inside the fixed point)
        qc.push(
            x1 * z1 + &data.fc[k] * (0.5 * z1 * z1) - &data.fcx[k] * &(x0 * (0.5 * z1 * z1))
                + &data.fcy[k] * &(y0 * (0.5 * z2 * z2) + y1 * z2 - (y1 + y0 * z2) * z1)
                + hess_c,
        );
        // stable forcing (the fsy * Y2 coupling is applied in the sweep)
        qs.push(
            y1 * z2
                + &data.fs[k] * (0.5 * z2 * z2)
                + &data.fsx[k] * &(x1 * z1 + x0 * (0.5 * z1 * z1) - &a * z2)
                - &data.fsy[k] * &(y0 * (0.5 * z2 * z2))
                + hess_s,
        );
    }
    let hint = config.margin_hint(spec.lipschitz);
    let fcy_scale = data.fcy.iter().map(|m| m.norm()).fold(0.0f64, f64::max);
    linear_order_fixed_point(spec, &win, config, &data, &qc, &qs, fcy_scale, &hint)
}

/// All three orders at one anchor point.
pub fn solve_hierarchy(
    spec: &CenterStableSpec,
    xi: &DVector<f64>,
    hd: &HdTable,
    ou1: &OUPath,
    ou2: &OUPath,
    config: &ExpansionConfig,
) -> Result<HierarchySolution> {
    let order0 = solve_order0(spec, xi, hd, config)?;
    let (order1, it1, r1) = solve_order1(spec, &order0, ou1, ou2, config)?;
    let (order2, it2, r2) = solve_order2(spec, &order0, &order1, ou1, ou2, config)?;
    Ok(HierarchySolution {
        t_trunc: config.t_trunc,
        h: config.h,
        order0,
        order1,
        order2,
        iterations: [1, it1, it2],
        residuals: [0.0, r1, r2],
    })
}

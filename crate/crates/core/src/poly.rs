//! Polynomial nonlinearities `f(x, y)` with exact derivatives.
//!
//! The configuration front end expresses nonlinearities as
//! coefficient/exponent tables, so no expression language is needed; each
//! term contributes `coeff * prod x_i^{p_i} * prod y_j^{q_j}` to one output
//! component. Jacobians and Hessian bilinear forms are evaluated
//! analytically, which keeps the second-order expansion formulas free of
//! finite-difference noise for table-defined systems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PolyTerm {
    /// Output component this term contributes to.
    pub component: usize,
    pub coeff: f64,
    /// One exponent per x coordinate.
    pub x_exp: Vec<u32>,
    /// One exponent per y coordinate.
    pub y_exp: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialMap {
    dim_x: usize,
    dim_y: usize,
    dim_out: usize,
    terms: Vec<PolyTerm>,
}

fn pow(base: f64, exp: u32) -> f64 {
    base.powi(exp as i32)
}

impl PolynomialMap {
    pub fn new(dim_x: usize, dim_y: usize, dim_out: usize, terms: Vec<PolyTerm>) -> Result<Self> {
        for (i, t) in terms.iter().enumerate() {
            if t.component >= dim_out {
                return Err(Error::Config(format!(
                    "term {i}: component {} out of range (dim_out = {dim_out})",
                    t.component
                )));
            }
            if t.x_exp.len() != dim_x || t.y_exp.len() != dim_y {
                return Err(Error::Config(format!(
                    "term {i}: exponent lists must have lengths {dim_x} and {dim_y}"
                )));
            }
            if !t.coeff.is_finite() {
                return Err(Error::Config(format!("term {i}: non-finite coefficient")));
            }
        }
        Ok(Self {
            dim_x,
            dim_y,
            dim_out,
            terms,
        })
    }

    /// The zero map.
    pub fn zero(dim_x: usize, dim_y: usize, dim_out: usize) -> Self {
        Self {
            dim_x,
            dim_y,
            dim_out,
            terms: Vec::new(),
        }
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn terms(&self) -> &[PolyTerm] {
        &self.terms
    }

    fn monomial(t: &PolyTerm, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let mut v = t.coeff;
        for (i, &p) in t.x_exp.iter().enumerate() {
            if p > 0 {
                v *= pow(x[i], p);
            }
        }
        for (j, &q) in t.y_exp.iter().enumerate() {
            if q > 0 {
                v *= pow(y[j], q);
            }
        }
        v
    }

    /// Monomial with the factor for x_i (or y_j via `in_y`) differentiated
    /// once: d/du (u^p) = p u^{p-1}.
    fn monomial_d1(t: &PolyTerm, x: &DVector<f64>, y: &DVector<f64>, idx: usize, in_y: bool) -> f64 {
        let p = if in_y { t.y_exp[idx] } else { t.x_exp[idx] };
        if p == 0 {
            return 0.0;
        }
        let mut v = t.coeff * p as f64;
        for (i, &pi) in t.x_exp.iter().enumerate() {
            let e = if !in_y && i == idx { pi - 1 } else { pi };
            if e > 0 {
                v *= pow(x[i], e);
            }
        }
        for (j, &qj) in t.y_exp.iter().enumerate() {
            let e = if in_y && j == idx { qj - 1 } else { qj };
            if e > 0 {
                v *= pow(y[j], e);
            }
        }
        v
    }

    /// Monomial differentiated once in coordinate `a` and once in `b`
    /// (each flagged x vs y).
    fn monomial_d2(
        t: &PolyTerm,
        x: &DVector<f64>,
        y: &DVector<f64>,
        a: (usize, bool),
        b: (usize, bool),
    ) -> f64 {
        let exp_of = |idx: usize, in_y: bool| if in_y { t.y_exp[idx] } else { t.x_exp[idx] };
        let mut factor = 1.0;
        if a == b {
            let p = exp_of(a.0, a.1);
            if p < 2 {
                return 0.0;
            }
            factor *= (p * (p - 1)) as f64;
        } else {
            let pa = exp_of(a.0, a.1);
            let pb = exp_of(b.0, b.1);
            if pa == 0 || pb == 0 {
                return 0.0;
            }
            factor *= (pa * pb) as f64;
        }
        let mut v = t.coeff * factor;
        let drop = |idx: usize, in_y: bool| {
            let mut d = 0;
            if a == (idx, in_y) {
                d += 1;
            }
            if b == (idx, in_y) {
                d += 1;
            }
            d
        };
        for (i, &pi) in t.x_exp.iter().enumerate() {
            let e = pi - drop(i, false);
            if e > 0 {
                v *= pow(x[i], e);
            }
        }
        for (j, &qj) in t.y_exp.iter().enumerate() {
            let e = qj - drop(j, true);
            if e > 0 {
                v *= pow(y[j], e);
            }
        }
        v
    }

    pub fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim_out);
        for t in &self.terms {
            out[t.component] += Self::monomial(t, x, y);
        }
        out
    }

    /// Jacobian with respect to x (dim_out x dim_x).
    pub fn jac_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim_out, self.dim_x);
        for t in &self.terms {
            for i in 0..self.dim_x {
                out[(t.component, i)] += Self::monomial_d1(t, x, y, i, false);
            }
        }
        out
    }

    /// Jacobian with respect to y (dim_out x dim_y).
    pub fn jac_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim_out, self.dim_y);
        for t in &self.terms {
            for j in 0..self.dim_y {
                out[(t.component, j)] += Self::monomial_d1(t, x, y, j, true);
            }
        }
        out
    }

    /// Second-derivative bilinear form `f_ab[u, v]` where `a`/`b` select the
    /// x or y slot; returns a dim_out vector.
    pub fn bilinear(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        a_in_y: bool,
        b_in_y: bool,
        u: &DVector<f64>,
        v: &DVector<f64>,
    ) -> DVector<f64> {
        let dim_a = if a_in_y { self.dim_y } else { self.dim_x };
        let dim_b = if b_in_y { self.dim_y } else { self.dim_x };
        let mut out = DVector::zeros(self.dim_out);
        for t in &self.terms {
            for i in 0..dim_a {
                if u[i] == 0.0 {
                    continue;
                }
                for j in 0..dim_b {
                    if v[j] == 0.0 {
                        continue;
                    }
                    let d2 = Self::monomial_d2(t, x, y, (i, a_in_y), (j, b_in_y));
                    out[t.component] += d2 * u[i] * v[j];
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(s: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(s)
    }

    /// f(x, y) = (-x0^2, 3 x0 y0 + y0^2)
    fn sample() -> PolynomialMap {
        PolynomialMap::new(
            1,
            1,
            2,
            vec![
                PolyTerm {
                    component: 0,
                    coeff: -1.0,
                    x_exp: vec![2],
                    y_exp: vec![0],
                },
                PolyTerm {
                    component: 1,
                    coeff: 3.0,
                    x_exp: vec![1],
                    y_exp: vec![1],
                },
                PolyTerm {
                    component: 1,
                    coeff: 1.0,
                    x_exp: vec![0],
                    y_exp: vec![2],
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn eval_and_jacobians() {
        let f = sample();
        let (x, y) = (v(&[2.0]), v(&[-1.0]));
        let val = f.eval(&x, &y);
        assert_abs_diff_eq!(val[0], -4.0);
        assert_abs_diff_eq!(val[1], -5.0);
        let jx = f.jac_x(&x, &y);
        assert_abs_diff_eq!(jx[(0, 0)], -4.0); // -2 x
        assert_abs_diff_eq!(jx[(1, 0)], -3.0); // 3 y
        let jy = f.jac_y(&x, &y);
        assert_abs_diff_eq!(jy[(0, 0)], 0.0);
        assert_abs_diff_eq!(jy[(1, 0)], 4.0); // 3 x + 2 y
    }

    #[test]
    fn bilinear_forms() {
        let f = sample();
        let (x, y) = (v(&[2.0]), v(&[-1.0]));
        let u = v(&[1.0]);
        // f_xx[u, u]: (-2, 0)
        let fxx = f.bilinear(&x, &y, false, false, &u, &u);
        assert_abs_diff_eq!(fxx[0], -2.0);
        assert_abs_diff_eq!(fxx[1], 0.0);
        // f_xy[u, u]: (0, 3)
        let fxy = f.bilinear(&x, &y, false, true, &u, &u);
        assert_abs_diff_eq!(fxy[0], 0.0);
        assert_abs_diff_eq!(fxy[1], 3.0);
        // f_yy[u, u]: (0, 2)
        let fyy = f.bilinear(&x, &y, true, true, &u, &u);
        assert_abs_diff_eq!(fyy[0], 0.0);
        assert_abs_diff_eq!(fyy[1], 2.0);
    }

    #[test]
    fn zero_map_is_zero() {
        let f = PolynomialMap::zero(2, 3, 2);
        let x = v(&[1.0, 2.0]);
        let y = v(&[3.0, 4.0, 5.0]);
        assert_eq!(f.eval(&x, &y), DVector::zeros(2));
        assert_eq!(f.jac_x(&x, &y), DMatrix::zeros(2, 2));
    }

    #[test]
    fn rejects_inconsistent_terms() {
        assert!(PolynomialMap::new(
            1,
            1,
            1,
            vec![PolyTerm {
                component: 1,
                coeff: 1.0,
                x_exp: vec![1],
                y_exp: vec![0],
            }]
        )
        .is_err());
        assert!(PolynomialMap::new(
            2,
            1,
            1,
            vec![PolyTerm {
                component: 0,
                coeff: 1.0,
                x_exp: vec![1],
                y_exp: vec![0],
            }]
        )
        .is_err());
    }
}

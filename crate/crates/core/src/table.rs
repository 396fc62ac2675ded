//! Tensor-product grids over the center coordinate and table calculus
//! (interpolation, finite-difference derivative tables).
//!
//! The center dimension is 1 for the worked example, where tables use
//! piecewise-cubic interpolation; higher dimensions fall back to
//! multilinear interpolation on the tensor grid.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct XiAxis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XiGrid {
    axes: Vec<XiAxis>,
}

impl XiGrid {
    pub fn new(axes: Vec<XiAxis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Config("xi grid needs at least one axis".into()));
        }
        for a in &axes {
            if !(a.max > a.min) || a.count < 3 {
                return Err(Error::Config(format!(
                    "xi axis [{}, {}] x {} needs max > min and at least 3 points",
                    a.min, a.max, a.count
                )));
            }
            if !a.min.is_finite() || !a.max.is_finite() {
                return Err(Error::Config("non-finite xi axis bounds".into()));
            }
        }
        Ok(Self { axes })
    }

    pub fn uniform_1d(min: f64, max: f64, count: usize) -> Result<Self> {
        Self::new(vec![XiAxis { min, max, count }])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[XiAxis] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let a = &self.axes[axis];
        (a.max - a.min) / (a.count - 1) as f64
    }

    /// Multi-index of a flat index (row-major, last axis fastest).
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            idx[k] = flat % self.axes[k].count;
            flat /= self.axes[k].count;
        }
        idx
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let mut flat = 0;
        for (k, &i) in multi.iter().enumerate() {
            flat = flat * self.axes[k].count + i;
        }
        flat
    }

    pub fn point(&self, flat: usize) -> DVector<f64> {
        let multi = self.multi_index(flat);
        DVector::from_iterator(
            self.dim(),
            multi
                .iter()
                .enumerate()
                .map(|(k, &i)| self.axes[k].min + i as f64 * self.spacing(k)),
        )
    }

    fn locate_axis(&self, axis: usize, x: f64) -> Result<(usize, f64)> {
        let a = &self.axes[axis];
        let d = self.spacing(axis);
        let slack = 1e-9 * d;
        if !x.is_finite() || x < a.min - slack || x > a.max + slack {
            return Err(Error::OutOfRange {
                t: x,
                lo: a.min,
                hi: a.max,
            });
        }
        let u = ((x - a.min) / d).clamp(0.0, (a.count - 1) as f64);
        let mut cell = u.floor() as usize;
        if cell >= a.count - 1 {
            cell = a.count - 2;
        }
        Ok((cell, u - cell as f64))
    }

    pub fn contains(&self, xi: &DVector<f64>) -> bool {
        xi.len() == self.dim()
            && (0..self.dim()).all(|k| self.locate_axis(k, xi[k]).is_ok())
    }

    /// Interpolate a table of vector values at `xi`: piecewise cubic
    /// (Hermite with central-difference slopes) for one axis, multilinear
    /// for tensor grids.
    pub fn interpolate(&self, values: &[DVector<f64>], xi: &DVector<f64>) -> Result<DVector<f64>> {
        if values.len() != self.len() {
            return Err(Error::Dimension(format!(
                "table has {} entries, grid has {}",
                values.len(),
                self.len()
            )));
        }
        if xi.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "query point has dimension {}, grid has {}",
                xi.len(),
                self.dim()
            )));
        }
        if self.dim() == 1 {
            return self.interp_cubic_1d(values, xi[0]);
        }
        // multilinear over the 2^d cell corners
        let mut cells = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            cells.push(self.locate_axis(k, xi[k])?);
        }
        let m = values[0].len();
        let mut acc = DVector::zeros(m);
        for corner in 0..(1usize << self.dim()) {
            let mut w = 1.0;
            let mut multi = Vec::with_capacity(self.dim());
            for (k, &(cell, frac)) in cells.iter().enumerate() {
                if corner >> k & 1 == 1 {
                    w *= frac;
                    multi.push(cell + 1);
                } else {
                    w *= 1.0 - frac;
                    multi.push(cell);
                }
            }
            if w != 0.0 {
                acc += &values[self.flat_index(&multi)] * w;
            }
        }
        Ok(acc)
    }

    fn interp_cubic_1d(&self, values: &[DVector<f64>], x: f64) -> Result<DVector<f64>> {
        let (cell, frac) = self.locate_axis(0, x)?;
        let n = self.axes[0].count;
        let d = self.spacing(0);
        // second-order one-sided slopes at the ends keep the interpolant
        // exact on quadratics over the whole range
        let slope = |k: usize| -> DVector<f64> {
            if k == 0 {
                (&values[0] * -3.0 + &values[1] * 4.0 - &values[2]) / (2.0 * d)
            } else if k == n - 1 {
                (&values[n - 1] * 3.0 - &values[n - 2] * 4.0 + &values[n - 3]) / (2.0 * d)
            } else {
                (&values[k + 1] - &values[k - 1]) / (2.0 * d)
            }
        };
        let (p0, p1) = (&values[cell], &values[cell + 1]);
        let (m0, m1) = (slope(cell) * d, slope(cell + 1) * d);
        let t = frac;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        Ok(p0 * h00 + m0 * h10 + p1 * h01 + m1 * h11)
    }

    /// Jacobian tables d(value)/d(xi) by central differences on the grid
    /// (second-order one-sided at the boundary, exact on quadratics).
    pub fn jacobian_table(&self, values: &[DVector<f64>]) -> Result<Vec<DMatrix<f64>>> {
        if values.len() != self.len() {
            return Err(Error::Dimension("table/grid size mismatch".into()));
        }
        let m = values[0].len();
        let n = self.dim();
        let mut out = Vec::with_capacity(values.len());
        for flat in 0..values.len() {
            let multi = self.multi_index(flat);
            let mut jac = DMatrix::zeros(m, n);
            for k in 0..n {
                let d = self.spacing(k);
                let count = self.axes[k].count;
                let i = multi[k];
                let at = |j: usize| -> &DVector<f64> {
                    let mut idx = multi.clone();
                    idx[k] = j;
                    &values[self.flat_index(&idx)]
                };
                let col = if i == 0 {
                    (at(0) * -3.0 + at(1) * 4.0 - at(2)) / (2.0 * d)
                } else if i == count - 1 {
                    (at(count - 1) * 3.0 - at(count - 2) * 4.0 + at(count - 3)) / (2.0 * d)
                } else {
                    (at(i + 1) - at(i - 1)) / (2.0 * d)
                };
                jac.set_column(k, &col);
            }
            out.push(jac);
        }
        Ok(out)
    }

    /// Hessian tables per output component (n x n each) by second
    /// differences; boundary stencils are shifted one node inward.
    pub fn hessian_table(&self, values: &[DVector<f64>]) -> Result<Vec<Vec<DMatrix<f64>>>> {
        if values.len() != self.len() {
            return Err(Error::Dimension("table/grid size mismatch".into()));
        }
        let m = values[0].len();
        let n = self.dim();
        let clamp_center = |multi: &[usize]| -> Vec<usize> {
            multi
                .iter()
                .enumerate()
                .map(|(k, &i)| i.clamp(1, self.axes[k].count - 2))
                .collect()
        };
        let mut out = Vec::with_capacity(values.len());
        for flat in 0..values.len() {
            let center = clamp_center(&self.multi_index(flat));
            let mut h_per_comp = vec![DMatrix::zeros(n, n); m];
            for j in 0..n {
                for k in j..n {
                    let entry: DVector<f64> = if j == k {
                        let dj = self.spacing(j);
                        let mut up = center.clone();
                        let mut dn = center.clone();
                        up[j] += 1;
                        dn[j] -= 1;
                        (&values[self.flat_index(&up)] - &values[self.flat_index(&center)] * 2.0
                            + &values[self.flat_index(&dn)])
                            / (dj * dj)
                    } else {
                        let dj = self.spacing(j);
                        let dk = self.spacing(k);
                        let shift = |sj: isize, sk: isize| -> usize {
                            let mut idx = center.clone();
                            idx[j] = (idx[j] as isize + sj) as usize;
                            idx[k] = (idx[k] as isize + sk) as usize;
                            self.flat_index(&idx)
                        };
                        (&values[shift(1, 1)] - &values[shift(1, -1)] - &values[shift(-1, 1)]
                            + &values[shift(-1, -1)])
                            / (4.0 * dj * dk)
                    };
                    for c in 0..m {
                        h_per_comp[c][(j, k)] = entry[c];
                        h_per_comp[c][(k, j)] = entry[c];
                    }
                }
            }
            out.push(h_per_comp);
        }
        Ok(out)
    }
}

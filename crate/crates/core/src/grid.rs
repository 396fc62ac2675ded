//! Uniform two-sided time grids.
//!
//! Every path, solver, and quadrature in this crate shares one uniform grid
//! so that node values line up exactly. Nodes are addressed by integer index;
//! node `k` sits at `(k - n_back) * h`, which guarantees a node at exactly
//! t = 0 and makes re-anchoring (the shift `theta_s`) an integer operation.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    h: f64,
    n_back: usize,
    n_fwd: usize,
}

impl TimeGrid {
    /// Grid spanning `[-t_back, t_fwd]` with step `h`. Both spans are rounded
    /// to whole numbers of steps; `t_back` must cover at least one step.
    pub fn new(t_back: f64, t_fwd: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Config(format!("grid step h = {h} must be positive")));
        }
        if !(t_back > 0.0) || t_fwd < 0.0 || !t_back.is_finite() || !t_fwd.is_finite() {
            return Err(Error::Config(format!(
                "grid span [-{t_back}, {t_fwd}] must satisfy t_back > 0, t_fwd >= 0"
            )));
        }
        let n_back = (t_back / h).round() as usize;
        let n_fwd = (t_fwd / h).round() as usize;
        if n_back == 0 {
            return Err(Error::Config(format!(
                "t_back = {t_back} is smaller than one step h = {h}"
            )));
        }
        Ok(Self { h, n_back, n_fwd })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of steps (cells); there are `n_steps() + 1` nodes.
    pub fn n_steps(&self) -> usize {
        self.n_back + self.n_fwd
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps() + 1
    }

    /// Index of the node at t = 0.
    pub fn zero_node(&self) -> usize {
        self.n_back
    }

    pub fn n_back(&self) -> usize {
        self.n_back
    }

    pub fn n_fwd(&self) -> usize {
        self.n_fwd
    }

    pub fn t_start(&self) -> f64 {
        -(self.n_back as f64) * self.h
    }

    pub fn t_end(&self) -> f64 {
        self.n_fwd as f64 * self.h
    }

    pub fn node_time(&self, k: usize) -> f64 {
        (k as f64 - self.n_back as f64) * self.h
    }

    /// Fractional node position of `t`, or an error outside the range.
    /// Returns `(k, frac)` with `t = node_time(k) + frac * h`, `0 <= frac < 1`
    /// except at the last node where `(n_steps, 0)` is returned.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let lo = self.t_start();
        let hi = self.t_end();
        // tolerate rounding at the ends
        let slack = 1e-9 * self.h.max(1.0);
        if !t.is_finite() || t < lo - slack || t > hi + slack {
            return Err(Error::OutOfRange { t, lo, hi });
        }
        let u = (t - lo) / self.h;
        let mut k = u.floor() as isize;
        if k < 0 {
            k = 0;
        }
        let mut k = k as usize;
        if k >= self.n_steps() {
            return Ok((self.n_steps(), 0.0));
        }
        let mut frac = u - k as f64;
        // snap to nodes so node-aligned queries are exact
        if frac < 1e-9 {
            frac = 0.0;
        } else if frac > 1.0 - 1e-9 {
            k += 1;
            frac = 0.0;
            if k == self.n_steps() {
                return Ok((k, 0.0));
            }
        }
        Ok((k, frac))
    }

    /// Node index of a node-aligned time, error if `t` is not on a node.
    pub fn node_at(&self, t: f64) -> Result<usize> {
        let (k, frac) = self.locate(t)?;
        if frac != 0.0 {
            return Err(Error::Config(format!(
                "time {t} is not a grid node (h = {})",
                self.h
            )));
        }
        Ok(k)
    }

    /// Grid re-anchored at node `zero_node() + shift_nodes` (the shift
    /// `theta_s` with `s = shift_nodes * h`). Node data arrays carry over
    /// unchanged; only the time labels move.
    pub fn shift_forward(&self, shift_nodes: usize) -> Result<Self> {
        if shift_nodes > self.n_fwd {
            return Err(Error::Config(format!(
                "shift of {shift_nodes} nodes exceeds forward span {}",
                self.n_fwd
            )));
        }
        Ok(Self {
            h: self.h,
            n_back: self.n_back + shift_nodes,
            n_fwd: self.n_fwd - shift_nodes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_zero_is_exact() {
        let g = TimeGrid::new(10.0, 2.0, 0.01).unwrap();
        assert_eq!(g.node_time(g.zero_node()), 0.0);
        assert!(g.t_start() < 0.0);
        assert!(g.t_end() >= 0.0);
    }

    #[test]
    fn rejects_bad_spans() {
        assert!(TimeGrid::new(0.0, 1.0, 0.01).is_err());
        assert!(TimeGrid::new(1.0, 1.0, -0.01).is_err());
        assert!(TimeGrid::new(0.001, 1.0, 0.01).is_err());
    }

    #[test]
    fn locate_snaps_to_nodes() {
        let g = TimeGrid::new(1.0, 1.0, 0.1).unwrap();
        let (k, frac) = g.locate(0.0).unwrap();
        assert_eq!((k, frac), (g.zero_node(), 0.0));
        let (k, frac) = g.locate(0.05).unwrap();
        assert_eq!(k, g.zero_node());
        assert!((frac - 0.5).abs() < 1e-9);
        assert!(g.locate(1.2).is_err());
        assert!(g.locate(-1.2).is_err());
    }

    #[test]
    fn shift_moves_anchor() {
        let g = TimeGrid::new(1.0, 1.0, 0.1).unwrap();
        let s = g.shift_forward(3).unwrap();
        assert_eq!(s.zero_node(), g.zero_node() + 3);
        assert_eq!(s.n_nodes(), g.n_nodes());
        assert!((s.t_end() - (g.t_end() - 0.3)).abs() < 1e-12);
        assert!(g.shift_forward(11).is_err());
    }
}

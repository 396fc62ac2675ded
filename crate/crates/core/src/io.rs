//! Columnar text output: every number at 17 significant digits so file
//! diffs are meaningful regression evidence.

use std::fmt::Write as _;

use crate::hierarchy::HierarchySolution;
use crate::noise::{OUPath, WienerPath};

/// 17 significant digits (1 leading + 16 fractional in scientific form).
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Space-separated table with a `#`-free header line.
pub fn format_columns(header: &str, rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| fmt_g17(*v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Path export: header `t w z`, one row per node.
pub fn format_path_table(w: &WienerPath, ou: &OUPath) -> String {
    let grid = w.grid();
    let mut rows = Vec::with_capacity(grid.n_nodes());
    for k in 0..grid.n_nodes() {
        rows.push(vec![grid.node_time(k), w.values()[k], ou.values()[k]]);
    }
    format_columns("t w z", &rows)
}

/// Hierarchy export: header `t X0.. Y0.. X1.. Y1.. X2.. Y2..` (component
/// suffixes appear for non-scalar blocks), one row per window node.
pub fn format_hierarchy_table(sol: &HierarchySolution) -> String {
    let dim_c = sol.order0.x[0].len();
    let dim_s = sol.order0.y[0].len();
    let mut cols = vec!["t".to_string()];
    for order in 0..3 {
        for (label, dim) in [("X", dim_c), ("Y", dim_s)] {
            if dim == 1 {
                cols.push(format!("{label}{order}"));
            } else {
                for i in 0..dim {
                    cols.push(format!("{label}{order}_{i}"));
                }
            }
        }
    }
    let mut rows = Vec::with_capacity(sol.n_nodes());
    for k in 0..sol.n_nodes() {
        let mut row = vec![sol.tau(k)];
        for fields in [&sol.order0, &sol.order1, &sol.order2] {
            row.extend(fields.x[k].iter());
            row.extend(fields.y[k].iter());
        }
        rows.push(row);
    }
    format_columns(&cols.join(" "), &rows)
}

/// Ordered key-value manifest (`key = value` lines).
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn push_f64(&mut self, key: &str, value: f64) {
        self.entries.push((key.to_string(), fmt_g17(value)));
    }

    pub fn push_list(&mut self, key: &str, values: &[f64]) {
        let joined: Vec<String> = values.iter().map(|v| fmt_g17(*v)).collect();
        self.entries.push((key.to_string(), joined.join(", ")));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

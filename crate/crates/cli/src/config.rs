//! Run configuration: a flat sectioned key-value file (TOML) describing the
//! system, trichotomy constants, grids, solver knobs, and run lists.
//! Polynomial nonlinearities are coefficient/exponent tables so no
//! expression language is needed; the built-in example is selected by name.

use anyhow::{bail, Context};
use nalgebra::DMatrix;
use serde::Deserialize;

use rcm_core::example;
use rcm_core::poly::{PolyTerm, PolynomialMap};
use rcm_core::{CenterStableSpec, ExpansionConfig, TimeGrid, TrichotomyParams, XiGrid};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub system: SystemSection,
    pub trichotomy: Option<TrichotomySection>,
    pub grid: GridSection,
    #[serde(default)]
    pub expansion: ExpansionSection,
    #[serde(default)]
    pub xi_grid: XiGridSection,
    pub run: RunSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub kind: String,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub a_c: Option<Vec<Vec<f64>>>,
    pub a_s: Option<Vec<Vec<f64>>>,
    pub lipschitz: Option<f64>,
    pub shared_driver: Option<bool>,
    pub cutoff_radius: Option<f64>,
    #[serde(default)]
    pub f_c: Vec<TermSpec>,
    #[serde(default)]
    pub f_s: Vec<TermSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub component: usize,
    pub coeff: f64,
    pub x_exp: Vec<u32>,
    pub y_exp: Vec<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrichotomySection {
    pub k: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub t_back: f64,
    #[serde(default)]
    pub t_fwd: f64,
    pub h: f64,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExpansionSection {
    pub t_trunc: Option<f64>,
    pub fp_tol: Option<f64>,
    pub fp_max_iters: Option<usize>,
    pub fp_damping: Option<f64>,
    pub fd_step: Option<f64>,
    pub eta: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiGridSection {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Default for XiGridSection {
    fn default() -> Self {
        Self {
            min: -1.0,
            max: 1.0,
            count: 41,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    #[serde(default = "default_eps_list")]
    pub eps: Vec<f64>,
    pub order_study_xi: Option<Vec<f64>>,
    pub invariance_horizon: Option<f64>,
    pub invariance_samples: Option<usize>,
    pub invariance_oracle_eps: Option<f64>,
    pub figure1_eps: Option<Vec<f64>>,
    pub lyapunov_t: Option<f64>,
    pub lyapunov_eps: Option<f64>,
    pub workers: Option<usize>,
}

fn default_eps_list() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025]
}

/// Everything the commands need, validated and assembled.
pub struct Loaded {
    pub spec: CenterStableSpec,
    pub trichotomy: TrichotomyParams,
    pub expansion: ExpansionConfig,
    pub path_grid: TimeGrid,
    pub xi_grid: XiGrid,
    pub shared_driver: bool,
    pub seeds: Vec<u64>,
    pub eps_list: Vec<f64>,
    pub order_study_xi: Vec<f64>,
    pub invariance_horizon: f64,
    pub invariance_samples: usize,
    pub invariance_oracle_eps: f64,
    pub figure1_eps: Vec<f64>,
    pub lyapunov_t: f64,
    pub lyapunov_eps: f64,
    pub workers: Option<usize>,
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> anyhow::Result<DMatrix<f64>> {
    let r = rows.len();
    if r == 0 {
        bail!("{what}: empty matrix");
    }
    let c = rows[0].len();
    if rows.iter().any(|row| row.len() != c) {
        bail!("{what}: ragged rows");
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(r, c, &flat))
}

pub fn load(text: &str, seed_offset: u64) -> anyhow::Result<Loaded> {
    let file: ConfigFile = toml::from_str(text).context("config parse error")?;
    let (spec, trichotomy, shared_driver) = match file.system.kind.as_str() {
        "builtin_example" => {
            let trich = match &file.trichotomy {
                Some(t) => TrichotomyParams::new(t.k, t.beta, t.gamma)?,
                None => example::example_trichotomy(),
            };
            (
                example::example_spec(),
                trich,
                file.system.shared_driver.unwrap_or(true),
            )
        }
        "polynomial" => {
            let n = file.system.n.context("system.n required for polynomial kind")?;
            let m = file.system.m.context("system.m required for polynomial kind")?;
            let a_c = matrix_from_rows(
                file.system.a_c.as_ref().context("system.a_c required")?,
                "a_c",
            )?;
            let a_s = matrix_from_rows(
                file.system.a_s.as_ref().context("system.a_s required")?,
                "a_s",
            )?;
            if a_c.nrows() != n || a_s.nrows() != m {
                bail!("a_c/a_s sizes must match n = {n}, m = {m}");
            }
            let terms = |specs: &[TermSpec]| -> Vec<PolyTerm> {
                specs
                    .iter()
                    .map(|t| PolyTerm {
                        component: t.component,
                        coeff: t.coeff,
                        x_exp: t.x_exp.clone(),
                        y_exp: t.y_exp.clone(),
                    })
                    .collect()
            };
            let f_c = PolynomialMap::new(n, m, n, terms(&file.system.f_c))?;
            let f_s = PolynomialMap::new(n, m, m, terms(&file.system.f_s))?;
            let lipschitz = file
                .system
                .lipschitz
                .context("system.lipschitz required for polynomial kind")?;
            let mut spec = CenterStableSpec::from_polynomials(a_c, a_s, f_c, f_s, lipschitz)?;
            if let Some(r) = file.system.cutoff_radius {
                spec = spec.apply_cutoff(r)?;
            }
            let t = file
                .trichotomy
                .as_ref()
                .context("[trichotomy] section required for polynomial kind")?;
            (
                spec,
                TrichotomyParams::new(t.k, t.beta, t.gamma)?,
                file.system.shared_driver.unwrap_or(false),
            )
        }
        other => bail!("unknown system.kind `{other}` (builtin_example | polynomial)"),
    };

    if !(file.grid.h > 0.0) || !(file.grid.t_back > 0.0) || file.grid.t_fwd < 0.0 {
        bail!("grid requires h > 0, t_back > 0, t_fwd >= 0");
    }
    let path_grid = TimeGrid::new(file.grid.t_back, file.grid.t_fwd, file.grid.h)?;

    let eta = file
        .expansion
        .eta
        .unwrap_or(0.5 * (trichotomy.beta + trichotomy.gamma));
    let fp_tol = file.expansion.fp_tol.unwrap_or(1e-10);
    // default truncation follows the weighted-space decay e^{-(beta-eta)|t|},
    // capped by the available path history
    let t_trunc_default =
        ExpansionConfig::default_t_trunc(fp_tol, &trichotomy, eta).min(file.grid.t_back);
    let expansion = ExpansionConfig {
        t_trunc: file.expansion.t_trunc.unwrap_or(t_trunc_default),
        h: file.grid.h,
        fp_tol,
        fp_max_iters: file.expansion.fp_max_iters.unwrap_or(200),
        fp_damping: file.expansion.fp_damping.unwrap_or(1.0),
        fd_step: file.expansion.fd_step.unwrap_or(f64::EPSILON.cbrt()),
        eta,
        trichotomy: Some(trichotomy),
    };
    expansion.validate()?;
    if expansion.t_trunc > file.grid.t_back + 1e-12 {
        bail!(
            "expansion.t_trunc = {} exceeds grid.t_back = {}",
            expansion.t_trunc,
            file.grid.t_back
        );
    }

    if spec.dim_c() != 1 {
        bail!(
            "the [xi_grid] section describes one axis (center dimension 1); \
             higher center dimensions go through the library API"
        );
    }
    let xi_grid = XiGrid::uniform_1d(file.xi_grid.min, file.xi_grid.max, file.xi_grid.count)?;

    if file.run.seeds.is_empty() {
        bail!("run.seeds must not be empty");
    }
    if file.run.eps.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
        bail!("run.eps entries must be finite and >= 0");
    }
    let seeds: Vec<u64> = file
        .run
        .seeds
        .iter()
        .map(|s| s.wrapping_add(seed_offset))
        .collect();
    let order_study_xi = file.run.order_study_xi.clone().unwrap_or_else(|| vec![0.7]);
    if order_study_xi.len() != spec.dim_c() {
        bail!(
            "run.order_study_xi must have {} component(s)",
            spec.dim_c()
        );
    }

    Ok(Loaded {
        spec,
        trichotomy,
        expansion,
        path_grid,
        xi_grid,
        shared_driver,
        seeds,
        eps_list: file.run.eps,
        order_study_xi,
        invariance_horizon: file.run.invariance_horizon.unwrap_or(2.0),
        invariance_samples: file.run.invariance_samples.unwrap_or(20),
        invariance_oracle_eps: file.run.invariance_oracle_eps.unwrap_or(0.05),
        figure1_eps: file.run.figure1_eps.clone().unwrap_or_else(|| vec![0.05]),
        lyapunov_t: file.run.lyapunov_t.unwrap_or(50.0),
        lyapunov_eps: file.run.lyapunov_eps.unwrap_or(0.05),
        workers: file.run.workers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[system]
kind = "builtin_example"

[grid]
t_back = 10.0
h = 0.01

[run]
seeds = [1, 2]
"#;

    #[test]
    fn minimal_builtin_config_loads() {
        let l = load(MINIMAL, 0).unwrap();
        assert_eq!(l.seeds, vec![1, 2]);
        assert_eq!(l.spec.dim_c(), 1);
        assert!(l.shared_driver);
        assert_eq!(l.expansion.t_trunc, 10.0);
        assert_eq!(l.xi_grid.len(), 41);
    }

    #[test]
    fn seed_offset_applies() {
        let l = load(MINIMAL, 100).unwrap();
        assert_eq!(l.seeds, vec![101, 102]);
    }

    #[test]
    fn rejects_gamma_not_below_beta() {
        let bad = MINIMAL.to_string()
            + r#"
[trichotomy]
k = 1.0
beta = 1.0
gamma = 1.5
"#;
        assert!(load(&bad, 0).is_err());
    }

    #[test]
    fn rejects_empty_seeds() {
        let bad = MINIMAL.replace("seeds = [1, 2]", "seeds = []");
        assert!(load(&bad, 0).is_err());
    }

    #[test]
    fn polynomial_system_loads() {
        let text = r#"
[system]
kind = "polynomial"
n = 1
m = 1
a_c = [[0.0]]
a_s = [[-1.0]]
lipschitz = 0.2

[[system.f_s]]
component = 0
coeff = -1.0
x_exp = [2]
y_exp = [0]

[trichotomy]
k = 1.0
beta = 1.0
gamma = 0.0

[grid]
t_back = 5.0
h = 0.01

[run]
seeds = [7]
"#;
        let l = load(text, 0).unwrap();
        assert!(!l.shared_driver);
        let x = nalgebra::DVector::from_row_slice(&[2.0]);
        let y = nalgebra::DVector::from_row_slice(&[0.0]);
        assert_eq!(l.spec.f_s(&x, &y)[0], -4.0);
    }
}

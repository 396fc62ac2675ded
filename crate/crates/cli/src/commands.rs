//! Command implementations. Every command writes plain-text data files plus
//! a key-value manifest into the output directory; numeric text carries 17
//! significant digits so reruns diff cleanly (the manifest timestamp line is
//! the only run-dependent content).

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use nalgebra::DVector;
use rayon::prelude::*;

use rcm_core::expansion::{build_expansion, ManifoldExpansion};
use rcm_core::hierarchy::deterministic_center_manifold;
use rcm_core::io::{fmt_g17, format_columns, Manifest};
use rcm_core::noise::OuInitMode;
use rcm_core::oracle::{
    convergence_order, invariance_defect, manifold_original, solve_rde_manifold,
    ExpansionManifold, OracleManifold,
};
use rcm_core::system::{estimate_lyapunov, gap_condition, verify_hypothesis_h};
use rcm_core::{
    companion_seed, ConjugacyContext, HdTable, OUPath, WienerPath,
};

use crate::config::Loaded;

/// A check that failed scientifically (exit code 1) rather than a bad
/// configuration (exit code 2).
#[derive(Debug)]
pub struct CheckFailure(pub String);

impl std::fmt::Display for CheckFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for CheckFailure {}

pub fn paths_for_seed(cfg: &Loaded, seed: u64) -> anyhow::Result<(WienerPath, OUPath, WienerPath, OUPath)> {
    let w1 = WienerPath::generate(seed, &cfg.path_grid)?;
    let ou1 = OUPath::from_wiener(&w1, OuInitMode::StationarySample);
    if cfg.shared_driver {
        Ok((w1.clone(), ou1.clone(), w1, ou1))
    } else {
        let w2 = WienerPath::generate(companion_seed(seed), &cfg.path_grid)?;
        let ou2 = OUPath::from_wiener(&w2, OuInitMode::StationarySample);
        Ok((w1, ou1, w2, ou2))
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn base_manifest(cfg: &Loaded, command: &str) -> Manifest {
    let mut m = Manifest::new();
    m.push("command", command);
    m.push(
        "seeds",
        cfg.seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(", "),
    );
    m.push_list("eps", &cfg.eps_list);
    m.push_f64("grid.h", cfg.expansion.h);
    m.push_f64("grid.t_back", -cfg.path_grid.t_start());
    m.push_f64("grid.t_fwd", cfg.path_grid.t_end());
    m.push_f64("expansion.t_trunc", cfg.expansion.t_trunc);
    m.push_f64("expansion.fp_tol", cfg.expansion.fp_tol);
    m.push_f64("expansion.eta", cfg.expansion.eta);
    m.push_f64("trichotomy.k", cfg.trichotomy.k);
    m.push_f64("trichotomy.beta", cfg.trichotomy.beta);
    m.push_f64("trichotomy.gamma", cfg.trichotomy.gamma);
    m.push("shared_driver", cfg.shared_driver);
    m
}

fn finish_manifest(mut m: Manifest, dir: &Path, name: &str) -> anyhow::Result<()> {
    let ts = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    m.push("timestamp", ts);
    write_file(dir, name, &m.render())
}

fn hd_table(cfg: &Loaded) -> anyhow::Result<HdTable> {
    Ok(deterministic_center_manifold(
        &cfg.spec,
        &cfg.xi_grid,
        &cfg.expansion,
    )?)
}

/// Hypothesis check, gap condition, and Lyapunov probes across seeds.
pub fn cmd_trichotomy(cfg: &Loaded, out: &Path) -> anyhow::Result<()> {
    let mut report = String::new();
    let t_samples: Vec<f64> = (-40..=40).map(|k| k as f64 * 0.25).collect();
    let hyp = verify_hypothesis_h(&cfg.spec, &cfg.trichotomy, &t_samples)?;
    report.push_str(&format!(
        "hypothesis_pass = {}\nmax_center_violation = {}\nmax_stable_violation = {}\n",
        hyp.pass,
        fmt_g17(hyp.max_center_violation),
        fmt_g17(hyp.max_stable_violation),
    ));
    let gap = gap_condition(&cfg.trichotomy, cfg.spec.lipschitz);
    report.push_str(&format!(
        "gap_holds = {}\ngap_margin = {}\ngap_eta_star = {}\n",
        gap.holds,
        fmt_g17(gap.margin),
        fmt_g17(gap.eta_star),
    ));
    let eps = cfg.lyapunov_eps;
    report.push_str(&format!("lyapunov_eps = {}\n", fmt_g17(eps)));
    if cfg.lyapunov_t > cfg.path_grid.t_end() + 1e-9 {
        anyhow::bail!(
            "run.lyapunov_t = {} exceeds grid.t_fwd = {}",
            cfg.lyapunov_t,
            cfg.path_grid.t_end()
        );
    }
    let n = cfg.spec.dim_c();
    let m = cfg.spec.dim_s();
    let mut vc = DVector::zeros(n + m);
    vc[0] = 1.0;
    let mut vs = DVector::zeros(n + m);
    vs[n] = 1.0;
    let results: Vec<(u64, f64, f64)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> anyhow::Result<(u64, f64, f64)> {
            let (_, ou1, _, ou2) = paths_for_seed(cfg, seed)?;
            let lc = estimate_lyapunov(&cfg.spec, &ou1, &ou2, eps, &vc, cfg.lyapunov_t)?;
            let ls = estimate_lyapunov(&cfg.spec, &ou1, &ou2, eps, &vs, cfg.lyapunov_t)?;
            Ok((seed, lc, ls))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut sum_c = 0.0;
    let mut sum_s = 0.0;
    for (seed, lc, ls) in &results {
        report.push_str(&format!(
            "lambda_c[seed={seed}] = {}\nlambda_s[seed={seed}] = {}\n",
            fmt_g17(*lc),
            fmt_g17(*ls)
        ));
        sum_c += lc;
        sum_s += ls;
    }
    let mean_c = sum_c / results.len() as f64;
    let mean_s = sum_s / results.len() as f64;
    report.push_str(&format!(
        "lambda_c_mean = {}\nlambda_s_mean = {}\n",
        fmt_g17(mean_c),
        fmt_g17(mean_s)
    ));
    write_file(out, "trichotomy_report.txt", &report)?;
    let mut manifest = base_manifest(cfg, "trichotomy");
    manifest.push("hypothesis_pass", hyp.pass);
    manifest.push("gap_holds", gap.holds);
    manifest.push_f64("gap_margin", gap.margin);
    manifest.push_f64("lambda_c_mean", mean_c);
    manifest.push_f64("lambda_s_mean", mean_s);
    finish_manifest(manifest, out, "trichotomy_manifest.txt")?;
    if !hyp.pass || !gap.holds {
        return Err(CheckFailure(format!(
            "trichotomy checks failed (hypothesis_pass = {}, gap_holds = {}); see {}",
            hyp.pass,
            gap.holds,
            out.join("trichotomy_report.txt").display()
        ))
        .into());
    }
    println!(
        "trichotomy: pass (gap margin {:.3}, lambda_c ~ {:.4}, lambda_s ~ {:.4})",
        gap.margin, mean_c, mean_s
    );
    Ok(())
}

fn expansion_header(dim_c: usize, dim_s: usize) -> String {
    if dim_c == 1 && dim_s == 1 {
        "xi Hd H1 H2".to_string()
    } else {
        let mut cols = Vec::new();
        for i in 0..dim_c {
            cols.push(format!("xi_{i}"));
        }
        for label in ["Hd", "H1", "H2"] {
            for j in 0..dim_s {
                cols.push(format!("{label}_{j}"));
            }
        }
        cols.join(" ")
    }
}

fn expansion_rows(exp: &ManifoldExpansion) -> Vec<Vec<f64>> {
    let mut rows = Vec::with_capacity(exp.xi_grid.len());
    for p in 0..exp.xi_grid.len() {
        let xi = exp.xi_grid.point(p);
        let mut row: Vec<f64> = xi.iter().copied().collect();
        row.extend(exp.hd[p].iter());
        row.extend(exp.h1[p].iter());
        row.extend(exp.h2[p].iter());
        rows.push(row);
    }
    rows
}

/// Expansion tables per seed (`xi Hd H1 H2` columns) plus a manifest.
pub fn cmd_expand(cfg: &Loaded, out: &Path) -> anyhow::Result<()> {
    let hd = hd_table(cfg)?;
    let per_seed: Vec<(u64, ManifoldExpansion)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> anyhow::Result<(u64, ManifoldExpansion)> {
            let (_, ou1, _, ou2) = paths_for_seed(cfg, seed)?;
            let exp = build_expansion(&cfg.spec, &hd, &ou1, &ou2, &cfg.expansion)?;
            Ok((seed, exp))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let header = expansion_header(cfg.spec.dim_c(), cfg.spec.dim_s());
    for (seed, exp) in &per_seed {
        let table = format_columns(&header, &expansion_rows(exp));
        write_file(out, &format!("expansion_seed{seed}.txt"), &table)?;
    }
    let mut manifest = base_manifest(cfg, "expand");
    manifest.push("xi_points", cfg.xi_grid.len());
    for (seed, exp) in &per_seed {
        manifest.push_f64(&format!("z1_at_0[seed={seed}]"), exp.z1_at_0);
        manifest.push_f64(&format!("z2_at_0[seed={seed}]"), exp.z2_at_0);
    }
    finish_manifest(manifest, out, "manifest.txt")?;
    println!(
        "expand: {} seed table(s) over {} xi points written to {}",
        per_seed.len(),
        cfg.xi_grid.len(),
        out.display()
    );
    Ok(())
}

/// Oracle manifold values across the (seed, eps, xi) grid.
pub fn cmd_oracle(cfg: &Loaded, out: &Path) -> anyhow::Result<()> {
    let tasks: Vec<(u64, f64)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| cfg.eps_list.iter().map(move |&e| (s, e)))
        .collect();
    let results: Vec<Vec<Vec<f64>>> = tasks
        .par_iter()
        .map(|&(seed, eps)| -> anyhow::Result<Vec<Vec<f64>>> {
            let (_, ou1, _, ou2) = paths_for_seed(cfg, seed)?;
            let ctx = ConjugacyContext::from_paths(eps, &ou1, &ou2, cfg.shared_driver)?;
            let mut rows = Vec::with_capacity(cfg.xi_grid.len());
            for p in 0..cfg.xi_grid.len() {
                let xi = cfg.xi_grid.point(p);
                let xi_tilde = &xi * (-eps * ctx.z1_at_0).exp();
                let r = solve_rde_manifold(&cfg.spec, &ou1, &ou2, eps, &xi_tilde, &cfg.expansion)?;
                let h_orig = manifold_original(&r, &ctx);
                let mut row = vec![seed as f64, eps];
                row.extend(xi.iter());
                row.extend(r.tilde_h_eps.iter());
                row.extend(h_orig.iter());
                row.push(r.iterations as f64);
                row.push(r.residual);
                rows.push(row);
            }
            Ok(rows)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for block in results {
        rows.extend(block);
    }
    let table = format_columns("seed eps xi tilde_H H iterations residual", &rows);
    write_file(out, "oracle.txt", &table)?;
    let manifest = base_manifest(cfg, "oracle");
    finish_manifest(manifest, out, "oracle_manifest.txt")?;
    println!("oracle: {} row(s) written to {}", rows.len(), out.display());
    Ok(())
}

/// Oracle-vs-expansion error sweep with fitted slopes.
pub fn cmd_order_study(cfg: &Loaded, out: &Path) -> anyhow::Result<()> {
    let hd = hd_table(cfg)?;
    let xi = DVector::from_row_slice(&cfg.order_study_xi);
    let studies: Vec<(u64, rcm_core::OrderStudy)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> anyhow::Result<(u64, rcm_core::OrderStudy)> {
            let (_, ou1, _, ou2) = paths_for_seed(cfg, seed)?;
            let exp = build_expansion(&cfg.spec, &hd, &ou1, &ou2, &cfg.expansion)?;
            let study = convergence_order(
                &cfg.spec,
                &ou1,
                &ou2,
                &exp,
                &xi,
                &cfg.eps_list,
                &cfg.expansion,
            )?;
            Ok((seed, study))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut text = String::from("eps err_full err_order1\n");
    let mut manifest = base_manifest(cfg, "order-study");
    manifest.push_list("order_study_xi", &cfg.order_study_xi);
    for (seed, study) in &studies {
        text.push_str(&format!("# seed = {seed}\n"));
        for k in 0..study.eps.len() {
            text.push_str(&format!(
                "{} {} {}\n",
                fmt_g17(study.eps[k]),
                fmt_g17(study.err_full[k]),
                fmt_g17(study.err_order1[k])
            ));
        }
        if let Some(s) = study.slope_full {
            manifest.push_f64(&format!("slope_full[seed={seed}]"), s);
        }
        if let Some(s) = study.slope_order1 {
            manifest.push_f64(&format!("slope_order1[seed={seed}]"), s);
        }
        if !study.dropped.is_empty() {
            manifest.push_list(&format!("dropped_eps[seed={seed}]"), &study.dropped);
        }
    }
    write_file(out, "order_study.txt", &text)?;
    finish_manifest(manifest, out, "order_study_manifest.txt")?;
    for (seed, study) in &studies {
        println!(
            "order-study seed {seed}: slope_full = {:?}, slope_order1 = {:?}",
            study.slope_full, study.slope_order1
        );
    }
    Ok(())
}

/// Invariance defects of the oracle graph and the expansion graph.
pub fn cmd_invariance(cfg: &Loaded, out: &Path) -> anyhow::Result<()> {
    if cfg.invariance_horizon > cfg.path_grid.t_end() + 1e-9 {
        anyhow::bail!(
            "run.invariance_horizon = {} exceeds grid.t_fwd = {}",
            cfg.invariance_horizon,
            cfg.path_grid.t_end()
        );
    }
    let hd = hd_table(cfg)?;
    let xi = DVector::from_row_slice(&cfg.order_study_xi);
    let seed = cfg.seeds[0];
    let (_, ou1, _, ou2) = paths_for_seed(cfg, seed)?;
    let oracle_eval = OracleManifold {
        spec: &cfg.spec,
        config: &cfg.expansion,
    };
    let expansion_eval = ExpansionManifold {
        spec: &cfg.spec,
        config: &cfg.expansion,
        hd: &hd,
    };
    let oracle_defect = invariance_defect(
        &cfg.spec,
        &ou1,
        &ou2,
        cfg.invariance_oracle_eps,
        &xi,
        cfg.invariance_horizon,
        cfg.invariance_samples,
        &oracle_eval,
    )?;
    let mut rows = vec![format!(
        "oracle {} {}",
        fmt_g17(cfg.invariance_oracle_eps),
        fmt_g17(oracle_defect)
    )];
    let mut eps_defects = Vec::new();
    for &eps in &cfg.eps_list {
        let d = invariance_defect(
            &cfg.spec,
            &ou1,
            &ou2,
            eps,
            &xi,
            cfg.invariance_horizon,
            cfg.invariance_samples,
            &expansion_eval,
        )?;
        rows.push(format!("expansion {} {}", fmt_g17(eps), fmt_g17(d)));
        eps_defects.push((eps, d));
    }
    let mut text = String::from("evaluator eps defect\n");
    for r in &rows {
        text.push_str(r);
        text.push('\n');
    }
    write_file(out, "invariance.txt", &text)?;
    let mut manifest = base_manifest(cfg, "invariance");
    manifest.push("invariance_seed", seed);
    manifest.push_f64("oracle_defect", oracle_defect);
    let bound = 10.0
        * (cfg.expansion.h
            + (-(cfg.trichotomy.beta - cfg.expansion.eta) * cfg.expansion.t_trunc).exp());
    manifest.push_f64("oracle_defect_bound", bound);
    if eps_defects.len() >= 2 {
        let eps: Vec<f64> = eps_defects.iter().map(|(e, _)| *e).collect();
        let def: Vec<f64> = eps_defects.iter().map(|(_, d)| *d).collect();
        if let Ok(slope) = rcm_core::linalg::log_log_slope(&eps, &def) {
            manifest.push_f64("expansion_defect_slope", slope);
        }
    }
    finish_manifest(manifest, out, "invariance_manifest.txt")?;
    println!(
        "invariance: oracle defect {oracle_defect:.3e} (bound {bound:.3e}); table written to {}",
        out.display()
    );
    if oracle_defect > bound {
        return Err(CheckFailure(format!(
            "oracle-manifold invariance defect {oracle_defect:.3e} exceeds bound {bound:.3e}"
        ))
        .into());
    }
    Ok(())
}

/// Curve families for the deterministic manifold and the eps-corrected
/// truncations, one block per curve, rows `xi eps value`.
pub fn cmd_figure1(cfg: &Loaded, out: &Path) -> anyhow::Result<()> {
    let hd = hd_table(cfg)?;
    let seed = cfg.seeds[0];
    let (_, ou1, _, ou2) = paths_for_seed(cfg, seed)?;
    let exp = build_expansion(&cfg.spec, &hd, &ou1, &ou2, &cfg.expansion)?;
    let mut text = String::from("xi eps value\n");
    let emit = |label: &str, eps: f64, order: usize, text: &mut String| -> anyhow::Result<()> {
        text.push_str(&format!("# curve={label} eps={}\n", fmt_g17(eps)));
        for p in 0..exp.xi_grid.len() {
            let xi = exp.xi_grid.point(p);
            let v = exp.evaluate_truncated(eps, &xi, order)?;
            text.push_str(&format!(
                "{} {} {}\n",
                fmt_g17(xi[0]),
                fmt_g17(eps),
                fmt_g17(v[0])
            ));
        }
        text.push('\n');
        Ok(())
    };
    emit("deterministic", 0.0, 0, &mut text)?;
    for &eps in &cfg.figure1_eps {
        emit("order1", eps, 1, &mut text)?;
        emit("order2", eps, 2, &mut text)?;
    }
    write_file(out, "figure1.txt", &text)?;
    let mut manifest = base_manifest(cfg, "figure1");
    manifest.push("figure1_seed", seed);
    manifest.push_list("figure1_eps", &cfg.figure1_eps);
    manifest.push_f64("z_at_0", exp.z1_at_0);
    finish_manifest(manifest, out, "figure1_manifest.txt")?;
    println!(
        "figure1: {} curve block(s) written to {}",
        1 + 2 * cfg.figure1_eps.len(),
        out.display()
    );
    Ok(())
}

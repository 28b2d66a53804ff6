use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use onesided::catalog::{self, KnownLaw, Params};
use onesided::invariance::{fit_parametric, residual_profile, InvarianceReport, MeasureSpec, OptimizerConfig, ParametricFamily, Verdict};
use onesided::laplace_ode::{build_ode, cbi_closed_form, extract_polynomial, shooting_sweep, solve_ode, BoundaryData, OdeError, ShootingOptions};
use onesided::montecarlo::{empirical_symbol_with, ergodic_laplace_with, simulate_paths, SimConfig};
use onesided::numeric::logspace;

use crate::config::ConfigError;
use crate::problem::{parse_params, resolve, Problem, ProblemError};
use crate::{CommonArgs, Failure};

pub enum Outcome {
    Done,
    Verdict(Verdict),
}

type CmdResult = Result<Outcome, Failure>;

impl From<ProblemError> for Failure {
    fn from(e: ProblemError) -> Self {
        match e {
            ProblemError::Config(c) => Failure::Config(c.to_string()),
            ProblemError::Numeric(m) => Failure::Numeric(m),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn numeric(e: impl std::fmt::Display) -> Failure {
    Failure::Numeric(e.to_string())
}

#[derive(Serialize)]
struct Meta<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    model: &'a str,
    config_hash: &'a str,
    seed: u64,
}

fn meta<'a>(p: &'a Problem, command: &'static str) -> Meta<'a> {
    Meta {
        tool: "onesided",
        version: env!("CARGO_PKG_VERSION"),
        command,
        model: &p.name,
        config_hash: &p.config_hash,
        seed: p.seed,
    }
}

fn write_out(dir: Option<&Path>, file: &str, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("creating {}: {e}", dir.display())))?;
        let path = dir.join(file);
        std::fs::write(&path, contents).map_err(|e| Failure::Config(format!("writing {}: {e}", path.display())))?;
    }
    Ok(())
}

/// Shortest round-trip form, scientific outside [1e-4, 1e15).
fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

fn snake<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

/// `a,b,c` (one point per value in one dimension) or `a,b;c,d`.
pub fn parse_points(s: &str, dim: usize, flag: &str) -> Result<Vec<Vec<f64>>, Failure> {
    let groups: Vec<Vec<f64>> = s
        .split(';')
        .map(|g| {
            g.split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|_| Failure::Config(format!("config error at {flag}: `{t}` is not a number"))))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let pts: Vec<Vec<f64>> = if dim == 1 && groups.len() == 1 {
        groups[0].iter().map(|v| vec![*v]).collect()
    } else {
        groups
    };
    if pts.is_empty() || pts.iter().any(|p| p.len() != dim) {
        return Err(Failure::Config(format!("config error at {flag}: expected points of dimension {dim}")));
    }
    Ok(pts)
}

fn points_or(s: Option<&str>, dim: usize, flag: &str, default: f64) -> Result<Vec<Vec<f64>>, Failure> {
    match s {
        Some(s) => parse_points(s, dim, flag),
        None => Ok(vec![vec![default; dim]]),
    }
}

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|j| rows.iter().map(|r| r[j].chars().count()).chain([header[j].chars().count()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn csv(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

fn coord_names(prefix: &str, dim: usize) -> Vec<String> {
    if dim == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=dim).map(|i| format!("{prefix}{i}")).collect()
    }
}

pub fn symbol(args: &CommonArgs) -> CmdResult {
    let p = resolve(args)?;
    let xs = points_or(args.x.as_deref(), p.dim, "--x", 1.0)?;
    let xis = points_or(args.xi.as_deref(), p.dim, "--xi", 1.0)?;
    for (flag, pts) in [("--x", &xs), ("--xi", &xis)] {
        if pts.iter().flatten().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Failure::Config(format!("config error at {flag}: coordinates must be finite and nonnegative")));
        }
    }
    let mut header = coord_names("x", p.dim);
    header.extend(coord_names("xi", p.dim));
    header.push("lambda".into());
    header.push("provenance".into());
    let prov = p.symbol.provenance().to_string();
    let mut rows = Vec::new();
    for x in &xs {
        for xi in &xis {
            let v = p.symbol.eval(x, xi).map_err(numeric)?;
            let mut row: Vec<String> = x.iter().chain(xi).map(|v| num(*v)).collect();
            row.push(num(v));
            row.push(prov.clone());
            rows.push(row);
        }
    }
    print!("{}", table(&header, &rows));
    write_out(args.out.as_deref(), "symbol.csv", &csv(&header, &rows))?;
    Ok(Outcome::Done)
}

fn combine(verdicts: impl Iterator<Item = Verdict>) -> Verdict {
    let v: Vec<Verdict> = verdicts.collect();
    if v.contains(&Verdict::Invariant) {
        Verdict::Invariant
    } else if v.contains(&Verdict::Inconclusive) {
        Verdict::Inconclusive
    } else {
        Verdict::NotInvariant
    }
}

fn residual_rows(label: &str, r: &InvarianceReport, dim: usize) -> Vec<Vec<String>> {
    (0..r.xi_grid.len())
        .map(|i| {
            let mut row = vec![label.to_string()];
            row.extend(r.xi_grid[i].iter().map(|v| num(*v)));
            row.push(num(r.i_values[i]));
            row.push(num(r.abs_values[i]));
            row.push(num(r.r_values[i]));
            row.push(r.integrability[i].to_string());
            row.push(snake(&r.routes[i]));
            debug_assert_eq!(r.xi_grid[i].len(), dim);
            row
        })
        .collect()
}

fn residual_header(dim: usize) -> Vec<String> {
    let mut h = vec!["candidate".to_string()];
    h.extend(coord_names("xi", dim));
    h.extend(["I", "abs_I", "R", "integrable", "route"].map(String::from));
    h
}

#[derive(Serialize)]
struct CandidateReport<'a> {
    measure: &'a MeasureSpec,
    report: &'a InvarianceReport,
}

#[derive(Serialize)]
struct CheckReport<'a> {
    meta: Meta<'a>,
    tolerance: f64,
    grid: onesided::invariance::GridSpec,
    candidates: Vec<CandidateReport<'a>>,
    verdict: Verdict,
}

pub fn check(args: &CommonArgs) -> CmdResult {
    let p = resolve(args)?;
    if p.candidates.is_empty() {
        return Err(Failure::Config(
            "config error at candidate_measures: no candidate measure (give --measure or candidate_measures)".into(),
        ));
    }
    let mut reports = Vec::new();
    for mu in &p.candidates {
        let r = residual_profile(&p.symbol, mu, &p.grid, p.tol).map_err(numeric)?;
        println!(
            "{}: {} (max R = {:e}, tol = {:e})",
            serde_json::to_string(mu).expect("measure serializes"),
            r.verdict,
            r.max_r,
            p.tol
        );
        reports.push(r);
    }
    let verdict = combine(reports.iter().map(|r| r.verdict));
    println!("verdict: {verdict}");
    let rows: Vec<Vec<String>> = reports.iter().enumerate().flat_map(|(i, r)| residual_rows(&i.to_string(), r, p.dim)).collect();
    let report = CheckReport {
        meta: meta(&p, "check"),
        tolerance: p.tol,
        grid: p.grid,
        candidates: p.candidates.iter().zip(&reports).map(|(measure, report)| CandidateReport { measure, report }).collect(),
        verdict,
    };
    write_out(args.out.as_deref(), "check.json", &json(&report))?;
    write_out(args.out.as_deref(), "residuals.csv", &csv(&residual_header(p.dim), &rows))?;
    Ok(Outcome::Verdict(verdict))
}

#[derive(Serialize)]
struct FitReport<'a> {
    meta: Meta<'a>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    fit: &'a onesided::invariance::FitResult,
}

pub fn fit(args: &CommonArgs) -> CmdResult {
    let p = resolve(args)?;
    let fc = p.fit.clone();
    let family_name = args
        .family
        .clone()
        .or_else(|| fc.as_ref().and_then(|f| f.family.clone()))
        .unwrap_or_else(|| "gamma".into());
    let (def_lo, def_hi) = match family_name.as_str() {
        "gamma" => (vec![1e-2, 1e-2], vec![20.0, 20.0]),
        "dirac" => (vec![0.0; p.dim], vec![10.0; p.dim]),
        other => return Err(Failure::Config(format!("config error at --family: unknown family `{other}` (gamma | dirac)"))),
    };
    let lower = fc.as_ref().and_then(|f| f.lower.clone()).unwrap_or(def_lo);
    let upper = fc.as_ref().and_then(|f| f.upper.clone()).unwrap_or(def_hi);
    let family = match family_name.as_str() {
        "gamma" => {
            if p.dim != 1 || lower.len() != 2 || upper.len() != 2 {
                return Err(Failure::Config("config error at fit: the gamma family needs dim = 1 and two bounds".into()));
            }
            ParametricFamily::gamma([lower[0], lower[1]], [upper[0], upper[1]])
        }
        _ => ParametricFamily::dirac(lower.clone(), upper.clone()),
    }
    .map_err(|e| Failure::Config(format!("config error at fit: {e}")))?;
    let mut cfg = OptimizerConfig {
        seed: p.seed,
        tol: p.tol,
        ..OptimizerConfig::default()
    };
    if let Some(f) = &fc {
        if let Some(r) = f.restarts {
            cfg.restarts = r;
        }
        if let Some(m) = f.max_evaluations {
            cfg.max_evaluations = m;
        }
    }
    let result = fit_parametric(&p.symbol, &family, &p.grid, &cfg).map_err(numeric)?;
    let params: Vec<String> = result.params.iter().map(|(k, v)| format!("{k}={v:.6}")).collect();
    println!("family {}: {}", result.family, params.join(" "));
    println!("max R = {:e}{}", result.max_r, if result.stalled { " (stalled)" } else { "" });
    println!("verdict: {}", result.report.verdict);
    let verdict = result.report.verdict;
    let rows = residual_rows("0", &result.report, p.dim);
    let report = FitReport {
        meta: meta(&p, "fit"),
        lower,
        upper,
        fit: &result,
    };
    write_out(args.out.as_deref(), "fit.json", &json(&report))?;
    write_out(args.out.as_deref(), "residuals.csv", &csv(&residual_header(p.dim), &rows))?;
    Ok(Outcome::Verdict(verdict))
}

fn first_moment(law: Option<&MeasureSpec>) -> Option<f64> {
    law.map(|m| m.mean()[0])
}

pub fn ode(args: &CommonArgs) -> CmdResult {
    let p = resolve(args)?;
    if p.dim != 1 {
        return Err(Failure::Config("config error at dim: the Laplace ODE needs a one-dimensional model".into()));
    }
    let ode = match &p.catalog {
        Some(m) => m.laplace_ode().map_err(numeric)?,
        None => build_ode(&extract_polynomial(&p.symbol, 4).map_err(numeric)?),
    };
    let grid = logspace(p.grid.xi_min, p.grid.xi_max, p.grid.n_points);
    let law = p.catalog.as_ref().and_then(|m| m.invariant_law()).or(p.candidates.first());
    let m1 = args.m1.or_else(|| first_moment(law));
    println!("ode {} of order {}", ode.label(), ode.order());
    if ode.order() >= 2 && m1.is_none() {
        let report = shooting_sweep(&ode, &ShootingOptions::default()).map_err(numeric)?;
        let header: Vec<String> = ["m1", "violation", "bernstein_passed", "admissible", "error"].map(String::from).to_vec();
        let rows: Vec<Vec<String>> = report
            .sweep
            .iter()
            .chain([&report.refined])
            .map(|s| {
                vec![
                    num(s.m1),
                    num(s.violation),
                    s.bernstein_passed.to_string(),
                    s.admissible.to_string(),
                    s.error.clone().unwrap_or_default(),
                ]
            })
            .collect();
        println!(
            "m1 sweep: {} admissible of {} (failures {})",
            report.sweep.iter().filter(|s| s.admissible).count() + usize::from(report.refined.admissible),
            report.sweep.len() + 1,
            report.failures
        );
        write_out(args.out.as_deref(), "shooting.csv", &csv(&header, &rows))?;
        #[derive(Serialize)]
        struct ShootingOut<'a> {
            meta: Meta<'a>,
            report: &'a onesided::laplace_ode::ShootingReport,
        }
        write_out(
            args.out.as_deref(),
            "ode.json",
            &json(&ShootingOut {
                meta: meta(&p, "ode"),
                report: &report,
            }),
        )?;
        return Ok(Outcome::Verdict(if report.any_admissible {
            Verdict::Invariant
        } else if report.failures > 0 {
            Verdict::Inconclusive
        } else {
            Verdict::NotInvariant
        }));
    }
    let boundary = BoundaryData::normalized(if ode.order() >= 2 { m1 } else { None });
    let sol = match solve_ode(&ode, &boundary, &grid) {
        Ok(s) => s,
        Err(OdeError::NoSolution(why)) => {
            println!("no normalized solution: {why}");
            return Ok(Outcome::Verdict(Verdict::NotInvariant));
        }
        Err(e) => return Err(numeric(e)),
    };
    let closed = match p.catalog.as_ref().and_then(|m| m.affine.clone()) {
        Some(a) => Some(cbi_closed_form(&|u| (a.f)(u), &|u| (a.g)(u), &grid).map_err(numeric)?),
        None => None,
    };
    let reference: Option<Vec<f64>> = law.map(|m| grid.iter().map(|x| m.laplace(&[*x])).collect());
    let mut header = vec!["xi".to_string(), "psi".to_string()];
    header.extend((1..=sol.derivatives.len()).map(|k| format!("dpsi{k}")));
    if closed.is_some() {
        header.push("psi_closed_form".into());
    }
    if reference.is_some() {
        header.push("reference".into());
    }
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|i| {
            let mut r = vec![num(grid[i]), num(sol.psi[i])];
            r.extend(sol.derivatives.iter().map(|d| num(d[i])));
            if let Some(c) = &closed {
                r.push(num(c[i]));
            }
            if let Some(c) = &reference {
                r.push(num(c[i]));
            }
            r
        })
        .collect();
    let mut summary = String::new();
    let _ = writeln!(summary, "ψ range [{:e}, {:e}], candidate = {}", sol.diagnostics.min_psi, sol.diagnostics.max_psi, sol.diagnostics.candidate);
    if let Some(c) = &closed {
        let d = sol.psi.iter().zip(c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let _ = writeln!(summary, "max |ψ − exp∫F/G| = {d:e}");
    }
    if let Some(c) = &reference {
        let d = sol.psi.iter().zip(c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let _ = writeln!(summary, "max |ψ − reference| = {d:e}");
    }
    print!("{summary}");
    write_out(args.out.as_deref(), "ode.csv", &csv(&header, &rows))?;
    #[derive(Serialize)]
    struct OdeOut<'a> {
        meta: Meta<'a>,
        order: usize,
        boundary: &'a BoundaryData,
        diagnostics: &'a onesided::laplace_ode::SolutionDiagnostics,
    }
    write_out(
        args.out.as_deref(),
        "ode.json",
        &json(&OdeOut {
            meta: meta(&p, "ode"),
            order: ode.order(),
            boundary: &sol.boundary,
            diagnostics: &sol.diagnostics,
        }),
    )?;
    Ok(Outcome::Done)
}

pub fn simulate(args: &CommonArgs) -> CmdResult {
    let p = resolve(args)?;
    let sim = p.simulation.clone().ok_or_else(|| Failure::Config("config error: model cannot be simulated".into()))?;
    let law = p.catalog.as_ref().and_then(|m| m.invariant_law()).or(p.candidates.first());
    if args.ergodic {
        let cfg = p.sim_config(SimConfig::ergodic());
        let xis = points_or(args.xi.as_deref(), p.dim, "--xi", 1.0)?;
        let y0 = match &args.x {
            Some(s) => parse_points(s, p.dim, "--x")?.remove(0),
            None => law.map(|m| m.mean()).unwrap_or_else(|| vec![1.0; p.dim]),
        };
        let x0 = sim.lift(&y0);
        let est = ergodic_laplace_with(&sim.model, &x0, &xis, &cfg, |x| sim.observe(x)).map_err(numeric)?;
        let mut header = coord_names("xi", p.dim);
        header.extend(["psi_hat", "std_error"].map(String::from));
        if law.is_some() {
            header.push("reference".into());
            header.push("z".into());
        }
        let rows: Vec<Vec<String>> = xis
            .iter()
            .zip(&est)
            .map(|(xi, e)| {
                let mut r: Vec<String> = xi.iter().map(|v| num(*v)).collect();
                r.push(num(e.value));
                r.push(num(e.std_error));
                if let Some(m) = law {
                    let refv = m.laplace(xi);
                    r.push(num(refv));
                    r.push(format!("{:.3}", (e.value - refv) / e.std_error));
                }
                r
            })
            .collect();
        print!("{}", table(&header, &rows));
        write_out(args.out.as_deref(), "ergodic.csv", &csv(&header, &rows))?;
        return Ok(Outcome::Done);
    }
    if args.empirical {
        let cfg = p.sim_config(SimConfig::default());
        let xs = points_or(args.x.as_deref(), p.dim, "--x", 1.0)?;
        let xis = points_or(args.xi.as_deref(), p.dim, "--xi", 1.0)?;
        let mut header = coord_names("x", p.dim);
        header.extend(coord_names("xi", p.dim));
        header.extend(["lambda_hat", "std_error", "lambda", "z"].map(String::from));
        let mut rows = Vec::new();
        for y in &xs {
            for xi in &xis {
                let e = empirical_symbol_with(&sim.model, &sim.lift(y), xi, &cfg, &|x: &[f64]| sim.observe(x)).map_err(numeric)?;
                let v = p.symbol.eval(y, xi).map_err(numeric)?;
                let mut r: Vec<String> = y.iter().chain(xi).map(|v| num(*v)).collect();
                let z = if e.std_error > 0.0 { (e.value - v) / e.std_error } else { 0.0 };
                r.extend([num(e.value), num(e.std_error), num(v), format!("{z:.3}")]);
                rows.push(r);
            }
        }
        print!("{}", table(&header, &rows));
        write_out(args.out.as_deref(), "empirical_symbol.csv", &csv(&header, &rows))?;
        return Ok(Outcome::Done);
    }
    let cfg = p.sim_config(SimConfig {
        n_paths: 1000,
        ..SimConfig::default()
    });
    let y0 = points_or(args.x.as_deref(), p.dim, "--x", 1.0)?.remove(0);
    let ens = simulate_paths(&sim.model, &sim.lift(&y0), &cfg, args.keep_paths).map_err(numeric)?;
    let mut header = vec!["path".to_string()];
    header.extend(coord_names("x", p.dim));
    let rows: Vec<Vec<String>> = ens
        .terminal
        .iter()
        .enumerate()
        .map(|(i, s)| std::iter::once(i.to_string()).chain(sim.observe(s).iter().map(|v| num(*v))).collect())
        .collect();
    let n = ens.terminal.len() as f64;
    let mean: Vec<f64> = (0..p.dim).map(|j| ens.terminal.iter().map(|s| sim.observe(s)[j]).sum::<f64>() / n).collect();
    println!("{} paths to t = {}: mean {:?}, boundary events {}", ens.terminal.len(), cfg.horizon, mean, ens.boundary_events);
    write_out(args.out.as_deref(), "terminal.csv", &csv(&header, &rows))?;
    if let Some(grids) = &ens.grids {
        let mut header = vec!["path".to_string(), "t".to_string()];
        header.extend(coord_names("x", p.dim));
        let mut rows = Vec::new();
        for (i, g) in grids.iter().enumerate() {
            for (t, s) in ens.times.iter().zip(g) {
                let mut r = vec![i.to_string(), num(*t)];
                r.extend(sim.observe(s).iter().map(|v| num(*v)));
                rows.push(r);
            }
        }
        write_out(args.out.as_deref(), "paths.csv", &csv(&header, &rows))?;
    }
    Ok(Outcome::Done)
}

pub fn list_catalog(args: &CommonArgs) -> CmdResult {
    match &args.catalog {
        None => {
            for e in catalog::ENTRIES {
                let params: Vec<String> = e.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!("{:<13} {}", e.name, e.summary);
                if !params.is_empty() {
                    println!("{:<13} params: {}", "", params.join(","));
                }
            }
            write_out(args.out.as_deref(), "catalog.json", &json(&catalog::ENTRIES))?;
        }
        Some(name) => {
            let params = match &args.params {
                Some(p) => parse_params(p)?,
                None => Params::new(),
            };
            let m = catalog::build(name, &params, args.transform).map_err(|e| match e {
                catalog::CatalogError::UnknownEntry(_) | catalog::CatalogError::UnknownParam { .. } | catalog::CatalogError::InvalidParam { .. } => {
                    Failure::Config(format!("config error at --catalog: {e}"))
                }
                other => numeric(other),
            })?;
            #[derive(Serialize)]
            struct Entry<'a> {
                name: &'a str,
                params: &'a [(String, catalog::ParamValue)],
                transform: Option<String>,
                law: &'a KnownLaw,
            }
            let out = json(&Entry {
                name: &m.name,
                params: &m.params,
                transform: m.transform.map(|t| t.to_string()),
                law: &m.law,
            });
            print!("{out}");
            write_out(args.out.as_deref(), "catalog.json", &out)?;
        }
    }
    Ok(Outcome::Done)
}

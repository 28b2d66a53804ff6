//! Acceptance criteria 1 to 10, one PASS/FAIL line each.
//!
//! Criteria listed in `KNOWN_RED` are reported but do not fail the target;
//! everything else must pass.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use onesided::catalog::{self, CatalogModel, Params, ParamValue, TransformSpec};
use onesided::expr::parse;
use onesided::invariance::{
    fit_parametric, residual_profile, residual_profile_with, residual_with, GridSpec, MeasureSpec, OptimizerConfig, ParametricFamily, ResidualOptions,
    RoutePreference, Verdict,
};
use onesided::laplace_ode::{cbi_closed_form, shooting_sweep, solve_ode, BoundaryData, ShootingOptions};
use onesided::levy::LevyTriplet;
use onesided::model::{CoefficientMap, ItoLevyModel, JumpKernel};
use onesided::montecarlo::{empirical_symbol_with, ergodic_laplace_with, generator_mc, simulate_paths, SimConfig};
use onesided::numeric::{halton_point, logspace};
use onesided::symbol::{generator_apply_expmix, induced_characteristics, symbol_from_characteristics, symbol_from_sde, Provenance, SymbolEvaluator};
use onesided::transforms::{gou_laplace_ode, squared_symbol, SymmetricSdeModel};

/// Verhulst at (a, σ) = (1, 1) has the invariant law Gamma(1, 2).
const KNOWN_RED: &[usize] = &[3];

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn params(kv: &[(&str, f64)]) -> Params {
    kv.iter().map(|(k, v)| (k.to_string(), ParamValue::Number(*v))).collect()
}

fn model(name: &str, kv: &[(&str, f64)]) -> CatalogModel {
    catalog::build(name, &params(kv), None).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn default_grid() -> GridSpec {
    GridSpec {
        xi_min: 1e-2,
        xi_max: 1e2,
        n_points: 40,
    }
}

fn c1_cir_invariance() -> Check {
    let m = model("cir", &[("a", 2.0), ("b", 1.0), ("sigma", 1.0)]);
    let mu = MeasureSpec::gamma(4.0, 4.0).unwrap();
    let start = Instant::now();
    let report = residual_profile(&m.symbol, &mu, &default_grid(), 1e-6).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure(report.max_r <= 1e-8, format!("max R = {:e}", report.max_r))?;
    ensure(elapsed < 1.0, format!("runtime {elapsed:.3} s"))?;
    // second route: quadrature against the Gamma density
    let opts = ResidualOptions {
        route: RoutePreference::Quadrature,
        ..ResidualOptions::default()
    };
    let quad = residual_profile_with(&m.symbol, &mu, &default_grid().points(1), 1e-6, &opts).map_err(|e| e.to_string())?;
    ensure(
        quad.integrability.iter().all(|b| *b),
        format!("quadrature route failed: {:?}", quad.errors.iter().flatten().next()),
    )?;
    ensure(quad.max_r <= 1e-8, format!("quadrature route max R = {:e}", quad.max_r))?;
    Ok(format!("max R = {:.2e} (quadrature {:.2e}), {:.0} ms", report.max_r, quad.max_r, elapsed * 1e3))
}

fn c2_cir_ode() -> Check {
    let (a, b, s) = (2.0, 1.0, 1.0);
    let m = model("cir", &[("a", a), ("b", b), ("sigma", s)]);
    let ode = m.laplace_ode().map_err(|e| e.to_string())?;
    let grid = logspace(1e-2, 1e2, 40);
    let sol = solve_ode(&ode, &BoundaryData::normalized(None), &grid).map_err(|e| e.to_string())?;
    let err = grid
        .iter()
        .zip(&sol.psi)
        .map(|(xi, p)| (p - (2.0 * a / (2.0 * a + s * s * xi)).powf(2.0 * a * b / (s * s))).abs())
        .fold(0.0, f64::max);
    ensure(err <= 1e-8, format!("sup |ψ − closed form| = {err:e}"))?;
    let fam = ParametricFamily::gamma([1e-2, 1e-2], [20.0, 20.0]).unwrap();
    let fit = fit_parametric(&m.symbol, &fam, &default_grid(), &OptimizerConfig::default()).map_err(|e| e.to_string())?;
    let (k, th) = (fit.params[0].1, fit.params[1].1);
    ensure((k - 4.0).abs() <= 1e-4 && (th - 4.0).abs() <= 1e-4, format!("fit ({k}, {th})"))?;
    Ok(format!("ODE sup error {err:.2e}; fit ({k:.6}, {th:.6})"))
}

/// Regression value of the best Gamma-family residual for Verhulst (1, 2).
const VERHULST_12_GAMMA_FIT_R: f64 = 0.7011494;

fn c3_verhulst() -> Check {
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for (a, s, xi_max) in [(1.0, 1.0, 1e3), (1.0, 2.0, 1e8)] {
        let m = model("verhulst", &[("a", a), ("sigma", s)]);
        let ode = m.laplace_ode().map_err(|e| e.to_string())?;
        let sweep = shooting_sweep(
            &ode,
            &ShootingOptions {
                xi_max,
                ..ShootingOptions::default()
            },
        )
        .map_err(|e| e.to_string())?;
        if sweep.any_admissible {
            failures.push(format!("({a},{s}): admissible ψ at m₁ = {:.6}", sweep.refined.m1));
        }
        if sweep.failures > 0 {
            failures.push(format!("({a},{s}): {} sweep members failed to integrate", sweep.failures));
        }
        let fam = ParametricFamily::gamma([1e-2, 1e-2], [20.0, 20.0]).unwrap();
        let fit = fit_parametric(&m.symbol, &fam, &default_grid(), &OptimizerConfig::default()).map_err(|e| e.to_string())?;
        if fit.max_r < 1e-2 {
            failures.push(format!(
                "({a},{s}): Gamma({:.4}, {:.4}) reaches max R = {:.2e}",
                fit.params[0].1, fit.params[1].1, fit.max_r
            ));
        }
        if (a, s) == (1.0, 2.0) && (fit.max_r - VERHULST_12_GAMMA_FIT_R).abs() > 1e-6 {
            failures.push(format!("(1,2): Gamma fit R = {} drifted from pinned {VERHULST_12_GAMMA_FIT_R}", fit.max_r));
        }
        let dirac = residual_profile(&m.symbol, &MeasureSpec::dirac(vec![0.0]).unwrap(), &default_grid(), 1e-6).map_err(|e| e.to_string())?;
        if dirac.r_values.iter().any(|r| *r != 0.0) {
            failures.push(format!("({a},{s}): Dirac(0) residual not identically 0"));
        }
        lines.push(format!("({a},{s}) Gamma fit R = {:.6e}", fit.max_r));
    }
    if failures.is_empty() {
        Ok(lines.join("; "))
    } else {
        failures.extend(lines);
        Err(failures.join("; "))
    }
}

fn c4_cbi() -> Check {
    let f = |k: f64| k;
    let g = |k: f64| -k - 0.5 * k * k;
    let grid = logspace(1e-2, 1e2, 40);
    let psi = cbi_closed_form(&f, &g, &grid).map_err(|e| e.to_string())?;
    let err = grid.iter().zip(&psi).map(|(x, p)| (p - (1.0 + x / 2.0).powi(-2)).abs()).fold(0.0, f64::max);
    ensure(err <= 1e-8, format!("closed form sup error {err:e}"))?;
    let sym = SymbolEvaluator::new(1, Provenance::ClosedForm, "F + xG", move |x: &[f64], xi: &[f64]| Ok(f(xi[0]) + x[0] * g(xi[0])));
    let mu = MeasureSpec::gamma(2.0, 2.0).unwrap();
    let report = residual_profile(&sym, &mu, &default_grid(), 1e-6).map_err(|e| e.to_string())?;
    ensure(report.max_r <= 1e-8, format!("max R = {:e}", report.max_r))?;
    // Oracle: ∫e^{−xξ}(F + xG)μ = Fψ − Gψ' with ψ' = −(1 + ξ/2)^{−3}.
    let mut oracle_max: f64 = 0.0;
    let mut flipped_min = f64::INFINITY;
    for (i, xi) in report.xi_grid.iter().enumerate() {
        let k = xi[0];
        let (p, dp) = ((1.0 + k / 2.0).powi(-2), -(1.0 + k / 2.0).powi(-3));
        let oracle = f(k) * p - g(k) * dp;
        let flipped = f(k) * p + g(k) * dp;
        oracle_max = oracle_max.max((report.i_values[i] - oracle).abs());
        flipped_min = flipped_min.min(flipped.abs() / report.abs_values[i]);
    }
    ensure(oracle_max <= 1e-12, format!("moment-rule I differs from Fψ − Gψ' by {oracle_max:e}"))?;
    ensure(flipped_min > 1e-3, "the opposite sign rule also vanishes")?;
    let cat = model("cbi", &[]);
    let catr = residual_profile(&cat.symbol, &mu, &default_grid(), 1e-6).map_err(|e| e.to_string())?;
    ensure(catr.max_r <= 1e-8, format!("catalog cbi max R = {:e}", catr.max_r))?;
    Ok(format!("closed form {err:.2e}; max R = {:.2e}; opposite sign R ≥ {flipped_min:.2e}", report.max_r))
}

fn c5_squared_gou() -> Check {
    let gou = SymmetricSdeModel::gou_deterministic(-1.0, 1.0).map_err(|e| e.to_string())?;
    let ode = gou_laplace_ode(&gou).map_err(|e| e.to_string())?;
    let grid = logspace(1e-2, 1e2, 40);
    let sol = solve_ode(&ode, &BoundaryData::normalized(None), &grid).map_err(|e| e.to_string())?;
    let err = grid.iter().zip(&sol.psi).map(|(x, p)| (p - (1.0 + x).powf(-0.5)).abs()).fold(0.0, f64::max);
    ensure(err <= 1e-8, format!("ODE sup error {err:e}"))?;
    let sym = squared_symbol(&gou);
    let report = residual_profile(&sym, &MeasureSpec::gamma(0.5, 1.0).unwrap(), &default_grid(), 1e-6).map_err(|e| e.to_string())?;
    ensure(report.verdict == Verdict::Invariant, format!("Gamma(1/2, 1) verdict {} (max R {:e})", report.verdict, report.max_r))?;
    let real = gou.to_model("ou").map_err(|e| e.to_string())?;
    let cfg = SimConfig {
        seed: 2024,
        ..SimConfig::ergodic()
    };
    let est = ergodic_laplace_with(&real, &[0.0], &[vec![1.0]], &cfg, |x| vec![x[0] * x[0]]).map_err(|e| e.to_string())?;
    let target = 0.5f64.sqrt();
    let z = (est[0].value - target) / est[0].std_error;
    ensure(z.abs() <= 3.0, format!("ergodic ψ̂(1) = {} ± {}, z = {z:.2}", est[0].value, est[0].std_error))?;
    Ok(format!(
        "ODE {err:.2e}; max R = {:.2e}; ψ̂(1) = {:.4} ± {:.4} (z = {z:.2})",
        report.max_r, est[0].value, est[0].std_error
    ))
}

fn c6_cross_validation() -> Check {
    let mut worst: f64 = 0.0;
    let finite = [
        ("cir", params(&[])),
        ("verhulst", params(&[])),
        ("subordinator", {
            let mut p = params(&[("rate", 2.0), ("jump_mean", 0.5), ("drift", 0.3), ("phi", 1.5)]);
            p.insert("kind".into(), ParamValue::Text("poisson".into()));
            p
        }),
    ];
    for (name, p) in &finite {
        let m = catalog::build(name, p, None).map_err(|e| e.to_string())?;
        let sde = m.model.as_ref().ok_or("no model")?;
        let direct = symbol_from_sde(sde).map_err(|e| e.to_string())?;
        let via = symbol_from_characteristics(&induced_characteristics(sde).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        for i in 0..100 {
            let h = halton_point(i + 1, 2);
            let (x, xi) = (5.0 * h[0], 10.0 * h[1]);
            let (u, v) = (direct.eval1(x, xi).map_err(|e| e.to_string())?, via.eval1(x, xi).map_err(|e| e.to_string())?);
            let d = (u - v).abs() / u.abs().max(1.0);
            ensure(d <= 1e-8, format!("{name} at ({x}, {xi}): {u} vs {v}"))?;
            worst = worst.max(d);
        }
    }

    let points = [(0.5, 0.5), (0.5, 1.0), (0.5, 2.0), (1.0, 0.5), (1.0, 1.0), (1.0, 2.0), (2.0, 0.5), (2.0, 1.0), (2.0, 2.0), (1.5, 0.25)];
    let cfg = SimConfig {
        n_paths: 200_000,
        t0: 1e-3,
        seed: 99,
        ..SimConfig::default()
    };
    let mut worst_z: f64 = 0.0;
    let mut misses = Vec::new();
    for e in catalog::ENTRIES {
        let m = catalog::build(e.name, &Params::new(), None).map_err(|e| e.to_string())?;
        let mut cfg = cfg.clone();
        cfg.boundary_policy = m.simulation.policy;
        for &(y, xi) in &points {
            let x0 = m.simulation.lift(&[y]);
            let est = empirical_symbol_with(&m.simulation.model, &x0, &[xi], &cfg, &|x: &[f64]| m.simulation.observe(x)).map_err(|e| e.to_string())?;
            let exact = m.symbol.eval1(y, xi).map_err(|e| e.to_string())?;
            let z = (est.value - exact) / est.std_error;
            worst_z = worst_z.max(z.abs());
            if z.abs() > 3.0 {
                misses.push(format!("{} at ({y}, {xi}): {:.4} ± {:.4} vs {exact:.4}", e.name, est.value, est.std_error));
            }
        }
    }
    ensure(misses.is_empty(), misses.join("; "))?;
    Ok(format!("route gap ≤ {worst:.1e}; max |z| = {worst_z:.2} over {} estimates", points.len() * catalog::ENTRIES.len()))
}

fn c7_subordinator() -> Check {
    let m = model("subordinator", &[("alpha", 0.5), ("scale", 1.0), ("phi", 1.0)]);
    let mut worst: f64 = 0.0;
    for xi in logspace(1e-2, 1e2, 25) {
        for x in logspace(1e-3, 1e3, 25) {
            let v = m.symbol.eval1(x, xi).map_err(|e| e.to_string())?;
            worst = worst.max((v - xi.sqrt()).abs());
        }
    }
    ensure(worst <= 1e-10, format!("max |λ − ξ^½| = {worst:e}"))?;
    Ok(format!("max |λ − ξ^½| = {worst:.2e}"))
}

fn c8_generator() -> Check {
    let bm = ItoLevyModel::characteristics(
        "bm",
        1,
        CoefficientMap::constant(1, 1, 1, vec![0.0]),
        CoefficientMap::constant(1, 1, 1, vec![1.0]),
        JumpKernel::Zero,
    )
    .map_err(|e| e.to_string())?;
    let sym = symbol_from_characteristics(&bm).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for x in logspace(1e-3, 10.0, 30) {
        let v = generator_apply_expmix(&sym, &[(1.0, vec![2.0])], &[x]).map_err(|e| e.to_string())?;
        let exact = 2.0 * (-2.0 * x).exp();
        worst = worst.max((v - exact).abs() / exact);
    }
    ensure(worst <= 4.0 * f64::EPSILON, format!("BM relative error {worst:e}"))?;

    let cir = model("cir", &[]);
    let exact = (-1.0f64).exp() / 2.0;
    let analytic = generator_apply_expmix(&cir.symbol, &[(1.0, vec![1.0])], &[1.0]).map_err(|e| e.to_string())?;
    ensure((analytic - exact).abs() <= 4.0 * f64::EPSILON, format!("CIR analytic {analytic} vs {exact}"))?;
    let cfg = SimConfig {
        n_paths: 200_000,
        seed: 8,
        ..SimConfig::default()
    };
    let mc = generator_mc(cir.model.as_ref().unwrap(), &[(1.0, vec![1.0])], &[1.0], 1e-3, &cfg).map_err(|e| e.to_string())?;
    let z = (mc.value - exact) / mc.std_error;
    ensure(z.abs() <= 3.0, format!("generator_mc {} ± {} vs {exact}", mc.value, mc.std_error))?;
    Ok(format!("BM rel error {worst:.1e}; CIR MC {:.4} ± {:.4} (z = {z:.2})", mc.value, mc.std_error))
}

fn c9_absorbed_bm() -> Check {
    let m = model("absorbed_bm", &[]);
    for xi in logspace(1e-2, 1e2, 20) {
        let at0 = m.symbol.eval1(0.0, xi).map_err(|e| e.to_string())?;
        ensure(at0 == 0.0, format!("λ(0, {xi}) = {at0}"))?;
        for x in [1e-9, 0.1, 1.0, 7.0] {
            let v = m.symbol.eval1(x, xi).map_err(|e| e.to_string())?;
            ensure(v == -0.5 * xi * xi, format!("λ({x}, {xi}) = {v}"))?;
        }
    }
    let r = residual_profile(&m.symbol, &MeasureSpec::dirac(vec![0.0]).unwrap(), &default_grid(), 1e-6).map_err(|e| e.to_string())?;
    ensure(r.r_values.iter().all(|v| *v == 0.0), "Dirac(0) residual not identically 0")?;
    ensure(r.verdict == Verdict::Invariant, format!("verdict {}", r.verdict))?;
    Ok("λ(0,·) = 0, λ(x,·) = −ξ²/2, Dirac(0) R ≡ 0".into())
}

fn c10_properties() -> Check {
    // λ(x, 0) = 0
    let mut models: Vec<CatalogModel> = catalog::ENTRIES.iter().map(|e| model(e.name, &[])).collect();
    models.push(catalog::build("gou", &params(&[("sigma_l2", 0.5), ("nl_rate", 1.0), ("nz_scale", 0.5)]), Some(TransformSpec::Square)).map_err(|e| e.to_string())?);
    for m in &models {
        for i in 0..20 {
            let x = 10.0 * halton_point(i + 1, 1)[0];
            let v = m.symbol.eval1(x, 0.0).map_err(|e| e.to_string())?;
            ensure(v == 0.0, format!("{}: λ({x}, 0) = {v}", m.name))?;
        }
    }
    // mixture linearity of I
    let cir = model("cir", &[]);
    let (m1, m2) = (MeasureSpec::gamma(4.0, 4.0).unwrap(), MeasureSpec::gamma(1.5, 0.7).unwrap());
    let mix = MeasureSpec::mixture(vec![(0.3, m1.clone()), (0.7, m2.clone())]).unwrap();
    let opts = ResidualOptions::default();
    let mut lin: f64 = 0.0;
    for xi in logspace(1e-2, 1e2, 15) {
        let i = |m: &MeasureSpec| residual_with(&cir.symbol, m, &[xi], &opts).map(|r| r.value);
        let (a, b, c) = (i(&m1).unwrap(), i(&m2).unwrap(), i(&mix).unwrap());
        let scale = (0.3 * a).abs() + (0.7 * b).abs();
        lin = lin.max((c - 0.3 * a - 0.7 * b).abs() / scale.max(1.0));
    }
    ensure(lin <= 1e-12, format!("mixture linearity gap {lin:e}"))?;
    // parser precedence
    let corpus: &[(&str, f64)] = &[
        ("-2^2", -4.0),
        ("2^3^2", 512.0),
        ("1 - 2 - 3", -4.0),
        ("8 / 4 / 2", 1.0),
        ("2 + 3 * 4", 14.0),
        ("(2 + 3) * 4", 20.0),
        ("-x^2", -9.0),
        ("(-x)^2", 9.0),
        ("2 * -x", -6.0),
        ("x^-1", 1.0 / 3.0),
        ("-(-x)", 3.0),
        ("exp(0) + sqrt(16) * 2", 9.0),
        ("1e-3 * 1e3", 1.0),
    ];
    for (src, want) in corpus {
        let got = parse(src).map_err(|e| e.to_string())?.eval(&[("x", 3.0)]).map_err(|e| e.to_string())?;
        ensure((got - want).abs() <= 1e-15 * want.abs().max(1.0), format!("`{src}` = {got}, want {want}"))?;
    }
    // symbolic derivative vs central difference
    let mut dmax: f64 = 0.0;
    for src in ["x^3 - 2*x", "exp(-x) * sqrt(x)", "sqrt(x) * log(1 + x)", "x / (1 + x^2)", "exp(-x^2/2) / (1 + abs(x))"] {
        let e = parse(src).unwrap();
        let de = e.differentiate("x");
        for i in 0..10 {
            let x = 0.2 + 3.0 * halton_point(i + 1, 1)[0];
            let h = 1e-5;
            let fd = (e.eval(&[("x", x + h)]).unwrap() - e.eval(&[("x", x - h)]).unwrap()) / (2.0 * h);
            let sym = de.eval(&[("x", x)]).unwrap();
            dmax = dmax.max((fd - sym).abs() / sym.abs().max(1.0));
        }
    }
    ensure(dmax <= 1e-7, format!("derivative gap {dmax:e}"))?;
    // seed determinism, bit for bit
    let cfg = SimConfig {
        n_paths: 200,
        horizon: 0.5,
        seed: 17,
        ..SimConfig::default()
    };
    let sub = model("subordinator", &[]);
    for m in [cir.model.as_ref().unwrap(), sub.model.as_ref().unwrap()] {
        let a = simulate_paths(m, &[1.0], &cfg, false).map_err(|e| e.to_string())?;
        let b = simulate_paths(m, &[1.0], &cfg, false).map_err(|e| e.to_string())?;
        let bits = |e: &onesided::montecarlo::PathEnsemble| e.terminal.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(bits(&a) == bits(&b), "simulate_paths not reproducible")?;
    }
    let _ = LevyTriplet::brownian(1, 1.0);
    Ok(format!("linearity {lin:.1e}; derivative {dmax:.1e}; {} parser cases", corpus.len()))
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, fn() -> Check); 10] = [
        (1, "CIR invariance", c1_cir_invariance),
        (2, "CIR ODE and fit", c2_cir_ode),
        (3, "Verhulst non-existence", c3_verhulst),
        (4, "CBI oracle", c4_cbi),
        (5, "squared GOU", c5_squared_gou),
        (6, "symbol cross-validation", c6_cross_validation),
        (7, "subordinator homogeneity", c7_subordinator),
        (8, "generator identity", c8_generator),
        (9, "absorbed BM boundary", c9_absorbed_bm),
        (10, "property suites", c10_properties),
    ];
    // ACCEPTANCE_ONLY=1,5 runs a subset
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut unexpected = 0;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match out {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1} s] {detail}"),
            Err(detail) => {
                let tag = if KNOWN_RED.contains(&n) { " (known red)" } else { "" };
                println!("criterion {n} ({name}): FAIL{tag} [{secs:.1} s] {detail}");
                if !KNOWN_RED.contains(&n) {
                    unexpected += 1;
                }
            }
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

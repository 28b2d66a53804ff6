//! Laplace-transform ODEs for symbols that are polynomial in the state.
//!
//! If `λ(x,ξ) = Σ c_k(ξ) x^k` then the criterion `∫e^{−xξ}λ μ(dx) = 0` reads
//! `Σ (−1)^k c_k(ξ) ψ^{(k)}(ξ) = 0` for `ψ(ξ) = ∫e^{−xξ}μ(dx)`.

mod bernstein;
mod rk;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::numeric::{chebyshev_nodes, halton_point, logspace};
use crate::quad::{integrate, QuadError, QuadOptions};
use crate::symbol::{Provenance, SymbolError, SymbolEvaluator};

pub use bernstein::{
    bernstein_check, bernstein_check_sampled, bernstein_check_with, BernsteinDiagnostics, BernsteinLayout, BernsteinOptions,
    BernsteinViolation,
};
use rk::{RkFailure, RkOptions};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OdeError {
    #[error("symbol is not polynomial in x up to degree {max_degree} (reconstruction residual {residual:e})")]
    NotPolynomial { max_degree: usize, residual: f64 },
    #[error("leading coefficient vanishes near ξ = {at:e}")]
    SingularCoefficient { at: f64 },
    #[error("integrator exceeded its step budget at ξ = {at:e} after {steps} steps")]
    StiffnessBudgetExceeded { at: f64, steps: usize },
    #[error("integration failed at ξ = {at:e}")]
    IntegrationFailure { at: f64 },
    #[error("G vanishes near ξ = {at:e}")]
    GVanishes { at: f64 },
    #[error("F/G has no finite limit at 0")]
    NoLimitAtZero,
    #[error("exponent quadrature failed: {0}")]
    Quadrature(#[from] QuadError),
    #[error("{0}")]
    NoSolution(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
}

pub type Result<T> = std::result::Result<T, OdeError>;

type CoeffFn = Arc<dyn Fn(f64) -> std::result::Result<Vec<f64>, SymbolError> + Send + Sync>;

/// `λ(x,ξ) = Σ_{k≤m} c_k(ξ) x^k` for a one-dimensional state.
#[derive(Clone)]
pub struct PolynomialSymbol {
    degree: usize,
    label: String,
    coeffs: CoeffFn,
}

impl fmt::Debug for PolynomialSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PolynomialSymbol({}, degree {})", self.label, self.degree)
    }
}

const EXTRACT_HI: f64 = 10.0;
const RECONSTRUCTION_POINTS: u64 = 50;

fn fit_coefficients(sym: &SymbolEvaluator, degree: usize, xi: f64) -> std::result::Result<Vec<f64>, SymbolError> {
    // fit in t = x / 10 for conditioning, then rescale
    let nodes = chebyshev_nodes(0.0, EXTRACT_HI, degree + 1);
    let n = degree + 1;
    let mut v = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for (i, &x) in nodes.iter().enumerate() {
        let t = x / EXTRACT_HI;
        for k in 0..n {
            v[(i, k)] = t.powi(k as i32);
        }
        rhs[i] = sym.eval1(x, xi)?;
    }
    let a = v.lu().solve(&rhs).expect("Chebyshev Vandermonde systems are nonsingular");
    Ok((0..n).map(|k| a[k] / EXTRACT_HI.powi(k as i32)).collect())
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, ck| acc * x + ck)
}

/// Relative reconstruction error of a degree-`m` fit over the sample points.
fn reconstruction_error(sym: &SymbolEvaluator, degree: usize, samples: &[(f64, f64)]) -> std::result::Result<f64, SymbolError> {
    let mut worst = 0.0_f64;
    let mut by_xi: Vec<(f64, Vec<f64>)> = Vec::new();
    for &(x, xi) in samples {
        let c = match by_xi.iter().find(|(k, _)| *k == xi) {
            Some((_, c)) => c.clone(),
            None => {
                let c = fit_coefficients(sym, degree, xi)?;
                by_xi.push((xi, c.clone()));
                c
            }
        };
        let direct = sym.eval1(x, xi)?;
        let scale = c.iter().enumerate().map(|(k, ck)| (ck * EXTRACT_HI.powi(k as i32)).abs()).fold(0.0, f64::max);
        let err = (horner(&c, x) - direct).abs() / scale.max(direct.abs()).max(1e-300);
        if !err.is_finite() {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

fn reconstruction_samples() -> Vec<(f64, f64)> {
    (1..=RECONSTRUCTION_POINTS)
        .map(|i| {
            let p = halton_point(i, 2);
            (EXTRACT_HI * p[0], 10f64.powf(-2.0 + 4.0 * p[1]))
        })
        .chain([(0.0, 1.0), (0.0, 0.1)])
        .collect()
}

impl PolynomialSymbol {
    pub fn from_fn<F>(degree: usize, label: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    {
        PolynomialSymbol {
            degree,
            label: label.into(),
            coeffs: Arc::new(move |xi| Ok(f(xi))),
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `c_0(ξ), …, c_m(ξ)`.
    pub fn coefficients(&self, xi: f64) -> std::result::Result<Vec<f64>, SymbolError> {
        (self.coeffs)(xi)
    }

    pub fn eval(&self, x: f64, xi: f64) -> std::result::Result<f64, SymbolError> {
        Ok(horner(&self.coefficients(xi)?, x))
    }

    /// Symbol evaluator rebuilt from the coefficients.
    pub fn to_symbol(&self) -> SymbolEvaluator {
        let p = self.clone();
        SymbolEvaluator::new(1, Provenance::ClosedForm, format!("poly[{}]", self.label), move |x, xi| p.eval(x[0], xi[0]))
    }
}

/// Coefficients that stay at rounding level across the samples are zeroed so
/// that fit noise does not enter the ODE right-hand side.
fn extracted(sym: &SymbolEvaluator, degree: usize, samples: &[(f64, f64)]) -> Result<PolynomialSymbol> {
    let mut live = vec![false; degree + 1];
    let mut xis: Vec<f64> = samples.iter().map(|s| s.1).collect();
    xis.sort_by(f64::total_cmp);
    xis.dedup();
    for &xi in &xis {
        let c = fit_coefficients(sym, degree, xi)?;
        let scale = c.iter().enumerate().map(|(k, ck)| (ck * EXTRACT_HI.powi(k as i32)).abs()).fold(0.0, f64::max);
        for (k, ck) in c.iter().enumerate() {
            if (ck * EXTRACT_HI.powi(k as i32)).abs() > 1e-11 * scale {
                live[k] = true;
            }
        }
    }
    let s = sym.clone();
    Ok(PolynomialSymbol {
        degree,
        label: sym.label().to_string(),
        coeffs: Arc::new(move |xi| {
            let mut c = fit_coefficients(&s, degree, xi)?;
            c.iter_mut().zip(&live).for_each(|(ck, l)| {
                if !l {
                    *ck = 0.0
                }
            });
            Ok(c)
        }),
    })
}

/// Fit `c_k(ξ)` by interpolation at Chebyshev nodes in `x ∈ [0, 10]` and pick
/// the lowest degree that reconstructs the symbol at 50 sample points.
pub fn extract_polynomial(sym: &SymbolEvaluator, max_degree: usize) -> Result<PolynomialSymbol> {
    if sym.dim() != 1 {
        return Err(OdeError::Invalid("polynomial extraction needs a one-dimensional symbol".into()));
    }
    let samples = reconstruction_samples();
    let mut best = f64::INFINITY;
    for degree in 0..=max_degree {
        let err = reconstruction_error(sym, degree, &samples)?;
        best = best.min(err);
        if err <= 1e-10 {
            return extracted(sym, degree, &samples);
        }
    }
    // accept a slightly noisier fit, but only below the hard limit
    for degree in 0..=max_degree {
        if reconstruction_error(sym, degree, &samples)? <= 1e-8 {
            return extracted(sym, degree, &samples);
        }
    }
    Err(OdeError::NotPolynomial { max_degree, residual: best })
}

type OdeFn = Arc<dyn Fn(f64) -> std::result::Result<Vec<f64>, SymbolError> + Send + Sync>;

/// `Σ_{k≤m} a_k(ξ) ψ^{(k)}(ξ) = 0`.
#[derive(Clone)]
pub struct LaplaceOde {
    order: usize,
    label: String,
    a: OdeFn,
}

impl fmt::Debug for LaplaceOde {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LaplaceOde({}, order {})", self.label, self.order)
    }
}

impl LaplaceOde {
    /// From ODE coefficients `a_0, …, a_m` directly.
    pub fn from_coefficients<F>(order: usize, label: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    {
        LaplaceOde {
            order,
            label: label.into(),
            a: Arc::new(move |xi| Ok(f(xi))),
        }
    }

    /// Coefficients that may fail to evaluate (quadrature-backed terms).
    pub fn try_from_coefficients<F>(order: usize, label: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64) -> std::result::Result<Vec<f64>, SymbolError> + Send + Sync + 'static,
    {
        LaplaceOde {
            order,
            label: label.into(),
            a: Arc::new(f),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn coefficients(&self, xi: f64) -> std::result::Result<Vec<f64>, SymbolError> {
        (self.a)(xi)
    }

    /// Left-hand side for `derivs = (ψ, ψ', …, ψ^{(m)})`.
    pub fn residual(&self, xi: f64, derivs: &[f64]) -> std::result::Result<f64, SymbolError> {
        Ok(self.coefficients(xi)?.iter().zip(derivs).map(|(a, d)| a * d).sum())
    }
}

/// Moment rule `x^k ↦ (−1)^k ψ^{(k)}`.
pub fn build_ode(poly: &PolynomialSymbol) -> LaplaceOde {
    let p = poly.clone();
    LaplaceOde {
        order: poly.degree(),
        label: poly.label().to_string(),
        a: Arc::new(move |xi| {
            let c = p.coefficients(xi)?;
            Ok(c.iter().enumerate().map(|(k, ck)| if k % 2 == 0 { *ck } else { -ck }).collect())
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryData {
    pub xi0: f64,
    pub psi0: f64,
    /// `ψ'(ξ₀), ψ''(ξ₀), …` as far as given.
    pub derivatives: Vec<f64>,
}

impl BoundaryData {
    /// `ψ(0⁺) = 1` at `ξ₀ = 1e−8`, with first moment `m₁` when the order needs it.
    pub fn normalized(m1: Option<f64>) -> Self {
        let xi0 = XI0;
        match m1 {
            Some(m) => BoundaryData {
                xi0,
                psi0: 1.0 - m * xi0,
                derivatives: vec![-m],
            },
            None => BoundaryData {
                xi0,
                psi0: 1.0,
                derivatives: vec![],
            },
        }
    }
}

pub const XI0: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionDiagnostics {
    pub min_psi: f64,
    pub max_psi: f64,
    pub nonincreasing: bool,
    pub in_unit_interval: bool,
    /// `true` when ψ is a plausible Laplace transform of a probability law.
    pub candidate: bool,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LaplaceOdeSolution {
    pub xi: Vec<f64>,
    pub psi: Vec<f64>,
    /// `derivatives[k−1][i] = ψ^{(k)}(ξ_i)` for `k = 1, …, max(m−1, 1)`.
    pub derivatives: Vec<Vec<f64>>,
    pub boundary: BoundaryData,
    pub diagnostics: SolutionDiagnostics,
}

fn check_leading(ode: &LaplaceOde, lo: f64, hi: f64) -> Result<()> {
    let m = ode.order();
    let pts = logspace(lo, hi, 400);
    let mut prev: Option<(f64, f64)> = None;
    for &xi in &pts {
        let am = ode.coefficients(xi)?[m];
        if am == 0.0 || !am.is_finite() {
            return Err(OdeError::SingularCoefficient { at: xi });
        }
        if let Some((px, pa)) = prev {
            if pa.signum() != am.signum() {
                return Err(OdeError::SingularCoefficient { at: (px * xi).sqrt() });
            }
        }
        prev = Some((xi, am));
    }
    Ok(())
}

/// Integrate the ODE upward from `ξ₀` and report ψ on `grid` (every point must
/// exceed `ξ₀`). For order `m ≥ 2` the boundary data must supply `ψ'(ξ₀)`;
/// missing higher derivatives are taken as zero.
pub fn solve_ode(ode: &LaplaceOde, boundary: &BoundaryData, grid: &[f64]) -> Result<LaplaceOdeSolution> {
    solve_ode_with(ode, boundary, grid, 1e-10)
}

fn solve_ode_with(ode: &LaplaceOde, boundary: &BoundaryData, grid: &[f64], rtol: f64) -> Result<LaplaceOdeSolution> {
    let m = ode.order();
    let xi0 = boundary.xi0;
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] <= xi0 {
        return Err(OdeError::Invalid("ξ grid must be increasing and above ξ₀".into()));
    }
    let hi = *grid.last().unwrap();
    if m == 0 {
        let a0 = ode.coefficients(grid[0])?[0];
        if a0 != 0.0 {
            return Err(OdeError::NoSolution("order-0 equation c₀ψ = 0 forces ψ ≡ 0".into()));
        }
        return Ok(constant_solution(grid, boundary));
    }
    check_leading(ode, xi0, hi)?;
    let mut y0 = vec![0.0; m];
    if m == 1 {
        // ψ ≈ exp(−ξ₀ a₀/a₁) near the origin where the ratio is nearly constant
        let a = ode.coefficients(xi0)?;
        y0[0] = boundary.psi0 * (-xi0 * a[0] / a[1]).exp();
    } else {
        y0[0] = boundary.psi0;
        if boundary.derivatives.is_empty() {
            return Err(OdeError::Invalid("order ≥ 2 needs ψ'(ξ₀); use the shooting sweep".into()));
        }
        for k in 1..m {
            y0[k] = boundary.derivatives.get(k - 1).copied().unwrap_or(0.0);
        }
    }
    // integrate in s = ln ξ: dψ^{(j)}/ds = ξ ψ^{(j+1)}
    let failure = std::cell::Cell::new(None);
    let rhs = |s: f64, y: &[f64], d: &mut [f64]| -> bool {
        let xi = s.exp();
        let a = match ode.coefficients(xi) {
            Ok(a) => a,
            Err(e) => {
                failure.set(Some(e));
                return false;
            }
        };
        for j in 0..m - 1 {
            d[j] = xi * y[j + 1];
        }
        let lower: f64 = (0..m).map(|k| a[k] * y[k]).sum();
        d[m - 1] = -xi * lower / a[m];
        d.iter().all(|v| v.is_finite())
    };
    let opts = RkOptions {
        rtol,
        atol: 1e-14,
        max_steps: 200_000,
    };
    let outs: Vec<f64> = grid.iter().map(|x| x.ln()).collect();
    let (ys, steps) = rk::integrate(rhs, xi0.ln(), &y0, &outs, &opts).map_err(|e| {
        if let Some(err) = failure.take() {
            return OdeError::Symbol(err);
        }
        match e {
            RkFailure::Budget { t, steps } => OdeError::StiffnessBudgetExceeded { at: t.exp(), steps },
            RkFailure::Rhs { t } | RkFailure::StepUnderflow { t } => OdeError::IntegrationFailure { at: t.exp() },
        }
    })?;
    let psi: Vec<f64> = ys.iter().map(|y| y[0]).collect();
    let n_der = (m - 1).max(1);
    let mut derivatives = vec![Vec::with_capacity(grid.len()); n_der];
    for (y, &xi) in ys.iter().zip(grid) {
        if m == 1 {
            let a = ode.coefficients(xi)?;
            derivatives[0].push(-a[0] * y[0] / a[1]);
        } else {
            for k in 1..m {
                derivatives[k - 1].push(y[k]);
            }
        }
    }
    let diagnostics = diagnose(&psi, &derivatives[0], steps);
    Ok(LaplaceOdeSolution {
        xi: grid.to_vec(),
        psi,
        derivatives,
        boundary: BoundaryData {
            xi0,
            psi0: y0[0],
            derivatives: y0[1..].to_vec(),
        },
        diagnostics,
    })
}

fn constant_solution(grid: &[f64], boundary: &BoundaryData) -> LaplaceOdeSolution {
    let psi = vec![1.0; grid.len()];
    let d = vec![0.0; grid.len()];
    LaplaceOdeSolution {
        xi: grid.to_vec(),
        diagnostics: diagnose(&psi, &d, 0),
        psi,
        derivatives: vec![d],
        boundary: boundary.clone(),
    }
}

const SHAPE_TOL: f64 = 1e-9;

fn diagnose(psi: &[f64], d1: &[f64], steps: usize) -> SolutionDiagnostics {
    let min_psi = psi.iter().copied().fold(f64::INFINITY, f64::min);
    let max_psi = psi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let nonincreasing = d1.iter().all(|d| *d <= SHAPE_TOL) && psi.windows(2).all(|w| w[1] <= w[0] + SHAPE_TOL);
    let in_unit_interval = min_psi >= -SHAPE_TOL && max_psi <= 1.0 + SHAPE_TOL;
    SolutionDiagnostics {
        min_psi,
        max_psi,
        nonincreasing,
        in_unit_interval,
        candidate: nonincreasing && in_unit_interval,
        steps,
    }
}

/// Amount by which ψ leaves `[0,1]` or increases.
fn shape_violation(sol: &LaplaceOdeSolution) -> f64 {
    let d = &sol.diagnostics;
    let rise = sol.derivatives[0].iter().fold(0.0_f64, |m, v| m.max(*v));
    (-d.min_psi).max(0.0) + (d.max_psi - 1.0).max(0.0) + rise
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShootingPoint {
    pub m1: f64,
    pub violation: f64,
    pub bernstein_passed: bool,
    /// Nonconstant solution passing positivity, monotonicity and Bernstein checks.
    pub admissible: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShootingReport {
    pub xi_max: f64,
    pub sweep: Vec<ShootingPoint>,
    pub refined: ShootingPoint,
    pub any_admissible: bool,
    /// Members whose integration failed; the sweep is only conclusive without them.
    pub failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootingOptions {
    pub m1_min: f64,
    pub m1_max: f64,
    pub points: usize,
    pub xi_lo: f64,
    pub xi_max: f64,
    pub golden_iterations: usize,
    pub bernstein_order: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions {
            m1_min: 1e-3,
            m1_max: 1e3,
            points: 61,
            xi_lo: 1e-3,
            xi_max: 1e3,
            golden_iterations: 40,
            bernstein_order: 6,
        }
    }
}

fn shoot_one(ode: &LaplaceOde, m1: f64, opts: &ShootingOptions) -> ShootingPoint {
    let bopts = BernsteinOptions::for_sampled(1e-9);
    let layout = BernsteinLayout::new(opts.xi_lo, opts.xi_max, bopts.nodes);
    let grid = layout.points();
    match solve_ode(ode, &BoundaryData::normalized(Some(m1)), &grid) {
        Ok(sol) => {
            let violation = shape_violation(&sol);
            let b = bernstein_check_sampled(
                &layout,
                &sol.psi,
                &BernsteinOptions {
                    max_order: opts.bernstein_order,
                    ..bopts
                },
            );
            ShootingPoint {
                m1,
                violation,
                bernstein_passed: b.passed,
                admissible: violation <= SHAPE_TOL && b.passed,
                error: None,
            }
        }
        Err(e) => ShootingPoint {
            m1,
            violation: f64::INFINITY,
            bernstein_passed: false,
            admissible: false,
            error: Some(e.to_string()),
        },
    }
}

/// Sweep the one-parameter family of solutions of an order-2 ODE over the
/// first moment `m₁ = −ψ'(0⁺)` and refine around the least-violating member.
pub fn shooting_sweep(ode: &LaplaceOde, opts: &ShootingOptions) -> Result<ShootingReport> {
    if ode.order() < 2 {
        return Err(OdeError::Invalid("shooting applies to order ≥ 2".into()));
    }
    let m1s = logspace(opts.m1_min, opts.m1_max, opts.points);
    let sweep: Vec<ShootingPoint> = m1s.par_iter().map(|&m1| shoot_one(ode, m1, opts)).collect();
    let best = sweep
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.violation.total_cmp(&b.1.violation))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let lo = m1s[best.saturating_sub(1)].ln();
    let hi = m1s[(best + 1).min(m1s.len() - 1)].ln();
    let refined = golden_section(lo, hi, opts.golden_iterations, |s| shoot_one(ode, s.exp(), opts));
    let refined = if refined.violation <= sweep[best].violation { refined } else { sweep[best].clone() };
    let any_admissible = sweep.iter().any(|p| p.admissible) || refined.admissible;
    let failures = sweep.iter().filter(|p| p.error.is_some()).count();
    Ok(ShootingReport {
        xi_max: opts.xi_max,
        sweep,
        refined,
        any_admissible,
        failures,
    })
}

fn golden_section<F: Fn(f64) -> ShootingPoint>(mut a: f64, mut b: f64, iterations: usize, f: F) -> ShootingPoint {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iterations {
        if fc.violation <= fd.violation {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc.violation <= fd.violation {
        fc
    } else {
        fd
    }
}

/// `ψ(ξ) = exp(∫₀^ξ F(u)/G(u) du)`, the Laplace transform solving
/// `Fψ − Gψ' = 0` for affine symbols `λ = F + xG`.
pub fn cbi_closed_form(f: &dyn Fn(f64) -> f64, g: &dyn Fn(f64) -> f64, grid: &[f64]) -> Result<Vec<f64>> {
    if grid.iter().any(|x| *x <= 0.0) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(OdeError::Invalid("ξ grid must be positive and increasing".into()));
    }
    let hi = *grid.last().ok_or_else(|| OdeError::Invalid("empty grid".into()))?;
    let mut prev: Option<(f64, f64)> = None;
    for &u in &logspace(1e-12, hi, 600) {
        let gu = g(u);
        if gu == 0.0 || !gu.is_finite() {
            return Err(OdeError::GVanishes { at: u });
        }
        if let Some((pu, pg)) = prev {
            if pg.signum() != gu.signum() {
                return Err(OdeError::GVanishes { at: (pu * u).sqrt() });
            }
        }
        prev = Some((u, gu));
    }
    let ratio = |u: f64| f(u) / g(u);
    let (r1, r2) = (ratio(1e-10), ratio(1e-8));
    if !r1.is_finite() || !r2.is_finite() || (r1 - r2).abs() > 1e-4 * (1.0 + r1.abs()) {
        return Err(OdeError::NoLimitAtZero);
    }
    let opts = QuadOptions::with_rel_tol(1e-13);
    let mut acc = 0.0;
    let mut left = 0.0;
    let mut out = Vec::with_capacity(grid.len());
    for &x in grid {
        let piece = match integrate(ratio, left, x, &[], &opts) {
            Ok(r) => r.value,
            Err(QuadError::Budget { value, error }) if error <= 1e-10 * value.abs().max(1e-300) => value,
            Err(e) => return Err(e.into()),
        };
        acc += piece;
        left = x;
        out.push(acc.exp());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cir_symbol(a: f64, b: f64, s: f64) -> SymbolEvaluator {
        SymbolEvaluator::new(1, Provenance::ClosedForm, "cir", move |x, xi| {
            let (x, k) = (x[0], xi[0]);
            Ok(a * (b - x) * k - 0.5 * s * s * x * k * k)
        })
    }

    fn verhulst_symbol(a: f64, s: f64) -> SymbolEvaluator {
        SymbolEvaluator::new(1, Provenance::ClosedForm, "verhulst", move |x, xi| {
            let (x, k) = (x[0], xi[0]);
            Ok((a * x - x * x) * k - 0.5 * s * s * x * x * k * k)
        })
    }

    #[test]
    fn cir_coefficients() {
        let p = extract_polynomial(&cir_symbol(2.0, 1.0, 1.0), 4).unwrap();
        assert_eq!(p.degree(), 1);
        for xi in [0.01, 1.0, 30.0] {
            let c = p.coefficients(xi).unwrap();
            assert!((c[0] - 2.0 * xi).abs() < 1e-11 * (1.0 + xi));
            assert!((c[1] + 2.0 * xi + 0.5 * xi * xi).abs() < 1e-10 * (1.0 + xi * xi));
        }
    }

    #[test]
    fn verhulst_coefficients() {
        let p = extract_polynomial(&verhulst_symbol(1.0, 1.0), 4).unwrap();
        assert_eq!(p.degree(), 2);
        let c = p.coefficients(2.0).unwrap();
        assert!(c[0].abs() < 1e-11);
        assert!((c[1] - 2.0).abs() < 1e-11);
        assert!((c[2] + 4.0).abs() < 1e-11);
    }

    #[test]
    fn non_polynomial_rejected() {
        let s = SymbolEvaluator::new(1, Provenance::ClosedForm, "kink", |x, xi| Ok(if x[0] > 0.0 { -0.5 * xi[0] * xi[0] } else { 0.0 }));
        assert!(matches!(extract_polynomial(&s, 4), Err(OdeError::NotPolynomial { .. })));
    }

    #[test]
    fn cir_ode_reproduces_gamma_transform() {
        let ode = build_ode(&extract_polynomial(&cir_symbol(2.0, 1.0, 1.0), 4).unwrap());
        let grid = logspace(1e-2, 1e2, 40);
        let sol = solve_ode(&ode, &BoundaryData::normalized(None), &grid).unwrap();
        for (xi, psi) in grid.iter().zip(&sol.psi) {
            assert!((psi - (4.0 / (4.0 + xi)).powi(4)).abs() < 1e-8);
        }
        assert!(sol.diagnostics.candidate);
    }

    #[test]
    fn zero_c0_gives_constant() {
        let ode = LaplaceOde::from_coefficients(2, "c0=0", |xi| vec![0.0, -xi, -(xi + 0.5 * xi * xi)]);
        let grid = logspace(1e-2, 1e2, 10);
        let sol = solve_ode(&ode, &BoundaryData::normalized(Some(0.0)), &grid).unwrap();
        assert!(sol.psi.iter().all(|p| (p - 1.0).abs() < 1e-12));
    }

    #[test]
    fn verhulst_supercritical_noise_has_no_admissible_solution() {
        let ode = build_ode(&extract_polynomial(&verhulst_symbol(1.0, 2.0), 4).unwrap());
        let opts = ShootingOptions {
            xi_max: 1e8,
            ..Default::default()
        };
        let r = shooting_sweep(&ode, &opts).unwrap();
        assert_eq!(r.failures, 0);
        assert!(!r.any_admissible, "{:?}", r.refined);
    }

    #[test]
    fn cbi_gamma_two_two() {
        let grid = logspace(1e-2, 1e2, 40);
        let psi = cbi_closed_form(&|u| u, &|u| -u - 0.5 * u * u, &grid).unwrap();
        for (xi, p) in grid.iter().zip(&psi) {
            assert!((p - (1.0 + xi / 2.0).powi(-2)).abs() < 1e-8);
        }
    }

    #[test]
    fn cbi_zero_immigration_is_dirac() {
        let grid = logspace(1e-2, 1e2, 5);
        let psi = cbi_closed_form(&|_| 0.0, &|u| -u, &grid).unwrap();
        assert!(psi.iter().all(|p| *p == 1.0));
    }

    #[test]
    fn cbi_recast_cir_matches_solver() {
        let grid = logspace(1e-2, 1e2, 40);
        let psi = cbi_closed_form(&|u| 2.0 * u, &|u| -(2.0 * u + 0.5 * u * u), &grid).unwrap();
        let ode = build_ode(&extract_polynomial(&cir_symbol(2.0, 1.0, 1.0), 4).unwrap());
        let sol = solve_ode(&ode, &BoundaryData::normalized(None), &grid).unwrap();
        for (a, b) in psi.iter().zip(&sol.psi) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn cbi_vanishing_g_reported() {
        let grid = logspace(1e-2, 1e2, 5);
        assert!(matches!(cbi_closed_form(&|u| u, &|u| u * (u - 3.0), &grid), Err(OdeError::GVanishes { .. })));
    }

    #[test]
    fn singular_leading_coefficient_reported() {
        let ode = LaplaceOde::from_coefficients(1, "sing", |xi| vec![xi, xi - 2.0]);
        let grid = logspace(1e-2, 1e1, 5);
        assert!(matches!(solve_ode(&ode, &BoundaryData::normalized(None), &grid), Err(OdeError::SingularCoefficient { .. })));
    }
}

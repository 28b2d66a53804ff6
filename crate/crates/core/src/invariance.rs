//! The integral criterion `I(ξ) = ∫e^{−x'ξ} λ(x,ξ) μ(dx)`, invariance verdicts
//! and parametric fits.

use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};
use thiserror::Error;

use crate::laplace_ode::{extract_polynomial, PolynomialSymbol};
use crate::numeric::{halton_point, logspace, neumaier_sum, rising_factorial, NeumaierSum};
use crate::quad::{integrate_log_scale, kronrod21, QuadError, QuadOptions};
use crate::symbol::{Provenance, SymbolError, SymbolEvaluator};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum InvarianceError {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parametric family: {0}")]
    Family(String),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
}

pub type Result<T> = std::result::Result<T, InvarianceError>;

/// Candidate law on the nonnegative orthant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    /// Density `θ^k x^{k−1} e^{−θx}/Γ(k)`, transform `(θ/(θ+ξ))^k`.
    Gamma { shape: f64, rate: f64 },
    Dirac { location: Vec<f64> },
    Mixture { components: Vec<(f64, MeasureSpec)> },
    /// Piecewise-linear density on increasing nodes in `[0, ∞)`.
    GridDensity { nodes: Vec<f64>, values: Vec<f64> },
    Sample { points: Vec<Vec<f64>> },
}

const MASS_TOL: f64 = 1e-9;

impl MeasureSpec {
    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        let m = MeasureSpec::Gamma { shape, rate };
        m.validate()?;
        Ok(m)
    }

    pub fn dirac(location: Vec<f64>) -> Result<Self> {
        let m = MeasureSpec::Dirac { location };
        m.validate()?;
        Ok(m)
    }

    pub fn mixture(components: Vec<(f64, MeasureSpec)>) -> Result<Self> {
        let m = MeasureSpec::Mixture { components };
        m.validate()?;
        Ok(m)
    }

    pub fn grid_density(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let m = MeasureSpec::GridDensity { nodes, values };
        m.validate()?;
        Ok(m)
    }

    /// Grid density rescaled to unit trapezoid mass.
    pub fn grid_density_normalized(nodes: Vec<f64>, mut values: Vec<f64>) -> Result<Self> {
        let mass = trapezoid(&nodes, &values);
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(InvarianceError::InvalidMeasure("grid density has no mass".into()));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Self::grid_density(nodes, values)
    }

    pub fn sample(points: Vec<Vec<f64>>) -> Result<Self> {
        let m = MeasureSpec::Sample { points };
        m.validate()?;
        Ok(m)
    }

    /// State dimension; `None` for an empty sample or mixture.
    pub fn dim(&self) -> Option<usize> {
        match self {
            MeasureSpec::Gamma { .. } | MeasureSpec::GridDensity { .. } => Some(1),
            MeasureSpec::Dirac { location } => Some(location.len()),
            MeasureSpec::Mixture { components } => components.first().and_then(|c| c.1.dim()),
            MeasureSpec::Sample { points } => points.first().map(|p| p.len()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(InvarianceError::InvalidMeasure(s));
        match self {
            MeasureSpec::Gamma { shape, rate } => {
                if !(*shape > 0.0 && shape.is_finite() && *rate > 0.0 && rate.is_finite()) {
                    return bad(format!("Gamma needs shape > 0 and rate > 0, got ({shape}, {rate})"));
                }
            }
            MeasureSpec::Dirac { location } => {
                if location.is_empty() || location.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return bad(format!("Dirac location must be a finite point of the nonnegative orthant, got {location:?}"));
                }
            }
            MeasureSpec::Mixture { components } => {
                if components.is_empty() {
                    return bad("empty mixture".into());
                }
                let total: f64 = components.iter().map(|c| c.0).sum();
                if components.iter().any(|c| !(c.0 >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                    return bad(format!("mixture weights must be nonnegative and sum to 1 (sum {total})"));
                }
                let d = components[0].1.dim();
                for (_, c) in components {
                    c.validate()?;
                    if c.dim() != d {
                        return bad("mixture components of different dimension".into());
                    }
                }
            }
            MeasureSpec::GridDensity { nodes, values } => {
                if nodes.len() < 2 || nodes.len() != values.len() {
                    return bad("grid density needs at least two nodes and one value per node".into());
                }
                if nodes[0] < 0.0 || nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes.iter().any(|v| !v.is_finite()) {
                    return bad("grid nodes must be finite, nonnegative and increasing".into());
                }
                if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return bad("grid density values must be finite and nonnegative".into());
                }
                let mass = trapezoid(nodes, values);
                if (mass - 1.0).abs() > MASS_TOL {
                    return bad(format!("grid density has mass {mass}, expected 1 ± {MASS_TOL}"));
                }
            }
            MeasureSpec::Sample { points } => {
                if points.is_empty() {
                    return bad("empty sample".into());
                }
                let d = points[0].len();
                if d == 0 || points.iter().any(|p| p.len() != d || p.iter().any(|v| !(*v >= 0.0) || !v.is_finite())) {
                    return bad("sample points must share a dimension and lie in the nonnegative orthant".into());
                }
            }
        }
        Ok(())
    }

    /// `ψ(ξ) = ∫e^{−x'ξ} μ(dx)`.
    pub fn laplace(&self, xi: &[f64]) -> f64 {
        match self {
            MeasureSpec::Gamma { shape, rate } => (rate / (rate + xi[0])).powf(*shape),
            MeasureSpec::Dirac { location } => (-dot(location, xi)).exp(),
            MeasureSpec::Mixture { components } => neumaier_sum(components.iter().map(|(w, m)| w * m.laplace(xi))),
            MeasureSpec::GridDensity { nodes, values } => grid_integral(nodes, values, |x| (-x * xi[0]).exp()),
            MeasureSpec::Sample { points } => neumaier_sum(points.iter().map(|p| (-dot(p, xi)).exp())) / points.len() as f64,
        }
    }

    /// Derivative `ψ^{(k)}(ξ)` of a Gamma transform.
    pub fn gamma_laplace_derivative(shape: f64, rate: f64, k: usize, xi: f64) -> f64 {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sign * rising_factorial(shape, k) * (rate / (rate + xi)).powf(shape) / (rate + xi).powi(k as i32)
    }

    /// Lebesgue density for the absolutely continuous variants.
    pub fn density(&self, x: f64) -> Option<f64> {
        match self {
            MeasureSpec::Gamma { shape, rate } => Some(gamma_pdf(*shape, *rate, x)),
            MeasureSpec::GridDensity { nodes, values } => Some(interp(nodes, values, x)),
            MeasureSpec::Mixture { components } => components
                .iter()
                .map(|(w, m)| m.density(x).map(|d| w * d))
                .sum::<Option<f64>>(),
            _ => None,
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            MeasureSpec::Gamma { shape, rate } => vec![shape / rate],
            MeasureSpec::Dirac { location } => location.clone(),
            MeasureSpec::Mixture { components } => {
                let d = self.dim().unwrap_or(0);
                let mut out = vec![0.0; d];
                for (w, m) in components {
                    for (o, v) in out.iter_mut().zip(m.mean()) {
                        *o += w * v;
                    }
                }
                out
            }
            MeasureSpec::GridDensity { nodes, values } => vec![grid_integral(nodes, values, |x| x)],
            MeasureSpec::Sample { points } => {
                let d = points[0].len();
                (0..d).map(|j| neumaier_sum(points.iter().map(|p| p[j])) / points.len() as f64).collect()
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gamma_pdf(shape: f64, rate: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return if shape < 1.0 {
            f64::INFINITY
        } else if shape == 1.0 {
            rate
        } else {
            0.0
        };
    }
    ((shape - 1.0) * x.ln() - rate * x + shape * rate.ln() - ln_gamma(shape)).exp()
}

fn trapezoid(nodes: &[f64], values: &[f64]) -> f64 {
    neumaier_sum(nodes.windows(2).zip(values.windows(2)).map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1])))
}

fn interp(nodes: &[f64], values: &[f64], x: f64) -> f64 {
    if x < nodes[0] || x > nodes[nodes.len() - 1] {
        return 0.0;
    }
    let i = nodes.partition_point(|n| *n <= x).clamp(1, nodes.len() - 1);
    let (x0, x1) = (nodes[i - 1], nodes[i]);
    let t = (x - x0) / (x1 - x0);
    values[i - 1] * (1.0 - t) + values[i] * t
}

/// `∫ g(x) p(x) dx` for the piecewise-linear density, one Kronrod rule per cell.
fn grid_integral<G: Fn(f64) -> f64>(nodes: &[f64], values: &[f64], g: G) -> f64 {
    let mut acc = NeumaierSum::new();
    for (x, v) in nodes.windows(2).zip(values.windows(2)) {
        if v[0] == 0.0 && v[1] == 0.0 {
            continue;
        }
        let (x0, x1) = (x[0], x[1]);
        acc.add(kronrod21(|y| g(y) * (v[0] + (v[1] - v[0]) * (y - x0) / (x1 - x0)), x0, x1));
    }
    acc.value()
}

/// How `I(ξ)` was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    ClosedForm,
    Quadrature,
    PointEvaluation,
    SampleAverage,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualValue {
    pub xi: Vec<f64>,
    /// `I(ξ)`.
    pub value: f64,
    /// `∫e^{−x'ξ}|λ(x,ξ)| μ(dx)`.
    pub abs_integral: f64,
    pub integrable: bool,
    pub route: Route,
    pub error: Option<String>,
}

impl ResidualValue {
    pub fn normalized(&self) -> f64 {
        self.value.abs() / self.abs_integral.max(EPS_FLOOR)
    }

    fn failed(xi: &[f64], route: Route, msg: String) -> Self {
        ResidualValue {
            xi: xi.to_vec(),
            value: f64::NAN,
            abs_integral: f64::NAN,
            integrable: false,
            route,
            error: Some(msg),
        }
    }
}

pub const EPS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoutePreference {
    /// Closed form through the moment rule whenever the symbol is polynomial.
    #[default]
    Auto,
    /// Always integrate against the density.
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualOptions {
    pub route: RoutePreference,
    pub max_degree: usize,
    pub quad_rel_tol: f64,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        ResidualOptions {
            route: RoutePreference::Auto,
            max_degree: 4,
            quad_rel_tol: 1e-12,
        }
    }
}

/// A symbol prepared for repeated criterion evaluation.
struct Criterion<'a> {
    sym: &'a SymbolEvaluator,
    poly: Option<PolynomialSymbol>,
    opts: ResidualOptions,
}

impl<'a> Criterion<'a> {
    fn new(sym: &'a SymbolEvaluator, needs_poly: bool, opts: ResidualOptions) -> Self {
        let poly = if needs_poly && sym.dim() == 1 && opts.route == RoutePreference::Auto {
            extract_polynomial(sym, opts.max_degree).ok()
        } else {
            None
        };
        Criterion { sym, poly, opts }
    }

    fn coefficients(&self, xi: &[f64]) -> Option<std::result::Result<Vec<f64>, SymbolError>> {
        self.poly.as_ref().map(|p| p.coefficients(xi[0]))
    }

    fn eval(&self, mu: &MeasureSpec, xi: &[f64], coeffs: Option<&[f64]>) -> ResidualValue {
        match mu {
            MeasureSpec::Dirac { location } => point_residual(self.sym, location, xi),
            MeasureSpec::Sample { points } => {
                let mut value = NeumaierSum::new();
                let mut abs = NeumaierSum::new();
                for p in points {
                    let r = point_residual(self.sym, p, xi);
                    if !r.integrable {
                        return ResidualValue { route: Route::SampleAverage, ..r };
                    }
                    value.add(r.value);
                    abs.add(r.abs_integral);
                }
                let n = points.len() as f64;
                ResidualValue {
                    xi: xi.to_vec(),
                    value: value.value() / n,
                    abs_integral: abs.value() / n,
                    integrable: true,
                    route: Route::SampleAverage,
                    error: None,
                }
            }
            MeasureSpec::Mixture { components } => {
                let mut value = NeumaierSum::new();
                let mut abs = NeumaierSum::new();
                let mut route = None;
                for (w, m) in components {
                    let r = self.eval(m, xi, coeffs);
                    if !r.integrable {
                        return r;
                    }
                    value.add(w * r.value);
                    abs.add(w * r.abs_integral);
                    route = match route {
                        None => Some(r.route),
                        Some(prev) if prev == r.route => Some(prev),
                        _ => Some(Route::Mixed),
                    };
                }
                ResidualValue {
                    xi: xi.to_vec(),
                    value: value.value(),
                    abs_integral: abs.value(),
                    integrable: true,
                    route: route.unwrap_or(Route::ClosedForm),
                    error: None,
                }
            }
            MeasureSpec::Gamma { shape, rate } => match coeffs {
                Some(c) => gamma_closed_form(c, *shape, *rate, xi[0]),
                None => self.density_quadrature(mu, xi),
            },
            MeasureSpec::GridDensity { nodes, values } => self.grid_residual(nodes, values, xi),
        }
    }

    fn density_quadrature(&self, mu: &MeasureSpec, xi: &[f64]) -> ResidualValue {
        let (shape, rate) = match mu {
            MeasureSpec::Gamma { shape, rate } => (*shape, *rate),
            _ => unreachable!("quadrature route is only used for Gamma measures"),
        };
        let k = xi[0];
        let hi = (shape + 60.0 + 12.0 * shape.sqrt()) / (rate + k.max(0.0)) * 2.0;
        let lo = 1e-300;
        let failure: RefCell<Option<SymbolError>> = RefCell::new(None);
        let lam = |x: f64| -> f64 {
            match self.sym.eval(&[x], xi) {
                Ok(v) => v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            }
        };
        let weight = |x: f64| ((shape - 1.0) * x.ln() - (rate + k) * x + shape * rate.ln() - ln_gamma(shape)).exp();
        let opts = QuadOptions::with_rel_tol(self.opts.quad_rel_tol);
        let pair = |signed: bool| {
            integrate_log_scale(
                |x| {
                    let w = weight(x);
                    if w == 0.0 {
                        return 0.0;
                    }
                    let l = lam(x);
                    if signed {
                        l * w
                    } else {
                        l.abs() * w
                    }
                },
                lo,
                hi,
                &[1.0 / (rate + k)],
                &opts,
            )
        };
        // a budget-limited estimate is kept when its error is negligible on
        // the scale of ∫e^{−xξ}|λ|μ(dx)
        let accept = |r: std::result::Result<crate::quad::QuadResult, QuadError>, scale: f64| match r {
            Ok(r) => Ok(r.value),
            Err(QuadError::Budget { value, error }) if error <= 1e-10 * value.abs().max(scale).max(1e-300) => Ok(value),
            Err(e) => Err(e),
        };
        let abs = accept(pair(false), 0.0);
        let scale = abs.as_ref().map(|v| v.abs()).unwrap_or(0.0);
        let value = accept(pair(true), scale);
        if let Some(e) = failure.into_inner() {
            return ResidualValue::failed(xi, Route::Quadrature, e.to_string());
        }
        match (value, abs) {
            (Ok(value), Ok(abs_integral)) if abs_integral.is_finite() => ResidualValue {
                xi: xi.to_vec(),
                value,
                abs_integral,
                integrable: true,
                route: Route::Quadrature,
                error: None,
            },
            (Err(e), _) | (_, Err(e)) => ResidualValue::failed(xi, Route::Quadrature, e.to_string()),
            _ => ResidualValue::failed(xi, Route::Quadrature, "∫e^{−xξ}|λ|μ(dx) is not finite".into()),
        }
    }

    fn grid_residual(&self, nodes: &[f64], values: &[f64], xi: &[f64]) -> ResidualValue {
        let mut value = NeumaierSum::new();
        let mut abs = NeumaierSum::new();
        let k = xi[0];
        for (x, v) in nodes.windows(2).zip(values.windows(2)) {
            if v[0] == 0.0 && v[1] == 0.0 {
                continue;
            }
            let (x0, x1) = (x[0], x[1]);
            let mut err = None;
            let mut vals = Vec::with_capacity(21);
            let s = kronrod21(
                |y| {
                    let l = match self.sym.eval(&[y], xi) {
                        Ok(l) => l,
                        Err(e) => {
                            err.get_or_insert(e);
                            0.0
                        }
                    };
                    let w = (-y * k).exp() * (v[0] + (v[1] - v[0]) * (y - x0) / (x1 - x0));
                    vals.push((l, w));
                    l * w
                },
                x0,
                x1,
            );
            if let Some(e) = err {
                return ResidualValue::failed(xi, Route::Quadrature, e.to_string());
            }
            value.add(s);
            abs.add(kronrod21(
                {
                    let mut it = vals.into_iter();
                    move |_| it.next().map(|(l, w)| l.abs() * w).unwrap_or(0.0)
                },
                x0,
                x1,
            ));
        }
        let (value, abs_integral) = (value.value(), abs.value());
        if !value.is_finite() || !abs_integral.is_finite() {
            return ResidualValue::failed(xi, Route::Quadrature, "non-finite integrand on the grid".into());
        }
        ResidualValue {
            xi: xi.to_vec(),
            value,
            abs_integral,
            integrable: true,
            route: Route::Quadrature,
            error: None,
        }
    }
}

fn point_residual(sym: &SymbolEvaluator, x: &[f64], xi: &[f64]) -> ResidualValue {
    match sym.eval(x, xi) {
        Ok(l) => {
            let w = (-dot(x, xi)).exp();
            // 0·λ is 0 even when the weight underflows
            let v = if w == 0.0 { 0.0 } else { w * l };
            ResidualValue {
                xi: xi.to_vec(),
                value: v,
                abs_integral: v.abs(),
                integrable: v.is_finite(),
                route: Route::PointEvaluation,
                error: None,
            }
        }
        Err(e) => ResidualValue::failed(xi, Route::PointEvaluation, e.to_string()),
    }
}

/// Positive real roots of `Σ c_k x^k`.
fn positive_roots(c: &[f64]) -> Vec<f64> {
    let mut deg = c.len() - 1;
    let scale = c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    while deg > 0 && c[deg].abs() <= 1e-14 * scale {
        deg -= 1;
    }
    if deg == 0 {
        return vec![];
    }
    let lead = c[deg];
    let mut comp = DMatrix::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -c[i] / lead;
    }
    let eig = comp.complex_eigenvalues();
    let p = |x: f64| c[..=deg].iter().rev().fold(0.0, |a, ck| a * x + ck);
    let dp = |x: f64| {
        c[1..=deg]
            .iter()
            .enumerate()
            .rev()
            .fold(0.0, |a, (i, ck)| a * x + (i + 1) as f64 * ck)
    };
    let mut roots: Vec<f64> = eig
        .iter()
        .filter(|z| z.re > 0.0 && z.im.abs() <= 1e-7 * z.re.abs().max(1.0))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..3 {
                let d = dp(x);
                if d != 0.0 {
                    let nx = x - p(x) / d;
                    if nx > 0.0 && nx.is_finite() {
                        x = nx;
                    }
                }
            }
            x
        })
        .collect();
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    roots
}

/// Moment rule for Gamma laws: `∫x^k e^{−xξ}μ(dx) = (−1)^k ψ^{(k)}(ξ)`, with the
/// absolute integral split at the sign changes of `λ(·,ξ)` and evaluated by
/// incomplete gamma functions.
fn gamma_closed_form(c: &[f64], shape: f64, rate: f64, xi: f64) -> ResidualValue {
    let moments: Vec<f64> = (0..c.len())
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * MeasureSpec::gamma_laplace_derivative(shape, rate, k, xi)
        })
        .collect();
    let value = neumaier_sum(c.iter().zip(&moments).map(|(ck, mk)| ck * mk));
    let roots = positive_roots(c);
    let abs_integral = if roots.is_empty() {
        value.abs()
    } else {
        let r = rate + xi;
        let mut cuts = vec![0.0];
        cuts.extend(&roots);
        cuts.push(f64::INFINITY);
        let mut acc = NeumaierSum::new();
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let piece = neumaier_sum(c.iter().zip(&moments).enumerate().map(|(k, (ck, mk))| {
                let s = shape + k as f64;
                let frac = if a == 0.0 {
                    if b.is_infinite() {
                        1.0
                    } else {
                        gamma_lr(s, r * b)
                    }
                } else if b.is_infinite() {
                    gamma_ur(s, r * a)
                } else {
                    gamma_lr(s, r * b) - gamma_lr(s, r * a)
                };
                ck * mk * frac
            }));
            acc.add(piece.abs());
        }
        acc.value()
    };
    ResidualValue {
        xi: vec![xi],
        value,
        abs_integral,
        integrable: value.is_finite() && abs_integral.is_finite(),
        route: Route::ClosedForm,
        error: None,
    }
}

fn has_gamma(mu: &MeasureSpec) -> bool {
    match mu {
        MeasureSpec::Gamma { .. } => true,
        MeasureSpec::Mixture { components } => components.iter().any(|c| has_gamma(&c.1)),
        _ => false,
    }
}

fn check_dims(sym: &SymbolEvaluator, mu: &MeasureSpec, xi: &[f64]) -> Result<()> {
    mu.validate()?;
    if mu.dim() != Some(sym.dim()) || xi.len() != sym.dim() {
        return Err(InvarianceError::Dimension(format!(
            "symbol of dimension {}, measure of dimension {:?}, ξ of length {}",
            sym.dim(),
            mu.dim(),
            xi.len()
        )));
    }
    if xi.iter().any(|v| *v < 0.0) {
        return Err(InvarianceError::Dimension("ξ must lie in the nonnegative orthant".into()));
    }
    Ok(())
}

fn eval_at(crit: &Criterion<'_>, mu: &MeasureSpec, xi: &[f64]) -> ResidualValue {
    if xi.iter().all(|v| *v == 0.0) {
        return ResidualValue {
            xi: xi.to_vec(),
            value: 0.0,
            abs_integral: 0.0,
            integrable: true,
            route: Route::ClosedForm,
            error: None,
        };
    }
    match crit.coefficients(xi) {
        Some(Ok(c)) => crit.eval(mu, xi, Some(&c)),
        Some(Err(e)) => ResidualValue::failed(xi, Route::ClosedForm, e.to_string()),
        None => crit.eval(mu, xi, None),
    }
}

/// `I(ξ)` together with its absolute counterpart.
pub fn residual_with(sym: &SymbolEvaluator, mu: &MeasureSpec, xi: &[f64], opts: &ResidualOptions) -> Result<ResidualValue> {
    check_dims(sym, mu, xi)?;
    let crit = Criterion::new(sym, has_gamma(mu), *opts);
    Ok(eval_at(&crit, mu, xi))
}

/// `I(ξ) = ∫e^{−x'ξ}λ(x,ξ)μ(dx)`.
pub fn residual(sym: &SymbolEvaluator, mu: &MeasureSpec, xi: &[f64]) -> Result<f64> {
    let r = residual_with(sym, mu, xi, &ResidualOptions::default())?;
    if r.integrable {
        Ok(r.value)
    } else {
        Err(InvarianceError::Symbol(SymbolError::WrongForm("integrability check failed")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub xi_min: f64,
    pub xi_max: f64,
    pub n_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            xi_min: 1e-2,
            xi_max: 1e2,
            n_points: 40,
        }
    }
}

pub const DIRECTION_COUNT: u64 = 32;

impl GridSpec {
    /// Log-spaced magnitudes; in `d > 1` along coordinate rays and quasi-random directions.
    pub fn points(&self, dim: usize) -> Vec<Vec<f64>> {
        let mags = logspace(self.xi_min, self.xi_max, self.n_points);
        if dim == 1 {
            return mags.into_iter().map(|m| vec![m]).collect();
        }
        let mut dirs: Vec<Vec<f64>> = (0..dim)
            .map(|i| {
                let mut e = vec![0.0; dim];
                e[i] = 1.0;
                e
            })
            .collect();
        for i in 1..=DIRECTION_COUNT {
            let p = halton_point(i, dim);
            let n = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            dirs.push(p.iter().map(|v| v / n).collect());
        }
        dirs.iter().flat_map(|d| mags.iter().map(move |m| d.iter().map(|v| v * m).collect())).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi_min > 0.0 && self.xi_max > self.xi_min && self.xi_max.is_finite() && self.n_points >= 2) {
            return Err(InvarianceError::Dimension(format!("bad ξ grid {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Invariant,
    NotInvariant,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Invariant => "invariant",
            Verdict::NotInvariant => "not_invariant",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub xi_grid: Vec<Vec<f64>>,
    pub i_values: Vec<f64>,
    pub abs_values: Vec<f64>,
    pub r_values: Vec<f64>,
    pub integrability: Vec<bool>,
    pub routes: Vec<Route>,
    pub errors: Vec<Option<String>>,
    /// Monte Carlo standard errors of `I`, when the symbol is empirical.
    pub std_errors: Option<Vec<f64>>,
    pub max_r: f64,
    pub verdict: Verdict,
    pub tolerance: f64,
    pub provenance: Provenance,
    pub seeds: Vec<u64>,
    pub notes: Vec<String>,
}

const SUFFICIENCY_NOTE: &str = "verdict invariant means the integral criterion holds on the grid; the core and class hypotheses needed for sufficiency are not checked";
const GRID_NOTE: &str = "grid adequacy is heuristic: the identity must hold for all ξ, only the listed points were evaluated";

/// Deterministic tolerance verdict.
pub fn tolerance_verdict(r: &[f64], integrable: &[bool], tol: f64) -> Verdict {
    let all_ok = integrable.iter().all(|b| *b);
    let max_r = r.iter().zip(integrable).filter(|(_, ok)| **ok).map(|(r, _)| *r).fold(0.0, f64::max);
    if all_ok && max_r <= tol {
        Verdict::Invariant
    } else if r.iter().zip(integrable).any(|(r, ok)| *ok && *r > 10.0 * tol) {
        Verdict::NotInvariant
    } else {
        Verdict::Inconclusive
    }
}

/// 3σ band for Monte Carlo backed values: invariant if every `|I|/σ ≤ 3`,
/// not invariant if some exceeds 30.
pub fn mc_verdict(values: &[f64], std_errors: &[f64]) -> Verdict {
    let z: Vec<f64> = values
        .iter()
        .zip(std_errors)
        .map(|(v, s)| if *s > 0.0 { v.abs() / s } else if *v == 0.0 { 0.0 } else { f64::INFINITY })
        .collect();
    if z.iter().all(|z| *z <= 3.0) {
        Verdict::Invariant
    } else if z.iter().any(|z| *z > 30.0) {
        Verdict::NotInvariant
    } else {
        Verdict::Inconclusive
    }
}

impl InvarianceReport {
    fn assemble(values: Vec<ResidualValue>, tol: f64, provenance: Provenance) -> Self {
        let r_values: Vec<f64> = values.iter().map(|v| if v.integrable { v.normalized() } else { f64::NAN }).collect();
        let integrability: Vec<bool> = values.iter().map(|v| v.integrable).collect();
        let verdict = tolerance_verdict(&r_values, &integrability, tol);
        let max_r = r_values.iter().copied().filter(|r| r.is_finite()).fold(0.0, f64::max);
        let mut notes = vec![GRID_NOTE.to_string()];
        if verdict == Verdict::Invariant {
            notes.push(SUFFICIENCY_NOTE.to_string());
        }
        InvarianceReport {
            xi_grid: values.iter().map(|v| v.xi.clone()).collect(),
            i_values: values.iter().map(|v| v.value).collect(),
            abs_values: values.iter().map(|v| v.abs_integral).collect(),
            r_values,
            integrability,
            routes: values.iter().map(|v| v.route).collect(),
            errors: values.into_iter().map(|v| v.error).collect(),
            std_errors: None,
            max_r,
            verdict,
            tolerance: tol,
            provenance,
            seeds: vec![],
            notes,
        }
    }

    /// Report for Monte Carlo estimates of `I(ξ)` with standard errors.
    pub fn from_estimates(xi_grid: Vec<Vec<f64>>, values: Vec<f64>, abs_values: Vec<f64>, std_errors: Vec<f64>, seeds: Vec<u64>) -> Self {
        let r_values: Vec<f64> = values.iter().zip(&abs_values).map(|(v, a)| v.abs() / a.max(EPS_FLOOR)).collect();
        let verdict = mc_verdict(&values, &std_errors);
        let n = values.len();
        InvarianceReport {
            max_r: r_values.iter().copied().fold(0.0, f64::max),
            xi_grid,
            i_values: values,
            abs_values,
            r_values,
            integrability: vec![true; n],
            routes: vec![Route::SampleAverage; n],
            errors: vec![None; n],
            std_errors: Some(std_errors),
            verdict,
            tolerance: 3.0,
            provenance: Provenance::Empirical,
            seeds,
            notes: vec![GRID_NOTE.to_string(), "verdict from a 3σ band on Monte Carlo estimates".into()],
        }
    }
}

pub const DEFAULT_TOL: f64 = 1e-6;

/// Normalized residuals `R(ξ) = |I(ξ)| / max(ε, ∫e^{−x'ξ}|λ|μ(dx))` over the grid.
pub fn residual_profile(sym: &SymbolEvaluator, mu: &MeasureSpec, grid: &GridSpec, tol: f64) -> Result<InvarianceReport> {
    residual_profile_with(sym, mu, &grid.points(sym.dim()), tol, &ResidualOptions::default())
}

pub fn residual_profile_with(
    sym: &SymbolEvaluator,
    mu: &MeasureSpec,
    points: &[Vec<f64>],
    tol: f64,
    opts: &ResidualOptions,
) -> Result<InvarianceReport> {
    for xi in points {
        check_dims(sym, mu, xi)?;
    }
    let crit = Criterion::new(sym, has_gamma(mu), *opts);
    let values: Vec<ResidualValue> = points.par_iter().map(|xi| eval_at(&crit, mu, xi)).collect();
    Ok(InvarianceReport::assemble(values, tol, sym.provenance()))
}

type Builder = Arc<dyn Fn(&[f64]) -> std::result::Result<MeasureSpec, InvarianceError> + Send + Sync>;

/// Box-bounded parametric family of candidate laws.
#[derive(Clone)]
pub struct ParametricFamily {
    pub name: String,
    pub params: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    build: Builder,
}

impl fmt::Debug for ParametricFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ParametricFamily({}, {:?} in {:?}..{:?})", self.name, self.params, self.lower, self.upper)
    }
}

impl ParametricFamily {
    pub fn new<F>(name: impl Into<String>, params: Vec<String>, lower: Vec<f64>, upper: Vec<f64>, build: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> std::result::Result<MeasureSpec, InvarianceError> + Send + Sync + 'static,
    {
        let p = params.len();
        if p == 0 || p > 6 || lower.len() != p || upper.len() != p || lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(InvarianceError::Family(format!("need 1 to 6 parameters with lower < upper, got {params:?}")));
        }
        Ok(ParametricFamily {
            name: name.into(),
            params,
            lower,
            upper,
            build: Arc::new(build),
        })
    }

    /// Gamma(shape, rate) over a box.
    pub fn gamma(lower: [f64; 2], upper: [f64; 2]) -> Result<Self> {
        Self::new("gamma", vec!["shape".into(), "rate".into()], lower.to_vec(), upper.to_vec(), |p| {
            MeasureSpec::gamma(p[0], p[1])
        })
    }

    /// Dirac at a point of a box in the orthant.
    pub fn dirac(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let names = (1..=lower.len()).map(|i| format!("location{i}")).collect();
        Self::new("dirac", names, lower, upper, |p| MeasureSpec::dirac(p.to_vec()))
    }

    pub fn build(&self, p: &[f64]) -> Result<MeasureSpec> {
        (self.build)(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub restarts: usize,
    pub seed: u64,
    pub max_evaluations: usize,
    pub xtol: f64,
    pub initial: Option<Vec<f64>>,
    pub tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            restarts: 8,
            seed: 0,
            max_evaluations: 1500,
            xtol: 1e-13,
            initial: None,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub family: String,
    pub params: Vec<(String, f64)>,
    pub max_r: f64,
    pub stalled: bool,
    pub evaluations: usize,
    pub report: InvarianceReport,
}

/// Minimize the maximal normalized residual over the family's box by
/// Nelder–Mead, restarting from quasi-random points (and an initial guess).
pub fn fit_parametric(sym: &SymbolEvaluator, family: &ParametricFamily, grid: &GridSpec, cfg: &OptimizerConfig) -> Result<FitResult> {
    grid.validate()?;
    let points = grid.points(sym.dim());
    let probe = family.build(&family.lower.iter().zip(&family.upper).map(|(l, u)| 0.5 * (l + u)).collect::<Vec<_>>())?;
    let crit = Criterion::new(sym, has_gamma(&probe), ResidualOptions::default());
    // coefficients are shared by every candidate
    let coeffs: Vec<Option<Vec<f64>>> = points
        .iter()
        .map(|xi| crit.coefficients(xi).and_then(|r| r.ok()))
        .collect();
    let p = family.params.len();
    let to_params = |u: &[f64]| -> Vec<f64> {
        u.iter()
            .zip(family.lower.iter().zip(&family.upper))
            .map(|(u, (l, h))| l + u.clamp(0.0, 1.0) * (h - l))
            .collect()
    };
    let evaluations = std::cell::Cell::new(0usize);
    let objective = |u: &[f64]| -> f64 {
        evaluations.set(evaluations.get() + 1);
        let Ok(mu) = family.build(&to_params(u)) else {
            return f64::INFINITY;
        };
        let mut worst = 0.0_f64;
        for (xi, c) in points.iter().zip(&coeffs) {
            let r = crit.eval(&mu, xi, c.as_deref());
            if !r.integrable {
                return f64::INFINITY;
            }
            worst = worst.max(r.normalized());
        }
        worst
    };
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(init) = &cfg.initial {
        if init.len() != p {
            return Err(InvarianceError::Family("initial guess has the wrong length".into()));
        }
        starts.push(
            init.iter()
                .zip(family.lower.iter().zip(&family.upper))
                .map(|(x, (l, h))| ((x - l) / (h - l)).clamp(0.0, 1.0))
                .collect(),
        );
    }
    for i in 0..cfg.restarts {
        starts.push(halton_point(cfg.seed.wrapping_mul(1000) + i as u64 + 1, p));
    }
    let mut best_u = starts[0].clone();
    let mut best_f = f64::INFINITY;
    let mut progress = false;
    for s in &starts {
        let f0 = objective(s);
        if f0 == 0.0 {
            best_u = s.clone();
            best_f = 0.0;
            progress = true;
            break;
        }
        let (u, f) = nelder_mead(&objective, s, f0, cfg.max_evaluations, cfg.xtol);
        if f < f0 {
            progress = true;
        }
        if f < best_f {
            best_f = f;
            best_u = u;
        }
    }
    let params = to_params(&best_u);
    let mu = family.build(&params)?;
    let report = residual_profile_with(sym, &mu, &points, cfg.tol, &ResidualOptions::default())?;
    let stalled = best_f > 1e3 * cfg.tol && !progress;
    Ok(FitResult {
        family: family.name.clone(),
        params: family.params.iter().cloned().zip(params).collect(),
        max_r: report.max_r,
        stalled,
        evaluations: evaluations.get(),
        report,
    })
}

/// Nelder–Mead on the unit box (coordinates clamped).
fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, start: &[f64], f0: f64, max_evals: usize, xtol: f64) -> (Vec<f64>, f64) {
    let n = start.len();
    let clamp = |v: Vec<f64>| v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect::<Vec<_>>();
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(start.to_vec(), f0)];
    for i in 0..n {
        let mut v = start.to_vec();
        let step = if v[i] + 0.05 <= 1.0 { 0.05 } else { -0.05 };
        v[i] += step;
        let fv = f(&v);
        simplex.push((v, fv));
    }
    let mut evals = n + 1;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let size = simplex[1..]
            .iter()
            .map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if size < xtol || simplex[0].1 == 0.0 {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|(v, _)| v[j]).sum::<f64>() / n as f64).collect();
        let worst = simplex[n].clone();
        let along = |t: f64| clamp(centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect());
        let xr = along(1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let x = along(0.5);
                let fx = f(&x);
                (x, fx)
            } else {
                let x = along(-0.5);
                let fx = f(&x);
                (x, fx)
            };
            evals += 1;
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = best.iter().zip(&item.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                    let fv = f(&v);
                    *item = (v, fv);
                }
                evals += n;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (u, fu) = simplex.swap_remove(0);
    (u, fu)
}

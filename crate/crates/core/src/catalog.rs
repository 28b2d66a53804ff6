//! Built-in parameterized models with their known invariant laws.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::invariance::MeasureSpec;
use crate::laplace_ode::{build_ode, extract_polynomial, LaplaceOde, OdeError, PolynomialSymbol};
use crate::levy::{JumpLaw, LevyError, LevyMeasure, LevyTriplet};
use crate::model::{CoefficientMap, ItoLevyModel, JumpKernel, ModelError};
use crate::montecarlo::BoundaryPolicy;
use crate::symbol::{symbol_for, symbol_from_characteristics, SymbolError, SymbolEvaluator};
use crate::transforms::{
    bijection_transform, gou_laplace_ode, pushforward_measure_with, squared_symbol, BijectionSpec, PushMap, RealLaw, SymmetricSdeModel,
    TransformError,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CatalogError {
    #[error("unknown catalog entry `{0}` (see `catalog`)")]
    UnknownEntry(String),
    #[error("entry `{entry}` has no parameter `{param}`")]
    UnknownParam { entry: String, param: String },
    #[error("parameter `{param}`: {reason}")]
    InvalidParam { param: String, reason: String },
    #[error("entry `{0}` has no Laplace ODE")]
    NoOde(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Levy(#[from] LevyError),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

pub type Result<T> = std::result::Result<T, CatalogError>;

/// A parameter value: numbers, plus names for discrete choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Text(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Number(v) => write!(f, "{v}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

impl ParamValue {
    /// Parses `k=v` right-hand sides: numbers when they parse, text otherwise.
    pub fn parse(s: &str) -> Self {
        match s.trim().parse::<f64>() {
            Ok(v) => ParamValue::Number(v),
            Err(_) => ParamValue::Text(s.trim().to_string()),
        }
    }
}

pub type Params = BTreeMap<String, ParamValue>;

/// Reduction applied to entries living on `ℝ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformSpec {
    Square,
    Bijection(BijectionName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BijectionName {
    Canonical,
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformSpec::Square => f.write_str("square"),
            TransformSpec::Bijection(BijectionName::Canonical) => f.write_str("bijection:canonical"),
        }
    }
}

/// Golden data about invariant laws on the half-line.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum KnownLaw {
    Invariant { law: MeasureSpec },
    /// Only `δ₀` is invariant.
    OnlyDiracZero,
    /// No invariant probability law (transient dynamics).
    None,
    /// Known in closed form elsewhere but not shipped as a measure.
    Described { note: String },
}

/// How to simulate the one-sided process: a model plus an observable.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub model: ItoLevyModel,
    pub observable: Observable,
    pub policy: BoundaryPolicy,
}

#[derive(Debug, Clone)]
pub enum Observable {
    Identity,
    Square,
    Bijection(BijectionSpec),
}

impl Simulation {
    pub fn observe(&self, x: &[f64]) -> Vec<f64> {
        match &self.observable {
            Observable::Identity => x.to_vec(),
            Observable::Square => x.iter().map(|v| v * v).collect(),
            Observable::Bijection(f) => x.iter().map(|v| (f.f)(*v)).collect(),
        }
    }

    /// A simulation state whose observation is `y`.
    pub fn lift(&self, y: &[f64]) -> Vec<f64> {
        match &self.observable {
            Observable::Identity => y.to_vec(),
            Observable::Square => y.iter().map(|v| v.max(0.0).sqrt()).collect(),
            Observable::Bijection(f) => y.iter().map(|v| (f.inv)(*v)).collect(),
        }
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Affine symbol `λ = F(ξ) + xG(ξ)`.
#[derive(Clone)]
pub struct AffineSymbol {
    pub f: ScalarFn,
    pub g: ScalarFn,
}

impl fmt::Debug for AffineSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("AffineSymbol")
    }
}

/// An instantiated catalog entry.
#[derive(Debug, Clone)]
pub struct CatalogModel {
    pub name: String,
    pub params: Vec<(String, ParamValue)>,
    pub transform: Option<TransformSpec>,
    /// The one-sided model when it is an Itô–Lévy model on `ℝ₊`.
    pub model: Option<ItoLevyModel>,
    pub symmetric: Option<SymmetricSdeModel>,
    pub symbol: SymbolEvaluator,
    /// Analytic `λ = Σ c_k(ξ) x^k`.
    pub polynomial: Option<PolynomialSymbol>,
    pub affine: Option<AffineSymbol>,
    pub law: KnownLaw,
    /// Law of the underlying process on `ℝ` for transformed entries.
    pub real_law: Option<RealLaw>,
    pub simulation: Simulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntryInfo {
    pub name: &'static str,
    pub summary: &'static str,
    pub params: &'static [(&'static str, &'static str)],
}

pub const ENTRIES: &[EntryInfo] = &[
    EntryInfo {
        name: "cir",
        summary: "dX = a(b−X)dt + σ√X dB; invariant Gamma(2ab/σ², 2a/σ²)",
        params: &[("a", "2"), ("b", "1"), ("sigma", "1")],
    },
    EntryInfo {
        name: "verhulst",
        summary: "dX = X(a−X)dt + σX dB",
        params: &[("a", "1"), ("sigma", "1")],
    },
    EntryInfo {
        name: "cbi",
        summary: "λ = F(ξ) + xG(ξ), F = a_Fξ + ∫(1−e^{−uξ})ν_F, G = a_Gξ − σ_G²ξ² + ∫(1−e^{−uξ}−uξ1{u<1})ν_G; ν exponential compound Poisson",
        params: &[
            ("a_f", "1"),
            ("a_g", "-1"),
            ("sigma_g2", "0.5"),
            ("nu_f_rate", "0"),
            ("nu_f_mean", "1"),
            ("nu_g_rate", "0"),
            ("nu_g_mean", "1"),
        ],
    },
    EntryInfo {
        name: "gou",
        summary: "dX = X dL + dZ on ℝ, observed through X²; N_L centred normal compound Poisson, N_Z symmetric stable",
        params: &[
            ("ell_l", "-1"),
            ("sigma_l2", "0"),
            ("sigma_z2", "1"),
            ("nl_rate", "0"),
            ("nl_std", "1"),
            ("nz_alpha", "1"),
            ("nz_scale", "0"),
        ],
    },
    EntryInfo {
        name: "absorbed_bm",
        summary: "Brownian motion absorbed at 0 (characteristics form)",
        params: &[],
    },
    EntryInfo {
        name: "subordinator",
        summary: "dX = φ dL with L a subordinator; kind = stable | gamma | poisson",
        params: &[
            ("kind", "stable"),
            ("phi", "1"),
            ("drift", "0"),
            ("alpha", "0.5"),
            ("scale", "1"),
            ("shape", "1"),
            ("rate", "1"),
            ("jump_mean", "1"),
        ],
    },
    EntryInfo {
        name: "ou",
        summary: "dX = −θX dt + σ dB on ℝ; transform = bijection (default) | square",
        params: &[("theta", "1"), ("sigma", "1"), ("transform", "bijection")],
    },
];

pub fn entry(name: &str) -> Option<&'static EntryInfo> {
    ENTRIES.iter().find(|e| e.name == name)
}

/// Parameter lookup with defaults and unknown-key rejection.
struct Lookup {
    entry: &'static EntryInfo,
    values: BTreeMap<String, ParamValue>,
}

impl Lookup {
    fn new(entry: &'static EntryInfo, given: &Params) -> Result<Self> {
        let mut values: BTreeMap<String, ParamValue> = entry.params.iter().map(|(k, v)| (k.to_string(), ParamValue::parse(v))).collect();
        for (k, v) in given {
            if !values.contains_key(k) {
                return Err(CatalogError::UnknownParam {
                    entry: entry.name.into(),
                    param: k.clone(),
                });
            }
            values.insert(k.clone(), v.clone());
        }
        Ok(Lookup { entry, values })
    }

    fn num(&self, k: &str) -> Result<f64> {
        match &self.values[k] {
            ParamValue::Number(v) if v.is_finite() => Ok(*v),
            other => Err(CatalogError::InvalidParam {
                param: k.into(),
                reason: format!("expected a finite number, got `{other}`"),
            }),
        }
    }

    fn text(&self, k: &str) -> String {
        self.values[k].to_string()
    }

    fn require(&self, k: &str, ok: impl Fn(f64) -> bool, what: &str) -> Result<f64> {
        let v = self.num(k)?;
        if ok(v) {
            Ok(v)
        } else {
            Err(CatalogError::InvalidParam {
                param: k.into(),
                reason: format!("{v} is not {what}"),
            })
        }
    }

    fn params(&self) -> Vec<(String, ParamValue)> {
        self.entry.params.iter().map(|(k, _)| (k.to_string(), self.values[*k].clone())).collect()
    }
}

fn positive(v: f64) -> bool {
    v > 0.0
}

fn nonneg(v: f64) -> bool {
    v >= 0.0
}

/// Instantiate a catalog entry. `transform` overrides the entry's default
/// reduction for the real-valued entries.
pub fn build(name: &str, params: &Params, transform: Option<TransformSpec>) -> Result<CatalogModel> {
    let info = entry(name).ok_or_else(|| CatalogError::UnknownEntry(name.into()))?;
    let p = Lookup::new(info, params)?;
    let real_valued = matches!(name, "gou" | "ou");
    if transform.is_some() && !real_valued {
        return Err(CatalogError::InvalidParam {
            param: "transform".into(),
            reason: format!("`{name}` already lives on the half-line"),
        });
    }
    match name {
        "cir" => cir(&p),
        "verhulst" => verhulst(&p),
        "cbi" => cbi(&p),
        "gou" => gou(&p, transform.unwrap_or(TransformSpec::Square)),
        "absorbed_bm" => absorbed_bm(&p),
        "subordinator" => subordinator(&p),
        "ou" => {
            let t = match transform {
                Some(t) => t,
                None => match p.text("transform").as_str() {
                    "bijection" | "canonical" => TransformSpec::Bijection(BijectionName::Canonical),
                    "square" => TransformSpec::Square,
                    other => {
                        return Err(CatalogError::InvalidParam {
                            param: "transform".into(),
                            reason: format!("`{other}` is not square | bijection"),
                        })
                    }
                },
            };
            ou(&p, t)
        }
        _ => unreachable!("entry table and builder out of sync"),
    }
}

fn half_line(
    p: &Lookup,
    model: ItoLevyModel,
    polynomial: Option<PolynomialSymbol>,
    affine: Option<AffineSymbol>,
    law: KnownLaw,
    policy: BoundaryPolicy,
) -> Result<CatalogModel> {
    let symbol = symbol_for(&model)?;
    Ok(CatalogModel {
        name: p.entry.name.into(),
        params: p.params(),
        transform: None,
        symmetric: None,
        symbol,
        polynomial,
        affine,
        law,
        real_law: None,
        simulation: Simulation {
            model: model.clone(),
            observable: Observable::Identity,
            policy,
        },
        model: Some(model),
    })
}

/// `[t, B]` driver for scalar SDEs `dX = μ(X)dt + s(X)dB`.
fn time_brownian() -> LevyTriplet {
    LevyTriplet::new(vec![1.0, 0.0], DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]), LevyMeasure::Zero).expect("valid driver")
}

fn cir(p: &Lookup) -> Result<CatalogModel> {
    let a = p.require("a", positive, "positive")?;
    let b = p.require("b", positive, "positive")?;
    let s = p.require("sigma", positive, "positive")?;
    let phi = CoefficientMap::native(1, 1, 2, "[a(b−x), σ√x]", move |x, o| {
        o[0] = a * (b - x[0]);
        o[1] = s * x[0].max(0.0).sqrt();
        Ok(())
    });
    let model = ItoLevyModel::sde("cir", 1, time_brownian(), phi, true)?;
    let poly = PolynomialSymbol::from_fn(1, "cir", move |k| vec![a * b * k, -(a * k + 0.5 * s * s * k * k)]);
    let law = KnownLaw::Invariant {
        law: MeasureSpec::gamma(2.0 * a * b / (s * s), 2.0 * a / (s * s)).map_err(|e| CatalogError::InvalidParam {
            param: "a,b,sigma".into(),
            reason: e.to_string(),
        })?,
    };
    half_line(p, model, Some(poly), None, law, BoundaryPolicy::RejectStep)
}

fn verhulst(p: &Lookup) -> Result<CatalogModel> {
    let a = p.require("a", positive, "positive")?;
    let s = p.require("sigma", positive, "positive")?;
    let phi = CoefficientMap::native(1, 1, 2, "[x(a−x), σx]", move |x, o| {
        o[0] = x[0] * (a - x[0]);
        o[1] = s * x[0];
        Ok(())
    });
    let model = ItoLevyModel::sde("verhulst", 1, time_brownian(), phi, true)?;
    let poly = PolynomialSymbol::from_fn(2, "verhulst", move |k| vec![0.0, a * k, -(k + 0.5 * s * s * k * k)]);
    // For σ² < 2a the ODE also has the completely monotone solution
    // (1 + σ²ξ/2)^{1−2a/σ²}.
    let law = if s * s < 2.0 * a {
        KnownLaw::Invariant {
            law: MeasureSpec::gamma(2.0 * a / (s * s) - 1.0, 2.0 / (s * s)).expect("positive parameters"),
        }
    } else {
        KnownLaw::OnlyDiracZero
    };
    half_line(p, model, Some(poly), None, law, BoundaryPolicy::RejectStep)
}

fn exp_jumps(rate: f64, mean: f64) -> Result<LevyMeasure> {
    if rate == 0.0 {
        Ok(LevyMeasure::Zero)
    } else {
        Ok(LevyMeasure::compound_poisson(rate, JumpLaw::Exponential { rate: 1.0 / mean })?)
    }
}

/// `∫(1 − e^{−uξ}) ν(du)` for exponential jumps of mean `m` at rate `r`.
fn exp_laplace(r: f64, m: f64, k: f64) -> f64 {
    r * m * k / (1.0 + m * k)
}

/// `∫_{(0,1)} u ν(du)` for the same measure.
fn exp_cut_mean(r: f64, m: f64) -> f64 {
    let t = 1.0 / m;
    r * m * (1.0 - (-t).exp() * (1.0 + t))
}

fn cbi(p: &Lookup) -> Result<CatalogModel> {
    let a_f = p.require("a_f", nonneg, "nonnegative")?;
    let a_g = p.num("a_g")?;
    let s2 = p.require("sigma_g2", nonneg, "nonnegative")?;
    let (rf, mf) = (p.require("nu_f_rate", nonneg, "nonnegative")?, p.require("nu_f_mean", positive, "positive")?);
    let (rg, mg) = (p.require("nu_g_rate", nonneg, "nonnegative")?, p.require("nu_g_mean", positive, "positive")?);
    let (nu_f, nu_g) = (exp_jumps(rf, mf)?, exp_jumps(rg, mg)?);
    let cut_f = exp_cut_mean(rf, mf);
    let drift = CoefficientMap::native(1, 1, 1, "a_F + ∫uν_F + a_G x", move |x, o| {
        o[0] = a_f + cut_f + a_g * x[0];
        Ok(())
    });
    let diffusion = CoefficientMap::native(1, 1, 1, "2σ_G²x", move |x, o| {
        o[0] = 2.0 * s2 * x[0].max(0.0);
        Ok(())
    });
    let mut terms = Vec::new();
    if !nu_f.is_zero() {
        terms.push((CoefficientMap::constant(1, 1, 1, vec![1.0]), nu_f));
    }
    if !nu_g.is_zero() {
        let w = CoefficientMap::native(1, 1, 1, "x", |x, o| {
            o[0] = x[0].max(0.0);
            Ok(())
        });
        terms.push((w, nu_g));
    }
    let kernel = if terms.is_empty() { JumpKernel::Zero } else { JumpKernel::Affine(terms) };
    let model = ItoLevyModel::characteristics("cbi", 1, drift, diffusion, kernel)?;
    let f = move |k: f64| a_f * k + exp_laplace(rf, mf, k);
    // ∫(1 − e^{−uξ} − uξ1{u<1})ν_G
    let g = move |k: f64| a_g * k - s2 * k * k + exp_laplace(rg, mg, k) - k * exp_cut_mean(rg, mg);
    let poly = PolynomialSymbol::from_fn(1, "cbi", move |k| vec![f(k), g(k)]);
    let law = if a_f == 0.0 && rf == 0.0 {
        KnownLaw::OnlyDiracZero
    } else if rf == 0.0 && rg == 0.0 && a_g < 0.0 && s2 > 0.0 {
        KnownLaw::Invariant {
            law: MeasureSpec::gamma(a_f / s2, -a_g / s2).expect("positive parameters"),
        }
    } else {
        KnownLaw::Described {
            note: "Laplace transform exp(∫₀^ξ F/G), computed by cbi_closed_form".into(),
        }
    };
    let affine = AffineSymbol {
        f: Arc::new(f),
        g: Arc::new(g),
    };
    half_line(p, model, Some(poly), Some(affine), law, BoundaryPolicy::RejectStep)
}

fn absorbed_bm(p: &Lookup) -> Result<CatalogModel> {
    let model = ItoLevyModel::characteristics(
        "absorbed_bm",
        1,
        CoefficientMap::constant(1, 1, 1, vec![0.0]),
        CoefficientMap::native(1, 1, 1, "1{x>0}", |x, o| {
            o[0] = if x[0] > 0.0 { 1.0 } else { 0.0 };
            Ok(())
        }),
        JumpKernel::Zero,
    )?;
    let law = KnownLaw::Invariant {
        law: MeasureSpec::dirac(vec![0.0]).expect("valid Dirac"),
    };
    half_line(p, model, None, None, law, BoundaryPolicy::Absorb)
}

fn subordinator(p: &Lookup) -> Result<CatalogModel> {
    let phi = p.require("phi", nonneg, "nonnegative")?;
    let drift = p.require("drift", nonneg, "nonnegative")?;
    let measure = match p.text("kind").as_str() {
        "stable" => LevyMeasure::stable(p.require("alpha", |a| a > 0.0 && a < 1.0, "in (0,1)")?, p.require("scale", positive, "positive")?, true)?,
        "gamma" => LevyMeasure::gamma(p.require("shape", positive, "positive")?, p.require("rate", positive, "positive")?)?,
        "poisson" => exp_jumps(p.require("rate", positive, "positive")?, p.require("jump_mean", positive, "positive")?)?,
        other => {
            return Err(CatalogError::InvalidParam {
                param: "kind".into(),
                reason: format!("`{other}` is not stable | gamma | poisson"),
            })
        }
    };
    let driver = LevyTriplet::subordinator(drift, measure)?;
    let phi_map = CoefficientMap::constant(1, 1, 1, vec![phi]);
    let model = ItoLevyModel::sde("subordinator", 1, driver.clone(), phi_map, true)?;
    let poly = PolynomialSymbol::from_fn(0, "subordinator", move |k| vec![driver.laplace_exponent(phi * k).unwrap_or(f64::NAN)]);
    let law = if phi == 0.0 { KnownLaw::Described { note: "constant process: every law is invariant".into() } } else { KnownLaw::None };
    half_line(p, model, Some(poly), None, law, BoundaryPolicy::RejectStep)
}

fn real_entry(
    p: &Lookup,
    symmetric: SymmetricSdeModel,
    transform: TransformSpec,
    real_law: Option<RealLaw>,
    described: Option<String>,
) -> Result<CatalogModel> {
    let real = symmetric.to_model(p.entry.name)?;
    let (model, symbol, observable, push) = match transform {
        TransformSpec::Square => (None, squared_symbol(&symmetric), Observable::Square, PushMap::Square),
        TransformSpec::Bijection(BijectionName::Canonical) => {
            let f = BijectionSpec::canonical();
            let m = bijection_transform(&real, &f)?;
            let s = symbol_from_characteristics(&m)?;
            (Some(m), s, Observable::Bijection(f.clone()), PushMap::Bijection(f))
        }
    };
    let law = match (&real_law, described) {
        (Some(rl), _) => KnownLaw::Invariant {
            law: pushforward_measure_with(rl, &push, 4096)?,
        },
        (None, Some(note)) => KnownLaw::Described { note },
        (None, None) => KnownLaw::Described {
            note: "no closed form shipped".into(),
        },
    };
    Ok(CatalogModel {
        name: p.entry.name.into(),
        params: p.params(),
        transform: Some(transform),
        model,
        symmetric: Some(symmetric),
        symbol,
        polynomial: None,
        affine: None,
        law,
        real_law,
        simulation: Simulation {
            model: real,
            observable,
            policy: BoundaryPolicy::RejectStep,
        },
    })
}

fn gou(p: &Lookup, transform: TransformSpec) -> Result<CatalogModel> {
    let ell = p.num("ell_l")?;
    let sl2 = p.require("sigma_l2", nonneg, "nonnegative")?;
    let sz2 = p.require("sigma_z2", nonneg, "nonnegative")?;
    let (nl_rate, nl_std) = (p.require("nl_rate", nonneg, "nonnegative")?, p.require("nl_std", positive, "positive")?);
    let (nz_alpha, nz_scale) = (p.require("nz_alpha", |a| a > 0.0 && a < 2.0, "in (0,2)")?, p.require("nz_scale", nonneg, "nonnegative")?);
    let nl = if nl_rate > 0.0 {
        LevyMeasure::compound_poisson(nl_rate, JumpLaw::Normal { mean: 0.0, std: nl_std })?
    } else {
        LevyMeasure::Zero
    };
    let nz = if nz_scale > 0.0 { LevyMeasure::stable(nz_alpha, nz_scale, false)? } else { LevyMeasure::Zero };
    let jumps = !nl.is_zero() || !nz.is_zero();
    let driver_l = LevyTriplet::new(vec![ell], DMatrix::from_element(1, 1, sl2), nl)?;
    let driver_z = LevyTriplet::new(vec![0.0], DMatrix::from_element(1, 1, sz2), nz)?;
    let phi = CoefficientMap::native(1, 1, 1, "x", |x, o| {
        o[0] = x[0];
        Ok(())
    });
    let symmetric = SymmetricSdeModel::new(driver_l, driver_z, phi)?;
    let (real_law, note) = if jumps {
        (None, None)
    } else if sz2 == 0.0 && ell < 0.0 {
        (Some(RealLaw::Dirac { location: 0.0 }), None)
    } else if sl2 == 0.0 && ell < 0.0 {
        let v = sz2 / (-2.0 * ell);
        (Some(RealLaw::Normal { mean: 0.0, std: v.sqrt() }), None)
    } else if sl2 > 0.0 && ell < 0.5 * sl2 {
        (None, Some(format!("density ∝ (σ_Z² + σ_L²x²)^{{{}}} on ℝ", ell / sl2 - 1.0)))
    } else {
        (None, Some("no invariant probability law".to_string()))
    };
    let mut m = real_entry(p, symmetric, transform, real_law, note)?;
    if !jumps && (sl2 > 0.0 && ell >= 0.5 * sl2 || sl2 == 0.0 && ell >= 0.0 && sz2 > 0.0) {
        m.law = KnownLaw::None;
    }
    Ok(m)
}

fn ou(p: &Lookup, transform: TransformSpec) -> Result<CatalogModel> {
    let theta = p.require("theta", positive, "positive")?;
    let sigma = p.require("sigma", positive, "positive")?;
    let symmetric = SymmetricSdeModel::gou_deterministic(-theta, sigma)?;
    let law = RealLaw::Normal {
        mean: 0.0,
        std: sigma / (2.0 * theta).sqrt(),
    };
    real_entry(p, symmetric, transform, Some(law), None)
}

impl CatalogModel {
    /// Laplace ODE `Σ a_k ψ^{(k)} = 0` for the invariant law.
    pub fn laplace_ode(&self) -> Result<LaplaceOde> {
        if let Some(poly) = &self.polynomial {
            return Ok(build_ode(poly));
        }
        if let (Some(sym), Some(TransformSpec::Square)) = (&self.symmetric, self.transform) {
            return Ok(gou_laplace_ode(sym)?);
        }
        match extract_polynomial(&self.symbol, 4) {
            Ok(poly) => Ok(build_ode(&poly)),
            Err(OdeError::NotPolynomial { .. }) => Err(CatalogError::NoOde(self.name.clone())),
            Err(e) => Err(e.into()),
        }
    }

    pub fn invariant_law(&self) -> Option<&MeasureSpec> {
        match &self.law {
            KnownLaw::Invariant { law } => Some(law),
            _ => None,
        }
    }
}

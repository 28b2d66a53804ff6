//! Reductions of models on `ℝ` to the half-line: the squared process of a
//! symmetric SDE and the transform by a C² bijection `ℝ → (0,∞)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::invariance::{InvarianceError, MeasureSpec};
use crate::laplace_ode::LaplaceOde;
use crate::levy::{JumpLaw, JumpMap, LevyError, LevyMeasure, LevyTriplet};
use crate::model::{CoefficientMap, ItoLevyModel, JumpKernel, ModelError, ModelForm};
use crate::numeric::{exp_remainder, logspace, one_minus_exp_neg};
use crate::symbol::{induced_characteristics, Provenance, SymbolError, SymbolEvaluator};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TransformError {
    #[error("driver Z is not symmetric: {0}")]
    NotSymmetric(String),
    #[error("Φ is not odd: Φ(−x) ≠ −Φ(x) at x = {x}")]
    NotOdd { x: f64 },
    #[error("GOU form needs Φ(x) = x (mismatch at x = {x})")]
    NotGou { x: f64 },
    #[error("transformed characteristics are not polynomially bounded: {0}")]
    UnboundedTransformedCharacteristics(String),
    #[error("invalid bijection: {0}")]
    InvalidBijection(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Levy(#[from] LevyError),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error(transparent)]
    Measure(#[from] InvarianceError),
}

pub type Result<T> = std::result::Result<T, TransformError>;

/// `dX = Φ(X−)dL + dZ` on `ℝ` with `Z` symmetric and `Φ` odd.
#[derive(Debug, Clone)]
pub struct SymmetricSdeModel {
    driver_l: LevyTriplet,
    driver_z: LevyTriplet,
    phi: CoefficientMap,
}

fn check_symmetric(z: &LevyTriplet) -> Result<()> {
    if z.dim() != 1 {
        return Err(TransformError::NotSymmetric("Z must be one-dimensional".into()));
    }
    if z.drift()[0] != 0.0 {
        return Err(TransformError::NotSymmetric(format!("ℓ_Z = {} ≠ 0", z.drift()[0])));
    }
    match z.measure() {
        LevyMeasure::Zero => Ok(()),
        LevyMeasure::Atoms(atoms) => {
            for (y, m) in atoms {
                let mirrored = atoms.iter().any(|(y2, m2)| (y2[0] + y[0]).abs() <= 1e-14 * y[0].abs() && (m2 - m).abs() <= 1e-14 * m);
                if !mirrored {
                    return Err(TransformError::NotSymmetric(format!("atom at {} has no mirror of equal mass", y[0])));
                }
            }
            Ok(())
        }
        LevyMeasure::Stable { one_sided: false, .. } => Ok(()),
        LevyMeasure::CompoundPoisson { law, .. } => match law {
            JumpLaw::Normal { mean, .. } if *mean == 0.0 => Ok(()),
            JumpLaw::Uniform { lo, hi } if *lo == -*hi => Ok(()),
            other => Err(TransformError::NotSymmetric(format!("jump law {other:?}"))),
        },
        // asserted by the caller
        LevyMeasure::Density(_) => Ok(()),
        other => Err(TransformError::NotSymmetric(format!("measure {other:?}"))),
    }
}

impl SymmetricSdeModel {
    pub fn new(driver_l: LevyTriplet, driver_z: LevyTriplet, phi: CoefficientMap) -> Result<Self> {
        if driver_l.dim() != 1 || phi.d_in() != 1 || phi.shape() != (1, 1) {
            return Err(TransformError::Model(ModelError::Dimension("L and Φ must be scalar".into())));
        }
        check_symmetric(&driver_z)?;
        for x in logspace(1e-3, 1e3, 25) {
            let (p, m) = (phi.eval_scalar(&[x])?, phi.eval_scalar(&[-x])?);
            if (p + m).abs() > 1e-12 * p.abs().max(1.0) {
                return Err(TransformError::NotOdd { x });
            }
        }
        Ok(SymmetricSdeModel { driver_l, driver_z, phi })
    }

    /// Deterministic `L_t = ℓ_L t`, Brownian `Z` with variance `σ_Z²`, `Φ(x) = x`.
    pub fn gou_deterministic(ell_l: f64, sigma_z: f64) -> Result<Self> {
        Self::new(
            LevyTriplet::pure_drift(vec![ell_l]),
            LevyTriplet::brownian(1, sigma_z),
            CoefficientMap::native(1, 1, 1, "x", |x, o| {
                o[0] = x[0];
                Ok(())
            }),
        )
    }

    pub fn driver_l(&self) -> &LevyTriplet {
        &self.driver_l
    }

    pub fn driver_z(&self) -> &LevyTriplet {
        &self.driver_z
    }

    pub fn phi(&self) -> &CoefficientMap {
        &self.phi
    }

    /// The SDE on `ℝ` driven by `(L, Z)` with `Φ̂(x) = [Φ(x), 1]`, for simulation.
    pub fn to_model(&self, name: &str) -> Result<ItoLevyModel> {
        let ql = self.driver_l.covariance()[(0, 0)];
        let qz = self.driver_z.covariance()[(0, 0)];
        let measure = match (self.driver_l.measure().is_zero(), self.driver_z.measure().is_zero()) {
            (true, true) => LevyMeasure::Zero,
            _ => LevyMeasure::Independent(vec![(1, self.driver_l.measure().clone()), (1, self.driver_z.measure().clone())]),
        };
        let driver = LevyTriplet::new(
            vec![self.driver_l.drift()[0], 0.0],
            DMatrix::from_row_slice(2, 2, &[ql, 0.0, 0.0, qz]),
            measure,
        )?;
        let phi = self.phi.clone();
        let map = CoefficientMap::native(1, 1, 2, "[Φ(x), 1]", move |x, o| {
            o[0] = phi.eval_scalar(x).map_err(|e| e.to_string())?;
            o[1] = 1.0;
            Ok(())
        });
        Ok(ItoLevyModel::sde(name, 1, driver, map, false)?)
    }
}

/// `∫(1 − e^{−u²c}) N(du)`, the jump part of the Laplace exponent of `[L,L]`.
pub fn quadratic_variation_jumps(m: &LevyMeasure, c: f64) -> std::result::Result<f64, LevyError> {
    if c == 0.0 {
        return Ok(0.0);
    }
    match m {
        LevyMeasure::Zero => Ok(0.0),
        LevyMeasure::Stable {
            alpha,
            scale,
            one_sided: false,
        } => Ok(scale * (2.0 / alpha) * gamma(1.0 - alpha / 2.0) * c.powf(alpha / 2.0)),
        LevyMeasure::Atoms(atoms) => Ok(atoms.iter().map(|(y, w)| w * one_minus_exp_neg(y[0] * y[0] * c)).sum()),
        other => other.integrate_1d(&|u| one_minus_exp_neg(u * u * c), &[]),
    }
}

/// Laplace symbol of `Y = X²`:
/// `2ℓ_L√yΦ(√y)ξ − 2σ_L²yΦ²ξ² − 2σ_Z²yξ² + λ_{[L,L]}(Φ²ξ) + λ_{[Z,Z]}(ξ)` with
/// `λ_{[L,L]}(c) = σ_L²c + ∫(1 − e^{−u²c})N_L(du)`.
pub fn squared_symbol(model: &SymmetricSdeModel) -> SymbolEvaluator {
    let ell = model.driver_l.drift()[0];
    let ql = model.driver_l.covariance()[(0, 0)];
    let qz = model.driver_z.covariance()[(0, 0)];
    let nl = model.driver_l.measure().clone();
    let nz = model.driver_z.measure().clone();
    let phi = model.phi.clone();
    let closed = [&nl, &nz].iter().all(|m| matches!(m, LevyMeasure::Zero | LevyMeasure::Atoms(_) | LevyMeasure::Stable { .. }));
    let prov = if closed { Provenance::ClosedForm } else { Provenance::Quadrature };
    SymbolEvaluator::new(1, prov, "squared", move |y, xi| {
        let (y, k) = (y[0].max(0.0), xi[0]);
        let r = y.sqrt();
        let p = phi.eval_scalar(&[r])?;
        let p2 = p * p;
        let attach = |source| SymbolError::Levy {
            x: vec![y],
            xi: vec![k],
            source,
        };
        let jl = quadratic_variation_jumps(&nl, p2 * k).map_err(attach)?;
        let jz = quadratic_variation_jumps(&nz, k).map_err(attach)?;
        Ok(2.0 * ell * r * p * k - 2.0 * ql * y * p2 * k * k - 2.0 * qz * y * k * k + ql * p2 * k + jl + qz * k + jz)
    })
}

/// ODE for `λ₂(ξ) = ∫e^{−ξx²}μ(dx)` when `Φ(x) = x`: the squared symbol is
/// polynomial in `y` with `c₀ = σ_Z²ξ + J_Z(ξ)`, `c₁ = (2ℓ_L + σ_L²)ξ − 2σ_Z²ξ²`,
/// `c₂ = −2σ_L²ξ²`.
pub fn gou_laplace_ode(model: &SymmetricSdeModel) -> Result<LaplaceOde> {
    for x in [0.3, 1.0, 7.0] {
        if (model.phi.eval_scalar(&[x])? - x).abs() > 1e-12 * x {
            return Err(TransformError::NotGou { x });
        }
    }
    if !model.driver_l.measure().is_zero() {
        return Err(TransformError::Unsupported("jumps of L make the squared symbol non-polynomial in y".into()));
    }
    let ell = model.driver_l.drift()[0];
    let ql = model.driver_l.covariance()[(0, 0)];
    let qz = model.driver_z.covariance()[(0, 0)];
    let nz = model.driver_z.measure().clone();
    let order = if ql > 0.0 { 2 } else { 1 };
    Ok(LaplaceOde::try_from_coefficients(order, "gou", move |k| {
        let jz = quadratic_variation_jumps(&nz, k).map_err(|source| SymbolError::Levy {
            x: vec![],
            xi: vec![k],
            source,
        })?;
        let c0 = qz * k + jz;
        let c1 = (2.0 * ell + ql) * k - 2.0 * qz * k * k;
        let c2 = -2.0 * ql * k * k;
        let mut a = vec![c0, -c1];
        if order == 2 {
            a.push(c2);
        }
        Ok(a)
    }))
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type RemainderFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// C² bijection `f: ℝ → (0,∞)` with derivatives and inverse.
#[derive(Clone)]
pub struct BijectionSpec {
    pub label: String,
    pub f: ScalarFn,
    pub df: ScalarFn,
    pub d2f: ScalarFn,
    pub inv: ScalarFn,
    /// `f(x+y) − f(x) − f'(x)y`, evaluated without cancellation.
    pub remainder: RemainderFn,
}

impl fmt::Debug for BijectionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BijectionSpec({})", self.label)
    }
}

impl BijectionSpec {
    /// `f(x) = e^x` on `(−∞,0]`, `½x² + x + 1` on `(0,∞)`.
    pub fn canonical() -> Self {
        let f = |x: f64| if x <= 0.0 { x.exp() } else { 0.5 * x * x + x + 1.0 };
        let df = |x: f64| if x <= 0.0 { x.exp() } else { x + 1.0 };
        BijectionSpec {
            label: "canonical".into(),
            f: Arc::new(f),
            df: Arc::new(df),
            d2f: Arc::new(|x| if x <= 0.0 { x.exp() } else { 1.0 }),
            inv: Arc::new(|w| if w <= 1.0 { w.ln() } else { -1.0 + (2.0 * w - 1.0).sqrt() }),
            remainder: Arc::new(move |x, y| {
                let z = x + y;
                if x <= 0.0 && z <= 0.0 {
                    x.exp() * exp_remainder(-y)
                } else if x > 0.0 && z > 0.0 {
                    0.5 * y * y
                } else {
                    f(z) - f(x) - df(x) * y
                }
            }),
        }
    }

    /// Bijection from callables; the remainder is the plain difference.
    pub fn new(label: impl Into<String>, f: ScalarFn, df: ScalarFn, d2f: ScalarFn, inv: ScalarFn) -> Result<Self> {
        let (ff, dd) = (f.clone(), df.clone());
        let spec = BijectionSpec {
            label: label.into(),
            f,
            df,
            d2f,
            inv,
            remainder: Arc::new(move |x, y| ff(x + y) - ff(x) - dd(x) * y),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `f' > 0` and `f(f⁻¹(w)) = w` on sample grids.
    pub fn validate(&self) -> Result<()> {
        let xs: Vec<f64> = (-200..=200).map(|i| i as f64 * 0.1).collect();
        if let Some(x) = xs.iter().find(|x| !((self.df)(**x) > 0.0)) {
            return Err(TransformError::InvalidBijection(format!("f'({x}) ≤ 0")));
        }
        for w in logspace(1e-6, 1e6, 121) {
            let back = (self.f)((self.inv)(w));
            if (back - w).abs() > 1e-12 * w {
                return Err(TransformError::InvalidBijection(format!("f(f⁻¹({w})) = {back}")));
            }
        }
        Ok(())
    }
}

fn native_err(e: impl ToString) -> String {
    e.to_string()
}

/// Characteristics of `X̃ = f(X)` for a one-dimensional model on `ℝ`:
/// `ℓ̃ = f'ℓ + ½f''Q + ∫(χ̃(f(x+y)−f(x)) − f'(x)χ(y))N(x,dy)`, `Q̃ = f'²Q`,
/// `Ñ(x,·)` the image of `N(x,·)` under `y ↦ f(x+y) − f(x)`, all at `x = f⁻¹(x̃)`.
/// Both truncations are `y ↦ y·1{|y|<1}`.
pub fn bijection_transform(model: &ItoLevyModel, f: &BijectionSpec) -> Result<ItoLevyModel> {
    if model.dim() != 1 {
        return Err(TransformError::Unsupported("bijection transforms are one-dimensional".into()));
    }
    let chars = match model.form() {
        ModelForm::Characteristics { .. } => model.clone(),
        ModelForm::Sde { .. } => induced_characteristics(model)?,
    };
    let ModelForm::Characteristics { drift, diffusion, kernel } = chars.form().clone() else {
        unreachable!("induced model is in characteristics form")
    };
    let kernel_terms = {
        let kernel = kernel.clone();
        move |x: f64| -> std::result::Result<Vec<(f64, LevyMeasure)>, ModelError> {
            Ok(match &kernel {
                JumpKernel::Zero => vec![],
                JumpKernel::Affine(terms) => terms
                    .iter()
                    .map(|(w, m)| Ok((w.eval_scalar(&[x])?, m.clone())))
                    .collect::<std::result::Result<_, ModelError>>()?,
                JumpKernel::Dynamic { build, .. } => build(&[x])?,
            })
        }
    };
    let has_jumps = !kernel.is_zero();
    let drift_map = {
        let (fs, drift, diffusion, terms) = (f.clone(), drift.clone(), diffusion.clone(), kernel_terms.clone());
        CoefficientMap::native(1, 1, 1, format!("{}∘drift", f.label), move |w, o| {
            if w[0] <= 0.0 {
                o[0] = 0.0;
                return Ok(());
            }
            let x = (fs.inv)(w[0]);
            let l = drift.eval_scalar(&[x]).map_err(native_err)?;
            let q = diffusion.eval_scalar(&[x]).map_err(native_err)?;
            let d1 = (fs.df)(x);
            let mut v = d1 * l + 0.5 * (fs.d2f)(x) * q;
            if has_jumps {
                let fx = (fs.f)(x);
                let mut breaks = vec![(fs.inv)(fx + 1.0) - x];
                if fx > 1.0 {
                    breaks.push((fs.inv)(fx - 1.0) - x);
                }
                let g = |y: f64| {
                    let d = (fs.f)(x + y) - fx;
                    match (y.abs() < 1.0, d.abs() < 1.0) {
                        (true, true) => (fs.remainder)(x, y),
                        (true, false) => -d1 * y,
                        (false, true) => d,
                        (false, false) => 0.0,
                    }
                };
                for (wt, m) in terms(x).map_err(native_err)? {
                    if wt > 0.0 {
                        v += wt * m.integrate_1d(&g, &breaks).map_err(native_err)?;
                    }
                }
            }
            o[0] = v;
            Ok(())
        })
    };
    let diffusion_map = {
        let (fs, diffusion) = (f.clone(), diffusion.clone());
        CoefficientMap::native(1, 1, 1, format!("{}∘diffusion", f.label), move |w, o| {
            if w[0] <= 0.0 {
                o[0] = 0.0;
                return Ok(());
            }
            let x = (fs.inv)(w[0]);
            let d1 = (fs.df)(x);
            o[0] = d1 * d1 * diffusion.eval_scalar(&[x]).map_err(native_err)?;
            Ok(())
        })
    };
    let new_kernel = if has_jumps {
        let fs = f.clone();
        JumpKernel::Dynamic {
            build: Arc::new(move |w| {
                if w[0] <= 0.0 {
                    return Ok(vec![]);
                }
                let x = (fs.inv)(w[0]);
                let fx = (fs.f)(x);
                let mut breakpoints = vec![(fs.inv)(fx + 1.0) - x];
                if fx > 1.0 {
                    breakpoints.push((fs.inv)(fx - 1.0) - x);
                }
                let fm = fs.f.clone();
                let map = JumpMap {
                    map: Arc::new(move |y| fm(x + y) - fx),
                    breakpoints,
                };
                Ok(kernel_terms(x)?
                    .into_iter()
                    .map(|(wt, m)| {
                        (
                            wt,
                            LevyMeasure::Mapped {
                                base: Arc::new(m),
                                map: map.clone(),
                            },
                        )
                    })
                    .collect())
            }),
            closed_form: false,
        }
    } else {
        JumpKernel::Zero
    };
    let out = ItoLevyModel::characteristics(format!("{}({})", f.label, model.name()), 1, drift_map, diffusion_map, new_kernel)?;
    out.check_polynomial_bound(2)
        .map_err(|e| TransformError::UnboundedTransformedCharacteristics(e.to_string()))?;
    Ok(out)
}

/// One-dimensional law on `ℝ`, the input side of a pushforward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RealLaw {
    Normal { mean: f64, std: f64 },
    Dirac { location: f64 },
    Sample { points: Vec<f64> },
    /// Piecewise-linear density on increasing nodes.
    GridDensity { nodes: Vec<f64>, values: Vec<f64> },
    Gamma { shape: f64, rate: f64 },
}

impl RealLaw {
    fn density(&self, x: f64) -> Option<f64> {
        match self {
            RealLaw::Normal { mean, std } => {
                let z = (x - mean) / std;
                Some((-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt()))
            }
            RealLaw::Gamma { shape, rate } => Some(if x <= 0.0 { 0.0 } else { MeasureSpec::Gamma { shape: *shape, rate: *rate }.density(x)? }),
            RealLaw::GridDensity { nodes, values } => {
                if x < nodes[0] || x > nodes[nodes.len() - 1] {
                    return Some(0.0);
                }
                let i = nodes.partition_point(|n| *n <= x).clamp(1, nodes.len() - 1);
                let t = (x - nodes[i - 1]) / (nodes[i] - nodes[i - 1]);
                Some(values[i - 1] * (1.0 - t) + values[i] * t)
            }
            _ => None,
        }
    }

    /// Interval carrying all but a negligible part of the mass.
    fn support(&self) -> (f64, f64) {
        match self {
            RealLaw::Normal { mean, std } => (mean - 12.0 * std, mean + 12.0 * std),
            RealLaw::Gamma { shape, rate } => (0.0, (shape + 40.0 * shape.sqrt() + 40.0) / rate),
            RealLaw::GridDensity { nodes, .. } => (nodes[0], nodes[nodes.len() - 1]),
            RealLaw::Dirac { location } => (*location, *location),
            RealLaw::Sample { points } => (
                points.iter().copied().fold(f64::INFINITY, f64::min),
                points.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ),
        }
    }
}

/// Maps into `(0,∞)` used for pushforwards.
#[derive(Debug, Clone)]
pub enum PushMap {
    Square,
    Bijection(BijectionSpec),
}

pub const PUSHFORWARD_NODES: usize = 2048;

/// Image law under the map. Gaussian laws centred at 0 map to Gamma(½, 1/(2σ²))
/// under the square; other densities become grid densities on a log grid
/// (`[1e−6, 1e3]` for the square, widened if the support needs it).
pub fn pushforward_measure(mu: &RealLaw, map: &PushMap) -> Result<MeasureSpec> {
    pushforward_measure_with(mu, map, PUSHFORWARD_NODES)
}

pub fn pushforward_measure_with(mu: &RealLaw, map: &PushMap, nodes: usize) -> Result<MeasureSpec> {
    let image = |x: f64| match map {
        PushMap::Square => x * x,
        PushMap::Bijection(f) => (f.f)(x),
    };
    match mu {
        RealLaw::Dirac { location } => return Ok(MeasureSpec::dirac(vec![image(*location)])?),
        RealLaw::Sample { points } => return Ok(MeasureSpec::sample(points.iter().map(|p| vec![image(*p)]).collect())?),
        RealLaw::Normal { mean, std } if *mean == 0.0 && matches!(map, PushMap::Square) => {
            return Ok(MeasureSpec::gamma(0.5, 1.0 / (2.0 * std * std))?);
        }
        _ => {}
    }
    let (lo, hi) = mu.support();
    let (grid, dens): (Vec<f64>, Box<dyn Fn(f64) -> f64>) = match map {
        PushMap::Square => {
            let top = lo.abs().max(hi.abs());
            let grid = logspace(1e-6, (top * top).max(1e3), nodes);
            (
                grid,
                Box::new(|y: f64| {
                    let r = y.sqrt();
                    (mu.density(r).unwrap_or(0.0) + mu.density(-r).unwrap_or(0.0)) / (2.0 * r)
                }),
            )
        }
        PushMap::Bijection(f) => {
            let wlo = (f.f)(lo).max(1e-300);
            let whi = (f.f)(hi);
            let grid = logspace(wlo, whi, nodes);
            (
                grid,
                Box::new(move |w: f64| {
                    let x = (f.inv)(w);
                    mu.density(x).unwrap_or(0.0) / (f.df)(x)
                }),
            )
        }
    };
    let values: Vec<f64> = grid.iter().map(|y| dens(*y)).collect();
    Ok(MeasureSpec::grid_density_normalized(grid, values)?)
}

/// Image of a law on `(0,∞)` under `f⁻¹`.
pub fn pullback_measure(mu: &MeasureSpec, f: &BijectionSpec, nodes: usize) -> Result<RealLaw> {
    match mu {
        MeasureSpec::Dirac { location } if location.len() == 1 => Ok(RealLaw::Dirac {
            location: (f.inv)(location[0]),
        }),
        MeasureSpec::Sample { points } => Ok(RealLaw::Sample {
            points: points.iter().map(|p| (f.inv)(p[0])).collect(),
        }),
        MeasureSpec::Gamma { .. } | MeasureSpec::GridDensity { .. } => {
            let (wlo, whi) = match mu {
                MeasureSpec::Gamma { shape, rate } => (1e-12, (shape + 40.0 * shape.sqrt() + 40.0) / rate),
                MeasureSpec::GridDensity { nodes, .. } => (nodes[0].max(1e-300), nodes[nodes.len() - 1]),
                _ => unreachable!(),
            };
            let xs = crate::numeric::linspace((f.inv)(wlo), (f.inv)(whi), nodes);
            let values: Vec<f64> = xs.iter().map(|x| mu.density((f.f)(*x)).unwrap_or(0.0) * (f.df)(*x)).collect();
            let mass: f64 = xs.windows(2).zip(values.windows(2)).map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1])).sum();
            Ok(RealLaw::GridDensity {
                nodes: xs,
                values: values.into_iter().map(|v| v / mass).collect(),
            })
        }
        other => Err(TransformError::Unsupported(format!("pullback of {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::invariance::{residual_profile, GridSpec, Verdict, DEFAULT_TOL};
    use crate::laplace_ode::{solve_ode, BoundaryData};
    use crate::symbol::symbol_from_characteristics;

    #[test]
    fn deterministic_gou_squared_symbol() {
        let m = SymmetricSdeModel::gou_deterministic(-1.5, 0.7).unwrap();
        let s = squared_symbol(&m);
        for (y, k) in [(0.3, 0.5), (2.0, 3.0), (0.0, 1.0)] {
            let want = 2.0 * -1.5 * y * k - 2.0 * 0.49 * y * k * k + 0.49 * k;
            assert!((s.eval1(y, k).unwrap() - want).abs() < 1e-13);
        }
        assert_eq!(s.eval1(2.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn stable_quadratic_variation() {
        // density ½|u|^{−2}: ∫(1−e^{−u²ξ})N(du) = Γ(½)√ξ
        let n = LevyMeasure::stable(1.0, 0.5, false).unwrap();
        for xi in [0.1, 1.0, 9.0] {
            let closed = quadratic_variation_jumps(&n, xi).unwrap();
            assert!((closed - gamma(0.5) * xi.sqrt()).abs() < 1e-12);
        }
        // closed form vs direct quadrature for another index
        let n = LevyMeasure::stable(1.4, 0.8, false).unwrap();
        let closed = quadratic_variation_jumps(&n, 2.0).unwrap();
        let quad = n.integrate_1d(&|u| one_minus_exp_neg(2.0 * u * u), &[]).unwrap();
        assert!((closed - quad).abs() < 1e-9 * closed);
    }

    #[test]
    fn symmetry_checks() {
        let l = LevyTriplet::pure_drift(vec![-1.0]);
        let id = || CoefficientMap::native(1, 1, 1, "x", |x, o| {
            o[0] = x[0];
            Ok(())
        });
        let one_sided = LevyTriplet::new(vec![0.0], DMatrix::zeros(1, 1), LevyMeasure::atoms(vec![(vec![0.5], 1.0)]).unwrap()).unwrap();
        assert!(matches!(SymmetricSdeModel::new(l.clone(), one_sided, id()), Err(TransformError::NotSymmetric(_))));
        let paired = LevyTriplet::new(
            vec![0.0],
            DMatrix::zeros(1, 1),
            LevyMeasure::atoms(vec![(vec![0.5], 1.0), (vec![-0.5], 1.0)]).unwrap(),
        )
        .unwrap();
        assert!(SymmetricSdeModel::new(l.clone(), paired, id()).is_ok());
        let even = CoefficientMap::native(1, 1, 1, "x^2", |x, o| {
            o[0] = x[0] * x[0];
            Ok(())
        });
        assert!(matches!(
            SymmetricSdeModel::new(l, LevyTriplet::brownian(1, 1.0), even),
            Err(TransformError::NotOdd { .. })
        ));
    }

    #[test]
    fn gou_ode_solutions() {
        let grid = logspace(1e-2, 1e2, 40);
        let cases: [(f64, f64, fn(f64) -> f64); 3] = [
            (-1.0, 1.0, |k| (1.0 + k).powf(-0.5)),
            (-2.0, 1.0, |k| (1.0 + k / 2.0).powf(-0.5)),
            (-1.0, 0.0, |_| 1.0),
        ];
        for (ell, sz, want) in cases {
            let ode = gou_laplace_ode(&SymmetricSdeModel::gou_deterministic(ell, sz).unwrap()).unwrap();
            let sol = solve_ode(&ode, &BoundaryData::normalized(None), &grid).unwrap();
            for (k, p) in grid.iter().zip(&sol.psi) {
                assert!((p - want(*k)).abs() < 1e-8, "ℓ={ell} σ={sz} ξ={k}: {p}");
            }
        }
    }

    #[test]
    fn gamma_half_is_invariant_for_squared_ou() {
        let s = squared_symbol(&SymmetricSdeModel::gou_deterministic(-1.0, 1.0).unwrap());
        let r = residual_profile(&s, &MeasureSpec::gamma(0.5, 1.0).unwrap(), &GridSpec::default(), DEFAULT_TOL).unwrap();
        assert_eq!(r.verdict, Verdict::Invariant);
        assert!(r.max_r < 1e-10);
    }

    #[test]
    fn canonical_bijection_seam() {
        let f = BijectionSpec::canonical();
        f.validate().unwrap();
        let h = 1e-300;
        assert!(((f.df)(-h) - 1.0).abs() < 1e-12 && ((f.df)(h) - 1.0).abs() < 1e-12);
        assert!(((f.d2f)(-h) - 1.0).abs() < 1e-12 && ((f.d2f)(h) - 1.0).abs() < 1e-12);
        assert!(((f.f)(0.0) - 1.0).abs() < 1e-15);
        for (x, y) in [(-1.0, 1e-9), (2.0, -1e-7), (-0.5, 0.3), (0.1, -0.4)] {
            let direct = (f.f)(x + y) - (f.f)(x) - (f.df)(x) * y;
            let r = (f.remainder)(x, y);
            assert!((r - direct).abs() <= 1e-15 + 1e-9 * r.abs(), "{x} {y}");
        }
        // small-y expansion ½f''(x)y²
        let r = (f.remainder)(-1.0, 1e-6);
        assert!((r / (0.5 * (-1.0f64).exp() * 1e-12) - 1.0).abs() < 1e-5);
    }

    fn bm_char() -> ItoLevyModel {
        ItoLevyModel::characteristics(
            "bm",
            1,
            CoefficientMap::constant(1, 1, 1, vec![0.0]),
            CoefficientMap::constant(1, 1, 1, vec![1.0]),
            JumpKernel::Zero,
        )
        .unwrap()
    }

    #[test]
    fn transformed_brownian_motion() {
        let f = BijectionSpec::canonical();
        let t = bijection_transform(&bm_char(), &f).unwrap();
        let ModelForm::Characteristics { drift, diffusion, .. } = t.form() else { panic!() };
        assert!((diffusion.eval_scalar(&[1.0]).unwrap() - 1.0).abs() < 1e-15);
        // drift-free, jump-free: ℓ̃ = ½f''Q
        for w in [0.2, 1.0, 3.0] {
            let x = (f.inv)(w);
            assert!((drift.eval_scalar(&[w]).unwrap() - 0.5 * (f.d2f)(x)).abs() < 1e-14);
        }
    }

    #[test]
    fn jump_correction_matches_direct_quadrature() {
        // constant compound Poisson kernel with uniform jumps on [−0.6, 0.6]
        let m = LevyMeasure::compound_poisson(2.0, JumpLaw::Uniform { lo: -0.6, hi: 0.6 }).unwrap();
        let model = ItoLevyModel::characteristics(
            "cp",
            1,
            CoefficientMap::constant(1, 1, 1, vec![0.0]),
            CoefficientMap::constant(1, 1, 1, vec![0.0]),
            JumpKernel::constant(m, 1),
        )
        .unwrap();
        let f = BijectionSpec::canonical();
        let t = bijection_transform(&model, &f).unwrap();
        let ModelForm::Characteristics { drift, .. } = t.form() else { panic!() };
        let w = 1.3;
        let x = (f.inv)(w);
        let oracle = crate::quad::integrate(
            |y| {
                let d = (f.f)(x + y) - w;
                let a = if d.abs() < 1.0 { d } else { 0.0 };
                (a - (f.df)(x) * y) * 2.0 / 1.2
            },
            -0.6,
            0.6,
            &[0.0, -x],
            &crate::quad::QuadOptions::with_rel_tol(1e-13),
        )
        .unwrap()
        .value;
        assert!((drift.eval_scalar(&[w]).unwrap() - oracle).abs() < 1e-12);
        // the transformed symbol evaluates through the pushforward kernel
        let s = symbol_from_characteristics(&t).unwrap();
        assert!(s.eval1(w, 0.7).unwrap().is_finite());
    }

    #[test]
    fn pushforward_examples() {
        let sq = PushMap::Square;
        let MeasureSpec::Gamma { shape, rate } = pushforward_measure(&RealLaw::Normal { mean: 0.0, std: 0.5f64.sqrt() }, &sq).unwrap() else {
            panic!()
        };
        assert!(shape == 0.5 && (rate - 1.0).abs() < 1e-15);
        assert_eq!(
            pushforward_measure(&RealLaw::Dirac { location: 0.0 }, &sq).unwrap(),
            MeasureSpec::Dirac { location: vec![0.0] }
        );
        assert_eq!(
            pushforward_measure(&RealLaw::Sample { points: vec![-1.0, 1.0] }, &sq).unwrap(),
            MeasureSpec::Sample { points: vec![vec![1.0], vec![1.0]] }
        );
        // Gamma(4,4) under the square: grid density with the right transform
        let g = pushforward_measure(&RealLaw::Gamma { shape: 4.0, rate: 4.0 }, &sq).unwrap();
        let MeasureSpec::GridDensity { nodes, .. } = &g else { panic!() };
        assert_eq!(nodes.len(), PUSHFORWARD_NODES);
        // E[X²] = k(k+1)/θ² = 1.25
        assert!((g.mean()[0] - 1.25).abs() < 1e-3);
    }

    #[test]
    fn ou_transform_and_pushforward_are_consistent() {
        // OU dX = −X dt + dB, invariant N(0, ½), in characteristics form on ℝ
        let ou = ItoLevyModel::characteristics(
            "ou",
            1,
            CoefficientMap::native(1, 1, 1, "-x", |x, o| {
                o[0] = -x[0];
                Ok(())
            }),
            CoefficientMap::constant(1, 1, 1, vec![1.0]),
            JumpKernel::Zero,
        )
        .unwrap();
        let f = BijectionSpec::canonical();
        let t = bijection_transform(&ou, &f).unwrap();
        let sym = symbol_from_characteristics(&t).unwrap();
        let mu = pushforward_measure_with(&RealLaw::Normal { mean: 0.0, std: 0.5f64.sqrt() }, &PushMap::Bijection(f.clone()), 4096).unwrap();
        let r = residual_profile(&sym, &mu, &GridSpec::default(), 1e-4).unwrap();
        assert_eq!(r.verdict, Verdict::Invariant, "max R {}", r.max_r);
        // a wrong variance is rejected
        let bad = pushforward_measure_with(&RealLaw::Normal { mean: 0.0, std: 1.0 }, &PushMap::Bijection(f.clone()), 4096).unwrap();
        let r = residual_profile(&sym, &bad, &GridSpec::default(), 1e-4).unwrap();
        assert_eq!(r.verdict, Verdict::NotInvariant);
        // pulling the image back recovers the Gaussian density
        let back = pullback_measure(&mu, &f, 4001).unwrap();
        let RealLaw::GridDensity { nodes, values } = back else { panic!() };
        let i = nodes.partition_point(|x| *x < 0.0);
        let p0 = values[i] + (values[i - 1] - values[i]) * (nodes[i] / (nodes[i] - nodes[i - 1]));
        assert!((p0 - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-3, "{p0}");
    }
}

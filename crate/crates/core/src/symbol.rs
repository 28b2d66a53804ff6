//! Laplace symbols `λ(x, ξ)` of Itô-Lévy models.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::levy::{LevyError, LevyMeasure};
use crate::model::{CoefficientMap, ItoLevyModel, JumpKernel, ModelError, ModelForm};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SymbolError {
    #[error("at x = {x:?}, ξ = {xi:?}: {source}")]
    Levy { x: Vec<f64>, xi: Vec<f64>, source: LevyError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("symbol_from_sde needs the model to assert that it stays in the nonnegative orthant")]
    PositivityNotAsserted,
    #[error("not a subordinator model: {0}")]
    NotASubordinator(String),
    #[error("driver has infinite activity; induced characteristics are not defined")]
    InfiniteActivity,
    #[error("wrong model form: {0}")]
    WrongForm(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, SymbolError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ClosedForm,
    Quadrature,
    Empirical,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::ClosedForm => "closed_form",
            Provenance::Quadrature => "quadrature",
            Provenance::Empirical => "empirical",
        })
    }
}

type SymbolFn = Arc<dyn Fn(&[f64], &[f64]) -> Result<f64> + Send + Sync>;

/// A callable `λ(x, ξ)`; evaluation at `ξ = 0` is `0` by construction.
#[derive(Clone)]
pub struct SymbolEvaluator {
    dim: usize,
    provenance: Provenance,
    label: String,
    f: SymbolFn,
}

impl fmt::Debug for SymbolEvaluator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymbolEvaluator({}, dim {}, {})", self.label, self.dim, self.provenance)
    }
}

impl SymbolEvaluator {
    pub fn new<F>(dim: usize, provenance: Provenance, label: impl Into<String>, f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> Result<f64> + Send + Sync + 'static,
    {
        SymbolEvaluator {
            dim,
            provenance,
            label: label.into(),
            f: Arc::new(f),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        if x.len() != self.dim || xi.len() != self.dim {
            return Err(SymbolError::Dimension(format!(
                "symbol of dimension {} evaluated at x of length {} and ξ of length {}",
                self.dim,
                x.len(),
                xi.len()
            )));
        }
        if xi.iter().all(|v| *v == 0.0) {
            return Ok(0.0);
        }
        (self.f)(x, xi)
    }

    /// One-dimensional convenience wrapper.
    pub fn eval1(&self, x: f64, xi: f64) -> Result<f64> {
        self.eval(&[x], &[xi])
    }
}

fn attach<'a>(x: &'a [f64], xi: &'a [f64]) -> impl Fn(ModelError) -> SymbolError + 'a {
    move |e| match e {
        ModelError::Levy(source) => SymbolError::Levy {
            x: x.to_vec(),
            xi: xi.to_vec(),
            source,
        },
        other => SymbolError::Model(other),
    }
}

/// `λ(x,ξ) = ℓ(x)'ξ − ½ξ'Q(x)ξ − ∫(e^{−y'ξ}−1+y'ξ·1{|y|<1})N(x,dy)`.
pub fn symbol_from_characteristics(model: &ItoLevyModel) -> Result<SymbolEvaluator> {
    let ModelForm::Characteristics { drift, diffusion, kernel } = model.form() else {
        return Err(SymbolError::WrongForm("symbol_from_characteristics needs characteristics form"));
    };
    let d = model.dim();
    let provenance = if kernel.has_closed_form() { Provenance::ClosedForm } else { Provenance::Quadrature };
    let (drift, diffusion, kernel) = (drift.clone(), diffusion.clone(), kernel.clone());
    Ok(SymbolEvaluator::new(d, provenance, model.name(), move |x, xi| {
        let l = drift.eval(x)?;
        let q = diffusion.eval(x)?;
        let mut val = crate::numeric::dot(&l, xi);
        for i in 0..d {
            for j in 0..d {
                val -= 0.5 * xi[i] * q[i * d + j] * xi[j];
            }
        }
        if !kernel.is_zero() {
            val -= kernel.levy_integral(x, xi).map_err(attach(x, xi))?;
        }
        Ok(val)
    }))
}

/// `u = Φ(x)'ξ` for a row-major `d×n` matrix `Φ(x)`.
fn transpose_apply(phi: &[f64], d: usize, n: usize, xi: &[f64]) -> Vec<f64> {
    (0..n).map(|j| (0..d).map(|i| phi[i * n + j] * xi[i]).sum()).collect()
}

/// `λ(x,ξ) = φ(iΦ(x)'ξ)` with `φ` the driver's exponent.
pub fn symbol_from_sde(model: &ItoLevyModel) -> Result<SymbolEvaluator> {
    let ModelForm::Sde { driver, phi } = model.form() else {
        return Err(SymbolError::WrongForm("symbol_from_sde needs SDE form"));
    };
    if !model.positivity_asserted() {
        return Err(SymbolError::PositivityNotAsserted);
    }
    let d = model.dim();
    let n = driver.dim();
    let provenance = if driver.measure().has_closed_form() { Provenance::ClosedForm } else { Provenance::Quadrature };
    let (driver, phi) = (driver.clone(), phi.clone());
    Ok(SymbolEvaluator::new(d, provenance, model.name(), move |x, xi| {
        let p = phi.eval(x)?;
        let u = transpose_apply(&p, d, n, xi);
        driver.char_exponent_imag(&u).map_err(|source| SymbolError::Levy {
            x: x.to_vec(),
            xi: xi.to_vec(),
            source,
        })
    }))
}

/// `λ(x,ξ) = λ_L(Φ(x)'ξ)` for a subordinator driver and `Φ ≥ 0`.
pub fn symbol_subordinator_sde(model: &ItoLevyModel) -> Result<SymbolEvaluator> {
    let ModelForm::Sde { driver, phi } = model.form() else {
        return Err(SymbolError::WrongForm("symbol_subordinator_sde needs SDE form"));
    };
    driver.subordinator_drift().map_err(|e| SymbolError::NotASubordinator(e.to_string()))?;
    let d = model.dim();
    let provenance = if driver.measure().has_closed_form() { Provenance::ClosedForm } else { Provenance::Quadrature };
    let (driver, phi) = (driver.clone(), phi.clone());
    Ok(SymbolEvaluator::new(d, provenance, model.name(), move |x, xi| {
        let p = phi.eval(x)?;
        if p.iter().any(|v| *v < 0.0) {
            return Err(SymbolError::NotASubordinator(format!("Φ({x:?}) has negative entries")));
        }
        let u = transpose_apply(&p, d, 1, xi)[0];
        driver.laplace_exponent(u).map_err(|source| SymbolError::Levy {
            x: x.to_vec(),
            xi: xi.to_vec(),
            source,
        })
    }))
}

/// Picks the applicable constructor for a model.
pub fn symbol_for(model: &ItoLevyModel) -> Result<SymbolEvaluator> {
    match model.form() {
        ModelForm::Characteristics { .. } => symbol_from_characteristics(model),
        ModelForm::Sde { driver, .. } => {
            if driver.subordinator_drift().is_ok() {
                symbol_subordinator_sde(model)
            } else {
                symbol_from_sde(model)
            }
        }
    }
}

/// Characteristics of the SDE solution for a finite-activity driver:
/// `ℓ_X = Φℓ + ∫(Φy·1{|Φy|<1} − Φy·1{|y|<1})N(dy)`, `Q_X = ΦQΦ'`,
/// `N_X(x,·) = N∘(y ↦ Φ(x)y)^{-1}`.
pub fn induced_characteristics(model: &ItoLevyModel) -> Result<ItoLevyModel> {
    let ModelForm::Sde { driver, phi } = model.form() else {
        return Err(SymbolError::WrongForm("induced_characteristics needs SDE form"));
    };
    if !driver.measure().is_finite_activity() {
        return Err(SymbolError::InfiniteActivity);
    }
    let d = model.dim();
    let n = driver.dim();
    let ell = DVector::from_column_slice(driver.drift());
    let q = driver.covariance().clone();
    let base = Arc::new(driver.measure().clone());
    let base_cut = DVector::from_vec(driver.measure().cutoff_mean(n).map_err(|source| SymbolError::Levy {
        x: vec![],
        xi: vec![],
        source,
    })?);

    let phi_d = phi.clone();
    let base_d = base.clone();
    let drift = CoefficientMap::native(d, d, 1, format!("induced drift of {}", model.name()), move |x, out| {
        let p = phi_d.eval_matrix(x).map_err(|e| e.to_string())?;
        let mut v = &p * &ell - &p * &base_cut;
        if !base_d.is_zero() {
            let lin = LevyMeasure::Linear {
                base: base_d.clone(),
                matrix: p.clone(),
            };
            let m = lin.cutoff_mean(d).map_err(|e| e.to_string())?;
            v += DVector::from_vec(m);
        }
        out.copy_from_slice(v.as_slice());
        Ok(())
    });
    let phi_q = phi.clone();
    let diffusion = CoefficientMap::native(d, d, d, format!("induced diffusion of {}", model.name()), move |x, out| {
        let p = phi_q.eval_matrix(x).map_err(|e| e.to_string())?;
        let m: DMatrix<f64> = &p * &q * p.transpose();
        // row-major copy, symmetrized against roundoff
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = 0.5 * (m[(i, j)] + m[(j, i)]);
            }
        }
        Ok(())
    });
    let kernel = if base.is_zero() {
        JumpKernel::Zero
    } else {
        let phi_k = phi.clone();
        let closed = base.has_closed_form();
        JumpKernel::Dynamic {
            build: Arc::new(move |x| {
                let p = phi_k.eval_matrix(x)?;
                Ok(vec![(1.0, LevyMeasure::Linear { base: base.clone(), matrix: p })])
            }),
            closed_form: closed,
        }
    };
    Ok(ItoLevyModel::characteristics(format!("{} (induced)", model.name()), d, drift, diffusion, kernel)?)
}

/// `A f(x) = −Σ cᵢ e^{−aᵢ'x} λ(x, aᵢ)` for `f = Σ cᵢ e^{−aᵢ'x}`.
pub fn generator_apply_expmix(sym: &SymbolEvaluator, coeffs: &[(f64, Vec<f64>)], x: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (c, a) in coeffs {
        if a.len() != sym.dim() || a.iter().any(|v| !(*v > 0.0)) {
            return Err(SymbolError::Dimension("exponents must be strictly positive vectors".into()));
        }
        let e = (-crate::numeric::dot(a, x)).exp();
        total -= c * e * sym.eval(x, a)?;
    }
    Ok(total)
}

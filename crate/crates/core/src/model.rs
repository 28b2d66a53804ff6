//! Itô-Lévy models: differential characteristics `(ℓ(x), Q(x), N(x,·))` or
//! an SDE `dX = Φ(X−) dL` driven by a Lévy process.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::expr::{CompiledExpr, Expr, ExprError};
use crate::levy::{check_psd, LevyError, LevyMeasure, LevyTriplet};
use crate::numeric::halton_point;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("diffusion matrix at x = {x:?}: {reason}")]
    NotPsd { x: Vec<f64>, reason: String },
    #[error("characteristics are not polynomially bounded of degree {degree}: {detail}")]
    Unbounded { degree: usize, detail: String },
    #[error("coefficient evaluation at x = {x:?}: {source}")]
    Eval { x: Vec<f64>, source: ExprError },
    #[error("coefficient evaluation at x = {x:?}: {reason}")]
    Native { x: Vec<f64>, reason: String },
    #[error(transparent)]
    Levy(#[from] LevyError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

type NativeFn = Arc<dyn Fn(&[f64], &mut [f64]) -> std::result::Result<(), String> + Send + Sync>;

#[derive(Clone)]
enum MapBody {
    Native(NativeFn),
    Exprs(Vec<CompiledExpr>),
}

/// A map `ℝᵈ → ℝ^{rows×cols}` (row-major output), either native code or a
/// list of parsed expressions over `x1..xd` (`x` is an alias of `x1` when
/// `d = 1`).
#[derive(Clone)]
pub struct CoefficientMap {
    d_in: usize,
    rows: usize,
    cols: usize,
    body: MapBody,
    label: String,
}

impl fmt::Debug for CoefficientMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CoefficientMap({} → {}x{}: {})", self.d_in, self.rows, self.cols, self.label)
    }
}

/// Variable names a coefficient expression over `ℝᵈ` may use.
pub fn state_variables(d: usize) -> Vec<String> {
    let mut v: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    if d == 1 {
        v.push("x".into());
    }
    v
}

impl CoefficientMap {
    pub fn native<F>(d_in: usize, rows: usize, cols: usize, label: impl Into<String>, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) -> std::result::Result<(), String> + Send + Sync + 'static,
    {
        CoefficientMap {
            d_in,
            rows,
            cols,
            body: MapBody::Native(Arc::new(f)),
            label: label.into(),
        }
    }

    pub fn constant(d_in: usize, rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols);
        let label = format!("{values:?}");
        Self::native(d_in, rows, cols, label, move |_, out| {
            out.copy_from_slice(&values);
            Ok(())
        })
    }

    /// Build from expressions (row-major). Identifiers other than state
    /// variables are resolved through `constants`.
    pub fn from_exprs(d_in: usize, rows: usize, cols: usize, exprs: &[Expr], constants: &dyn Fn(&str) -> Option<f64>) -> Result<Self> {
        if exprs.len() != rows * cols {
            return Err(ModelError::Dimension(format!("expected {} expressions, got {}", rows * cols, exprs.len())));
        }
        let vars = state_variables(d_in);
        let slots: Vec<&str> = vars.iter().map(String::as_str).collect();
        let compiled = exprs
            .iter()
            .map(|e| e.compile(&slots, constants))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|source| ModelError::Eval { x: vec![], source })?;
        let label = exprs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ");
        Ok(CoefficientMap {
            d_in,
            rows,
            cols,
            body: MapBody::Exprs(compiled),
            label,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(x.len(), self.d_in);
        match &self.body {
            MapBody::Native(f) => f(x, out).map_err(|reason| ModelError::Native { x: x.to_vec(), reason })?,
            MapBody::Exprs(es) => {
                let mut vars = x.to_vec();
                if self.d_in == 1 {
                    vars.push(x[0]);
                }
                for (o, e) in out.iter_mut().zip(es) {
                    *o = e.eval(&vars).map_err(|source| ModelError::Eval { x: x.to_vec(), source })?;
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Native {
                x: x.to_vec(),
                reason: "non-finite coefficient".into(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.rows * self.cols];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    pub fn eval_matrix(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.eval(x)?))
    }

    pub fn eval_scalar(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval(x)?[0])
    }
}

type DynamicKernel = Arc<dyn Fn(&[f64]) -> Result<Vec<(f64, LevyMeasure)>> + Send + Sync>;

/// State-dependent jump kernel `N(x, ·)`.
#[derive(Clone)]
pub enum JumpKernel {
    Zero,
    /// `N(x,·) = Σ wᵢ(x) Mᵢ` with scalar weights `wᵢ ≥ 0`.
    Affine(Vec<(CoefficientMap, LevyMeasure)>),
    /// Arbitrary kernel `Σ wᵢ Mᵢ(x)` built on demand (pushforwards).
    Dynamic { build: DynamicKernel, closed_form: bool },
}

impl fmt::Debug for JumpKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JumpKernel::Zero => write!(f, "Zero"),
            JumpKernel::Affine(t) => f.debug_list().entries(t.iter().map(|(w, m)| (w.label(), m))).finish(),
            JumpKernel::Dynamic { .. } => write!(f, "Dynamic"),
        }
    }
}

impl JumpKernel {
    pub fn constant(m: LevyMeasure, d: usize) -> Self {
        if m.is_zero() {
            JumpKernel::Zero
        } else {
            JumpKernel::Affine(vec![(CoefficientMap::constant(d, 1, 1, vec![1.0]), m)])
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            JumpKernel::Zero => true,
            JumpKernel::Affine(t) => t.iter().all(|(_, m)| m.is_zero()),
            JumpKernel::Dynamic { .. } => false,
        }
    }

    pub fn has_closed_form(&self) -> bool {
        match self {
            JumpKernel::Zero => true,
            JumpKernel::Affine(t) => t.iter().all(|(_, m)| m.has_closed_form()),
            JumpKernel::Dynamic { closed_form, .. } => *closed_form,
        }
    }

    /// `∫(e^{−y'u} − 1 + y'u·1{|y|<1}) N(x, dy)`.
    pub fn levy_integral(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        match self {
            JumpKernel::Zero => Ok(0.0),
            JumpKernel::Affine(terms) => {
                let mut total = 0.0;
                for (w, m) in terms {
                    let wx = w.eval_scalar(x)?;
                    if wx < 0.0 {
                        return Err(ModelError::Native {
                            x: x.to_vec(),
                            reason: format!("negative kernel weight {wx}"),
                        });
                    }
                    if wx > 0.0 {
                        total += wx * m.levy_integral(u)?;
                    }
                }
                Ok(total)
            }
            JumpKernel::Dynamic { build, .. } => {
                let mut total = 0.0;
                for (w, m) in build(x)? {
                    if w > 0.0 {
                        total += w * m.levy_integral(u)?;
                    }
                }
                Ok(total)
            }
        }
    }
}

/// The two ways of specifying a model.
#[derive(Debug, Clone)]
pub enum ModelForm {
    Characteristics {
        drift: CoefficientMap,
        diffusion: CoefficientMap,
        kernel: JumpKernel,
    },
    Sde {
        driver: LevyTriplet,
        phi: CoefficientMap,
    },
}

#[derive(Debug, Clone)]
pub struct ItoLevyModel {
    dim: usize,
    form: ModelForm,
    positivity_asserted: bool,
    name: String,
}

/// Number of quasi-random states used by sanity checks.
pub const SANITY_POINTS: usize = 64;
/// Edge of the sampling box `[0, L]^d` for sanity checks.
pub const SANITY_BOX: f64 = 10.0;

/// Quasi-random states in `[0, 10]^d`, including the origin.
pub fn sample_states(d: usize) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; d]];
    pts.extend((1..SANITY_POINTS as u64).map(|i| halton_point(i, d).into_iter().map(|u| SANITY_BOX * u).collect()));
    pts
}

impl ItoLevyModel {
    pub fn characteristics(name: impl Into<String>, dim: usize, drift: CoefficientMap, diffusion: CoefficientMap, kernel: JumpKernel) -> Result<Self> {
        if drift.d_in() != dim || drift.shape() != (dim, 1) {
            return Err(ModelError::Dimension(format!("drift must map ℝ^{dim} → ℝ^{dim}")));
        }
        if diffusion.d_in() != dim || diffusion.shape() != (dim, dim) {
            return Err(ModelError::Dimension(format!("diffusion must map ℝ^{dim} → ℝ^{dim}x{dim}")));
        }
        let m = ItoLevyModel {
            dim,
            form: ModelForm::Characteristics { drift, diffusion, kernel },
            positivity_asserted: true,
            name: name.into(),
        };
        m.check_diffusion_psd()?;
        Ok(m)
    }

    pub fn sde(name: impl Into<String>, dim: usize, driver: LevyTriplet, phi: CoefficientMap, positivity_asserted: bool) -> Result<Self> {
        if phi.d_in() != dim || phi.shape() != (dim, driver.dim()) {
            return Err(ModelError::Dimension(format!(
                "Φ must map ℝ^{dim} → ℝ^{dim}x{} (got {:?})",
                driver.dim(),
                phi.shape()
            )));
        }
        Ok(ItoLevyModel {
            dim,
            form: ModelForm::Sde { driver, phi },
            positivity_asserted,
            name: name.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn form(&self) -> &ModelForm {
        &self.form
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn positivity_asserted(&self) -> bool {
        self.positivity_asserted
    }

    pub fn with_positivity_asserted(mut self, flag: bool) -> Self {
        self.positivity_asserted = flag;
        self
    }

    fn check_diffusion_psd(&self) -> Result<()> {
        if let ModelForm::Characteristics { diffusion, .. } = &self.form {
            for x in sample_states(self.dim) {
                let q = diffusion.eval_matrix(&x)?;
                check_psd(&q).map_err(|reason| ModelError::NotPsd { x: x.clone(), reason })?;
            }
        }
        Ok(())
    }

    /// Sampling check that `‖ℓ(x)‖ + ‖Q(x)‖ ≤ C(1 + ‖x‖^k)` (or the same
    /// for `Φ`): the normalized size may not keep growing along rays.
    pub fn check_polynomial_bound(&self, degree: usize) -> Result<()> {
        let size = |x: &[f64]| -> Result<f64> {
            Ok(match &self.form {
                ModelForm::Characteristics { drift, diffusion, .. } => {
                    crate::numeric::norm(&drift.eval(x)?) + crate::numeric::norm(&diffusion.eval(x)?)
                }
                ModelForm::Sde { phi, .. } => crate::numeric::norm(&phi.eval(x)?),
            })
        };
        let radii = [1e2, 1e3, 1e4];
        for i in 1..=8u64 {
            let dir: Vec<f64> = halton_point(i, self.dim).iter().map(|u| 0.1 + u).collect();
            let n = crate::numeric::norm(&dir);
            let mut ratios = Vec::new();
            for r in radii {
                let x: Vec<f64> = dir.iter().map(|v| v * r / n).collect();
                ratios.push(size(&x)? / (1.0 + r.powi(degree as i32)));
            }
            if ratios[2] > 5.0 * ratios[1].max(1e-300) && ratios[1] > 5.0 * ratios[0].max(1e-300) && ratios[2] > 1e-12 {
                return Err(ModelError::Unbounded {
                    degree,
                    detail: format!("normalized size grows along direction {dir:?}: {ratios:?}"),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn expression_maps() {
        let e = [parse("a*(b - x)").unwrap()];
        let m = CoefficientMap::from_exprs(1, 1, 1, &e, &|n| match n {
            "a" => Some(2.0),
            "b" => Some(1.0),
            _ => None,
        })
        .unwrap();
        assert_eq!(m.eval_scalar(&[0.5]).unwrap(), 1.0);
        let e2 = [parse("x1*x2").unwrap(), parse("x1 + x2").unwrap()];
        let m2 = CoefficientMap::from_exprs(2, 2, 1, &e2, &|_| None).unwrap();
        assert_eq!(m2.eval(&[2.0, 3.0]).unwrap(), vec![6.0, 5.0]);
    }

    #[test]
    fn non_psd_diffusion_rejected() {
        let drift = CoefficientMap::constant(1, 1, 1, vec![0.0]);
        let diff = CoefficientMap::native(1, 1, 1, "1-x", |x, o| {
            o[0] = 1.0 - x[0];
            Ok(())
        });
        assert!(matches!(
            ItoLevyModel::characteristics("bad", 1, drift, diff, JumpKernel::Zero),
            Err(ModelError::NotPsd { .. })
        ));
    }

    #[test]
    fn polynomial_bound_detects_exponential_growth() {
        let mk = |src: &str| {
            let drift = CoefficientMap::from_exprs(1, 1, 1, &[parse(src).unwrap()], &|_| None).unwrap();
            ItoLevyModel::characteristics("m", 1, drift, CoefficientMap::constant(1, 1, 1, vec![1.0]), JumpKernel::Zero).unwrap()
        };
        assert!(mk("x*(1 - x)").check_polynomial_bound(2).is_ok());
        assert!(mk("x^3").check_polynomial_bound(2).is_err());
    }
}

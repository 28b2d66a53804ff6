//! JSON model configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Deserialize;

use onesided::catalog::{Params, TransformSpec};
use onesided::expr::{parse_with, Expr};
use onesided::invariance::{GridSpec, MeasureSpec};
use onesided::levy::{DensitySpec, JumpLaw, LevyMeasure, LevyTriplet};
use onesided::model::{state_variables, CoefficientMap, ItoLevyModel, JumpKernel};
use onesided::montecarlo::{BoundaryPolicy, SimConfig};

/// A config problem, located by its JSON path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "config error: {}", self.message)
        } else {
            write!(f, "config error at {}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl fmt::Display) -> Self {
        ConfigError {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default = "one")]
    pub dim: usize,
    pub model: ModelSection,
    /// Named constants usable in every expression.
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
    pub driver: Option<DriverConfig>,
    /// `d×n` matrix of expressions (a flat list is read as one row per state).
    pub phi: Option<ExprMatrix>,
    pub ell: Option<Vec<String>>,
    #[serde(rename = "Q")]
    pub q: Option<ExprMatrix>,
    pub levy_kernel: Option<Vec<KernelTerm>>,
    pub transform: Option<TransformSpec>,
    #[serde(default)]
    pub candidate_measures: Vec<MeasureSpec>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    pub simulation: Option<SimulationConfig>,
    pub fit: Option<FitConfig>,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSection {
    Sde {
        /// The state stays in the nonnegative orthant.
        #[serde(default = "yes")]
        positivity: bool,
    },
    Characteristics {},
    Catalog {
        entry: String,
        #[serde(default)]
        params: Params,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ExprMatrix {
    Rows(Vec<Vec<String>>),
    Column(Vec<String>),
}

impl ExprMatrix {
    fn rows(&self) -> Vec<Vec<String>> {
        match self {
            ExprMatrix::Rows(r) => r.clone(),
            ExprMatrix::Column(c) => c.iter().map(|s| vec![s.clone()]).collect(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverConfig {
    pub drift: Vec<f64>,
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub levy_measure: MeasureConfig,
    /// Truncation of small jumps; only `"unit_ball"` is supported and it
    /// must be stated whenever the Lévy measure is nonzero.
    pub cutoff: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureConfig {
    #[default]
    Zero,
    Atoms {
        atoms: Vec<AtomConfig>,
    },
    Stable {
        alpha: f64,
        scale: f64,
        #[serde(default)]
        one_sided: bool,
    },
    Gamma {
        shape: f64,
        rate: f64,
    },
    CompoundPoisson {
        rate: f64,
        law: JumpLawConfig,
    },
    /// Density given as an expression in `y`.
    Density {
        density: String,
        lower: f64,
        upper: f64,
        singularity_order: Option<f64>,
    },
    Independent {
        blocks: Vec<BlockConfig>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub location: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub dim: usize,
    pub measure: MeasureConfig,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpLawConfig {
    Exponential { rate: f64 },
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, std: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelTerm {
    /// Nonnegative scalar weight `w(x)`.
    pub weight: String,
    pub measure: MeasureConfig,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_residual_tol")]
    pub residual: f64,
}

fn default_residual_tol() -> f64 {
    onesided::invariance::DEFAULT_TOL
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            residual: default_residual_tol(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub n_paths: Option<usize>,
    pub t0: Option<f64>,
    pub batches: Option<usize>,
    pub burn_in_fraction: Option<f64>,
    pub small_jump_threshold: Option<f64>,
    pub boundary_policy: Option<BoundaryPolicy>,
}

impl SimulationConfig {
    pub fn apply(&self, mut cfg: SimConfig) -> SimConfig {
        if let Some(v) = self.dt {
            cfg.dt = v;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.n_paths {
            cfg.n_paths = v;
        }
        if let Some(v) = self.t0 {
            cfg.t0 = v;
        }
        if let Some(v) = self.batches {
            cfg.batches = v;
        }
        if let Some(v) = self.burn_in_fraction {
            cfg.burn_in_fraction = v;
        }
        if let Some(v) = self.small_jump_threshold {
            cfg.small_jump_threshold = v;
        }
        if let Some(v) = self.boundary_policy {
            cfg.boundary_policy = v;
        }
        cfg
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub family: Option<String>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub restarts: Option<usize>,
    pub max_evaluations: Option<usize>,
}

/// Parse config text, reporting the JSON path of the first problem.
pub fn parse_config(text: &str) -> Result<ModelConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ModelConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::new(path, e.into_inner())
    })?;
    if cfg.dim == 0 {
        return Err(ConfigError::new("dim", "must be at least 1"));
    }
    if let Err(e) = cfg.grid.validate() {
        return Err(ConfigError::new("grid", e));
    }
    for (i, m) in cfg.candidate_measures.iter().enumerate() {
        if let Err(e) = m.validate() {
            return Err(ConfigError::new(format!("candidate_measures[{i}]"), e));
        }
    }
    if !(cfg.tolerances.residual > 0.0) {
        return Err(ConfigError::new("tolerances.residual", "must be positive"));
    }
    Ok(cfg)
}

impl ModelConfig {
    fn lookup(&self) -> impl Fn(&str) -> Option<f64> + '_ {
        move |k| self.constants.get(k).copied()
    }

    fn allowed(&self, extra: &[String]) -> Vec<String> {
        extra.iter().cloned().chain(self.constants.keys().cloned()).collect()
    }

    fn parse_expr(&self, path: &str, src: &str, vars: &[String]) -> Result<Expr> {
        let allowed = self.allowed(vars);
        let refs: Vec<&str> = allowed.iter().map(String::as_str).collect();
        parse_with(src, &refs).map_err(|e| ConfigError::new(path, e))
    }

    fn map(&self, path: &str, rows: &[Vec<String>], cols: usize) -> Result<CoefficientMap> {
        let d = self.dim;
        let vars = state_variables(d);
        if rows.len() != d || rows.iter().any(|r| r.len() != cols) {
            return Err(ConfigError::new(path, format!("expected a {d}×{cols} matrix")));
        }
        let mut exprs = Vec::with_capacity(d * cols);
        for (i, row) in rows.iter().enumerate() {
            for (j, src) in row.iter().enumerate() {
                exprs.push(self.parse_expr(&format!("{path}[{i}][{j}]"), src, &vars)?);
            }
        }
        CoefficientMap::from_exprs(d, d, cols, &exprs, &self.lookup()).map_err(|e| ConfigError::new(path, e))
    }

    fn measure(&self, path: &str, m: &MeasureConfig) -> Result<LevyMeasure> {
        let err = |e: onesided::levy::LevyError| ConfigError::new(path, e);
        match m {
            MeasureConfig::Zero => Ok(LevyMeasure::Zero),
            MeasureConfig::Atoms { atoms } => LevyMeasure::atoms(atoms.iter().map(|a| (a.location.clone(), a.mass)).collect()).map_err(err),
            MeasureConfig::Stable { alpha, scale, one_sided } => LevyMeasure::stable(*alpha, *scale, *one_sided).map_err(err),
            MeasureConfig::Gamma { shape, rate } => LevyMeasure::gamma(*shape, *rate).map_err(err),
            MeasureConfig::CompoundPoisson { rate, law } => {
                let law = match *law {
                    JumpLawConfig::Exponential { rate } => JumpLaw::Exponential { rate },
                    JumpLawConfig::Uniform { lo, hi } => JumpLaw::Uniform { lo, hi },
                    JumpLawConfig::Normal { mean, std } => JumpLaw::Normal { mean, std },
                };
                LevyMeasure::compound_poisson(*rate, law).map_err(err)
            }
            MeasureConfig::Density {
                density,
                lower,
                upper,
                singularity_order,
            } => {
                let e = self.parse_expr(&format!("{path}.density"), density, &["y".to_string()])?;
                let c = e.compile(&["y"], &self.lookup()).map_err(|e| ConfigError::new(format!("{path}.density"), e))?;
                let label = e.to_string();
                LevyMeasure::density(DensitySpec {
                    density: Arc::new(move |y| c.eval(&[y]).unwrap_or(f64::NAN)),
                    lower: *lower,
                    upper: *upper,
                    singularity_order: *singularity_order,
                    label,
                })
                .map_err(err)
            }
            MeasureConfig::Independent { blocks } => {
                let parts = blocks
                    .iter()
                    .enumerate()
                    .map(|(i, b)| Ok((b.dim, self.measure(&format!("{path}.blocks[{i}].measure"), &b.measure)?)))
                    .collect::<Result<Vec<_>>>()?;
                let m = LevyMeasure::Independent(parts);
                m.validate().map_err(err)?;
                Ok(m)
            }
        }
    }

    fn driver(&self) -> Result<LevyTriplet> {
        let d = self.driver.as_ref().ok_or_else(|| ConfigError::new("driver", "required for SDE models"))?;
        let n = d.drift.len();
        let cov = match &d.covariance {
            Some(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(ConfigError::new("driver.covariance", format!("expected {n}×{n}")));
                }
                DMatrix::from_row_iterator(n, n, rows.iter().flatten().copied())
            }
            None => DMatrix::zeros(n, n),
        };
        match (&d.levy_measure, d.cutoff.as_deref()) {
            (_, Some("unit_ball")) | (MeasureConfig::Zero, None) => {}
            (_, Some(other)) => return Err(ConfigError::new("driver.cutoff", format!("`{other}` is not supported (unit_ball)"))),
            (_, None) => return Err(ConfigError::new("driver.cutoff", "must be declared (\"unit_ball\") for a nonzero Lévy measure")),
        }
        let m = self.measure("driver.levy_measure", &d.levy_measure)?;
        LevyTriplet::new(d.drift.clone(), cov, m).map_err(|e| ConfigError::new("driver", e))
    }

    /// Build the user model (SDE or characteristics form).
    pub fn build_model(&self) -> Result<ItoLevyModel> {
        match &self.model {
            ModelSection::Sde { positivity } => {
                let driver = self.driver()?;
                let phi = self.phi.as_ref().ok_or_else(|| ConfigError::new("phi", "required for SDE models"))?;
                let map = self.map("phi", &phi.rows(), driver.dim())?;
                ItoLevyModel::sde(&self.name, self.dim, driver, map, *positivity).map_err(|e| ConfigError::new("model", e))
            }
            ModelSection::Characteristics {} => {
                let d = self.dim;
                let ell = self.ell.as_ref().ok_or_else(|| ConfigError::new("ell", "required for characteristics models"))?;
                let drift = self.map("ell", &ell.iter().map(|s| vec![s.clone()]).collect::<Vec<_>>(), 1)?;
                let diffusion = match &self.q {
                    Some(q) => self.map("Q", &q.rows(), d)?,
                    None => CoefficientMap::constant(d, d, d, vec![0.0; d * d]),
                };
                let kernel = match &self.levy_kernel {
                    None => JumpKernel::Zero,
                    Some(terms) => {
                        let vars = state_variables(d);
                        let mut out = Vec::new();
                        for (i, t) in terms.iter().enumerate() {
                            let path = format!("levy_kernel[{i}]");
                            let w = self.parse_expr(&format!("{path}.weight"), &t.weight, &vars)?;
                            let w = CoefficientMap::from_exprs(d, 1, 1, &[w], &self.lookup()).map_err(|e| ConfigError::new(&path, e))?;
                            out.push((w, self.measure(&format!("{path}.measure"), &t.measure)?));
                        }
                        JumpKernel::Affine(out)
                    }
                };
                ItoLevyModel::characteristics(&self.name, d, drift, diffusion, kernel).map_err(|e| ConfigError::new("model", e))
            }
            ModelSection::Catalog { .. } => unreachable!("catalog models are built by the catalog"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_report_their_path() {
        let err = parse_config(r#"{"name":"m","model":{"kind":"catalog","entry":"cir"},"grid":{"xi_min":1,"xi_max":2,"n_points":3,"extra":1}}"#).unwrap_err();
        assert_eq!(err.path, "grid.extra");
        assert!(err.message.contains("extra"), "{}", err.message);
    }

    #[test]
    fn expression_errors_carry_positions() {
        let cfg = parse_config(
            r#"{"name":"m","model":{"kind":"sde"},"driver":{"drift":[1.0]},"phi":[["a*(b - x) +"]],"constants":{"a":2,"b":1}}"#,
        )
        .unwrap();
        let err = cfg.build_model().unwrap_err();
        assert_eq!(err.path, "phi[0][0]");
        assert!(err.message.contains("1:"), "{}", err.message);
    }

    #[test]
    fn sde_config_builds() {
        let cfg = parse_config(
            r#"{"name":"cir","model":{"kind":"sde"},"constants":{"a":2,"b":1,"s":1},
                "driver":{"drift":[1,0],"covariance":[[0,0],[0,1]]},
                "phi":[["a*(b - x)","s*sqrt(x)"]]}"#,
        )
        .unwrap();
        let m = cfg.build_model().unwrap();
        let s = onesided::symbol::symbol_for(&m).unwrap();
        assert!((s.eval1(1.0, 1.0).unwrap() + 0.5).abs() < 1e-14);
    }
}

//! Resolve flags, config file and catalog into one problem description.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use onesided::catalog::{self, CatalogModel, KnownLaw, ParamValue, Params, Simulation, Observable};
use onesided::invariance::{GridSpec, MeasureSpec};
use onesided::montecarlo::SimConfig;
use onesided::symbol::{symbol_for, symbol_from_characteristics, SymbolEvaluator};
use onesided::transforms::{bijection_transform, BijectionSpec};

use crate::config::{parse_config, ConfigError, FitConfig, ModelConfig, ModelSection, SimulationConfig};
use crate::CommonArgs;

pub struct Problem {
    pub name: String,
    pub dim: usize,
    pub symbol: SymbolEvaluator,
    pub catalog: Option<CatalogModel>,
    pub simulation: Option<Simulation>,
    pub candidates: Vec<MeasureSpec>,
    pub grid: GridSpec,
    pub tol: f64,
    pub seed: u64,
    pub sim: Option<SimulationConfig>,
    pub fit: Option<FitConfig>,
    /// SHA-256 of the config text or of the canonical catalog invocation.
    pub config_hash: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// `k=v,k=v` into catalog parameters.
pub fn parse_params(s: &str) -> Result<Params, ConfigError> {
    let mut out = BTreeMap::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| ConfigError::new("--params", format!("`{part}` is not k=v")))?;
        out.insert(k.trim().to_string(), ParamValue::parse(v));
    }
    Ok(out)
}

/// `gamma:4,4`, `dirac:0` or an inline JSON measure.
pub fn parse_measure(s: &str) -> Result<MeasureSpec, ConfigError> {
    let s = s.trim();
    let m = if s.starts_with('{') {
        serde_json::from_str::<MeasureSpec>(s).map_err(|e| ConfigError::new("--measure", e))?
    } else {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let nums = rest
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse::<f64>().map_err(|_| ConfigError::new("--measure", format!("`{p}` is not a number"))))
            .collect::<Result<Vec<_>, _>>()?;
        match (kind, nums.as_slice()) {
            ("gamma", [k, r]) => MeasureSpec::Gamma { shape: *k, rate: *r },
            ("dirac", loc) if !loc.is_empty() => MeasureSpec::Dirac { location: loc.to_vec() },
            _ => return Err(ConfigError::new("--measure", format!("`{s}`: expected gamma:k,θ | dirac:x… | JSON"))),
        }
    };
    m.validate().map_err(|e| ConfigError::new("--measure", e))?;
    Ok(m)
}

fn catalog_invocation(name: &str, params: &Params, transform: Option<catalog::TransformSpec>) -> String {
    let kv: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let t = transform.map(|t| t.to_string()).unwrap_or_default();
    format!("catalog:{name};params:{};transform:{t}", kv.join(","))
}

pub enum ProblemError {
    Config(ConfigError),
    Numeric(String),
}

impl From<ConfigError> for ProblemError {
    fn from(e: ConfigError) -> Self {
        ProblemError::Config(e)
    }
}

pub fn resolve(args: &CommonArgs) -> Result<Problem, ProblemError> {
    let (cfg, hash) = match (&args.config, &args.catalog) {
        (Some(_), Some(_)) => return Err(ConfigError::new("--catalog", "give either --config or --catalog").into()),
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("", format!("reading {}: {e}", path.display())))?;
            let cfg = parse_config(&text)?;
            (Some(cfg), sha256_hex(text.as_bytes()))
        }
        (None, Some(_)) => (None, String::new()),
        (None, None) => return Err(ConfigError::new("", "one of --config or --catalog is required").into()),
    };
    if cfg.is_some() && args.params.is_some() {
        return Err(ConfigError::new("--params", "only valid with --catalog").into());
    }
    let mut problem = match &cfg {
        Some(c) => from_config(c, hash)?,
        None => {
            let name = args.catalog.as_deref().unwrap_or_default();
            let params = match &args.params {
                Some(p) => parse_params(p)?,
                None => Params::new(),
            };
            let hash = sha256_hex(catalog_invocation(name, &params, args.transform).as_bytes());
            let m = catalog::build(name, &params, args.transform).map_err(|e| catalog_error(e, "--catalog"))?;
            from_catalog(m, hash, GridSpec::default(), Vec::new(), 0, None, None)
        }
    };
    if let Some(seed) = args.seed {
        problem.seed = seed;
    }
    if let Some(tol) = args.tol {
        if !(tol > 0.0) {
            return Err(ConfigError::new("--tol", "must be positive").into());
        }
        problem.tol = tol;
    }
    if !args.measure.is_empty() {
        problem.candidates = args.measure.iter().map(|m| parse_measure(m)).collect::<Result<_, _>>()?;
    }
    Ok(problem)
}

fn catalog_error(e: catalog::CatalogError, path: &str) -> ProblemError {
    use catalog::CatalogError::*;
    match e {
        UnknownEntry(_) | UnknownParam { .. } | InvalidParam { .. } => ProblemError::Config(ConfigError::new(path, e)),
        other => ProblemError::Numeric(other.to_string()),
    }
}

fn from_catalog(
    m: CatalogModel,
    config_hash: String,
    grid: GridSpec,
    candidates: Vec<MeasureSpec>,
    seed: u64,
    sim: Option<SimulationConfig>,
    fit: Option<FitConfig>,
) -> Problem {
    let candidates = if candidates.is_empty() {
        match &m.law {
            KnownLaw::Invariant { law } => vec![law.clone()],
            KnownLaw::OnlyDiracZero => vec![MeasureSpec::Dirac { location: vec![0.0] }],
            _ => vec![],
        }
    } else {
        candidates
    };
    Problem {
        name: m.name.clone(),
        dim: m.symbol.dim(),
        symbol: m.symbol.clone(),
        simulation: Some(m.simulation.clone()),
        catalog: Some(m),
        candidates,
        grid,
        tol: onesided::invariance::DEFAULT_TOL,
        seed,
        sim,
        fit,
        config_hash,
    }
}

fn from_config(c: &ModelConfig, hash: String) -> Result<Problem, ProblemError> {
    if let ModelSection::Catalog { entry, params } = &c.model {
        let m = catalog::build(entry, params, c.transform).map_err(|e| catalog_error(e, "model"))?;
        let mut p = from_catalog(m, hash, c.grid, c.candidate_measures.clone(), c.seed, c.simulation.clone(), c.fit.clone());
        p.tol = c.tolerances.residual;
        return Ok(p);
    }
    let base = c.build_model()?;
    let (model, simulation) = match c.transform {
        None => (
            base.clone(),
            Simulation {
                model: base,
                observable: Observable::Identity,
                policy: Default::default(),
            },
        ),
        Some(catalog::TransformSpec::Bijection(_)) => {
            let f = BijectionSpec::canonical();
            let t = bijection_transform(&base, &f).map_err(|e| ProblemError::Numeric(e.to_string()))?;
            (
                t,
                Simulation {
                    model: base.with_positivity_asserted(false),
                    observable: Observable::Bijection(f),
                    policy: Default::default(),
                },
            )
        }
        Some(catalog::TransformSpec::Square) => {
            return Err(ConfigError::new("transform", "the square transform is available for the gou and ou catalog entries").into());
        }
    };
    let symbol = match c.transform {
        Some(_) => symbol_from_characteristics(&model),
        None => symbol_for(&model),
    }
    .map_err(|e| ProblemError::Config(ConfigError::new("model", e)))?;
    for (i, m) in c.candidate_measures.iter().enumerate() {
        if m.dim().is_some_and(|d| d != c.dim) {
            return Err(ConfigError::new(format!("candidate_measures[{i}]"), format!("dimension differs from dim = {}", c.dim)).into());
        }
    }
    Ok(Problem {
        name: c.name.clone(),
        dim: c.dim,
        symbol,
        catalog: None,
        simulation: Some(simulation),
        candidates: c.candidate_measures.clone(),
        grid: c.grid,
        tol: c.tolerances.residual,
        seed: c.seed,
        sim: c.simulation.clone(),
        fit: c.fit.clone(),
        config_hash: hash,
    })
}

impl Problem {
    pub fn sim_config(&self, base: SimConfig) -> SimConfig {
        let mut cfg = match &self.sim {
            Some(s) => s.apply(base),
            None => base,
        };
        if let Some(s) = &self.simulation {
            if self.sim.as_ref().and_then(|s| s.boundary_policy).is_none() {
                cfg.boundary_policy = s.policy;
            }
        }
        cfg.seed = self.seed;
        cfg
    }
}

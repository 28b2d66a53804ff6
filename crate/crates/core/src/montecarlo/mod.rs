//! Euler simulation of Itô-Lévy models and the Monte Carlo oracles built on
//! it: the empirical Laplace symbol, ergodic Laplace transforms and the
//! generator difference quotient.
//!
//! Every path draws from its own ChaCha stream `(seed, path index)`, so
//! results do not depend on the number of worker threads.

mod sampler;
mod sim;

pub use sampler::{positive_stable, symmetric_stable, IncrementSampler, JumpSampler};
pub use sim::{simulate_paths, PathEnsemble, Stepper};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::levy::LevyError;
use crate::model::{ItoLevyModel, ModelError};
use crate::numeric::NeumaierSum;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("path blew up (|X| > 1e12) at t = {t}")]
    Blowup { t: f64 },
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Levy(#[from] LevyError),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    ReflectToZeroClip,
    Absorb,
    #[default]
    RejectStep,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub small_jump_threshold: f64,
    pub boundary_policy: BoundaryPolicy,
    /// Small time of the symbol estimator.
    pub t0: f64,
    pub burn_in_fraction: f64,
    pub batches: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            horizon: 1.0,
            n_paths: 200_000,
            seed: 0,
            small_jump_threshold: 1e-3,
            boundary_policy: BoundaryPolicy::RejectStep,
            t0: 1e-3,
            burn_in_fraction: 0.25,
            batches: 32,
        }
    }
}

impl SimConfig {
    /// Defaults for long-run averages: one path, `T = 2000`.
    pub fn ergodic() -> Self {
        SimConfig {
            horizon: 2000.0,
            n_paths: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(SimError::Config(s.into()));
        if !(self.dt > 0.0 && self.horizon > 0.0 && self.dt <= self.horizon) {
            return bad("need 0 < dt ≤ horizon");
        }
        if self.n_paths == 0 {
            return bad("n_paths must be positive");
        }
        if !(self.small_jump_threshold > 0.0 && self.small_jump_threshold <= 1.0) {
            return bad("small_jump_threshold must lie in (0, 1]");
        }
        if !(self.t0 > 0.0) {
            return bad("t0 must be positive");
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return bad("burn_in_fraction must lie in [0, 1)");
        }
        if self.batches < 2 {
            return bad("need at least two batches");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymbolEstimate {
    pub value: f64,
    pub std_error: f64,
    pub t_pair: (f64, f64),
    pub n_paths: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Mean and standard error of per-path values, reduced in path order.
fn mean_se(values: &[f64]) -> MeanEstimate {
    let n = values.len() as f64;
    let mut s = NeumaierSum::new();
    s.extend(values.iter().copied());
    let mean = s.value() / n;
    let mut v = NeumaierSum::new();
    v.extend(values.iter().map(|x| (x - mean) * (x - mean)));
    let var = if values.len() > 1 { v.value() / (n - 1.0) } else { 0.0 };
    MeanEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
    }
}

type Observable<'a> = &'a (dyn Fn(&[f64]) -> Vec<f64> + Sync);

/// `(E^x[e^{−(g(X_t)−g(x))'ξ}] − 1)/t` from `n` paths on stream block `block`.
fn h_estimate(stepper: &Stepper, x: &[f64], xi: &[f64], t: f64, cfg: &SimConfig, block: u64, g: Observable<'_>) -> Result<MeanEstimate> {
    let steps = ((t / cfg.dt).round() as usize).max(1);
    let dt = t / steps as f64;
    let n = cfg.n_paths;
    let gx = g(x);
    let vals: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = sim::path_rng(cfg.seed, block * n as u64 + i as u64);
            let end = stepper.run(x, dt, steps, cfg.boundary_policy, &mut rng)?;
            let z: f64 = g(&end.state).iter().zip(&gx).zip(xi).map(|((e, x0), k)| (e - x0) * k).sum();
            Ok((-z).exp_m1() / t)
        })
        .collect::<Result<_>>()?;
    Ok(mean_se(&vals))
}

fn identity(x: &[f64]) -> Vec<f64> {
    x.to_vec()
}

/// Raw difference quotient `−h(t)` (no extrapolation); first-order biased.
pub fn symbol_difference_quotient(model: &ItoLevyModel, x: &[f64], xi: &[f64], t: f64, cfg: &SimConfig) -> Result<MeanEstimate> {
    cfg.validate()?;
    let stepper = Stepper::new(model, cfg.small_jump_threshold)?;
    let h = h_estimate(&stepper, x, xi, t, cfg, 0, &identity)?;
    Ok(MeanEstimate {
        value: -h.value,
        std_error: h.std_error,
    })
}

/// Richardson-extrapolated `λ̂ = −(2h(t₀/2) − h(t₀))`.
pub fn empirical_symbol(model: &ItoLevyModel, x: &[f64], xi: &[f64], cfg: &SimConfig) -> Result<SymbolEstimate> {
    empirical_symbol_with(model, x, xi, cfg, &identity)
}

/// Symbol of the image process `Y = g(X)` at `y = g(x)`; `ξ` lives in the
/// coordinates of `g`.
pub fn empirical_symbol_with(model: &ItoLevyModel, x: &[f64], xi: &[f64], cfg: &SimConfig, g: Observable<'_>) -> Result<SymbolEstimate> {
    cfg.validate()?;
    let t0 = cfg.t0;
    if xi.iter().all(|v| *v == 0.0) {
        return Ok(SymbolEstimate {
            value: 0.0,
            std_error: 0.0,
            t_pair: (t0, t0 / 2.0),
            n_paths: cfg.n_paths,
        });
    }
    let stepper = Stepper::new(model, cfg.small_jump_threshold)?;
    let h1 = h_estimate(&stepper, x, xi, t0, cfg, 0, g)?;
    let h2 = h_estimate(&stepper, x, xi, t0 / 2.0, cfg, 1, g)?;
    Ok(SymbolEstimate {
        value: -(2.0 * h2.value - h1.value),
        std_error: (4.0 * h2.std_error * h2.std_error + h1.std_error * h1.std_error).sqrt(),
        t_pair: (t0, t0 / 2.0),
        n_paths: cfg.n_paths,
    })
}

/// Long-run averages of `e^{−ξ'g(X_t)}` over the post-burn-in part of each
/// path, with batch-means standard errors. `observable` maps the state
/// before the transform is applied (identity for the plain transform).
pub fn ergodic_laplace_with<G>(model: &ItoLevyModel, x0: &[f64], xi_grid: &[Vec<f64>], cfg: &SimConfig, observable: G) -> Result<Vec<MeanEstimate>>
where
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    cfg.validate()?;
    let stepper = Stepper::new(model, cfg.small_jump_threshold)?;
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    let burn = (cfg.burn_in_fraction * steps as f64).round() as usize;
    let kept = steps - burn;
    let batches = cfg.batches;
    if kept < batches {
        return Err(SimError::Config("horizon too short for the requested batches".into()));
    }
    let per_batch = kept / batches;
    let m = xi_grid.len();
    // batch means per path: [path][batch][ξ]
    let per_path: Vec<Vec<Vec<f64>>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = sim::path_rng(cfg.seed, p as u64);
            let mut sums = vec![vec![NeumaierSum::new(); m]; batches];
            let mut state = sim::PathState::new(x0);
            for k in 0..steps {
                stepper.step_path(&mut state, cfg.dt, cfg.boundary_policy, &mut rng, k)?;
                if k >= burn {
                    let b = (k - burn) / per_batch;
                    if b >= batches {
                        continue;
                    }
                    let y = observable(&state.state);
                    for (j, xi) in xi_grid.iter().enumerate() {
                        let z: f64 = y.iter().zip(xi).map(|(a, b)| a * b).sum();
                        sums[b][j].add((-z).exp());
                    }
                }
            }
            Ok(sums.into_iter().map(|row| row.into_iter().map(|s| s.value() / per_batch as f64).collect()).collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..m)
        .map(|j| {
            let means: Vec<f64> = per_path.iter().flat_map(|path| path.iter().map(move |b| b[j])).collect();
            mean_se(&means)
        })
        .collect())
}

pub fn ergodic_laplace(model: &ItoLevyModel, x0: &[f64], xi_grid: &[Vec<f64>], cfg: &SimConfig) -> Result<Vec<MeanEstimate>> {
    ergodic_laplace_with(model, x0, xi_grid, cfg, |x| x.to_vec())
}

/// `(E^x f(X_t) − f(x))/t` for `f = Σ cᵢ e^{−aᵢ'x}`.
pub fn generator_mc(model: &ItoLevyModel, coeffs: &[(f64, Vec<f64>)], x: &[f64], t: f64, cfg: &SimConfig) -> Result<MeanEstimate> {
    cfg.validate()?;
    let stepper = Stepper::new(model, cfg.small_jump_threshold)?;
    let steps = ((t / cfg.dt).round() as usize).max(1);
    let dt = t / steps as f64;
    let n = cfg.n_paths;
    let vals: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = sim::path_rng(cfg.seed, i as u64);
            let end = stepper.run(x, dt, steps, cfg.boundary_policy, &mut rng)?;
            let mut acc = 0.0;
            for (c, a) in coeffs {
                let fx: f64 = a.iter().zip(x).map(|(ai, xi)| ai * xi).sum();
                let ft: f64 = a.iter().zip(&end.state).map(|(ai, xi)| ai * xi).sum();
                // c(e^{−a'X_t} − e^{−a'x}) = c e^{−a'x}(e^{−a'(X_t−x)} − 1)
                acc += c * (-fx).exp() * (-(ft - fx)).exp_m1();
            }
            Ok(acc / t)
        })
        .collect::<Result<_>>()?;
    Ok(mean_se(&vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::LevyTriplet;
    use crate::model::CoefficientMap;

    fn bm() -> ItoLevyModel {
        ItoLevyModel::sde("bm", 1, LevyTriplet::brownian(1, 1.0), CoefficientMap::constant(1, 1, 1, vec![1.0]), false).unwrap()
    }

    #[test]
    fn zero_xi_gives_zero() {
        let e = empirical_symbol(&bm(), &[1.0], &[0.0], &SimConfig::default()).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn seed_determinism() {
        let cfg = SimConfig {
            n_paths: 5000,
            seed: 42,
            ..SimConfig::default()
        };
        let a = empirical_symbol(&bm(), &[1.0], &[2.0], &cfg).unwrap();
        let b = empirical_symbol(&bm(), &[1.0], &[2.0], &cfg).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
        let c = empirical_symbol(&bm(), &[1.0], &[2.0], &SimConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.value.to_bits(), c.value.to_bits());
    }

    #[test]
    fn brownian_symbol_within_band() {
        let e = empirical_symbol(&bm(), &[1.0], &[2.0], &SimConfig::default()).unwrap();
        assert!((e.value + 2.0).abs() < 3.0 * e.std_error, "{e:?}");
    }

    #[test]
    fn frozen_model_stays_put() {
        let m = ItoLevyModel::sde("zero", 1, LevyTriplet::brownian(1, 1.0), CoefficientMap::constant(1, 1, 1, vec![0.0]), true).unwrap();
        let cfg = SimConfig {
            n_paths: 10,
            horizon: 0.1,
            ..SimConfig::default()
        };
        let ens = simulate_paths(&m, &[0.7], &cfg, false).unwrap();
        assert!(ens.terminal.iter().all(|x| x[0] == 0.7));
        let g = generator_mc(&m, &[(1.0, vec![1.0])], &[0.7], 1e-3, &cfg).unwrap();
        assert_eq!(g.value, 0.0);
        let erg = ergodic_laplace(&m, &[0.7], &[vec![1.0]], &SimConfig { horizon: 1.0, ..SimConfig::ergodic() }).unwrap();
        assert!((erg[0].value - (-0.7f64).exp()).abs() < 1e-15);
    }
}

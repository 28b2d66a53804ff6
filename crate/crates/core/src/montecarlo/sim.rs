use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::model::{CoefficientMap, ItoLevyModel, JumpKernel, ModelForm};

use super::sampler::{IncrementSampler, JumpSampler};
use super::{BoundaryPolicy, Result, SimConfig, SimError};

const BLOWUP: f64 = 1e12;
const MAX_REJECTIONS: usize = 100;

pub(crate) fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
pub(crate) struct PathState {
    pub state: Vec<f64>,
    pub absorbed: bool,
    pub boundary_events: u64,
}

impl PathState {
    pub fn new(x0: &[f64]) -> Self {
        PathState {
            state: x0.to_vec(),
            absorbed: false,
            boundary_events: 0,
        }
    }
}

/// One Euler step of a model, in either form.
#[derive(Debug, Clone)]
pub enum Stepper {
    Sde {
        dim: usize,
        phi: CoefficientMap,
        increments: IncrementSampler,
        positive: bool,
    },
    Characteristics {
        dim: usize,
        drift: CoefficientMap,
        diffusion: CoefficientMap,
        jumps: Vec<(CoefficientMap, JumpSampler)>,
        positive: bool,
    },
}

fn sqrt_psd(q: &[f64], d: usize) -> DMatrix<f64> {
    if d == 1 {
        return DMatrix::from_element(1, 1, q[0].max(0.0).sqrt());
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, q));
    let mut s = eig.eigenvalues.clone();
    s.iter_mut().for_each(|v| *v = v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s)
}

impl Stepper {
    pub fn new(model: &ItoLevyModel, eps: f64) -> Result<Self> {
        let positive = model.positivity_asserted();
        Ok(match model.form() {
            ModelForm::Sde { driver, phi } => Stepper::Sde {
                dim: model.dim(),
                phi: phi.clone(),
                increments: IncrementSampler::new(driver, eps)?,
                positive,
            },
            ModelForm::Characteristics { drift, diffusion, kernel } => {
                let jumps = match kernel {
                    JumpKernel::Zero => vec![],
                    JumpKernel::Affine(terms) => terms
                        .iter()
                        .map(|(w, m)| Ok((w.clone(), JumpSampler::new(m, model.dim(), eps)?)))
                        .collect::<Result<_>>()?,
                    JumpKernel::Dynamic { .. } => {
                        return Err(SimError::Unsupported("simulation of state-dependent pushforward kernels".into()));
                    }
                };
                Stepper::Characteristics {
                    dim: model.dim(),
                    drift: drift.clone(),
                    diffusion: diffusion.clone(),
                    jumps,
                    positive,
                }
            }
        })
    }

    fn dim(&self) -> usize {
        match self {
            Stepper::Sde { dim, .. } | Stepper::Characteristics { dim, .. } => *dim,
        }
    }

    fn positive(&self) -> bool {
        match self {
            Stepper::Sde { positive, .. } | Stepper::Characteristics { positive, .. } => *positive,
        }
    }

    fn propose(&self, x: &[f64], dt: f64, rng: &mut ChaCha8Rng, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(x);
        match self {
            Stepper::Sde { dim, phi, increments, .. } => {
                let n = increments.dim();
                let mut dl = vec![0.0; n];
                increments.sample_into(dt, rng, &mut dl);
                let p = phi.eval(x)?;
                for i in 0..*dim {
                    for j in 0..n {
                        out[i] += p[i * n + j] * dl[j];
                    }
                }
            }
            Stepper::Characteristics {
                dim,
                drift,
                diffusion,
                jumps,
                ..
            } => {
                let d = *dim;
                let l = drift.eval(x)?;
                let q = diffusion.eval(x)?;
                for i in 0..d {
                    out[i] += l[i] * dt;
                }
                if q.iter().any(|v| *v != 0.0) {
                    let a = sqrt_psd(&q, d);
                    let sd = dt.sqrt();
                    let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                    for i in 0..d {
                        for j in 0..d {
                            out[i] += sd * a[(i, j)] * z[j];
                        }
                    }
                }
                for (w, sampler) in jumps {
                    let wx = w.eval_scalar(x)?;
                    sampler.add_sample(wx.max(0.0) * dt, rng, out);
                }
            }
        }
        Ok(())
    }

    /// Advance one step, applying the boundary policy when the model asserts
    /// positivity; otherwise the state space is all of `ℝᵈ`.
    pub(crate) fn step_path(&self, s: &mut PathState, dt: f64, policy: BoundaryPolicy, rng: &mut ChaCha8Rng, k: usize) -> Result<()> {
        if s.absorbed {
            return Ok(());
        }
        let mut next = vec![0.0; self.dim()];
        self.propose(&s.state, dt, rng, &mut next)?;
        if self.positive() && next.iter().any(|v| *v < 0.0) {
            match policy {
                BoundaryPolicy::ReflectToZeroClip => {
                    next.iter_mut().for_each(|v| *v = v.max(0.0));
                    s.boundary_events += 1;
                }
                BoundaryPolicy::Absorb => {
                    next.iter_mut().for_each(|v| *v = v.max(0.0));
                    s.absorbed = true;
                    s.boundary_events += 1;
                }
                BoundaryPolicy::RejectStep => {
                    let mut ok = false;
                    for _ in 0..MAX_REJECTIONS {
                        self.propose(&s.state, dt, rng, &mut next)?;
                        if next.iter().all(|v| *v >= 0.0) {
                            ok = true;
                            break;
                        }
                    }
                    if !ok {
                        next.iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                    s.boundary_events += 1;
                }
            }
        }
        if next.iter().any(|v| !(v.abs() <= BLOWUP)) {
            return Err(SimError::Blowup { t: (k + 1) as f64 * dt });
        }
        s.state = next;
        Ok(())
    }

    pub(crate) fn run(&self, x0: &[f64], dt: f64, steps: usize, policy: BoundaryPolicy, rng: &mut ChaCha8Rng) -> Result<PathState> {
        let mut s = PathState::new(x0);
        for k in 0..steps {
            self.step_path(&mut s, dt, policy, rng, k)?;
        }
        Ok(s)
    }
}

#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub terminal: Vec<Vec<f64>>,
    /// Full grids `[path][step][coordinate]` when requested.
    pub grids: Option<Vec<Vec<Vec<f64>>>>,
    pub times: Vec<f64>,
    pub boundary_events: u64,
}

/// Euler paths `X_{k+1} = X_k + Φ(X_k)ΔL_k` (or the characteristics
/// analogue) up to `cfg.horizon`.
pub fn simulate_paths(model: &ItoLevyModel, x0: &[f64], cfg: &SimConfig, keep_grid: bool) -> Result<PathEnsemble> {
    cfg.validate()?;
    if x0.len() != model.dim() {
        return Err(SimError::Config(format!("x0 has length {}, model dimension {}", x0.len(), model.dim())));
    }
    let stepper = Stepper::new(model, cfg.small_jump_threshold)?;
    let steps = (cfg.horizon / cfg.dt).round().max(1.0) as usize;
    let dt = cfg.horizon / steps as f64;
    let paths: Vec<(Vec<f64>, Option<Vec<Vec<f64>>>, u64)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(cfg.seed, i as u64);
            let mut s = PathState::new(x0);
            let mut grid = keep_grid.then(|| {
                let mut g = Vec::with_capacity(steps + 1);
                g.push(x0.to_vec());
                g
            });
            for k in 0..steps {
                stepper.step_path(&mut s, dt, cfg.boundary_policy, &mut rng, k)?;
                if let Some(g) = grid.as_mut() {
                    g.push(s.state.clone());
                }
            }
            Ok((s.state, grid, s.boundary_events))
        })
        .collect::<Result<_>>()?;
    let boundary_events = paths.iter().map(|p| p.2).sum();
    let times = (0..=steps).map(|k| k as f64 * dt).collect();
    let (terminal, grids): (Vec<_>, Vec<_>) = paths.into_iter().map(|(t, g, _)| (t, g)).unzip();
    Ok(PathEnsemble {
        terminal,
        grids: if keep_grid { Some(grids.into_iter().map(|g| g.unwrap_or_default()).collect()) } else { None },
        times,
        boundary_events,
    })
}

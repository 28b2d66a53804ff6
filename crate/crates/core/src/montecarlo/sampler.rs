//! Exact or near-exact samplers for Lévy increments.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, Normal, Poisson, StandardNormal};
use statrs::function::gamma::gamma;

use crate::levy::{JumpLaw, LevyError, LevyMeasure, LevyTriplet};
use crate::numeric::logspace;
use crate::quad::kronrod21;

use super::SimError;

/// Inverse-CDF table for big jumps on one side of the origin.
#[derive(Debug, Clone)]
pub struct SideTable {
    sign: f64,
    mass: f64,
    // log|y| nodes and cumulative mass at each node
    log_nodes: Vec<f64>,
    cumulative: Vec<f64>,
}

impl SideTable {
    fn build(n: &dyn Fn(f64) -> f64, sign: f64, eps: f64, bound: f64) -> Option<Self> {
        let hi = bound.min(1e8);
        if hi <= eps {
            return None;
        }
        let nodes = logspace(eps, hi, 2049);
        let log_nodes: Vec<f64> = nodes.iter().map(|v| v.ln()).collect();
        let mut cumulative = vec![0.0];
        let mut acc = 0.0;
        for w in log_nodes.windows(2) {
            acc += kronrod21(
                |s| {
                    let y = s.exp();
                    n(sign * y) * y
                },
                w[0],
                w[1],
            );
            cumulative.push(acc);
        }
        if acc <= 0.0 {
            return None;
        }
        Some(SideTable {
            sign,
            mass: acc,
            log_nodes,
            cumulative,
        })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let target = rng.random::<f64>() * self.mass;
        let i = self.cumulative.partition_point(|c| *c < target).clamp(1, self.cumulative.len() - 1);
        let (c0, c1) = (self.cumulative[i - 1], self.cumulative[i]);
        let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
        let s = self.log_nodes[i - 1] + frac * (self.log_nodes[i] - self.log_nodes[i - 1]);
        self.sign * s.exp()
    }
}

/// Sampler for the compensated jump part `Σ ΔL − t∫_{|y|<1} y N(dy)` of a
/// Lévy measure over a time span `t`.
#[derive(Debug, Clone)]
pub enum JumpSampler {
    Zero { dim: usize },
    Atoms { atoms: Vec<(Vec<f64>, f64)>, mass: f64, compensator: Vec<f64> },
    CompoundPoisson { rate: f64, law: JumpLaw, compensator: f64 },
    PositiveStable { alpha: f64, scale: f64, compensator: f64 },
    SymmetricStable { alpha: f64, char_scale: f64 },
    Gamma { shape: f64, rate: f64, compensator: f64 },
    Density { small_var: f64, big_mass: f64, sides: Vec<SideTable>, compensator: f64 },
    Blocks(Vec<JumpSampler>),
}

impl JumpSampler {
    pub fn new(m: &LevyMeasure, dim: usize, eps: f64) -> Result<Self, SimError> {
        Ok(match m {
            LevyMeasure::Zero => JumpSampler::Zero { dim },
            LevyMeasure::Atoms(atoms) => JumpSampler::Atoms {
                atoms: atoms.clone(),
                mass: m.total_mass()?,
                compensator: m.cutoff_mean(dim)?,
            },
            LevyMeasure::CompoundPoisson { rate, law } => JumpSampler::CompoundPoisson {
                rate: *rate,
                law: *law,
                compensator: m.cutoff_mean(1)?[0],
            },
            LevyMeasure::Stable { alpha, scale, one_sided } => {
                if *one_sided {
                    JumpSampler::PositiveStable {
                        alpha: *alpha,
                        scale: *scale,
                        compensator: m.cutoff_mean(1)?[0],
                    }
                } else {
                    // ∫(1 − cos θy) s|y|^{−1−α} dy = s·C(α)·|θ|^α
                    let c = if (*alpha - 1.0).abs() < 1e-12 {
                        PI
                    } else {
                        2.0 * gamma(1.0 - alpha) * (PI * alpha / 2.0).cos() / alpha
                    };
                    JumpSampler::SymmetricStable {
                        alpha: *alpha,
                        char_scale: scale * c,
                    }
                }
            }
            LevyMeasure::Gamma { shape, rate } => JumpSampler::Gamma {
                shape: *shape,
                rate: *rate,
                compensator: m.cutoff_mean(1)?[0],
            },
            LevyMeasure::Density(spec) => {
                if spec.singularity_order.is_none() {
                    return Err(SimError::Levy(LevyError::UnsupportedDensity));
                }
                let small_var = m.small_jump_variance(eps)?;
                let n = spec.density.clone();
                let mut sides = Vec::new();
                if spec.upper > eps {
                    sides.extend(SideTable::build(&|y| n(y), 1.0, eps.max(spec.lower), spec.upper));
                }
                if spec.lower < -eps {
                    sides.extend(SideTable::build(&|y| n(y), -1.0, eps.max(-spec.upper), -spec.lower));
                }
                let big_mass = sides.iter().map(|s| s.mass).sum();
                let compensator = m.integrate_1d(&|y| if y.abs() >= eps && y.abs() < 1.0 { y } else { 0.0 }, &[eps, -eps])?;
                JumpSampler::Density {
                    small_var,
                    big_mass,
                    sides,
                    compensator,
                }
            }
            LevyMeasure::Independent(blocks) => {
                JumpSampler::Blocks(blocks.iter().map(|(d, b)| JumpSampler::new(b, *d, eps)).collect::<Result<_, _>>()?)
            }
            LevyMeasure::Linear { .. } | LevyMeasure::Mapped { .. } => {
                return Err(SimError::Unsupported("sampling of pushforward measures".into()));
            }
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            JumpSampler::Zero { dim } => *dim,
            JumpSampler::Atoms { compensator, .. } => compensator.len(),
            JumpSampler::Blocks(b) => b.iter().map(|s| s.dim()).sum(),
            _ => 1,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            JumpSampler::Zero { .. } => true,
            JumpSampler::Blocks(b) => b.iter().all(|s| s.is_zero()),
            _ => false,
        }
    }

    /// Adds a sample of the compensated jump part over time `t` to `out`.
    pub fn add_sample<R: Rng + ?Sized>(&self, t: f64, rng: &mut R, out: &mut [f64]) {
        if t <= 0.0 {
            return;
        }
        match self {
            JumpSampler::Zero { .. } => {}
            JumpSampler::Atoms { atoms, mass, compensator } => {
                for (o, c) in out.iter_mut().zip(compensator) {
                    *o -= t * c;
                }
                let k = poisson(mass * t, rng);
                for _ in 0..k {
                    let mut target = rng.random::<f64>() * mass;
                    let mut chosen = &atoms[atoms.len() - 1].0;
                    for (y, m) in atoms {
                        if target < *m {
                            chosen = y;
                            break;
                        }
                        target -= m;
                    }
                    for (o, v) in out.iter_mut().zip(chosen) {
                        *o += v;
                    }
                }
            }
            JumpSampler::CompoundPoisson { rate, law, compensator } => {
                out[0] -= t * compensator;
                let k = poisson(rate * t, rng);
                for _ in 0..k {
                    out[0] += sample_law(law, rng);
                }
            }
            JumpSampler::PositiveStable { alpha, scale, compensator } => {
                out[0] += (scale * t).powf(1.0 / alpha) * positive_stable(*alpha, rng) - t * compensator;
            }
            JumpSampler::SymmetricStable { alpha, char_scale } => {
                out[0] += (char_scale * t).powf(1.0 / alpha) * symmetric_stable(*alpha, rng);
            }
            JumpSampler::Gamma { shape, rate, compensator } => {
                let g = Gamma::new(shape * t, 1.0 / rate).expect("positive gamma parameters");
                out[0] += g.sample(rng) - t * compensator;
            }
            JumpSampler::Density {
                small_var,
                big_mass,
                sides,
                compensator,
            } => {
                let z: f64 = StandardNormal.sample(rng);
                out[0] += (small_var * t).sqrt() * z - t * compensator;
                let k = poisson(big_mass * t, rng);
                for _ in 0..k {
                    let mut target = rng.random::<f64>() * big_mass;
                    let mut side = &sides[sides.len() - 1];
                    for s in sides {
                        if target < s.mass {
                            side = s;
                            break;
                        }
                        target -= s.mass;
                    }
                    out[0] += side.sample(rng);
                }
            }
            JumpSampler::Blocks(blocks) => {
                let mut start = 0;
                for b in blocks {
                    let d = b.dim();
                    b.add_sample(t, rng, &mut out[start..start + d]);
                    start += d;
                }
            }
        }
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive Poisson mean").sample(rng) as u64
}

fn sample_law<R: Rng + ?Sized>(law: &JumpLaw, rng: &mut R) -> f64 {
    match *law {
        JumpLaw::Exponential { rate } => {
            let e: f64 = Exp1.sample(rng);
            e / rate
        }
        JumpLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        JumpLaw::Normal { mean, std } => Normal::new(mean, std).expect("valid normal").sample(rng),
    }
}

/// Kanter's representation: `E e^{−uS} = e^{−u^α}` for `α ∈ (0,1)`.
pub fn positive_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u = PI * open01(rng);
    let e: f64 = Exp1.sample(rng);
    let a = (alpha * u).sin() / u.sin().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * u).sin() / e).powf((1.0 - alpha) / alpha);
    a * b
}

/// Chambers–Mallows–Stuck, symmetric case: `E e^{iθS} = e^{−|θ|^α}`.
pub fn symmetric_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let v = PI * (open01(rng) - 0.5);
    if (alpha - 1.0).abs() < 1e-12 {
        return v.tan();
    }
    let w: f64 = Exp1.sample(rng);
    (alpha * v).sin() / v.cos().powf(1.0 / alpha) * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha)
}

fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Sampler for increments `ℓt + Q^{1/2}W_t + jumps` of a Lévy triplet.
#[derive(Debug, Clone)]
pub struct IncrementSampler {
    drift: Vec<f64>,
    cov_sqrt: Option<DMatrix<f64>>,
    jumps: JumpSampler,
}

impl IncrementSampler {
    pub fn new(t: &LevyTriplet, eps: f64) -> Result<Self, SimError> {
        let cov_sqrt = if t.covariance().iter().all(|v| *v == 0.0) { None } else { Some(t.covariance_sqrt()) };
        Ok(IncrementSampler {
            drift: t.drift().to_vec(),
            cov_sqrt,
            jumps: JumpSampler::new(t.measure(), t.dim(), eps)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R, out: &mut [f64]) {
        let n = self.drift.len();
        for (o, l) in out.iter_mut().zip(&self.drift) {
            *o = l * dt;
        }
        if let Some(a) = &self.cov_sqrt {
            let sd = dt.sqrt();
            let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += a[(i, j)] * z[j];
                }
                out[i] += sd * acc;
            }
        }
        self.jumps.add_sample(dt, rng, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pure_drift_is_deterministic() {
        let s = IncrementSampler::new(&LevyTriplet::pure_drift(vec![2.5]), 1e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut out = [0.0];
        s.sample_into(0.01, &mut rng, &mut out);
        assert_eq!(out[0], 0.025);
    }

    #[test]
    fn poisson_increment_mean() {
        // rate c, jump 1 (large jump: no compensator), Δt = 0.01
        let c = 5.0;
        let t = LevyTriplet::new(vec![0.0], DMatrix::zeros(1, 1), LevyMeasure::atoms(vec![(vec![1.0], c)]).unwrap()).unwrap();
        let s = IncrementSampler::new(&t, 1e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let mut out = [0.0];
            s.sample_into(0.01, &mut rng, &mut out);
            sum += out[0];
        }
        let mean = sum / n as f64;
        let want = c * 0.01;
        let sd = (c * 0.01 / n as f64).sqrt();
        assert!((mean - want).abs() < 4.0 * sd, "{mean} vs {want} ± {sd}");
    }

    #[test]
    fn stable_subordinator_laplace_transform() {
        let t = LevyTriplet::subordinator(0.0, LevyMeasure::stable(0.5, 1.0, true).unwrap()).unwrap();
        let s = IncrementSampler::new(&t, 1e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, dt, xi) = (400_000, 0.01, 1.0);
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                let mut out = [0.0];
                s.sample_into(dt, &mut rng, &mut out);
                assert!(out[0] >= 0.0);
                (-xi * out[0]).exp()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let want = (-dt * 1.0f64).exp();
        assert!((mean - want).abs() < 4.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn symmetric_stable_characteristic_function() {
        let alpha = 1.5;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let theta = 0.8;
        let mean = (0..n).map(|_| (theta * symmetric_stable(alpha, &mut rng)).cos()).sum::<f64>() / n as f64;
        let want = (-(theta as f64).powf(alpha)).exp();
        assert!((mean - want).abs() < 4.0 * (0.5 / n as f64).sqrt());
    }

    #[test]
    fn gamma_increment_laplace_transform() {
        let t = LevyTriplet::subordinator(0.0, LevyMeasure::gamma(2.0, 3.0).unwrap()).unwrap();
        let s = IncrementSampler::new(&t, 1e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, dt, xi) = (200_000, 0.5, 2.0);
        let mean = (0..n)
            .map(|_| {
                let mut out = [0.0];
                s.sample_into(dt, &mut rng, &mut out);
                (-xi * out[0]).exp()
            })
            .sum::<f64>()
            / n as f64;
        let want = (-dt * t.laplace_exponent(xi).unwrap()).exp();
        assert!((mean - want).abs() < 4.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn density_sampler_requires_singularity_order() {
        let spec = crate::levy::DensitySpec {
            density: std::sync::Arc::new(|y: f64| (-y).exp() / y),
            lower: 0.0,
            upper: f64::INFINITY,
            singularity_order: None,
            label: "g".into(),
        };
        let m = LevyMeasure::density(spec).unwrap();
        assert!(matches!(JumpSampler::new(&m, 1, 1e-3), Err(SimError::Levy(LevyError::UnsupportedDensity))));
    }

    #[test]
    fn density_sampler_matches_gamma_exponent() {
        // gamma measure as a density; Gaussian small-jump substitution below ε
        let spec = crate::levy::DensitySpec {
            density: std::sync::Arc::new(|y: f64| 2.0 * (-3.0 * y).exp() / y),
            lower: 0.0,
            upper: f64::INFINITY,
            singularity_order: Some(0.0),
            label: "gamma".into(),
        };
        let t = LevyTriplet::subordinator(0.0, LevyMeasure::density(spec).unwrap()).unwrap();
        let s = IncrementSampler::new(&t, 1e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, dt, xi) = (200_000, 0.5, 2.0);
        let mean = (0..n)
            .map(|_| {
                let mut out = [0.0];
                s.sample_into(dt, &mut rng, &mut out);
                (-xi * out[0]).exp()
            })
            .sum::<f64>()
            / n as f64;
        let want = (-dt * 2.0 * (1.0f64 + xi / 3.0).ln()).exp();
        assert!((mean - want).abs() < 4.0 * (0.25 / n as f64).sqrt() + 1e-4, "{mean} vs {want}");
    }
}

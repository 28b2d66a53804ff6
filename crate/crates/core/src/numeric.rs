//! Small numerical helpers shared across modules.

/// Compensated (Neumaier) accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl Extend<f64> for NeumaierSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for v in iter {
            self.add(v);
        }
    }
}

pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = NeumaierSum::new();
    acc.extend(values);
    acc.value()
}

/// `e^{-z} - 1 + z`, accurate for small `|z|`.
///
/// Below the switch radius the Taylor series `z^2/2 - z^3/6 + ...` is summed
/// until the terms drop below machine precision.
pub fn exp_remainder(z: f64) -> f64 {
    if z.abs() < 0.5 {
        let mut term = z * z / 2.0;
        let mut sum = term;
        let mut n = 2.0;
        loop {
            n += 1.0;
            term *= -z / n;
            sum += term;
            if term.abs() <= f64::EPSILON * 1e-3 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        (-z).exp_m1() + z
    }
}

/// `1 - e^{-z}` without cancellation near zero.
pub fn one_minus_exp_neg(z: f64) -> f64 {
    -(-z).exp_m1()
}

/// Radical inverse of `index` in the given base (van der Corput / Halton).
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv_base = 1.0 / base as f64;
    let mut factor = inv_base;
    let mut result = 0.0;
    while index > 0 {
        result += (index % base) as f64 * factor;
        index /= base;
        factor *= inv_base;
    }
    result
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Point `index` (1-based is recommended) of the Halton sequence in `[0,1)^dim`.
pub fn halton_point(index: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "halton dimension limited to {}", PRIMES.len());
    (0..dim).map(|k| radical_inverse(index, PRIMES[k])).collect()
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > 0.0);
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Chebyshev points of the first kind mapped to `[lo, hi]`.
pub fn chebyshev_nodes(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let t = (std::f64::consts::PI * (2 * j + 1) as f64 / (2 * n) as f64).cos();
            0.5 * (lo + hi) + 0.5 * (hi - lo) * t
        })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rising factorial `k (k+1) ... (k+j-1)`.
pub fn rising_factorial(k: f64, j: usize) -> f64 {
    (0..j).fold(1.0, |acc, i| acc * (k + i as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_remainder_matches_series_and_direct() {
        for &z in &[1e-12, 1e-6, 1e-4, 0.1, 0.49, 0.51, 2.0, -0.3, -3.0] {
            let direct = (-z as f64).exp() - 1.0 + z;
            let r = exp_remainder(z);
            if z.abs() > 0.1 {
                assert!((r - direct).abs() <= 1e-14 * direct.abs().max(1e-300) * 10.0);
            }
            // leading behaviour
            if z.abs() < 1e-3 {
                assert!((r / (z * z / 2.0) - 1.0).abs() < 1e-3);
            }
        }
        // continuity across the switch radius
        let a = exp_remainder(0.5 - 1e-12);
        let b = exp_remainder(0.5 + 1e-12);
        assert!((a - b - (1.0 - (-0.5f64).exp()) * -2e-12).abs() < 1e-15);
    }

    #[test]
    fn neumaier_beats_naive() {
        let vals = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(neumaier_sum(vals), 2.0);
    }

    #[test]
    fn halton_first_points() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert!((radical_inverse(1, 3) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn logspace_endpoints() {
        let g = logspace(1e-2, 1e2, 40);
        assert_eq!(g.len(), 40);
        assert_eq!(g[0], 1e-2);
        assert_eq!(g[39], 1e2);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}

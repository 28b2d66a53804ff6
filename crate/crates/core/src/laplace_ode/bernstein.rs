//! Complete-monotonicity diagnostics: signs of `(−1)^k ψ^{(k)}` estimated by
//! Chebyshev differentiation on dyadic pieces of the ξ range.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernsteinOptions {
    pub max_order: usize,
    /// Scale-relative tolerance on `(−1)^k ψ^{(k)}`.
    pub tol: f64,
    pub nodes: usize,
    /// Chebyshev coefficients below `chop · max|c|` are treated as noise.
    pub chop: f64,
}

impl Default for BernsteinOptions {
    fn default() -> Self {
        BernsteinOptions {
            max_order: 6,
            tol: 1e-7,
            nodes: 24,
            chop: 1e-13,
        }
    }
}

impl BernsteinOptions {
    /// Settings for values that carry integration error near `rel_noise`.
    pub fn for_sampled(rel_noise: f64) -> Self {
        BernsteinOptions {
            nodes: 16,
            chop: (100.0 * rel_noise).max(1e-13),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BernsteinViolation {
    pub order: usize,
    pub xi: f64,
    /// `(−1)^k ψ^{(k)}(ξ)`.
    pub value: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BernsteinDiagnostics {
    pub max_order: usize,
    pub tol: f64,
    pub passed: bool,
    pub first_failing_order: Option<usize>,
    pub violations: Vec<BernsteinViolation>,
}

/// Dyadic partition of `[lo, hi]` with Chebyshev nodes on each piece.
#[derive(Debug, Clone, PartialEq)]
pub struct BernsteinLayout {
    intervals: Vec<(f64, f64)>,
    nodes: usize,
}

impl BernsteinLayout {
    pub fn new(lo: f64, hi: f64, nodes: usize) -> Self {
        assert!(lo > 0.0 && hi > lo && nodes >= 4);
        let mut intervals = Vec::new();
        let mut a = lo;
        while a < hi {
            let b = (2.0 * a).min(hi);
            // avoid a sliver at the end
            let b = if hi / b < 1.05 { hi } else { b };
            intervals.push((a, b));
            a = b;
        }
        BernsteinLayout { intervals, nodes }
    }

    fn local_nodes(&self) -> Vec<f64> {
        let n = self.nodes;
        (0..n)
            .rev()
            .map(|j| (std::f64::consts::PI * (2 * j + 1) as f64 / (2 * n) as f64).cos())
            .collect()
    }

    /// All nodes, ascending.
    pub fn points(&self) -> Vec<f64> {
        let t = self.local_nodes();
        self.intervals
            .iter()
            .flat_map(|&(a, b)| t.iter().map(move |s| 0.5 * (a + b) + 0.5 * (b - a) * s))
            .collect()
    }
}

fn cheb_coeffs(values: &[f64]) -> Vec<f64> {
    // values are at ascending nodes, i.e. θ_j for j = n−1, …, 0
    let n = values.len();
    let mut c = vec![0.0; n];
    for (k, ck) in c.iter_mut().enumerate() {
        let mut s = 0.0;
        for (idx, v) in values.iter().enumerate() {
            let j = n - 1 - idx;
            let theta = std::f64::consts::PI * (2 * j + 1) as f64 / (2 * n) as f64;
            s += v * (k as f64 * theta).cos();
        }
        *ck = 2.0 * s / n as f64;
    }
    c[0] *= 0.5;
    c
}

fn cheb_derivative(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    if n <= 1 {
        return vec![0.0];
    }
    let mut d = vec![0.0; n - 1];
    for k in (1..n).rev() {
        let next = if k + 1 < n - 1 { d[k + 1] } else { 0.0 };
        let val = next + 2.0 * k as f64 * c[k];
        if k - 1 < d.len() {
            d[k - 1] = val;
        }
    }
    d[0] *= 0.5;
    d
}

fn clenshaw(c: &[f64], t: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &ck in c.iter().skip(1).rev() {
        let b0 = 2.0 * t * b1 - b2 + ck;
        b2 = b1;
        b1 = b0;
    }
    t * b1 - b2 + c[0]
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Check sampled values laid out as in [`BernsteinLayout::points`].
pub fn bernstein_check_sampled(layout: &BernsteinLayout, values: &[f64], opts: &BernsteinOptions) -> BernsteinDiagnostics {
    assert_eq!(values.len(), layout.intervals.len() * layout.nodes);
    let t_nodes = layout.local_nodes();
    let mut probe: Vec<f64> = vec![-1.0];
    probe.extend(t_nodes.iter().copied());
    probe.push(1.0);
    let mut violations = Vec::new();
    for (piece, &(a, b)) in values.chunks(layout.nodes).zip(&layout.intervals) {
        let mut c = cheb_coeffs(piece);
        let cmax = c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        c.iter_mut().for_each(|v| {
            if v.abs() < opts.chop * cmax {
                *v = 0.0
            }
        });
        let sup = piece.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut deriv = c;
        for k in 0..=opts.max_order {
            if k > 0 {
                deriv = cheb_derivative(&deriv);
                deriv.iter_mut().for_each(|v| *v /= half);
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let vals: Vec<f64> = probe.iter().map(|&t| sign * clenshaw(&deriv, t)).collect();
            let local = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let natural = sup * factorial(k) / mid.powi(k as i32);
            let scale = local.max(natural);
            for (&t, &v) in probe.iter().zip(&vals) {
                if v < -opts.tol * scale {
                    violations.push(BernsteinViolation {
                        order: k,
                        xi: mid + half * t,
                        value: v,
                        scale,
                    });
                }
            }
        }
    }
    let first_failing_order = violations.iter().map(|v| v.order).min();
    BernsteinDiagnostics {
        max_order: opts.max_order,
        tol: opts.tol,
        passed: violations.is_empty(),
        first_failing_order,
        violations,
    }
}

/// Check a callable over the range spanned by `grid`.
pub fn bernstein_check(psi: &dyn Fn(f64) -> f64, max_order: usize, grid: &[f64]) -> BernsteinDiagnostics {
    let opts = BernsteinOptions {
        max_order,
        ..BernsteinOptions::default()
    };
    bernstein_check_with(psi, grid, &opts)
}

pub fn bernstein_check_with(psi: &dyn Fn(f64) -> f64, grid: &[f64], opts: &BernsteinOptions) -> BernsteinDiagnostics {
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().copied().fold(0.0, f64::max);
    let layout = BernsteinLayout::new(lo, hi, opts.nodes);
    let values: Vec<f64> = layout.points().into_iter().map(psi).collect();
    bernstein_check_sampled(&layout, &values, opts)
}

//! Globally adaptive Gauss-Kronrod (10/21) quadrature.
//!
//! The driver keeps a pool of subintervals and repeatedly bisects the one with
//! the largest error estimate until the summed estimate meets
//! `max(abs_tol, rel_tol * |value|)`. Integrals over `(0, inf)` or with an
//! endpoint singularity at zero go through [`integrate_log_scale`], which
//! substitutes `y = e^s` so algebraic behaviour near zero becomes
//! exponential decay in `s`.

use thiserror::Error;

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-300,
            rel_tol: 1e-12,
            max_intervals: 4000,
        }
    }
}

impl QuadOptions {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum QuadError {
    #[error("integrand is not finite at {at}")]
    NonFinite { at: f64 },
    #[error("tolerance not met within budget: value {value}, error estimate {error}")]
    Budget { value: f64, error: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    /// Further bisection cannot improve the estimate.
    exhausted: bool,
}

fn gk21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64, f64), QuadError> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    if !fc.is_finite() {
        return Err(QuadError::NonFinite { at: center });
    }
    let mut res_g = 0.0;
    let mut res_k = WGK[10] * fc;
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let (x1, x2) = (center - dx, center + dx);
        let (f1, f2) = (f(x1), f(x2));
        if !f1.is_finite() {
            return Err(QuadError::NonFinite { at: x1 });
        }
        if !f2.is_finite() {
            return Err(QuadError::NonFinite { at: x2 });
        }
        fv1[j] = f1;
        fv2[j] = f2;
        let s = f1 + f2;
        res_k += WGK[j] * s;
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * s;
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    let res_abs = res_abs * half.abs();
    let res_asc = res_asc * half.abs();
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok((value, err, res_abs))
}

/// Integrate `f` over the union of the given (ordered, adjacent or disjoint)
/// intervals with a single global error budget.
pub fn integrate_intervals<F: FnMut(f64) -> f64>(
    mut f: F,
    intervals: &[(f64, f64)],
    opts: &QuadOptions,
) -> Result<QuadResult, QuadError> {
    let mut pieces: Vec<Piece> = Vec::with_capacity(intervals.len() * 4);
    let mut evaluations = 0;
    for &(a, b) in intervals {
        if a == b {
            continue;
        }
        let (value, error, _) = gk21(&mut f, a, b)?;
        evaluations += 21;
        pieces.push(Piece {
            a,
            b,
            value,
            error,
            exhausted: false,
        });
    }
    loop {
        let total: f64 = pieces.iter().map(|p| p.value).sum();
        let err: f64 = pieces.iter().map(|p| p.error).sum();
        let target = opts.abs_tol.max(opts.rel_tol * total.abs());
        if err <= target {
            return Ok(QuadResult {
                value: total,
                error: err,
                evaluations,
            });
        }
        let worst = pieces
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.exhausted)
            .max_by(|a, b| a.1.error.total_cmp(&b.1.error))
            .map(|(i, _)| i);
        let Some(i) = worst else {
            // Every piece is at roundoff resolution; the estimate is as good as
            // it gets.
            if err <= 1e3 * target {
                return Ok(QuadResult {
                    value: total,
                    error: err,
                    evaluations,
                });
            }
            return Err(QuadError::Budget { value: total, error: err });
        };
        if pieces.len() >= opts.max_intervals {
            return Err(QuadError::Budget { value: total, error: err });
        }
        let p = pieces[i];
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a.min(p.b) || mid >= p.a.max(p.b) || (p.b - p.a).abs() < 1e3 * f64::EPSILON * mid.abs().max(f64::MIN_POSITIVE) {
            pieces[i].exhausted = true;
            continue;
        }
        let (v1, e1, _) = gk21(&mut f, p.a, mid)?;
        let (v2, e2, _) = gk21(&mut f, mid, p.b)?;
        evaluations += 42;
        let improved = e1 + e2 < p.error || (v1 + v2 - p.value).abs() > 0.0;
        pieces[i] = Piece {
            a: p.a,
            b: mid,
            value: v1,
            error: e1,
            exhausted: !improved,
        };
        pieces.push(Piece {
            a: mid,
            b: p.b,
            value: v2,
            error: e2,
            exhausted: !improved,
        });
    }
}

/// Integrate over `[a, b]` with interior breakpoints where the integrand is
/// discontinuous or kinked.
pub fn integrate<F: FnMut(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    opts: &QuadOptions,
) -> Result<QuadResult, QuadError> {
    let mut pts = vec![a];
    pts.extend(breakpoints.iter().copied().filter(|&p| p > a && p < b));
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let intervals: Vec<_> = pts.windows(2).map(|w| (w[0], w[1])).collect();
    integrate_intervals(f, &intervals, opts)
}

/// Integrate over `[lo, hi]` with `0 < lo < hi` (either may be extreme, e.g.
/// `1e-300` and `1e300`) using the substitution `y = e^s`.
///
/// Breakpoints are given in the original variable.
pub fn integrate_log_scale<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    breakpoints: &[f64],
    opts: &QuadOptions,
) -> Result<QuadResult, QuadError> {
    assert!(lo > 0.0 && hi > lo, "log-scale quadrature needs 0 < lo < hi");
    let (slo, shi) = (lo.ln(), hi.ln());
    let mut cuts = vec![slo, shi];
    cuts.extend(
        breakpoints
            .iter()
            .filter(|&&p| p > lo && p < hi)
            .map(|p| p.ln()),
    );
    // geometric partition around s = 0 so that features at moderate scales
    // are resolved from the first pass
    let mut w = 1.0;
    while w < 1024.0 {
        for s in [-w, w] {
            if s > slo && s < shi {
                cuts.push(s);
            }
        }
        w *= 2.0;
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let intervals: Vec<_> = cuts.windows(2).map(|w| (w[0], w[1])).collect();
    let res = integrate_intervals(
        |s| {
            let y = s.exp();
            let v = f(y);
            if v == 0.0 {
                0.0
            } else {
                v * y
            }
        },
        &intervals,
        opts,
    );
    res.map_err(|e| match e {
        QuadError::NonFinite { at } => QuadError::NonFinite { at: at.exp() },
        other => other,
    })
}

/// Fixed 21-point Kronrod rule on `[a, b]` (no adaptivity).
pub fn kronrod21<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = WGK[10] * f(center);
    for j in 0..10 {
        let dx = half * XGK[j];
        acc += WGK[j] * (f(center - dx) + f(center + dx));
    }
    acc * half
}

//! Dormand–Prince 5(4) with step-size control.

#[derive(Debug, Clone, Copy)]
pub(crate) struct RkOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for RkOptions {
    fn default() -> Self {
        RkOptions {
            rtol: 1e-10,
            atol: 1e-300,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum RkFailure {
    /// Step budget exhausted at the given time.
    Budget { t: f64, steps: usize },
    /// Right-hand side returned a non-finite value or an error.
    Rhs { t: f64 },
    /// Step size underflowed.
    StepUnderflow { t: f64 },
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate `y' = f(t, y)` from `t0` through each of the increasing output
/// times, landing on them exactly. Returns the state at every output time and
/// the number of accepted steps.
pub(crate) fn integrate<F>(mut f: F, t0: f64, y0: &[f64], outputs: &[f64], opts: &RkOptions) -> Result<(Vec<Vec<f64>>, usize), RkFailure>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> bool,
{
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut out = Vec::with_capacity(outputs.len());
    let mut h = 1e-3_f64;
    let mut steps = 0usize;
    if !f(t, &y, &mut k[0]) {
        return Err(RkFailure::Rhs { t });
    }
    for &target in outputs {
        while t < target {
            if steps >= opts.max_steps {
                return Err(RkFailure::Budget { t, steps });
            }
            let last = t + h >= target;
            let step = if last { target - t } else { h };
            if step <= 1e-14 * t.abs().max(1.0) && !last {
                return Err(RkFailure::StepUnderflow { t });
            }
            let mut ok = true;
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for j in 0..s {
                        acc += step * A[s][j] * k[j][i];
                    }
                    tmp[i] = acc;
                }
                let (_, tail) = k.split_at_mut(s);
                if !f(t + C[s] * step, &tmp, &mut tail[0]) {
                    ok = false;
                    break;
                }
            }
            let mut err = 0.0_f64;
            if ok {
                for i in 0..n {
                    let mut acc = y[i];
                    let mut e = 0.0;
                    for s in 0..7 {
                        acc += step * B[s] * k[s][i];
                        e += step * E[s] * k[s][i];
                    }
                    y_new[i] = acc;
                    let sc = opts.atol + opts.rtol * y[i].abs().max(acc.abs());
                    err = err.max((e / sc).abs());
                }
                ok = err.is_finite();
            }
            if !ok {
                h = step * 0.25;
                if h < 1e-300 {
                    return Err(RkFailure::Rhs { t });
                }
                continue;
            }
            if err <= 1.0 {
                t = if last { target } else { t + step };
                y.copy_from_slice(&y_new);
                // FSAL: the last stage is the derivative at the new point
                let (first, rest) = k.split_at_mut(1);
                first[0].copy_from_slice(&rest[5]);
                steps += 1;
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last || fac < 1.0 {
                    h = step * fac;
                }
            } else {
                h = step * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            }
        }
        out.push(y.clone());
    }
    Ok((out, steps))
}

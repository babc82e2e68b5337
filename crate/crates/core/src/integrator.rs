//! Embedded Dormand–Prince 5(4) Runge–Kutta pair with adaptive step control.
//!
//! The fifth-order solution is propagated (local extrapolation); the embedded
//! fourth-order solution only drives the error estimate. Error control can be
//! per step or per unit step; the latter makes the global error scale
//! super-linearly with the tolerance.

use crate::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

/// Fifth-order weights (identical to the last row of `A`).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];

/// `B5 - B4`, the weights of the embedded error estimate.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Scale the acceptance threshold by the step length.
    pub per_unit_step: bool,
    pub max_rejections: usize,
    pub min_dt: f64,
    pub safety: f64,
    pub max_growth: f64,
    /// Upper bound on any single step.
    pub max_dt: f64,
}

impl StepControl {
    pub fn new(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol,
            per_unit_step: true,
            max_rejections: 20,
            min_dt: 1e-12,
            safety: 0.9,
            max_growth: 5.0,
            max_dt: f64::INFINITY,
        }
    }

    fn order_exponent(&self) -> f64 {
        if self.per_unit_step {
            0.25
        } else {
            0.2
        }
    }

    fn suggest(&self, dt: f64, ratio: f64) -> f64 {
        if ratio == 0.0 {
            return dt * self.max_growth;
        }
        let factor = self.safety * ratio.powf(-self.order_exponent());
        dt * factor.clamp(0.2, self.max_growth)
    }
}

#[derive(Debug, Clone)]
pub struct Accepted {
    pub y: Vec<f64>,
    pub dt_used: f64,
    /// Normalised error (acceptance threshold is 1).
    pub error: f64,
    pub dt_next: f64,
    pub rejections: usize,
}

/// One Dormand–Prince attempt of length `h` from `(t, y)` with the first stage `k1`
/// already evaluated. Returns the fifth-order state and the error vector.
pub fn attempt<F>(rhs: &mut F, t: f64, y: &[f64], k1: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let len = y.len();
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
    k.push(k1.to_vec());
    let mut stage = vec![0.0; len];
    for s in 1..7 {
        for (i, slot) in stage.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += A[s][j] * kj[i];
            }
            *slot = y[i] + h * acc;
        }
        k.push(rhs(t + C[s] * h, &stage)?);
    }
    let mut y5 = vec![0.0; len];
    let mut err = vec![0.0; len];
    for i in 0..len {
        let mut acc5 = 0.0;
        let mut acce = 0.0;
        for s in 0..7 {
            acc5 += B5[s] * k[s][i];
            acce += E[s] * k[s][i];
        }
        y5[i] = y[i] + h * acc5;
        err[i] = h * acce;
    }
    Ok((y5, err))
}

fn error_norm(ctl: &StepControl, y: &[f64], y_new: &[f64], err: &[f64]) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..y.len() {
        let scale = ctl.abs_tol + ctl.rel_tol * y[i].abs().max(y_new[i].abs());
        worst = worst.max(err[i].abs() / scale);
    }
    worst
}

/// Adaptive step: tries `dt_try` (raised to `min_dt`, capped by `dt_cap`) and shrinks
/// until the error test passes. Trial-state failures that a smaller step may cure
/// count as rejections.
pub fn adaptive_step<F>(
    rhs: &mut F,
    t: f64,
    y: &[f64],
    k1: &[f64],
    dt_try: f64,
    dt_cap: f64,
    ctl: &StepControl,
) -> Result<Accepted>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let mut h = dt_try.max(ctl.min_dt).min(dt_cap);
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::StepFailure {
            t,
            dt: h,
            rejections: 0,
            reason: "non-positive step".into(),
        });
    }
    let mut rejections = 0;
    loop {
        let outcome = attempt(rhs, t, y, k1, h);
        let reason = match outcome {
            Ok((y_new, err)) => {
                let norm = error_norm(ctl, y, &y_new, &err);
                let ratio = if ctl.per_unit_step { norm / h } else { norm };
                if ratio.is_finite() && (ratio <= 1.0 || h <= ctl.min_dt) {
                    let dt_next = ctl.suggest(h, ratio);
                    return Ok(Accepted {
                        y: y_new,
                        dt_used: h,
                        error: ratio,
                        dt_next,
                        rejections,
                    });
                }
                let shrink = if ratio.is_finite() {
                    (ctl.safety * ratio.powf(-ctl.order_exponent())).clamp(0.1, 0.5)
                } else {
                    0.1
                };
                h *= shrink;
                format!("error ratio {ratio:.3e}")
            }
            Err(e) if e.is_recoverable_in_step() => {
                h *= 0.5;
                e.to_string()
            }
            Err(e) => return Err(e),
        };
        rejections += 1;
        if rejections > ctl.max_rejections || h < ctl.min_dt {
            return Err(Error::StepFailure {
                t,
                dt: h,
                rejections,
                reason,
            });
        }
    }
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t1` (either direction) and returns the
/// accepted nodes `(t, y)`, including both end points.
pub fn integrate<F>(
    rhs: &mut F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    dt0: f64,
    ctl: &StepControl,
) -> Result<Vec<(f64, Vec<f64>)>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let sign = if t1 >= t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    // Integrate in the forward variable r = sign·(t − t0).
    let mut fwd = |r: f64, y: &[f64]| -> Result<Vec<f64>> {
        let mut k = rhs(t0 + sign * r, y)?;
        k.iter_mut().for_each(|v| *v *= sign);
        Ok(k)
    };
    let mut nodes = vec![(t0, y0.to_vec())];
    let mut r = 0.0;
    let mut y = y0.to_vec();
    let mut dt = dt0;
    while r < span {
        let remaining = span - r;
        let k1 = fwd(r, &y)?;
        let acc = adaptive_step(&mut fwd, r, &y, &k1, dt, remaining.min(ctl.max_dt), ctl)?;
        let landed = acc.dt_used >= remaining;
        r = if landed { span } else { r + acc.dt_used };
        y = acc.y;
        dt = acc.dt_next;
        nodes.push((if landed { t1 } else { t0 + sign * r }, y.clone()));
    }
    Ok(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tableau_consistency() {
        for (s, row) in A.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            assert!((sum - C[s]).abs() < 1e-14, "row {s}");
        }
        assert!((B5.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(E.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let ctl = StepControl::new(1e-10, 1e-14);
        let mut rhs = |_t: f64, y: &[f64]| Ok(vec![-0.5 * y[0]]);
        let nodes = integrate(&mut rhs, 0.0, &[2.0], 10.0, 0.1, &ctl).unwrap();
        let (t_last, y_last) = nodes.last().unwrap();
        assert_eq!(*t_last, 10.0);
        assert!((y_last[0] - 2.0 * (-5.0_f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn backward_integration() {
        let ctl = StepControl::new(1e-11, 1e-14);
        let mut rhs = |t: f64, _y: &[f64]| Ok(vec![t.cos()]);
        let nodes = integrate(&mut rhs, 1.0, &[1.0_f64.sin()], -2.0, 0.1, &ctl).unwrap();
        let (t_last, y_last) = nodes.last().unwrap();
        assert_eq!(*t_last, -2.0);
        assert!((y_last[0] - (-2.0_f64).sin()).abs() < 1e-10);
    }

    #[test]
    fn persistent_failure_reports_step_failure() {
        let ctl = StepControl::new(1e-8, 1e-10);
        let mut rhs = |t: f64, y: &[f64]| {
            if t > 0.0 {
                Err(Error::NonFinite("trial".into()))
            } else {
                Ok(vec![y[0]])
            }
        };
        let err = adaptive_step(&mut rhs, 0.0, &[1.0], &[1.0], 0.1, 1.0, &ctl).unwrap_err();
        assert!(matches!(err, Error::StepFailure { .. }));
    }

    #[test]
    fn tiny_suggestion_still_advances() {
        let ctl = StepControl::new(1e-8, 1e-10);
        let mut rhs = |_t: f64, y: &[f64]| Ok(vec![-y[0]]);
        let acc = adaptive_step(&mut rhs, 0.0, &[1.0], &[-1.0], 0.0, 1.0, &ctl).unwrap();
        assert!(acc.dt_used > 0.0);
        assert_eq!(acc.dt_used, ctl.min_dt);
    }
}
